"""Auto-regressive training: masked cross-entropy, Adam, early stopping."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from trimix import backend
from trimix.data import SplitDataset, batch_iter
from trimix.errors import ConfigError, DivergenceError
from trimix.evaluation import evaluate
from trimix.model import ModelConfig, TriMixModel
from trimix.seeding import substream

METRIC_KEYS = ("HR@5", "NDCG@5", "HR@10", "NDCG@10")


@dataclass
class TrainConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch: int = 64
    patience: int = 10
    max_epochs: int = 500
    seed: int = 0
    eval_metric: str = "HR@10"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("Adam betas must lie strictly between 0 and 1")
        if self.patience < 1 or self.max_epochs < 1 or self.batch < 1:
            raise ConfigError("patience, max_epochs and batch must be >= 1")
        if self.eval_metric not in METRIC_KEYS:
            raise ConfigError(f"eval_metric must be one of {METRIC_KEYS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def cross_entropy(logits: np.ndarray, targets: np.ndarray):
    """Masked softmax cross-entropy: sum over counted positions per sequence,
    mean over the sequences in the batch.

    Target value t >= 1 scores item t; values <= 0 are ignored (zero loss and
    gradient there). Returns (loss, dlogits, counted_positions).
    """
    logits = np.ascontiguousarray(logits)
    n_seq = logits.shape[0] if logits.ndim == 3 else 1
    vocab = logits.shape[-1]
    flat_logits = logits.reshape(-1, vocab)
    flat_targets = np.ascontiguousarray(np.asarray(targets, dtype=np.int64).reshape(-1))
    if flat_targets.max(initial=0) > vocab:
        raise ConfigError(
            f"target id {flat_targets.max()} exceeds vocabulary size {vocab}"
        )
    dlogits = np.empty_like(flat_logits)
    loss_sum, counted = backend.softmax_xent(flat_logits, flat_targets, dlogits)
    dlogits /= n_seq
    return loss_sum / n_seq, dlogits.reshape(logits.shape), counted


class Adam:
    """Bias-corrected Adam over named parameter tensors."""

    def __init__(self, named_params, cfg: TrainConfig):
        self.named_params = list(named_params)
        self.cfg = cfg
        self.t = 0
        self.moment1 = [np.zeros_like(t.data) for _, t in self.named_params]
        self.moment2 = [np.zeros_like(t.data) for _, t in self.named_params]

    def step(self):
        cfg = self.cfg
        self.t += 1
        for (name, tensor), m, v in zip(self.named_params, self.moment1, self.moment2):
            grad = tensor.ensure_grad()
            if not np.all(np.isfinite(grad)):
                idx = int(np.flatnonzero(~np.isfinite(grad.reshape(-1)))[0])
                raise DivergenceError(f"non-finite gradient in {name} at flat index {idx}")
            backend.adam_update(
                tensor.data.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
                cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, self.t,
            )


@dataclass
class TrainResult:
    model: TriMixModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0
    best_metric: float = float("-inf")
    final_metrics: dict = field(default_factory=dict)
    diverged: bool = False
    empty_batches: int = 0


def train(split: SplitDataset, model_config: ModelConfig, train_config: TrainConfig,
          log_path=None, eval_fn=None, eval_batch: int = 256) -> TrainResult:
    """Run the full training loop and return the best-by-metric model.

    Per epoch: seeded shuffle, masked-loss batches, Adam steps, then ranking
    evaluation on the held-out cases. Stops once the tracked metric has not
    improved for `patience` consecutive epochs (or at max_epochs, or on
    divergence, keeping the best parameters seen).
    """
    model = TriMixModel.init(model_config, train_config.seed)
    shuffle_rng = substream(train_config.seed, "shuffle")
    dropout_rng = substream(train_config.seed, "dropout")
    optimizer = Adam(model.named_params(), train_config)
    if eval_fn is None:
        def eval_fn(m):
            return evaluate(m, split.test_cases, ks=(5, 10), batch=eval_batch).metrics()

    result = TrainResult(model)
    best_state = None
    bad_epochs = 0
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, train_config.max_epochs + 1):
            started = time.perf_counter()
            loss_total, batches = 0.0, 0
            for inputs, targets in batch_iter(split, train_config.batch, shuffle_rng):
                model.zero_grads()
                logits = model.forward(inputs, training=True, rng=dropout_rng)
                loss, dlogits, counted = cross_entropy(logits, targets)
                if not np.isfinite(loss):
                    result.diverged = True
                    break
                if counted == 0:
                    result.empty_batches += 1
                model.backward(dlogits)
                try:
                    optimizer.step()
                except DivergenceError:
                    result.diverged = True
                    break
                loss_total += loss
                batches += 1
            if result.diverged:
                break

            metrics = eval_fn(model)
            record = {"epoch": epoch, "loss": loss_total / max(batches, 1)}
            record.update({k: metrics[k] for k in METRIC_KEYS})
            record["seconds"] = time.perf_counter() - started
            result.history.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()

            tracked = metrics[train_config.eval_metric]
            if tracked > result.best_metric:
                result.best_metric = tracked
                result.best_epoch = epoch
                best_state = [t.data.copy() for t in model.params()]
                bad_epochs = 0
            else:
                bad_epochs += 1
                if bad_epochs >= train_config.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()

    if best_state is not None:
        for tensor, data in zip(model.params(), best_state):
            tensor.data[...] = data
    result.final_metrics = eval_fn(model)
    return result
