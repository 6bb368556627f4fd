"""Sequence model: embedding -> stacked mixer blocks -> item-scoring head.

Each block applies the token mixer and a position-wise feed-forward net,
both behind pre-norm residual connections. The head emits one logit per
real item (pad excluded); softmax is deferred to the loss / ranking code.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from trimix.errors import CheckpointError, ConfigError
from trimix.layers import Dropout, Embedding, FeedForward, LayerNorm, xavier_uniform
from trimix.mixer import COMBINES, VARIANTS, TriangularMixer
from trimix.seeding import substream
from trimix.tensor import Tensor

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = "trimix-checkpoint"


def query_row(window: np.ndarray) -> int:
    """Index of the row whose output scores the next item: the last non-pad
    position, or the final row for an all-pad window."""
    nz = np.flatnonzero(window)
    return int(nz[-1]) if nz.size else len(window) - 1


@dataclass
class ModelConfig:
    vocab: int
    max_len: int = 64
    dim: int = 128
    blocks: int = 2
    sessions: int = 2
    dropout: float = 0.5
    variant: str = "full"
    combine: str = "parallel_add"
    softmax_axis: str = "source"

    def __post_init__(self):
        if min(self.vocab, self.max_len, self.dim, self.blocks) < 1:
            raise ConfigError("vocab, max_len, dim and blocks must all be >= 1")
        if self.sessions < 1 or self.max_len % self.sessions != 0:
            raise ConfigError(
                f"session count {self.sessions} must divide sequence length {self.max_len}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; valid: {', '.join(VARIANTS)}")
        if self.combine not in COMBINES:
            raise ConfigError(f"unknown combine {self.combine!r}; valid: {', '.join(COMBINES)}")
        if self.softmax_axis not in ("source", "target"):
            raise ConfigError(f"softmax_axis must be 'source' or 'target', got {self.softmax_axis!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_count(config: ModelConfig) -> int:
    """Closed-form learnable-parameter census for a config."""
    n, d, v = config.max_len, config.dim, config.vocab
    mixer = 2 * n * n if config.variant == "full" else n * n
    if config.variant == "full" and config.combine == "parallel_concat":
        mixer += 2 * d * d
    ffn = (d * 4 * d + 4 * d) + (4 * d * d + d)
    norms = 2 * 2 * d
    block = mixer + ffn + norms
    return (v + 1) * d + config.blocks * block + d * v + v


class BasicBlock:
    """Pre-norm residual block: x + mix(norm(x)), then y + ffn(norm(y))."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.norm1 = LayerNorm(config.dim, dtype=dtype)
        self.mixer = TriangularMixer(
            config.max_len, config.dim, sessions=config.sessions,
            variant=config.variant, combine=config.combine,
            axis=config.softmax_axis, rng=rng, dtype=dtype,
        )
        self.norm2 = LayerNorm(config.dim, dtype=dtype)
        self.ffn = FeedForward(config.dim, rng, dropout=config.dropout, dtype=dtype)

    def forward(self, x, training=False, rng=None):
        y = x + self.mixer.forward(self.norm1.forward(x))
        z = y + self.ffn.forward(self.norm2.forward(y), training, rng)
        return z

    def backward(self, dz):
        dy = dz + self.norm2.backward(self.ffn.backward(dz))
        dx = dy + self.norm1.backward(self.mixer.backward(dy))
        return dx

    def named_params(self, prefix: str):
        named = [
            (f"{prefix}.norm1.alpha", self.norm1.alpha),
            (f"{prefix}.norm1.beta", self.norm1.beta),
        ]
        mix = self.mixer
        if mix.variant == "full":
            named.append((f"{prefix}.mixer.raw_global", mix.global_branch.raw))
            named.append((f"{prefix}.mixer.raw_local", mix.local_branch.raw))
            if mix.merge is not None:
                named.append((f"{prefix}.mixer.merge", mix.merge))
        else:
            named.append((f"{prefix}.mixer.raw", mix.branch.raw))
        named += [
            (f"{prefix}.norm2.alpha", self.norm2.alpha),
            (f"{prefix}.norm2.beta", self.norm2.beta),
            (f"{prefix}.ffn.w1", self.ffn.w1),
            (f"{prefix}.ffn.b1", self.ffn.b1),
            (f"{prefix}.ffn.w2", self.ffn.w2),
            (f"{prefix}.ffn.b2", self.ffn.b2),
        ]
        return named


class TriMixModel:
    """Recommendation model over fixed-length token windows."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        self.embedding = Embedding(config.vocab, config.dim, rng, dtype)
        self.embed_dropout = Dropout(config.dropout)
        self.blocks = [BasicBlock(config, rng, dtype) for _ in range(config.blocks)]
        self.head_w = Tensor(xavier_uniform(rng, (config.dim, config.vocab), dtype), name="head.w")
        self.head_b = Tensor(np.zeros(config.vocab, dtype=dtype), name="head.b")
        self._cache = None

    @classmethod
    def init(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "TriMixModel":
        return cls(config, substream(seed, "init"), dtype)

    def forward(self, ids: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Logits of shape (..., n, vocab) for int token windows of shape (..., n)."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[-1] != self.config.max_len:
            raise ConfigError(
                f"window length {ids.shape[-1]} does not match model max_len {self.config.max_len}"
            )
        h = self.embedding.forward(ids)
        h = self.embed_dropout.forward(h, training, rng)
        for block in self.blocks:
            h = block.forward(h, training, rng)
        logits = np.matmul(h, self.head_w.data) + self.head_b.data
        self._cache = (ids, h)
        return logits

    def backward(self, dlogits: np.ndarray):
        ids, h = self._cache
        d = self.config.dim
        flat_h = h.reshape(-1, d)
        flat_dl = dlogits.reshape(-1, self.config.vocab)
        self.head_w.ensure_grad()[...] += flat_h.T @ flat_dl
        self.head_b.ensure_grad()[...] += flat_dl.sum(axis=0)
        dh = np.matmul(dlogits, self.head_w.data.T)
        for block in reversed(self.blocks):
            dh = block.backward(dh)
        dh = self.embed_dropout.backward(dh)
        self.embedding.backward(ids, dh)

    def predict_topk(self, window: np.ndarray, k: int) -> np.ndarray:
        """Top-k item ids for one window, by descending query-row logit.

        The query row is the position of the newest (last non-pad) token.
        Ties break toward the smaller item id, so the result is deterministic.
        """
        if k > self.config.vocab:
            raise ConfigError(f"k={k} exceeds vocabulary size {self.config.vocab}")
        window = np.asarray(window, dtype=np.int64)
        logits = self.forward(window[None, :])[0, query_row(window)]
        order = np.lexsort((np.arange(1, self.config.vocab + 1), -logits))
        return order[:k] + 1

    def named_params(self):
        named = [("embedding.table", self.embedding.table)]
        for i, block in enumerate(self.blocks):
            named += block.named_params(f"blocks.{i}")
        named += [("head.w", self.head_w), ("head.b", self.head_b)]
        return named

    def params(self):
        return [t for _, t in self.named_params()]

    def zero_grads(self):
        for t in self.params():
            t.zero_grad()

    def census(self) -> int:
        """Total elements across allocated learnable tensors."""
        return sum(t.size for t in self.params())


def save_checkpoint(path, model: TriMixModel):
    """Write a checkpoint: JSON header line + raw little-endian float32 payload."""
    manifest = []
    payloads = []
    offset = 0
    for name, tensor in model.named_params():
        arr = np.ascontiguousarray(tensor.data, dtype="<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset})
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "magic": CHECKPOINT_MAGIC,
        "format_version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "tensors": manifest,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for chunk in payloads:
            fh.write(chunk)


def load_checkpoint(path) -> TriMixModel:
    """Reconstruct a model from a checkpoint; bit-exact for float32 models."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc
    if header.get("magic") != CHECKPOINT_MAGIC:
        raise CheckpointError("not a recognized checkpoint file (bad magic)")
    version = header.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format_version {version!r}; expected {CHECKPOINT_VERSION}"
        )
    config = ModelConfig.from_dict(header["config"])
    model = TriMixModel(config, substream(0, "init"), np.float32)
    by_name = dict(model.named_params())
    seen = set()
    for entry in header["tensors"]:
        name, shape, offset = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in by_name:
            raise CheckpointError(f"checkpoint tensor {name!r} not present in model")
        count = int(np.prod(shape))
        try:
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        except ValueError as exc:
            raise CheckpointError(f"checkpoint payload truncated at tensor {name!r}") from exc
        by_name[name].data = arr.reshape(shape).astype(np.float32)  # writable copy
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    return model
