"""Command-line entry point: preprocess, train, eval, ablate, sweep, bench.

Every command resolves one flat run config (defaults <- config file <- flags),
logs it alongside a canonical-JSON content hash, and exits 0 on success or
nonzero with a one-line `error: ...` message on stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from trimix import backend
from trimix.data import build_windows, filter_dataset, load_interactions, load_processed, \
    residual_report, save_processed
from trimix.errors import TrimixError
from trimix.evaluation import bench_inference, evaluate
from trimix.mixer import VARIANTS
from trimix.model import ModelConfig, TriMixModel, load_checkpoint, save_checkpoint
from trimix.training import TrainConfig, train

MODEL_KEYS = ("max_len", "dim", "blocks", "sessions", "dropout", "variant",
              "combine", "softmax_axis")
TRAIN_KEYS = ("lr", "beta1", "beta2", "eps", "batch", "patience", "max_epochs",
              "seed", "eval_metric")


def canonical_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def resolve_out_dir(flag_value, default_name: str) -> str:
    if flag_value:
        return flag_value
    root = os.environ.get("TRIMIX_RESULTS_DIR", "runs")
    return os.path.join(root, default_name)


def resolve_config(args, keys) -> dict:
    """Merge defaults, optional JSON config file, then explicit flags."""
    merged = {}
    defaults = {**ModelConfig(vocab=1).to_dict(), **TrainConfig().to_dict()}
    defaults.pop("vocab")
    for key in keys:
        merged[key] = defaults[key]
    cfg_path = getattr(args, "config", None)
    if cfg_path:
        with open(cfg_path, "r", encoding="utf-8") as fh:
            file_cfg = json.load(fh)
        for key, value in file_cfg.items():
            if key in keys:
                merged[key] = value
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def write_json(path, payload: dict):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_split(data_dir, max_len):
    dataset = load_processed(data_dir)
    return dataset, build_windows(dataset, max_len)


def cmd_preprocess(args) -> int:
    if not os.path.exists(args.input):
        raise TrimixError(f"input path does not exist: {args.input}")
    rows = load_interactions(args.input, fmt=args.format, columns=args.columns,
                             skip_header=args.skip_header)
    dataset = filter_dataset(rows, min_user=args.min_user, min_item=args.min_item)
    save_processed(dataset, args.output)
    stats = dataset.stats()
    residual = residual_report(dataset, args.min_user, args.min_item)
    print(
        "users={users} items={items} interactions={interactions} "
        "sparsity={sparsity:.2%}".format(**stats)
    )
    print(
        f"filter order: items(min {args.min_item}) then users(min {args.min_user}), "
        f"single pass; residual short_users={residual['short_users']} "
        f"rare_items={residual['rare_items']} stable={residual['stable']}"
    )
    print(f"wrote {os.path.join(args.output, 'sequences.jsonl')} (max-len hint: {args.max_len})")
    return 0


def _train_once(data_dir, merged: dict, out_dir, quiet=False, eval_batch=256):
    dataset, split = _load_split(data_dir, merged["max_len"])
    model_cfg = ModelConfig(vocab=dataset.n_items,
                            **{k: merged[k] for k in MODEL_KEYS})
    train_cfg = TrainConfig(**{k: merged[k] for k in TRAIN_KEYS})
    run_config = {**merged, "vocab": dataset.n_items, "data": str(data_dir)}
    cfg_hash = canonical_hash(run_config)

    os.makedirs(out_dir, exist_ok=True)
    log_path = os.path.join(out_dir, "epochs.jsonl")
    result = train(split, model_cfg, train_cfg, log_path=log_path, eval_batch=eval_batch)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(ckpt_path, result.model)
    results = {
        "dataset": str(data_dir),
        "config_hash": cfg_hash,
        "seed": train_cfg.seed,
        "variant": model_cfg.variant,
        "sessions": model_cfg.sessions,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "diverged": result.diverged,
        **result.final_metrics,
    }
    write_json(os.path.join(out_dir, "results.json"), results)
    write_json(os.path.join(out_dir, "config.json"), {"config_hash": cfg_hash, **run_config})
    if not quiet:
        print(f"config_hash={cfg_hash} best_epoch={result.best_epoch} "
              f"epochs={len(result.history)}")
        print(json.dumps(result.final_metrics, sort_keys=True))
        print(f"checkpoint: {ckpt_path}")
    return results, result


def cmd_train(args) -> int:
    merged = resolve_config(args, MODEL_KEYS + TRAIN_KEYS)
    out_dir = resolve_out_dir(args.out, "train")
    _train_once(args.data, merged, out_dir, eval_batch=args.eval_batch)
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset, split = _load_split(args.data, model.config.max_len)
    if dataset.n_items != model.config.vocab:
        raise TrimixError(
            f"data has {dataset.n_items} items but checkpoint expects {model.config.vocab}"
        )
    ks = tuple(int(k) for k in args.k.split(","))
    result = evaluate(model, split.test_cases, ks=ks, batch=args.batch,
                      exclude_history=args.exclude_history, threads=args.threads)
    payload = {
        "dataset": str(args.data),
        "config_hash": canonical_hash(model.config.to_dict()),
        "users": result.users,
        **result.metrics(),
    }
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    variants = [v.strip() for v in args.variants.split(",")]
    for v in variants:
        if v not in VARIANTS:
            raise TrimixError(f"unknown variant {v!r}; valid: {', '.join(VARIANTS)}")
    merged = resolve_config(args, MODEL_KEYS + TRAIN_KEYS)
    out_dir = resolve_out_dir(args.out, "ablate")
    os.makedirs(out_dir, exist_ok=True)

    metric_keys = ("HR@5", "NDCG@5", "HR@10", "NDCG@10")
    rows = []
    means = {}
    for variant in variants:
        per_seed = []
        for seed in range(args.seeds):
            run_cfg = {**merged, "variant": variant, "seed": merged["seed"] + seed}
            run_dir = os.path.join(out_dir, f"{variant}-seed{run_cfg['seed']}")
            results, _ = _train_once(args.data, run_cfg, run_dir, quiet=True,
                                     eval_batch=args.eval_batch)
            row = {"variant": variant, "seed": run_cfg["seed"],
                   **{k: results[k] for k in metric_keys}}
            rows.append(row)
            per_seed.append(row)
        means[variant] = {
            k: float(np.mean([r[k] for r in per_seed])) for k in metric_keys
        }

    baseline = means.get("eye")
    table = []
    for variant in variants:
        entry = {"variant": variant, "seed": "mean", **means[variant]}
        if baseline and variant != "eye":
            rels = [
                (means[variant][k] - baseline[k]) / baseline[k]
                for k in metric_keys if baseline[k] > 0
            ]
            entry["avg_improvement_vs_eye"] = float(np.mean(rels)) if rels else float("nan")
        table.append(entry)

    payload = {
        "dataset": str(args.data),
        "config_hash": canonical_hash({**merged, "variants": variants,
                                       "seeds": args.seeds}),
        "base_seed": merged["seed"],
        "rows": rows,
        "means": table,
    }
    write_json(os.path.join(out_dir, "ablation.json"), payload)
    header = ["variant", "seed", *metric_keys, "avg_improvement_vs_eye"]
    print("\t".join(header))
    for row in rows + table:
        cells = [str(row.get("variant")), str(row.get("seed"))]
        cells += [f"{row[k]:.5f}" for k in metric_keys]
        impv = row.get("avg_improvement_vs_eye")
        cells.append("-" if impv is None else f"{impv:+.2%}")
        print("\t".join(cells))
    return 0


def cmd_sweep_sessions(args) -> int:
    sessions = [int(s) for s in args.sessions_csv.split(",")]
    merged = resolve_config(args, MODEL_KEYS + TRAIN_KEYS)
    out_dir = resolve_out_dir(args.out, "sweep-sessions")
    os.makedirs(out_dir, exist_ok=True)

    rows = []
    for s in sessions:
        run_cfg = {**merged, "sessions": s}
        run_dir = os.path.join(out_dir, f"s{s}")
        results, _ = _train_once(args.data, run_cfg, run_dir, quiet=True,
                                 eval_batch=args.eval_batch)
        rows.append({"sessions": s, **{k: results[k] for k in
                                       ("HR@5", "NDCG@5", "HR@10", "NDCG@10")}})
    payload = {
        "dataset": str(args.data),
        "config_hash": canonical_hash({**merged, "sessions_swept": sessions}),
        "seed": merged["seed"],
        "rows": rows,
    }
    write_json(os.path.join(out_dir, "sweep.json"), payload)
    print("sessions\tHR@5\tNDCG@5\tHR@10\tNDCG@10")
    for row in rows:
        print(f"{row['sessions']}\t{row['HR@5']:.5f}\t{row['NDCG@5']:.5f}"
              f"\t{row['HR@10']:.5f}\t{row['NDCG@10']:.5f}")
    return 0


def cmd_bench(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset, split = _load_split(args.data, model.config.max_len)
    result = evaluate(model, split.test_cases, batch=args.batch, threads=args.threads)
    timing = bench_inference(model, split.test_cases, rounds=args.rounds,
                             batch=args.batch, threads=args.threads)
    payload = {
        "dataset": str(args.data),
        "config_hash": canonical_hash(model.config.to_dict()),
        **result.metrics(),
        **timing,
        "threads": args.threads,
        "kernel_backend": backend.KERNEL_BACKEND,
    }
    if args.out:
        write_json(args.out, payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


def _bench_one(fn, repeat: int) -> float:
    fn()  # warmup
    best = float("inf")
    for _ in range(repeat):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def cmd_bench_kernels(args) -> int:
    """Compare the compiled kernel extension against the numpy fallback."""
    from trimix import _kernels_np

    impls = [("numpy", _kernels_np)]
    try:
        from trimix import _kernels

        impls.insert(0, ("compiled", _kernels))
    except ImportError:
        print("note: compiled extension not built; timing numpy fallback only")

    rng = np.random.default_rng(0)
    b, n, d, vocab = args.batch, args.max_len, args.dim, args.vocab
    x = rng.standard_normal(b * n * d).astype(np.float32)
    dout = rng.standard_normal(b * n * d).astype(np.float32)
    logits = rng.standard_normal((b * n, vocab)).astype(np.float32)
    targets = rng.integers(0, vocab + 1, size=b * n).astype(np.int64)
    params = rng.standard_normal(2_000_000).astype(np.float32)
    grads = rng.standard_normal(2_000_000).astype(np.float32)
    ids = rng.integers(0, vocab + 1, size=(b, n)).astype(np.int64)
    demb = rng.standard_normal((b, n, d)).astype(np.float32)

    gelu_out = np.empty_like(x)
    xent_grad = np.empty_like(logits)
    adam_state = {"m": np.zeros_like(params), "v": np.zeros_like(params), "t": 0}
    emb_grad = np.zeros((vocab + 1, d), dtype=np.float32)
    ln_x = rng.standard_normal((b * n, d)).astype(np.float32)
    ln_alpha = np.ones(d, dtype=np.float32)
    ln_beta = np.zeros(d, dtype=np.float32)
    ln_out = np.empty_like(ln_x)
    ln_xhat = np.empty_like(ln_x)
    ln_inv = np.empty(b * n, dtype=np.float32)
    ln_grads = (np.empty_like(ln_x), np.zeros(d, dtype=np.float32),
                np.zeros(d, dtype=np.float32))

    def adam_case(impl):
        adam_state["t"] += 1
        impl.adam_update(params, grads, adam_state["m"], adam_state["v"],
                         1e-3, 0.9, 0.999, 1e-8, adam_state["t"])

    def layernorm_case(impl):
        impl.layernorm_forward(ln_x, ln_alpha, ln_beta, 1e-5, ln_out, ln_xhat, ln_inv)
        impl.layernorm_backward(ln_out, ln_xhat, ln_inv, ln_alpha, *ln_grads)

    cases = {
        "gelu_forward": lambda impl: impl.gelu_forward(x, gelu_out),
        "gelu_backward": lambda impl: impl.gelu_backward(x, dout, gelu_out),
        "softmax_xent": lambda impl: impl.softmax_xent(logits, targets, xent_grad),
        "adam_update": adam_case,
        "embedding_backward": lambda impl: impl.embedding_backward(ids, demb, emb_grad),
        "layernorm_fwd_bwd": layernorm_case,
    }

    print(f"kernel benchmark (best of {args.repeat}; batch={b} n={n} d={d} vocab={vocab})")
    print("kernel\t" + "\t".join(name for name, _ in impls) + "\tspeedup")
    for kernel, call in cases.items():
        timings = {}
        for name, impl in impls:
            timings[name] = _bench_one(lambda: call(impl), args.repeat)
        cells = [kernel] + [f"{timings[name] * 1e3:.3f}ms" for name, _ in impls]
        if len(impls) == 2:
            cells.append(f"{timings['numpy'] / timings['compiled']:.2f}x")
        print("\t".join(cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trimix",
        description="train and evaluate a causally masked token-mixing MLP recommender",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="filter a raw interaction log into sequences")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("tsv", "csv"), default="tsv")
    p.add_argument("--output", required=True)
    p.add_argument("--min-user", type=int, default=20, dest="min_user")
    p.add_argument("--min-item", type=int, default=10, dest="min_item")
    p.add_argument("--max-len", type=int, default=64, dest="max_len")
    p.add_argument("--columns", default="user,item,time",
                   help="field order, e.g. user,item,_,time to skip a rating column")
    p.add_argument("--skip-header", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    def add_model_train_flags(q, with_sessions=True):
        q.add_argument("--config", help="JSON file with config keys; flags win")
        q.add_argument("--max-len", type=int, dest="max_len")
        q.add_argument("--dim", type=int)
        q.add_argument("--blocks", type=int)
        if with_sessions:
            q.add_argument("--sessions", type=int)
        q.add_argument("--dropout", type=float)
        q.add_argument("--variant")
        q.add_argument("--combine")
        q.add_argument("--softmax-axis", dest="softmax_axis")
        q.add_argument("--lr", type=float)
        q.add_argument("--batch", type=int)
        q.add_argument("--patience", type=int)
        q.add_argument("--max-epochs", type=int, dest="max_epochs")
        q.add_argument("--seed", type=int)
        q.add_argument("--eval-metric", dest="eval_metric")
        q.add_argument("--eval-batch", type=int, default=256, dest="eval_batch")
        q.add_argument("--out")

    p = sub.add_parser("train", help="train on a preprocessed directory")
    p.add_argument("--data", required=True)
    add_model_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="5,10")
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--exclude-history", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare mixer variants")
    p.add_argument("--data", required=True)
    p.add_argument("--variants", default="eye,square,global,local,full")
    p.add_argument("--seeds", type=int, default=1)
    add_model_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep-sessions", help="sweep the session count")
    p.add_argument("--data", required=True)
    p.add_argument("--sessions", dest="sessions_csv", default="1,2,4,8,16,32,64",
                   help="comma-separated session counts, each must divide max-len")
    add_model_train_flags(p, with_sessions=False)
    p.set_defaults(func=cmd_sweep_sessions)

    p = sub.add_parser("bench", help="inference-time benchmark on a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("bench-kernels", help="compare compiled vs numpy kernels")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--max-len", type=int, default=64, dest="max_len")
    p.add_argument("--dim", type=int, default=128)
    p.add_argument("--vocab", type=int, default=1152)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=cmd_bench_kernels)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrimixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename or exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
