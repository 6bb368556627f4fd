"""Full-catalog ranking metrics (HR@k, NDCG@k) and the inference benchmark."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from trimix.data import EvalCase
from trimix.errors import DatasetError
from trimix.model import TriMixModel, query_row


@dataclass
class RankingResult:
    hr: dict[int, float]
    ndcg: dict[int, float]
    users: int
    infer_seconds: float = 0.0
    rounds: int = 0

    def metrics(self) -> dict:
        out = {}
        for k in sorted(self.hr):
            out[f"HR@{k}"] = self.hr[k]
            out[f"NDCG@{k}"] = self.ndcg[k]
        return out


def rank_of_target(logits_row: np.ndarray, target: int) -> int:
    """1-based rank of `target` (item ids are 1-based column+1).

    Ties resolve toward the smaller item id, matching top-k prediction order.
    """
    score = logits_row[target - 1]
    greater = int((logits_row > score).sum())
    tied_before = int((logits_row[: target - 1] == score).sum())
    return 1 + greater + tied_before


def hr_ndcg(rank: int, k: int):
    """Single-target hit rate and NDCG at cutoff k."""
    if rank <= k:
        return 1, 1.0 / math.log2(rank + 1)
    return 0, 0.0


def _ranks_for_batch(model: TriMixModel, cases: list[EvalCase],
                     exclude_history: bool) -> list[int]:
    ids = np.stack([case.ids for case in cases])
    logits = model.forward(ids)
    rows = logits[np.arange(len(cases)), [query_row(w) for w in ids]]
    ranks = []
    for row, case in zip(rows, cases):
        if exclude_history:
            row = row.copy()
            seen = np.unique(case.history)
            seen = seen[seen != case.target]
            row[seen - 1] = -np.inf
        ranks.append(rank_of_target(row, case.target))
    return ranks


def evaluate(model: TriMixModel, test_cases: list[EvalCase], ks=(5, 10),
             batch: int = 256, exclude_history: bool = False,
             threads: int = 1) -> RankingResult:
    """Average HR@k / NDCG@k over all test users (deterministic, read-only)."""
    if not test_cases:
        raise DatasetError("cannot evaluate on an empty test set")
    chunks = [test_cases[lo : lo + batch] for lo in range(0, len(test_cases), batch)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_chunk = list(pool.map(
                lambda c: _ranks_for_batch(model, c, exclude_history), chunks))
    else:
        per_chunk = [_ranks_for_batch(model, c, exclude_history) for c in chunks]
    ranks = [r for chunk in per_chunk for r in chunk]

    users = len(ranks)
    hr = {}
    ndcg = {}
    for k in ks:
        hits, gains = 0, 0.0
        for rank in ranks:
            h, g = hr_ndcg(rank, k)
            hits += h
            gains += g
        hr[k] = hits / users
        ndcg[k] = gains / users
        assert ndcg[k] <= hr[k] + 1e-12, "NDCG must not exceed HR for a single target"
    for lo, hi in zip(sorted(ks), sorted(ks)[1:]):
        assert hr[lo] <= hr[hi] + 1e-12, "HR must be nondecreasing in k"
    return RankingResult(hr, ndcg, users)


def bench_inference(model: TriMixModel, test_cases: list[EvalCase], rounds: int = 100,
                    ks=(5, 10), batch: int = 256, threads: int = 1) -> dict:
    """Mean wall-clock seconds per full evaluation pass (one untimed warmup).

    Times the model forward plus ranking only; data construction is outside
    the clock.
    """
    evaluate(model, test_cases, ks=ks, batch=batch, threads=threads)  # warmup
    times = []
    for _ in range(rounds):
        started = time.perf_counter()
        evaluate(model, test_cases, ks=ks, batch=batch, threads=threads)
        times.append(time.perf_counter() - started)
    arr = np.asarray(times)
    return {
        "rounds": rounds,
        "infer_mean_s": float(arr.mean()),
        "infer_std_s": float(arr.std()),
        "infer_min_s": float(arr.min()),
        "infer_max_s": float(arr.max()),
    }
