"""Interaction-log ingestion, filtering, windowing and batching.

The pipeline is: raw log -> `load_interactions` -> `filter_dataset`
(drop unpopular items, then inactive users; dense re-index) ->
`build_windows` (leave-one-out split into fixed-length, head-padded token
windows with shifted targets) -> `batch_iter`.

Dense item ids start at 1; id 0 is the pad token. Target value -1 marks
positions excluded from the loss.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from trimix.errors import ConfigError, DatasetError, IngestionError

PAD = 0
IGNORE = -1


class Interaction(NamedTuple):
    user: str
    item: str
    timestamp: int


@dataclass
class SequenceDataset:
    """Per-user chronological item sequences with dense ids."""

    users: list[str]
    sequences: list[np.ndarray]
    n_items: int
    item_ids: list[str] | None = None  # external ids in dense order (1-based)

    @property
    def interactions(self) -> int:
        return int(sum(len(s) for s in self.sequences))

    def stats(self) -> dict:
        users, items, inter = len(self.users), self.n_items, self.interactions
        sparsity = 1.0 - inter / (users * items) if users and items else 0.0
        return {
            "users": users,
            "items": items,
            "interactions": inter,
            "sparsity": sparsity,
        }


@dataclass
class EvalCase:
    user: str
    ids: np.ndarray  # length-n window, most recent item in the final slot
    target: int
    history: np.ndarray  # all prior dense ids, chronological


@dataclass
class SplitDataset:
    n: int
    inputs: np.ndarray  # (windows, n) int64
    targets: np.ndarray  # (windows, n) int64, IGNORE where uncounted
    test_cases: list[EvalCase]
    skipped_users: int = 0


def _parse_columns(columns: str):
    names = [c.strip() for c in columns.split(",")]
    for required in ("user", "item", "time"):
        if names.count(required) != 1:
            raise ConfigError(
                f"columns spec {columns!r} must name each of user, item, time exactly once"
            )
    for name in names:
        if name not in ("user", "item", "time", "_"):
            raise ConfigError(f"unknown column name {name!r} (use user, item, time or _)")
    return names.index("user"), names.index("item"), names.index("time"), len(names)


def load_interactions(path, fmt: str = "tsv", columns: str = "user,item,time",
                      skip_header: bool = False) -> list[Interaction]:
    """Parse a delimited interaction log into (user, item, timestamp) rows.

    `columns` names the fields in file order; `_` skips a field, so a
    user/item/rating/timestamp log loads with `user,item,_,time`. Trailing
    fields beyond the spec are ignored. Any malformed row is an error.
    """
    if fmt not in ("tsv", "csv"):
        raise ConfigError(f"format must be 'tsv' or 'csv', got {fmt!r}")
    delim = "\t" if fmt == "tsv" else ","
    u_col, i_col, t_col, width = _parse_columns(columns)

    rows: list[Interaction] = []
    bad: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if skip_header and lineno == 1:
                continue
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(delim)
            if len(parts) < width:
                bad.append(f"line {lineno}: expected >= {width} fields, got {len(parts)}")
                continue
            user, item = parts[u_col].strip(), parts[i_col].strip()
            try:
                ts = int(parts[t_col])
            except ValueError:
                bad.append(f"line {lineno}: unparseable timestamp {parts[t_col]!r}")
                continue
            if not user or not item or ts < 0:
                bad.append(f"line {lineno}: empty field or negative timestamp")
                continue
            rows.append(Interaction(user, item, ts))
    if bad:
        shown = "; ".join(bad[:10])
        raise IngestionError(f"{len(bad)} malformed rows in {path}: {shown}")
    return rows


def filter_dataset(raw: list[Interaction], min_user: int = 20,
                   min_item: int = 10) -> SequenceDataset:
    """Drop rare items, then short users; dense-index and sort chronologically.

    Single pass: item counts are taken on the raw log, user lengths on the
    item-filtered log. `residual_report` tells whether another pass would
    still change anything.
    """
    if not raw:
        raise DatasetError("no interactions to filter")

    item_counts: dict[str, int] = {}
    for row in raw:
        item_counts[row.item] = item_counts.get(row.item, 0) + 1
    kept_items = {i for i, c in item_counts.items() if c >= min_item}

    per_user: dict[str, list[Interaction]] = {}
    for row in raw:
        if row.item in kept_items:
            per_user.setdefault(row.user, []).append(row)
    per_user = {u: rows for u, rows in per_user.items() if len(rows) >= min_user}
    if not per_user:
        raise DatasetError(
            f"dataset too sparse: nothing left after min_user={min_user}, min_item={min_item}"
        )

    item_index: dict[str, int] = {}
    item_ids: list[str] = []
    users: list[str] = []
    sequences: list[np.ndarray] = []
    for user, rows in per_user.items():
        rows.sort(key=lambda r: r.timestamp)  # stable: file order breaks ties
        seq = np.empty(len(rows), dtype=np.int64)
        for k, row in enumerate(rows):
            dense = item_index.get(row.item)
            if dense is None:
                item_ids.append(row.item)
                dense = len(item_ids)
                item_index[row.item] = dense
            seq[k] = dense
        users.append(user)
        sequences.append(seq)
    return SequenceDataset(users, sequences, len(item_ids), item_ids)


def residual_report(ds: SequenceDataset, min_user: int = 20, min_item: int = 10) -> dict:
    """Would re-filtering change counts? Reports leftover threshold violations."""
    item_counts = np.zeros(ds.n_items + 1, dtype=np.int64)
    for seq in ds.sequences:
        np.add.at(item_counts, seq, 1)
    short_users = sum(1 for s in ds.sequences if len(s) < min_user)
    rare_items = int((item_counts[1:] < min_item).sum())
    return {
        "short_users": short_users,
        "rare_items": rare_items,
        "stable": short_users == 0 and rare_items == 0,
    }


def build_windows(ds: SequenceDataset, n: int = 64) -> SplitDataset:
    """Leave-one-out split into head-padded length-n windows.

    Each user's final item is the held-out test target. The remaining prefix
    is chunked backwards into non-overlapping windows (newest window full,
    oldest head-padded). Training targets are the inputs shifted left by one
    inside each window; pad positions and each window's final position carry
    no target. The test window holds the last up-to-(n-1) prefix items ending
    at position n-1, leaving the final slot empty (that is where the predicted
    item would sit); the prediction is read at the newest item's row.
    """
    if n < 2:
        raise ConfigError(f"window length must be >= 2, got {n}")
    inputs: list[np.ndarray] = []
    targets: list[np.ndarray] = []
    test_cases: list[EvalCase] = []
    skipped = 0
    for user, seq in zip(ds.users, ds.sequences):
        if len(seq) < 2:
            skipped += 1
            continue
        target = int(seq[-1])
        prefix = seq[:-1]

        end = len(prefix)
        chunks = []
        while end > 0:
            start = max(0, end - n)
            chunks.append(prefix[start:end])
            end = start
        for chunk in reversed(chunks):
            window = np.zeros(n, dtype=np.int64)
            window[n - len(chunk):] = chunk
            tgt = np.full(n, IGNORE, dtype=np.int64)
            tgt[n - len(chunk):-1] = chunk[1:]
            inputs.append(window)
            targets.append(tgt)

        # last position stays empty: it is where the predicted item would sit,
        # so the query reads the trained row holding the newest known item
        m = min(n - 1, len(prefix))
        test_ids = np.zeros(n, dtype=np.int64)
        test_ids[n - 1 - m : n - 1] = prefix[-m:]
        test_cases.append(EvalCase(user, test_ids, target, prefix.copy()))
    if not inputs:
        raise DatasetError("no trainable users (all sequences shorter than 2)")
    return SplitDataset(
        n=n,
        inputs=np.stack(inputs),
        targets=np.stack(targets),
        test_cases=test_cases,
        skipped_users=skipped,
    )


def batch_iter(split: SplitDataset, batch: int, rng: np.random.Generator):
    """One epoch of shuffled (inputs, targets) batches; final partial included."""
    count = split.inputs.shape[0]
    order = rng.permutation(count)
    for lo in range(0, count, batch):
        idx = order[lo : lo + batch]
        yield split.inputs[idx], split.targets[idx]


def save_processed(ds: SequenceDataset, out_dir):
    """Write sequences.jsonl (one {user, items} record per user) + stats.json."""
    os.makedirs(out_dir, exist_ok=True)
    seq_path = os.path.join(out_dir, "sequences.jsonl")
    with open(seq_path, "w", encoding="utf-8") as fh:
        for user, seq in zip(ds.users, ds.sequences):
            fh.write(json.dumps({"user": user, "items": [int(i) for i in seq]}))
            fh.write("\n")
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(ds.stats(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return seq_path


def load_processed(data_dir) -> SequenceDataset:
    """Load a directory produced by `save_processed`."""
    seq_path = os.path.join(data_dir, "sequences.jsonl")
    if not os.path.exists(seq_path):
        raise DatasetError(f"no sequences.jsonl under {data_dir}")
    users: list[str] = []
    sequences: list[np.ndarray] = []
    max_item = 0
    with open(seq_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            users.append(rec["user"])
            seq = np.asarray(rec["items"], dtype=np.int64)
            sequences.append(seq)
            if len(seq):
                max_item = max(max_item, int(seq.max()))
    if not users:
        raise DatasetError(f"{seq_path} holds no user records")
    stats_path = os.path.join(data_dir, "stats.json")
    n_items = max_item
    if os.path.exists(stats_path):
        with open(stats_path, "r", encoding="utf-8") as fh:
            n_items = int(json.load(fh).get("items", max_item))
    return SequenceDataset(users, sequences, n_items)
