"""Deterministic synthetic interaction corpora for tests and smoke runs."""

from __future__ import annotations

import numpy as np

from trimix.data import Interaction, SequenceDataset
from trimix.seeding import substream


def cyclic_dataset(n_users: int = 8, n_items: int = 12, length: int = 24) -> SequenceDataset:
    """Users walk the item cycle 1..n_items with per-user phase offsets.

    The next item is a deterministic function of the current one, so a
    recommender that memorizes the bigram table predicts every held-out
    target exactly.
    """
    users = [f"u{u}" for u in range(n_users)]
    sequences = [
        np.array([(u + k) % n_items + 1 for k in range(length)], dtype=np.int64)
        for u in range(n_users)
    ]
    return SequenceDataset(users, sequences, n_items)


def markov_dataset(n_users: int = 500, n_items: int = 50, length: int = 48,
                   branching: int = 15, seed: int = 0) -> SequenceDataset:
    """First-order Markov browsing with `branching` weighted successors per item.

    Successor weights fall off harmonically, so ranking the likely successors
    ahead of the rest is what a model must learn. Transition structure is
    drawn once from the seed ("markov-structure" stream); user walks come
    from the "markov-walk" stream, so corpora with the same seed share the
    transition table.
    """
    struct_rng = substream(seed, "markov-structure")
    walk_rng = substream(seed, "markov-walk")
    successors = np.zeros((n_items + 1, branching), dtype=np.int64)
    for item in range(1, n_items + 1):
        succ = struct_rng.choice(np.arange(1, n_items + 1), size=branching, replace=False)
        successors[item] = succ
    weights = 1.0 / np.arange(1, branching + 1)
    weights /= weights.sum()

    users = [f"u{u}" for u in range(n_users)]
    sequences = []
    for _ in range(n_users):
        seq = np.empty(length, dtype=np.int64)
        seq[0] = walk_rng.integers(1, n_items + 1)
        for k in range(1, length):
            seq[k] = walk_rng.choice(successors[seq[k - 1]], p=weights)
        sequences.append(seq)
    return SequenceDataset(users, sequences, n_items)


def write_log(ds: SequenceDataset, path, fmt: str = "tsv", extra_rating: bool = False):
    """Write a dataset back out as a raw interaction log (position = timestamp)."""
    delim = "\t" if fmt == "tsv" else ","
    with open(path, "w", encoding="utf-8") as fh:
        for user, seq in zip(ds.users, ds.sequences):
            for ts, item in enumerate(seq):
                fields = [user, f"i{int(item)}"]
                if extra_rating:
                    fields.append("5")
                fields.append(str(ts))
                fh.write(delim.join(fields))
                fh.write("\n")


def log_rows(ds: SequenceDataset) -> list[Interaction]:
    rows = []
    for user, seq in zip(ds.users, ds.sequences):
        for ts, item in enumerate(seq):
            rows.append(Interaction(user, f"i{int(item)}", ts))
    return rows
