"""Interaction-log ingestion, 5-core filtering, sequence building and batching."""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import Counter

import numpy as np

PAD = 0  # item index reserved for padding


class FormatError(ValueError):
    """Input file is structurally unusable (too many malformed lines)."""


class DataError(ValueError):
    """Dataset became unusable during preprocessing (e.g. empty 5-core)."""


@dataclass
class InteractionLog:
    """Raw (user, item, timestamp) events, de-duplicated, in input order."""

    records: list[tuple[str, str, int]]
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class Vocab:
    """Dense item indexing (1..n_items; 0 is padding) plus exact frequencies."""

    item_to_index: dict[str, int]
    index_to_item: list[str]  # index_to_item[0] is the padding sentinel
    popularity: np.ndarray  # counts per index, popularity[0] == 0

    @property
    def n_items(self) -> int:
        return len(self.index_to_item) - 1


@dataclass
class SequenceBatch:
    """Fixed-length left-padded windows with next-item targets and a validity mask."""

    inputs: np.ndarray  # [B, T] item indices, 0 = padding
    targets: np.ndarray  # [B, T] next-item indices, 0 where undefined
    mask: np.ndarray  # [B, T] bool, True at positions with a real target

    def __post_init__(self):
        assert self.inputs.shape == self.targets.shape == self.mask.shape


@dataclass
class Splits:
    """Leave-one-out views over per-user sequences (indices into the vocab)."""

    train: list[list[int]]  # training sequence per user
    valid_contexts: list[list[int]]
    valid_targets: list[int]
    test_contexts: list[list[int]]
    test_targets: list[int]
    excluded: int = 0  # users dropped for having fewer than 3 items


def ingest(path, max_malformed_fraction: float = 0.01) -> InteractionLog:
    """Parse a UTF-8 TSV of ``user<TAB>item<TAB>timestamp`` lines.

    Lines starting with '#' are ignored. Malformed lines are counted and
    skipped; more than ``max_malformed_fraction`` of them is a FormatError.
    Exact duplicate (user, item, timestamp) triples are dropped.
    """
    records: list[tuple[str, str, int]] = []
    seen: set[tuple[str, str, int]] = set()
    malformed = 0
    considered = 0
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            considered += 1
            parts = line.split("\t")
            if len(parts) != 3 or not parts[0] or not parts[1]:
                malformed += 1
                continue
            try:
                ts = int(parts[2])
            except ValueError:
                malformed += 1
                continue
            rec = (parts[0], parts[1], ts)
            if rec in seen:
                continue
            seen.add(rec)
            records.append(rec)
    if considered and malformed / considered > max_malformed_fraction:
        raise FormatError(
            f"{path}: {malformed}/{considered} malformed lines exceeds "
            f"{max_malformed_fraction:.0%} tolerance"
        )
    return InteractionLog(records=records, malformed=malformed)


def five_core_filter(log: InteractionLog, min_count: int = 5) -> InteractionLog:
    """Iteratively drop users and items with < min_count events until a fixpoint."""
    if not log.records:
        raise DataError("cannot 5-core filter an empty log")
    records = log.records
    while True:
        user_counts = Counter(r[0] for r in records)
        item_counts = Counter(r[1] for r in records)
        kept = [
            r
            for r in records
            if user_counts[r[0]] >= min_count and item_counts[r[1]] >= min_count
        ]
        if len(kept) == len(records):
            break
        records = kept
    if not records:
        raise DataError(
            f"{min_count}-core filtering removed every record "
            f"({len(log.records)} events, {len(set(r[0] for r in log.records))} users)"
        )
    return InteractionLog(records=records, malformed=log.malformed)


def build_sequences(log: InteractionLog, max_len: int) -> tuple[dict[str, list[int]], Vocab]:
    """Per-user chronological item-index sequences, truncated to the most
    recent ``max_len + 2`` events (training window plus the two held-out items).

    Timestamp ties keep input-file order. Item indices are assigned in sorted
    item-id order so they are stable for a fixed input file.
    """
    item_ids = sorted(set(r[1] for r in log.records))
    item_to_index = {item: i + 1 for i, item in enumerate(item_ids)}
    index_to_item = ["<pad>"] + item_ids
    popularity = np.zeros(len(index_to_item), dtype=np.int64)

    per_user: dict[str, list[tuple[int, int, int]]] = {}
    for order, (user, item, ts) in enumerate(log.records):
        idx = item_to_index[item]
        popularity[idx] += 1
        per_user.setdefault(user, []).append((ts, order, idx))

    sequences: dict[str, list[int]] = {}
    for user, events in per_user.items():
        events.sort(key=lambda e: (e[0], e[1]))
        seq = [idx for _, _, idx in events]
        sequences[user] = seq[-(max_len + 2):]
    vocab = Vocab(item_to_index=item_to_index, index_to_item=index_to_item, popularity=popularity)
    return sequences, vocab


def split_leave_one_out(sequences: dict[str, list[int]]) -> Splits:
    """Last item per user -> test target, second-to-last -> validation target.

    Users with fewer than 3 items are excluded (and counted).
    """
    splits = Splits(train=[], valid_contexts=[], valid_targets=[], test_contexts=[], test_targets=[])
    for user in sorted(sequences):
        seq = sequences[user]
        if len(seq) < 3:
            splits.excluded += 1
            continue
        splits.train.append(seq[:-2])
        splits.valid_contexts.append(seq[:-2])
        splits.valid_targets.append(seq[-2])
        splits.test_contexts.append(seq[:-1])
        splits.test_targets.append(seq[-1])
    return splits


def pad_batch(sequences: list[list[int]], max_len: int) -> SequenceBatch:
    """Left-pad sequences to max_len and derive shifted next-item targets."""
    B = len(sequences)
    inputs = np.zeros((B, max_len), dtype=np.int64)
    targets = np.zeros((B, max_len), dtype=np.int64)
    for b, seq in enumerate(sequences):
        seq = seq[-max_len:]
        inputs[b, max_len - len(seq):] = seq
        if len(seq) > 1:
            targets[b, max_len - len(seq):-1] = seq[1:]
    mask = targets != PAD
    return SequenceBatch(inputs=inputs, targets=targets, mask=mask)


def make_batches(train_sequences: list[list[int]], batch_size: int, max_len: int,
                 seed: int, epoch: int):
    """Yield SequenceBatch objects covering every user once, in an order that
    is a deterministic function of (seed, epoch)."""
    if not train_sequences:
        raise DataError("no training sequences")
    order = np.random.default_rng((seed, epoch)).permutation(len(train_sequences))
    for start in range(0, len(order), batch_size):
        chunk = [train_sequences[i] for i in order[start:start + batch_size]]
        yield pad_batch(chunk, max_len)
