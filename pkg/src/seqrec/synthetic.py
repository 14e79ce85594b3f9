"""Synthetic interaction-log generation: first-order Markov browsing with a
temperature knob, plus a planted-confounder variant for case studies."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionLog
from .tensor import UsageError

# Confounder-mode roles: ITEM_A is frequently followed by ITEM_B for regular
# users, never for held-out users.
ITEM_A = 1
ITEM_B = 2


@dataclass
class SyntheticSpec:
    n_users: int = 2000
    n_items: int = 200
    mean_len: float = 20.0
    mode: str = "markov"  # markov | confounder
    order: int = 1
    temperature: float = 1.0
    n_successors: int = 8  # preferred next items per item
    succ_logit: float = 3.0
    holdout_fraction: float = 0.1  # confounder mode: users with the pattern broken
    seed: int = 1

    def __post_init__(self):
        if self.mode not in ("markov", "confounder"):
            raise UsageError(f"unknown synthetic mode: {self.mode}")
        if self.order != 1:
            raise UsageError("only first-order transitions are supported")
        if self.n_items < 3 or self.n_users < 1:
            raise UsageError("need at least 3 items and 1 user")
        if self.temperature <= 0:
            raise UsageError("temperature must be positive")
        if self.mean_len < 5:
            raise UsageError("mean_len must be at least 5 to survive 5-core filtering")


def transition_matrix(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    """Row-stochastic [n_items+1, n_items+1] matrix over item indices 1..n.

    Each item prefers a random set of successors; softmax temperature controls
    how sharply. Row 0 (padding) is the start distribution, uniform.
    """
    n = spec.n_items
    logits = np.zeros((n + 1, n + 1))
    for i in range(1, n + 1):
        succ = rng.choice(np.arange(1, n + 1), size=min(spec.n_successors, n - 1), replace=False)
        succ = succ[succ != i]
        logits[i, succ] = spec.succ_logit
    if spec.mode == "confounder":
        # regular users see B after A far more often than anything else
        logits[ITEM_A, :] = 0.0
        logits[ITEM_A, ITEM_B] = spec.succ_logit * 2.0
    logits /= spec.temperature
    logits[:, 0] = -np.inf  # padding is never generated
    logits[0, 1:] = 0.0  # uniform start
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    p[np.arange(n + 1), np.arange(n + 1)] = 0.0  # no self-loops
    p /= p.sum(axis=1, keepdims=True)
    return p


def generate_log(spec: SyntheticSpec) -> InteractionLog:
    """Deterministic synthetic log; timestamps strictly increase per user."""
    rng = np.random.default_rng(spec.seed)
    trans = transition_matrix(spec, rng)
    cdf = np.cumsum(trans, axis=1)
    cdf[:, -1] = 1.0
    if spec.mode == "confounder":
        # held-out users never step A -> B
        no_b = trans[ITEM_A].copy()
        no_b[ITEM_B] = 0.0
        no_b /= no_b.sum()
        cdf_no_b = np.cumsum(no_b)
        cdf_no_b[-1] = 1.0
    n_holdout = int(round(spec.n_users * spec.holdout_fraction)) if spec.mode == "confounder" else 0
    width = max(4, len(str(spec.n_users)))
    records: list[tuple[str, str, int]] = []
    for u in range(spec.n_users):
        held_out = u < n_holdout
        name = ("h" if held_out else "u") + str(u).zfill(width)
        length = 5 + int(rng.poisson(max(spec.mean_len - 5.0, 0.0)))
        if held_out:
            cur = ITEM_A  # guarantee the broken pattern is observable
        else:
            cur = int(np.searchsorted(cdf[0], rng.random(), side="right")) or 1
        for j in range(length):
            records.append((name, f"i{cur:06d}", (j + 1) * 10))
            row = cdf_no_b if (held_out and cur == ITEM_A) else cdf[cur]
            cur = int(np.searchsorted(row, rng.random(), side="right"))
    return InteractionLog(records=records)


def write_tsv(log: InteractionLog, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# user\titem\ttimestamp\n")
        for user, item, ts in log.records:
            fh.write(f"{user}\t{item}\t{ts}\n")
