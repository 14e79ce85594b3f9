"""Negative-item samplers: uniform, popularity^gamma, and the model-conditioned
two-stage sampler with difficulty exponent alpha and pre-selection ratio beta.

All samplers are pure given an explicit numpy Generator and operate on flat or
grid-shaped target arrays; draw shapes mirror the targets with a trailing k
axis. Sampling probabilities are always accumulated in float64 so empirical
frequencies match the exact distributions at test tolerances.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import UsageError

try:  # fused gather-dot avoids materializing candidate rows on the hot path
    from numba import njit

    @njit(cache=True, fastmath=True)
    def _gather_dot(emb, cand, h):
        out = np.empty(cand.size)
        for i in range(cand.size):
            acc = 0.0
            row = cand[i]
            for j in range(h.size):
                acc += emb[row, j] * h[j]
            out[i] = acc
        return out

    _HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAS_NUMBA = False

# keep per-chunk candidate-embedding gathers below ~64 MB of float64
_CHUNK_BUDGET = 8_000_000


@dataclass
class CurriculumSpec:
    """Self-adjusting schedule for alpha driven by the batch-loss trend."""

    mode: str = "off"  # off | self_adjusted
    delta: float = 0.01
    alpha_min: float = 0.0
    alpha_max: float = 6.0
    smoothing: float = 0.9  # exponential smoothing of batch losses; 0.0 = raw

    def __post_init__(self):
        if self.mode not in ("off", "self_adjusted"):
            raise UsageError(f"unknown curriculum mode: {self.mode}")
        if not 0.0 <= self.smoothing < 1.0:
            raise UsageError("smoothing must be in [0, 1)")

    @property
    def enabled(self) -> bool:
        return self.mode == "self_adjusted"


@dataclass
class SamplerSpec:
    """Which negative distribution to use and its knobs."""

    kind: str = "uniform"  # uniform | popularity | genni
    gamma: float = 1.0  # popularity exponent
    alpha: float = 1.0  # difficulty exponent
    beta_mode: str = "fixed"  # fixed | gradual
    beta: float = 1.0  # pre-selection ratio
    m: float = 20.0  # gradual-schedule speed
    k: int = 1  # negatives per positive
    curriculum: CurriculumSpec = field(default_factory=CurriculumSpec)
    shared_candidates: bool = False  # one candidate pool per call instead of per position
    exclude_history: bool = False  # ablation switch: also reject items from the user's sequence

    def __post_init__(self):
        if self.kind not in ("uniform", "popularity", "genni"):
            raise UsageError(f"unknown sampler kind: {self.kind}")
        if not 0.0 < self.beta <= 1.0:
            raise UsageError(f"beta must be in (0, 1], got {self.beta}")
        if self.alpha < 0 or self.gamma < 0:
            raise UsageError("alpha and gamma must be non-negative")
        if self.k < 1:
            raise UsageError("k must be >= 1")
        if self.beta_mode not in ("fixed", "gradual"):
            raise UsageError(f"unknown beta mode: {self.beta_mode}")
        if self.m <= 0:
            raise UsageError("m must be positive")


@dataclass
class NegativeDraw:
    indices: np.ndarray  # targets.shape + (k,)
    candidate_count: int  # items scored per position in the second stage


def beta_schedule(mode: str, beta_fixed: float, m: float, epoch: int) -> float:
    """Pre-selection ratio for an epoch: a constant, or the gradual ramp
    min(0.001 * 10^(epoch/m), 1.0)."""
    if m <= 0:
        raise UsageError("m must be positive")
    if mode == "fixed":
        return beta_fixed
    if mode == "gradual":
        exponent = epoch / m
        if exponent >= 3.0:  # 0.001 * 10^3 already reaches the cap
            return 1.0
        return min(0.001 * 10.0 ** exponent, 1.0)
    raise UsageError(f"unknown beta mode: {mode}")


def curriculum_step(alpha: float, prev_loss: float, curr_loss: float,
                    delta: float, alpha_min: float, alpha_max: float) -> float:
    """Raise alpha when the loss dropped, lower it otherwise (ties lower)."""
    if not (np.isfinite(prev_loss) and np.isfinite(curr_loss)):
        raise UsageError("curriculum losses must be finite")
    step = delta if prev_loss > curr_loss else -delta
    return float(np.clip(alpha + step, alpha_min, alpha_max))


# ---------------------------------------------------------------------------
# categorical draws
# ---------------------------------------------------------------------------


def _gumbel_pick(logits: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k independent categorical draws per row, proportional to exp(logits).

    Uses the Gumbel-max identity argmax(logits + G) ~ Categorical(softmax),
    which needs neither exponentiation nor normalization; -inf logits are
    excluded. Ties in scores are broken by the noise, never by index order.
    """
    n, v = logits.shape
    dtype = np.float32 if logits.dtype == np.float32 else np.float64
    tiny = np.finfo(dtype).tiny  # keeps log(u) finite when u rounds to 0
    out = np.empty((n, k), dtype=np.int64)
    for j in range(k):
        u = rng.random((n, v), dtype=dtype)
        np.maximum(u, tiny, out=u)
        np.log(u, out=u)
        np.negative(u, out=u)
        np.log(u, out=u)
        np.subtract(logits, u, out=u)
        out[:, j] = np.argmax(u, axis=1)
    return out


class AliasTable:
    """Vose alias method: O(V) build, O(1) vectorized draws from fixed weights."""

    def __init__(self, weights: np.ndarray):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or (w < 0).any() or w.sum() <= 0:
            raise UsageError("alias table needs a non-empty non-negative weight vector")
        n = w.size
        prob = w * n / w.sum()
        alias = np.zeros(n, dtype=np.int64)
        small = [i for i in range(n) if prob[i] < 1.0]
        large = [i for i in range(n) if prob[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            alias[s] = l
            prob[l] -= 1.0 - prob[s]
            (small if prob[l] < 1.0 else large).append(l)
        for i in small + large:
            prob[i] = 1.0
        self.prob = prob
        self.alias = alias
        self.n = n

    def draw(self, size: int, rng: np.random.Generator) -> np.ndarray:
        i = rng.integers(0, self.n, size=size)
        keep = rng.random(size) < self.prob[i]
        return np.where(keep, i, self.alias[i])


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def _flatten_targets(targets) -> tuple[np.ndarray, tuple[int, ...]]:
    t = np.asarray(targets, dtype=np.int64)
    return t.ravel(), t.shape


class Forbidden:
    """Per-position exclusion beyond the target: a [rows, n_items+1] boolean
    table plus the row owning each flat position (the history ablation)."""

    def __init__(self, table: np.ndarray, row_of_position: np.ndarray):
        self.table = np.asarray(table, dtype=bool)
        self.rows = np.asarray(row_of_position, dtype=np.int64)
        if (self.table[:, 1:].sum(axis=1) >= self.table.shape[1] - 1).any():
            raise UsageError("a position forbids every item; nothing to sample")

    def hit(self, positions: np.ndarray, draws: np.ndarray) -> np.ndarray:
        return self.table[self.rows[positions], draws]


def _reject_resample(draws: np.ndarray, positions: np.ndarray, forbidden_target: np.ndarray,
                     redraw, forbidden: Forbidden | None) -> np.ndarray:
    """Redraw entries equal to their target (or in their forbidden set) until clean."""
    def bad_mask():
        bad = draws == forbidden_target
        if forbidden is not None:
            bad |= forbidden.hit(positions, draws)
        return bad

    bad = bad_mask()
    while bad.any():
        draws[bad] = redraw(int(bad.sum()))
        bad = bad_mask()
    return draws


def sample_uniform(targets, n_items: int, k: int, rng: np.random.Generator,
                   forbidden: Forbidden | None = None) -> NegativeDraw:
    """Uniform draws from {1..n_items} minus each position's target."""
    if n_items < 2:
        raise UsageError("uniform sampling needs at least 2 items")
    flat, shape = _flatten_targets(targets)
    positions = np.repeat(np.arange(flat.size), k)
    draws = rng.integers(1, n_items + 1, size=flat.size * k)
    draws = _reject_resample(draws, positions, np.repeat(flat, k),
                             lambda m: rng.integers(1, n_items + 1, size=m), forbidden)
    return NegativeDraw(indices=draws.reshape(shape + (k,)), candidate_count=n_items)


def sample_popularity(targets, popularity: np.ndarray, gamma: float, k: int,
                      rng: np.random.Generator,
                      forbidden: Forbidden | None = None) -> NegativeDraw:
    """Draws with P(i) proportional to popularity[i]^gamma, excluding the target.

    popularity is indexed by item (entry 0 is the padding slot and ignored).
    """
    counts = np.asarray(popularity, dtype=np.float64)[1:]
    if counts.size < 2:
        raise UsageError("popularity sampling needs at least 2 items")
    table = AliasTable(counts**gamma)
    flat, shape = _flatten_targets(targets)
    positions = np.repeat(np.arange(flat.size), k)
    draws = table.draw(flat.size * k, rng) + 1
    draws = _reject_resample(draws, positions, np.repeat(flat, k),
                             lambda m: table.draw(m, rng) + 1, forbidden)
    return NegativeDraw(indices=draws.reshape(shape + (k,)), candidate_count=counts.size)


def candidate_pool_size(beta: float, n_items: int) -> int:
    return max(1, int(round(beta * n_items)))


def _distinct_uniform(n_items: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """A uniform random count-subset of {1..n_items} (partial Fisher-Yates)."""
    if count >= n_items:
        return np.arange(1, n_items + 1, dtype=np.int64)
    return rng.choice(n_items, size=count, replace=False).astype(np.int64) + 1


def genni_sample(h, embeddings: np.ndarray, targets, alpha: float, beta: float,
                 k: int, rng: np.random.Generator,
                 shared_candidates: bool = False,
                 forbidden: Forbidden | None = None) -> NegativeDraw:
    """Two-stage adaptive draw of k negatives per position.

    Stage 1 picks a uniform candidate pool of max(1, round(beta * n_items))
    items (the whole vocabulary when beta == 1). Stage 2 softmax-scores the
    pool against the position's interest vector, sharpens by alpha, zeroes the
    target, renormalizes, and draws with replacement. Internally the sharpened
    distribution is computed as softmax(alpha * logits), which is identical to
    the renormalized softmax^alpha but immune to overflow.
    """
    if alpha < 0:
        raise UsageError("alpha must be non-negative")
    if not 0.0 < beta <= 1.0:
        raise UsageError("beta must be in (0, 1]")
    emb = np.asarray(embeddings)
    n_items = emb.shape[0] - 1
    if n_items < 2:
        raise UsageError("need at least 2 items")
    flat_t, shape = _flatten_targets(targets)
    hv = np.asarray(np.asarray(h).reshape(flat_t.size, emb.shape[1]))
    pool = candidate_pool_size(beta, n_items)

    if pool >= n_items:
        # full scoring: one matmul over the whole table, no index gather
        logits = hv @ emb[1:].T
        if logits.dtype != np.float32:
            logits = logits.astype(np.float64)
        logits = logits * alpha
        has_target = flat_t > 0
        logits[np.arange(flat_t.size)[has_target], flat_t[has_target] - 1] = -np.inf
        if forbidden is not None:
            logits[forbidden.table[forbidden.rows][:, 1:]] = -np.inf
            if np.isneginf(logits).all(axis=1).any():
                raise UsageError("cannot find admissible candidates; exclusions too broad")
        draws = _gumbel_pick(logits, k, rng) + 1
        return NegativeDraw(indices=draws.reshape(shape + (k,)), candidate_count=n_items)

    n = flat_t.size
    draws = np.empty((n, k), dtype=np.int64)
    if shared_candidates:
        cand = np.broadcast_to(_distinct_uniform(n_items, pool, rng), (n, pool))
    else:
        cand = _stage1_candidates(n, n_items, pool, rng)
    chunk = max(1, _CHUNK_BUDGET // (pool * emb.shape[1]))
    use_fused = _HAS_NUMBA and n <= 8 and emb.dtype == np.float64
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        c = cand[start:stop]
        if use_fused:
            logits = np.stack([_gather_dot(emb, c[i], hv[start + i])
                               for i in range(stop - start)])
        else:
            rows = np.take(emb, c.ravel(), axis=0).reshape(stop - start, pool, emb.shape[1])
            logits = np.einsum("ncd,nd->nc", rows, hv[start:stop])
        if logits.dtype != np.float32:
            logits = logits.astype(np.float64, copy=False)
        logits = logits * alpha

        def blocked_mask(cands):
            out = cands == flat_t[start:stop, None]
            if forbidden is not None:
                here = forbidden.rows[start:stop]
                out |= forbidden.table[np.repeat(here, pool), cands.ravel()].reshape(cands.shape)
            return out

        blocked = blocked_mask(c)
        # a pool can consist entirely of excluded items; redraw such rows
        dead = blocked.all(axis=1)
        if dead.any():
            c = np.array(c)  # shared-candidate pools are read-only broadcast views
        tries = 0
        while dead.any():
            tries += 1
            if tries > 1000:
                raise UsageError("cannot find admissible candidates; exclusions too broad")
            idx = np.flatnonzero(dead)
            for i in idx:
                row = _distinct_uniform(n_items, pool, rng)
                c[i] = row
                logits[i] = alpha * (np.take(emb, row, axis=0) @ hv[start + i])
            blocked = blocked_mask(c)
            dead = blocked.all(axis=1)
        logits[blocked] = -np.inf
        picks = _gumbel_pick(logits, k, rng)
        draws[start:stop] = np.take_along_axis(c, picks, axis=1)
    return NegativeDraw(indices=draws.reshape(shape + (k,)), candidate_count=pool)


def _stage1_candidates(n: int, n_items: int, pool: int, rng: np.random.Generator) -> np.ndarray:
    """Independent uniform pool-subsets of {1..n_items} for n positions.

    Few positions (or a huge vocabulary) use the O(pool)-per-row stream
    dedup; larger batches amortize better over one vectorized argpartition.
    """
    if n <= 8 or n * n_items > 40_000_000:
        return np.stack([_distinct_uniform(n_items, pool, rng) for _ in range(n)])
    keys = rng.random((n, n_items))
    cand = np.argpartition(keys, pool - 1, axis=1)[:, :pool] + 1
    return np.ascontiguousarray(np.sort(cand, axis=1))


def sample_negatives(spec: SamplerSpec, targets, k: int, rng: np.random.Generator,
                     *, h=None, embeddings=None, popularity=None,
                     beta: float | None = None, alpha: float | None = None,
                     forbidden: Forbidden | None = None) -> NegativeDraw:
    """Dispatch on the spec kind. beta/alpha override the spec values so the
    trainer can apply schedules without mutating the spec."""
    if spec.kind == "uniform":
        n_items = (np.asarray(embeddings).shape[0] - 1) if embeddings is not None else len(popularity) - 1
        return sample_uniform(targets, n_items, k, rng, forbidden=forbidden)
    if spec.kind == "popularity":
        return sample_popularity(targets, popularity, spec.gamma, k, rng, forbidden=forbidden)
    return genni_sample(
        h, embeddings, targets,
        spec.alpha if alpha is None else alpha,
        spec.beta if beta is None else beta,
        k, rng, shared_candidates=spec.shared_candidates, forbidden=forbidden,
    )


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def informative_negatives(h_t: np.ndarray, embeddings: np.ndarray, alpha: float,
                          top_n: int, target: int | None = None) -> list[tuple[int, float]]:
    """Top items under the exact sharpened distribution, for case-study output.

    Returns (item_index, probability) pairs sorted by probability, computed as
    the renormalized alpha-power of the softmax over all items (minus the
    target when given).
    """
    emb = np.asarray(embeddings)
    scores = (np.asarray(h_t) @ emb[1:].T).astype(np.float64)
    items = np.arange(1, emb.shape[0])
    if target is not None and target > 0:
        keep = items != target
        items, scores = items[keep], scores[keep]
    logits = alpha * scores
    logits -= logits.max()
    q = np.exp(logits)
    q /= q.sum()
    order = np.argsort(-q, kind="stable")[:top_n]
    return [(int(items[i]), float(q[i])) for i in order]


def write_diagnostics(fh, step: int, positions, topn_lists) -> None:
    """Append JSON-lines records {step, position, topn: [[item, prob], ...]}."""
    for pos, topn in zip(positions, topn_lists):
        fh.write(json.dumps({"step": int(step), "position": int(pos),
                             "topn": [[int(i), float(p)] for i, p in topn]}) + "\n")
