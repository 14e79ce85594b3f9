"""Full-ranking top-K evaluation: HR@k and NDCG@k over the whole vocabulary."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import pad_batch
from .encoder import EncoderParams, encode, score_all
from .tensor import UsageError, no_grad


@dataclass
class EvalResult:
    hr: dict[int, float]
    ndcg: dict[int, float]
    n_users: int


def rank_of_target(scores: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Pessimistic 1-based rank: the target is placed after every item that
    scores greater than or equal to it."""
    target_scores = scores[np.arange(scores.shape[0]), targets - 1]
    return (scores >= target_scores[:, None]).sum(axis=1)


def metrics_from_ranks(ranks: np.ndarray, k_list) -> tuple[dict[int, float], dict[int, float]]:
    hr, ndcg = {}, {}
    for k in k_list:
        hit = ranks <= k
        hr[k] = float(hit.mean())
        gains = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        ndcg[k] = float(gains.mean())
    return hr, ndcg


def evaluate(params: EncoderParams, contexts: list[list[int]], targets,
             k_list=(5, 10), batch_size: int = 256,
             filter_seen: bool = False) -> EvalResult:
    """Score every item 1..n_items for each context and rank the held-out target.

    The candidate set is the full vocabulary; previously seen items stay in
    unless filter_seen is set. Deterministic for fixed inputs.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if len(contexts) == 0 or targets.size == 0:
        raise UsageError("evaluate needs a non-empty evaluation set")
    if len(contexts) != targets.size:
        raise UsageError("one target per context required")
    T = params.config.max_len
    ranks = np.empty(targets.size, dtype=np.int64)
    for start in range(0, len(contexts), batch_size):
        chunk = contexts[start:start + batch_size]
        batch = pad_batch(chunk, T)
        lead = int(np.argmax((batch.inputs != 0).any(axis=0)))
        with no_grad():
            h = encode(params, batch.inputs[:, lead:], train=False)
        scores = score_all(params, h.data[:, -1, :]).astype(np.float64)
        if filter_seen:
            for i, ctx in enumerate(chunk):
                seen = np.asarray(ctx, dtype=np.int64)
                scores[i, seen - 1] = -np.inf
        ranks[start:start + len(chunk)] = rank_of_target(scores, targets[start:start + len(chunk)])
    hr, ndcg = metrics_from_ranks(ranks, k_list)
    return EvalResult(hr=hr, ndcg=ndcg, n_users=int(targets.size))
