"""Ranking-metric contracts against an exhaustive-sort brute-force oracle."""

import numpy as np
import pytest

from seqrec.encoder import EncoderConfig, init_params, encode
from seqrec.evaluation import evaluate, metrics_from_ranks, rank_of_target
from seqrec.tensor import UsageError


def oracle_rank(scores, target):
    """Sort every item by score and place the target after all ties."""
    order = sorted(range(len(scores)),
                   key=lambda i: (-scores[i], i == target - 1))
    return order.index(target - 1) + 1


def oracle_metrics(all_scores, targets, k_list):
    hr = {k: 0.0 for k in k_list}
    ndcg = {k: 0.0 for k in k_list}
    n = len(targets)
    for scores, t in zip(all_scores, targets):
        r = oracle_rank(list(scores), int(t))
        for k in k_list:
            if r <= k:
                hr[k] += 1.0 / n
                ndcg[k] += (1.0 / np.log2(r + 1.0)) / n
    return hr, ndcg


class TestRanking:
    def test_rank_two_ndcg_value(self):
        ranks = np.array([2, 2, 2, 2])
        hr, ndcg = metrics_from_ranks(ranks, (5,))
        assert hr[5] == 1.0
        assert ndcg[5] == pytest.approx(1.0 / np.log2(3.0), abs=1e-12)

    def test_perfect_ranking(self):
        hr, ndcg = metrics_from_ranks(np.ones(7, dtype=int), (5, 10))
        assert hr == {5: 1.0, 10: 1.0} and ndcg == {5: 1.0, 10: 1.0}

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n_items = int(rng.integers(3, 21))
            n_users = int(rng.integers(1, 6))
            scores = rng.normal(size=(n_users, n_items))
            if rng.random() < 0.3:  # force ties sometimes
                scores = np.round(scores)
            targets = rng.integers(1, n_items + 1, size=n_users)
            ranks = rank_of_target(scores, targets)
            hr, ndcg = metrics_from_ranks(ranks, (5, 10))
            ohr, ondcg = oracle_metrics(scores, targets, (5, 10))
            for k in (5, 10):
                assert hr[k] == pytest.approx(ohr[k], abs=1e-12)
                assert ndcg[k] == pytest.approx(ondcg[k], abs=1e-12)

    def test_pessimistic_ties_target_last(self):
        scores = np.zeros((1, 10))
        assert rank_of_target(scores, np.array([4]))[0] == 10
        hr, _ = metrics_from_ranks(rank_of_target(scores, np.array([4])), (5,))
        assert hr[5] == 0.0

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        scores = rng.normal(size=(6, 15))
        targets = rng.integers(1, 16, size=6)
        base = rank_of_target(scores, targets)
        for f in (lambda s: 3.0 * s + 7.0, np.tanh, lambda s: np.exp(s / 4)):
            np.testing.assert_array_equal(rank_of_target(f(scores), targets), base)


class TestEvaluate:
    def make(self, n_items=12, seed=3):
        cfg = EncoderConfig(n_items=n_items, max_len=6, d=8, layers=1, heads=2,
                            d_ff=8, dropout=0.0)
        return init_params(cfg, seed)

    def test_bounds_and_ordering(self):
        params = self.make()
        rng = np.random.default_rng(2)
        contexts = [list(rng.integers(1, 13, size=rng.integers(1, 5)))
                    for _ in range(40)]
        targets = rng.integers(1, 13, size=40)
        res = evaluate(params, contexts, targets, k_list=(5, 10))
        assert 0.0 <= res.ndcg[5] <= res.hr[5] <= 1.0
        assert res.hr[5] <= res.hr[10] and res.ndcg[5] <= res.ndcg[10]
        assert res.n_users == 40

    def test_matches_score_all_oracle(self):
        params = self.make()
        rng = np.random.default_rng(4)
        contexts = [list(rng.integers(1, 13, size=3)) for _ in range(10)]
        targets = rng.integers(1, 13, size=10)
        res = evaluate(params, contexts, targets, k_list=(5,))
        from seqrec.data import pad_batch
        from seqrec.encoder import score_all
        batch = pad_batch(contexts, 6)
        h = encode(params, batch.inputs).data[:, -1, :]
        ohr, ondcg = oracle_metrics(score_all(params, h), targets, (5,))
        assert res.hr[5] == pytest.approx(ohr[5], abs=1e-12)
        assert res.ndcg[5] == pytest.approx(ondcg[5], abs=1e-12)

    def test_deterministic(self):
        params = self.make()
        contexts = [[1, 2], [3, 4, 5]]
        targets = [6, 7]
        a = evaluate(params, contexts, targets)
        b = evaluate(params, contexts, targets)
        assert a == b

    def test_filter_seen_changes_candidates(self):
        params = self.make()
        # make a seen item the top-scored one everywhere
        params["item_emb"].data[:] = 0.0
        params["item_emb"].data[5] = 10.0
        contexts = [[5, 1]]
        unfiltered = evaluate(params, contexts, [2], k_list=(1,))
        filtered = evaluate(params, contexts, [2], k_list=(1,), filter_seen=True)
        assert filtered.hr[1] >= unfiltered.hr[1]

    def test_empty_rejected(self):
        params = self.make()
        with pytest.raises(UsageError):
            evaluate(params, [], [])

    def test_mismatched_lengths_rejected(self):
        params = self.make()
        with pytest.raises(UsageError):
            evaluate(params, [[1, 2]], [1, 2])

    def test_batching_invariant(self):
        params = self.make()
        rng = np.random.default_rng(5)
        contexts = [list(rng.integers(1, 13, size=rng.integers(1, 6)))
                    for _ in range(23)]
        targets = rng.integers(1, 13, size=23)
        a = evaluate(params, contexts, targets, batch_size=4)
        b = evaluate(params, contexts, targets, batch_size=64)
        for k in (5, 10):
            assert a.hr[k] == pytest.approx(b.hr[k], abs=1e-12)
            assert a.ndcg[k] == pytest.approx(b.ndcg[k], abs=1e-12)
