"""Sampler contracts: exact distributions, exclusions, schedules, curriculum."""

import json

import numpy as np
import pytest
from scipy import stats

from seqrec.samplers import (AliasTable, CurriculumSpec, Forbidden, SamplerSpec,
                             beta_schedule, candidate_pool_size, curriculum_step,
                             genni_sample, informative_negatives, sample_popularity,
                             sample_uniform, write_diagnostics)
from seqrec.tensor import UsageError


def exact_sharpened(h, emb, alpha, target):
    """Brute-force reference: softmax over all items, alpha power, drop the
    target, renormalize. Deliberately uses the naive formula."""
    scores = np.array([h @ emb[i] for i in range(1, emb.shape[0])], dtype=np.float64)
    p = np.exp(scores) / np.exp(scores).sum()
    q = p**alpha
    if target is not None:
        q[target - 1] = 0.0
    return q / q.sum()


class TestUniform:
    def test_two_items_forced(self):
        draw = sample_uniform(np.array([1, 1, 1]), n_items=2, k=4,
                              rng=np.random.default_rng(0))
        assert (draw.indices == 2).all()

    def test_shape_contract(self):
        draw = sample_uniform(np.ones((3, 5), dtype=int), n_items=10, k=3,
                              rng=np.random.default_rng(1))
        assert draw.indices.shape == (3, 5, 3)

    def test_needs_two_items(self):
        with pytest.raises(UsageError):
            sample_uniform(np.array([1]), n_items=1, k=1, rng=np.random.default_rng(2))

    def test_excludes_target_and_padding(self):
        rng = np.random.default_rng(3)
        targets = rng.integers(1, 51, size=20000)
        draw = sample_uniform(targets, n_items=50, k=5, rng=rng)
        assert (draw.indices != 0).all()
        assert (draw.indices != targets[:, None]).all()

    def test_uniform_chi_square(self):
        rng = np.random.default_rng(4)
        n = 100
        draw = sample_uniform(np.full(100_000, n), n_items=n, k=1, rng=rng)
        counts = np.bincount(draw.indices.ravel(), minlength=n + 1)[1:n]
        stat = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert stat < stats.chi2.ppf(0.99, n - 2)


class TestPopularity:
    def test_ratio_matches_counts(self):
        # two items with counts 1 and 8: draw ratio ~ 1:8 within 3 sigma
        pop = np.array([0, 1, 8, 6])
        rng = np.random.default_rng(5)
        n = 100_000
        draw = sample_popularity(np.full(n, 3), pop, gamma=1.0, k=1, rng=rng)
        counts = np.bincount(draw.indices.ravel(), minlength=4)
        p1 = 1.0 / 9.0  # item 3 excluded, weights 1 and 8 remain
        sigma = np.sqrt(n * p1 * (1 - p1))
        assert abs(counts[1] - n * p1) < 3 * sigma
        assert counts[3] == 0

    def test_gamma_zero_is_uniform(self):
        rng = np.random.default_rng(6)
        n = 100
        pop = np.concatenate([[0], rng.integers(5, 500, size=n)])
        draw = sample_popularity(np.full(50_000, n), pop, gamma=0.0, k=1, rng=rng)
        counts = np.bincount(draw.indices.ravel(), minlength=n + 1)[1:n]
        stat = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        assert stat < stats.chi2.ppf(0.99, n - 2)

    def test_gamma_sweep_value_is_valid(self):
        spec = SamplerSpec(kind="popularity", gamma=1.5)
        assert spec.gamma == 1.5

    def test_alias_table_matches_weights(self):
        rng = np.random.default_rng(7)
        w = np.array([1.0, 2.0, 3.0, 4.0])
        table = AliasTable(w)
        draws = table.draw(200_000, rng)
        freq = np.bincount(draws, minlength=4) / 200_000
        np.testing.assert_allclose(freq, w / w.sum(), atol=0.01)


class TestGenni:
    def test_alpha_zero_beta_one_uniform(self):
        rng = np.random.default_rng(8)
        n = 100
        emb = rng.normal(size=(n + 1, 8))
        h = np.tile(rng.normal(size=8), (50_000, 1))
        draw = genni_sample(h, emb, np.full(50_000, 7), alpha=0.0, beta=1.0, k=1, rng=rng)
        counts = np.bincount(draw.indices.ravel(), minlength=n + 1)
        assert counts[7] == 0 and counts[0] == 0
        kept = np.delete(counts[1:], 6)
        stat = ((kept - kept.mean()) ** 2 / kept.mean()).sum()
        assert stat < stats.chi2.ppf(0.99, n - 2)

    def test_exact_distribution_small_vocab(self):
        rng = np.random.default_rng(9)
        emb = np.vstack([np.zeros(4), rng.normal(size=(6, 4))])
        h = rng.normal(size=4)
        target = 2
        n = 100_000
        draw = genni_sample(np.tile(h, (1, 1)), emb, np.array([target]),
                            alpha=1.3, beta=1.0, k=n, rng=rng)
        counts = np.bincount(draw.indices.ravel(), minlength=7)[1:]
        q = exact_sharpened(h, emb, 1.3, target)
        for i in range(6):
            sigma = np.sqrt(n * q[i] * (1 - q[i]))
            assert abs(counts[i] - n * q[i]) <= 3 * sigma + 1

    def test_large_alpha_concentrates(self):
        rng = np.random.default_rng(10)
        emb = np.vstack([np.zeros(3), rng.normal(size=(8, 3))])
        h = rng.normal(size=3)
        scores = emb[1:] @ h
        target = int(np.argmax(scores)) + 1  # exclude the top item itself
        runner_up = int(np.argsort(scores)[-2]) + 1
        draw = genni_sample(np.tile(h, (1, 1)), emb, np.array([target]),
                            alpha=50.0, beta=1.0, k=10_000, rng=rng)
        frac = (draw.indices == runner_up).mean()
        assert frac > 0.99

    def test_candidate_count_exact(self):
        rng = np.random.default_rng(11)
        emb = rng.normal(size=(101, 4))
        h = rng.normal(size=(5, 4))
        for beta in (0.03, 0.27, 0.5, 1.0):
            draw = genni_sample(h, emb, np.arange(1, 6), alpha=1.0, beta=beta,
                                k=2, rng=rng)
            assert draw.candidate_count == max(1, round(beta * 100))

    def test_pool_of_one_never_returns_target(self):
        # beta small enough that the pool is a single item which may collide
        rng = np.random.default_rng(12)
        emb = rng.normal(size=(3, 2))
        h = np.zeros((2000, 2))
        draw = genni_sample(h, emb, np.ones(2000, dtype=int), alpha=1.0,
                            beta=0.5, k=1, rng=rng)
        assert draw.candidate_count == 1
        assert (draw.indices == 2).all()

    def test_shared_candidates_stay_in_pool(self):
        rng = np.random.default_rng(13)
        emb = rng.normal(size=(201, 4))
        h = rng.normal(size=(400, 4))
        draw = genni_sample(h, emb, np.full(400, 200), alpha=0.0, beta=0.05,
                            k=3, rng=rng, shared_candidates=True)
        distinct = np.unique(draw.indices)
        assert distinct.size <= candidate_pool_size(0.05, 200)

    def test_independent_pools_cover_more(self):
        rng = np.random.default_rng(14)
        emb = rng.normal(size=(201, 4))
        h = rng.normal(size=(400, 4))
        draw = genni_sample(h, emb, np.full(400, 200), alpha=0.0, beta=0.05,
                            k=3, rng=rng, shared_candidates=False)
        assert np.unique(draw.indices).size > candidate_pool_size(0.05, 200)

    def test_exclusion_beta_below_one(self):
        rng = np.random.default_rng(15)
        emb = rng.normal(size=(51, 4))
        targets = rng.integers(1, 51, size=30_000)
        h = rng.normal(size=(30_000, 4))
        draw = genni_sample(h, emb, targets, alpha=2.0, beta=0.2, k=2, rng=rng)
        assert (draw.indices != 0).all()
        assert (draw.indices != targets[:, None]).all()

    def test_monotone_concentration_in_alpha(self):
        rng = np.random.default_rng(16)
        emb = np.vstack([np.zeros(5), rng.normal(size=(30, 5))])
        h = rng.normal(size=5)
        target = 4
        top = None
        prev = -1.0
        for alpha in (0.0, 0.5, 1.0, 2.0, 4.0, 8.0):
            q = exact_sharpened(h, emb, alpha, target)
            if top is None:
                top = int(np.argmax(exact_sharpened(h, emb, 10.0, target)))
            assert q[top] >= prev - 1e-12
            prev = q[top]

    def test_deterministic_for_fixed_rng(self):
        emb = np.random.default_rng(17).normal(size=(41, 4))
        h = np.random.default_rng(18).normal(size=(100, 4))
        t = np.random.default_rng(19).integers(1, 41, size=100)
        a = genni_sample(h, emb, t, 1.5, 0.4, 2, np.random.default_rng(20)).indices
        b = genni_sample(h, emb, t, 1.5, 0.4, 2, np.random.default_rng(20)).indices
        np.testing.assert_array_equal(a, b)


class TestForbidden:
    def test_history_never_drawn(self):
        rng = np.random.default_rng(21)
        n_items = 30
        table = np.zeros((4, n_items + 1), dtype=bool)
        history = {0: [1, 2, 3], 1: [4, 5], 2: [6], 3: [7, 8, 9, 10]}
        for row, items in history.items():
            table[row, items] = True
        rows = np.repeat(np.arange(4), 50)
        targets = rng.integers(11, 31, size=200)
        forb = Forbidden(table, rows)
        emb = rng.normal(size=(n_items + 1, 4))
        h = rng.normal(size=(200, 4))
        for draw in (
            sample_uniform(targets, n_items, 3, rng, forbidden=forb),
            sample_popularity(targets, np.r_[0, rng.integers(5, 50, n_items)], 1.0, 3, rng,
                              forbidden=forb),
            genni_sample(h, emb, targets, 1.0, 1.0, 3, rng, forbidden=forb),
            genni_sample(h, emb, targets, 1.0, 0.3, 3, rng, forbidden=forb),
        ):
            flat = draw.indices.reshape(200, -1)
            for row, items in history.items():
                chunk = flat[rows == row]
                assert not np.isin(chunk, items).any()
            assert (flat != targets[:, None]).all()

    def test_fully_blocked_rejected(self):
        table = np.ones((1, 4), dtype=bool)
        with pytest.raises(UsageError):
            Forbidden(table, np.zeros(3, dtype=int))


class TestBetaSchedule:
    def test_fixed(self):
        assert beta_schedule("fixed", 0.37, 20, 999) == 0.37

    def test_gradual_epoch_zero(self):
        assert beta_schedule("gradual", 1.0, 20, 0) == 0.001

    def test_gradual_caps_at_one(self):
        assert beta_schedule("gradual", 1.0, 20, 60) == 1.0
        assert beta_schedule("gradual", 1.0, 20, 61) == 1.0
        assert beta_schedule("gradual", 1.0, 20, 200) == 1.0

    def test_gradual_m40_epoch40(self):
        assert beta_schedule("gradual", 1.0, 40, 40) == 0.01

    def test_m_positive(self):
        with pytest.raises(UsageError):
            beta_schedule("gradual", 1.0, 0, 5)


class TestCurriculum:
    def test_loss_dropped_increases_alpha(self):
        assert curriculum_step(2.0, 1.0, 0.8, 0.01, 0.0, 6.0) == pytest.approx(2.01)

    def test_loss_rose_decreases_with_clamp(self):
        assert curriculum_step(0.0, 0.8, 1.0, 0.01, 0.0, 6.0) == 0.0

    def test_tie_decreases(self):
        assert curriculum_step(1.0, 0.9, 0.9, 0.01, 0.0, 6.0) == pytest.approx(0.99)

    def test_upper_clamp(self):
        assert curriculum_step(6.0, 1.0, 0.5, 0.01, 0.0, 6.0) == 6.0

    def test_non_finite_rejected(self):
        with pytest.raises(UsageError):
            curriculum_step(1.0, np.nan, 0.5, 0.01, 0.0, 6.0)

    def test_spec_validation(self):
        with pytest.raises(UsageError):
            CurriculumSpec(mode="self_adjusted", smoothing=1.0)
        with pytest.raises(UsageError):
            SamplerSpec(beta=0.0)
        with pytest.raises(UsageError):
            SamplerSpec(k=0)


class TestInformativeNegatives:
    def test_alpha_zero_uniform_over_non_target(self):
        rng = np.random.default_rng(22)
        emb = rng.normal(size=(11, 3))
        out = informative_negatives(rng.normal(size=3), emb, alpha=0.0,
                                    top_n=10, target=4)
        assert len(out) == 9  # the target is not a candidate
        for item, prob in out:
            assert item != 4
            assert prob == pytest.approx(1.0 / 9.0, abs=1e-12)

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(23)
        emb = rng.normal(size=(13, 4))
        out = informative_negatives(rng.normal(size=4), emb, alpha=2.5,
                                    top_n=11, target=1)
        assert sum(p for _, p in out) == pytest.approx(1.0, abs=1e-9)

    def test_matches_brute_force_and_sorted(self):
        rng = np.random.default_rng(24)
        emb = rng.normal(size=(9, 3))
        h = rng.normal(size=3)
        out = informative_negatives(h, emb, alpha=1.7, top_n=8, target=5)
        q = exact_sharpened(h, emb, 1.7, 5)
        probs = [p for _, p in out]
        assert probs == sorted(probs, reverse=True)
        for item, prob in out:
            assert prob == pytest.approx(q[item - 1], abs=1e-12)

    def test_diagnostics_jsonl(self, tmp_path):
        path = tmp_path / "diag.jsonl"
        with open(path, "w") as fh:
            write_diagnostics(fh, step=3, positions=[0, 1],
                              topn_lists=[[(5, 0.5), (2, 0.25)], [(1, 1.0)]])
        lines = [json.loads(l) for l in path.read_text().splitlines()]
        assert lines[0] == {"step": 3, "position": 0, "topn": [[5, 0.5], [2, 0.25]]}
        assert lines[1]["topn"] == [[1, 1.0]]
