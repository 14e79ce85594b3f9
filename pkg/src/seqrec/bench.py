"""Per-position sampling latency benchmarks across vocabulary sizes and
pre-selection ratios."""

from __future__ import annotations

import time

import numpy as np

from .samplers import candidate_pool_size, genni_sample

BENCH_HEADER = "n_items,beta,candidate_count,median_s,p99_s,reps"


def bench_sampler(n_items_list, beta_list, reps: int = 50, d: int = 64,
                  alpha: float = 1.0, seed: int = 0, warmup: int = 5) -> list[dict]:
    """Median and p99 latency of a single-position two-stage draw per
    (vocabulary size, beta) cell, plus the exact scored-candidate count."""
    rows = []
    for n_items in n_items_list:
        rng = np.random.default_rng((seed, n_items))
        emb = rng.standard_normal((n_items + 1, d))
        for beta in beta_list:
            h = rng.standard_normal((1, d))
            target = np.array([1 + n_items // 2])
            lat = []
            count = None
            for rep in range(warmup + reps):
                tic = time.perf_counter()
                draw = genni_sample(h, emb, target, alpha, beta, 1, rng)
                dt = time.perf_counter() - tic
                if rep >= warmup:
                    lat.append(dt)
                count = draw.candidate_count
            lat.sort()
            assert count == candidate_pool_size(beta, n_items)
            rows.append({
                "n_items": int(n_items),
                "beta": float(beta),
                "candidate_count": int(count),
                "median_s": lat[len(lat) // 2],
                "p99_s": lat[min(len(lat) - 1, int(0.99 * (len(lat) - 1)))],
                "reps": reps,
            })
    return rows


def bench_csv_lines(rows: list[dict]) -> list[str]:
    lines = [BENCH_HEADER]
    for r in rows:
        lines.append(f"{r['n_items']},{r['beta']!r},{r['candidate_count']},"
                     f"{r['median_s']!r},{r['p99_s']!r},{r['reps']}")
    return lines
