"""Worker-side harness for the desk-scale acceptance experiments.

Each arm is one full training run on the shared synthetic dataset; workers run
in separate processes with single-threaded BLAS so wall-clock sums are
comparable across machines. Results carry the per-arm wall time for the
runtime-budget checks.

Setting SEQREC_ACCEPTANCE_CACHE to a directory reuses finished arms across
pytest invocations during development; unset (the default) everything is
recomputed in-process.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
import multiprocessing as mp

# pinned by the method-over-baseline acceptance criterion
DATASET = dict(n_users=5000, n_items=500, mean_len=20.0, seed=7)
ENCODER = dict(max_len=50, d=64, layers=2, heads=2, d_ff=64, dropout=0.2,
               dtype="float32")
SEEDS = (0, 1, 2, 3)


@dataclass(frozen=True)
class Arm:
    objective: str = "nce"
    kind: str = "uniform"
    alpha: float = 0.0
    beta: float = 1.0
    beta_mode: str = "fixed"
    k: int = 1
    curriculum: str = "off"
    seed: int = 0
    epochs: int = 60

    def key(self) -> str:
        payload = json.dumps({"arm": asdict(self), "data": DATASET, "enc": ENCODER},
                             sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_DATASET_CACHE: dict[tuple, tuple] = {}


def _prepared_dataset():
    key = tuple(sorted(DATASET.items()))
    if key not in _DATASET_CACHE:
        from seqrec.data import build_sequences, five_core_filter, split_leave_one_out
        from seqrec.synthetic import SyntheticSpec, generate_log

        log = five_core_filter(generate_log(SyntheticSpec(**DATASET)))
        sequences, vocab = build_sequences(log, ENCODER["max_len"])
        _DATASET_CACHE[key] = (split_leave_one_out(sequences), vocab)
    return _DATASET_CACHE[key]


def run_arm(arm: Arm) -> dict:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"
    cache_dir = os.environ.get("SEQREC_ACCEPTANCE_CACHE")
    if cache_dir:
        path = os.path.join(cache_dir, arm.key() + ".json")
        if os.path.exists(path):
            with open(path) as fh:
                return json.load(fh)

    from seqrec.encoder import EncoderConfig
    from seqrec.evaluation import evaluate
    from seqrec.samplers import CurriculumSpec, SamplerSpec
    from seqrec.training import TrainConfig, train

    splits, vocab = _prepared_dataset()
    cfg = TrainConfig(
        objective=arm.objective, lr=1e-3, max_epochs=arm.epochs, patience=1000,
        seed=arm.seed,
        sampler=SamplerSpec(kind=arm.kind, alpha=arm.alpha, beta=arm.beta,
                            beta_mode=arm.beta_mode, k=arm.k,
                            curriculum=CurriculumSpec(mode=arm.curriculum)),
        encoder=EncoderConfig(n_items=vocab.n_items, **ENCODER),
    )
    tic = time.perf_counter()
    best, metrics = train(cfg, splits, vocab)
    test = evaluate(best, splits.test_contexts, splits.test_targets, k_list=(5, 10))
    result = {
        "arm": asdict(arm),
        "test_ndcg10": test.ndcg[10],
        "test_hr10": test.hr[10],
        "best_val_ndcg10": max(r.ndcg10 for r in metrics.epochs),
        "best_epoch": metrics.best_epoch,
        "final_alpha": metrics.epochs[-1].alpha,
        "wall_s": time.perf_counter() - tic,
    }
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        with open(os.path.join(cache_dir, arm.key() + ".json"), "w") as fh:
            json.dump(result, fh)
    return result


def run_pool(arms: list[Arm], workers: int | None = None) -> dict[Arm, dict]:
    if workers is None:
        workers = max(1, min(4, os.cpu_count() or 1))
    ctx = mp.get_context("spawn")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        results = list(pool.map(run_arm, arms))
    return dict(zip(arms, results))
