"""Command-line entry point.

Subcommands: run, gen-synthetic, bench-sampler, export-plots,
inspect-negatives. The --threads flag pins the BLAS thread pools, so the
numeric modules are imported lazily after argument parsing.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the base seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for sweeps and BLAS threads (default 1)")
    common.add_argument("--out", default=None, help="output file or directory")

    parser = argparse.ArgumentParser(prog="seqrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run an experiment config")
    p_run.add_argument("config", nargs="?", help="experiment config file (INI)")
    p_run.add_argument("--from-manifest", default=None,
                       help="reproduce a finished run from its manifest.json")
    p_run.add_argument("--force", action="store_true",
                       help="allow sweeps larger than the safety limit")
    p_run.set_defaults(func=cmd_run)

    p_gen = sub.add_parser("gen-synthetic", parents=[common], help="write a synthetic TSV dataset")
    p_gen.add_argument("--n-users", type=int, default=2000)
    p_gen.add_argument("--n-items", type=int, default=200)
    p_gen.add_argument("--mean-len", type=float, default=20.0)
    p_gen.add_argument("--mode", choices=["markov", "confounder"], default="markov")
    p_gen.add_argument("--temperature", type=float, default=1.0)
    p_gen.add_argument("--n-successors", type=int, default=8)
    p_gen.add_argument("--succ-logit", type=float, default=3.0)
    p_gen.add_argument("--holdout-fraction", type=float, default=0.1)
    p_gen.set_defaults(func=cmd_gen_synthetic)

    p_bench = sub.add_parser("bench-sampler", parents=[common], help="sampling latency benchmark")
    p_bench.add_argument("--n-items", default="1000,100000",
                         help="comma-separated vocabulary sizes")
    p_bench.add_argument("--betas", default="0.1,1.0", help="comma-separated ratios")
    p_bench.add_argument("--reps", type=int, default=50)
    p_bench.add_argument("--d", type=int, default=64)
    p_bench.add_argument("--alpha", type=float, default=1.0)
    p_bench.set_defaults(func=cmd_bench)

    p_plots = sub.add_parser("export-plots", parents=[common], help="collect metrics into plot JSON")
    p_plots.add_argument("metrics_dir")
    p_plots.set_defaults(func=cmd_export_plots)

    p_insp = sub.add_parser("inspect-negatives", parents=[common],
                            help="dump the top informative negatives per user context")
    p_insp.add_argument("--checkpoint", required=True)
    p_insp.add_argument("--data", required=True, help="interaction TSV")
    p_insp.add_argument("--alpha", type=float, default=1.0)
    p_insp.add_argument("--top-n", type=int, default=10)
    p_insp.add_argument("--limit", type=int, default=50, help="number of users to inspect")
    p_insp.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = max(1, args.threads)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)

    from .config import ConfigError
    from .data import DataError, FormatError
    from .tensor import NumericError, UsageError

    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, UsageError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def cmd_run(args) -> int:
    from dataclasses import replace
    from .config import ConfigError, load_config
    from .runner import rerun_from_manifest, run_experiment

    if args.from_manifest:
        rerun_from_manifest(args.from_manifest, out_dir=args.out)
        return EXIT_OK
    if not args.config:
        raise ConfigError("missing config path (or --from-manifest)")
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, train=replace(cfg.train, seed=args.seed))
    cfg = replace(cfg, threads=max(1, args.threads))
    run_experiment(cfg, force=args.force)
    return EXIT_OK


def cmd_gen_synthetic(args) -> int:
    from .config import ConfigError
    from .synthetic import SyntheticSpec, generate_log, write_tsv

    if not args.out:
        raise ConfigError("gen-synthetic needs --out FILE")
    spec = SyntheticSpec(
        n_users=args.n_users, n_items=args.n_items, mean_len=args.mean_len,
        mode=args.mode, temperature=args.temperature, n_successors=args.n_successors,
        succ_logit=args.succ_logit, holdout_fraction=args.holdout_fraction,
        seed=args.seed if args.seed is not None else 1,
    )
    log = generate_log(spec)
    write_tsv(log, args.out)
    print(f"wrote {len(log.records)} events to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import bench_csv_lines, bench_sampler

    n_items = [int(v) for v in args.n_items.split(",") if v.strip()]
    betas = [float(v) for v in args.betas.split(",") if v.strip()]
    rows = bench_sampler(n_items, betas, reps=args.reps, d=args.d, alpha=args.alpha,
                         seed=args.seed if args.seed is not None else 0)
    text = "\n".join(bench_csv_lines(rows)) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_export_plots(args) -> int:
    from .runner import export_plots

    payload = export_plots(args.metrics_dir)
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_inspect(args) -> int:
    import numpy as np

    from .data import build_sequences, five_core_filter, ingest, split_leave_one_out, pad_batch
    from .encoder import encode, load_checkpoint
    from .samplers import informative_negatives, write_diagnostics

    params = load_checkpoint(args.checkpoint)
    log = five_core_filter(ingest(args.data))
    sequences, _ = build_sequences(log, params.config.max_len)
    splits = split_leave_one_out(sequences)
    contexts = splits.test_contexts[: args.limit]
    targets = splits.test_targets[: args.limit]
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        batch = pad_batch(contexts, params.config.max_len)
        h = encode(params, batch.inputs, train=False)
        last = h.data[:, -1, :]
        for i in range(len(contexts)):
            topn = informative_negatives(last[i], params.item_embeddings, args.alpha,
                                         args.top_n, target=int(targets[i]))
            write_diagnostics(out, step=0, positions=[i], topn_lists=[topn])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
