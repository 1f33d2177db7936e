"""Command line entry point: ``aisampling run|bench|check``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .checks import run_checks
from .config import ConfigError, ExperimentConfig, bench_grid, preset, read_config_dict
from .output import emit_outputs
from .runner import compute_mse, run_experiment

log = logging.getLogger("aisampling")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON experiment config")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
    p.add_argument("--replicates", type=int, help="number of replicates")
    p.add_argument("--preset", choices=["desk", "full"], default="desk", help="defaults to start from")
    p.add_argument("--threads", type=int, default=1, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aisampling", description="Adaptive importance sampling benchmarks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one experiment config"))
    _add_common(sub.add_parser("bench", help="method / allocation / variance sweeps with aggregates"))
    chk = sub.add_parser("check", help="run the invariant suite")
    chk.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = preset(args.preset)
    if args.config is not None:
        # fields present in the file replace the preset's, whole values at a time
        base = cfg.to_dict()
        base.update(read_config_dict(args.config))
        cfg = ExperimentConfig.from_dict(base)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    if args.seed is not None:
        cfg.base_seed = args.seed
    if args.replicates is not None:
        cfg.replicates = args.replicates
    cfg.validate()
    return cfg


def _run_one(cfg: ExperimentConfig, threads: int, out_dir: Path) -> int:
    t0 = time.perf_counter()
    rows = run_experiment(cfg, threads=threads)
    # flagged rows stay in results.csv but cannot enter an MSE
    aggs = compute_mse([r for r in rows if not r.failed])
    for path in emit_outputs(rows, aggs, out_dir):
        print(f"wrote {path}")
    failed = sum(r.failed for r in rows)
    print(f"{len(rows)} rows in {time.perf_counter() - t0:.1f}s, {failed} failed")
    return 1 if failed else 0


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    return _run_one(cfg, args.threads, Path(cfg.output_dir))


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    status = 0
    for name, sub_cfg in bench_grid(cfg).items():
        out = Path(cfg.output_dir) / name
        print(f"== {name} -> {out}")
        status |= _run_one(sub_cfg, args.threads, out)
    return status


def cmd_check(args) -> int:
    results = run_checks(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:32s} {r.detail} ({r.seconds:.2f}s)")
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return {"run": cmd_run, "bench": cmd_bench, "check": cmd_check}[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
