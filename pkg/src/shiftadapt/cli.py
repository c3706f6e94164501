"""Command-line entry point: ``shiftadapt {run, verify-mri, gc-counterexample, ablate}``."""

from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .harness import (
    OUTPUT_ENV,
    ConfigError,
    acceptance_config,
    emit,
    format_summary,
    load_config,
    output_dir,
    parse_baselines,
    run_experiment,
    summarize,
)
from .intervals import Horizon, active, best_coverage, gc_intervals, mri_intervals, verify_coverage
from .streams import StreamFormatError, load_stream


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shiftadapt",
        description="Online classification under distribution shift: experiments and schedule verifiers.",
        epilog=f"Output directory default: ${OUTPUT_ENV}, else ./results.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = sub.add_parser("run", help="run an experiment from a TOML config and write CSVs")
    run.add_argument("--config", required=True, help="experiment TOML file")
    run.add_argument("--seed", type=int, help="run this single seed instead of the config's list")
    run.add_argument("--stream", help="JSONL stream to use instead of generating one")
    run.add_argument("--out", help="output directory")
    run.add_argument("--svg", action="store_true", help="also write diff.svg")

    vm = sub.add_parser("verify-mri", help="exhaustive coverage check for power-of-two horizons")
    vm.add_argument("--max-t", type=int, required=True, help="largest horizon to check")

    sub.add_parser("gc-counterexample", help="coverage of geometric covering vs MRI at T=10")

    ab = sub.add_parser("ablate", help="compare AWE with one family of ablation baselines")
    ab.add_argument("--mode", choices=("resolution", "voting", "saol"), required=True)
    ab.add_argument("--config", help="experiment TOML file (default: the built-in benchmark)")
    ab.add_argument("--seed", type=int, help="run this single seed")
    ab.add_argument("--out", help="output directory")
    return parser


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _load(path: Optional[str]):
    if path is None:
        return acceptance_config()
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(p)
    return load_config(p)


def cmd_run(args) -> int:
    try:
        config = _load(args.config)
    except FileNotFoundError as exc:
        return _fail(f"config file not found: {exc}", 2)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    if args.seed is not None:
        config = config.with_seeds([args.seed])
    batches = None
    if args.stream:
        try:
            batches = load_stream(args.stream, K=config.stream.K, p=config.awe.p, seed=config.seeds[0])
        except FileNotFoundError:
            return _fail(f"stream file not found: {args.stream}", 2)
        except StreamFormatError as exc:
            return _fail(str(exc), 2)
    try:
        log = run_experiment(config, batches)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    out = output_dir(args.out, config)
    try:
        paths = emit(log, out, svg=args.svg)
    except OSError as exc:
        return _fail(f"cannot write to {out}: {exc}")
    print(format_summary(summarize(log)))
    for p in paths:
        print(f"wrote {p}")
    return 0


def cmd_verify_mri(args) -> int:
    if args.max_t < 2:
        return _fail("--max-t must be at least 2", 2)
    ok = True
    T = 2
    while T <= args.max_t:
        report = verify_coverage(Horizon(T))
        print(report.summary())
        ok &= report.passed
        T *= 2
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_gc_counterexample(args) -> int:
    T, t0, t = 10, 2, 8
    gc = gc_intervals(T)
    mri = mri_intervals(T)
    act = active(gc, t + 1)
    print(f"T={T}: GC ACTIVE({t + 1}) = {{{', '.join(f'[{u.start},{u.end}]' for u in act)}}}")
    gc_frac, gc_best = best_coverage(gc, t0, t)
    mri_frac, mri_best = best_coverage(mri, t0, t)
    print(f"shift at t0={t0}, evaluated entering t={t + 1}:")
    print(f"  GC  best post-shift coverage {gc_frac} ({float(gc_frac):.4f}) via {gc_best!r}")
    print(f"  MRI best post-shift coverage {mri_frac} ({float(mri_frac):.4f}) via {mri_best!r}")
    expected = {(u.start, u.end) for u in act} == {(9, 9), (8, 9), (8, 11), (8, 15)}
    ok = expected and gc_frac == Fraction(1, 7) and mri_frac >= Fraction(1, 2)
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


ABLATIONS = {
    "resolution": ["single_resolution:*"],
    "voting": ["majority_vote"],
    "saol": ["saol_gc"],
}


def cmd_ablate(args) -> int:
    try:
        config = _load(args.config)
    except FileNotFoundError as exc:
        return _fail(f"config file not found: {exc}", 2)
    except ConfigError as exc:
        return _fail(str(exc), 2)
    if args.seed is not None:
        config = config.with_seeds([args.seed])
    extra = parse_baselines(ABLATIONS[args.mode], config.stream.T)
    keep = [b for b in config.baselines if b.kind in ("base_ol", "oracle_restart")]
    config = config.with_baselines(keep + [b for b in extra if b not in keep])
    log = run_experiment(config)
    out = output_dir(args.out, config) / f"ablate_{args.mode}"
    try:
        emit(log, out)
    except OSError as exc:
        return _fail(f"cannot write to {out}: {exc}")
    print(format_summary(summarize(log)))
    print(f"wrote {out}")
    return 0


COMMANDS = {
    "run": cmd_run,
    "verify-mri": cmd_verify_mri,
    "gc-counterexample": cmd_gc_counterexample,
    "ablate": cmd_ablate,
}


def cli(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    return COMMANDS[args.command](args)


def main() -> None:
    sys.exit(cli())


if __name__ == "__main__":
    main()
