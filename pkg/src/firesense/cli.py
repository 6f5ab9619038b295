"""Command-line entry point: ``run``, ``validate`` and ``compare``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .harness.config import BASELINES, CONTROLLERS, ConfigError, ScenarioConfig, load_config, validate
from .harness.export import ExportError, export, export_map
from .harness.simulation import InvariantViolation, TrialMetrics, run_trial

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3

logger = logging.getLogger("firesense")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonnegative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    run = cfg.run
    if getattr(args, "seed", None) is not None:
        run = replace(run, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        run = replace(run, trials=args.trials)
    if getattr(args, "steps", None) is not None:
        run = replace(run, steps=args.steps)
    if getattr(args, "controller", None) is not None:
        run = replace(run, controller=args.controller)
    cfg = replace(cfg, run=run)
    validate(cfg)
    return cfg


def run_trials(cfg: ScenarioConfig, out: Path | None = None, export_maps: bool = False,
               quiet: bool = True) -> list[TrialMetrics]:
    metrics = []
    for k in range(cfg.run.trials):
        on_map = None
        if export_maps and out is not None:
            def on_map(step, grid, _k=k):
                export_map(out, _k, step, grid)
        m = run_trial(cfg, k, on_map=on_map)
        if not quiet:
            print(f"trial {k}: controller={m.controller} summed_residual={m.summed_residual:.6g} "
                  f"mean_coverage={m.mean_coverage:.3f} wall={m.wall_time:.2f}s")
        metrics.append(m)
    return metrics


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    out = Path(args.out)
    metrics = run_trials(cfg, out, args.export_maps, args.quiet)
    export(cfg, metrics, out, ("csv", "json", "trajectories", "timing"))
    if not args.quiet:
        mean = float(np.mean([m.summed_residual for m in metrics]))
        print(f"{cfg.run.controller}: mean summed residual {mean:.6g} over {len(metrics)} trial(s) -> {out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    warnings = validate(cfg)
    for w in warnings:
        print(f"warning: {w}")
    print(f"{args.config or 'default scenario'}: ok")
    return EXIT_OK


def ratio_table(results: dict[str, list[float]]) -> str:
    """Mean summed residual per controller, and each relative to the first listed."""
    names = list(results)
    ref = float(np.mean(results[names[0]]))
    lines = [f"{'controller':<14}{'mean_residual':>16}{'std':>14}{'ratio_vs_' + names[0]:>22}"]
    for n in names:
        mean = float(np.mean(results[n]))
        if ref > 0:
            ratio = mean / ref
        else:
            ratio = 1.0 if mean == 0 else float("inf")
        lines.append(f"{n:<14}{mean:>16.6g}{float(np.std(results[n])):>14.4g}{ratio:>22.4g}")
    return "\n".join(lines)


def cmd_compare(args) -> int:
    names = [c.strip() for c in args.controllers.split(",") if c.strip()]
    unknown = [c for c in names if c not in CONTROLLERS + BASELINES]
    if not names or unknown:
        raise ConfigError(f"unknown controller(s) {unknown or names}; expected from "
                          f"{', '.join(CONTROLLERS + BASELINES)}")
    base = load_config(args.config)
    out = Path(args.out)
    results = {}
    for name in names:
        args.controller = name
        cfg = _apply_overrides(base, args)
        metrics = run_trials(cfg, quiet=args.quiet)
        export(cfg, metrics, out / name, ("csv", "json", "timing"))
        results[name] = [m.summed_residual for m in metrics]
    table = ratio_table(results)
    try:
        (out / "compare.txt").write_text(table + "\n")
    except OSError as exc:
        raise ExportError(f"cannot write {out / 'compare.txt'}: {exc}") from None
    print(table)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="firesense", description="Multi-UAV wildfire active-sensing simulator.")
    p.add_argument("-v", "--verbose", action="store_true", help="enable debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", default=None, help="scenario YAML (default: shipped scenario)")
        sp.add_argument("--seed", type=_u64, default=None)
        sp.add_argument("--trials", type=_positive, default=None)
        sp.add_argument("--steps", type=_nonnegative, default=None)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--quiet", action="store_true")

    r = sub.add_parser("run", help="run trials and export metrics")
    common(r)
    r.add_argument("--controller", choices=CONTROLLERS + BASELINES, default=None)
    r.add_argument("--export-maps", action="store_true", help="write per-step PGM snapshots of the fused map")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--config", default=None)
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("compare", help="run several controllers and print residual ratios")
    common(c)
    c.add_argument("--controllers", default="full,stationary",
                   help="comma-separated list; ratios are relative to the first")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ExportError as exc:
        print(f"export error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
