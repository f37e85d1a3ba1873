"""Command line entry point.

Verbs: ``generate`` (dataset export), ``sweep``, ``verify-props`` and ``plot``.
Exit codes: 0 success, 1 check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .bench import BenchConfig, make_dataset
from .selective import RiskCoverageCurve
from .sweep import VARIANTS, ConfigError, SweepConfig, SweepResult, load_config, run_sweep

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2


def _config(args) -> SweepConfig:
    cfg = load_config(args.config) if args.config else SweepConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, bench=dataclasses.replace(cfg.bench, seed=args.seed))
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    make_dataset(cfg.bench).save(args.out)
    print(f"wrote dataset to {args.out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = dataclasses.replace(_config(args), out_dir=str(args.out))
    result = run_sweep(cfg)
    Path(args.out, "config.json").write_text(_dump(cfg.to_dict()))
    errors = sum(1 for r in result.rows.values() if r.get("error"))
    print(f"wrote {len(result.rows)} rows to {Path(args.out, 'results.csv')} ({errors} failed cells)")
    return EXIT_CHECK_FAILED if errors else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import verify_propositions

    report = verify_propositions(args.seed if args.seed is not None else 0)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_plot(args) -> int:
    from .plot import render_heatmap, render_risk_coverage

    src = Path(args.results)
    csv_path = src / "results.csv" if src.is_dir() else src
    result = SweepResult.from_csv(csv_path.read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    variants = [args.variant] if args.variant else sorted({r["variant"] for r in result.rows.values()})
    metrics = [args.metric] if args.metric else ["accuracy", "ece", "stability", "robustness"]
    try:
        for v in variants:
            for m in metrics:
                (out / f"heatmap_{m}_{v}.svg").write_text(render_heatmap(result, m, v))
    except KeyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    curve_dir = csv_path.parent / "curves"
    if curve_dir.is_dir():
        groups: dict[tuple[str, str], dict[str, RiskCoverageCurve]] = {}
        for f in sorted(curve_dir.glob("*.csv")):
            variant, tau, p = f.stem.rsplit("_", 2)
            if variant in variants:
                groups.setdefault((variant, p), {})[tau] = _read_curve(f)
        for (variant, p), curves in groups.items():
            (out / f"risk_coverage_{variant}_{p}.svg").write_text(
                render_risk_coverage(curves, f"risk-coverage ({variant}, {p})")
            )
    print(f"wrote figures to {out}")
    return EXIT_OK


def _read_curve(path: Path) -> RiskCoverageCurve:
    import numpy as np

    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return RiskCoverageCurve(data[:, 0], data[:, 1])


def _dump(obj) -> str:
    import json

    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reliarep", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="export a synthetic benchmark dataset")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="run the (variant, tau, p) sweep")
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify-props", help="numerically verify the five propositions")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("plot", help="render SVG heatmaps and risk-coverage charts from sweep output")
    p.add_argument("--results", type=Path, required=True, help="sweep output dir or results.csv")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--metric")
    p.add_argument("--variant", choices=VARIANTS)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
