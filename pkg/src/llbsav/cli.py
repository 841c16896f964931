"""Command-line entry point: ``llbsav {run,study,presets,check}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io
from .config import (PRESETS, ConfigError, RunConfig, build_config, initial_field, read_values,
                     with_overrides)
from .convergence import run_study
from .diagnostics import energy_record
from .fem import assemble_mass_stiffness
from .mesh import build_structured
from .selftest import run_checks
from .stepper import run

log = logging.getLogger("llbsav")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--config", type=Path, help="flat key = value file")
    p.add_argument("--n", type=int, help="cells per side (base level for studies)")
    p.add_argument("--k", type=float, help="time step")
    p.add_argument("--T", type=float, help="final time")
    p.add_argument("--scheme", choices=["euler", "bdf2"])
    p.add_argument("--bdf2-init", choices=["euler_substeps", "implicit"])
    p.add_argument("--solver", choices=["lu", "gmres"])
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="llbsav", description="Linear SAV finite element "
                                     "solver for the Landau-Lifshitz-Bloch equation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="integrate one trajectory, write energy CSV and VTK")
    _common(p)
    p.add_argument("--vtk-stride", type=int, help="write a VTK snapshot every this many steps")

    p = sub.add_parser("study", help="refinement study, write rate CSV")
    _common(p)
    p.add_argument("--levels", type=int)
    p.add_argument("--coupling", help="fixed or proportional:<c> (k = c h)")
    p.add_argument("--stride", type=int, help="compare every stride-th shared time")
    p.add_argument("--workers", type=int, default=1, help="levels run in parallel threads")

    sub.add_parser("presets", help="list the built-in presets")
    sub.add_parser("check", help="run the operator and oracle self-test")
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file, with ``--preset`` and the other flags taking precedence."""
    values, lines = {}, {}
    if args.config is not None:
        values, lines = read_values(args.config.read_text())
    if args.preset:
        values["preset"] = args.preset
    cfg = build_config(values, lines)
    overrides = dict(n=args.n, k=args.k, T=args.T, scheme=args.scheme, bdf2_init=args.bdf2_init,
                     solver=args.solver, out=None if args.out is None else str(args.out))
    for name in ("vtk_stride", "levels", "coupling", "stride"):
        overrides[name] = getattr(args, name, None)
    return with_overrides(cfg, **overrides)


def cmd_run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = build_structured(cfg.domain, cfg.n)
    ops = assemble_mass_stiffness(mesh)
    scheme = cfg.scheme_config()
    coeff = scheme.coeff
    records = []
    bdf2 = scheme.scheme == "bdf2"

    def watch(state, diag, prev):
        records.append(energy_record(state, diag, coeff, ops, prev if bdf2 else None))
        if cfg.vtk_stride and state.step_index % cfg.vtk_stride == 0:
            io.emit_field_vtk(state.u, mesh, out / f"u_{state.step_index:06d}.vtk")

    run(initial_field(cfg.u0), ops, scheme, callback=watch, keep=lambda n: False)
    last = records[-1]
    print(f"{scheme.scheme}: n={cfg.n} k={scheme.k:g} steps={scheme.num_steps} "
          f"E={last.E:.10g} E_modified={last.E_modified:.10g}")
    if cfg.energy_csv:
        io.write_energy_csv(records, out / "energy.csv")
        print(f"wrote {out / 'energy.csv'}")
    return 0


def cmd_study(cfg: RunConfig, workers: int) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_study(cfg.study_spec(), workers=workers)
    print(report.summary())
    print("headline rates: " + ", ".join(f"{s}={r:.3f}" for s, r in report.headline.items()))
    if cfg.rate_csv:
        io.write_rate_csv(report, out / "rates.csv")
        print(f"wrote {out / 'rates.csv'}")
    return 0


def cmd_presets() -> int:
    for name, values in PRESETS.items():
        print(name + ": " + ", ".join(f"{k}={v}" for k, v in values.items()))
    return 0


def cmd_check() -> int:
    results = run_checks()
    for r in results:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            return cmd_presets()
        if args.command == "check":
            return cmd_check()
        cfg = resolve_config(args)
        if args.command == "run":
            return cmd_run(cfg)
        return cmd_study(cfg, args.workers)
    except (ConfigError, ValueError, OSError, RuntimeError) as exc:
        print(f"llbsav: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
