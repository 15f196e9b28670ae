"""``pic`` command line: run, ablate, verify, bench.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as config_mod
from .domain import GridSpec, WorkloadConfig, WorkloadKind
from .errors import CapacityError, CflViolation, ConfigError, GpmaError, PicError
from .kernels import REFERENCE_QSP_FLOPS, flop_count_scalar
from .report import ablation_report, report_run
from .simulation import AblationMode, oracle_replay, relative_error, run_simulation
from .shape import ShapeOrder

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2
ORACLE_TOL = 1e-13
CONSERVATION_TOL = 1e-12
BENCH_SWEEP = (1, 4, 8, 16, 32, 64, 128)


def _write(text: str, out) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    result = run_simulation(cfg, args.mode, validate=args.validate)
    _write(report_run(result, args.format), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = config_mod.load(args.config)
    reference = oracle_replay(cfg).as_array()
    results, summary, ok = [], {}, True
    for mode in AblationMode:
        res = run_simulation(cfg, mode)
        results.append(res)
        err = relative_error(res.current.as_array(), reference)
        ok &= err <= ORACLE_TOL
        summary[mode.value] = {
            "sort_s": sum(m.sort_time for m in res.metrics),
            "deposition_s": sum(m.deposition_time for m in res.metrics),
            "mean_pps": float(np.mean([m.particles_per_second for m in res.metrics]))
            if res.metrics else 0.0,
            "global_sorts": res.sort_steps,
            "oracle_rel_err": err,
        }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(ablation_report(results, "csv"))
    (out / "ablation.json").write_text(ablation_report(results, "json"))
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    for name, row in summary.items():
        status = "ok" if row["oracle_rel_err"] <= ORACLE_TOL else "MISMATCH"
        print(f"{name:<18} sort {row['sort_s']:.4f}s  deposit {row['deposition_s']:.4f}s  "
              f"oracle {row['oracle_rel_err']:.2e} {status}")
    return EXIT_OK if ok else EXIT_VERIFY


def _verify_case(order, seed, grid_n, ppc, kind):
    """Every mode after one step against the oracle, plus conservation."""
    wl = WorkloadConfig(GridSpec.cubic(grid_n), ppc=ppc, kind=kind, seed=seed, steps=1)
    cfg = config_mod.RunConfig(wl, order)
    failures = []
    reference = oracle_replay(cfg).as_array()
    for mode in AblationMode:
        try:
            res = run_simulation(cfg, mode, validate=True)
        except GpmaError as exc:
            failures.append(f"{mode.value}: gpma invariant broken ({exc})")
            continue
        err = relative_error(res.current.as_array(), reference)
        if err > ORACLE_TOL:
            failures.append(f"{mode.value}: oracle mismatch {err:.2e}")
        p = res.particles
        expected = [np.sum(p.q * v * p.w) for v in (p.vx, p.vy, p.vz)]
        for comp, (got, want) in enumerate(zip(res.checksum, expected)):
            scale = abs(want) or 1.0
            if abs(got - want) > CONSERVATION_TOL * scale:
                failures.append(f"{mode.value}: component {comp} sum {got} != {want}")
    return failures


def cmd_verify(args) -> int:
    orders = [ShapeOrder.parse(args.order)] if args.order else list(ShapeOrder)
    failures = []
    for order in orders:
        for grid_n, ppc, kind in ((4, 1, WorkloadKind.UNIFORM_PLASMA),
                                  (6, 8, WorkloadKind.DRIFT_GRADIENT),
                                  (8, 27, WorkloadKind.UNIFORM_PLASMA)):
            fails = _verify_case(order, args.seed, grid_n, ppc, kind)
            label = f"order={order.name} grid={grid_n}^3 ppc={ppc} {kind.value}"
            print(f"{'PASS' if not fails else 'FAIL'} {label}")
            for f in fails:
                print(f"    {f}")
            failures.extend(fails)
    return EXIT_OK if not failures else EXIT_VERIFY


def cmd_bench(args) -> int:
    cfg = config_mod.load(args.config)
    sweep = BENCH_SWEEP if args.ppc_sweep else (cfg.workload.ppc,)
    try:
        modes = [AblationMode.parse(m) for m in args.modes.split(",")]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    flops = flop_count_scalar(cfg.order)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["ppc", "mode", "particles", "deposition_s", "sort_s", "mean_pps",
                     "flops_per_particle", "reference_flops", "gflops"])
    for ppc in sweep:
        wl = replace(cfg.workload, ppc=ppc)
        run_cfg = replace(cfg, workload=wl)
        for mode in modes:
            res = run_simulation(run_cfg, mode)
            dep = sum(m.deposition_time for m in res.metrics)
            n = res.particles.count
            pps = float(np.mean([m.particles_per_second for m in res.metrics])) if res.metrics else 0.0
            writer.writerow([ppc, mode.value, n, repr(dep),
                             repr(sum(m.sort_time for m in res.metrics)), repr(pps), flops,
                             REFERENCE_QSP_FLOPS if cfg.order is ShapeOrder.QSP else "",
                             repr(pps * flops / 1e9)])
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pic", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate one ablation mode")
    run.add_argument("--config", required=True)
    run.add_argument("--mode", default=AblationMode.FULL_OPT.value,
                     choices=[m.value for m in AblationMode])
    run.add_argument("--out", default="-")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--validate", action="store_true", help="check gpma invariants each step")
    run.set_defaults(func=cmd_run)

    ablate = sub.add_parser("ablate", help="run every mode, write one combined report")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--out", required=True, help="output directory")
    ablate.set_defaults(func=cmd_ablate)

    verify = sub.add_parser("verify", help="oracle-equivalence and invariant suite")
    verify.add_argument("--order", choices=("1", "3"))
    verify.add_argument("--seed", type=int, default=0)
    verify.set_defaults(func=cmd_verify)

    bench = sub.add_parser("bench", help="throughput over particles-per-cell")
    bench.add_argument("--config", required=True)
    bench.add_argument("--ppc-sweep", action="store_true")
    bench.add_argument("--modes", default="Baseline,RhocellVector,FullOpt")
    bench.add_argument("--out", default="-")
    bench.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CflViolation, CapacityError) as exc:
        # all raised while validating the workload, before step 0
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


if __name__ == "__main__":
    sys.exit(main())
