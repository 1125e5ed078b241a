"""Command line entry point.

Exit codes: 0 success, 1 configuration error, 2 solver blow-up,
3 verification failure (only with ``--strict``).
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, from_dict, parse_config
from .experiment import AXES, run_experiment, scan
from .forward import StepRejectedError, check_max_principle, solve_forward, validate_problem

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP, EXIT_VERIFY = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="experiment configuration (JSON)")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="override the configuration seed")
    common.add_argument("--strict", action="store_true", help="exit 3 when any check fails")

    p = argparse.ArgumentParser(prog="mraslab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one experiment")
    s = sub.add_parser("scan", parents=[common], help="sweep one parameter")
    s.add_argument("--axis", required=True, choices=sorted(AXES))
    s.add_argument("--values", required=True, nargs="+", help="values (space or comma separated)")
    s.add_argument("--jobs", type=int, default=1, help="parallel runs")
    sub.add_parser("validate", parents=[common], help="check the data conditions only")
    return p


def _values(raw: list[str]) -> list[str]:
    return [v for chunk in raw for v in chunk.split(",") if v]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be nonnegative")
            raw = cfg.to_json()
            raw["seed"] = args.seed
            raw["verify"]["seed"] = None
            if "noise" in raw:
                raw["noise"]["seed"] = None
            cfg = from_dict(raw, source=cfg.source)
        out = args.out or cfg.output_dir
        if args.command == "scan":
            values = _values(args.values)
            for v in values:
                float(v)
    except ConfigError as exc:
        for msg in exc.problems:
            print(f"config error: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            res = run_experiment(cfg, out)
            for name, rep in res.reports.items():
                if rep.entries:
                    print(f"{'PASS' if rep.passed else 'FAIL'}  {name}")
            s = res.reports["summary"].meta
            print(f"omega_hat={s['omega_hat']} omega_pred={s['omega_pred']:.6g} "
                  f"E(T)/E(0)={s['E_T'] / s['E0'] if s['E0'] else 0.0:.3e} "
                  f"wall={res.wall_time:.2f}s -> {out}")
            ok = res.passed
        elif args.command == "scan":
            rows = scan(cfg, args.axis, values, out, jobs=args.jobs)
            for r in rows:
                print(f"{args.axis}={r['value']:g} {r['status']} E_plateau={r.get('E_plateau')} "
                      f"ratio={r.get('plateau_ratio')}")
            ok = all(r["status"] == "ok" and r.get("failed", 1) == 0 for r in rows)
            if any(r["status"] == "blowup" for r in rows) and args.strict:
                return EXIT_BLOWUP
        else:
            spec = cfg.spec()
            acfg = cfg.adaptive_config()
            prior = validate_problem(spec, horizon=acfg.T)
            traj = solve_forward(spec, acfg.T, acfg.dt)
            realized = validate_problem(spec, traj)
            mp = check_max_principle(traj, spec.c_lower, spec.kind)
            for title, rep in (("a-priori", prior), ("realized", realized), ("maximum principle", mp)):
                print(f"== {title}: {'PASS' if rep.passed else 'FAIL'}\n{rep.to_text()}")
            ok = realized.passed and mp.passed
    except StepRejectedError as exc:
        print(f"solver blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.strict and not ok:
        return EXIT_VERIFY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
