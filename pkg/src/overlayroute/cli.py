"""Command-line entry point: ``overlayroute {validate,run,sweep,diagnose}``."""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

from . import __version__
from .diagnostics import diagnose
from .engine import rows_to_csv, run_simulation, sweep_arrival_rate, write_run
from .network import validate
from .scenario import BUNDLED, ScenarioError, load_scenario

SWEEP_COLUMNS = ["controller", "rate", "seed", "avg_delay", "avg_queue", "throughput", "drops"]


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _names(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def _manifest(command: str, sc, config, extra: dict | None = None) -> dict:
    out = {"command": command, "scenario": sc.name, "scenario_sha256": sc.sha256, "seed": config.seed,
           "version": __version__, "sim": asdict(config)}
    out.update(extra or {})
    return out


def _write(out_dir: str, name: str, text: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w", newline="") as fh:
        fh.write(text)


def controller_for(sc, cid: str) -> dict:
    """Scenario controller section when the id matches; otherwise defaults,
    carrying the scenario's total budget over to budgeted controllers."""
    if sc.controller.get("id") == cid:
        return dict(sc.controller)
    cfg = {"id": cid}
    if cid in ("poc", "poc-t"):
        if "total_budget" not in sc.controller:
            raise ScenarioError(f"{cid} needs a total_budget; the scenario's controller section has none")
        cfg["total_budget"] = sc.controller["total_budget"]
    return cfg


def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    report = validate(sc.spec)
    print(f"{sc.name}: {report}")
    return 0 if report.ok else 1


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    config = sc.sim_config(seed=args.seed, horizon=args.horizon)
    ctl = controller_for(sc, args.controller) if args.controller else sc.controller
    log = run_simulation(sc.spec, config, ctl)
    if args.out:
        write_run(log, args.out, _manifest("run", sc, config, {"controller": ctl}))
    sys.stdout.write(log.summary_csv())
    return 0


def cmd_sweep(args) -> int:
    if not args.controllers:
        args.parser.error("--controllers must name at least one controller")
    if not args.rates:
        args.parser.error("--rates must list at least one rate")
    sc = load_scenario(args.scenario)
    config = sc.sim_config(seed=args.seed, horizon=args.horizon)
    rows, used = [], {}
    for cid in args.controllers:
        used[cid] = controller_for(sc, cid)
        rows += sweep_arrival_rate(sc.spec, config, used[cid], args.rates, workers=args.workers)
    table = rows_to_csv(rows, SWEEP_COLUMNS)
    if args.out:
        _write(args.out, "sweep.csv", table)
        man = _manifest("sweep", sc, config, {"rates": args.rates, "controllers": used})
        _write(args.out, "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(table)
    return 0


def cmd_diagnose(args) -> int:
    sc = load_scenario(args.scenario)
    ctl = controller_for(sc, args.controller) if args.controller else sc.controller
    config = sc.sim_config(seed=args.seed, horizon=args.horizon)
    d = diagnose(sc.spec, ctl, horizon=config.horizon, n_points=args.points, seed=config.seed,
                 underlay_policy=config.underlay_policy)
    text = json.dumps(d.as_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, "diagnosis.json", text)
        man = _manifest("diagnose", sc, config, {"controller": ctl, "points": args.points})
        _write(args.out, "manifest.json", json.dumps(man, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="overlayroute", description="Overlay routing simulator and controllers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--scenario", required=True,
                        help=f"scenario file, or a bundled name ({', '.join(BUNDLED)})")
        sp.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
        sp.add_argument("--horizon", type=int, default=None, help="slots; overrides the scenario horizon")
        if out:
            sp.add_argument("--out", default=None, help="directory for tables and manifest")

    sp = sub.add_parser("validate", help="check a scenario against the topology rules")
    sp.add_argument("--scenario", required=True)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("run", help="run one simulation")
    common(sp)
    sp.add_argument("--controller", default=None, help="controller id; defaults to the scenario's")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="average delay and queue against arrival rate")
    common(sp)
    sp.add_argument("--rates", type=_floats, required=True, help="comma-separated per-flow rates")
    sp.add_argument("--controllers", type=_names, required=True, help="comma-separated controller ids")
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep, parser=sp)

    sp = sub.add_parser("diagnose", help="monotonicity, ODE and Lyapunov checks on measured prices")
    common(sp)
    sp.add_argument("--controller", default=None, help="poc or poc-t; defaults to the scenario's")
    sp.add_argument("--points", type=int, default=6, help="budget points at which prices are measured")
    sp.set_defaults(func=cmd_diagnose)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
