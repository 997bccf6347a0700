"""Command-line entry point.

    pevcoord simulate   --case case4_demo --out runs/demo
    pevcoord oracle     --case case4_demo --out runs/oracle
    pevcoord validate   --case my_case.json
    pevcoord solve-slot --case case4_demo --slot 3 --out runs/slot3

The mode may also be given as ``--mode``.  Set PEVCOORD_LOG to DEBUG, INFO
or WARNING (default) for progress output on standard error.

Exit codes: 0 success, 1 infeasible, 2 input error, 3 no convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .builder import DemandInfeasibleError, PenaltyConfig
from .conic.problem import Tolerances
from .errors import InfeasibleError, NonConvergenceError
from .fleet import FleetConfig, FleetError, generate_fleet, load_fleet
from .grid import CaseError, load_case, resolve_case_path
from .mpc import MpcConfig, brute_force_oracle, run_mpc
from .report import write_manifest, write_trace

MODES = ("simulate", "oracle", "validate", "solve-slot")
EXIT_INPUT = 2

log = logging.getLogger("pevcoord")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pevcoord", description="Online PEV charging coordination.")
    p.add_argument("mode_arg", nargs="?", choices=MODES, metavar="mode",
                   help="one of: " + ", ".join(MODES))
    p.add_argument("--mode", choices=MODES, help="alternative to the positional mode")
    p.add_argument("--case", required=True, help="case JSON file or bundled case name")
    p.add_argument("--fleet", help="fleet JSON (explicit PEV list or generator config); "
                                   "defaults to the case's bundled fleet, else a generated one")
    p.add_argument("--mu", type=float, default=10.0, help="binary penalty weight (default 10)")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0,
                   help="rank-one penalty weight (default 1)")
    p.add_argument("--L", type=float, default=1.5, help="exponent of the binary measure (default 1.5)")
    p.add_argument("--eps", type=float, default=1e-4, help="outer-loop tolerance (default 1e-4)")
    p.add_argument("--seed", type=int, help="seed for a fleet generated from a config "
                                            "(overrides the config's own seed)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration cap for both outer loops (defaults 100 and 50)")
    p.add_argument("--slot", type=int, help="slot to stop at in solve-slot mode")
    return p


def _fleet(args, case, profiles):
    stations = case.charging_stations
    T, h = profiles.slot_count, profiles.slot_hours
    if args.fleet:
        path = Path(args.fleet)
        if not path.exists():
            path = resolve_case_path(args.fleet)
        doc = json.loads(path.read_text())
        if isinstance(doc, dict) and "pevs" not in doc:
            cfg = FleetConfig.from_dict(doc)
            if args.seed is not None:
                cfg = dataclasses.replace(cfg, seed=args.seed)
            return generate_fleet(cfg, stations, T, h)
        return load_fleet(path, stations, T, h)
    try:
        bundled = resolve_case_path(f"{case.name}_fleet")
    except FileNotFoundError:
        bundled = None
    if bundled is not None:
        return load_fleet(bundled, stations, T, h)
    return generate_fleet(FleetConfig(seed=args.seed or 0), stations, T, h)


def _config(args) -> MpcConfig:
    pen = PenaltyConfig(mu=args.mu, L=args.L, lam=args.lam, eps=args.eps)
    kw = {}
    if args.max_iters is not None:
        if args.max_iters < 1:
            raise ValueError("--max-iters must be positive")
        kw = {"max_outer": args.max_iters, "rank1_max_iters": args.max_iters}
    return MpcConfig(penalty=pen, tolerances=Tolerances(), **kw)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run(args) -> int:
    mode = args.mode or args.mode_arg
    if mode is None:
        raise ValueError("a mode is required (" + ", ".join(MODES) + ")")
    case, profiles = load_case(resolve_case_path(args.case))

    if mode == "validate":
        msg = (f"{case.name}: {case.bus_count} buses, {len(case.lines)} lines, "
               f"{len(case.generators)} generators ({len(case.charging_stations)} stations), "
               f"{profiles.slot_count} slots of {profiles.slot_hours:g} h")
        if args.fleet:
            msg += f"; fleet of {len(_fleet(args, case, profiles))} PEVs"
        print(msg)
        if args.out:
            out = _out(args, ".")
            (out / "validate.json").write_text(json.dumps({"valid": True, "summary": msg}) + "\n")
            write_manifest(out, mode, ["validate.json"])
        return 0

    pevs = _fleet(args, case, profiles)
    config = _config(args)

    if mode == "simulate":
        trace = run_mpc(case, profiles, pevs, config)
        out = _out(args, "pevcoord_out")
        files = write_trace(trace, out)
        write_manifest(out, mode, files, {"case": case.name, "unmet": trace.unmet})
        print(json.dumps(trace.summary(), sort_keys=True))
        return 0

    if mode == "oracle":
        trace = run_mpc(case, profiles, pevs, config)
        oracle = brute_force_oracle(case, profiles, pevs, config)
        rel = (trace.objective - oracle.objective) / max(1.0, abs(oracle.objective))
        mpc_sched = {f"{pid},{r.t}": v for r in trace.records for pid, v in sorted(r.applied_tau.items())}
        doc = {"mpc_objective": trace.objective, "oracle_objective": oracle.objective,
               "oracle_relaxed_objective": oracle.relaxed_objective,
               "relative_difference": rel, "candidates": oracle.candidates,
               "mpc_schedule": mpc_sched,
               "oracle_schedule": {f"{pid},{t}": v for (pid, t), v in sorted(oracle.schedule.items())},
               "note": "oracle scores each schedule with the rank-relaxed OPF per slot and "
                       "recovers rank-one voltages for the best candidates"}
        out = _out(args, "pevcoord_out")
        (out / "oracle.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        (out / "oracle.csv").write_text(
            "quantity,mpc,oracle\n"
            f"objective,{trace.objective:.12e},{oracle.objective:.12e}\n")
        write_manifest(out, mode, ["oracle.json", "oracle.csv"], {"case": case.name})
        print(f"mpc {trace.objective:.9g}  oracle {oracle.objective:.9g}  relative difference {rel:.3e}")
        return 0

    # solve-slot
    if args.slot is None:
        raise ValueError("solve-slot needs --slot")
    trace = run_mpc(case, profiles, pevs, config, last_slot=args.slot)
    out = _out(args, "pevcoord_out")
    rec = trace.to_json()["records"][-1]
    (out / "slot.json").write_text(json.dumps(rec, indent=2, sort_keys=True) + "\n")
    write_manifest(out, mode, ["slot.json"], {"case": case.name, "slot": args.slot})
    print(json.dumps({"t": rec["t"], "applied_tau": rec["applied_tau"],
                      "slot_generation_cost": rec["slot_generation_cost"],
                      "stage2_iterations": rec["stage2_iterations"]}, sort_keys=True))
    return 0


def main(argv=None) -> int:
    level = os.environ.get("PEVCOORD_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except CaseError as exc:
        print(f"error: invalid case at {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DemandInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return InfeasibleError.exit_code
    except (InfeasibleError, NonConvergenceError) as exc:
        print(f"{'infeasible' if exc.exit_code == 1 else 'no convergence'}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FleetError, FileNotFoundError, json.JSONDecodeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
