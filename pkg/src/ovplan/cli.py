"""Command-line front end: plan, simulate, congested, verify.

Exit codes: 0 success, 2 domain failure (no route, conflict, infeasible
scenario), 1 usage or I/O error.  Every command writes its artifacts under
--out together with a manifest naming each file and the seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from . import serialize as ser
from .airspace import AirspaceError, AirspaceModel, ContractStore, fixture_path, load_airspace
from .flightsim import SimConfig, SimulationError, simulate_route
from .ovgen import OvGenConfig, OvGenError
from .router import NoRouteFound, RouterConfig, plan
from .verify import (CongestedConfig, ScenarioInfeasible, check_accuracy,
                     check_contract_against_store, check_contracts, contract_for_route,
                     run_congested)

log = logging.getLogger("ovplan")

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class ScenarioConfig:
    router: RouterConfig = field(default_factory=RouterConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    ovgen: OvGenConfig = field(default_factory=OvGenConfig)
    congested: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "out"


def _section(cls, base, overrides: dict, name: str):
    known = {f.name for f in fields(cls)}
    bad = set(overrides) - known
    if bad:
        raise UsageError(f"unknown {name} option(s): {', '.join(sorted(bad))}")
    try:
        return replace(base, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad {name} config: {exc}") from exc


def load_config(path: str | None) -> ScenarioConfig:
    """Defaults, overridden by the JSON config file when given."""
    cfg = ScenarioConfig()
    if not path:
        return cfg
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    bad = set(doc) - {"router", "sim", "ovgen", "congested", "seed", "out"}
    if bad:
        raise UsageError(f"unknown config section(s): {', '.join(sorted(bad))}")
    cfg.router = _section(RouterConfig, cfg.router, doc.get("router", {}), "router")
    cfg.sim = _section(SimConfig, cfg.sim, doc.get("sim", {}), "sim")
    cfg.ovgen = _section(OvGenConfig, cfg.ovgen, doc.get("ovgen", {}), "ovgen")
    cfg.congested = dict(doc.get("congested", {}))
    cfg.seed = int(doc.get("seed", cfg.seed))
    cfg.out = str(doc.get("out", cfg.out))
    return cfg


def _load_airspace(path: str | None) -> AirspaceModel:
    p = Path(path) if path else fixture_path()
    try:
        return load_airspace(p)
    except OSError as exc:
        raise UsageError(f"cannot read airspace {p}: {exc}") from exc
    except AirspaceError as exc:
        raise UsageError(f"invalid airspace {p}: {exc}") from exc


class Outputs:
    """Collects artifacts written under one directory and emits the manifest."""

    def __init__(self, root: str | Path, command: str, seed: int):
        self.root = Path(root)
        self.command = command
        self.seed = seed
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str, kind: str) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
        self.files[name] = kind
        return path

    def json(self, name: str, obj: Any, kind: str) -> Path:
        return self.write(name, ser.dumps(obj), kind)

    def finish(self, **extra) -> Path:
        doc = {"command": self.command, "seed": self.seed,
               "artifacts": [{"file": k, "kind": v} for k, v in sorted(self.files.items())],
               **extra}
        return self.write("manifest.json", ser.dumps(doc), "manifest")


def _apply_common(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "speed", None) is not None:
        try:
            cfg.router = replace(cfg.router, v_cruise=args.speed)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return cfg


def _check_pair(model: AirspaceModel, a: str, b: str) -> None:
    for v in (a, b):
        if v not in model.vertiports:
            raise UsageError(f"unknown vertiport {v!r} (known: {', '.join(sorted(model.vertiports))})")
    if a == b:
        raise UsageError("--from and --to must differ")


def _speed_margin(cfg: ScenarioConfig) -> float:
    return float(cfg.congested.get("speed_margin", 2.0))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_plan(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    model = _load_airspace(args.airspace)
    _check_pair(model, args.from_id, args.to_id)
    store = ContractStore()
    if args.store:
        store = ser.store_from_dict(ser.read_json(args.store), model.origin)
    t0 = time.perf_counter()
    try:
        route = plan(model, store, args.from_id, args.to_id, args.depart, cfg.router)
    except NoRouteFound as exc:
        print(f"no route: {exc} ({exc.nodes_expanded} nodes expanded)", file=sys.stderr)
        return EXIT_DOMAIN
    t_plan = time.perf_counter() - t0
    try:
        contract = contract_for_route(route, cfg.sim, cfg.ovgen, cfg.seed, _speed_margin(cfg),
                                      contract_id=args.id or "")
    except (OvGenError, SimulationError) as exc:
        print(f"contract generation failed: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    t_total = time.perf_counter() - t0
    if not contract.id:
        contract = replace(contract, id=f"{args.from_id}-{args.to_id}-{args.depart:g}")
    conflicts = check_contract_against_store(contract, store)
    out = Outputs(cfg.out, "plan", cfg.seed)
    out.json("route.json", ser.route_to_dict(route, model.origin), "route")
    out.json("contract.json", ser.contract_to_dict(contract, model.origin), "contract")
    out.json("contract.geojson", ser.contract_geojson(contract, model.origin), "geojson")
    if args.store:
        if not conflicts:
            store.register(contract)
        out.json("store.json", ser.store_to_dict(store, model.origin), "store")
    out.finish(route_length_m=route.total_length, n_ovs=len(contract.ovs),
               n_waypoints=len(route.waypoints), wall_times="timings.json")
    (Path(cfg.out) / "timings.json").write_text(
        ser.dumps({"plan_s": round(t_plan, 4), "total_s": round(t_total, 4)}))
    print(f"route {args.from_id}->{args.to_id}: {route.total_length:.1f} m, "
          f"{len(route.waypoints)} waypoints, {len(contract.ovs)} OVs, "
          f"plan {t_plan:.2f} s, total {t_total:.2f} s")
    if conflicts:
        print(f"contract conflicts with {len({p.contract_b for p in conflicts})} stored contract(s)",
              file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    model = _load_airspace(args.airspace)
    _check_pair(model, args.from_id, args.to_id)
    try:
        route = plan(model, None, args.from_id, args.to_id, args.depart, cfg.router)
    except NoRouteFound as exc:
        print(f"no route: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    m = _speed_margin(cfg)
    v = route.v_cruise
    records = simulate_route(route, replace(cfg.sim, speed_low=max(0.5, v - m), speed_high=v + m,
                                            seed=cfg.seed))
    out = Outputs(cfg.out, "simulate", cfg.seed)
    out.json("route.json", ser.route_to_dict(route, model.origin), "route")
    out.write("trajectory.csv", ser.trajectory_csv(records, model.origin), "trajectory")
    out.finish(n_segments=len(records))
    print(f"simulated {cfg.sim.n_aircraft} aircraft over {len(records)} segments")
    return EXIT_OK


def cmd_congested(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    model = _load_airspace(args.airspace)
    opts = dict(cfg.congested)
    if args.target is not None:
        opts["target"] = args.target
    try:
        ccfg = CongestedConfig(**{**opts, "seed": cfg.seed, "router": cfg.router, "sim": cfg.sim,
                                  "ovgen": cfg.ovgen})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad congested config: {exc}") from exc
    t0 = time.perf_counter()
    try:
        store, report, schedule = run_congested(model, ccfg)
    except ScenarioInfeasible as exc:
        print(f"scenario infeasible: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    wall = time.perf_counter() - t0
    out = Outputs(cfg.out, "congested", cfg.seed)
    out.json("store.json", ser.store_to_dict(store, model.origin), "store")
    out.json("conflict_report.json", report.to_dict(), "conflict-report")
    out.write("schedule.csv", ser.schedule_csv(schedule, include_wall_time=False), "schedule")
    out.json("airspace.geojson", ser.airspace_geojson(model), "geojson")
    for c in sorted(store, key=lambda c: c.id):
        out.json(f"contracts/{c.id}.geojson", ser.contract_geojson(c, model.origin), "geojson")
    out.finish(n_contracts=len(store), clear=report.clear, wall_times="timings.csv")
    (Path(cfg.out) / "timings.csv").write_text(ser.schedule_csv(schedule))
    print(f"{len(store)} contracts, report {'clear' if report.clear else 'NOT clear'}, "
          f"{wall:.1f} s")
    return EXIT_OK if report.clear else EXIT_DOMAIN


def cmd_verify(args) -> int:
    cfg = _apply_common(load_config(args.config), args)
    store = ContractStore()
    try:
        if args.store:
            store = ser.store_from_dict(ser.read_json(args.store))
        for path in args.contracts:
            c = ser.contract_from_dict(ser.read_json(path))
            n = 2
            while c.id in store.contracts:
                c = replace(c, id=f"{c.id.rsplit('#', 1)[0]}#{n}")
                n += 1
            store.register(c)
    except OSError as exc:
        raise UsageError(f"cannot read input: {exc}") from exc
    except (ser.FormatError, ValueError) as exc:
        raise UsageError(f"malformed contract input: {exc}") from exc
    report = check_contracts(store)
    out = Outputs(cfg.out, "verify", cfg.seed)
    out.json("conflict_report.json", report.to_dict(), "conflict-report")
    accuracy = []
    if args.trials > 0:
        for c in sorted(store, key=lambda c: c.id):
            accuracy.append(check_accuracy(c, replace(cfg.sim, speed_low=c.speed_band[0],
                                                      speed_high=c.speed_band[1]),
                                           trials=args.trials, seed=cfg.seed).to_dict())
    out.json("accuracy.json", {"trials": args.trials, "reports": accuracy}, "accuracy-report")
    out.finish(n_contracts=len(store), clear=report.clear)
    for a in accuracy:
        print(f"{a['contract']}: accuracy {a['accuracy']:.4f} "
              f"({a['included_records']}/{a['total_records']})")
    print(f"{len(store)} contracts, report {'clear' if report.clear else 'NOT clear'} "
          f"({len(report.pairs)} conflicting region pairs)")
    return EXIT_OK if report.clear else EXIT_DOMAIN


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ovplan", description="Route planning and operational-volume contracts.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, pair=True):
        sp.add_argument("--airspace", help="airspace JSON (default: bundled fixture)")
        sp.add_argument("--config", help="JSON config; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        if pair:
            sp.add_argument("--from", dest="from_id", required=True)
            sp.add_argument("--to", dest="to_id", required=True)
            sp.add_argument("--depart", type=float, default=0.0, help="departure time, s")
            sp.add_argument("--speed", type=float, help="cruise speed, m/s")

    sp = sub.add_parser("plan", help="plan a route and build its contract")
    common(sp)
    sp.add_argument("--store", help="existing contracts to deconflict against")
    sp.add_argument("--id", help="contract id")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="plan and dump the Monte-Carlo trajectories")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("congested", help="run the congested-airspace scenario")
    common(sp, pair=False)
    sp.add_argument("--target", type=int, help="number of contracts (default 31)")
    sp.set_defaults(func=cmd_congested)

    sp = sub.add_parser("verify", help="check contracts for conflicts and accuracy")
    sp.add_argument("contracts", nargs="*", help="contract JSON files")
    sp.add_argument("--store", help="store dump to include")
    sp.add_argument("--trials", type=int, default=100, help="aircraft per accuracy check (0: skip)")
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"ovplan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ovplan: I/O error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
