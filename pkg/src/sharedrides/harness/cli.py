"""Command line: generate instances, solve the fluid model, price, simulate, sweep.

Every command writes the configuration it used to ``<command>_config.json``
in its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

import numpy as np

from ..fluid import cost_gradient, dump_solution_csv, solve_cb
from ..netgraph import RoadNetwork
from ..pricing import write_trace_csv
from ..simkernel import run_simulation
from ..policy import DualTables
from .config import ConfigError, ExperimentConfig, load_config, validate
from .experiment import build_instance, pricing_config, run_policy, write_rows
from .ingest import ingest_trips, read_trips_csv, read_zone_file
from .instances import gen_example1, gen_example2, instance_for_policy, load_instance, save_instance

log = logging.getLogger("sharedrides")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sharedrides", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML or JSON experiment config")
        sp.add_argument("--out", type=Path, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")

    def model(sp):
        sp.add_argument("--instance", type=Path, help="instance directory")
        sp.add_argument("--policy", choices=["pre_trip", "on_trip", "combined"])
        sp.add_argument("--T", type=int, help="waiting window in periods")
        sp.add_argument("--c", type=float, help="cost per unit distance")

    sp = sub.add_parser("gen", help="write an Example 1 or Example 2 instance")
    common(sp)
    sp.add_argument("--example", type=int, choices=[1, 2])
    sp.add_argument("--L", type=int)
    sp.add_argument("--l", type=int)
    sp.add_argument("--N", type=int)

    sp = sub.add_parser("solve-fluid", help="solve the fluid LP at given conversions")
    common(sp)
    model(sp)
    sp.add_argument("--lam", type=str, help="conversion probability, scalar or comma list")

    sp = sub.add_parser("price", help="optimize conversions and prices")
    common(sp)
    model(sp)

    sp = sub.add_parser("simulate", help="simulate a priced policy")
    common(sp)
    model(sp)
    sp.add_argument("--pricing", type=Path, help="pricing.json from 'price'")
    sp.add_argument("--periods", type=int)
    sp.add_argument("--replications", type=int)
    sp.add_argument("--log-events", action="store_true", help="also write events.csv")

    sp = sub.add_parser("sweep", help="policy x T x c grid and profit curves")
    common(sp)
    sp.add_argument("--periods", type=int)
    sp.add_argument("--replications", type=int)

    sp = sub.add_parser("ingest", help="build an instance from trip records")
    common(sp)
    sp.add_argument("--trips", type=Path)
    sp.add_argument("--zones", type=Path)
    sp.add_argument("--network", type=Path)
    sp.add_argument("--coords", type=Path)
    sp.add_argument("--k", type=int, help="dropoff clusters per zone")
    sp.add_argument("--window-periods", type=float)
    sp.add_argument("--scale", type=float)
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    a = vars(args)
    if a.get("seed") is not None:
        cfg.seed = args.seed
    if a.get("out") is not None:
        cfg.out = str(args.out)
    if a.get("policy") is not None:
        cfg.policy = [args.policy]
    if a.get("T") is not None:
        cfg.T = [args.T]
    if a.get("c") is not None:
        cfg.c = [args.c]
    if a.get("periods") is not None:
        cfg.periods = args.periods
    if a.get("replications") is not None:
        cfg.replications = args.replications
    if a.get("instance") is not None:
        cfg.instance = {"path": str(args.instance)}
    if a.get("example") is not None:
        cfg.instance = {"example": args.example}
    for k in ("L", "l", "N"):
        if a.get(k) is not None:
            if "path" in cfg.instance:
                raise ConfigError(f"instance.{k}", "cannot combine with an instance path")
            cfg.instance[k] = a[k]
    if args.command == "gen" and a.get("seed") is not None:
        cfg.instance["seed"] = args.seed
    if args.command == "ingest":
        for k, key in (("trips", "trips"), ("zones", "zones"), ("network", "network"),
                       ("coords", "coords"), ("k", "clusters_per_zone"),
                       ("window_periods", "window_periods"), ("scale", "scale")):
            if a.get(k) is not None:
                v = a[k]
                cfg.ingest[key] = str(v) if isinstance(v, Path) else v
    return validate(cfg)


def _out_dir(cfg: ExperimentConfig, default: str, command: str) -> Path:
    out = Path(cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out, f"{command}_config.json")
    return out


def cmd_gen(cfg: ExperimentConfig) -> int:
    inst = build_instance(cfg)
    out = _out_dir(cfg, "instance", "gen")
    save_instance(inst, out)
    print(f"wrote {len(inst.types)} rider types on {inst.network.n_nodes} nodes to {out}")
    return 0


def _model(cfg: ExperimentConfig):
    base = build_instance(cfg)
    return instance_for_policy(base, cfg.policy[0], T=cfg.T[0], cost=cfg.c[0])


def cmd_solve_fluid(cfg: ExperimentConfig, lam_arg: str | None) -> int:
    inst = _model(cfg)
    if lam_arg is None:
        lam = np.full(inst.n_types, min(1.0, max(0.0, (1 - inst.cost) / 2)))
    else:
        vals = [float(x) for x in lam_arg.split(",")]
        lam = np.broadcast_to(np.array(vals), (inst.n_types,)).copy()
    sol = solve_cb(inst, lam)
    out = _out_dir(cfg, "fluid", "solve_fluid")
    grad = cost_gradient(sol, inst)
    summary = {"lam": lam.tolist(), "cost": sol.cost, "revenue": inst.revenue(lam),
               "profit": inst.revenue(lam) - sol.cost, "gradient": grad.tolist(),
               "policy": cfg.policy[0], "T": inst.T, "c": inst.cost}
    (out / "fluid.json").write_text(json.dumps(summary, indent=2))
    dump_solution_csv(sol, inst, out / "fluid_solution.csv")
    print(f"C(lam) = {sol.cost:.6g}, fluid profit = {summary['profit']:.6g}")
    return 0


def cmd_price(cfg: ExperimentConfig) -> int:
    inst = _model(cfg)
    run = run_policy(inst, cfg.policy[0], cfg.T[0], cfg.c[0], pricing_config(cfg), None)
    default = cfg.instance.get("path", "pricing")
    out = _out_dir(cfg, default, "price")
    data = run.pricing.to_dict()
    data.update({"policy": cfg.policy[0], "T": run.T, "c": run.cost})
    (out / "pricing.json").write_text(json.dumps(data, indent=2))
    write_trace_csv(run.pricing, out / "pricing_trace.csv")
    print(f"fluid profit {run.pricing.profit:.6g} per period, "
          f"lam = {np.array2string(run.pricing.lam, precision=4)}")
    return 0


def cmd_simulate(cfg: ExperimentConfig, pricing_path: Path | None, log_events: bool) -> int:
    inst = _model(cfg)
    policy = cfg.policy[0]
    if pricing_path is None and "path" in cfg.instance:
        cand = Path(cfg.instance["path"]) / "pricing.json"
        pricing_path = cand if cand.exists() else None
    if pricing_path is not None:
        data = json.loads(Path(pricing_path).read_text())
        if data.get("policy", policy) != policy or data.get("T", inst.T) != inst.T:
            raise ConfigError("pricing", f"{pricing_path} was computed for policy "
                              f"{data.get('policy')} with T={data.get('T')}")
        lam = np.array(data["lam"], dtype=float)
        duals = DualTables.from_solution(solve_cb(inst, lam), inst)
    else:
        run = run_policy(inst, policy, cfg.T[0], cfg.c[0], pricing_config(cfg), None)
        lam = run.pricing.lam
        duals = DualTables.from_solution(run.pricing.solution, inst)
    metrics = run_simulation(inst, lam, duals, policy, cfg.periods, seed=cfg.seed,
                             replications=cfg.replications, keep_log=log_events,
                             riders_per_minute=cfg.riders_per_minute)
    out = _out_dir(cfg, "simulation", "simulate")
    metrics.to_csv(out / "metrics.csv")
    metrics.to_json(out / "metrics.json")
    if log_events:
        for k, lg in enumerate(metrics.logs):
            lg.to_csv(out / f"events_{k}.csv")
    print(f"profit {metrics.profit_per_period:.6g} +- {metrics.profit_se or 0:.2g} per period")
    return 0


def _sweep_grid(cfg: ExperimentConfig, out: Path) -> list[dict]:
    pcfg = pricing_config(cfg)
    base = build_instance(cfg)
    policies = cfg.sweep.get("policies", cfg.policy)
    Ts = cfg.sweep.get("T", cfg.T)
    costs = cfg.sweep.get("c", cfg.c)
    rows = []
    for policy in policies:
        for T in ([0] if policy == "on_trip" else Ts):
            for c in costs:
                run = run_policy(base, policy, T, c, pcfg, cfg.periods, seed=cfg.seed,
                                 replications=cfg.replications,
                                 riders_per_minute=cfg.riders_per_minute)
                point = out / "points" / f"{policy}_T{T}_c{c:g}"
                point.mkdir(parents=True, exist_ok=True)
                cfg.write(point, "sweep_config.json")
                run.metrics.to_csv(point / "metrics.csv")
                rows.append(run.row())
                log.info("%s T=%d c=%g: profit %.5g", policy, T, c,
                         run.metrics.profit_per_period)
    write_rows(rows, out / "table.csv")
    return rows


def _sweep_curves(cfg: ExperimentConfig, out: Path) -> None:
    pcfg = pricing_config(cfg)
    policies = cfg.sweep.get("policies", cfg.policy)
    T = cfg.sweep.get("T", cfg.T)[-1]
    c = cfg.sweep.get("c", cfg.c)[0]
    rate = cfg.instance.get("total_rate", 0.1)
    if cfg.sweep.get("example1_l"):
        L = cfg.instance.get("L", 100) if cfg.instance.get("example") == 1 else 100
        rows = []
        for l in cfg.sweep["example1_l"]:
            base = gen_example1(L=L, l=l, total_rate=rate, cost=c, fare=cfg.fare)
            for policy in policies:
                run = run_policy(base, policy, T, c, pcfg, cfg.periods, seed=cfg.seed,
                                 replications=cfg.replications)
                rows.append({"l": l, "delta": 1 - l / L, **run.row()})
        write_rows(rows, out / "profit_vs_delta.csv")
    if cfg.sweep.get("example2_N"):
        spec = cfg.instance if cfg.instance.get("example") == 2 else {}
        rows = []
        for N in cfg.sweep["example2_N"]:
            for s in cfg.sweep.get("example2_seeds", [0]):
                base = gen_example2(N, rows=spec.get("rows", 10), cols=spec.get("cols", 10),
                                    edge_length=spec.get("edge_length", 10),
                                    L=spec.get("L", 100), total_rate=rate, cost=c,
                                    seed=s, fare=cfg.fare)
                for policy in policies:
                    run = run_policy(base, policy, T, c, pcfg, cfg.periods, seed=cfg.seed,
                                     replications=cfg.replications)
                    rows.append({"N": N, "instance_seed": s, **run.row()})
        write_rows(rows, out / "profit_vs_N.csv")


def cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _out_dir(cfg, "sweep", "sweep")
    rows = _sweep_grid(cfg, out)
    _sweep_curves(cfg, out)
    print(f"wrote {len(rows)} grid rows to {out / 'table.csv'}")
    return 0


def cmd_ingest(cfg: ExperimentConfig) -> int:
    spec = cfg.ingest
    for key in ("trips", "zones", "network", "window_periods"):
        if key not in spec:
            raise ConfigError(f"ingest.{key}", "required for ingestion")
    start = datetime.fromisoformat(spec["start"]) if "start" in spec else None
    end = datetime.fromisoformat(spec["end"]) if "end" in spec else None
    records = read_trips_csv(spec["trips"], start, end)
    zones = read_zone_file(spec["zones"])
    net = RoadNetwork.read_edge_list(spec["network"], spec.get("coords"))
    res = ingest_trips(records, zones, net, spec.get("clusters_per_zone", 1),
                       spec["window_periods"], scale=spec.get("scale", 1.0),
                       cost=cfg.c[0], seed=spec.get("seed", cfg.seed), fare=cfg.fare)
    out = _out_dir(cfg, "instance", "ingest")
    save_instance(res.instance, out)
    (out / "clusters.json").write_text(json.dumps(
        {"clusters": res.clusters, "skipped_zones": res.skipped_zones,
         "unassigned_trips": res.unassigned_trips}, indent=2))
    print(f"wrote {len(res.instance.types)} rider types to {out}")
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        if args.command == "gen":
            return cmd_gen(cfg)
        if args.command == "solve-fluid":
            return cmd_solve_fluid(cfg, args.lam)
        if args.command == "price":
            return cmd_price(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.pricing, args.log_events)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        return cmd_ingest(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
