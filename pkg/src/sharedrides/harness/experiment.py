"""Price-then-simulate pipeline shared by the CLI and the sweeps."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..demand import wtp_from_dict
from ..fluid import FluidInstance
from ..policy import DualTables
from ..pricing import PricingConfig, PricingResult, mm_optimize
from ..simkernel import RunMetrics, SUMMARY_FIELDS, run_simulation
from .config import ExperimentConfig
from .instances import gen_example1, gen_example2, instance_for_policy, load_instance


def build_instance(cfg: ExperimentConfig) -> FluidInstance:
    """Base instance described by ``cfg.instance`` with the first ``T`` and ``c``."""
    spec = dict(cfg.instance)
    common = dict(cost=cfg.c[0], T=cfg.T[0], fare=cfg.fare, enable_ratio=cfg.enable_ratio)
    if "path" in spec:
        return load_instance(spec["path"], **common)
    wtp = wtp_from_dict(cfg.wtp)
    rate = spec.get("total_rate", 0.1)
    if spec["example"] == 1:
        L = spec.get("L", 100)
        return gen_example1(L=L, l=spec.get("l", L), total_rate=rate, wtp=wtp, **common)
    return gen_example2(N=spec.get("N", 1), rows=spec.get("rows", 10),
                        cols=spec.get("cols", 10), edge_length=spec.get("edge_length", 10),
                        L=spec.get("L", 100), total_rate=rate, seed=spec.get("seed", 0),
                        wtp=wtp, **common)


def pricing_config(cfg: ExperimentConfig) -> PricingConfig:
    return PricingConfig(**cfg.pricing)


@dataclass
class PolicyRun:
    policy: str
    T: int
    cost: float
    instance: FluidInstance
    pricing: PricingResult
    metrics: RunMetrics | None

    def row(self) -> dict:
        row = {"policy": self.policy, "T": self.T, "c": self.cost,
               "fluid_profit": self.pricing.profit}
        for k, v in enumerate(self.pricing.lam):
            row[f"lam_{k}"] = float(v)
        if self.metrics is not None:
            for f in SUMMARY_FIELDS:
                row[f] = self.metrics.summary.get(f)
                row[f"{f}_se"] = self.metrics.se.get(f)
        return row


def run_policy(base: FluidInstance, policy: str, T: int, cost: float,
               pcfg: PricingConfig, periods: int | None, seed: int = 0,
               replications: int = 1, riders_per_minute: float | None = None,
               keep_log: bool = False) -> PolicyRun:
    """Price ``base`` for ``policy`` and, when ``periods`` is given, simulate it."""
    inst = instance_for_policy(base, policy, T=T, cost=cost)
    res = mm_optimize(inst, pcfg)
    metrics = None
    if periods:
        duals = DualTables.from_solution(res.solution, inst)
        kw = {} if riders_per_minute is None else {"riders_per_minute": riders_per_minute}
        metrics = run_simulation(inst, res.lam, duals, policy, periods, seed=seed,
                                 replications=replications, keep_log=keep_log, **kw)
    return PolicyRun(policy, inst.T, cost, inst, res, metrics)


def write_rows(rows: Sequence[dict], path: str | Path) -> None:
    keys: list = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else
                            repr(r[k]) if isinstance(r.get(k), float) else r[k])
                        for k in keys})
