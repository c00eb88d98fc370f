"""Synthetic instances and instance directories on disk.

An instance directory holds ``network.txt`` (edge list), optional
``coords.txt``, ``types.txt`` (``id origin dest lambda``) and
``instance.json`` with the remaining parameters.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

import numpy as np

from ..demand import UniformWTP, WTPModel, wtp_from_dict, wtp_to_dict
from ..fluid import FluidInstance
from ..netgraph import (RoadNetwork, grid_od_pairs_at_distance, make_types,
                        read_types_file, write_types_file)


def gen_example1(L: int = 100, l: int = 100, total_rate: float = 0.1, cost: float = 0.7,
                 T: int = 0, wtp: WTPModel | None = None, **kwargs) -> FluidInstance:
    """Line ``0..L`` with a long type ``0 -> L`` and a short type ``L - l -> L``.

    The two types share the arrival probability equally and the demand
    heterogeneity ``1 - l / L`` is stored in ``meta["delta"]``.
    """
    if not 1 <= l <= L:
        raise ValueError(f"short trip length l={l} must lie in [1, L={L}]")
    net = RoadNetwork.line(L)
    types = make_types(net, [(0, L), (L - l, L)], [total_rate / 2] * 2, wtp)
    meta = {"example": 1, "L": L, "l": l, "delta": 1.0 - l / L, "total_rate": total_rate}
    return FluidInstance(net, types, cost, T=T, meta=meta, **kwargs)


def example2_pairs(rows: int = 10, cols: int = 10, edge_length: int = 10,
                   L: int = 100) -> tuple[RoadNetwork, list[tuple[int, int]]]:
    net = RoadNetwork.grid(rows, cols, edge_length)
    return net, grid_od_pairs_at_distance(net, range(rows * cols), L)


def gen_example2(N: int, rows: int = 10, cols: int = 10, edge_length: int = 10,
                 L: int = 100, total_rate: float = 0.1, cost: float = 0.7,
                 seed: int = 0, T: int = 0, wtp: WTPModel | None = None,
                 **kwargs) -> FluidInstance:
    """``N`` distinct intersection OD pairs at grid distance exactly ``L``.

    Pairs are drawn uniformly without replacement; rates are split equally.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    net, pairs = example2_pairs(rows, cols, edge_length, L)
    if N > len(pairs):
        raise ValueError(f"only {len(pairs)} OD pairs at distance {L}; N={N} too large")
    rng = np.random.default_rng(seed)
    pick = sorted(rng.choice(len(pairs), size=N, replace=False).tolist())
    od = [pairs[k] for k in pick]
    types = make_types(net, od, [total_rate / N] * N, wtp)
    meta = {"example": 2, "N": N, "rows": rows, "cols": cols, "edge_length": edge_length,
            "L": L, "seed": seed, "total_rate": total_rate}
    return FluidInstance(net, types, cost, T=T, meta=meta, **kwargs)


def random_grid_instance(seed: int, max_types: int = 5, max_length: int = 40,
                         max_T: int = 10, min_length: int = 5,
                         total_rate: float | None = None, cost: float | None = None,
                         **kwargs) -> FluidInstance:
    """Small random grid instance for property and bound checks.

    Grid size, block length, OD pairs (trip length in ``[min_length,
    max_length]``), rates, cost and waiting window are all drawn from ``seed``.
    """
    rng = np.random.default_rng(seed)
    rows, cols = (int(x) for x in rng.integers(3, 7, size=2))
    edge = int(rng.integers(2, 7))
    net = RoadNetwork.grid(rows, cols, edge)
    N = int(rng.integers(1, max_types + 1))
    od = []
    while len(od) < N:
        a, b = (int(x) for x in rng.integers(0, net.n_nodes, size=2))
        d = net.distances_from(a)[b]
        if min_length <= d <= max_length and (a, b) not in od:
            od.append((a, b))
    rate = float(rng.uniform(0.05, 0.25)) if total_rate is None else total_rate
    split = rng.dirichlet(np.ones(N)) * rate
    types = make_types(net, od, split.tolist())
    c = float(rng.uniform(0.5, 1.1)) if cost is None else cost
    T = int(rng.integers(0, max_T + 1))
    meta = {"random_seed": seed}
    return FluidInstance(net, types, c, T=T, meta=meta, **kwargs)


def instance_for_policy(inst: FluidInstance, policy: str, T: int | None = None,
                        cost: float | None = None) -> FluidInstance:
    """Copy of ``inst`` with the model flags that match ``policy``.

    ``pre_trip`` keeps the waiting window and drops on-trip states, ``on_trip``
    uses ``T = 0``, ``combined`` enables both.
    """
    T = inst.T if T is None else T
    cost = inst.cost if cost is None else cost
    if policy == "pre_trip":
        flags = dict(enable_pre_trip=True, enable_on_trip=False, T=T)
    elif policy == "on_trip":
        flags = dict(enable_pre_trip=False, enable_on_trip=True, T=0)
    elif policy == "combined":
        flags = dict(enable_pre_trip=True, enable_on_trip=True, T=T)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return dataclasses.replace(inst, cost=cost, meta=dict(inst.meta), **flags)


def save_instance(inst: FluidInstance, directory: str | Path) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    inst.network.write_edge_list(out / "network.txt")
    if inst.network.coords is not None:
        lines = [f"{inst.network.label(k)} {float(x)!r} {float(y)!r}"
                 for k, (x, y) in enumerate(inst.network.coords)]
        (out / "coords.txt").write_text("\n".join(lines) + "\n")
    write_types_file(out / "types.txt", inst.types, inst.network)
    wtp = inst.types[0].wtp
    spec = {
        "cost": inst.cost, "T": inst.T, "enable_pre_trip": inst.enable_pre_trip,
        "enable_on_trip": inst.enable_on_trip, "enable_ratio": inst.enable_ratio,
        "fare": inst.fare, "wtp": wtp_to_dict(wtp), "meta": inst.meta,
    }
    (out / "instance.json").write_text(json.dumps(spec, indent=2, sort_keys=True))
    return out


def load_instance(directory: str | Path, **overrides) -> FluidInstance:
    src = Path(directory)
    spec = json.loads((src / "instance.json").read_text())
    coords = src / "coords.txt"
    net = RoadNetwork.read_edge_list(src / "network.txt",
                                     coords if coords.exists() else None)
    wtp = wtp_from_dict(spec.get("wtp")) if spec.get("wtp") else UniformWTP()
    types = read_types_file(src / "types.txt", net, wtp)
    kwargs = dict(cost=spec["cost"], T=spec.get("T", 0),
                  enable_pre_trip=spec.get("enable_pre_trip", True),
                  enable_on_trip=spec.get("enable_on_trip", True),
                  enable_ratio=spec.get("enable_ratio", True),
                  fare=spec.get("fare", "per_mile"), meta=spec.get("meta", {}))
    kwargs.update(overrides)
    return FluidInstance(net, types, **kwargs)
