"""Fluid relaxation of the combined pre-trip/on-trip matching model.

For conversion probabilities ``lam`` the cost program is::

    min  sum_i sum_{u=0}^{l_i-1} c y_i^u + sum c l_{ij}^u x_{ij}^u
    s.t. sum_{(j,u): i in N+_{j,u}} x_{ij}^u + y_i^{-T} = Lambda_i lam_i        (demand)
         sum_{i in N+_{j,u}} x_{ij}^u + y_j^u - y_j^{u-1} = 0   -T < u < l_j   (flow)
         Lambda_i lam_i y_j^u - (1 - sum_{k in N+_{j,u}} Lambda_k lam_k) x_{ij}^u >= 0
                                                                              (ratio)

Waiting states (``u < 0``) carry no cost. Duals follow :mod:`lpcore`'s
convention (derivative of the optimum in the right-hand side), so ratio duals
are nonnegative.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from .lpcore import LinearProgram, LpError, LpSolution, solve_lp
from .netgraph import CompatTable, RiderType, RoadNetwork, build_compat_table

FARE_CONVENTIONS = ("per_mile", "per_trip")


@dataclass
class FluidInstance:
    """Network, rider types and the operating parameters of one model.

    ``enable_pre_trip=False`` forces ``T = 0``; ``enable_on_trip=False`` empties
    the compatible sets of on-trip states.
    """

    network: RoadNetwork
    types: Sequence[RiderType]
    cost: float
    T: int = 0
    enable_pre_trip: bool = True
    enable_on_trip: bool = True
    enable_ratio: bool = True
    fare: str = "per_mile"
    lp_method: str = "auto"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.types = tuple(self.types)
        if not self.types:
            raise ValueError("instance needs at least one rider type")
        if not self.cost > 0:
            raise ValueError("per-distance cost must be positive")
        if self.T < 0:
            raise ValueError("waiting window T must be nonnegative")
        if not self.enable_pre_trip:
            self.T = 0
        self.T = int(self.T)
        if self.fare not in FARE_CONVENTIONS:
            raise ValueError(f"fare convention must be one of {FARE_CONVENTIONS}")
        if sum(t.arrival_prob for t in self.types) > 1.0 + 1e-12:
            raise ValueError("arrival probabilities sum to more than 1")

    @property
    def n_types(self) -> int:
        return len(self.types)

    @property
    def arrival(self) -> np.ndarray:
        return np.array([t.arrival_prob for t in self.types])

    @property
    def lengths(self) -> np.ndarray:
        return np.array([t.length for t in self.types])

    @cached_property
    def compat(self) -> CompatTable:
        return build_compat_table(self.network, self.types, self.T,
                                  on_trip=self.enable_on_trip)

    @cached_property
    def structure(self) -> "_CbStructure":
        return _CbStructure(self)

    def price(self, i: int, lam: float) -> float:
        return self.types[i].price(lam)

    def fare_of(self, i: int, lam: float) -> float:
        """Revenue collected from one converted type-``i`` rider."""
        p = float(self.types[i].price(lam))
        return p * self.types[i].length if self.fare == "per_mile" else p

    def revenue(self, lam) -> float:
        lam = np.asarray(lam, dtype=float)
        total = 0.0
        for i, t in enumerate(self.types):
            if t.arrival_prob > 0 and lam[i] > 0:
                total += t.arrival_prob * lam[i] * self.fare_of(i, lam[i])
        return float(total)


class _CbStructure:
    """Index maps for the variables and rows of ``CB(lam)`` (independent of lam)."""

    def __init__(self, inst: FluidInstance):
        table = inst.compat
        T = inst.T
        N = inst.n_types
        ell = inst.lengths
        self.T = T
        # y_i^u for -T <= u <= l_i - 1
        self.y_offset = np.concatenate([[0], np.cumsum(ell + T)])
        self.n_y = int(self.y_offset[-1])
        y_type = np.repeat(np.arange(N), ell + T)
        y_clock = np.concatenate([np.arange(-T, l) for l in ell])
        self.y_type, self.y_clock = y_type, y_clock
        # flow-balance rows for -T < u <= l_j - 1
        flow_j, flow_u = [], []
        for j in range(N):
            for u in range(-T + 1, int(ell[j])):
                flow_j.append(j)
                flow_u.append(u)
        self.flow_j = np.array(flow_j, dtype=np.int64)
        self.flow_u = np.array(flow_u, dtype=np.int64)
        self.n_flow = len(flow_j)
        self.flow_index = {(j, u): k for k, (j, u) in enumerate(zip(flow_j, flow_u))}
        # match variables x_{ij}^u
        xi, xj, xu, xstate, xlen = [], [], [], [], []
        for k, (j, u) in enumerate(zip(flow_j, flow_u)):
            for i in table.compatible(j, u):
                xi.append(i)
                xj.append(j)
                xu.append(u)
                xstate.append(k)
                xlen.append(table.shared_length(i, j, u))
        self.x_i = np.array(xi, dtype=np.int64)
        self.x_j = np.array(xj, dtype=np.int64)
        self.x_u = np.array(xu, dtype=np.int64)
        self.x_state = np.array(xstate, dtype=np.int64)
        self.x_len = np.array(xlen, dtype=float)
        self.n_x = len(xi)
        self.x_index = {(int(a), int(b), int(c)): k for k, (a, b, c)
                        in enumerate(zip(xi, xj, xu))}
        self.ratio = inst.enable_ratio
        self.n_ratio = self.n_x if inst.enable_ratio else 0
        # y column of state (j, u) and of its predecessor (j, u - 1)
        self.flow_ycol = self.y_offset[self.flow_j] + self.flow_u + T
        self.flow_yprev = self.flow_ycol - 1
        self.x_ycol = self.flow_ycol[self.x_state] if self.n_x else np.zeros(0, np.int64)
        c = inst.cost
        obj_y = np.where(y_clock >= 0, c, 0.0)
        self.objective = np.concatenate([obj_y, c * self.x_len])
        self.n_vars = self.n_y + self.n_x
        self.n_rows = N + self.n_flow + self.n_ratio

    def y_col(self, i: int, u: int) -> int:
        return int(self.y_offset[i] + u + self.T)

    def build(self, inst: FluidInstance, lam: np.ndarray) -> LinearProgram:
        N = inst.n_types
        rate = inst.arrival * lam
        ny = self.n_y
        rows, cols, vals = [], [], []
        # demand rows
        for i in range(N):
            rows.append(i)
            cols.append(self.y_col(i, -self.T))
            vals.append(1.0)
        rows.extend(self.x_i)
        cols.extend(ny + np.arange(self.n_x))
        vals.extend(np.ones(self.n_x))
        # flow rows
        r0 = N
        rows.extend(r0 + np.arange(self.n_flow))
        cols.extend(self.flow_ycol)
        vals.extend(np.ones(self.n_flow))
        rows.extend(r0 + np.arange(self.n_flow))
        cols.extend(self.flow_yprev)
        vals.extend(-np.ones(self.n_flow))
        rows.extend(r0 + self.x_state)
        cols.extend(ny + np.arange(self.n_x))
        vals.extend(np.ones(self.n_x))
        senses = ["="] * (N + self.n_flow)
        if self.ratio and self.n_x:
            r1 = N + self.n_flow
            compat_rate = np.zeros(self.n_flow)
            np.add.at(compat_rate, self.x_state, rate[self.x_i])
            rr = r1 + np.arange(self.n_x)
            rows.extend(rr)
            cols.extend(self.x_ycol)
            vals.extend(rate[self.x_i])
            rows.extend(rr)
            cols.extend(ny + np.arange(self.n_x))
            vals.extend(-(1.0 - compat_rate[self.x_state]))
            senses += [">="] * self.n_x
        A = sparse.coo_matrix((np.asarray(vals, float),
                               (np.asarray(rows, np.int64), np.asarray(cols, np.int64))),
                              shape=(self.n_rows, self.n_vars)).tocsr()
        b = np.concatenate([rate, np.zeros(self.n_flow + self.n_ratio)])
        return LinearProgram(self.objective.copy(), A, senses, b)

    def var_names(self) -> list[str]:
        names = [f"y[{i},{u}]" for i, u in zip(self.y_type, self.y_clock)]
        names += [f"x[{i},{j},{u}]" for i, j, u in zip(self.x_i, self.x_j, self.x_u)]
        return names

    def row_names(self, n_types: int) -> list[str]:
        names = [f"demand[{i}]" for i in range(n_types)]
        names += [f"flow[{j},{u}]" for j, u in zip(self.flow_j, self.flow_u)]
        if self.ratio:
            names += [f"ratio[{i},{j},{u}]" for i, j, u in zip(self.x_i, self.x_j, self.x_u)]
        return names


@dataclass
class FluidSolution:
    """Optimal flows and duals of ``CB(lam)``."""

    lam: np.ndarray
    cost: float
    y: np.ndarray
    x: np.ndarray
    gamma: np.ndarray
    xi: np.ndarray          # one entry per flow row (see structure.flow_index)
    eta: np.ndarray         # one entry per match variable (empty when ratio is off)
    structure: _CbStructure = field(repr=False)
    lp: LpSolution = field(repr=False)

    def y_of(self, i: int, u: int) -> float:
        return float(self.y[self.structure.y_col(i, u)])

    def x_of(self, i: int, j: int, u: int) -> float:
        k = self.structure.x_index.get((i, j, u))
        return 0.0 if k is None else float(self.x[k])

    def xi_of(self, j: int, u: int) -> float:
        """Flow-balance dual of state ``(j, u)``; ``u = -T`` maps to ``gamma_j``."""
        if u == -self.structure.T:
            return float(self.gamma[j])
        return float(self.xi[self.structure.flow_index[(j, u)]])

    def eta_of(self, i: int, j: int, u: int) -> float:
        if not self.structure.ratio:
            return 0.0
        return float(self.eta[self.structure.x_index[(i, j, u)]])


def build_cb(inst: FluidInstance, lam) -> LinearProgram:
    """Assemble ``CB(lam)`` as a :class:`LinearProgram`."""
    lam = _check_lam(inst, lam)
    if inst.compat is None:
        raise ValueError("instance has no compatibility table")
    lp = inst.structure.build(inst, lam)
    return lp


def solve_cb(inst: FluidInstance, lam, method: str | None = None) -> FluidSolution:
    """Solve ``CB(lam)``; raises :class:`LpError` unless the program is optimal."""
    lam = _check_lam(inst, lam)
    st = inst.structure
    lp = st.build(inst, lam)
    sol = solve_lp(lp, method or inst.lp_method)
    if not sol.optimal:
        raise LpError(f"CB(lambda) is {sol.status}")
    N = inst.n_types
    duals = sol.duals
    return FluidSolution(
        lam=lam, cost=float(sol.objective),
        y=sol.x[:st.n_y], x=sol.x[st.n_y:],
        gamma=duals[:N].copy(), xi=duals[N:N + st.n_flow].copy(),
        eta=duals[N + st.n_flow:].copy(), structure=st, lp=sol)


def cost_gradient(sol: FluidSolution, inst: FluidInstance) -> np.ndarray:
    """Envelope-theorem gradient (or sub/supergradient) of ``C`` at ``sol.lam``."""
    if sol.gamma is None or sol.xi is None:
        raise ValueError("solution carries no duals")
    st = sol.structure
    Lam = inst.arrival
    grad = sol.gamma.copy()
    if st.ratio and st.n_x:
        if sol.eta is None or len(sol.eta) != st.n_x:
            raise ValueError("solution is missing ratio duals")
        weighted = np.zeros(st.n_flow)
        np.add.at(weighted, st.x_state, sol.x * sol.eta)
        per_var = sol.y[st.x_ycol] * sol.eta + weighted[st.x_state]
        np.subtract.at(grad, st.x_i, per_var)
    return Lam * grad


def fluid_profit(inst: FluidInstance, lam) -> float:
    """Revenue rate minus ``C(lam)``."""
    return evaluate(inst, lam)[0]


def evaluate(inst: FluidInstance, lam) -> tuple[float, FluidSolution]:
    sol = solve_cb(inst, lam)
    return inst.revenue(sol.lam) - sol.cost, sol


def dump_solution_csv(sol: FluidSolution, inst: FluidInstance, path: str | Path) -> None:
    """Write ``name,value,dual`` rows: variables carry values, constraints duals."""
    st = sol.structure
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value", "dual"])
        for name, v in zip(st.var_names(), np.concatenate([sol.y, sol.x])):
            w.writerow([name, repr(float(v)), ""])
        for name, d in zip(st.row_names(inst.n_types), sol.lp.duals):
            w.writerow([name, "", repr(float(d))])


def _check_lam(inst: FluidInstance, lam) -> np.ndarray:
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (inst.n_types,)).copy()
    if np.any(lam < -1e-12) or np.any(lam > 1 + 1e-12):
        raise ValueError("conversion probabilities must lie in [0, 1]")
    return np.clip(lam, 0.0, 1.0)
