"""Static pricing by minorization-maximization against the fluid cost.

Each iteration linearizes ``C`` at the current conversion vector and maximizes
revenue minus the linearized cost, which separates across rider types.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .demand import UniformWTP
from .fluid import FluidInstance, FluidSolution, cost_gradient, evaluate
from .lpcore import LpError

log = logging.getLogger(__name__)

ASCENT_TOL = 1e-9
RESTART_RTOL = 1e-3


class PricingError(RuntimeError):
    """Raised when an LP inside the MM loop fails; carries the trace so far."""

    def __init__(self, msg: str, trace: list):
        super().__init__(msg)
        self.trace = trace


@dataclass
class PricingConfig:
    """Settings for :func:`mm_optimize`.

    Attributes:
        initial: Starting conversion vector or scalar; ``None`` uses the solo
            optimum ``(1 - c) / 2`` clamped to ``[0, 1]``.
        tol: Stop once the profit gain of an iteration falls below this.
        max_iter: Iteration cap per start.
        restarts: Extra uniformly random starts; the best result is kept.
        seed: Seed for the restart draws.
        max_halvings: Step halvings tried when a full step fails to improve.
    """

    initial: float | Sequence[float] | None = None
    tol: float = 1e-6
    max_iter: int = 200
    restarts: int = 0
    seed: int = 0
    max_halvings: int = 30

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")
        if self.initial is not None:
            arr = np.asarray(self.initial, dtype=float)
            if np.any(arr < 0) or np.any(arr > 1):
                raise ValueError("initial conversion must lie in [0, 1]")


@dataclass
class PricingResult:
    lam: np.ndarray
    prices: np.ndarray
    profit: float
    trace: list = field(repr=False)
    solution: FluidSolution | None = field(default=None, repr=False)
    iterations: int = 0
    converged: bool = False
    restart_profits: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lam": [float(v) for v in self.lam],
            "prices": [float(v) for v in self.prices],
            "profit": float(self.profit),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "restart_profits": [float(v) for v in self.restart_profits],
        }


def initial_lam(inst: FluidInstance, cfg: PricingConfig) -> np.ndarray:
    if cfg.initial is None:
        return np.full(inst.n_types, min(1.0, max(0.0, (1.0 - inst.cost) / 2.0)))
    return np.broadcast_to(np.asarray(cfg.initial, dtype=float), (inst.n_types,)).copy()


def surrogate_argmax(inst: FluidInstance, lam_k, grad) -> np.ndarray:
    """Maximize ``sum_i Lambda_i lam_i fare_i(lam_i) - grad . lam`` over the box."""
    grad = np.asarray(grad, dtype=float)
    out = np.zeros(inst.n_types)
    for i, t in enumerate(inst.types):
        Lam = t.arrival_prob
        if Lam <= 0:
            continue
        scale = t.length if inst.fare == "per_mile" else 1.0
        wtp = t.wtp
        if isinstance(wtp, UniformWTP):
            a = Lam * scale
            lam = (a * wtp.high - grad[i]) / (2.0 * a * (wtp.high - wtp.low))
            out[i] = min(1.0, max(0.0, lam))
        else:
            out[i] = _golden_argmax(lambda x, i=i, Lam=Lam, g=grad[i]:
                                    Lam * _revenue_term(inst, i, x) - g * x)
    return out


def _revenue_term(inst: FluidInstance, i: int, lam: float) -> float:
    if lam <= 0:
        return 0.0
    return lam * inst.fare_of(i, lam)


def _golden_argmax(f) -> float:
    res = minimize_scalar(lambda x: -f(x), bounds=(0.0, 1.0), method="bounded",
                          options={"xatol": 1e-10})
    best = float(res.x)
    # the bounded search never evaluates the end points themselves
    for cand in (0.0, 1.0):
        if f(cand) > f(best):
            best = cand
    return best


def _single_start(inst: FluidInstance, lam0: np.ndarray, cfg: PricingConfig):
    trace = []
    lam = np.clip(lam0, 0.0, 1.0)
    try:
        profit, sol = evaluate(inst, lam)
    except LpError as exc:
        raise PricingError(f"fluid LP failed at the starting point: {exc}", trace) from exc
    trace.append((0, profit, lam.copy()))
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = cost_gradient(sol, inst)
        target = surrogate_argmax(inst, lam, grad)
        step = target - lam
        accepted = None
        for _ in range(cfg.max_halvings + 1):
            cand = np.clip(lam + step, 0.0, 1.0)
            if np.max(np.abs(cand - lam)) == 0.0:
                break
            try:
                cand_profit, cand_sol = evaluate(inst, cand)
            except LpError as exc:
                raise PricingError(f"fluid LP failed in iteration {it}: {exc}", trace) from exc
            if cand_profit >= profit - ASCENT_TOL:
                accepted = (cand, cand_profit, cand_sol)
                break
            step = step / 2.0
        if accepted is None:
            converged = True
            break
        cand, cand_profit, cand_sol = accepted
        gain = cand_profit - profit
        if cand_profit > profit:
            lam, profit, sol = cand, cand_profit, cand_sol
        trace.append((it, profit, lam.copy()))
        if gain < cfg.tol:
            converged = True
            break
    return lam, profit, sol, trace, it, converged


def mm_optimize(inst: FluidInstance, cfg: PricingConfig | None = None) -> PricingResult:
    """Run the MM loop from the configured start plus ``cfg.restarts`` random ones."""
    cfg = cfg or PricingConfig()
    rng = np.random.default_rng(cfg.seed)
    starts = [initial_lam(inst, cfg)]
    starts += [rng.uniform(0.0, 1.0, inst.n_types) for _ in range(cfg.restarts)]
    best = None
    profits = []
    for lam0 in starts:
        run = _single_start(inst, lam0, cfg)
        profits.append(run[1])
        if best is None or run[1] > best[1] + ASCENT_TOL:
            best = run
    if len(profits) > 1:
        spread = max(profits) - min(profits)
        if spread > RESTART_RTOL * max(abs(max(profits)), 1e-12):
            log.warning("MM restarts disagree: profits span %.6g (best %.6g)",
                        spread, max(profits))
    lam, profit, sol, trace, iters, converged = best
    prices = np.array([t.price(v) for t, v in zip(inst.types, lam)])
    return PricingResult(lam=lam, prices=prices, profit=profit, trace=trace,
                         solution=sol, iterations=iters, converged=converged,
                         restart_profits=profits)


def write_trace_csv(result: PricingResult, path: str | Path) -> None:
    n = len(result.lam)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "profit"] + [f"lam_{i}" for i in range(n)])
        for it, g, lam in result.trace:
            w.writerow([it, repr(float(g))] + [repr(float(v)) for v in lam])
