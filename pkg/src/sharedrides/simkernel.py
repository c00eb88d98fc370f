"""Discrete-time simulation of the shared-ride platform under a fixed policy.

Each period runs (1) at most one arrival with its conversion draw, (2) the
matching decision, then (3) clock advance and trip completions. A rider that
converts in period ``t0`` has clock ``t - t0 - T`` in period ``t``; clocks at
or below zero mean waiting at the origin, positive clocks count distance along
the canonical path. Solo riders leave after the period in which their clock
is ``l - 1``.

Costs are charged when a vehicle's route is settled: ``c l`` at solo
completion, ``c (max(v, 0) + l_shared)`` when a pair is formed, and the
distance covered so far for riders still active at the horizon. Periods in
which nothing can happen (no arrival, no completion, no feasible pair) are
skipped; the result is identical to stepping through every period.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fluid import FluidInstance
from .netgraph import SharedRoute, shared_route
from .policy import DualTables, combined_decide, on_trip_decide

POLICIES = ("pre_trip", "on_trip", "combined")
DEFAULT_RIDERS_PER_MINUTE = 28.25
DEFAULT_BATCHES = 20
CHUNK = 1 << 16
DELTA_BINS = ("low", "medium", "high")


@dataclass
class Rider:
    id: int
    type: int
    arrival: int


@dataclass
class SystemState:
    """Active solo riders keyed by id, and the index of the next period."""

    t: int = 0
    riders: dict = field(default_factory=dict)

    def clock(self, rider: Rider, T: int, t: int | None = None) -> int:
        return (self.t if t is None else t) - rider.arrival - T


# -- event log and metric accumulation ----------------------------------------

LOG_FIELDS = ("period", "kind", "rider", "type", "clock", "other_rider", "other_type",
              "other_clock", "converted", "price", "fare", "shared_length", "distance",
              "overlap", "onboard", "other_onboard")


@dataclass
class EventLog:
    """Records as tuples; the first two entries are ``(period, kind)``.

    Kinds and fields:
        arrival: type, converted, price, fare
        match: rider, type, clock, other_rider, other_type, other_clock,
            shared_length, distance, overlap, onboard, other_onboard
        solo: rider, type, distance
        horizon: rider, type, clock, distance
    """

    periods: int
    records: list = field(default_factory=list)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_FIELDS)
            for rec in self.records:
                row = dict.fromkeys(LOG_FIELDS, "")
                row.update(_record_fields(rec))
                w.writerow([row[k] for k in LOG_FIELDS])


def _record_fields(rec) -> dict:
    kind = rec[1]
    if kind == "arrival":
        keys = ("period", "kind", "type", "converted", "price", "fare")
    elif kind == "match":
        keys = ("period", "kind", "rider", "type", "clock", "other_rider", "other_type",
                "other_clock", "shared_length", "distance", "overlap", "onboard",
                "other_onboard")
    elif kind == "solo":
        keys = ("period", "kind", "rider", "type", "distance")
    else:
        keys = ("period", "kind", "rider", "type", "clock", "distance")
    return dict(zip(keys, rec))


def delta_bin(delta: float) -> str:
    if delta < 1 / 3:
        return "low"
    if delta < 2 / 3:
        return "medium"
    return "high"


class _Tally:
    """Running sums from which every metric is derived; fed one record at a time."""

    def __init__(self, inst: FluidInstance, periods: int, batches: int):
        self.lengths = [t.length for t in inst.types]
        self.periods = periods
        self.batches = max(1, min(batches, periods))
        self.arrivals = 0
        self.price_sum = 0.0
        self.conversions = 0
        self.payment_sum = 0.0
        self.revenue = 0.0
        self.distance = 0
        self.matches = 0
        self.on_trip_matches = 0
        self.solo = 0
        self.horizon = 0
        self.solo_equivalent = 0
        self.matched_length = 0
        self.detour = 0
        self.hist = {(ph, b): 0 for ph in ("pre_trip", "on_trip") for b in DELTA_BINS}
        self.batch_revenue = [0.0] * self.batches
        self.batch_distance = [0] * self.batches

    def _batch(self, t: int) -> int:
        return t * self.batches // self.periods

    def feed(self, rec) -> None:
        t, kind = rec[0], rec[1]
        b = self._batch(t)
        if kind == "arrival":
            _, _, typ, converted, price, fare = rec
            self.arrivals += 1
            self.price_sum += price
            if converted:
                self.conversions += 1
                self.payment_sum += price
                self.revenue += fare
                self.batch_revenue[b] += fare
        elif kind == "match":
            (_, _, _, ti, u, _, tj, v, shared, dist, overlap, on_i, on_j) = rec
            self.matches += 1
            if v >= 1:
                self.on_trip_matches += 1
            self.distance += dist
            self.batch_distance[b] += dist
            li, lj = self.lengths[ti], self.lengths[tj]
            self.solo_equivalent += li + lj
            self.matched_length += li + lj
            self.detour += (on_i - li) + (on_j - lj)
            delta = 1.0 - overlap / dist
            self.hist[("on_trip" if v >= 1 else "pre_trip", delta_bin(delta))] += 1
        elif kind == "solo":
            _, _, _, typ, dist = rec
            self.solo += 1
            self.distance += dist
            self.batch_distance[b] += dist
            self.solo_equivalent += dist
        elif kind == "horizon":
            _, _, _, typ, clock, dist = rec
            self.horizon += 1
            self.distance += dist
            self.batch_distance[b] += dist
            self.solo_equivalent += dist
        else:
            raise ValueError(f"unknown event kind {kind!r}")


@dataclass
class ReplicationMetrics:
    """Metrics of a single replication; absent ratios are ``None``."""

    periods: int
    arrivals: int
    conversions: int
    matches: int
    on_trip_matches: int
    solo_completions: int
    active_at_horizon: int
    revenue: float
    total_distance: int
    cost: float
    profit: float
    profit_per_period: float
    profit_per_minute: float
    avg_quoted_price: float | None
    avg_payment: float | None
    throughput_per_minute: float
    match_rate: float | None
    on_trip_match_portion: float | None
    cost_efficiency: float | None
    avg_detour_rate: float | None
    delta_hist: dict
    batch_profit_per_period: list = field(repr=False, default_factory=list)


SUMMARY_FIELDS = ("profit_per_period", "profit_per_minute", "avg_quoted_price",
                  "avg_payment", "throughput_per_minute", "match_rate",
                  "on_trip_match_portion", "cost_efficiency", "avg_detour_rate")
COUNT_FIELDS = ("arrivals", "conversions", "matches", "on_trip_matches",
                "solo_completions", "active_at_horizon")


def _ratio(a, b):
    return a / b if b else None


def _metrics_from_tally(tally: _Tally, inst: FluidInstance,
                        minutes_per_period: float) -> ReplicationMetrics:
    c = inst.cost
    P = tally.periods
    cost = c * tally.distance
    profit = tally.revenue - cost
    bounds = [k * P // tally.batches for k in range(tally.batches + 1)]
    batch = [(tally.batch_revenue[k] - c * tally.batch_distance[k]) / (bounds[k + 1] - bounds[k])
             for k in range(tally.batches)]
    denom = c * tally.solo_equivalent
    return ReplicationMetrics(
        periods=P, arrivals=tally.arrivals, conversions=tally.conversions,
        matches=tally.matches, on_trip_matches=tally.on_trip_matches,
        solo_completions=tally.solo, active_at_horizon=tally.horizon,
        revenue=tally.revenue, total_distance=tally.distance, cost=cost, profit=profit,
        profit_per_period=profit / P,
        profit_per_minute=profit / P / minutes_per_period,
        avg_quoted_price=_ratio(tally.price_sum, tally.arrivals),
        avg_payment=_ratio(tally.payment_sum, tally.conversions),
        throughput_per_minute=tally.conversions / (P * minutes_per_period),
        match_rate=_ratio(2 * tally.matches, tally.conversions),
        on_trip_match_portion=_ratio(tally.on_trip_matches, tally.matches),
        cost_efficiency=None if not denom else 1.0 - cost / denom,
        avg_detour_rate=_ratio(tally.detour, tally.matched_length),
        delta_hist={f"{ph}_{b}": n for (ph, b), n in tally.hist.items()},
        batch_profit_per_period=batch)


@dataclass
class RunMetrics:
    """Summary over replications plus one row per replication.

    ``se`` holds standard errors across replications when there are at least
    two, otherwise a batch-means error for the profit only.
    """

    policy: str
    seed: int
    replications: list
    summary: dict
    se: dict
    logs: list = field(default_factory=list, repr=False)

    @property
    def profit_per_period(self) -> float:
        return self.summary["profit_per_period"]

    @property
    def profit_se(self) -> float:
        return self.se["profit_per_period"]

    def to_rows(self) -> list[dict]:
        rows = []
        for k, rep in enumerate(self.replications):
            row = {"row": str(k)}
            row.update({f: getattr(rep, f) for f in COUNT_FIELDS + SUMMARY_FIELDS})
            row.update({f"{f}_se": "" for f in SUMMARY_FIELDS})
            row.update(rep.delta_hist)
            rows.append(row)
        row = {"row": "summary"}
        row.update({f: self.summary.get(f) for f in COUNT_FIELDS + SUMMARY_FIELDS})
        row.update({f"{f}_se": self.se.get(f) for f in SUMMARY_FIELDS})
        row.update(self.summary["delta_hist"])
        rows.append(row)
        return rows

    def to_csv(self, path: str | Path) -> None:
        rows = self.to_rows()
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for row in rows:
                w.writerow({k: _fmt(v) for k, v in row.items()})

    def to_dict(self) -> dict:
        return {"policy": self.policy, "seed": self.seed, "summary": self.summary,
                "se": self.se,
                "replications": [_rep_dict(r) for r in self.replications]}

    def to_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def _rep_dict(rep: ReplicationMetrics) -> dict:
    d = asdict(rep)
    d.pop("batch_profit_per_period")
    return d


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _summarize(reps: list[ReplicationMetrics]):
    R = len(reps)
    summary, se = {}, {}
    for f in COUNT_FIELDS:
        summary[f] = sum(getattr(r, f) for r in reps) / R
    for f in SUMMARY_FIELDS:
        vals = [getattr(r, f) for r in reps if getattr(r, f) is not None]
        summary[f] = float(np.mean(vals)) if vals else None
        if R >= 2:
            se[f] = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) >= 2 else None
        else:
            se[f] = None
    if R == 1:
        batch = np.array(reps[0].batch_profit_per_period)
        if len(batch) >= 2:
            se["profit_per_period"] = float(np.std(batch, ddof=1) / math.sqrt(len(batch)))
            scale = reps[0].profit_per_minute / reps[0].profit_per_period \
                if reps[0].profit_per_period else None
            se["profit_per_minute"] = float(se["profit_per_period"] * scale) if scale else None
    hist = {}
    for r in reps:
        for k, v in r.delta_hist.items():
            hist[k] = hist.get(k, 0) + v
    summary["delta_hist"] = {k: v / R for k, v in hist.items()}
    return summary, se


# -- the simulator ----------------------------------------------------------------

class Simulator:
    """One replication of the platform under a fixed pricing and matching policy.

    Args:
        inst: Instance whose compatibility table and waiting window are used.
        lam: Conversion probabilities (the static pricing policy).
        duals: Dual tables driving the matching rule; ``None`` dispatches
            every rider solo.
        policy: ``"pre_trip"``, ``"on_trip"`` or ``"combined"``.
        periods: Horizon length.
        rng: Source of the arrival and conversion draws.
        keep_log: Keep every event record (needed for replay and CSV dumps).
    """

    def __init__(self, inst: FluidInstance, lam, duals: DualTables | None, policy: str,
                 periods: int, rng: np.random.Generator, keep_log: bool = False,
                 batches: int = DEFAULT_BATCHES, check_invariants: bool = True):
        if policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if periods < 1:
            raise ValueError("periods must be at least 1")
        if policy == "on_trip" and inst.T != 0:
            raise ValueError("the on-trip rule needs an instance with T = 0")
        if duals is not None and duals.compat is not inst.compat:
            raise ValueError("dual tables belong to a different instance")
        self.inst = inst
        self.T = inst.T
        self.lam = np.asarray(lam, dtype=float)
        self.duals = duals
        self.policy = policy
        self.allow_on_trip = policy != "pre_trip" and inst.enable_on_trip
        self.periods = periods
        self.rng = rng
        self.state = SystemState()
        self.log = EventLog(periods) if keep_log else None
        self.tally = _Tally(inst, periods, batches)
        self.check = check_invariants
        self._exits: list = []
        self._next_id = 0
        self._routes: dict = {}
        n = inst.n_types
        rate = inst.arrival
        self._cum = np.cumsum(np.concatenate([rate * self.lam, rate * (1 - self.lam)]))
        self._prices = [_finite(float(t.price(l))) for t, l in zip(inst.types, self.lam)]
        self._fares = [float(inst.fare_of(i, self.lam[i])) if self.lam[i] > 0 else 0.0
                       for i in range(n)]

    # records ---------------------------------------------------------------
    def _emit(self, rec) -> None:
        self.tally.feed(rec)
        if self.log is not None:
            self.log.records.append(rec)

    def _route(self, i: int, j: int, v: int) -> SharedRoute:
        key = (i, j, v)
        r = self._routes.get(key)
        if r is None:
            r = shared_route(self.inst.compat.geo, i, j, v)
            self._routes[key] = r
        return r

    # period mechanics ------------------------------------------------------
    def draw(self, size: int) -> np.ndarray:
        """Outcome codes: ``-1`` none, ``j`` converted type-``j``, ``N + j`` declined."""
        r = self.rng.random(size)
        idx = np.searchsorted(self._cum, r, side="right")
        return np.where(idx < 2 * self.inst.n_types, idx, -1)

    def clocks(self, t: int) -> list[tuple[int, int, int]]:
        """``(clock, type, id)`` of every active rider in period ``t``, by clock."""
        T = self.T
        return sorted((t - r.arrival - T, r.type, r.id) for r in self.state.riders.values())

    def match_possible(self, t: int) -> bool:
        cl = self.clocks(t)
        if len(cl) < 2 or cl[0][0] > 0:
            return False
        if self.allow_on_trip:
            return cl[-1][0] >= 0
        return any(c == 0 for c, _, _ in cl[1:])

    def _next_match_period(self, t: int) -> float:
        if self.policy == "on_trip" or self.duals is None:
            return math.inf
        if self.match_possible(t):
            return t
        waiting = [c for c, _, _ in self.clocks(t) if c <= 0]
        if len(waiting) >= 2:
            return t - max(waiting)
        return math.inf

    def advance_period(self, outcome: int) -> None:
        """Run the current period with arrival outcome ``outcome`` (see :meth:`draw`)."""
        t = self.state.t
        N = self.inst.n_types
        new_id = None
        if outcome >= 0:
            typ = outcome % N
            converted = outcome < N
            self._emit((t, "arrival", typ, converted, self._prices[typ],
                        self._fares[typ] if converted else 0.0))
            if converted:
                new_id = self._add_rider(typ, t)
        if self.check:
            cl = [c for c, _, _ in self.clocks(t)]
            assert len(set(cl)) == len(cl), "active riders share a clock"
        if self.duals is None:
            pass
        elif self.policy == "on_trip":
            if new_id is not None:
                self._on_trip_step(t, new_id)
        elif self.match_possible(t):
            self._combined_step(t)
        self._complete(t)
        self.state.t = t + 1

    def _add_rider(self, typ: int, t: int) -> int:
        rid = self._next_id
        self._next_id += 1
        self.state.riders[rid] = Rider(rid, typ, t)
        exit_period = t + self.T + self.inst.types[typ].length - 1
        heapq.heappush(self._exits, (exit_period, rid))
        return rid

    def _on_trip_step(self, t: int, new_id: int) -> None:
        new = self.state.riders[new_id]
        others = {}
        for c, typ, rid in self.clocks(t):
            if rid != new_id and c >= 1:
                others[(typ, c)] = rid
        if not others:
            return
        dec = on_trip_decide(self.duals, others.keys(), new.type)
        if dec.target is None:
            return
        self._match(t, new_id, others[dec.target])

    def _combined_step(self, t: int) -> None:
        cl = self.clocks(t)
        states = [(typ, c) for c, typ, _ in cl]
        if not self.allow_on_trip:
            keep = [k for k, (typ, c) in enumerate(states) if c <= 0]
            cl = [cl[k] for k in keep]
            states = [states[k] for k in keep]
        dec = combined_decide(self.duals, states)
        for p in dec.pairs:
            self._match(t, cl[p.first][2], cl[p.second][2])

    def _match(self, t: int, waiting_id: int, host_id: int) -> None:
        riders = self.state.riders
        a, b = riders.pop(waiting_id), riders.pop(host_id)
        u = t - a.arrival - self.T
        v = t - b.arrival - self.T
        assert u < v
        route = self._route(a.type, b.type, v)
        dist = max(v, 0) + route.length
        self._emit((t, "match", a.id, a.type, u, b.id, b.type, v, route.length, dist,
                    route.overlap, route.onboard_new, route.onboard_existing))

    def _complete(self, t: int) -> None:
        riders = self.state.riders
        while self._exits and self._exits[0][0] <= t:
            _, rid = heapq.heappop(self._exits)
            r = riders.pop(rid, None)
            if r is not None:
                self._emit((t, "solo", r.id, r.type, self.inst.types[r.type].length))

    def _next_exit(self) -> float:
        riders = self.state.riders
        while self._exits and self._exits[0][1] not in riders:
            heapq.heappop(self._exits)
        return self._exits[0][0] if self._exits else math.inf

    def finish(self) -> None:
        """Close the horizon: active riders report the distance covered so far."""
        P = self.periods
        last = P - 1
        for rid in sorted(self.state.riders):
            r = self.state.riders[rid]
            clock = last - r.arrival - self.T
            self._emit((last, "horizon", r.id, r.type, clock, max(0, clock + 1)))
        self.state.riders.clear()

    def run(self, skip_idle: bool = True) -> None:
        P = self.periods
        t = 0
        while t < P:
            n = min(CHUNK, P - t)
            outcomes = self.draw(n)
            if not skip_idle:
                for k in range(n):
                    self.advance_period(int(outcomes[k]))
                t += n
                continue
            events = np.flatnonzero(outcomes >= 0)
            ptr = 0
            end = t + n
            cur = t
            while cur < end:
                next_arrival = t + events[ptr] if ptr < len(events) else math.inf
                nxt = min(next_arrival, self._next_exit(), self._next_match_period(cur))
                if nxt >= end:
                    break
                nxt = int(nxt)
                self.state.t = nxt
                if nxt == next_arrival:
                    self.advance_period(int(outcomes[nxt - t]))
                    ptr += 1
                else:
                    self.advance_period(-1)
                cur = nxt + 1
            self.state.t = end
            t = end
        self.finish()


def _finite(x: float) -> float:
    return x if math.isfinite(x) else 0.0


def _spawn(seed: int, replications: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(replications)]


def minutes_per_period(inst: FluidInstance,
                       riders_per_minute: float = DEFAULT_RIDERS_PER_MINUTE) -> float:
    """Period length in minutes when total arrivals correspond to ``riders_per_minute``."""
    total = float(inst.arrival.sum())
    return total / riders_per_minute if total > 0 else 1.0 / riders_per_minute


def run_simulation(inst: FluidInstance, lam, duals: DualTables | None, policy: str,
                   periods: int, seed: int = 0, replications: int = 1,
                   keep_log: bool = False,
                   riders_per_minute: float = DEFAULT_RIDERS_PER_MINUTE,
                   batches: int = DEFAULT_BATCHES,
                   skip_idle: bool = True) -> RunMetrics:
    """Simulate ``replications`` independent runs and summarize their metrics.

    Each replication draws from its own child of ``SeedSequence(seed)``, so
    results are deterministic given the seed.
    """
    if replications < 1:
        raise ValueError("replications must be at least 1")
    mpp = minutes_per_period(inst, riders_per_minute)
    reps, logs = [], []
    for rng in _spawn(seed, replications):
        sim = Simulator(inst, lam, duals, policy, periods, rng, keep_log=keep_log,
                        batches=batches)
        sim.run(skip_idle=skip_idle)
        reps.append(_metrics_from_tally(sim.tally, inst, mpp))
        if keep_log:
            logs.append(sim.log)
    summary, se = _summarize(reps)
    return RunMetrics(policy, seed, reps, summary, se, logs)


def compute_metrics(log: EventLog, inst: FluidInstance,
                    riders_per_minute: float = DEFAULT_RIDERS_PER_MINUTE,
                    batches: int = DEFAULT_BATCHES) -> ReplicationMetrics:
    """Recompute replication metrics from an event log."""
    tally = _Tally(inst, log.periods, batches)
    for rec in log.records:
        tally.feed(rec)
    return _metrics_from_tally(tally, inst, minutes_per_period(inst, riders_per_minute))


def accounting_residuals(rep: ReplicationMetrics, inst: FluidInstance) -> dict:
    """Conservation of riders and the profit identity, as residuals."""
    return {
        "riders": rep.conversions - (rep.solo_completions + 2 * rep.matches
                                     + rep.active_at_horizon),
        "profit": rep.profit - (rep.revenue - inst.cost * rep.total_distance),
    }


def summarize_replications(reps: Sequence[ReplicationMetrics]):
    return _summarize(list(reps))
