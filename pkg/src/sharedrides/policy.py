"""Dual-driven matching rules used at simulation time.

Two rules are provided:

* :func:`on_trip_decide` handles a single new rider against riders already on
  their way, matching to the cheapest compatible state when its generalized
  cost ``c l - xi`` does not exceed the rider's demand dual ``gamma``.
* :func:`combined_decide` solves, each period, a minimum-weight non-bipartite
  matching among all active riders (waiting and on-trip), with edge weight
  ``c l_{ij}^v - xi_i^u - xi_j^v`` where ``(j, v)`` is the rider with the larger
  clock.

Edges whose weight is within a relative ``1e-9`` of zero count as eligible, so
a zero-cost match is taken rather than skipped. Among optimal matchings the
one with more pairs wins, then the lexicographically smallest pair list with
riders ordered by clock, which makes decisions deterministic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .fluid import FluidInstance, FluidSolution
from .netgraph import CompatTable

DEFAULT_RIDER_CAP = 64
DP_MAX_VERTICES = 14
WEIGHT_SCALE = 1e9        # weights are compared on a 1e-9 grid
REL_TOL = 1e-9


class MatchingCapError(RuntimeError):
    """More active riders than the exact matcher is configured to handle."""


@dataclass
class DualTables:
    """Demand duals ``gamma`` and state duals ``xi`` as used by the policies.

    ``xi[j]`` is indexed by ``u + T`` for ``-T <= u <= l_j - 1``; its first
    entry equals ``gamma[j]``.
    """

    gamma: np.ndarray
    xi: list[np.ndarray]
    cost: float
    compat: CompatTable = field(repr=False)

    def __post_init__(self):
        T = self.compat.T
        for j, t in enumerate(self.compat.types):
            if len(self.xi[j]) != T + t.length:
                raise ValueError(f"xi table of type {j} has wrong length")

    @property
    def T(self) -> int:
        return self.compat.T

    @classmethod
    def from_solution(cls, sol: FluidSolution, inst: FluidInstance) -> "DualTables":
        st = sol.structure
        xi = []
        for j, t in enumerate(inst.types):
            arr = np.empty(inst.T + t.length)
            arr[0] = sol.gamma[j]
            for u in range(-inst.T + 1, t.length):
                arr[u + inst.T] = sol.xi[st.flow_index[(j, u)]]
            xi.append(arr)
        return cls(np.asarray(sol.gamma, float).copy(), xi, inst.cost, inst.compat)

    @classmethod
    def linear_in_clock(cls, gamma, inst: FluidInstance) -> "DualTables":
        """Duals ``xi_i^u = gamma_i - c max(u, 0)`` (no value left in waiting)."""
        gamma = np.asarray(gamma, float)
        xi = []
        for j, t in enumerate(inst.types):
            u = np.arange(-inst.T, t.length)
            xi.append(gamma[j] - inst.cost * np.maximum(u, 0))
        return cls(gamma.copy(), xi, inst.cost, inst.compat)

    def xi_of(self, j: int, u: int) -> float:
        return float(self.xi[j][u + self.compat.T])

    def match_cost(self, i: int, j: int, v: int) -> float:
        """``c l_{ij}^v - xi_j^v``: cost of type ``i`` joining state ``(j, v)``."""
        return self.cost * self.compat.shared_length(i, j, v) - self.xi_of(j, v)


@dataclass(frozen=True)
class MatchPair:
    """Rider ``first`` (smaller clock ``u``) joins rider ``second`` at clock ``v``."""

    first: int
    second: int
    u: int
    v: int
    weight: float


@dataclass(frozen=True)
class MatchDecision:
    """Pairs for the combined rule, or a single target state for the on-trip rule.

    ``target`` is ``None`` for the solo action.
    """

    pairs: tuple[MatchPair, ...] = ()
    target: tuple[int, int] | None = None
    cost: float | None = None

    @property
    def is_solo(self) -> bool:
        return self.target is None and not self.pairs


def on_trip_decide(duals: DualTables, occupancy: Iterable[tuple[int, int]],
                   new_type: int) -> MatchDecision:
    """Match a new type-``new_type`` rider to the cheapest compatible on-trip state.

    Args:
        duals: Dual tables of the instance.
        occupancy: Occupied states ``(j, u)``.
        new_type: Type of the arriving rider.
    """
    compat = duals.compat
    best = None
    for j, u in occupancy:
        if not compat.is_compatible(new_type, j, u):
            continue
        key = (duals.match_cost(new_type, j, u), u, j)
        if best is None or key < best:
            best = key
    if best is None:
        return MatchDecision()
    kappa, u, j = best
    gamma = float(duals.gamma[new_type])
    if gamma >= kappa - REL_TOL * max(1.0, abs(gamma), abs(kappa)):
        return MatchDecision(target=(j, u), cost=kappa)
    return MatchDecision()


def pair_weight(duals: DualTables, a: tuple[int, int], b: tuple[int, int]):
    """Weight of pairing riders ``a=(i,u)`` and ``b=(j,v)`` or ``None`` if not allowed.

    The rider with the larger clock hosts the match.
    """
    (i, u), (j, v) = sorted([a, b], key=lambda s: s[1])
    if u == v:
        raise ValueError("active riders must have distinct clocks")
    if v < 0 or (u > 0):
        return None  # both still waiting, or already on separate vehicles
    if not duals.compat.is_compatible(i, j, v):
        return None
    length_cost = duals.cost * duals.compat.shared_length(i, j, v)
    xi_u, xi_v = duals.xi_of(i, u), duals.xi_of(j, v)
    w = length_cost - xi_u - xi_v
    tol = REL_TOL * max(1.0, abs(length_cost), abs(xi_u), abs(xi_v))
    return w, tol


def combined_decide(duals: DualTables, riders: Sequence[tuple[int, int]],
                    cap: int = DEFAULT_RIDER_CAP) -> MatchDecision:
    """Minimum-weight matching among active riders given as ``(type, clock)``.

    Returned pair indices refer to positions in ``riders``.
    """
    n = len(riders)
    if n < 2:
        return MatchDecision()
    order = sorted(range(n), key=lambda k: (riders[k][1], riders[k][0]))
    clocks = [riders[k][1] for k in order]
    if len(set(clocks)) != n:
        raise ValueError("active riders must have distinct clocks")
    edges = []
    weights = {}
    for a in range(n):
        if riders[order[a]][1] > 0:
            break
        for b in range(a + 1, n):
            res = pair_weight(duals, riders[order[a]], riders[order[b]])
            if res is None:
                continue
            w, tol = res
            if w <= tol:
                edges.append((a, b, w))
                weights[(a, b)] = w
    if not edges:
        return MatchDecision()
    chosen = exact_matching(n, edges, cap=cap)
    pairs = tuple(MatchPair(order[a], order[b], riders[order[a]][1], riders[order[b]][1],
                            weights[(a, b)]) for a, b in chosen)
    return MatchDecision(pairs=pairs, cost=sum(p.weight for p in pairs))


# -- exact matching ------------------------------------------------------------

def _int_weight(w: float) -> int:
    return min(0, int(round(w * WEIGHT_SCALE)))


def _prepare(n: int, edges):
    adj: dict[int, dict[int, int]] = {}
    for a, b, w in edges:
        if a == b or not (0 <= a < n and 0 <= b < n):
            raise ValueError(f"bad edge ({a}, {b})")
        wi = _int_weight(w)
        if w * WEIGHT_SCALE > 0.5:
            continue  # positive edges never help
        a, b = min(a, b), max(a, b)
        prev = adj.setdefault(a, {}).get(b)
        if prev is None or wi < prev:
            adj[a][b] = wi
            adj.setdefault(b, {})[a] = wi
    return adj


def _better(key_a, key_b) -> bool:
    return key_b is None or key_a < key_b


def exact_matching(n: int, edges: Sequence[tuple[int, int, float]],
                   cap: int = DEFAULT_RIDER_CAP) -> list[tuple[int, int]]:
    """Exact minimum-weight matching over nonpositive edges.

    Ties in total weight prefer more pairs, then the lexicographically smallest
    sorted pair list. Small instances use a memoized search over vertex subsets;
    larger ones branch and bound.

    Args:
        n: Number of vertices.
        edges: ``(a, b, weight)`` triples; positive weights are ignored.
        cap: Maximum number of vertices accepted.

    Returns:
        Sorted list of pairs ``(a, b)`` with ``a < b``.
    """
    if n > cap:
        raise MatchingCapError(f"{n} riders exceed the matching cap of {cap}")
    adj = _prepare(n, edges)
    pairs = []
    # optimal and lexicographically smallest per component merges into the
    # global optimum since components share no vertices
    for comp in _components(adj):
        if len(comp) <= DP_MAX_VERTICES:
            pairs.extend(_dp_matching(comp, adj))
        else:
            pairs.extend(_bb_matching(comp, adj))
    return sorted(pairs)


def _components(adj) -> list[list[int]]:
    seen, comps = set(), []
    for s in sorted(adj):
        if s in seen or not adj[s]:
            continue
        stack, comp = [s], []
        seen.add(s)
        while stack:
            v = stack.pop()
            comp.append(v)
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(sorted(comp))
    return comps


def _dp_matching(verts, adj):
    pos = {v: k for k, v in enumerate(verts)}
    nbrs = [[(pos[w], wt) for w, wt in sorted(adj[v].items())] for v in verts]

    @lru_cache(maxsize=None)
    def best(mask: int):
        # (total, -pairs, pair list) for the vertex subset ``mask``
        if mask == 0:
            return (0, 0, ())
        low = (mask & -mask).bit_length() - 1
        rest = mask & ~(1 << low)
        cand = None
        for k, wt in nbrs[low]:
            if rest >> k & 1:
                t, p, pl = best(rest & ~(1 << k))
                key = (t + wt, p - 1, ((verts[low], verts[k]),) + pl)
                if _better(key, cand):
                    cand = key
        key = best(rest)
        if _better(key, cand):
            cand = key
        return cand

    result = best((1 << len(verts)) - 1)
    return list(result[2])


def _bb_matching(verts, adj):
    best = [_greedy(verts, adj)]

    def bound(free: set) -> float:
        # every pair weight is at least the mean of its endpoints' minima
        lb = 0
        for v in free:
            lb += min((wt for w, wt in adj[v].items() if w in free), default=0)
        return lb / 2.0

    def rec(order: list, free: set, total: int, pairs: list):
        if total + bound(free) > best[0][0]:
            return
        while order and order[0] not in free:
            order = order[1:]
        if not order:
            key = (total, -len(pairs), tuple(pairs))
            if _better(key, best[0]):
                best[0] = key
            return
        v = order[0]
        free.discard(v)
        for w in sorted(adj[v]):
            if w in free:
                free.discard(w)
                pairs.append((v, w))
                rec(order[1:], free, total + adj[v][w], pairs)
                pairs.pop()
                free.add(w)
        rec(order[1:], free, total, pairs)
        free.add(v)

    rec(list(verts), set(verts), 0, [])
    return list(best[0][2])


def _greedy(verts, adj):
    used, pairs, total = set(), [], 0
    for wt, a, b in sorted((wt, a, b) for a in verts for b, wt in adj[a].items() if a < b):
        if a not in used and b not in used:
            used.update((a, b))
            pairs.append((a, b))
            total += wt
    return (total, -len(pairs), tuple(sorted(pairs)))


def brute_force_matching(n: int, edges: Sequence[tuple[int, int, float]]
                         ) -> list[tuple[int, int]]:
    """Enumerate every matching; reference oracle for tests (small ``n`` only)."""
    adj = _prepare(n, edges)
    all_edges = sorted({(min(a, b), max(a, b)) for a in adj for b in adj[a]})
    best = None
    for size in range(0, n // 2 + 1):
        for combo in itertools.combinations(all_edges, size):
            used = [x for e in combo for x in e]
            if len(set(used)) != len(used):
                continue
            total = sum(adj[a][b] for a, b in combo)
            key = (total, -size, tuple(sorted(combo)))
            if _better(key, best):
                best = key
    return list(best[2])


def matching_weight(edges, pairs) -> float:
    lookup = {(min(a, b), max(a, b)): w for a, b, w in edges}
    return sum(lookup[p] for p in pairs)
