"""Road-network geometry: distances, canonical solo paths, shared-trip lengths
and rider compatibility.

Every edge has unit length and one unit of distance is travelled per period.
Networks with longer edges are expanded into unit segments on construction.
Node ids are consecutive integers; ties between equally short paths are broken
towards the smallest neighbouring id so that rider positions are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .demand import UniformWTP, WTPModel

#: Default cap on the number of (type, state, type) cells in a compatibility table.
DEFAULT_MAX_TABLE_ENTRIES = 20_000_000


class NetworkError(ValueError):
    """Raised for unknown nodes, disconnected pairs or malformed network input."""


class CompatSizeError(MemoryError):
    """Raised when a compatibility table would exceed the configured size cap."""


class RoadNetwork:
    """Undirected graph with unit-length edges.

    Args:
        n_nodes: number of nodes; ids are ``0 .. n_nodes - 1``.
        edges: iterable of ``(a, b)`` node pairs.
        labels: optional external label per node (used for file round trips).
        coords: optional ``(n_nodes, 2)`` array of planar coordinates.
        allow_disconnected: skip the connectivity check.
    """

    def __init__(self, n_nodes: int, edges: Iterable[tuple[int, int]], labels=None,
                 coords=None, allow_disconnected: bool = False):
        if n_nodes < 1:
            raise NetworkError("network needs at least one node")
        self.n_nodes = int(n_nodes)
        adj: list[set[int]] = [set() for _ in range(self.n_nodes)]
        for a, b in edges:
            a, b = int(a), int(b)
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise NetworkError(f"edge ({a}, {b}) references an unknown node")
            if a == b:
                raise NetworkError(f"self loop at node {a}")
            adj[a].add(b)
            adj[b].add(a)
        self._adj = tuple(tuple(sorted(s)) for s in adj)
        self.labels = list(labels) if labels is not None else None
        if self.labels is not None and len(self.labels) != self.n_nodes:
            raise NetworkError("labels length does not match node count")
        self.coords = None if coords is None else np.asarray(coords, dtype=float)
        rows = [a for a, nb in enumerate(self._adj) for _ in nb]
        cols = [b for nb in self._adj for b in nb]
        self._csr = csr_matrix((np.ones(len(rows)), (rows, cols)),
                               shape=(self.n_nodes, self.n_nodes))
        self._dist_cache: dict[int, np.ndarray] = {}
        self._label_index: dict[str, int] | None = None
        if not allow_disconnected and self.n_nodes > 1:
            n_comp, _ = connected_components(self._csr, directed=False)
            if n_comp != 1:
                raise NetworkError(f"network is disconnected ({n_comp} components)")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def line(cls, length: int) -> "RoadNetwork":
        """Path graph ``0 - 1 - ... - length``."""
        coords = np.column_stack([np.arange(length + 1), np.zeros(length + 1)])
        return cls(length + 1, [(k, k + 1) for k in range(length)], coords=coords)

    @classmethod
    def grid(cls, rows: int, cols: int, edge_length: int = 1) -> "RoadNetwork":
        """Rectangular grid whose blocks are ``edge_length`` unit segments long.

        Intersection ``(r, c)`` gets id ``r * cols + c``; segment nodes follow.
        """
        def inter(r, c):
            return r * cols + c
        wedges = []
        for r in range(rows):
            for c in range(cols):
                if c + 1 < cols:
                    wedges.append((inter(r, c), inter(r, c + 1), edge_length))
                if r + 1 < rows:
                    wedges.append((inter(r, c), inter(r + 1, c), edge_length))
        xy = np.array([(c * edge_length, r * edge_length)
                       for r in range(rows) for c in range(cols)], dtype=float)
        return cls.from_weighted_edges(rows * cols, wedges, coords=xy)

    @classmethod
    def from_weighted_edges(cls, n_nodes: int, edges: Iterable[tuple[int, int, int]],
                            labels=None, coords=None, **kwargs) -> "RoadNetwork":
        """Expand integer-length edges into chains of unit segments.

        Intermediate nodes receive ids after the original ones; their
        coordinates (when ``coords`` is given) are linearly interpolated.
        """
        unit_edges = []
        next_id = n_nodes
        extra_xy = []
        base_xy = None if coords is None else np.asarray(coords, dtype=float)
        for a, b, length in edges:
            length = int(length)
            if length < 1:
                raise NetworkError(f"edge ({a}, {b}) has non-positive length {length}")
            prev = a
            for k in range(1, length):
                unit_edges.append((prev, next_id))
                if base_xy is not None:
                    t = k / length
                    extra_xy.append((1 - t) * base_xy[a] + t * base_xy[b])
                prev = next_id
                next_id += 1
            unit_edges.append((prev, b))
        if labels is not None:
            labels = list(labels) + [f"_seg{k}" for k in range(n_nodes, next_id)]
        xy = None
        if base_xy is not None:
            xy = np.vstack([base_xy] + ([np.array(extra_xy)] if extra_xy else []))
        return cls(next_id, unit_edges, labels=labels, coords=xy, **kwargs)

    @classmethod
    def from_coordinates(cls, coords, edges: Iterable[tuple[int, int]],
                         segment_length: float, max_nodes: int | None = None,
                         **kwargs) -> "RoadNetwork":
        """Discretise a planar street graph into segments of ``segment_length``.

        Each street edge becomes ``max(1, round(euclidean / segment_length))``
        unit segments. ``max_nodes`` caps the expanded size.
        """
        xy = np.asarray(coords, dtype=float)
        wedges = []
        total = len(xy)
        for a, b in edges:
            k = max(1, int(round(float(np.linalg.norm(xy[a] - xy[b])) / segment_length)))
            wedges.append((a, b, k))
            total += k - 1
        if max_nodes is not None and total > max_nodes:
            raise NetworkError(
                f"segment length {segment_length} expands to {total} nodes "
                f"(cap {max_nodes}); use a coarser segment length")
        return cls.from_weighted_edges(len(xy), wedges, coords=xy, **kwargs)

    @classmethod
    def read_edge_list(cls, path: str | Path, coords_path: str | Path | None = None
                       ) -> "RoadNetwork":
        """Read ``node_a node_b`` lines (``#`` comments allowed).

        Labels are sorted (numerically when all are integers) and mapped to
        ids in that order, so the smallest-id tie-break follows label order.
        An optional ``node x y`` file supplies coordinates.
        """
        pairs = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise NetworkError(f"{path}:{lineno}: expected 'node_a node_b'")
            pairs.append((parts[0], parts[1]))
        coord_map = {}
        if coords_path is not None:
            for lineno, line in enumerate(Path(coords_path).read_text().splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise NetworkError(f"{coords_path}:{lineno}: expected 'node x y'")
                coord_map[parts[0]] = (float(parts[1]), float(parts[2]))
        names = {a for p in pairs for a in p} | set(coord_map)
        labels = _sorted_labels(names)
        index = {lab: k for k, lab in enumerate(labels)}
        coords = None
        if coord_map:
            missing = [lab for lab in labels if lab not in coord_map]
            if missing:
                raise NetworkError(f"no coordinates for nodes {missing[:5]}")
            coords = np.array([coord_map[lab] for lab in labels])
        return cls(len(labels), [(index[a], index[b]) for a, b in pairs],
                   labels=labels, coords=coords)

    def write_edge_list(self, path: str | Path) -> None:
        lab = self.label
        lines = [f"{lab(a)} {lab(b)}" for a in range(self.n_nodes)
                 for b in self._adj[a] if a < b]
        Path(path).write_text("\n".join(lines) + "\n")

    def label(self, node: int) -> str:
        return str(node) if self.labels is None else str(self.labels[node])

    def index_of(self, label) -> int:
        """Map an external label to the internal node id."""
        if self.labels is None:
            node = int(label)
            self._check(node)
            return node
        if self._label_index is None:
            self._label_index = {str(lab): k for k, lab in enumerate(self.labels)}
        try:
            return self._label_index[str(label)]
        except KeyError:
            raise NetworkError(f"unknown node label {label!r}") from None

    # -- queries --------------------------------------------------------------

    @property
    def n_edges(self) -> int:
        return sum(len(nb) for nb in self._adj) // 2

    def neighbors(self, node: int) -> tuple[int, ...]:
        self._check(node)
        return self._adj[node]

    def _check(self, node) -> None:
        if not (isinstance(node, (int, np.integer)) and 0 <= node < self.n_nodes):
            raise NetworkError(f"unknown node {node!r}")

    def distances_from(self, node: int) -> np.ndarray:
        """Hop distances from ``node`` to every node (``-1`` when unreachable)."""
        self._check(node)
        node = int(node)
        d = self._dist_cache.get(node)
        if d is None:
            raw = shortest_path(self._csr, method="D", directed=False,
                                unweighted=True, indices=node)
            d = np.where(np.isfinite(raw), raw, -1).astype(np.int64)
            d.setflags(write=False)
            self._dist_cache[node] = d
        return d

    def shortest_distance(self, a: int, b: int) -> int:
        self._check(b)
        d = int(self.distances_from(a)[b])
        if d < 0:
            raise NetworkError(f"nodes {a} and {b} are not connected")
        return d

    def canonical_path(self, a: int, b: int) -> list[int]:
        """Shortest path that always steps to the smallest-id admissible neighbour."""
        self._check(a)
        to_b = self.distances_from(b)
        if to_b[a] < 0:
            raise NetworkError(f"nodes {a} and {b} are not connected")
        path = [int(a)]
        cur = int(a)
        while cur != b:
            want = to_b[cur] - 1
            cur = next(n for n in self._adj[cur] if to_b[n] == want)
            path.append(cur)
        return path

    def on_shortest_path(self, a: int, x: int, b: int) -> bool:
        """True iff ``x`` lies on some shortest path from ``a`` to ``b``."""
        da = self.distances_from(a)
        db = self.distances_from(b)
        return bool(da[x] >= 0 and da[x] + db[x] == da[b])

    def nearest_node(self, xy) -> int:
        if self.coords is None:
            raise NetworkError("network has no coordinates")
        d2 = ((self.coords - np.asarray(xy, dtype=float)) ** 2).sum(axis=1)
        return int(np.argmin(d2))


def _sorted_labels(names) -> list:
    names = list(names)
    try:
        return sorted(names, key=int) if all(_is_int(n) for n in names) else sorted(names)
    except ValueError:
        return sorted(names)


def _is_int(s: str) -> bool:
    try:
        int(s)
        return True
    except ValueError:
        return False


# -- rider types --------------------------------------------------------------

@dataclass(frozen=True)
class RiderType:
    """One origin-destination pair with its arrival probability per period."""

    id: int
    origin: int
    destination: int
    arrival_prob: float
    length: int
    wtp: WTPModel = field(default_factory=UniformWTP)

    def price(self, lam: float) -> float:
        return self.wtp.price(lam)


def make_types(network: RoadNetwork, od_pairs: Sequence[tuple[int, int]],
               arrival_probs: Sequence[float], wtp: WTPModel | None = None
               ) -> list[RiderType]:
    """Build rider types, measuring each trip length on ``network``."""
    if len(od_pairs) != len(arrival_probs):
        raise ValueError("od_pairs and arrival_probs differ in length")
    wtp = wtp or UniformWTP()
    types = []
    for k, ((o, d), rate) in enumerate(zip(od_pairs, arrival_probs)):
        length = network.shortest_distance(o, d)
        if length < 1:
            raise ValueError(f"type {k}: origin equals destination")
        if not 0.0 <= rate <= 1.0:
            raise ValueError(f"type {k}: arrival probability {rate} outside [0, 1]")
        types.append(RiderType(k, int(o), int(d), float(rate), length, wtp))
    if sum(t.arrival_prob for t in types) > 1.0 + 1e-12:
        raise ValueError("arrival probabilities sum to more than 1")
    return types


def read_types_file(path: str | Path, network: RoadNetwork,
                    wtp: WTPModel | None = None) -> list[RiderType]:
    """Read ``id origin dest lambda`` lines; ids must be ``0 .. N-1`` in order."""
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path}:{lineno}: expected 'id origin dest lambda'")
        rows.append((int(parts[0]), network.index_of(parts[1]),
                     network.index_of(parts[2]), float(parts[3])))
    rows.sort()
    if [r[0] for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: type ids must be 0..N-1")
    return make_types(network, [(r[1], r[2]) for r in rows], [r[3] for r in rows], wtp)


def write_types_file(path: str | Path, types: Sequence[RiderType],
                     network: RoadNetwork) -> None:
    lines = [f"{t.id} {network.label(t.origin)} {network.label(t.destination)} "
             f"{t.arrival_prob!r}" for t in types]
    Path(path).write_text("\n".join(lines) + "\n")


# -- per-state geometry -------------------------------------------------------

class Geometry:
    """Canonical paths and distance lookups for a set of rider types."""

    def __init__(self, network: RoadNetwork, types: Sequence[RiderType]):
        self.network = network
        self.types = tuple(types)
        self.paths = tuple(np.array(network.canonical_path(t.origin, t.destination))
                           for t in self.types)
        for t, p in zip(self.types, self.paths):
            if len(p) - 1 != t.length:
                raise ValueError(f"type {t.id}: stored length {t.length} "
                                 f"disagrees with network distance {len(p) - 1}")

    def position(self, j: int, u: int) -> int:
        """Node occupied by a solo rider of type ``j`` with clock ``u``."""
        return int(self.paths[j][max(u, 0)])

    def dist(self, a: int, b: int) -> int:
        return int(self.network.distances_from(a)[b])


@dataclass(frozen=True)
class SharedRoute:
    """Executed route when new/waiting type ``i`` joins solo rider ``(j, u)``."""

    length: int              # remaining vehicle distance from (j, u)
    approach: int            # pos(j, u) -> O_i
    drop_existing_first: bool
    overlap: int             # distance with both riders on board
    onboard_new: int         # rider i: O_i -> D_i along the route
    onboard_existing: int    # rider j: O_j -> D_j including distance already covered


def shared_route(geo: Geometry, i: int, j: int, u: int) -> SharedRoute:
    ti, tj = geo.types[i], geo.types[j]
    pos = geo.position(j, u)
    approach = geo.dist(pos, ti.origin)
    oi_dj = geo.dist(ti.origin, tj.destination)
    dj_di = geo.dist(tj.destination, ti.destination)
    di_dj = dj_di
    existing_first = oi_dj + dj_di
    new_first = ti.length + di_dj
    covered = max(u, 0)
    if existing_first <= new_first:
        return SharedRoute(approach + existing_first, approach, True, oi_dj,
                           existing_first, covered + approach + oi_dj)
    return SharedRoute(approach + new_first, approach, False, ti.length,
                       ti.length, covered + approach + new_first)


def shared_trip_length(geo: Geometry, i: int, j: int, u: int) -> int:
    """Remaining shared-trip length when type ``i`` is picked up by ``(j, u)``."""
    return shared_route(geo, i, j, u).length


def is_compatible(geo: Geometry, i: int, j: int, u: int) -> bool:
    """Trip-length and no-backtracking conditions for type ``i`` and ``(j, u)``."""
    ti, tj = geo.types[i], geo.types[j]
    length = shared_trip_length(geo, i, j, u)
    if not length < ti.length + tj.length - max(0, u):
        return False
    pos = geo.position(j, u)
    if pos == ti.origin:
        return True
    return not geo.network.on_shortest_path(ti.origin, pos, tj.destination)


# -- compatibility table ------------------------------------------------------

class CompatTable:
    """Compatible new-rider types and shared lengths for every solo state.

    Columns of the per-type arrays are indexed by ``u + T`` for
    ``-T <= u <= length_j - 1``.
    """

    def __init__(self, geo: Geometry, T: int, lengths: list[np.ndarray],
                 ok: list[np.ndarray], on_trip: bool):
        self.geo = geo
        self.types = geo.types
        self.T = int(T)
        self.on_trip = on_trip
        self._len = lengths
        self._ok = ok
        self._compat = [
            [tuple(int(i) for i in np.flatnonzero(ok[j][:, col]))
             for col in range(ok[j].shape[1])]
            for j in range(len(self.types))]

    @property
    def n_types(self) -> int:
        return len(self.types)

    def clock_range(self, j: int) -> range:
        return range(-self.T, self.types[j].length)

    def states(self):
        """All solo states ``(j, u)`` with ``-T <= u <= length_j - 1``."""
        for j in range(self.n_types):
            for u in self.clock_range(j):
                yield j, u

    def compatible(self, j: int, u: int) -> tuple[int, ...]:
        return self._compat[j][u + self.T]

    def is_compatible(self, i: int, j: int, u: int) -> bool:
        return bool(self._ok[j][i, u + self.T])

    def shared_length(self, i: int, j: int, u: int) -> int:
        return int(self._len[j][i, u + self.T])

    def ok_array(self, j: int) -> np.ndarray:
        return self._ok[j]

    def length_array(self, j: int) -> np.ndarray:
        return self._len[j]


def build_compat_table(network: RoadNetwork, types: Sequence[RiderType], T: int = 0,
                       on_trip: bool = True,
                       max_entries: int = DEFAULT_MAX_TABLE_ENTRIES,
                       geo: Geometry | None = None) -> CompatTable:
    """Tabulate ``N+_{j,u}`` and shared lengths for all states.

    With ``on_trip=False`` the compatible sets of on-trip states (``u >= 1``)
    are emptied, which yields the pure pre-trip model.
    """
    if T < 0:
        raise ValueError("waiting window T must be nonnegative")
    n = len(types)
    entries = sum(n * (T + t.length) for t in types)
    if entries > max_entries:
        raise CompatSizeError(
            f"compatibility table needs {entries} cells (cap {max_entries}); "
            "reduce types, trip lengths or T, or raise the cap")
    geo = geo or Geometry(network, types)
    dist_o = np.vstack([network.distances_from(t.origin) for t in types])
    dist_d = np.vstack([network.distances_from(t.destination) for t in types])
    ell = np.array([t.length for t in types], dtype=np.int64)
    origins = np.array([t.origin for t in types])
    dests = np.array([t.destination for t in types])
    lengths, oks = [], []
    for j, tj in enumerate(types):
        clocks = np.arange(-T, tj.length)
        pos = geo.paths[j][np.maximum(clocks, 0)]
        approach = dist_o[:, pos]                              # (n, states)
        oi_dj = dist_d[j][origins]                             # d(O_i, D_j)
        dj_di = dist_d[j][dests]                               # d(D_j, D_i)
        tail = np.minimum(oi_dj + dj_di, ell + dj_di)
        shared = approach + tail[:, None]
        trip_ok = shared < (ell[:, None] + tj.length - np.maximum(clocks, 0)[None, :])
        on_path = (approach + dist_d[j][pos][None, :] == oi_dj[:, None])
        at_origin = pos[None, :] == origins[:, None]
        ok = trip_ok & (~on_path | at_origin)
        if not on_trip:
            ok[:, clocks >= 1] = False
        lengths.append(shared)
        oks.append(ok)
    return CompatTable(geo, T, lengths, oks, on_trip)


def first_clock_total_length(table: CompatTable, i: int, j: int) -> tuple[int, int]:
    """``(min_u (l^u_{ij} + u), l^1_{ij} + 1)`` over on-trip clocks of ``j``."""
    lj = table.types[j].length
    if lj < 2:
        raise ValueError("type has no on-trip states")
    best = min(table.shared_length(i, j, u) + u for u in range(1, lj))
    return best, table.shared_length(i, j, 1) + 1


def grid_od_pairs_at_distance(network: RoadNetwork, nodes: Sequence[int], distance: int
                              ) -> list[tuple[int, int]]:
    """Ordered pairs among ``nodes`` whose shortest distance equals ``distance``."""
    out = []
    for a in nodes:
        da = network.distances_from(a)
        out.extend((a, b) for b in nodes if b != a and da[b] == distance)
    return out


def node_count_for_grid(rows: int, cols: int, edge_length: int) -> int:
    blocks = rows * (cols - 1) + cols * (rows - 1)
    return rows * cols + blocks * (edge_length - 1)


__all__ = [
    "CompatSizeError", "CompatTable", "Geometry", "NetworkError", "RiderType",
    "RoadNetwork", "SharedRoute", "build_compat_table", "is_compatible",
    "first_clock_total_length", "make_types", "read_types_file", "shared_route",
    "shared_trip_length", "write_types_file", "grid_od_pairs_at_distance",
    "node_count_for_grid",
]
