"""Rider types from trip records by two-step clustering.

Pickups are first assigned to zones (polygons supplied by the caller), then
the dropoffs of each zone are split by k-means. Every (zone, cluster) becomes
a rider type whose origin is the network node nearest the zone centroid and
whose destination is the node nearest the cluster centroid. Arrival
probabilities are trip counts divided by the number of periods in the window.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Sequence

import numpy as np
from shapely.geometry import Point, Polygon
from sklearn.cluster import KMeans

from ..demand import WTPModel
from ..fluid import FluidInstance
from ..netgraph import RoadNetwork, make_types

log = logging.getLogger(__name__)

TRIP_COLUMNS = ("pickup_x", "pickup_y", "dropoff_x", "dropoff_y", "timestamp")


@dataclass(frozen=True)
class TripRecord:
    pickup_x: float
    pickup_y: float
    dropoff_x: float
    dropoff_y: float
    timestamp: datetime


@dataclass(frozen=True)
class Zone:
    id: str
    polygon: Polygon


@dataclass
class IngestResult:
    instance: FluidInstance
    clusters: list = field(default_factory=list)   # one dict per rider type
    skipped_zones: list = field(default_factory=list)
    unassigned_trips: int = 0


def read_trips_csv(path: str | Path, start: datetime | None = None,
                   end: datetime | None = None) -> list[TripRecord]:
    """Read trips, keeping those with ``start <= timestamp < end``."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in TRIP_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, 2):
            try:
                rec = TripRecord(float(row["pickup_x"]), float(row["pickup_y"]),
                                 float(row["dropoff_x"]), float(row["dropoff_y"]),
                                 datetime.fromisoformat(row["timestamp"]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if start is not None and rec.timestamp < start:
                continue
            if end is not None and rec.timestamp >= end:
                continue
            out.append(rec)
    return out


def read_zone_file(path: str | Path) -> list[Zone]:
    """Lines ``zone_id x1,y1 x2,y2 ...`` (at least three vertices)."""
    zones = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            verts = [tuple(float(v) for v in p.split(",")) for p in parts[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: bad vertex") from None
        if len(verts) < 3 or any(len(v) != 2 for v in verts):
            raise ValueError(f"{path}:{lineno}: a zone needs at least three x,y vertices")
        zones.append(Zone(parts[0], Polygon(verts)))
    return zones


def assign_zones(records: Sequence[TripRecord], zones: Sequence[Zone]) -> list[int]:
    """Index of the first zone covering each pickup, ``-1`` when none does."""
    out = []
    for r in records:
        pt = Point(r.pickup_x, r.pickup_y)
        out.append(next((k for k, z in enumerate(zones) if z.polygon.covers(pt)), -1))
    return out


def ingest_trips(records: Sequence[TripRecord], zones: Sequence[Zone],
                 network: RoadNetwork, clusters_per_zone: int, window_periods: float,
                 scale: float = 1.0, cost: float = 0.7, seed: int = 0,
                 wtp: WTPModel | None = None, **inst_kwargs) -> IngestResult:
    """Estimate rider types and arrival probabilities from trip records.

    Args:
        records: Trips inside the estimation window.
        zones: Pickup zones.
        network: Target road network with coordinates.
        clusters_per_zone: k-means clusters for the dropoffs of each zone.
        window_periods: Length of the window in periods.
        scale: Multiplier applied to every arrival probability.
        cost: Per-distance cost of the resulting instance.
        seed: k-means seed.
    """
    if not records:
        raise ValueError("no trip records")
    if clusters_per_zone < 1:
        raise ValueError("clusters_per_zone must be at least 1")
    if window_periods <= 0 or scale <= 0:
        raise ValueError("window_periods and scale must be positive")
    zone_of = np.array(assign_zones(records, zones))
    drops = np.array([(r.dropoff_x, r.dropoff_y) for r in records])
    unassigned = int((zone_of < 0).sum())
    if unassigned:
        log.warning("%d trips fall outside every zone and are ignored", unassigned)
    counts: dict[tuple[int, int], int] = {}
    clusters, skipped = [], []
    for k, zone in enumerate(zones):
        idx = np.flatnonzero(zone_of == k)
        if len(idx) == 0:
            log.warning("zone %s has no trips; skipped", zone.id)
            skipped.append(zone.id)
            continue
        n_clusters = min(clusters_per_zone, len(np.unique(drops[idx], axis=0)))
        km = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed).fit(drops[idx])
        centroid = zone.polygon.centroid
        origin = network.nearest_node((centroid.x, centroid.y))
        for c in range(n_clusters):
            members = int((km.labels_ == c).sum())
            dest = network.nearest_node(km.cluster_centers_[c])
            clusters.append({"zone": zone.id, "cluster": c, "trips": members,
                             "centroid": [float(v) for v in km.cluster_centers_[c]],
                             "origin": origin, "destination": dest})
            if dest == origin:
                log.warning("zone %s cluster %d maps to a zero-length trip; dropped",
                            zone.id, c)
                continue
            counts[(origin, dest)] = counts.get((origin, dest), 0) + members
    if not counts:
        raise ValueError("no rider types could be formed")
    od = sorted(counts)
    rates = [counts[p] / window_periods * scale for p in od]
    if sum(rates) > 1.0:
        raise ValueError(f"estimated arrival probabilities sum to {sum(rates):.4f} > 1; "
                         "use more periods or a smaller scale factor")
    types = make_types(network, od, rates, wtp)
    meta = {"source": "trips", "trips": len(records), "window_periods": window_periods,
            "scale": scale, "clusters_per_zone": clusters_per_zone}
    inst = FluidInstance(network, types, cost, meta=meta, **inst_kwargs)
    for rec in clusters:
        key = (rec["origin"], rec["destination"])
        rec["type"] = od.index(key) if key in counts else None
    return IngestResult(inst, clusters, skipped, unassigned)
