import csv
import json
from datetime import datetime, timedelta

import numpy as np
import pytest

from sharedrides.harness.cli import main
from sharedrides.harness.config import ConfigError, from_dict, load_config
from sharedrides.harness.ingest import (TripRecord, Zone, assign_zones, ingest_trips,
                                        read_trips_csv, read_zone_file)
from sharedrides.harness.instances import (gen_example1, gen_example2, instance_for_policy,
                                           load_instance, random_grid_instance,
                                           save_instance)
from sharedrides.netgraph import RoadNetwork
from sharedrides.simkernel import SUMMARY_FIELDS
from shapely.geometry import Polygon


def test_example1_shapes():
    inst = gen_example1(100, 100, 0.1, 0.7)
    assert inst.meta["delta"] == 0.0
    assert [t.arrival_prob for t in inst.types] == [0.05, 0.05]
    assert [(t.origin, t.destination) for t in inst.types] == [(0, 100), (0, 100)]
    assert gen_example1(100, 50).types[1].origin == 50
    assert gen_example1(100, 50).meta["delta"] == 0.5
    assert gen_example1(100, 1).meta["delta"] == pytest.approx(0.99)
    with pytest.raises(ValueError):
        gen_example1(100, 0)
    with pytest.raises(ValueError):
        gen_example1(100, 101)


def test_example2_sampling():
    one = gen_example2(1, seed=3)
    assert one.n_types == 1 and one.types[0].length == 100
    a = gen_example2(10, seed=4)
    b = gen_example2(10, seed=4)
    assert [(t.origin, t.destination) for t in a.types] == [(t.origin, t.destination) for t in b.types]
    sets = {frozenset((t.origin, t.destination) for t in gen_example2(10, seed=s).types)
            for s in range(5)}
    assert len(sets) == 5
    for t in a.types:
        assert t.length == 100 and t.origin < 100 and t.destination < 100
    assert len({(t.origin, t.destination) for t in a.types}) == 10
    assert sum(t.arrival_prob for t in a.types) == pytest.approx(0.1)
    with pytest.raises(ValueError):
        gen_example2(10_000)


def test_policy_variants():
    base = gen_example1(20, 10, 0.2, T=4)
    assert instance_for_policy(base, "on_trip").T == 0
    pre = instance_for_policy(base, "pre_trip", T=3, cost=0.9)
    assert (pre.T, pre.cost, pre.enable_on_trip) == (3, 0.9, False)
    assert all(u <= 0 for _, _, u in zip(pre.structure.x_i, pre.structure.x_j, pre.structure.x_u))
    with pytest.raises(ValueError):
        instance_for_policy(base, "nope")


def test_random_instances_respect_limits():
    for s in range(10):
        inst = random_grid_instance(s)
        assert inst.n_types <= 5 and inst.T <= 10
        assert all(5 <= t.length <= 40 for t in inst.types)


def test_instance_round_trip(tmp_path):
    inst = gen_example2(3, rows=4, cols=4, edge_length=3, L=9, total_rate=0.2, seed=1, T=2)
    save_instance(inst, tmp_path)
    back = load_instance(tmp_path)
    assert [(t.origin, t.destination, t.arrival_prob) for t in back.types] == \
        [(t.origin, t.destination, t.arrival_prob) for t in inst.types]
    assert (back.T, back.cost, back.fare) == (inst.T, inst.cost, inst.fare)
    assert "np." not in (tmp_path / "coords.txt").read_text()


# -- ingestion -------------------------------------------------------------------

def square(x0, y0, x1, y1):
    return Polygon([(x0, y0), (x1, y0), (x1, y1), (x0, y1)])


T0 = datetime(2024, 1, 1, 8, 0)


def trips(points, n=1):
    return [TripRecord(px, py, dx, dy, T0 + timedelta(seconds=k))
            for k, (px, py, dx, dy) in enumerate(points * n)]


def grid_net():
    return RoadNetwork.grid(5, 5, 2)   # coordinates span [0, 8] x [0, 8]


def test_ingest_identical_trips():
    zones = [Zone("z", square(0, 0, 2, 2))]
    res = ingest_trips(trips([(1, 1, 8, 8)], 20), zones, grid_net(), 1, window_periods=200)
    assert res.instance.n_types == 1
    assert res.instance.types[0].arrival_prob == pytest.approx(20 / 200)
    assert res.instance.types[0].destination == 24


def test_ingest_two_clouds():
    rng = np.random.default_rng(0)
    pts = [(1, 1, 8 + rng.normal(0, .2), 0 + rng.normal(0, .2)) for _ in range(15)]
    pts += [(1, 1, 0 + rng.normal(0, .2), 8 + rng.normal(0, .2)) for _ in range(25)]
    res = ingest_trips(trips(pts), [Zone("z", square(0, 0, 2, 2))], grid_net(), 2,
                       window_periods=400)
    cents = sorted(tuple(round(v) for v in c["centroid"]) for c in res.clusters)
    assert cents == [(0, 8), (8, 0)]
    counts = sorted(c["trips"] for c in res.clusters)
    assert counts == [15, 25]
    assert {t.destination for t in res.instance.types} == {4, 20}


def test_ingest_scale_and_limits(caplog):
    zones = [Zone("a", square(0, 0, 2, 2)), Zone("empty", square(6, 6, 8, 8))]
    base = ingest_trips(trips([(1, 1, 8, 0)], 30), zones, grid_net(), 1, window_periods=100)
    scaled = ingest_trips(trips([(1, 1, 8, 0)], 30), zones, grid_net(), 1, window_periods=100,
                          scale=0.1)
    assert scaled.instance.types[0].arrival_prob == pytest.approx(
        0.1 * base.instance.types[0].arrival_prob)
    assert base.skipped_zones == ["empty"]
    assert "no trips" in caplog.text
    with pytest.raises(ValueError):
        ingest_trips(trips([(1, 1, 8, 0)], 30), zones, grid_net(), 1, window_periods=10)
    with pytest.raises(ValueError):
        ingest_trips([], zones, grid_net(), 1, window_periods=10)


def test_ingest_files(tmp_path):
    (tmp_path / "zones.txt").write_text("z1 0,0 2,0 2,2 0,2\n# c\nz2 4,4 6,4 6,6\n")
    zones = read_zone_file(tmp_path / "zones.txt")
    assert [z.id for z in zones] == ["z1", "z2"]
    with open(tmp_path / "trips.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pickup_x", "pickup_y", "dropoff_x", "dropoff_y", "timestamp"])
        for k in range(5):
            w.writerow([1, 1, 8, 8, (T0 + timedelta(minutes=k)).isoformat()])
        w.writerow([9, 9, 0, 0, T0.isoformat()])
    recs = read_trips_csv(tmp_path / "trips.csv", start=T0 + timedelta(minutes=1))
    assert len(recs) == 4
    assert assign_zones(read_trips_csv(tmp_path / "trips.csv"), zones) == [0] * 5 + [-1]
    (tmp_path / "bad.csv").write_text("pickup_x,pickup_y\n1,2\n")
    with pytest.raises(ValueError):
        read_trips_csv(tmp_path / "bad.csv")


# -- configuration -----------------------------------------------------------------

@pytest.mark.parametrize("data,key", [
    ({"policy": ["bogus"]}, "policy"),
    ({"T": [-1]}, "T"),
    ({"c": [0]}, "c"),
    ({"periods": 0}, "periods"),
    ({"colour": "red"}, "colour"),
    ({"instance": {"example": 3}}, "instance.example"),
    ({"fare": "per_hour"}, "fare"),
])
def test_config_errors_name_the_key(data, key):
    with pytest.raises(ConfigError) as exc:
        from_dict(data)
    assert f"'{key}'" in str(exc.value)


def test_config_load_yaml(tmp_path):
    (tmp_path / "c.yaml").write_text("policy: [pre_trip]\nT: [0, 2]\nc: [0.9]\nperiods: 500\n")
    cfg = load_config(tmp_path / "c.yaml")
    assert cfg.policy == ["pre_trip"] and cfg.T == [0, 2] and cfg.periods == 500
    assert load_config(None).policy == ["combined"]


# -- command line ------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    inst = tmp_path / "inst"
    assert main(["gen", "--example", "1", "--L", "30", "--l", "15", "--out", str(inst)]) == 0
    assert (inst / "gen_config.json").exists()
    assert main(["price", "--instance", str(inst), "--policy", "combined", "--T", "2"]) == 0
    assert json.loads((inst / "pricing.json").read_text())["T"] == 2
    sims = []
    for k in range(2):
        out = tmp_path / f"sim{k}"
        assert main(["simulate", "--instance", str(inst), "--policy", "combined", "--T", "2",
                     "--periods", "3000", "--replications", "2", "--seed", "7",
                     "--out", str(out), "--log-events"]) == 0
        sims.append((out / "metrics.csv").read_bytes())
        assert (out / "simulate_config.json").exists() and (out / "events_0.csv").exists()
    assert sims[0] == sims[1]
    header = sims[0].decode().splitlines()[0].split(",")
    assert set(SUMMARY_FIELDS) <= set(header)
    # pricing computed for another policy is refused
    assert main(["simulate", "--instance", str(inst), "--policy", "pre_trip", "--T", "0",
                 "--periods", "100", "--out", str(tmp_path / "x")]) == 2
    assert main(["solve-fluid", "--instance", str(inst), "--lam", "0.2",
                 "--out", str(tmp_path / "fl")]) == 0
    assert json.loads((tmp_path / "fl" / "fluid.json").read_text())["cost"] > 0


def test_cli_sweep_shutdown(tmp_path):
    cfg = {"instance": {"example": 1, "L": 20, "l": 10, "total_rate": 0.2},
           "periods": 2000, "sweep": {"policies": ["pre_trip"], "T": [0, 2], "c": [1.1],
                                      "example1_l": [20, 10]}}
    (tmp_path / "cfg.json").write_text(json.dumps(cfg))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "table.csv")))
    t0 = [r for r in rows if r["T"] == "0"]
    assert t0 and all(float(r["profit_per_period"]) == 0.0 for r in t0)
    assert (out / "profit_vs_delta.csv").exists()
    assert (out / "points" / "pre_trip_T0_c1.1" / "metrics.csv").exists()
    assert (out / "sweep_config.json").exists()


def test_cli_errors(tmp_path, capsys):
    (tmp_path / "bad.json").write_text(json.dumps({"periods": -5}))
    assert main(["price", "--config", str(tmp_path / "bad.json")]) == 2
    assert "periods" in capsys.readouterr().err
    assert main(["price", "--instance", str(tmp_path / "missing")]) != 0


def test_cli_ingest(tmp_path):
    net = grid_net()
    net.write_edge_list(tmp_path / "net.txt")
    (tmp_path / "coords.txt").write_text(
        "\n".join(f"{net.label(k)} {x} {y}" for k, (x, y) in enumerate(net.coords)) + "\n")
    (tmp_path / "zones.txt").write_text("z1 0,0 2,0 2,2 0,2\n")
    with open(tmp_path / "trips.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pickup_x", "pickup_y", "dropoff_x", "dropoff_y", "timestamp"])
        for k in range(10):
            w.writerow([1, 1, 8, 8 - (k % 2) * 8, (T0 + timedelta(minutes=k)).isoformat()])
    out = tmp_path / "inst"
    assert main(["ingest", "--trips", str(tmp_path / "trips.csv"), "--zones",
                 str(tmp_path / "zones.txt"), "--network", str(tmp_path / "net.txt"),
                 "--coords", str(tmp_path / "coords.txt"), "--k", "2",
                 "--window-periods", "100", "--out", str(out)]) == 0
    inst = load_instance(out)
    assert inst.n_types == 2
    assert sum(t.arrival_prob for t in inst.types) == pytest.approx(0.1)
    assert (out / "ingest_config.json").exists() and (out / "clusters.json").exists()
