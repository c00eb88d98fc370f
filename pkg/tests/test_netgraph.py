from collections import deque
from itertools import product

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sharedrides.harness.instances import random_grid_instance
from sharedrides.netgraph import (CompatSizeError, Geometry, NetworkError, RoadNetwork,
                                  build_compat_table, grid_od_pairs_at_distance,
                                  is_compatible, first_clock_total_length, make_types,
                                  node_count_for_grid, read_types_file, shared_route,
                                  shared_trip_length, write_types_file)


def bfs(net, a):
    dist = {a: 0}
    q = deque([a])
    while q:
        v = q.popleft()
        for w in net.neighbors(v):
            if w not in dist:
                dist[w] = dist[v] + 1
                q.append(w)
    return dist


def all_shortest_paths(net, a, b):
    db = bfs(net, b)
    out = []

    def rec(path):
        v = path[-1]
        if v == b:
            out.append(list(path))
            return
        for w in net.neighbors(v):
            if db[w] == db[v] - 1:
                rec(path + [w])
    rec([a])
    return out


def test_line_distances(line100):
    assert line100.shortest_distance(0, 100) == 100
    assert line100.shortest_distance(37, 37) == 0
    assert line100.canonical_path(0, 5) == [0, 1, 2, 3, 4, 5]
    assert line100.canonical_path(7, 7) == [7]


def test_grid_corner_distance_matches_bfs():
    net = RoadNetwork.grid(10, 10, 10)
    assert net.n_nodes == node_count_for_grid(10, 10, 10)
    assert net.shortest_distance(0, 99) == 180
    assert bfs(net, 0)[99] == 180


def test_unknown_node_and_disconnected():
    net = RoadNetwork.line(3)
    with pytest.raises(NetworkError):
        net.shortest_distance(0, 9)
    with pytest.raises(NetworkError):
        RoadNetwork(4, [(0, 1), (2, 3)])
    loose = RoadNetwork(4, [(0, 1), (2, 3)], allow_disconnected=True)
    with pytest.raises(NetworkError):
        loose.canonical_path(0, 3)


@given(st.integers(2, 5), st.integers(2, 5), st.integers(1, 3), st.data())
def test_distances_metric_and_bfs(rows, cols, edge, data):
    net = RoadNetwork.grid(rows, cols, edge)
    a = data.draw(st.integers(0, net.n_nodes - 1))
    b = data.draw(st.integers(0, net.n_nodes - 1))
    c = data.draw(st.integers(0, net.n_nodes - 1))
    ref = bfs(net, a)
    assert all(net.distances_from(a)[v] == d for v, d in ref.items())
    assert net.shortest_distance(a, b) == net.shortest_distance(b, a)
    assert net.shortest_distance(a, c) <= net.shortest_distance(a, b) + net.shortest_distance(b, c)


@given(st.integers(2, 4), st.integers(2, 4), st.integers(1, 3), st.data())
def test_canonical_path_is_least_successor_shortest_path(rows, cols, edge, data):
    net = RoadNetwork.grid(rows, cols, edge)
    a = data.draw(st.integers(0, net.n_nodes - 1))
    b = data.draw(st.integers(0, net.n_nodes - 1))
    paths = all_shortest_paths(net, a, b)
    # least-successor rule: lexicographically smallest node sequence
    assert net.canonical_path(a, b) == min(paths)
    assert net.canonical_path(a, b) == net.canonical_path(a, b)


def test_shared_length_examples(two_type_line):
    net, types = two_type_line
    geo = Geometry(net, types)
    assert shared_trip_length(geo, 1, 0, 20) == 80
    assert is_compatible(geo, 1, 0, 20)
    assert shared_trip_length(geo, 0, 1, 0) == 150
    assert not is_compatible(geo, 0, 1, 0)
    # same type: pre-trip equals l, on-trip never compatible
    for u in (-3, 0):
        assert shared_trip_length(geo, 0, 0, u) == 100
        assert is_compatible(geo, 0, 0, u)
    for u in (1, 30, 99):
        assert not is_compatible(geo, 0, 0, u)


def test_two_type_line_compat_range(two_type_line):
    # Brute force gives 1 <= u <= 50: at u = 50 the vehicle stands on O_2,
    # which the backtracking rule excludes from the forbidden set.
    net, types = two_type_line
    geo = Geometry(net, types)
    brute = [u for u in range(1, 100) if is_compatible(geo, 1, 0, u)]
    assert brute == list(range(1, 51))
    table = build_compat_table(net, types, T=0)
    assert [u for u in range(1, 100) if 1 in table.compatible(0, u)] == brute


def test_shared_route_against_walk(two_type_line):
    net, types = two_type_line
    geo = Geometry(net, types)
    r = shared_route(geo, 1, 0, 20)
    assert (r.approach, r.overlap, r.onboard_new, r.onboard_existing) == (30, 50, 50, 100)
    assert r.drop_existing_first  # equal-length orders drop the existing rider first


def test_single_type_tables():
    net = RoadNetwork.line(10)
    types = make_types(net, [(0, 10)], [0.1])
    t0 = build_compat_table(net, types, T=0)
    assert all(t0.compatible(0, u) == () for u in range(1, 10))
    t3 = build_compat_table(net, types, T=3)
    assert all(t3.compatible(0, u) == (0,) for u in range(-3, 1))


def test_size_cap():
    net = RoadNetwork.line(50)
    types = make_types(net, [(0, 50), (10, 50)], [0.1, 0.1])
    with pytest.raises(CompatSizeError):
        build_compat_table(net, types, T=5, max_entries=10)


@pytest.mark.parametrize("seed", range(12))
def test_table_matches_pointwise_rules(seed):
    inst = random_grid_instance(seed, max_T=3)
    table = inst.compat
    geo = table.geo
    for j, u in table.states():
        for i in range(inst.n_types):
            assert table.shared_length(i, j, u) == shared_trip_length(geo, i, j, u)
            assert table.is_compatible(i, j, u) == is_compatible(geo, i, j, u)
        # waiting states share the u = 0 shared length
        if u < 0:
            for i in range(inst.n_types):
                assert table.shared_length(i, j, u) == table.shared_length(i, j, 0)
        if u >= 1:
            assert j not in table.compatible(j, u)
        else:
            assert j in table.compatible(j, u)


@pytest.mark.parametrize("seed", range(12))
def test_first_clock_properties_on_random_grids(seed):
    inst = random_grid_instance(seed)
    table = inst.compat
    for i, j in product(range(inst.n_types), repeat=2):
        if inst.types[j].length < 2:
            continue
        best, first = first_clock_total_length(table, i, j)
        assert best == first
        for u in range(1, inst.types[j].length):
            if table.is_compatible(i, j, u):
                assert table.is_compatible(i, j, 1)


def test_last_position_precedes_destination():
    inst = random_grid_instance(3)
    geo = inst.compat.geo
    for j, t in enumerate(inst.types):
        assert inst.network.shortest_distance(geo.position(j, t.length - 1), t.destination) == 1


def test_file_round_trip(tmp_path):
    net = RoadNetwork.grid(3, 3, 2)
    types = make_types(net, [(0, 8), (2, 6)], [0.05, 0.02])
    net.write_edge_list(tmp_path / "net.txt")
    write_types_file(tmp_path / "types.txt", types, net)
    net2 = RoadNetwork.read_edge_list(tmp_path / "net.txt")
    types2 = read_types_file(tmp_path / "types.txt", net2)
    assert [(t.origin, t.destination, t.length, t.arrival_prob) for t in types] == \
        [(t.origin, t.destination, t.length, t.arrival_prob) for t in types2]
    assert net.canonical_path(0, 8) == net2.canonical_path(0, 8)


def test_read_edge_list_labels(tmp_path):
    (tmp_path / "n.txt").write_text("# comment\nb a\nc b\n")
    net = RoadNetwork.read_edge_list(tmp_path / "n.txt")
    assert net.shortest_distance(net.index_of("a"), net.index_of("c")) == 2
    (tmp_path / "bad.txt").write_text("a b c\n")
    with pytest.raises(NetworkError):
        RoadNetwork.read_edge_list(tmp_path / "bad.txt")


def test_make_types_validation():
    net = RoadNetwork.line(5)
    with pytest.raises(ValueError):
        make_types(net, [(1, 1)], [0.1])
    with pytest.raises(ValueError):
        make_types(net, [(0, 5), (1, 5)], [0.6, 0.6])


def test_od_pairs_at_distance():
    net = RoadNetwork.grid(3, 3, 1)
    pairs = grid_od_pairs_at_distance(net, range(9), 4)
    assert sorted(pairs) == [(0, 8), (2, 6), (6, 2), (8, 0)]


def test_from_coordinates_segments():
    net = RoadNetwork.from_coordinates([(0, 0), (10, 0), (10, 5)], [(0, 1), (1, 2)], 2.5)
    assert net.shortest_distance(0, 2) == 6
    assert net.nearest_node((9.9, 4.0)) == 2 or net.nearest_node((9.9, 4.0)) >= 3
    with pytest.raises(NetworkError):
        RoadNetwork.from_coordinates([(0, 0), (10, 0)], [(0, 1)], 0.1, max_nodes=20)
