import csv

import numpy as np
import pytest

from oracles import brute_force_match_vars, fd_gradient
from sharedrides.fluid import (FluidInstance, build_cb, cost_gradient, dump_solution_csv,
                               evaluate, fluid_profit, solve_cb)
from sharedrides.harness.instances import gen_example1, random_grid_instance
from sharedrides.lpcore import check_solution
from sharedrides.netgraph import RoadNetwork, make_types


def solo_instance(cost=0.7, **kw):
    net = RoadNetwork.line(100)
    return FluidInstance(net, make_types(net, [(0, 100)], [0.1]), cost, **kw)


def test_single_type_structure():
    inst = solo_instance()
    lp = build_cb(inst, [0.15])
    assert inst.structure.n_y == 100
    assert inst.structure.n_x == 0
    assert lp.n_vars == 100


def test_single_type_cost_gradient_and_profit():
    inst = solo_instance()
    sol = solve_cb(inst, [0.15])
    assert sol.cost == pytest.approx(1.05)
    assert cost_gradient(sol, inst)[0] == pytest.approx(0.1 * 0.7 * 100)
    assert sol.gamma[0] == pytest.approx(70.0)
    assert fluid_profit(inst, [0.15]) == pytest.approx(0.225)
    assert 0.1 * 100 * (1 - 0.7) ** 2 / 4 == pytest.approx(0.225)


def test_zero_and_full_conversion():
    inst = gen_example1(L=30, l=15, total_rate=0.2)
    sol = solve_cb(inst, [0.0, 0.0])
    assert sol.cost == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(sol.y, 0) and np.allclose(sol.x, 0)
    assert fluid_profit(inst, [0.0, 0.0]) == pytest.approx(0.0, abs=1e-12)
    assert fluid_profit(inst, [1.0, 1.0]) <= 0.0


def test_lam_validation():
    with pytest.raises(ValueError):
        solve_cb(solo_instance(), [1.5])


def test_instance_validation():
    with pytest.raises(ValueError):
        solo_instance(cost=0.0)
    with pytest.raises(ValueError):
        solo_instance(T=-1)
    with pytest.raises(ValueError):
        solo_instance(fare="per_hour")
    assert solo_instance(T=5, enable_pre_trip=False).T == 0


def test_example1_match_variable_count():
    inst = gen_example1(L=100, l=50, total_rate=0.1)
    st = inst.structure
    got = set(zip(st.x_i.tolist(), st.x_j.tolist(), st.x_u.tolist()))
    assert got == brute_force_match_vars(inst)
    # T = 0: only the short type joining a long rider at u = 1..50
    assert st.n_x == 50


@pytest.mark.parametrize("seed", range(10))
def test_random_structure_against_brute_force(seed):
    inst = random_grid_instance(seed, max_T=4, max_length=20)
    st = inst.structure
    got = set(zip(st.x_i.tolist(), st.x_j.tolist(), st.x_u.tolist()))
    assert got == brute_force_match_vars(inst)


@pytest.mark.parametrize("seed", range(8))
def test_solution_invariants(seed):
    inst = random_grid_instance(seed, max_T=4, max_length=20)
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.05, 0.95, inst.n_types)
    sol = solve_cb(inst, lam)
    st = sol.structure
    Lam = inst.arrival * lam
    chk = check_solution(build_cb(inst, lam), sol.lp)
    assert chk["primal_residual"] < 1e-7
    # demand balance
    for i in range(inst.n_types):
        took = sum(sol.x[k] for k in range(st.n_x) if st.x_i[k] == i)
        assert took + sol.y_of(i, -inst.T) == pytest.approx(Lam[i], abs=1e-9)
    # flow balance
    for j, t in enumerate(inst.types):
        for u in range(-inst.T + 1, t.length):
            into = sum(sol.x[k] for k in range(st.n_x) if st.x_j[k] == j and st.x_u[k] == u)
            assert into + sol.y_of(j, u) == pytest.approx(sol.y_of(j, u - 1), abs=1e-9)
    # ratio rows
    total = Lam.sum()
    for k in range(st.n_x):
        i, j, u = int(st.x_i[k]), int(st.x_j[k]), int(st.x_u[k])
        assert Lam[i] * sol.y_of(j, u) >= (1 - total) * sol.x[k] - 1e-9
    # duals on ratio rows are nonnegative
    assert np.all(sol.eta >= -1e-9)
    # waiting states carry no cost: cost equals the priced flows
    priced = sum(inst.cost * sol.y_of(i, u) for i, t in enumerate(inst.types)
                 for u in range(0, t.length))
    priced += sum(inst.cost * inst.compat.shared_length(int(st.x_i[k]), int(st.x_j[k]),
                                                        int(st.x_u[k])) * sol.x[k]
                  for k in range(st.n_x))
    assert priced == pytest.approx(sol.cost, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_cost_monotone_in_lam(seed):
    inst = random_grid_instance(seed, max_T=3, max_length=20)
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.0, 0.8, inst.n_types)
    base = solve_cb(inst, lam).cost
    for i in range(inst.n_types):
        bumped = lam.copy()
        bumped[i] += 0.15
        assert solve_cb(inst, bumped).cost >= base - 1e-9


@pytest.mark.parametrize("seed", range(6))
def test_ratio_removal_relaxes(seed):
    inst = random_grid_instance(seed, max_T=3, max_length=20)
    relaxed = random_grid_instance(seed, max_T=3, max_length=20)
    relaxed.enable_ratio = False
    lam = np.full(inst.n_types, 0.6)
    assert solve_cb(relaxed, lam).cost <= solve_cb(inst, lam).cost + 1e-9
    sol = solve_cb(relaxed, lam)
    assert np.allclose(cost_gradient(sol, relaxed), relaxed.arrival * sol.gamma)


@pytest.mark.parametrize("seed", range(6))
def test_gradient_against_finite_differences(seed):
    inst = random_grid_instance(seed, max_T=3, max_length=15)
    lam = np.random.default_rng(seed).uniform(0.1, 0.9, inst.n_types)
    fd, kink = fd_gradient(inst, lam)
    g = cost_gradient(solve_cb(inst, lam), inst)
    for i in np.flatnonzero(~kink):
        assert g[i] == pytest.approx(fd[i], rel=1e-3, abs=1e-9)


def test_gradient_near_zero():
    inst = gen_example1(L=30, l=15, total_rate=0.2)
    lam = np.array([1e-3, 1e-3])
    fd, kink = fd_gradient(inst, lam, step=1e-4)
    g = cost_gradient(solve_cb(inst, lam), inst)
    for i in np.flatnonzero(~kink):
        assert g[i] == pytest.approx(fd[i], rel=1e-3)


def test_backends_agree():
    inst = random_grid_instance(2, max_T=3, max_length=15)
    lam = np.full(inst.n_types, 0.4)
    a = solve_cb(inst, lam, method="simplex").cost
    b = solve_cb(inst, lam, method="highs").cost
    assert a == pytest.approx(b, rel=1e-8)


def test_per_trip_fare():
    inst = solo_instance(fare="per_trip")
    assert inst.fare_of(0, 0.15) == pytest.approx(0.85)
    profit, _ = evaluate(inst, [0.15])
    assert profit == pytest.approx(0.1 * 0.15 * 0.85 - 1.05)


def test_dump_csv(tmp_path):
    inst = gen_example1(L=20, l=10, total_rate=0.2, T=2)
    sol = solve_cb(inst, [0.3, 0.3])
    dump_solution_csv(sol, inst, tmp_path / "sol.csv")
    rows = list(csv.DictReader(open(tmp_path / "sol.csv")))
    n_rows = build_cb(inst, [0.3, 0.3]).n_rows
    assert len(rows) == inst.structure.n_y + inst.structure.n_x + n_rows
    assert all("np." not in r["value"] + r["dual"] for r in rows)
