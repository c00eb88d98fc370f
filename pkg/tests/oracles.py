"""Independent reference computations shared by the unit and acceptance tests."""

import itertools

import numpy as np

from sharedrides.fluid import solve_cb
from sharedrides.netgraph import Geometry, is_compatible


def fd_gradient(inst, lam, step=1e-4):
    """Central differences of C; ``kink[i]`` flags one-sided slopes differing > 10%."""
    lam = np.asarray(lam, float)
    c0 = solve_cb(inst, lam).cost
    fd = np.zeros(len(lam))
    kink = np.zeros(len(lam), bool)
    for i in range(len(lam)):
        e = np.zeros(len(lam))
        e[i] = step
        up = solve_cb(inst, lam + e).cost - c0
        down = c0 - solve_cb(inst, lam - e).cost
        fd[i] = (up + down) / (2 * step)
        scale = max(abs(up), abs(down))
        kink[i] = scale > 0 and abs(up - down) > 0.1 * scale
    return fd, kink


def brute_force_match_vars(inst):
    """Match-variable triples (i, j, u) found by checking every state directly."""
    geo = Geometry(inst.network, inst.types)
    out = set()
    for j, tj in enumerate(inst.types):
        for u in range(-inst.T + 1, tj.length):  # an arrival sits alone at -T
            if u >= 1 and not inst.enable_on_trip:
                continue
            for i in range(inst.n_types):
                if is_compatible(geo, i, j, u):
                    out.add((i, j, u))
    return out


def brute_force_matchings(n, edges):
    """Minimum total weight over all matchings, by enumerating edge subsets."""
    best = 0.0
    for k in range(1, n // 2 + 1):
        for sub in itertools.combinations(edges, k):
            used = [v for a, b, _ in sub for v in (a, b)]
            if len(set(used)) == len(used):
                best = min(best, sum(w for _, _, w in sub))
    return best
