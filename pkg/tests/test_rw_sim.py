"""Tests for the variable-speed walk simulator and its tail estimates."""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats
from scipy.linalg import expm

from pamtree.gw_tree import FrontierError, Tree, binary, generate_gw, generate_kesten, parse_tree, poisson1
from pamtree.rw_sim import (
    degree_product_prefactor,
    exit_probability,
    exit_time_bound,
    hitting_probability,
    hitting_time_bound,
    simulate_vsrw,
)


def path_tree(n: int) -> Tree:
    parent = np.arange(-1, n - 1, dtype=np.int64)
    depth = np.arange(n, dtype=np.int32)
    n_children = np.ones(n, dtype=np.int64)
    n_children[-1] = 0
    return Tree(family="custom", seed=-1, radius=-1, parent=parent,
                depth=depth, backbone=np.zeros(n, dtype=bool), n_children=n_children)


STAR_TREE = """\
# family=custom seed=0 radius=-1
0 -1 0 0 4
1 0 1 0 0
2 0 1 0 0
3 0 1 0 0
4 0 1 0 0
"""

# root with one ordinary leaf and one frontier child
CUT_TREE = """\
# family=custom seed=0 radius=1
0 -1 0 0 2
1 0 1 0 0
2 0 1 0 -1
"""


# ---------------------------------------------------------------------------
# trajectory mechanics
# ---------------------------------------------------------------------------


def test_trajectory_invariants():
    tree = generate_kesten(poisson1(), radius=30, rng=1)
    traj = simulate_vsrw(tree, 0, 25.0, rng=7)
    assert traj.valid and traj.termination == "horizon"
    assert np.all(np.diff(traj.times) > 0)
    assert traj.times[0] == 0.0 and traj.vertices[0] == 0
    for a, b in zip(traj.vertices, traj.vertices[1:]):
        assert tree.parent[a] == b or tree.parent[b] == a
    # deterministic under a fixed generator seed
    again = simulate_vsrw(tree, 0, 25.0, rng=7)
    assert np.array_equal(traj.vertices, again.vertices)
    assert np.array_equal(traj.times, again.times)


def test_degree_one_start():
    tree = path_tree(3)
    firsts = []
    for i in range(4000):
        traj = simulate_vsrw(tree, 0, 100.0, rng=i)
        assert traj.vertices[1] == 1  # unique neighbour
        firsts.append(traj.times[1])
    mean = np.mean(firsts)
    assert abs(mean - 1.0) < 3.0 / math.sqrt(len(firsts))  # Exp(1) has sd 1


def test_mean_holding_time_is_inverse_degree():
    tree = path_tree(3)  # middle vertex has degree 2
    traj = simulate_vsrw(tree, 0, 150_000.0, rng=3)
    holds = traj.holding_times(1)
    assert len(holds) > 80_000
    se = holds.std() / math.sqrt(len(holds))
    assert abs(holds.mean() - 0.5) < 3 * se


def test_holding_times_exponential_ks():
    tree = path_tree(3)
    traj = simulate_vsrw(tree, 0, 20_000.0, rng=5)
    holds = traj.holding_times(1)
    assert len(holds) > 5000
    res = stats.kstest(holds, "expon", args=(0, 0.5))  # Exp(rate 2)
    assert res.pvalue > 0.01


def test_neighbour_uniformity_chi_squared():
    tree = parse_tree(STAR_TREE)
    traj = simulate_vsrw(tree, 0, 40_000.0, rng=11)
    at_root = traj.vertices[:-1] == 0
    targets = traj.vertices[1:][at_root]
    counts = np.bincount(targets, minlength=5)[1:]
    assert counts.sum() > 5000
    res = stats.chisquare(counts)
    assert res.pvalue > 0.01


def test_stop_at_target():
    tree = path_tree(5)
    hit = 0
    for i in range(300):
        traj = simulate_vsrw(tree, 0, 20.0, rng=i, target=3)
        if traj.termination == "hit-target":
            assert traj.vertices[-1] == 3
            hit += 1
        else:
            assert traj.termination == "horizon"
            assert not np.any(traj.vertices == 3)
    assert hit > 0
    # starting on the target is an immediate hit at time zero
    instant = simulate_vsrw(tree, 3, 5.0, rng=0, target=3)
    assert instant.termination == "hit-target" and len(instant.vertices) == 1


def test_stop_at_radius():
    tree = generate_kesten(poisson1(), radius=20, rng=2)
    traj = simulate_vsrw(tree, 0, 50.0, rng=13, radius=4)
    if traj.termination == "exited-ball":
        assert tree.depth[traj.vertices[-1]] == 4
        assert np.all(tree.depth[traj.vertices[:-1]] < 4)


def test_frontier_contact_flags_invalid():
    tree = parse_tree(CUT_TREE)
    # force the walk onto the frontier child by making it the target's rival
    for i in range(50):
        traj = simulate_vsrw(tree, 0, 1000.0, rng=i, target=None)
        if traj.vertices[1] == 2:
            assert traj.termination == "frontier-contact"
            assert not traj.valid
            break
    else:
        pytest.fail("no walk reached the frontier child in 50 tries")
    with pytest.raises(FrontierError):
        hitting_probability(tree, 1, 50.0, 1000, rng=1)
    with pytest.raises(FrontierError):
        exit_probability(tree, 2, 50.0, 1000, rng=1)


# ---------------------------------------------------------------------------
# hitting probability
# ---------------------------------------------------------------------------


def test_hitting_bound_deep_vertex():
    tree = generate_kesten(poisson1(), radius=25, rng=6)
    v = int([u for u in tree.backbone_ids() if tree.depth[u] == 5][0])
    t = 1.0  # depth 5 > e*t
    est, se = hitting_probability(tree, v, t, 3000, rng=8)
    assert est <= hitting_time_bound(5, t) + 3 * se


def test_hitting_bound_clips_to_one():
    assert hitting_time_bound(2, 1.0) == 1.0  # depth <= e t
    assert hitting_time_bound(0, 1.0) == 1.0
    assert hitting_time_bound(5, 1.0) == pytest.approx(
        math.exp(-5 * (math.log(5) - 1.0)))


def test_hitting_monotone_in_t_and_saturates():
    tree = path_tree(6)
    grid = [0.5, 1.0, 2.0, 5.0, 30.0]
    ests = [hitting_probability(tree, 1, t, 2000, rng=21)[0] for t in grid]
    # coupled substreams make the nesting exact, not just statistical
    assert all(b >= a for a, b in zip(ests, ests[1:]))
    assert ests[-1] >= 0.95


def test_hitting_rejects_small_samples():
    tree = path_tree(3)
    with pytest.raises(ValueError):
        hitting_probability(tree, 1, 1.0, 999, rng=0)


# ---------------------------------------------------------------------------
# exit probability
# ---------------------------------------------------------------------------


def test_exit_vanishes_at_tiny_t():
    tree = generate_kesten(poisson1(), radius=12, rng=9)
    est, _ = exit_probability(tree, 6, 1e-3, 1000, rng=2)
    assert est == 0.0


def test_exit_bound_far_regime():
    tree = generate_kesten(poisson1(), radius=25, rng=10)
    r, t = 10, 0.8
    est, se = exit_probability(tree, r, t, 3000, rng=3)
    assert est <= exit_time_bound(r, t) + 3 * se
    assert exit_time_bound(r, t) == pytest.approx(
        math.exp(-2.0 * math.log(10.0 / (math.e * 0.8))))


def test_exit_coupled_monotonicity():
    tree = generate_kesten(poisson1(), radius=25, rng=12)
    seed = 17
    in_t = [exit_probability(tree, 6, t, 1500, rng=seed)[0] for t in (0.5, 1.5, 4.0)]
    assert in_t[0] <= in_t[1] <= in_t[2]
    in_r = [exit_probability(tree, r, 2.0, 1500, rng=seed)[0] for r in (3, 5, 8)]
    assert in_r[0] >= in_r[1] >= in_r[2]


# ---------------------------------------------------------------------------
# heat-kernel consistency and diagnostics
# ---------------------------------------------------------------------------


def test_occupation_matches_heat_kernel():
    tree = generate_gw(binary(), rng=10, size_cap=10_000)  # full 51-vertex tree
    n = len(tree)
    t = 1.5
    lap = tree.adjacency().toarray() - np.diag([tree.degree(v) for v in range(n)])
    kernel = expm(t * lap)[:, 0]
    n_walks = 20_000
    counts = np.zeros(n)
    for i in range(n_walks):
        traj = simulate_vsrw(tree, 0, t, rng=np.random.default_rng((31, i)))
        counts[traj.vertices[-1]] += 1
    est = counts / n_walks
    se = np.sqrt(np.clip(est * (1 - est), 1e-12, None) / n_walks)
    # 4 sigma per vertex: 51 simultaneous comparisons
    assert np.all(np.abs(est - kernel) <= 4 * se + 1e-4)


def test_degree_product_prefactor():
    tree = path_tree(4)
    # ancestors of vertex 3 have degrees (1, 2, 2)
    assert degree_product_prefactor(tree, 3) == pytest.approx(0.25)
    star = parse_tree(STAR_TREE)
    assert degree_product_prefactor(star, 2) == pytest.approx(0.25)
    assert degree_product_prefactor(star, 0) == 1.0
