"""Tests for the domain solver, oracles, path bounds, and MC estimator."""

from __future__ import annotations

import io
import math

import numpy as np
import pytest
from scipy.linalg import eigh, expm

from pamtree.gw_tree import (
    FrontierError,
    Tree,
    ball,
    binary,
    direct_path,
    generate_gw,
    generate_kesten,
    poisson1,
)
from pamtree.pam_solver import (
    DENSE_CAP,
    _positive_profile,
    adaptive_domain,
    assemble_hamiltonian,
    evolve,
    feynman_kac_mc,
    initial_state,
    log_mass_estimate,
    make_domain,
    solve_log_estimate,
    path_contribution_bounds,
    path_expectation,
    restricted_mass_ratio,
    restricted_solution,
    solve_oracle_dense,
    solve_oracle_log,
    time_reversal_check,
    write_profile,
)
from pamtree.potential import PotentialField, sample_field
from pamtree.scales import derive_params

PARAMS = derive_params(alpha=4.0, beta=2.0)


def path_tree(n: int) -> Tree:
    parent = np.arange(-1, n - 1, dtype=np.int64)
    depth = np.arange(n, dtype=np.int32)
    n_children = np.ones(n, dtype=np.int64)
    n_children[-1] = 0
    return Tree(family="custom", seed=-1, radius=-1, parent=parent,
                depth=depth, backbone=np.zeros(n, dtype=bool), n_children=n_children)


def field_on(tree: Tree, values, alpha: float = 4.0) -> PotentialField:
    return PotentialField(alpha=alpha, values=np.asarray(values, dtype=float))


def random_instance(tree_seed: int, field_seed: int, radius: int, ball_r: int):
    tree = generate_kesten(poisson1(), radius=radius, rng=tree_seed)
    field = sample_field(tree, alpha=4.0, rng=field_seed)
    dom = make_domain(tree, ball(tree, 0, ball_r))
    return tree, field, dom


# ---------------------------------------------------------------------------
# domain
# ---------------------------------------------------------------------------


def test_make_domain_validation():
    tree = path_tree(5)
    with pytest.raises(ValueError):
        make_domain(tree, np.array([1, 2]))  # no root
    with pytest.raises(ValueError):
        make_domain(tree, np.array([0, 2]))  # disconnected
    with pytest.raises(ValueError):
        make_domain(tree, np.array([0, 1, 1]))  # repeat
    capped = generate_kesten(poisson1(), radius=3, rng=1)
    frontier = np.flatnonzero(capped.n_children == -1)
    with pytest.raises(FrontierError):
        make_domain(capped, np.arange(frontier[0] + 1))


def test_domain_uses_full_tree_degrees():
    tree, _, dom = random_instance(4, 4, radius=6, ball_r=2)
    # boundary vertices keep their full degree even though their children
    # fall outside the domain
    assert np.array_equal(dom.degrees, tree.degrees(dom.ids))
    boundary = dom.ids[tree.depth[dom.ids] == 2]
    induced = np.asarray(dom.adjacency.sum(axis=1)).ravel()
    assert (dom.degrees[dom.row_of[boundary]] > induced[dom.row_of[boundary]]).any()


# ---------------------------------------------------------------------------
# Hamiltonian assembly
# ---------------------------------------------------------------------------


def test_hamiltonian_single_vertex():
    tree = path_tree(2)
    field = field_on(tree, [4.5, 1.0])
    dom = make_domain(tree, np.array([0]))
    h = assemble_hamiltonian(tree, field, dom).toarray()
    assert h.shape == (1, 1)
    assert h[0, 0] == pytest.approx(4.5 - 1.0)


def test_hamiltonian_isolated_edge():
    tree = path_tree(2)
    field = field_on(tree, [0.0, 0.0])
    dom = make_domain(tree, np.array([0, 1]))
    h = assemble_hamiltonian(tree, field, dom).toarray()
    assert np.allclose(h, [[-1.0, 1.0], [1.0, -1.0]])


def test_hamiltonian_symmetry():
    tree, field, dom = random_instance(8, 9, radius=7, ball_r=4)
    h = assemble_hamiltonian(tree, field, dom)
    assert (h - h.T).nnz == 0


# ---------------------------------------------------------------------------
# dense oracles
# ---------------------------------------------------------------------------


def test_oracle_t0_is_point_mass():
    tree, field, dom = random_instance(2, 3, radius=6, ball_r=3)
    u = solve_oracle_dense(tree, field, dom, 0.0)
    expect = np.zeros(len(dom))
    expect[dom.root_row] = 1.0
    assert np.allclose(u, expect, atol=1e-12)


def test_oracle_isolated_edge_closed_form():
    tree = path_tree(2)
    field = field_on(tree, [0.0, 0.0])
    dom = make_domain(tree, np.array([0, 1]))
    for t in (0.3, 0.7, 2.0):
        u = solve_oracle_dense(tree, field, dom, t)
        assert u[0] == pytest.approx((1 + math.exp(-2 * t)) / 2, rel=1e-12)
        assert u[1] == pytest.approx((1 - math.exp(-2 * t)) / 2, rel=1e-12)


def test_oracle_mass_conservation_on_full_tree():
    # zero potential on a whole finite tree: no boundary, no growth
    tree = generate_gw(binary(), rng=10, size_cap=10_000)
    assert tree is not None and len(tree) == 51
    field = field_on(tree, np.zeros(len(tree)))
    dom = make_domain(tree, np.arange(len(tree)))
    for t in (1.0, 2.5):
        assert solve_oracle_dense(tree, field, dom, t).sum() == pytest.approx(1.0, abs=1e-12)


def test_oracle_against_expm():
    tree, field, dom = random_instance(5, 6, radius=7, ball_r=4)
    h = assemble_hamiltonian(tree, field, dom).toarray()
    t = 1.5
    u = solve_oracle_dense(tree, field, dom, t)
    ref = expm(t * h)[:, dom.root_row]
    assert np.max(np.abs(u - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_oracle_size_cap_and_overflow_guard():
    n = DENSE_CAP + 1
    tree = path_tree(n)
    field = field_on(tree, np.ones(n))
    with pytest.raises(ValueError):
        solve_oracle_dense(tree, field, make_domain(tree, np.arange(n)), 1.0)
    small = path_tree(3)
    dom = make_domain(small, np.arange(3))
    with pytest.raises(OverflowError):
        solve_oracle_dense(small, field_on(small, [300.0, 1.0, 1.0]), dom, 5.0)


def test_log_oracle_matches_dense():
    tree, field, dom = random_instance(6, 7, radius=7, ball_r=4)
    t = 2.0
    u = solve_oracle_dense(tree, field, dom, t)
    w, big_l = solve_oracle_log(tree, field, dom, t)
    assert big_l == pytest.approx(math.log(u.sum()), rel=1e-12)
    assert np.allclose(w, u / u.sum(), atol=1e-12)
    # and it stays finite where the raw profile would overflow
    hot = field_on(tree, np.where(np.isnan(field.values), np.nan, 300.0))
    w2, l2 = solve_oracle_log(tree, hot, dom, 10.0)
    assert math.isfinite(l2) and l2 > 2500.0
    assert w2.sum() == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# adaptive integrator
# ---------------------------------------------------------------------------


def test_evolve_constant_potential():
    tree = generate_gw(binary(), rng=10, size_cap=10_000)
    c = 1.7
    field = field_on(tree, np.full(len(tree), c))
    dom = make_domain(tree, np.arange(len(tree)))
    t = 1.3
    state = evolve(initial_state(dom), field, t, tol=1e-9)
    assert state.L == pytest.approx(c * t, abs=1e-8)
    u = solve_oracle_dense(tree, field, dom, t)
    assert np.max(np.abs(state.w - u / u.sum())) < 1e-8
    assert state.stats["n_accepted"] > 0


def test_evolve_matches_oracle_on_random_domain():
    tree = generate_kesten(poisson1(), radius=40, rng=11)
    field = sample_field(tree, alpha=4.0, rng=12)
    r = next(r for r in range(1, 40) if (tree.depth <= r).sum() >= 200)
    dom = make_domain(tree, ball(tree, 0, r))
    assert len(dom) >= 200
    xi_max = field.values[dom.ids].max()
    t = 10.0 / xi_max
    state = evolve(initial_state(dom), field, t, tol=1e-8)
    w, big_l = solve_oracle_log(tree, field, dom, t)
    assert state.L == pytest.approx(big_l, rel=1e-6)
    assert np.max(np.abs(state.w - w)) <= 1e-6 * w.max()


def test_evolve_error_scales_with_tol():
    tree, field, dom = random_instance(3, 5, radius=8, ball_r=4)
    t = 1.0
    w, big_l = solve_oracle_log(tree, field, dom, t)
    for tol in (1e-5, 1e-8):
        state = evolve(initial_state(dom), field, t, tol=tol)
        assert abs(state.L - big_l) <= 10 * tol * max(1.0, abs(big_l))
        assert np.max(np.abs(state.w - w)) <= 10 * tol


def test_evolve_restart_equivalence():
    tree, field, dom = random_instance(7, 8, radius=7, ball_r=3)
    direct = evolve(initial_state(dom), field, 2.0, tol=1e-9)
    half = evolve(initial_state(dom), field, 1.0, tol=1e-9)
    stitched = evolve(half, field, 2.0, tol=1e-9)
    assert stitched.t == pytest.approx(2.0)
    assert stitched.L == pytest.approx(direct.L, abs=1e-7)
    assert np.max(np.abs(stitched.w - direct.w)) < 1e-7
    assert stitched.stats["n_accepted"] >= half.stats["n_accepted"]


def test_evolve_normalisation_invariants():
    tree, field, dom = random_instance(9, 10, radius=7, ball_r=4)
    state = evolve(initial_state(dom), field, 3.0, tol=1e-7)
    assert state.w.sum() == pytest.approx(1.0, abs=1e-9)
    assert state.w.min() >= 0.0
    assert math.isfinite(state.L)


def test_evolve_domain_monotonicity():
    tree = generate_kesten(poisson1(), radius=10, rng=13)
    field = sample_field(tree, alpha=4.0, rng=14)
    t = 2.0
    logs = []
    for r in (2, 3, 4):
        dom = make_domain(tree, ball(tree, 0, r))
        logs.append(evolve(initial_state(dom), field, t, tol=1e-9).L)
    assert logs[0] <= logs[1] + 1e-9 <= logs[2] + 2e-9


def test_evolve_rejects_bad_arguments():
    tree, field, dom = random_instance(2, 3, radius=6, ball_r=3)
    state = evolve(initial_state(dom), field, 1.0, tol=1e-8)
    with pytest.raises(ValueError):
        evolve(state, field, 0.5)
    with pytest.raises(ValueError):
        evolve(state, field, 2.0, tol=1e-2)


def test_evolve_rayleigh_slope():
    # late-time log-mass slope equals the principal eigenvalue
    tree, field, dom = random_instance(9, 109, radius=6, ball_r=3)
    h = assemble_hamiltonian(tree, field, dom).toarray()
    lam = eigh(h, eigvals_only=True)
    gap = lam[-1] - lam[-2]
    t1 = 50.0 / gap
    s1 = evolve(initial_state(dom), field, t1, tol=1e-10)
    s2 = evolve(s1, field, 1.2 * t1, tol=1e-10)
    slope = (s2.L - s1.L) / (0.2 * t1)
    assert slope == pytest.approx(lam[-1], abs=1e-6)


# ---------------------------------------------------------------------------
# domain selection
# ---------------------------------------------------------------------------


def test_adaptive_domain_flat_field_stops_immediately():
    # minimum potential everywhere: no far-field mass, first radius passes
    tree = generate_kesten(poisson1(), radius=84, rng=15)
    field = field_on(tree, np.where(tree.n_children == -1, np.nan, 1.0))
    t = 5.0
    r_first = int(np.ceil(PARAMS.scale_R(t)))
    assert r_first == 41
    dom = adaptive_domain(tree, field, PARAMS, t)
    assert np.array_equal(dom.ids, ball(tree, 0, r_first))


def test_adaptive_domain_infinite_tol():
    tree = generate_kesten(poisson1(), radius=8, rng=16)
    field = sample_field(tree, alpha=4.0, rng=16)
    t = 2.0
    dom = adaptive_domain(tree, field, PARAMS, t, growth_tol=math.inf)
    assert np.array_equal(dom.ids, ball(tree, 0, int(np.ceil(PARAMS.scale_R(t)))))


def test_adaptive_domain_reports_required_radius():
    tree = generate_kesten(poisson1(), radius=50, rng=15)
    field = field_on(tree, np.where(tree.n_children == -1, np.nan, 1.0))
    with pytest.raises(FrontierError, match="radius 82"):
        adaptive_domain(tree, field, PARAMS, 5.0)


def test_log_mass_order_invariance():
    tree, field, dom = random_instance(5, 6, radius=7, ball_r=4)
    rng = np.random.default_rng(0)
    shuffled = make_domain(tree, rng.permutation(dom.ids))
    t = 2.0
    _, l_a = solve_oracle_log(tree, field, dom, t)
    _, l_b = solve_oracle_log(tree, field, shuffled, t)
    assert l_a == pytest.approx(l_b, rel=1e-12)


def _above_cap_instance():
    tree = generate_kesten(poisson1(), radius=90, rng=17)
    field = sample_field(tree, alpha=4.0, rng=18)
    dom = make_domain(tree, ball(tree, 0, 80))
    assert len(dom) > DENSE_CAP
    return tree, field, dom


def test_solve_log_estimate_krylov_route_matches_spectral_sum():
    # above the dense cap with t*xi_max small: the exponential-action route;
    # the reference is the full spectral sum recomputed here
    tree, field, dom = _above_cap_instance()
    t = 1.0
    lam, q = eigh(assemble_hamiltonian(tree, field, dom).toarray())
    scaled = np.clip(q @ (q[dom.root_row] * np.exp(t * (lam - lam[-1]))), 0.0, None)
    total = float(scaled.sum())
    w, got = solve_log_estimate(tree, field, dom, t)
    assert t * field.values[dom.ids].max() <= 600.0
    assert got == pytest.approx(t * lam[-1] + math.log(total), rel=1e-9)
    assert np.max(np.abs(w - scaled / total)) < 1e-12
    assert log_mass_estimate(tree, field, dom, t) == got


def test_solve_log_estimate_truncated_route_against_integrator():
    # beyond the exponential-action overflow threshold the truncated
    # eigendecomposition takes over.  On this instance the dominant mode's
    # start amplitude is below float resolution, so the log total saturates
    # at the rounding floor: assert the documented bracket
    # [integrator value, t lam_1 + log sum(phi_1)] instead of equality, and
    # the normalised profile pointwise against the integrator.
    tree, field, dom = _above_cap_instance()
    t = 95.0
    assert t * field.values[dom.ids].max() > 600.0
    ref = evolve(initial_state(dom), field, t, tol=1e-10)
    w, got = solve_log_estimate(tree, field, dom, t)
    assert np.max(np.abs(w - ref.w)) < 1e-9
    lam, q = eigh(assemble_hamiltonian(tree, field, dom).toarray())
    assert ref.L - 1e-6 <= got <= t * lam[-1] + math.log(abs(q[:, -1].sum())) + 1e-6


def test_positive_profile_noise_sign_flip():
    # every surviving amplitude at rounding noise: the sum's sign is debris,
    # so the oriented dominant mode comes back instead of a failure --
    # whether the noise landed negative, positive, or mixed across entries
    phi = np.array([0.5, 0.8, 0.33])
    for summed in (-1e-18 * phi, 4e-18 * phi, np.array([1e-33, -5e-18, 2e-19])):
        out = _positive_profile(summed, -phi, np.array([-5e-18]), guard=1e-8)
        assert np.allclose(out / out.sum(), phi / phi.sum(), rtol=1e-12)
    with pytest.raises(RuntimeError, match="cancellation"):
        _positive_profile(np.array([1.0, -0.5]), np.array([1.0, 0.0]),
                          np.array([0.7, 0.7]), guard=1e-8)


# ---------------------------------------------------------------------------
# restricted solutions
# ---------------------------------------------------------------------------


def test_restricted_solution_pinned():
    # O - a - b with unit potential, marked set {b}; frozen dense-difference
    tree = path_tree(3)
    field = field_on(tree, [1.0, 1.0, 1.0])
    lam_ids = np.arange(3)
    u, u_om = restricted_solution(tree, field, lam_ids, np.array([2]), 1.0)
    assert u == pytest.approx(
        [1.42864982335912, 0.860982181740811, 0.428649823359117], rel=1e-10)
    assert u_om == pytest.approx(
        [0.031353306859073, 0.119954260217233, 0.428649823359117], rel=1e-8)


def test_restricted_solution_degenerate_marked_sets():
    tree, field, dom = random_instance(3, 4, radius=7, ball_r=3)
    lam_ids = dom.ids
    t = 1.5
    u, u_all = restricted_solution(tree, field, lam_ids, lam_ids, t)
    assert np.array_equal(u, u_all)
    _, u_none = restricted_solution(tree, field, lam_ids, np.array([], dtype=np.int64), t)
    assert not u_none.any()
    _, u_root = restricted_solution(tree, field, lam_ids, np.array([0]), t)
    assert np.array_equal(u_root, u)


def test_restricted_solution_sandwich_and_exactness():
    tree, field, dom = random_instance(6, 2, radius=8, ball_r=4)
    lam_ids = dom.ids
    omega = lam_ids[-2:]
    u, u_om = restricted_solution(tree, field, lam_ids, omega, 2.0)
    assert np.all(u_om >= 0.0)
    assert np.all(u_om <= u + 1e-12 * u.max())
    rows = dom.row_of[omega]
    assert np.array_equal(u_om[rows], u[rows])  # marked rows carry full mass


def test_restricted_solution_cut_component():
    # marking a cut vertex leaves the far side reachable only through it
    tree = path_tree(4)
    field = field_on(tree, np.ones(4))
    u, u_om = restricted_solution(tree, field, np.arange(4), np.array([1]), 1.0)
    assert u_om[1] == u[1]
    assert u_om[2] == pytest.approx(u[2], rel=1e-12)
    assert u_om[3] == pytest.approx(u[3], rel=1e-12)
    assert u_om[0] < u[0]


def test_restricted_mass_ratio_matches_raw_and_survives_large_t():
    tree, field, dom = random_instance(6, 2, radius=8, ball_r=4)
    lam_ids = dom.ids
    omega = lam_ids[-2:]
    t = 2.0
    u, u_om = restricted_solution(tree, field, lam_ids, omega, t)
    rest_rows = dom.row_of[np.setdiff1d(lam_ids, omega)]
    want = u_om[rest_rows].sum() / u_om.sum()
    assert restricted_mass_ratio(tree, field, lam_ids, omega, t) == pytest.approx(
        want, rel=1e-10)
    big = restricted_mass_ratio(tree, field, lam_ids, omega, 400.0)
    assert 0.0 <= big <= 1.0


# ---------------------------------------------------------------------------
# time reversal
# ---------------------------------------------------------------------------


def test_time_reversal_identity():
    tree, field, dom = random_instance(13, 13, radius=12, ball_r=8)
    assert len(dom) == 99
    fwd, bwd, disc = time_reversal_check(tree, field, dom, 1.0, 0)
    assert fwd == bwd
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        v = int(rng.choice(dom.ids))
        t = float(0.2 + 2.8 * rng.random())
        fwd, bwd, disc = time_reversal_check(tree, field, dom, t, v)
        worst = max(worst, disc)
        # cross-route agreement with the eigendecomposition oracle
        u = solve_oracle_dense(tree, field, dom, t)
        assert fwd == pytest.approx(u[dom.row_of[v]], rel=1e-8)
    assert worst <= 1e-9


# ---------------------------------------------------------------------------
# path bounds
# ---------------------------------------------------------------------------


def test_path_bounds_single_vertex():
    tree = path_tree(2)
    field = field_on(tree, [3.0, 1.0])  # g(0) = 2
    lo, hi = path_contribution_bounds(tree, field, [0], 1.5)
    assert lo == hi == pytest.approx(math.exp(1.5 * 2.0))
    assert path_expectation(tree, field, [0], 1.5) == pytest.approx(lo)


def test_path_bounds_two_vertex_pinned():
    # adjusted values (0, 5) at t = 1: the n = 1 lower bound is exact
    tree = path_tree(2)
    field = field_on(tree, [1.0, 6.0])
    lo, hi = path_contribution_bounds(tree, field, [0, 1], 1.0)
    assert hi == pytest.approx(math.exp(5.0) / 5.0)
    assert lo == pytest.approx(math.exp(5.0) * (1 - math.exp(-5.0)) / 5.0)
    truth = path_expectation(tree, field, [0, 1], 1.0)
    assert truth == pytest.approx((math.exp(5.0) - 1.0) / 5.0, rel=1e-12)
    assert lo == pytest.approx(truth, rel=1e-12)
    assert truth <= hi


def test_path_bounds_tie_flags_infinity():
    tree = path_tree(2)
    field = field_on(tree, [2.0, 2.0])  # equal adjusted values
    t = 1.3
    lo, hi = path_contribution_bounds(tree, field, [0, 1], t)
    assert math.isinf(hi)
    truth = path_expectation(tree, field, [0, 1], t)
    assert truth == pytest.approx(t * math.exp(t * 1.0), rel=1e-12)
    assert lo == pytest.approx(truth, rel=1e-12)  # tie limit keeps it exact


def test_path_bounds_sandwich_simple_paths():
    tree = generate_kesten(poisson1(), radius=9, rng=20)
    field = sample_field(tree, alpha=4.0, rng=21)
    ids = ball(tree, 0, 5)
    rng = np.random.default_rng(7)
    checked = 0
    for v in rng.choice(ids[1:], size=8, replace=False):
        path = direct_path(tree, 0, int(v))
        for t in (0.5, 2.0):
            lo, hi = path_contribution_bounds(tree, field, path, t)
            truth = path_expectation(tree, field, path, t)
            assert lo <= truth * (1 + 1e-12)
            assert truth <= hi * (1 + 1e-12)
            checked += 1
    assert checked == 16


def test_path_bounds_walk_with_repeats():
    tree = path_tree(3)
    field = field_on(tree, [1.0, 4.0, 1.0])
    walk = [0, 1, 0, 1, 2]
    t = 0.8
    lo, hi = path_contribution_bounds(tree, field, walk, t)
    truth = path_expectation(tree, field, walk, t)
    assert lo <= truth <= hi
    # the +1 shift makes the walk upper bound finite even with repeats
    assert math.isfinite(hi)


def test_path_bounds_validation():
    tree = path_tree(4)
    field = field_on(tree, np.ones(4))
    with pytest.raises(ValueError):
        path_contribution_bounds(tree, field, [0, 2], 1.0)
    capped = generate_kesten(poisson1(), radius=2, rng=1)
    f2 = sample_field(capped, alpha=4.0, rng=1)
    frontier = int(np.flatnonzero(capped.n_children == -1)[0])
    with pytest.raises(FrontierError):
        path_contribution_bounds(capped, f2, direct_path(capped, 0, frontier), 1.0)


# ---------------------------------------------------------------------------
# Monte Carlo estimator
# ---------------------------------------------------------------------------


def test_mc_zero_potential_total_mass_exact():
    tree = path_tree(3)
    field = field_on(tree, np.zeros(3))
    est, se = feynman_kac_mc(tree, field, 1.0, 2000, rng=1)
    assert est.sum() == pytest.approx(1.0, abs=1e-12)


def test_mc_matches_oracle_within_3_sigma():
    tree = path_tree(2)
    field = field_on(tree, [1.0, 2.0])
    dom = make_domain(tree, np.arange(2))
    t = 0.1
    u = solve_oracle_dense(tree, field, dom, t)
    est, se = feynman_kac_mc(tree, field, t, 100_000, rng=5)
    for v in range(2):
        assert abs(est[v] - u[v]) <= 3 * se[v], (v, est[v], u[v], se[v])


def test_mc_variance_guard():
    tree = path_tree(3)
    field = field_on(tree, np.ones(3))
    with pytest.raises(ValueError):
        feynman_kac_mc(tree, field, 10.0, 100, rng=0)
    est, _ = feynman_kac_mc(tree, field, 10.0, 100, rng=0, override_variance_guard=True)
    assert est.sum() > 0


def test_mc_variance_halves_with_double_paths():
    tree = path_tree(2)
    field = field_on(tree, [1.0, 2.0])
    _, se_n = feynman_kac_mc(tree, field, 0.5, 20_000, rng=11)
    _, se_2n = feynman_kac_mc(tree, field, 0.5, 40_000, rng=12)
    ratio = (se_n[0] / se_2n[0]) ** 2
    assert 1.6 <= ratio <= 2.4


# ---------------------------------------------------------------------------
# profile dump
# ---------------------------------------------------------------------------


def test_write_profile_round_trip():
    tree, field, dom = random_instance(2, 3, radius=6, ball_r=3)
    state = evolve(initial_state(dom), field, 1.0, tol=1e-9)
    buf = io.StringIO()
    write_profile(buf, tree, field, state)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "vertex_id,depth,xi,deg,w,log_u"
    assert len(lines) == len(dom) + 1
    row = dict(zip(lines[0].split(","), lines[1 + dom.root_row].split(",")))
    assert int(row["vertex_id"]) == 0 and int(row["depth"]) == 0
    assert float(row["w"]) == state.w[dom.root_row]
    assert float(row["log_u"]) == pytest.approx(state.L + math.log(state.w[dom.root_row]))


def test_write_profile_empty_log_for_zero_mass():
    tree = path_tree(3)
    field = field_on(tree, np.ones(3))
    dom = make_domain(tree, np.arange(3))
    state = initial_state(dom)  # point mass: two vertices carry zero
    buf = io.StringIO()
    write_profile(buf, tree, field, state)
    rows = [ln.split(",") for ln in buf.getvalue().strip().split("\n")[1:]]
    assert rows[0][-1] != ""
    assert rows[1][-1] == "" and rows[2][-1] == ""
