"""Point-source heat flow with potential on truncated tree domains.

The raw solution u(t, v) grows like exp(t * xi_max) and overflows floats
almost immediately, so the core integrator evolves the normalised profile
w = u / sum(u) together with the log total mass L = log sum(u):

    w' = Hw - (1'Hw) w,     L' = 1'Hw.

H acts with zero Dirichlet boundary outside the domain, but the diagonal
keeps the FULL tree degree: paths that exit are killed, yet the jump rate
of the underlying walk is unchanged.  Using induced-subgraph degrees would
silently shift the principal eigenvalue.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import eigh, expm
from scipy.sparse import csr_matrix, diags
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import eigsh, expm_multiply

from .gw_tree import FrontierError, Tree, ball
from .potential import PotentialField
from .scales import ModelParams

__all__ = [
    "DENSE_CAP",
    "Domain",
    "SolutionState",
    "make_domain",
    "initial_state",
    "assemble_hamiltonian",
    "solve_oracle_dense",
    "solve_oracle_log",
    "evolve",
    "solve_log_estimate",
    "log_mass_estimate",
    "adaptive_domain",
    "restricted_solution",
    "restricted_mass_ratio",
    "time_reversal_check",
    "path_contribution_bounds",
    "path_expectation",
    "feynman_kac_mc",
    "write_profile",
]

DENSE_CAP = 2000


@dataclass(frozen=True)
class Domain:
    """An ordered, connected set of non-frontier vertices.

    `row_of` maps arena vertex id -> matrix row (-1 outside the domain);
    `degrees` are full-tree degrees.  Zero Dirichlet data is implied outside.
    Solves started from the root need the root inside; eigenproblems on
    marked-set complements may legitimately omit it.
    """

    tree: Tree
    ids: np.ndarray
    row_of: np.ndarray
    degrees: np.ndarray
    adjacency: csr_matrix = dc_field(repr=False, compare=False, default=None)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def root_row(self) -> int:
        row = int(self.row_of[Tree.ROOT])
        if row < 0:
            raise ValueError("domain does not contain the root")
        return row


def make_domain(tree: Tree, ids: np.ndarray, require_root: bool = True) -> Domain:
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0 or len(np.unique(ids)) != len(ids):
        raise ValueError("domain ids must be a non-empty set without repeats")
    if require_root and Tree.ROOT not in ids:
        raise ValueError("domain must contain the root")
    if np.any(tree.n_children[ids] == -1):
        raise FrontierError("domain contains frontier vertices with unknown degree")
    sub = tree.adjacency()[ids][:, ids].tocsr()
    n_comp, _ = connected_components(sub, directed=False)
    if n_comp != 1:
        raise ValueError(f"domain is not connected ({n_comp} components)")
    row_of = np.full(len(tree), -1, dtype=np.int64)
    row_of[ids] = np.arange(len(ids))
    return Domain(tree=tree, ids=ids, row_of=row_of,
                  degrees=tree.degrees(ids).astype(float), adjacency=sub)


@dataclass
class SolutionState:
    """Normalised profile w (sum 1) and log total mass L at time t."""

    domain: Domain
    t: float
    w: np.ndarray
    L: float
    stats: dict

    def log_u(self) -> np.ndarray:
        """log u(t, v) per domain row; -inf where the profile is zero."""
        with np.errstate(divide="ignore"):
            return self.L + np.log(self.w)


def initial_state(domain: Domain) -> SolutionState:
    w = np.zeros(len(domain))
    w[domain.root_row] = 1.0
    return SolutionState(domain=domain, t=0.0, w=w, L=0.0,
                         stats={"n_accepted": 0, "n_rejected": 0, "max_local_error": 0.0})


def _field_on_domain(field: PotentialField, domain: Domain) -> np.ndarray:
    xi = field.values[domain.ids]
    if np.any(np.isnan(xi)):
        raise FrontierError("potential not sampled on part of the domain")
    return xi


def assemble_hamiltonian(tree: Tree, field: PotentialField, domain: Domain) -> csr_matrix:
    """H = A_domain - diag(full-tree degree) + diag(xi), symmetric CSR."""
    xi = _field_on_domain(field, domain)
    return (domain.adjacency + diags(xi - domain.degrees)).tocsr()


def _dense_h(tree: Tree, field: PotentialField, domain: Domain) -> np.ndarray:
    if len(domain) > DENSE_CAP:
        raise ValueError(f"domain size {len(domain)} exceeds dense cap {DENSE_CAP}")
    return assemble_hamiltonian(tree, field, domain).toarray()


def solve_oracle_dense(tree: Tree, field: PotentialField, domain: Domain, t: float) -> np.ndarray:
    """exp(tH) delta_O by full symmetric eigendecomposition (raw profile)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    h = _dense_h(tree, field, domain)
    lam, q = eigh(h)
    if t * lam[-1] > 700.0:
        raise OverflowError("raw profile overflows; use solve_oracle_log")
    coef = q[domain.root_row] * np.exp(t * lam)
    return q @ coef


# smallest eigenvector entry distinguishable from the rounding error of a
# symmetric eigensolve (entry noise ~ eps * ||H|| / gap; 100 eps is generous)
_AMP_FLOOR = 100.0 * np.finfo(float).eps


def _positive_profile(scaled: np.ndarray, q_top: np.ndarray,
                      coef: np.ndarray, guard: float) -> np.ndarray:
    """Clip the signed spectral sum exp(-t lam_1) u to the positive cone.

    Exact arithmetic gives u > 0 on a connected domain, so negative entries
    are rounding debris.  When every surviving start amplitude in `coef`
    sits below the eigenvector noise floor, the whole sum -- including its
    sign -- is debris; the true profile is then the dominant mode itself
    (the Perron pair, entrywise positive), carried oriented positive with
    the amplitude pinned at the floor.  Otherwise negatives must stay small
    against the computed profile's own scale; beyond `guard` times that
    scale the cancellation is unexplained and the solve fails.
    """
    if float(np.abs(coef).max()) <= _AMP_FLOOR:
        top = q_top if q_top.sum() >= 0 else -q_top
        return np.clip(top, 0.0, None) * _AMP_FLOOR
    floor = -guard * max(float(np.abs(scaled).max()), 1e-300)
    if scaled.min() < floor:
        raise RuntimeError("spectral cancellation beyond rounding tolerance")
    return np.clip(scaled, 0.0, None)


def solve_oracle_log(
    tree: Tree, field: PotentialField, domain: Domain, t: float
) -> tuple[np.ndarray, float]:
    """(w, L) of the dense solution, stable at large t.

    Factors out exp(t lam_1) so the signed spectral sum stays representable;
    tiny negative components from cancellation are clipped to zero.

    Resolution limit: the log total carries the start amplitude of the
    dominant mode, which decays exponentially in the depth of the
    localisation site.  Once that amplitude falls below machine precision
    (deep site, t large enough for the mode to dominate) the returned L
    saturates at the rounding floor and overstates the true value by about
    |log amplitude| - |log eps|.  The normalised profile and the growth rate
    dL/dt are unaffected; `evolve` propagates the true L at the cost of
    stepping through [0, t].
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    h = _dense_h(tree, field, domain)
    lam, q = eigh(h)
    coef = q[domain.root_row] * np.exp(t * (lam - lam[-1]))
    scaled = _positive_profile(q @ coef, q[:, -1], coef, guard=1e-9)
    total = scaled.sum()
    return scaled / total, t * lam[-1] + math.log(total)


# ---------------------------------------------------------------------------
# adaptive integrator (embedded 4/5 pair, Cash-Karp coefficients)
# ---------------------------------------------------------------------------

_CK_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (3 / 10, -9 / 10, 6 / 5),
    (-11 / 54, 5 / 2, -70 / 27, 35 / 27),
    (1631 / 55296, 175 / 512, 575 / 13824, 44275 / 110592, 253 / 4096),
)
_CK_B5 = (37 / 378, 0.0, 250 / 621, 125 / 594, 0.0, 512 / 1771)
_CK_B4 = (2825 / 27648, 0.0, 18575 / 48384, 13525 / 55296, 277 / 14336, 1 / 4)


def _rhs(h: csr_matrix, w: np.ndarray) -> tuple[np.ndarray, float]:
    hw = h @ w
    growth = hw.sum()
    return hw - growth * w, growth


def evolve(
    state: SolutionState,
    field: PotentialField,
    t_target: float,
    tol: float = 1e-8,
) -> SolutionState:
    """Advance the normalised system to t_target with adaptive step control.

    Aborts (RuntimeError with the integrator statistics in the message) on
    step-size underflow or on negativity beyond the -1e-12 rounding allowance.
    """
    if t_target < state.t:
        raise ValueError("cannot integrate backwards")
    if not 1e-12 <= tol <= 1e-3:
        raise ValueError("tol must lie in [1e-12, 1e-3]")
    domain = state.domain
    h = assemble_hamiltonian(domain.tree, field, domain)
    xi = _field_on_domain(field, domain)
    # the spectral radius is bounded by xi_max + max degree, which caps the
    # step a smooth-error controller may safely take
    dt_max = 0.5 / (float(xi.max()) + float(domain.degrees.max()) + 1.0)

    t = state.t
    w = state.w.copy()
    big_l = state.L
    stats = dict(state.stats)
    dt = min(dt_max, max(t_target - t, 0.0))

    while t < t_target:
        dt = min(dt, dt_max, t_target - t)
        if dt < 1e-15 * max(1.0, t_target):
            raise RuntimeError(f"step-size underflow at t={t:g} (stats: {stats})")
        kw = []
        kl = []
        for row in _CK_A:
            wi = w.copy()
            for a, kwj in zip(row, kw):
                if a != 0.0:
                    wi += dt * a * kwj
            dw, dl = _rhs(h, wi)
            kw.append(dw)
            kl.append(dl)
        w5 = w + dt * sum(b * k for b, k in zip(_CK_B5, kw) if b != 0.0)
        l5 = big_l + dt * sum(b * k for b, k in zip(_CK_B5, kl) if b != 0.0)
        w4 = w + dt * sum(b * k for b, k in zip(_CK_B4, kw) if b != 0.0)
        l4 = big_l + dt * sum(b * k for b, k in zip(_CK_B4, kl) if b != 0.0)

        scale_w = tol * (1e-3 + np.abs(w5))
        err = max(float(np.max(np.abs(w5 - w4) / scale_w)),
                  abs(l5 - l4) / (tol * (1.0 + abs(l5))))
        if err <= 1.0:
            t += dt
            if w5.min() < -1e-12:
                raise RuntimeError(
                    f"negativity {w5.min():.3e} beyond tolerance at t={t:g} (stats: {stats})")
            w = np.clip(w5, 0.0, None)
            total = w.sum()
            if abs(total - 1.0) > 1e-6:
                raise RuntimeError(f"normalisation drift {total - 1.0:.3e} (stats: {stats})")
            w /= total
            big_l = l5 + math.log(total)
            stats["n_accepted"] += 1
            stats["max_local_error"] = max(stats["max_local_error"], err * tol)
            dt *= min(5.0, max(0.2, 0.9 * err ** -0.2 if err > 0 else 5.0))
        else:
            stats["n_rejected"] += 1
            dt *= max(0.1, 0.9 * err ** -0.25)

    assert abs(w.sum() - 1.0) <= 1e-9
    return SolutionState(domain=domain, t=t, w=w, L=big_l, stats=stats)


# ---------------------------------------------------------------------------
# domain selection by mass saturation
# ---------------------------------------------------------------------------


def solve_log_estimate(
    tree: Tree,
    field: PotentialField,
    domain: Domain,
    t: float,
    k_cap: int = 96,
) -> tuple[np.ndarray, float]:
    """(normalised profile w, log total mass L) on the domain.

    Dense-feasible domains use the exact spectral sum.  Larger domains split
    by regime: while t*xi_max stays within float range the raw profile is
    computed by a Krylov exponential action (no truncation error); at larger
    t, where that overflows, the spectral gap is what makes a truncated
    top-k eigendecomposition accurate, and k grows until the discarded modes
    are damped below 1e-10 relative (or the cap is hit).  In the truncated
    regime per-vertex values are meaningful only down to about that damping
    factor times the peak, and the log total inherits the dominant-mode
    amplitude resolution limit described on `solve_oracle_log`: with a deep
    localisation site L saturates at the rounding floor (an overstatement
    bounded by t lam_1 + log sum(phi_1)), while the profile and dL/dt stay
    meaningful.
    """
    n = len(domain)
    if n <= DENSE_CAP:
        return solve_oracle_log(tree, field, domain, t)
    h = assemble_hamiltonian(tree, field, domain)
    xi_max = float(_field_on_domain(field, domain).max())
    if t * xi_max <= 600.0:
        # Gershgorin bounds the top eigenvalue by xi_max, so exp(tH) delta_O
        # cannot overflow here
        e0 = np.zeros(n)
        e0[domain.root_row] = 1.0
        u = expm_multiply(h * t, e0)
        total = float(u.sum())
        if total <= 0:
            raise RuntimeError("total mass underflowed to zero")
        return np.clip(u, 0.0, None) / total, math.log(total)
    v0 = np.full(n, 1.0 / math.sqrt(n))
    k = 16
    while True:
        lam, q = eigsh(h, k=min(k, n - 1), which="LA", v0=v0)
        damp = math.exp(t * (lam[0] - lam[-1]))  # eigsh returns ascending
        if damp < 1e-10 or k >= min(k_cap, n - 1):
            break
        k *= 2
    coef = q[domain.root_row] * np.exp(t * (lam - lam[-1]))
    scaled = _positive_profile(q @ coef, q[:, -1], coef, guard=1e-8)
    total = float(scaled.sum())
    return scaled / total, t * lam[-1] + math.log(total)


def log_mass_estimate(
    tree: Tree,
    field: PotentialField,
    domain: Domain,
    t: float,
    k_cap: int = 96,
) -> float:
    """log of the total mass on the domain (profile discarded)."""
    return solve_log_estimate(tree, field, domain, t, k_cap=k_cap)[1]


def adaptive_domain(
    tree: Tree,
    field: PotentialField,
    params: ModelParams,
    t: float,
    growth_tol: float = 1e-6,
) -> Domain:
    """Smallest doubling radius r* in {R(t), 2R(t), ...} whose log mass moves
    by less than growth_tol (relative) when the radius is doubled."""
    r = max(int(np.ceil(params.scale_R(t))), 1)
    while True:
        try:
            dom = make_domain(tree, ball(tree, Tree.ROOT, r))
            if math.isinf(growth_tol):
                return dom
            dom2 = make_domain(tree, ball(tree, Tree.ROOT, 2 * r))
        except FrontierError as exc:
            raise FrontierError(
                f"tree too small for the doubling test: need radius {2 * r}") from exc
        l1 = log_mass_estimate(tree, field, dom, t)
        l2 = log_mass_estimate(tree, field, dom2, t)
        if abs(l2 - l1) < growth_tol * max(1.0, abs(l1)):
            return dom
        r *= 2


# ---------------------------------------------------------------------------
# restricted solutions (mass through a marked vertex set)
# ---------------------------------------------------------------------------


def _avoiding_profile_parts(
    tree: Tree, field: PotentialField, lam_ids: np.ndarray, omega_ids: np.ndarray, t: float
) -> tuple[np.ndarray, float, np.ndarray | None, float, np.ndarray]:
    """Shared plumbing: solve on Lambda and on the root component of
    Lambda minus Omega.  Returns (w, L, w_avoid or None, L_avoid, rest_ids)."""
    lam_ids = np.asarray(lam_ids, dtype=np.int64)
    omega_ids = np.asarray(omega_ids, dtype=np.int64)
    if len(np.setdiff1d(omega_ids, lam_ids)) > 0:
        raise ValueError("marked set must be a subset of the domain")
    dom = make_domain(tree, lam_ids)
    w, big_l = solve_oracle_log(tree, field, dom, t)

    rest = np.setdiff1d(lam_ids, omega_ids)
    if Tree.ROOT in omega_ids or len(rest) == 0:
        # every path has already hit the marked set at time 0, or nothing to avoid
        return w, big_l, None, -math.inf, rest
    if Tree.ROOT not in rest:
        raise ValueError("domain minus marked set lost the root")
    sub = tree.adjacency()[rest][:, rest]
    n_comp, labels = connected_components(sub, directed=False)
    root_pos = int(np.searchsorted(rest, Tree.ROOT))
    keep = rest[labels == labels[root_pos]]
    dom_avoid = make_domain(tree, keep)
    w_avoid_local, l_avoid = solve_oracle_log(tree, field, dom_avoid, t)
    w_avoid = np.zeros(len(lam_ids))
    w_avoid[dom.row_of[keep]] = w_avoid_local
    return w, big_l, w_avoid, l_avoid, rest


def restricted_solution(
    tree: Tree,
    field: PotentialField,
    lam_ids: np.ndarray,
    omega_ids: np.ndarray,
    t: float,
) -> tuple[np.ndarray, np.ndarray]:
    """(u on the domain, u restricted to paths that hit the marked set).

    The restricted profile is the difference of two zero-boundary solutions:
    paths that hit the marked set = all paths minus paths avoiding it.  Raw
    profiles; for large t use restricted_mass_ratio instead.
    """
    w, big_l, w_avoid, l_avoid, _ = _avoiding_profile_parts(
        tree, field, lam_ids, omega_ids, t)
    if np.asarray(omega_ids).size == 0:
        u = math.exp(big_l) * w
        return u, np.zeros_like(u)
    u = math.exp(big_l) * w
    if w_avoid is None:
        return u, u.copy()
    u_om = u - math.exp(l_avoid) * w_avoid
    if u_om.min() < -1e-12 * max(u.max(), 1.0):
        raise RuntimeError("restricted profile negative beyond rounding tolerance")
    return u, np.clip(u_om, 0.0, None)


def restricted_mass_ratio(
    tree: Tree,
    field: PotentialField,
    lam_ids: np.ndarray,
    omega_ids: np.ndarray,
    t: float,
) -> float:
    """Share of the through-the-marked-set mass that sits OFF the marked set:
    sum over domain-minus-marked of u_restricted / sum over domain of
    u_restricted.  Computed with the overall exp(L) factored out, so it is
    stable at times where the raw profiles overflow."""
    omega_ids = np.asarray(omega_ids, dtype=np.int64)
    if omega_ids.size == 0:
        raise ValueError("marked set must be non-empty for the mass ratio")
    w, big_l, w_avoid, l_avoid, rest = _avoiding_profile_parts(
        tree, field, lam_ids, omega_ids, t)
    lam_ids = np.asarray(lam_ids, dtype=np.int64)
    if w_avoid is None:
        rel = w
    else:
        rel = w - math.exp(l_avoid - big_l) * w_avoid
        rel = np.clip(rel, 0.0, None)
    dom_rows = np.searchsorted(lam_ids, rest)
    denom = rel.sum()
    if denom <= 0:
        raise RuntimeError("restricted mass vanished; nothing to take a ratio of")
    return float(rel[dom_rows].sum() / denom)


def time_reversal_check(
    tree: Tree,
    field: PotentialField,
    domain: Domain,
    t: float,
    v: int,
) -> tuple[float, float, float]:
    """Start-to-v mass vs v-to-start mass and their relative discrepancy.

    Uses Krylov matrix-exponential actions, deliberately a different numerical
    route from the eigendecomposition oracles.
    """
    h = assemble_hamiltonian(tree, field, domain).astype(float)
    row_v = int(domain.row_of[v])
    if row_v < 0:
        raise ValueError("vertex not in domain")
    e0 = np.zeros(len(domain))
    e0[domain.root_row] = 1.0
    ev = np.zeros(len(domain))
    ev[row_v] = 1.0
    forward = float(expm_multiply(h * t, e0)[row_v])
    backward = float(expm_multiply(h * t, ev)[domain.root_row])
    disc = abs(forward - backward) / max(forward, backward, 1e-300)
    return forward, backward, disc


# ---------------------------------------------------------------------------
# single-path mass: closed-form bounds and a quadrature-free exact oracle
# ---------------------------------------------------------------------------


def _path_values(tree: Tree, field: PotentialField, path: list[int]) -> np.ndarray:
    ids = np.asarray(path, dtype=np.int64)
    if len(ids) == 0:
        raise ValueError("path must contain at least one vertex")
    for a, b in zip(ids, ids[1:]):
        if tree.parent[a] != b and tree.parent[b] != a:
            raise ValueError(f"vertices {a} and {b} are not adjacent")
    xi = field.values[ids]
    if np.any(np.isnan(xi)):
        raise FrontierError("path visits a frontier vertex")
    return xi - tree.degrees(ids)


def path_contribution_bounds(
    tree: Tree, field: PotentialField, path: list[int], t: float
) -> tuple[float, float]:
    """Closed-form sandwich for the mass carried by walks whose jump sequence
    is exactly the given path.

    The peak vertex (first max of the adjusted potential) contributes
    exp(t mu*); every other step i contributes a factor controlled by its
    shortfall D_i = mu* - g_i.  Simple paths use 1/D_i (upper) and
    (1 - exp(-(t/n) D_i))/D_i (lower); walks with repeats get the +1-shifted
    denominators and an extra exp(t) upstairs.  An exact tie D_i = 0 on a
    simple path makes the upper bound +inf.
    """
    g = _path_values(tree, field, path)
    istar = int(np.argmax(g))
    mustar = float(g[istar])
    delta = np.delete(mustar - g, istar)
    n = len(delta)
    if n == 0:
        point = math.exp(t * mustar)
        return point, point
    simple = len(set(path)) == len(path)
    slice_t = t / n
    # limit of (1 - e^{-s D})/D as D -> 0 is s; keeps the lower bound exact at ties
    num = np.where(delta > 0, -np.expm1(-slice_t * delta), slice_t)
    if simple:
        upper = math.inf if np.any(delta == 0.0) else math.exp(t * mustar) / float(
            np.prod(delta))
        lower = math.exp(t * mustar) * float(np.prod(num / np.where(delta > 0, delta, 1.0)))
    else:
        upper = math.exp(t * (1.0 + mustar)) / float(np.prod(1.0 + delta))
        lower = math.exp(t * mustar) * float(
            np.prod(np.where(delta > 0, -np.expm1(-slice_t * delta), 0.0) / (1.0 + delta)))
    return lower, upper


def path_expectation(tree: Tree, field: PotentialField, path: list[int], t: float) -> float:
    """Exact mass of the fixed jump sequence: the chain with holding value
    g_i and unit forward rate, i.e. exp(tM)[end, start] for bidiagonal M."""
    g = _path_values(tree, field, path)
    n = len(g)
    if n == 1:
        return math.exp(t * float(g[0]))
    m = np.diag(g.astype(float)) + np.diag(np.ones(n - 1), -1)
    return float(expm(t * m)[n - 1, 0])


# ---------------------------------------------------------------------------
# Monte Carlo Feynman-Kac estimator
# ---------------------------------------------------------------------------


def feynman_kac_mc(
    tree: Tree,
    field: PotentialField,
    t: float,
    n_paths: int,
    rng,
    override_variance_guard: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Plain Monte Carlo estimate of the raw profile u(t, .) with stderrs.

    Averages exp(integral of xi along a variable-speed walk) over sampled
    walks.  The weight variance explodes like exp(2 t xi_max), so by default
    the op refuses when t * xi_max > 8.
    """
    gen = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    known = tree.n_children != -1
    xi_max = float(np.nanmax(field.values[known]))
    if t * xi_max > 8.0 and not override_variance_guard:
        raise ValueError(
            f"variance guard: t*xi_max = {t * xi_max:.2f} > 8 makes the estimator useless")
    adj = tree.adjacency()
    indptr, indices = adj.indptr, adj.indices
    n = len(tree)
    sum_w = np.zeros(n)
    sum_w2 = np.zeros(n)
    for _ in range(n_paths):
        v = Tree.ROOT
        remaining = t
        log_w = 0.0
        while True:
            if tree.n_children[v] == -1:
                raise FrontierError("walk reached a frontier vertex")
            deg = indptr[v + 1] - indptr[v]
            dwell = gen.exponential(1.0 / deg) if deg > 0 else math.inf
            if dwell >= remaining:
                log_w += field.values[v] * remaining
                break
            log_w += field.values[v] * dwell
            remaining -= dwell
            v = int(indices[indptr[v] + gen.integers(deg)])
        weight = math.exp(log_w)
        sum_w[v] += weight
        sum_w2[v] += weight * weight
    est = sum_w / n_paths
    var = np.clip(sum_w2 / n_paths - est * est, 0.0, None)
    return est, np.sqrt(var / n_paths)


# ---------------------------------------------------------------------------
# profile dump
# ---------------------------------------------------------------------------


def write_profile(fh, tree: Tree, field: PotentialField, state: SolutionState) -> None:
    """CSV rows vertex_id,depth,xi,deg,w,log_u; a zero-mass vertex gets an
    empty log_u field."""
    fh.write("vertex_id,depth,xi,deg,w,log_u\n")
    log_u = state.log_u()
    dom = state.domain
    for row, v in enumerate(dom.ids):
        lu = "" if math.isinf(log_u[row]) else f"{log_u[row]:.17g}"
        fh.write(f"{v},{tree.depth[v]},{field.values[v]:.17g},"
                 f"{int(dom.degrees[row])},{state.w[row]:.17g},{lu}\n")
