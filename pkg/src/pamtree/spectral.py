"""Top of the spectrum of the tree Anderson operator.

Principal eigenpairs are computed with a restarted Lanczos iteration written
here (full reorthogonalization, deterministic start vector), so the dense
eigendecomposition stays available as an independent cross-check.  On top of
the eigenpairs sit two localisation certificates: a per-vertex product bound
on the anchored eigenfunction along the direct path to the anchor, and a
mass-ratio bound comparing the solution profile against anchored eigenpairs
on the marked-set complement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .gw_tree import FrontierError, Tree, direct_path
from .pam_solver import (
    Domain,
    assemble_hamiltonian,
    make_domain,
    restricted_mass_ratio,
)
from .potential import PotentialField

__all__ = [
    "Eigenpair",
    "PathCertificate",
    "principal_eigenpair",
    "spectral_gap",
    "rayleigh_ritz_floor",
    "marked_gap",
    "eigenfunction_path_certificate",
    "certificate_sweep",
    "localisation_ratio_bound",
]

_TOL_RANGE = (1e-12, 1e-6)


@dataclass(frozen=True)
class Eigenpair:
    """Largest eigenvalue of the operator on a connected domain with its
    eigenvector, sign-fixed to the positive orientation.

    `mode` is "unit-l2" or "unit-at-anchor"; in the anchored mode
    phi[row of anchor] == 1 exactly.  `residual` is
    ||H phi - lambda1 phi||_inf / ||phi||_inf, scale invariant.
    """

    lambda1: float
    phi: np.ndarray
    mode: str
    anchor: int | None
    residual: float


def _check_tol(tol: float) -> None:
    lo, hi = _TOL_RANGE
    if not lo <= tol <= hi:
        raise ValueError(f"tolerance must lie in [{lo:g}, {hi:g}], got {tol!r}")


def _lanczos_sweep(matvec, v0: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray]:
    """m-step Lanczos with full (doubled) reorthogonalization.

    Returns the Ritz values (ascending) and the Ritz vector of the largest
    one.  Stops early on an invariant subspace.
    """
    n = len(v0)
    m = max(2, min(m, n))
    basis = np.empty((m, n))
    alphas: list[float] = []
    betas: list[float] = []
    v = v0 / np.linalg.norm(v0)
    basis[0] = v
    w = matvec(v)
    alphas.append(float(v @ w))
    w = w - alphas[0] * v
    k = 1
    while k < m:
        w -= basis[:k].T @ (basis[:k] @ w)
        w -= basis[:k].T @ (basis[:k] @ w)
        b = float(np.linalg.norm(w))
        if b <= 1e-13 * max(1.0, max(abs(a) for a in alphas)):
            break  # Krylov space is invariant: the Ritz pairs are exact
        betas.append(b)
        v = w / b
        basis[k] = v
        w = matvec(v)
        alphas.append(float(v @ w))
        w = w - alphas[k] * v - betas[k - 1] * basis[k - 1]
        k += 1
    theta, s = eigh_tridiagonal(np.array(alphas), np.array(betas))
    y = basis[:k].T @ s[:, -1]
    return theta, y


def _shift_constant(h: csr_matrix, domain: Domain) -> float:
    # xi = diag + deg; the shift makes the operator entrywise nonnegative
    # with positive diagonal, so the top eigenpair is the Perron pair.
    xi_max = float((h.diagonal() + domain.degrees).max())
    return xi_max + float(domain.degrees.max()) + 1.0


def principal_eigenpair(
    h: csr_matrix,
    domain: Domain,
    tol: float = 1e-9,
    anchor: int | None = None,
    max_sweeps: int = 200,
) -> Eigenpair:
    """Largest eigenvalue and eigenvector of the assembled operator.

    Restarted Lanczos on the shifted operator, started from the constant
    vector (never orthogonal to the positive principal vector).  Converged
    when the sup-norm residual drops below `tol`.
    """
    _check_tol(tol)
    n = h.shape[0]
    if n != len(domain):
        raise ValueError("operator size does not match the domain")
    anchor_row = -1
    if anchor is not None:
        anchor_row = int(domain.row_of[anchor])
        if anchor_row < 0:
            raise ValueError("anchor vertex lies outside the domain")
    if n == 1:
        lam = float(h.diagonal()[0])
        mode = "unit-l2" if anchor is None else "unit-at-anchor"
        return Eigenpair(lambda1=lam, phi=np.ones(1), mode=mode,
                         anchor=anchor, residual=0.0)

    c = _shift_constant(h, domain)

    def shifted(vec: np.ndarray) -> np.ndarray:
        return h @ vec + c * vec

    v = np.full(n, 1.0 / math.sqrt(n))
    history: list[float] = []
    gap_est = math.nan
    resid = math.inf
    for _ in range(max_sweeps):
        theta, y = _lanczos_sweep(shifted, v, 48)
        lam = float(theta[-1] - c)
        if len(theta) > 1:
            gap_est = float(theta[-1] - theta[-2])
        y /= np.linalg.norm(y)
        resid = float(np.max(np.abs(h @ y - lam * y)) / np.max(np.abs(y)))
        history.append(lam)
        if resid <= tol:
            if y.sum() < 0:
                y = -y
            if anchor is None:
                return Eigenpair(lambda1=lam, phi=y, mode="unit-l2",
                                 anchor=None, residual=resid)
            pivot = float(y[anchor_row])
            if pivot <= 0.0:
                raise RuntimeError(
                    "anchor component is not resolvable above roundoff; "
                    "cannot normalise the eigenvector there")
            return Eigenpair(lambda1=lam, phi=y / pivot, mode="unit-at-anchor",
                             anchor=anchor, residual=resid)
        v = y
    tail = ", ".join(f"{x:.9g}" for x in history[-4:])
    raise RuntimeError(
        f"eigenpair residual {resid:.3e} still above {tol:.1e} after "
        f"{max_sweeps} sweeps (Ritz tail [{tail}], top-gap estimate "
        f"{gap_est:.3e})")


def spectral_gap(
    h: csr_matrix,
    domain: Domain,
    tol: float = 1e-9,
    max_sweeps: int = 200,
) -> tuple[float, float]:
    """(largest, second largest) eigenvalue; the second via deflation of the
    converged principal vector (orthogonal restriction of the operator)."""
    _check_tol(tol)
    n = h.shape[0]
    if n < 2:
        raise ValueError("a spectral gap needs at least two vertices")
    top = principal_eigenpair(h, domain, tol=tol, max_sweeps=max_sweeps)
    phi1 = top.phi / np.linalg.norm(top.phi)
    c = _shift_constant(h, domain)

    def deflated(vec: np.ndarray) -> np.ndarray:
        vec = vec - phi1 * (phi1 @ vec)
        out = h @ vec + c * vec
        return out - phi1 * (phi1 @ out)

    v = np.full(n, 1.0 / math.sqrt(n))
    v -= phi1 * (phi1 @ v)
    if np.linalg.norm(v) < 1e-8:
        v = np.zeros(n)
        v[int(np.argmin(np.abs(phi1)))] = 1.0
        v -= phi1 * (phi1 @ v)
    resid = math.inf
    for _ in range(max_sweeps):
        theta, y = _lanczos_sweep(deflated, v, 48)
        lam2 = float(theta[-1] - c)
        y /= np.linalg.norm(y)
        hy = h @ y
        hy -= phi1 * (phi1 @ hy)
        resid = float(np.max(np.abs(hy - lam2 * y)) / np.max(np.abs(y)))
        if resid <= tol:
            return top.lambda1, lam2
        v = y
    raise RuntimeError(
        f"deflated eigenpair residual {resid:.3e} still above {tol:.1e} "
        f"after {max_sweeps} sweeps")


def rayleigh_ritz_floor(field: PotentialField, tree: Tree, domain) -> float:
    """Best single-site variational value: max over the domain of
    potential minus degree (a delta test function)."""
    if isinstance(domain, Domain):
        ids, degs = domain.ids, domain.degrees
    else:
        ids = np.asarray(domain, dtype=np.int64)
        if ids.size == 0:
            raise ValueError("domain must be non-empty")
        degs = tree.degrees(ids).astype(float)
    vals = field.values[ids]
    if np.any(np.isnan(vals)):
        raise FrontierError("potential is undefined on frontier vertices")
    return float(np.max(vals - degs))


def marked_gap(
    tree: Tree, field: PotentialField, lam_ids: np.ndarray, omega_ids: np.ndarray
) -> float:
    """min over the marked set of (potential - degree) minus the max over the
    rest of the domain; +inf when the marked set is the whole domain."""
    lam_ids = np.unique(np.asarray(lam_ids, dtype=np.int64))
    omega_ids = np.unique(np.asarray(omega_ids, dtype=np.int64))
    if omega_ids.size == 0:
        raise ValueError("marked set must be non-empty")
    if np.setdiff1d(omega_ids, lam_ids).size > 0:
        raise ValueError("marked set must be a subset of the domain")
    rest = np.setdiff1d(lam_ids, omega_ids)
    best_marked = float(np.min(field.values[omega_ids]
                               - tree.degrees(omega_ids)))
    if math.isnan(best_marked):
        raise FrontierError("potential is undefined on frontier vertices")
    if rest.size == 0:
        return math.inf
    return best_marked - rayleigh_ritz_floor(field, tree, rest)


@dataclass(frozen=True)
class PathCertificate:
    """Outcome of the direct-path product bound on the anchored eigenfunction.

    status: "certified"  - the computed value satisfies the bound;
            "violated"   - it does not (hypothesis held, bound failed);
            "inapplicable" - margin of the anchor over the runner-up is <= 0,
                             the bound's hypothesis fails, nothing is claimed.
    `path` holds the vertices whose degrees enter the product (the target
    vertex up to, but excluding, the anchor).
    """

    status: str
    bound: float
    phi_value: float
    gap: float
    path: tuple[int, ...]


def _anchored_certificate_context(
    tree: Tree, field: PotentialField, domain_ids: np.ndarray, anchor: int, tol: float
) -> tuple[np.ndarray, float, Domain | None, Eigenpair | None]:
    """Validation, anchor margin, and the anchored component eigenpair shared
    by the single-vertex certificate and the sweep.  Returns
    (ids, gap, dom, pair); dom and pair are None when the margin is
    nonpositive (nothing is claimed then)."""
    ids = np.unique(np.asarray(domain_ids, dtype=np.int64))
    if ids.size == 0:
        raise ValueError("domain must be non-empty")
    row_of = np.full(len(tree), -1, dtype=np.int64)
    row_of[ids] = np.arange(ids.size)
    if row_of[anchor] < 0:
        raise ValueError("anchor vertex lies outside the domain")
    if np.any(tree.n_children[ids] == -1):
        raise FrontierError("domain contains frontier vertices with unknown degree")

    score = field.values[ids] - tree.degrees(ids)
    anchor_score = float(score[row_of[anchor]])
    others = np.delete(score, row_of[anchor])
    runner_up = float(others.max()) if others.size else -math.inf
    if runner_up > anchor_score:
        raise ValueError(
            "anchor must carry the largest potential-minus-degree value "
            f"of the domain (anchor {anchor_score:.6g} < best other "
            f"{runner_up:.6g})")
    gap = anchor_score - runner_up
    if gap <= 0.0:
        return ids, gap, None, None

    # eigenpair on the anchor's connected component; other components carry
    # zero mass under anchored normalisation
    sub = tree.adjacency()[ids][:, ids]
    _, labels = connected_components(sub, directed=False)
    keep = ids[labels == labels[row_of[anchor]]]
    dom = make_domain(tree, keep, require_root=False)
    pair = principal_eigenpair(assemble_hamiltonian(tree, field, dom), dom,
                               tol=tol, anchor=anchor)
    return ids, gap, dom, pair


def _path_product_bound(
    tree: Tree, x: int, anchor: int, gap: float
) -> tuple[float, tuple[int, ...]]:
    """Product of deg/gap along the direct path from x to the anchor (anchor
    excluded), evaluated in log space.  The path is taken in the tree; it may
    pass through removed vertices, in which case x is disconnected from the
    anchor and carries zero mass."""
    path = direct_path(tree, x, anchor)
    prod_vertices = tuple(int(u) for u in path[:-1])
    if not prod_vertices:
        return 1.0, prod_vertices
    degs = tree.degrees(np.array(prod_vertices)).astype(float)
    log_bound = float(np.sum(np.log(degs)) - len(degs) * math.log(gap))
    return (math.exp(log_bound) if log_bound < 709 else math.inf), prod_vertices


def _entry_floor(pair: Eigenpair) -> float:
    """Computed eigenvector entries below this value are numerically zero.

    The eigensolve determines phi only up to its achieved residual; along a
    long path the certificate bound underflows far below that, and comparing
    a noise-level entry against it would count solver noise as eigenfunction
    mass.  Entries under the floor therefore certify as zero.
    """
    eps = float(np.finfo(float).eps)
    return 64.0 * max(pair.residual, eps) * float(np.abs(pair.phi).max())


def eigenfunction_path_certificate(
    tree: Tree,
    field: PotentialField,
    domain_ids: np.ndarray,
    anchor: int,
    x: int,
    tol: float = 1e-9,
) -> PathCertificate:
    """Check phi(x) <= prod(deg v / margin) over the direct path from x to
    the anchor (anchor excluded), for the eigenvector normalised to 1 at the
    anchor.

    The anchor must carry the strictly largest potential-minus-degree value
    of the set; the margin over the runner-up is the product's denominator.
    A nonpositive margin makes the certificate inapplicable (reported in the
    status, not as an error).  Vertices disconnected from the anchor carry
    zero eigenfunction mass and certify trivially, as do vertices whose
    computed entry sits below the eigensolve's resolution (the bound there
    underflows past anything the solver can distinguish from zero).
    """
    if not np.isin(x, np.asarray(domain_ids, dtype=np.int64)):
        raise ValueError("target vertex lies outside the domain")
    ids, gap, dom, pair = _anchored_certificate_context(
        tree, field, domain_ids, anchor, tol)
    if gap <= 0.0:
        _, prod_vertices = _path_product_bound(tree, x, anchor, 1.0)
        return PathCertificate(status="inapplicable", bound=math.nan,
                               phi_value=math.nan, gap=gap, path=prod_vertices)
    bound, prod_vertices = _path_product_bound(tree, x, anchor, gap)
    x_row = int(dom.row_of[x])
    phi_value = float(pair.phi[x_row]) if x_row >= 0 else 0.0

    held = phi_value <= max(bound * (1.0 + 1e-8), _entry_floor(pair))
    return PathCertificate(status="certified" if held else "violated",
                           bound=bound, phi_value=phi_value, gap=gap,
                           path=prod_vertices)


def certificate_sweep(
    tree: Tree,
    field: PotentialField,
    domain_ids: np.ndarray,
    anchor: int,
    tol: float = 1e-9,
) -> tuple[str, int, int]:
    """Evaluate the path-product certificate at every domain vertex with one
    shared anchored eigenpair: ("ok", checked, violations), or
    ("inapplicable", 0, 0) when the anchor's margin is nonpositive.

    Vertex by vertex this is eigenfunction_path_certificate (the anchor
    itself certifies trivially and is included in the count), but at one
    eigen-solve total, which is what ensemble tallies need.
    """
    ids, gap, dom, pair = _anchored_certificate_context(
        tree, field, domain_ids, anchor, tol)
    if gap <= 0.0:
        return "inapplicable", 0, 0
    floor = _entry_floor(pair)
    violations = 0
    for x in ids:
        bound, _ = _path_product_bound(tree, int(x), anchor, gap)
        x_row = int(dom.row_of[x])
        phi_value = float(pair.phi[x_row]) if x_row >= 0 else 0.0
        if phi_value > max(bound * (1.0 + 1e-8), floor):
            violations += 1
    return "ok", int(ids.size), violations


def localisation_ratio_bound(
    tree: Tree,
    field: PotentialField,
    lam_ids: np.ndarray,
    omega_ids: np.ndarray,
    t: float,
    tol: float = 1e-9,
) -> tuple[float, float]:
    """(lhs, rhs) of the localisation comparison at time t.

    lhs: share of the through-the-marked-set solution mass sitting off the
    marked set.  rhs: sum over marked vertices y of ||phi_y||_2^2 times the
    off-anchor total of phi_y, where phi_y is the eigenvector on
    (domain minus marked set) plus y, normalised to 1 at y.  The claim
    lhs <= rhs requires a positive marked gap (checked, ValueError).
    """
    lam_ids = np.unique(np.asarray(lam_ids, dtype=np.int64))
    omega_ids = np.unique(np.asarray(omega_ids, dtype=np.int64))
    gap = marked_gap(tree, field, lam_ids, omega_ids)
    if not gap > 0.0:
        raise ValueError(
            f"marked gap {gap:.6g} is not positive; the comparison's "
            "hypothesis fails on this instance")
    rest = np.setdiff1d(lam_ids, omega_ids)
    lhs = restricted_mass_ratio(tree, field, lam_ids, omega_ids, t)

    rhs = 0.0
    for y in omega_ids:
        with_y = np.sort(np.append(rest, y))
        row_of = np.full(len(tree), -1, dtype=np.int64)
        row_of[with_y] = np.arange(with_y.size)
        sub = tree.adjacency()[with_y][:, with_y]
        _, labels = connected_components(sub, directed=False)
        keep = with_y[labels == labels[row_of[y]]]
        dom = make_domain(tree, keep, require_root=False)
        pair = principal_eigenpair(assemble_hamiltonian(tree, field, dom),
                                   dom, tol=tol, anchor=int(y))
        phi = pair.phi
        l2_sq = float(phi @ phi)
        off_anchor = float(phi.sum() - phi[dom.row_of[y]])
        rhs += l2_sq * off_anchor
    return lhs, rhs
