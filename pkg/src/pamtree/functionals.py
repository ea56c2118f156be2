"""Site-quality functionals on a potential landscape and their maximisers.

Everything here scores vertices by trading potential height against the
travel cost of reaching depth |v| by time t.  The depth cost is the usual
rate x -> x log(x/(et)) (zero at x = 0), so vertices shallower than ~et are
cheap and deeper ones are exponentially penalised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import dijkstra

from .gw_tree import FrontierError, Tree, ball, tree_distance
from .potential import PotentialField
from .scales import ModelParams

__all__ = [
    "LocalisationSites",
    "ApproxSite",
    "psi",
    "psi_sup_form",
    "psi_values",
    "maximisers",
    "lambda_of",
    "lambda_sup",
    "lambda_sup_batch",
    "gamma_sets",
    "psi_bar",
    "psi_bar_table",
]


@dataclass(frozen=True)
class LocalisationSites:
    """Top-3 vertices by the gated score, with values and leading gaps."""

    Z1: int
    Z2: int
    Z3: int
    psi1: float
    psi2: float
    psi3: float
    gap12: float
    gap13: float


@dataclass(frozen=True)
class ApproxSite:
    """Best split vertex for the two-leg cost from a fixed start vertex.

    Y maximises the plain score lam(t, v, .); Ytilde maximises the score with
    the degree term added back (lam + t*deg).  lam is the value at Y and
    lam_plus its positive part; lam_tilde is the value of the adjusted score
    at Ytilde.
    """

    Y: int
    Ytilde: int
    lam: float
    lam_plus: float
    lam_tilde: float


def _check_t(t: float) -> None:
    if not t > 0:
        raise ValueError(f"time must be positive, got {t}")


def _depth_cost(x, t: float) -> np.ndarray:
    """x * log(x / (e t)) with the x log x -> 0 convention at x = 0."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x > 0, x, 1.0)
    return np.where(x > 0, x * (np.log(safe) - math.log(t) - 1.0), 0.0)


def _require_known(tree: Tree, field: PotentialField, ids: np.ndarray) -> None:
    if np.any(tree.n_children[ids] == -1) or np.any(np.isnan(field.values[ids])):
        raise FrontierError("scan window touches frontier vertices")


def psi_values(tree: Tree, field: PotentialField, t: float, ids: np.ndarray) -> np.ndarray:
    """Vectorised gated score over the given vertices.

    score = (g - (|v|/t) log g) when t*g >= |v|, else 0, where g is the
    degree-adjusted potential.  The gate at equality is included; g in (0,1]
    makes the log term negative, which is kept as written (the score then
    exceeds g).
    """
    _check_t(t)
    ids = np.asarray(ids, dtype=np.int64)
    _require_known(tree, field, ids)
    g = field.values[ids] - tree.degrees(ids)
    depth = tree.depth[ids].astype(float)
    log_g = np.where(g > 0, np.log(np.where(g > 0, g, 1.0)), 0.0)
    return np.where(t * g >= depth, g - depth / t * log_g, 0.0)


def psi(tree: Tree, field: PotentialField, params: ModelParams, t: float, v: int) -> float:
    return float(psi_values(tree, field, t, np.array([v]))[0])


def psi_sup_form(tree: Tree, field: PotentialField, params: ModelParams, t: float, v: int) -> float:
    """Closed-form supremum over the time split rho in (0, 1]:

        sup_rho (1 - rho) g - (|v|/t) log(|v| / (rho e t)).

    Interior optimum rho* = |v|/(t g) when t*g >= |v|, where the value equals
    the gated score exactly (the additive |v|/t terms cancel); otherwise the
    supremum sits at rho = 1, worth -(|v|/t) log(|v|/(et)) regardless of g.
    """
    _check_t(t)
    _require_known(tree, field, np.array([v]))
    g = float(field.values[v]) - tree.degree(v)
    depth = float(tree.depth[v])
    if depth == 0.0:
        # the cost term vanishes; sup of (1-rho) g over [0, 1]
        return max(g, 0.0)
    if t * g >= depth:
        return g - (depth / t) * math.log(g)
    return -(depth / t) * math.log(depth / (math.e * t))


def maximisers(
    tree: Tree,
    field: PotentialField,
    params: ModelParams,
    t: float,
    search_radius: int | None = None,
) -> LocalisationSites:
    """Exact top-3 of the gated score on the root ball, ties toward lower id."""
    _check_t(t)
    if search_radius is None:
        search_radius = int(np.ceil(params.scale_R(t)))
    ids = ball(tree, Tree.ROOT, search_radius)
    if len(ids) < 3:
        raise ValueError("need at least 3 candidate vertices in the search ball")
    vals = psi_values(tree, field, t, ids)
    order = np.lexsort((ids, -vals))
    z = ids[order[:3]]
    p = vals[order[:3]]
    return LocalisationSites(
        Z1=int(z[0]), Z2=int(z[1]), Z3=int(z[2]),
        psi1=float(p[0]), psi2=float(p[1]), psi3=float(p[2]),
        gap12=float(p[0] - p[1]), gap13=float(p[0] - p[2]),
    )


def _lambda_values(
    tree: Tree, field: PotentialField, t: float, ids: np.ndarray, dist: np.ndarray
) -> np.ndarray:
    g = field.values[ids] - tree.degrees(ids)
    return t * g - _depth_cost(tree.depth[ids], t) - _depth_cost(dist, t)


def lambda_of(tree: Tree, field: PotentialField, t: float, v: int, y: int) -> float:
    """Two-leg score of candidate y from start v:
    t (xi(y) - deg y) - |y| log(|y|/(te)) - d(v,y) log(d(v,y)/(te))."""
    _check_t(t)
    _require_known(tree, field, np.array([v, y]))
    d = tree_distance(tree, v, y)
    return float(_lambda_values(tree, field, t, np.array([y]), np.array([d]))[0])


def lambda_sup(
    tree: Tree,
    field: PotentialField,
    t: float,
    v: int,
    search_radius: int | None = None,
    *,
    params: ModelParams | None = None,
    m: float | None = None,
) -> ApproxSite:
    """Maximise the two-leg score over the root ball.

    Without an explicit radius the window is r(t) (log t)^m with m defaulting
    to q+1 (params required then).
    """
    _check_t(t)
    if search_radius is None:
        if params is None:
            raise ValueError("need params to derive the default search window")
        if m is None:
            m = params.q + 1.0
        search_radius = int(np.ceil(params.scale_r(t) * math.log(t) ** m))
    ids = ball(tree, Tree.ROOT, search_radius)
    _require_known(tree, field, ids)
    _require_known(tree, field, np.array([v]))
    dist_all = dijkstra(tree.adjacency(), unweighted=True, indices=v)
    lam = _lambda_values(tree, field, t, ids, dist_all[ids])
    order = np.lexsort((ids, -lam))
    best = order[0]
    lam_tilde = lam + t * tree.degrees(ids)
    order_tilde = np.lexsort((ids, -lam_tilde))
    best_tilde = order_tilde[0]
    top = float(lam[best])
    return ApproxSite(
        Y=int(ids[best]),
        Ytilde=int(ids[best_tilde]),
        lam=top,
        lam_plus=max(top, 0.0),
        lam_tilde=float(lam_tilde[best_tilde]),
    )


def lambda_sup_batch(
    tree: Tree,
    field: PotentialField,
    t: float,
    vs: np.ndarray,
    search_radius: int,
) -> tuple[np.ndarray, np.ndarray]:
    """(best two-leg score, its positive part) for many start vertices at
    once, against the shared candidate set ball(root, search_radius).

    Same maximisation as lambda_sup, vectorised over starts; the per-start
    relay and degree-weighted variants are not tracked here.
    """
    _check_t(t)
    vs = np.asarray(vs, dtype=np.int64)
    ids = ball(tree, Tree.ROOT, search_radius)
    _require_known(tree, field, ids)
    _require_known(tree, field, vs)
    dist_all = dijkstra(tree.adjacency(), unweighted=True, indices=vs)
    dist = dist_all[:, ids] if dist_all.ndim == 2 else dist_all[None, ids]
    gains = (t * (field.values[ids] - tree.degrees(ids))
             - _depth_cost(tree.depth[ids], t))
    lam = gains[None, :] - _depth_cost(dist, t)
    top = lam.max(axis=1)
    return top, np.maximum(top, 0.0)


def gamma_sets(
    tree: Tree,
    sites: LocalisationSites,
    params: ModelParams,
    t: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Localisation neighbourhoods of the top-2 sites, their union, and the pair.

    Membership: d(v, Z) + min(|v|, |Z|) <= (1 + (log t)^-z) |Z|.  Every vertex
    on the direct root-to-Z path satisfies it with equality slack, so the path
    is always included.  A frontier member means the unexplored part of the
    tree could contain further members, which is reported as an error.
    """
    if not t > 1:
        raise ValueError(f"time must exceed 1 for the slack term, got {t}")
    slack = 1.0 + math.log(t) ** (-params.z)
    adj = tree.adjacency()
    gammas: list[np.ndarray] = []
    for zhat in (sites.Z1, sites.Z2):
        zdepth = float(tree.depth[zhat])
        dist = dijkstra(adj, unweighted=True, indices=zhat)
        cond = dist + np.minimum(tree.depth, zdepth) <= slack * zdepth
        members = np.flatnonzero(cond).astype(np.int64)
        if np.any(tree.n_children[members] == -1):
            raise FrontierError("localisation neighbourhood reaches the frontier")
        gammas.append(members)
    lam_set = np.union1d(gammas[0], gammas[1])
    omega = np.array(sorted({sites.Z1, sites.Z2}), dtype=np.int64)
    return gammas[0], gammas[1], lam_set, omega


def psi_bar(tree: Tree, field: PotentialField, t: float, v: int) -> float:
    """Ungated upper score t xi(v) - |v| log(|v|/(et)); no degree adjustment."""
    _check_t(t)
    _require_known(tree, field, np.array([v]))
    return float(t * field.values[v] - _depth_cost(tree.depth[v], t)[()])


def psi_bar_table(tree: Tree, field: PotentialField, t: float, v: int) -> float:
    """Per-time variant xi(v) - (|v|/t) log(|v|/t); equals (psi_bar - |v|)/t."""
    _check_t(t)
    _require_known(tree, field, np.array([v]))
    depth = float(tree.depth[v])
    cost = 0.0 if depth == 0.0 else (depth / t) * math.log(depth / t)
    return float(field.values[v]) - cost
