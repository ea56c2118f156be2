"""Heavy-tailed potential field on a tree: sampling, order statistics, gaps,
and the high-potential vertex sets.

The field is i.i.d. with survival function P(xi >= x) = x^-alpha on [1, inf).
Sampling inverts the CDF at 1-U so the support endpoint 1 is attainable and
the draw order (one batch in id order) is deterministic for a given seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gw_tree import FrontierError, Tree, ball
from .scales import ModelParams

__all__ = [
    "PotentialField",
    "GapReport",
    "sample_field",
    "top_k",
    "gap_report",
    "high_sets",
    "gap_tail_bound",
    "serialize_field",
    "parse_field",
]


@dataclass
class PotentialField:
    """Per-vertex potential values aligned with the tree arena.

    Frontier vertices carry NaN: they were never sampled, and any set
    operation whose ball touches them raises instead of using the NaN.
    """

    alpha: float
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class GapReport:
    """Extremes of the field on a ball, with and without degree adjustment.

    `argmax` / `gap` describe the plain potential maximum; `argmax_adj` /
    `gap_adj` describe the maximum of potential minus degree (the single-site
    bound on the principal eigenvalue).  `top` lists the k highest potential
    values in descending order as (vertex, value) pairs.
    """

    argmax: int
    gap: float
    argmax_adj: int
    gap_adj: float
    top: list[tuple[int, float]]


def sample_field(tree: Tree, alpha: float, rng) -> PotentialField:
    """Draw xi(v) = U^(-1/alpha) with U uniform on (0, 1], one batch in id order."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    gen = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    n = len(tree)
    # 1 - random() lies in (0, 1]; the endpoint U = 1 maps to xi = 1
    u = 1.0 - gen.random(n)
    values = u ** (-1.0 / alpha)
    frontier = tree.is_frontier(np.arange(n))
    values[frontier] = np.nan
    return PotentialField(alpha=float(alpha), values=values)


def _require_sampled(field: PotentialField, ids: np.ndarray) -> None:
    if np.any(np.isnan(field.values[ids])):
        raise FrontierError("ball touches frontier vertices with no sampled potential")


def top_k(field: PotentialField, ball_ids: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The k highest potential values on the given ball, descending; ties
    broken toward the lower vertex id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ids = np.asarray(ball_ids, dtype=np.int64)
    _require_sampled(field, ids)
    vals = field.values[ids]
    # sort by (-value, id): stable two-key ordering via lexsort
    order = np.lexsort((ids, -vals))
    take = order[: min(k, len(ids))]
    return [(int(ids[i]), float(vals[i])) for i in take]


def gap_report(field: PotentialField, tree: Tree, r: int, k: int = 10) -> GapReport:
    """Extreme-value report on the root ball B_r (needs at least 2 vertices)."""
    ids = ball(tree, Tree.ROOT, r)
    if len(ids) < 2:
        raise ValueError("gap needs a runner-up: ball has fewer than 2 vertices")
    _require_sampled(field, ids)
    deg = tree.degrees(ids).astype(float)
    vals = field.values[ids]

    order = np.lexsort((ids, -vals))
    argmax = int(ids[order[0]])
    gap = float(vals[order[0]] - vals[order[1]])

    adj = vals - deg
    order_adj = np.lexsort((ids, -adj))
    argmax_adj = int(ids[order_adj[0]])
    gap_adj = float(adj[order_adj[0]] - adj[order_adj[1]])

    top = [(int(ids[i]), float(vals[i])) for i in order[: min(k, len(ids))]]
    return GapReport(argmax=argmax, gap=gap, argmax_adj=argmax_adj,
                     gap_adj=gap_adj, top=top)


def high_sets(
    field: PotentialField,
    tree: Tree,
    params: ModelParams,
    t: float,
    delta: float | None = None,
    radius: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three high-potential vertex sets on the ball of the given radius.

    F: potential at least R(t)^(d/alpha) * (log t)^-C  (the dominant peaks);
    E: vertices outside F whose degree-adjusted potential still reaches the
       weakest degree-adjusted value inside F;
    G: potential at least R(t)^(d/alpha - delta) (a slightly lowered bar).

    `radius` defaults to the truncation radius R(t) rounded up; pass a smaller
    value for desk-scale work.  delta defaults to half its allowed maximum
    (d/(3 alpha)) * q/(q+1) and is validated against that limit.
    """
    delta_max = (params.d / (3.0 * params.alpha)) * (params.q / (params.q + 1.0))
    if delta is None:
        delta = 0.5 * delta_max
    if not (0.0 < delta < delta_max):
        raise ValueError(f"delta must lie in (0, {delta_max:g}), got {delta}")
    big_r = params.scale_R(t)
    if radius is None:
        radius = int(np.ceil(big_r))
    ids = ball(tree, Tree.ROOT, radius)
    _require_sampled(field, ids)
    vals = field.values[ids]
    deg = tree.degrees(ids).astype(float)

    thr_f = big_r ** (params.d / params.alpha) * np.log(t) ** (-params.C)
    thr_g = big_r ** (params.d / params.alpha - delta)
    in_f = vals >= thr_f
    f_set = ids[in_f]
    g_set = ids[vals >= thr_g]
    if f_set.size:
        weakest_adj = (vals[in_f] - deg[in_f]).min()
        e_mask = ~in_f & (vals - deg >= weakest_adj)
        e_set = ids[e_mask]
    else:
        e_set = ids[:0]
    return f_set, e_set, g_set


def gap_tail_bound(n: int, y: float, alpha: float, clip: bool = True) -> float:
    """Analytic tail bound (n*y^-alpha + 1) * exp(-y^-alpha * (n-1)) for the
    probability that the top-two spacing of n i.i.d. draws is below y.

    With clip=True (the reporting default) the value is clamped to [0, 1];
    clip=False returns the raw formula value, which can exceed 1.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not y > 0:
        raise ValueError("y must be positive")
    w = y ** (-alpha)
    raw = (n * w + 1.0) * np.exp(-w * (n - 1.0))
    return float(min(max(raw, 0.0), 1.0)) if clip else float(raw)


# ---------------------------------------------------------------------------
# serialization: appended to the tree text format
# ---------------------------------------------------------------------------


def serialize_field(field: PotentialField) -> str:
    """`id value` lines after a `# field alpha=...` header; 17 significant
    digits round-trip binary64 exactly.  Frontier vertices are skipped."""
    lines = [f"# field alpha={field.alpha:.17g}"]
    for i, x in enumerate(field.values):
        if not np.isnan(x):
            lines.append(f"{i} {x:.17g}")
    return "\n".join(lines) + "\n"


def parse_field(text: str, n_vertices: int) -> PotentialField:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("# field"):
        raise ValueError("missing field header line")
    meta = dict(kv.split("=", 1) for kv in header[len("# field") :].split())
    values = np.full(n_vertices, np.nan)
    for ln in lines[1:]:
        i_s, v_s = ln.split()
        values[int(i_s)] = float(v_s)
    return PotentialField(alpha=float(meta["alpha"]), values=values)
