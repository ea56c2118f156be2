"""Critical Galton-Watson trees: the survival-conditioned (two-type) tree and
plain finite trees, plus structural queries.

The survival-conditioned tree is built generation by generation.  A single
"special" vertex per generation forms an infinite backbone; it reproduces
according to the size-biased offspring law (p*_n = n*p_n, which never yields
zero children) and hands the special mark to one uniformly chosen child.  All
other vertices reproduce according to the critical law itself, so the bushes
hanging off the backbone are ordinary critical trees.

Trees are stored arena-style: dense integer ids in generation order, numpy
arrays for parent/depth/flags.  Vertices at the generation cap are "frontier":
their children were never sampled, so their degrees are unknown and any query
that would need them raises :class:`FrontierError` instead of guessing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

__all__ = [
    "OffspringDistribution",
    "Tree",
    "FrontierError",
    "SizeLimitError",
    "poisson1",
    "geometric_half",
    "binary",
    "custom_family",
    "zipf_family",
    "size_biased",
    "generate_kesten",
    "generate_gw",
    "ball",
    "volume",
    "max_degree",
    "tree_distance",
    "direct_path",
    "serialize_tree",
    "parse_tree",
]

# Mass below this is cut from infinite-support tails (then renormalized); the
# induced bias on the mean is ~1e-13, far inside the criticality tolerance.
_TAIL_CUT = 1e-14
_CRITICAL_TOL = 1e-10


class FrontierError(RuntimeError):
    """An operation needed vertices or degrees beyond the generation cap."""


class SizeLimitError(RuntimeError):
    """Tree generation exceeded the configured vertex cap."""


@dataclass(frozen=True)
class OffspringDistribution:
    """A finite offspring pmf with cached cumulative table for sampling.

    ``probs[k]`` is the probability of k children.  Families with infinite
    support are truncated at cumulative mass 1 - 1e-14 and renormalized.
    ``critical`` families (mean 1 within 1e-10) are required by the tree
    generators.
    """

    family: str
    probs: np.ndarray
    mean: float
    _cum: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def is_critical(self) -> bool:
        return abs(self.mean - 1.0) <= _CRITICAL_TOL

    def pmf(self, n: int) -> float:
        if 0 <= n < len(self.probs):
            return float(self.probs[n])
        return 0.0

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draw `size` offspring counts by inverse CDF on the cached table."""
        u = rng.random(size)
        return np.searchsorted(self._cum, u, side="right").astype(np.int64)


def _make_distribution(family: str, probs: np.ndarray) -> OffspringDistribution:
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 1 or len(probs) == 0 or np.any(probs < 0):
        raise ValueError("offspring pmf must be a nonnegative 1-d sequence")
    total = probs.sum()
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"offspring pmf must sum to 1 (got {total!r})")
    probs = probs / total
    mean = float(np.dot(np.arange(len(probs)), probs))
    cum = np.cumsum(probs)
    cum[-1] = 1.0  # guard against rounding so sampling never overflows
    dist = OffspringDistribution(family=family, probs=probs, mean=mean)
    object.__setattr__(dist, "_cum", cum)
    return dist


def poisson1() -> OffspringDistribution:
    """Critical Poisson offspring (mean 1), tail cut at 1 - 1e-14."""
    terms = [np.exp(-1.0)]
    while sum(terms) < 1.0 - _TAIL_CUT:
        terms.append(terms[-1] / len(terms))
    return _make_distribution("poisson1", np.array(terms) / sum(terms))


def geometric_half() -> OffspringDistribution:
    """p_k = 2^-(k+1): critical geometric, tail cut at 1 - 1e-14."""
    kmax = int(np.ceil(-np.log2(_TAIL_CUT)))
    probs = 0.5 ** (np.arange(kmax + 1) + 1.0)
    return _make_distribution("geometric-half", probs / probs.sum())


def binary() -> OffspringDistribution:
    """p_0 = p_2 = 1/2: critical branching with only even splits."""
    return _make_distribution("binary", np.array([0.5, 0.0, 0.5]))


def custom_family(probs, family: str = "custom") -> OffspringDistribution:
    """Finite pmf supplied by the caller; criticality is validated."""
    dist = _make_distribution(family, np.asarray(probs, dtype=float))
    if not dist.is_critical:
        raise ValueError(f"custom offspring family has mean {dist.mean!r}, not 1")
    return dist


def zipf_family(beta: float, kmax: int = 100_000) -> OffspringDistribution:
    """Heavy-tailed critical pmf with p_k ~ k^-(beta+1) for k >= 1.

    The weight at zero and the overall scale are solved so the mean is exactly
    one on the truncated support: with s = sum(k^-(b+1)) and m = sum(k^-b),
    take p_k = k^-(beta+1)/m and p_0 = 1 - s/m.
    """
    if not (1.0 < beta <= 2.0):
        raise ValueError(f"beta must lie in (1, 2], got {beta}")
    k = np.arange(1, kmax + 1, dtype=float)
    w = k ** -(beta + 1.0)
    s, m = w.sum(), (k * w).sum()
    probs = np.concatenate([[1.0 - s / m], w / m])
    return _make_distribution("custom", probs / probs.sum())


_FAMILY_BUILDERS = {
    "poisson1": poisson1,
    "geometric-half": geometric_half,
    "binary": binary,
}


def family_by_name(name: str, beta: float | None = None) -> OffspringDistribution:
    """Look up a built-in family, or the Zipf construction for 'zipf'."""
    if name in _FAMILY_BUILDERS:
        return _FAMILY_BUILDERS[name]()
    if name == "zipf":
        if beta is None:
            raise ValueError("zipf family needs beta")
        return zipf_family(beta)
    raise ValueError(f"unknown offspring family {name!r}")


def size_biased(mu: OffspringDistribution) -> OffspringDistribution:
    """The size-biased law p*_n = n*p_n (a pmf exactly because mean(mu) = 1)."""
    if not mu.is_critical:
        raise ValueError(f"size-biasing needs a critical law, mean is {mu.mean!r}")
    probs = np.arange(len(mu.probs)) * mu.probs
    return _make_distribution(f"size-biased({mu.family})", probs / probs.sum())


# ---------------------------------------------------------------------------
# Tree arena
# ---------------------------------------------------------------------------


@dataclass
class Tree:
    """Arena-backed rooted tree.

    parent[v] is -1 for the root; n_children[v] is -1 for frontier vertices
    (their offspring were never sampled).  For survival-conditioned trees
    `radius` is the generation cap and `backbone[v]` marks the special line
    s_0..s_radius; finite unconditioned trees have radius -1 and no backbone.
    """

    family: str
    seed: int
    radius: int  # generation cap; -1 for fully expanded finite trees
    parent: np.ndarray
    depth: np.ndarray
    backbone: np.ndarray
    n_children: np.ndarray
    _adjacency: csr_matrix = field(default=None, repr=False, compare=False)

    ROOT = 0

    def __len__(self) -> int:
        return len(self.parent)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    def is_frontier(self, v) -> np.ndarray | bool:
        return self.n_children[v] == -1

    def degree(self, v: int) -> int:
        """Graph degree: children + 1, except the root (children only)."""
        nc = int(self.n_children[v])
        if nc < 0:
            raise FrontierError(f"degree of frontier vertex {v} is unknown")
        return nc if v == self.ROOT else nc + 1

    def degrees(self, ids: np.ndarray) -> np.ndarray:
        ids = np.atleast_1d(np.asarray(ids))
        nc = self.n_children[ids]
        if np.any(nc < 0):
            bad = ids[nc < 0][:5]
            raise FrontierError(f"degrees unknown at frontier vertices {bad.tolist()}")
        deg = nc + 1
        deg[ids == self.ROOT] -= 1
        return deg

    def backbone_ids(self) -> np.ndarray:
        return np.flatnonzero(self.backbone)

    def adjacency(self) -> csr_matrix:
        """Symmetric 0/1 adjacency over the whole arena (memoized)."""
        if self._adjacency is None:
            n = len(self)
            child = np.arange(1, n, dtype=np.int64)
            par = self.parent[1:]
            rows = np.concatenate([child, par])
            cols = np.concatenate([par, child])
            data = np.ones(len(rows), dtype=np.int8)
            self._adjacency = csr_matrix((data, (rows, cols)), shape=(n, n))
        return self._adjacency

    def children_of(self, v: int) -> np.ndarray:
        # children always directly follow in generation order, but scattered:
        # recover by scanning the parent array (fine for query use).
        return np.flatnonzero(self.parent == v)


def _check_critical(mu: OffspringDistribution) -> None:
    if not mu.is_critical:
        raise ValueError(f"offspring law must be critical, mean is {mu.mean!r}")


def _coerce_rng(rng) -> tuple[np.random.Generator, int]:
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng)), int(rng)
    return rng, -1


def generate_kesten(
    mu: OffspringDistribution,
    radius: int,
    rng,
    size_cap: int = 10**8,
) -> Tree:
    """Generate the survival-conditioned tree down to generation `radius`.

    Draw order per generation (documented for reproducibility): one draw from
    the size-biased law for the special vertex, one uniform index choosing its
    special child, then one batch of ordinary draws for the normal vertices in
    increasing id order.  Vertices at generation `radius` are left frontier.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    _check_critical(mu)
    gen, seed = _coerce_rng(rng)
    star = size_biased(mu)

    parent = [np.array([-1], dtype=np.int64)]
    depth = [np.array([0], dtype=np.int32)]
    backbone = [np.array([True])]
    n_children_parts: list[np.ndarray] = []

    gen_ids = np.array([0], dtype=np.int64)
    gen_backbone = np.array([True])
    next_id = 1
    for g in range(radius):
        special_pos = int(np.flatnonzero(gen_backbone)[0])
        k_star = int(star.sample(gen, 1)[0])
        special_child = int(gen.integers(k_star))
        n_normal = len(gen_ids) - 1
        counts = np.empty(len(gen_ids), dtype=np.int64)
        counts[special_pos] = k_star
        normal_mask = np.ones(len(gen_ids), dtype=bool)
        normal_mask[special_pos] = False
        counts[normal_mask] = mu.sample(gen, n_normal)

        n_children_parts.append(counts)
        total = int(counts.sum())
        if next_id + total > size_cap:
            raise SizeLimitError(
                f"vertex cap {size_cap} exceeded at generation {g + 1}"
            )
        child_parent = np.repeat(gen_ids, counts)
        child_depth = np.full(total, g + 1, dtype=np.int32)
        child_backbone = np.zeros(total, dtype=bool)
        offset_special = int(counts[:special_pos].sum())
        child_backbone[offset_special + special_child] = True

        parent.append(child_parent)
        depth.append(child_depth)
        backbone.append(child_backbone)
        gen_ids = np.arange(next_id, next_id + total, dtype=np.int64)
        gen_backbone = child_backbone
        next_id += total

    # vertices at the cap are frontier: children unsampled
    n_children_parts.append(np.full(len(gen_ids), -1, dtype=np.int64))

    return Tree(
        family=mu.family,
        seed=seed,
        radius=radius,
        parent=np.concatenate(parent),
        depth=np.concatenate(depth),
        backbone=np.concatenate(backbone),
        n_children=np.concatenate(n_children_parts),
    )


def generate_gw(
    mu: OffspringDistribution,
    rng,
    size_cap: int,
) -> Tree | None:
    """One finite unconditioned critical tree, or None if it would exceed
    `size_cap` vertices (an overflow marker, used for censored tail counts)."""
    if size_cap < 1:
        raise ValueError("size_cap must be >= 1")
    _check_critical(mu)
    gen, seed = _coerce_rng(rng)

    parent = [np.array([-1], dtype=np.int64)]
    depth = [np.array([0], dtype=np.int32)]
    n_children_parts: list[np.ndarray] = []
    gen_ids = np.array([0], dtype=np.int64)
    next_id = 1
    g = 0
    while len(gen_ids) > 0:
        counts = mu.sample(gen, len(gen_ids))
        n_children_parts.append(counts)
        total = int(counts.sum())
        if next_id + total > size_cap:
            return None
        if total:
            parent.append(np.repeat(gen_ids, counts))
            depth.append(np.full(total, g + 1, dtype=np.int32))
        gen_ids = np.arange(next_id, next_id + total, dtype=np.int64)
        next_id += total
        g += 1

    n = next_id
    return Tree(
        family=mu.family,
        seed=seed,
        radius=-1,
        parent=np.concatenate(parent),
        depth=np.concatenate(depth),
        backbone=np.zeros(n, dtype=bool),
        n_children=np.concatenate(n_children_parts),
    )


# ---------------------------------------------------------------------------
# Structural queries
# ---------------------------------------------------------------------------


def _distances_from(tree: Tree, center: int, limit: float) -> np.ndarray:
    dist = dijkstra(
        tree.adjacency(), unweighted=True, indices=center, limit=limit
    )
    return dist


def ball(tree: Tree, center: int, r: int) -> np.ndarray:
    """Vertex ids of the closed metric ball B(center, r), sorted ascending.

    Raises FrontierError if a frontier vertex lies strictly inside the ball:
    its unsampled children would belong to the ball, so membership would be
    wrong, not merely incomplete.
    """
    if r < 0:
        raise ValueError("radius must be >= 0")
    if r == 0:
        return np.array([center], dtype=np.int64)
    if center == Tree.ROOT:
        # fast path: distance from the root is depth, so the ball is a slice
        if 0 <= tree.radius < r:
            raise FrontierError(
                f"ball radius {r} exceeds the generation cap {tree.radius}"
            )
        return np.flatnonzero(tree.depth <= r).astype(np.int64)
    dist = _distances_from(tree, center, limit=float(r))
    members = np.flatnonzero(np.isfinite(dist))
    inner = members[dist[members] < r]
    if np.any(tree.is_frontier(inner)):
        raise FrontierError(
            f"ball B({center},{r}) has frontier vertices strictly inside; "
            "regenerate the tree with a larger radius"
        )
    return members.astype(np.int64)


def volume(tree: Tree, r: int) -> int:
    """#B_r around the root."""
    return int(len(ball(tree, Tree.ROOT, r)))


def max_degree(tree: Tree, r: int) -> int:
    """Largest graph degree over the root ball B_r (all degrees must be known)."""
    members = ball(tree, Tree.ROOT, r)
    return int(tree.degrees(members).max())


def tree_distance(tree: Tree, u: int, v: int) -> int:
    """Graph distance, via the unique common ancestor."""
    du, dv = int(tree.depth[u]), int(tree.depth[v])
    a, b = u, v
    da, db = du, dv
    while da > db:
        a = int(tree.parent[a])
        da -= 1
    while db > da:
        b = int(tree.parent[b])
        db -= 1
    while a != b:
        a = int(tree.parent[a])
        b = int(tree.parent[b])
        da -= 1
    return (du - da) + (dv - da)


def direct_path(tree: Tree, u: int, v: int) -> list[int]:
    """The unique simple path from u to v, inclusive of both endpoints."""
    up, down = [], []
    a, b = u, v
    da, db = int(tree.depth[u]), int(tree.depth[v])
    while da > db:
        up.append(a)
        a = int(tree.parent[a])
        da -= 1
    while db > da:
        down.append(b)
        b = int(tree.parent[b])
        db -= 1
    while a != b:
        up.append(a)
        down.append(b)
        a = int(tree.parent[a])
        b = int(tree.parent[b])
    return up + [a] + down[::-1]


# ---------------------------------------------------------------------------
# Serialization: line-based text, bit-exact round trip
# ---------------------------------------------------------------------------


def serialize_tree(tree: Tree) -> str:
    """One vertex per line: `id parent_id depth backbone_flag n_children`.

    The header carries family, seed and radius.  n_children is -1 for
    frontier vertices.  Round-trips byte-exactly through parse_tree.
    """
    lines = [f"# family={tree.family} seed={tree.seed} radius={tree.radius}"]
    bb = tree.backbone.astype(int)
    for i in range(len(tree)):
        lines.append(
            f"{i} {tree.parent[i]} {tree.depth[i]} {bb[i]} {tree.n_children[i]}"
        )
    return "\n".join(lines) + "\n"


def parse_tree(text: str) -> Tree:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0]
    if not header.startswith("#"):
        raise ValueError("missing tree header line")
    meta = dict(kv.split("=", 1) for kv in header[1:].split())
    n = len(lines) - 1
    parent = np.empty(n, dtype=np.int64)
    depth = np.empty(n, dtype=np.int32)
    backbone = np.empty(n, dtype=bool)
    n_children = np.empty(n, dtype=np.int64)
    for ln in lines[1:]:
        i_s, p_s, d_s, b_s, c_s = ln.split()
        i = int(i_s)
        parent[i] = int(p_s)
        depth[i] = int(d_s)
        backbone[i] = bool(int(b_s))
        n_children[i] = int(c_s)
    return Tree(
        family=meta["family"],
        seed=int(meta["seed"]),
        radius=int(meta["radius"]),
        parent=parent,
        depth=depth,
        backbone=backbone,
        n_children=n_children,
    )
