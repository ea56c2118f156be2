"""Event-driven simulation of the variable-speed walk on a tree.

The walk waits at v for an Exp(deg v) holding time, then jumps to a
uniformly chosen neighbour.  Simulation is exact (no time grid).  Walks are
driven by per-trajectory RNG substreams derived from the run seed, so
estimates with different horizons or stopping rules share their driving
noise trajectory-by-trajectory; monotonicity of nested stopping events then
holds exactly, not just in distribution.

A walk that would have to leave a frontier vertex (children unknown) cannot
be continued faithfully under any boundary convention, so the trajectory is
flagged invalid instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gw_tree import FrontierError, Tree, direct_path

__all__ = [
    "Trajectory",
    "simulate_vsrw",
    "hitting_probability",
    "exit_probability",
    "hitting_time_bound",
    "exit_time_bound",
    "degree_product_prefactor",
]


@dataclass
class Trajectory:
    """Piecewise-constant path: vertices[k] is occupied on
    [times[k], times[k+1]); the last visit runs to the stopping event."""

    vertices: np.ndarray
    times: np.ndarray
    start: int
    horizon: float
    termination: str  # horizon | hit-target | exited-ball | frontier-contact

    @property
    def valid(self) -> bool:
        return self.termination != "frontier-contact"

    def holding_times(self, v: int | None = None) -> np.ndarray:
        """Completed holding times (censored final interval excluded),
        optionally only those spent at vertex v."""
        holds = np.diff(self.times)
        if v is None:
            return holds
        return holds[self.vertices[:-1] == v]


def simulate_vsrw(
    tree: Tree,
    start: int,
    horizon: float,
    rng,
    target: int | None = None,
    radius: int | None = None,
) -> Trajectory:
    """One exact trajectory from `start`, stopped at the horizon, at the
    target vertex, or on leaving the root ball of the given radius."""
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    gen = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    adj = tree.adjacency()
    indptr, indices = adj.indptr, adj.indices

    v = int(start)
    t_now = 0.0
    verts = [v]
    times = [0.0]
    termination = "horizon"
    while True:
        if target is not None and v == target:
            termination = "hit-target"
            break
        if radius is not None and tree.depth[v] >= radius:
            termination = "exited-ball"
            break
        if tree.n_children[v] == -1:
            termination = "frontier-contact"
            break
        deg = indptr[v + 1] - indptr[v]
        if deg == 0:
            break  # isolated vertex: parked until the horizon
        dwell = gen.exponential(1.0 / deg)
        if t_now + dwell >= horizon:
            break
        t_now += dwell
        v = int(indices[indptr[v] + gen.integers(deg)])
        verts.append(v)
        times.append(t_now)
    return Trajectory(
        vertices=np.array(verts, dtype=np.int64),
        times=np.array(times),
        start=int(start),
        horizon=float(horizon),
        termination=termination,
    )


def _substream(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=(seed, index)))


def _seed_int(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    return int(rng.integers(2 ** 62))


def hitting_probability(
    tree: Tree, v: int, t: float, n_samples: int, rng
) -> tuple[float, float]:
    """MC estimate of the chance the walk from the root reaches v by time t,
    with the binomial standard error."""
    if n_samples < 1000:
        raise ValueError("need at least 10^3 samples for a usable estimate")
    seed = _seed_int(rng)
    hits = 0
    for i in range(n_samples):
        traj = simulate_vsrw(tree, Tree.ROOT, t, _substream(seed, i), target=v)
        if not traj.valid:
            raise FrontierError("walk left the generated tree; enlarge the radius")
        hits += traj.termination == "hit-target"
    p = hits / n_samples
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def exit_probability(
    tree: Tree, r: int, t: float, n_samples: int, rng
) -> tuple[float, float]:
    """MC estimate of the chance the walk leaves the root ball of radius r-1
    (i.e. reaches depth r) by time t, with the binomial standard error."""
    if n_samples < 1000:
        raise ValueError("need at least 10^3 samples for a usable estimate")
    seed = _seed_int(rng)
    exits = 0
    for i in range(n_samples):
        traj = simulate_vsrw(tree, Tree.ROOT, t, _substream(seed, i), radius=r)
        if not traj.valid:
            raise FrontierError("walk left the generated tree; enlarge the radius")
        exits += traj.termination == "exited-ball"
    p = exits / n_samples
    return p, math.sqrt(p * (1.0 - p) / n_samples)


def hitting_time_bound(depth: int, t: float) -> float:
    """exp(-depth ([log depth - log t - 1] v 0)); the clip makes it 1 once
    depth <= e t."""
    if depth <= 0:
        return 1.0
    rate = max(math.log(depth) - math.log(t) - 1.0, 0.0)
    return math.exp(-depth * rate)


def exit_time_bound(r: int, t: float) -> float:
    """exp(-(r/5) log(r/(et))); meaningful (< 1) only when r > e t."""
    return math.exp(-(r / 5.0) * math.log(r / (math.e * t)))


def degree_product_prefactor(tree: Tree, v: int) -> float:
    """Product of 1/deg over the strict ancestors of v (diagnostic only: it
    prefixes a lower hitting bound whose remaining factor is unquantified)."""
    path = direct_path(tree, Tree.ROOT, v)
    out = 1.0
    for u in path[:-1]:
        out /= tree.degree(u)
    return out
