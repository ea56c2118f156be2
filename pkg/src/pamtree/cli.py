"""Command-line entry point: config files, overrides, subcommand dispatch.

Configuration is a flat ``key = value`` text file ('#' starts a comment);
``--override key=value`` patches single keys on top, and ``--seed`` /
``--out`` are shortcuts for the seed and out_dir keys.  Every subcommand
shares one key table (see ``pamtree --help``); keys a subcommand does not
use are ignored by it but still validated.

Subcommands and their outputs (all written atomically into out_dir):

    gen-tree      tree.txt -- the survival-conditioned tree of one run
    sample-field  tree.txt + field.txt -- the full random environment
    solve         solve_profile.csv/.png + solve_summary.json
    sites         sites.csv + sites_summary.json (gated-score ranking)
    spectrum      spectrum.csv + spectrum_summary.json (top eigenpair)
    rw            rw.csv + rw_summary.json (hitting estimates vs bound)
    experiment    <name>_records.csv + <name>_summary.json + <name>_summary.png

The single-environment commands rebuild run ``run_index`` of the configured
ensemble through the same substream scheme the experiment harness uses, so
their outputs refer to the same environments as the record tables.  They
evaluate at the single time ``t`` (and size the tree for it); ``experiment``
uses the full ``t_grid``.

Exit status: 0 on success, 1 on a usage or configuration error (reported on
stderr, nothing written), 2 on a runtime failure.  Reruns with identical
configuration are byte-identical, figures included.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    ExperimentConfig,
    domain_radius,
    environment,
    run_gap_stats,
    run_localisation,
    run_logconv,
    run_mass_asymptotics,
    run_site_scaling,
)
from .functionals import maximisers, psi_values
from .gw_tree import Tree, ball, serialize_tree
from .pam_solver import (
    adaptive_domain,
    assemble_hamiltonian,
    make_domain,
    solve_log_estimate,
)
from .potential import serialize_field
from .rw_sim import hitting_probability, hitting_time_bound
from .spectral import principal_eigenpair, rayleigh_ritz_floor, spectral_gap

__all__ = ["parse_and_dispatch", "main"]


class _UsageError(Exception):
    """Bad arguments or configuration; reported with exit status 1."""


def _grid(text: str) -> tuple[float, ...]:
    parts = [p.strip() for p in text.split(",")]
    if not all(parts):
        raise ValueError("empty grid entry")
    return tuple(float(p) for p in parts)


# key -> (converter from string, default, one-line doc); the single source
# for parsing, validation and the --help key table
_KEYS: dict[str, tuple] = {
    "family": (str, "poisson1",
               "offspring family: poisson1 | geometric-half | binary | zipf"),
    "beta": (float, 2.0,
             "offspring tail index; zipf reads it (in (1,2]), others need 2.0"),
    "alpha": (float, 5.0,
              "potential tail index; must exceed d = beta/(beta-1)"),
    "t_grid": (_grid, (100.0, 10.0 ** 2.5, 1000.0),
               "comma-separated ascending times >= 3 (experiment command)"),
    "t": (float, 100.0,
          "evaluation time for solve/sites/spectrum/rw (>= 3)"),
    "ensemble": (int, 8, "number of environments per experiment"),
    "seed": (int, 0, "master seed; run i draws from substream (seed, i)"),
    "run_index": (int, 0,
                  "which run's environment the single-environment commands "
                  "rebuild"),
    "radius_policy": (str, "scaled", "fixed | adaptive | scaled"),
    "radius": (int, 0, "root-ball radius under the fixed policy"),
    "radius_scale": (float, 2.2,
                     "scaled policy: radius = max(radius_min, "
                     "round(radius_scale * r(t)**radius_power))"),
    "radius_power": (float, 0.6, "scaled-policy exponent, in [0, 2]"),
    "radius_min": (int, 12, "scaled-policy radius floor"),
    "tol": (float, 1e-8, "solver/eigensolver tolerance, in (0, 1e-4]"),
    "threads": (int, 1, "experiment worker threads; 0 = all cores"),
    "n_samples": (int, 2000, "Monte Carlo walks for rw (>= 1000)"),
    "experiment": (str, "localisation",
                   "localisation | mass | logconv | site-scaling | gap-stats"),
    "out_dir": (str, "pamtree-out", "output directory"),
}

_SUBCOMMANDS = {
    "gen-tree": "write the survival-conditioned tree of one run",
    "sample-field": "write one run's tree and potential field",
    "solve": "solve the mass profile at time t and write it with a figure",
    "sites": "rank the root ball by the gated score at time t",
    "spectrum": "top of the spectrum on the working domain at time t",
    "rw": "Monte Carlo hitting estimates for the walk against the tail bound",
    "experiment": "run an ensemble experiment and write records, summary "
                  "and figure",
}


def _key_documentation() -> str:
    lines = ["configuration keys (flat 'key = value' lines, '#' starts a "
             "comment; defaults in brackets):"]
    for key, (_, default, doc) in _KEYS.items():
        shown = (",".join(f"{v:g}" for v in default)
                 if isinstance(default, tuple) else str(default))
        lines.append(f"  {key:<14}{doc} [{shown}]")
    lines.append("")
    lines.append("exit status: 0 success, 1 usage or configuration error "
                 "(nothing written), 2 runtime failure.")
    return "\n".join(lines)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad arguments; the contract here is 1,
    # so surface the message as an exception instead
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="configuration file ('key = value' lines)")
    common.add_argument("--override", metavar="KEY=VALUE", action="append",
                        default=[], help="patch one key (repeatable)")
    common.add_argument("--seed", type=int, metavar="N",
                        help="shortcut for the seed key")
    common.add_argument("--out", metavar="DIR",
                        help="shortcut for the out_dir key")

    parser = _Parser(
        prog="pamtree",
        description="Simulation lab for mass localisation of the heat "
                    "equation with heavy-tailed random potential on "
                    "survival-conditioned critical branching trees.",
        epilog=_key_documentation(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND",
                                required=True, parser_class=_Parser)
    for name, blurb in _SUBCOMMANDS.items():
        sub.add_parser(name, help=blurb, description=blurb, parents=[common],
                       epilog=_key_documentation(),
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser


# ---------------------------------------------------------------------------
# settings: defaults <- config file <- --override <- --seed/--out
# ---------------------------------------------------------------------------


def _parse_config_text(text: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise _UsageError(f"config line {lineno}: expected key = value, "
                              f"got {raw.strip()!r}")
        key, value = line.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    return pairs


def _resolve_settings(args) -> dict:
    values = {key: default for key, (_, default, _) in _KEYS.items()}
    pairs: list[tuple[str, str]] = []
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise _UsageError(f"config file not found: {path}")
        pairs += _parse_config_text(path.read_text())
    for item in args.override:
        if "=" not in item:
            raise _UsageError(f"override must look like key=value: {item!r}")
        key, value = item.split("=", 1)
        pairs.append((key.strip(), value.strip()))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    if args.out is not None:
        pairs.append(("out_dir", args.out))
    for key, raw in pairs:
        if key not in _KEYS:
            raise _UsageError(f"unknown config key {key!r}")
        try:
            values[key] = _KEYS[key][0](raw)
        except ValueError as exc:
            raise _UsageError(f"bad value for {key}: {raw!r} ({exc})")
    return values


_SINGLE_TIME = ("solve", "sites", "spectrum", "rw")


def _experiment_config(subcommand: str, settings: dict) -> ExperimentConfig:
    """Validated harness config; single-time commands size it for t alone."""
    grid = ((settings["t"],) if subcommand in _SINGLE_TIME
            else settings["t_grid"])
    out_dir = settings["out_dir"] if subcommand == "experiment" else ""
    try:
        return ExperimentConfig(
            family=settings["family"], beta=settings["beta"],
            alpha=settings["alpha"], t_grid=grid,
            ensemble=settings["ensemble"], seed=settings["seed"],
            radius_policy=settings["radius_policy"],
            radius=settings["radius"],
            radius_scale=settings["radius_scale"],
            radius_power=settings["radius_power"],
            radius_min=settings["radius_min"],
            tol=settings["tol"], threads=settings["threads"],
            out_dir=out_dir)
    except ValueError as exc:
        raise _UsageError(f"invalid configuration: {exc}")


def _validate_command(subcommand: str, settings: dict) -> None:
    if settings["run_index"] < 0:
        raise _UsageError("run_index must be >= 0")
    if subcommand == "experiment" and settings["experiment"] not in _EXPERIMENTS:
        known = " | ".join(_EXPERIMENTS)
        raise _UsageError(
            f"unknown experiment {settings['experiment']!r}; pick {known}")
    if subcommand == "rw" and settings["n_samples"] < 1000:
        raise _UsageError("n_samples must be >= 1000")


def _echo(settings: dict) -> dict:
    """Resolved settings as echoed into summaries; out_dir and threads are
    execution plumbing and stay out so reruns elsewhere compare equal."""
    echo = {k: v for k, v in settings.items()
            if k not in ("out_dir", "threads")}
    echo["t_grid"] = list(echo["t_grid"])
    return echo


# ---------------------------------------------------------------------------
# output helpers (temp file + rename, so failures leave no partial files)
# ---------------------------------------------------------------------------


def _write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _write_text(path: Path, text: str) -> None:
    _write_bytes(path, text.encode())


def _scrub(x):
    if isinstance(x, dict):
        return {k: _scrub(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_scrub(v) for v in x]
    if isinstance(x, float) and math.isnan(x):
        return None
    return x


def _write_json(path: Path, obj: dict) -> None:
    _write_text(path, json.dumps(_scrub(obj), sort_keys=True, indent=2) + "\n")


def _render_png(path: Path, draw) -> None:
    # imported here so the data-only commands never touch the plotting stack
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6.4, 4.4), dpi=110)
    ax = fig.add_subplot()
    draw(ax)
    fig.tight_layout()
    buf = io.BytesIO()
    fig.savefig(buf, format="png")
    _write_bytes(path, buf.getvalue())


# ---------------------------------------------------------------------------
# figures (inputs come from the JSON summaries, so nan arrives as None)
# ---------------------------------------------------------------------------


def _num(x) -> float:
    return math.nan if x is None else float(x)


def _series(per_t: list[dict], key: str) -> tuple[list[float], list[float]]:
    return [row["t"] for row in per_t], [_num(row[key]) for row in per_t]


def _draw_localisation(ax, summary: dict) -> None:
    for key, marker in (("median_r1", "o"), ("median_r2", "s"),
                        ("median_r12", "^")):
        ts, ys = _series(summary["per_t"], key)
        ax.plot(ts, ys, marker=marker, label=key.removeprefix("median_"))
    ax.set_xscale("log")
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("t")
    ax.set_ylabel("median mass share")
    ax.legend()


def _draw_mass(ax, summary: dict) -> None:
    for lam, marker in ((5, "o"), (10, "s"), (20, "^")):
        ts, ys = _series(summary["per_t"], f"fraction_lam_{lam}")
        ax.plot(ts, ys, marker=marker, label=f"lam = {lam}")
    ax.set_xscale("log")
    ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("t")
    ax.set_ylabel("fraction with log U / (t a(t)) in [1/lam, lam]")
    ax.legend()


def _draw_logconv(ax, summary: dict) -> None:
    ts, ys = _series(summary["per_t"], "median_err")
    ax.plot(ts, ys, marker="o")
    ax.set_xscale("log")
    ax.set_ylim(bottom=0.0)
    ax.set_xlabel("t")
    ax.set_ylabel("median normalised sup error")


def _draw_site_scaling(ax, summary: dict) -> None:
    per = summary["per_t"]
    xs = [row["log_r"] for row in per]
    ys = [_num(row["median_log_depth"]) for row in per]
    ax.plot(xs, ys, "o", label="ensemble median")
    slope = summary.get("slope")
    used = [(x, y) for x, y in zip(xs, ys) if not math.isnan(y)]
    if slope is not None and used:
        # the least-squares line passes through the centroid of the fitted
        # points, which recovers the intercept from the slope alone
        x0 = sum(x for x, _ in used) / len(used)
        y0 = sum(y for _, y in used) / len(used)
        ax.plot(xs, [y0 + slope * (x - x0) for x in xs], "-",
                label=f"slope {slope:.3f}")
    ax.set_xlabel("log r(t)")
    ax.set_ylabel("log depth of the top site")
    ax.legend()


def _draw_gap_stats(ax, summary: dict) -> None:
    per = summary["per_t"]
    ts = [row["t"] for row in per]
    for k, marker in (("k1", "o"), ("k2", "s")):
        ax.plot(ts, [_num(row[k]["frequency"]) for row in per],
                marker=marker, linestyle="-", label=f"{k} frequency")
        ax.plot(ts, [_num(row[k]["bound"]) for row in per],
                linestyle="--", label=f"{k} bound")
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("P(gap12 < a(t) (log t)^-k)")
    ax.legend()


# experiment key -> (harness operation, emitted file base name, figure)
_EXPERIMENTS = {
    "localisation": (run_localisation, "localisation", _draw_localisation),
    "mass": (run_mass_asymptotics, "mass_asymptotics", _draw_mass),
    "logconv": (run_logconv, "logconv", _draw_logconv),
    "site-scaling": (run_site_scaling, "site_scaling", _draw_site_scaling),
    "gap-stats": (run_gap_stats, "gap_stats", _draw_gap_stats),
}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _working_domain(config: ExperimentConfig, tree, field, t: float):
    """(domain, radius) under the configured policy, as the harness builds
    them for a record."""
    if config.radius_policy == "adaptive":
        dom = adaptive_domain(tree, field, config.params, t,
                              growth_tol=config.tol)
        return dom, int(tree.depth[dom.ids].max())
    radius = domain_radius(config, t)
    return make_domain(tree, ball(tree, Tree.ROOT, radius)), radius


def _cmd_gen_tree(config, settings, out: Path) -> None:
    tree, _ = environment(config, settings["run_index"])
    path = out / "tree.txt"
    _write_text(path, serialize_tree(tree))
    print(f"wrote {path} ({len(tree)} vertices, generation radius "
          f"{tree.radius})")


def _cmd_sample_field(config, settings, out: Path) -> None:
    tree, field = environment(config, settings["run_index"])
    _write_text(out / "tree.txt", serialize_tree(tree))
    _write_text(out / "field.txt", serialize_field(field))
    print(f"wrote {out / 'tree.txt'} ({len(tree)} vertices)")
    print(f"wrote {out / 'field.txt'} (tail index {field.alpha:g})")


def _cmd_solve(config, settings, out: Path) -> None:
    t = settings["t"]
    tree, field = environment(config, settings["run_index"])
    dom, radius = _working_domain(config, tree, field, t)
    w, log_u = solve_log_estimate(tree, field, dom, t)

    lines = ["vertex_id,depth,xi,deg,w,log_u"]
    with np.errstate(divide="ignore"):
        log_profile = np.log(w) + log_u
    for row, v in enumerate(dom.ids):
        lu = "" if math.isinf(log_profile[row]) else f"{log_profile[row]:.17g}"
        lines.append(f"{v},{tree.depth[v]},{field.values[v]:.17g},"
                     f"{int(dom.degrees[row])},{w[row]:.17g},{lu}")
    _write_text(out / "solve_profile.csv", "\n".join(lines) + "\n")

    top = int(np.argmax(w))
    summary = {
        "command": "solve",
        "config": _echo(settings),
        "log_u": float(log_u),
        "n_domain": len(dom),
        "radius": radius,
        "top_vertex": int(dom.ids[top]),
        "top_depth": int(tree.depth[dom.ids[top]]),
        "top_share": float(w[top]),
    }
    _write_json(out / "solve_summary.json", summary)

    depths = tree.depth[dom.ids]

    def draw(ax):
        keep = w > 0
        ax.semilogy(depths[keep], w[keep], ".", markersize=3)
        ax.set_xlabel("depth")
        ax.set_ylabel("mass share w")
        ax.set_title(f"t = {t:g}, log U = {log_u:.4g}")

    _render_png(out / "solve_profile.png", draw)
    print(f"log U({t:g}) = {log_u:.6g} on {len(dom)} vertices "
          f"(radius {radius})")
    for name in ("solve_profile.csv", "solve_summary.json",
                 "solve_profile.png"):
        print(f"wrote {out / name}")


def _cmd_sites(config, settings, out: Path) -> None:
    t = settings["t"]
    tree, field = environment(config, settings["run_index"])
    if config.radius_policy == "adaptive":
        dom = adaptive_domain(tree, field, config.params, t,
                              growth_tol=config.tol)
        radius = int(tree.depth[dom.ids].max())
    else:
        radius = domain_radius(config, t)
    ids = ball(tree, Tree.ROOT, radius)
    found = maximisers(tree, field, config.params, t, search_radius=radius)
    vals = psi_values(tree, field, t, ids)
    order = np.argsort(-vals, kind="stable")

    lines = ["vertex_id,depth,xi,psi"]
    for i in order:
        lines.append(f"{ids[i]},{tree.depth[ids[i]]},"
                     f"{field.values[ids[i]]:.17g},{vals[i]:.17g}")
    _write_text(out / "sites.csv", "\n".join(lines) + "\n")

    summary = {
        "command": "sites",
        "config": _echo(settings),
        "radius": radius,
        "n_candidates": int(ids.size),
        "z1": found.Z1, "z1_depth": int(tree.depth[found.Z1]),
        "psi1": found.psi1,
        "z2": found.Z2, "z2_depth": int(tree.depth[found.Z2]),
        "psi2": found.psi2,
        "gap12": found.gap12,
    }
    _write_json(out / "sites_summary.json", summary)
    print(f"top site {found.Z1} (depth {int(tree.depth[found.Z1])}, "
          f"score {found.psi1:.6g}), runner-up {found.Z2} "
          f"(gap {found.gap12:.6g})")
    for name in ("sites.csv", "sites_summary.json"):
        print(f"wrote {out / name}")


def _cmd_spectrum(config, settings, out: Path) -> None:
    t = settings["t"]
    tree, field = environment(config, settings["run_index"])
    dom, radius = _working_domain(config, tree, field, t)
    eig_tol = min(max(config.tol, 1e-12), 1e-6)
    h = assemble_hamiltonian(tree, field, dom)
    lam1, lam2 = spectral_gap(h, dom, tol=eig_tol)
    pair = principal_eigenpair(h, dom, tol=eig_tol)
    floor = rayleigh_ritz_floor(field, tree, dom)

    lines = ["vertex_id,depth,xi,phi"]
    for row, v in enumerate(dom.ids):
        lines.append(f"{v},{tree.depth[v]},{field.values[v]:.17g},"
                     f"{pair.phi[row]:.17g}")
    _write_text(out / "spectrum.csv", "\n".join(lines) + "\n")

    summary = {
        "command": "spectrum",
        "config": _echo(settings),
        "radius": radius,
        "n_domain": len(dom),
        "lambda1": lam1,
        "lambda2": lam2,
        "gap": lam1 - lam2,
        "rr_floor": floor,
        "residual": pair.residual,
    }
    _write_json(out / "spectrum_summary.json", summary)
    print(f"lambda1 = {lam1:.8g}, lambda2 = {lam2:.8g} "
          f"(gap {lam1 - lam2:.4g}, single-site floor {floor:.8g})")
    for name in ("spectrum.csv", "spectrum_summary.json"):
        print(f"wrote {out / name}")


_RW_DEPTHS = (5, 10, 20)


def _cmd_rw(config, settings, out: Path) -> None:
    t = settings["t"]
    n_samples = settings["n_samples"]
    tree, _ = environment(config, settings["run_index"])
    spine = tree.backbone_ids()
    # keep rungs strictly inside the generated part: a walk near the cap
    # touches unsampled vertices and the estimate cannot be continued
    ladder = [d for d in _RW_DEPTHS if d <= tree.radius - 3]
    if not ladder:
        raise RuntimeError("tree too shallow for the depth ladder "
                           f"{_RW_DEPTHS}; raise the radius")

    lines = ["depth,vertex_id,estimate,sigma,bound"]
    per_depth = []
    for d in ladder:
        target = int(spine[d])
        # the same seed roots every estimate's per-trajectory substreams, so
        # estimates across depths share their driving noise walk-by-walk
        est, sigma = hitting_probability(tree, target, t, n_samples,
                                         rng=config.seed)
        bound = hitting_time_bound(d, t)
        lines.append(f"{d},{target},{est:.17g},{sigma:.17g},{bound:.17g}")
        per_depth.append({"depth": d, "vertex_id": target, "estimate": est,
                          "sigma": sigma, "bound": bound})
        print(f"depth {d}: hit fraction {est:.4f} (sigma {sigma:.4f}), "
              f"tail bound {bound:.4g}")
    _write_text(out / "rw.csv", "\n".join(lines) + "\n")
    summary = {
        "command": "rw",
        "config": _echo(settings),
        "horizon": t,
        "n_samples": n_samples,
        "per_depth": per_depth,
    }
    _write_json(out / "rw_summary.json", summary)
    for name in ("rw.csv", "rw_summary.json"):
        print(f"wrote {out / name}")


def _cmd_experiment(config, settings, out: Path) -> None:
    op, base, draw = _EXPERIMENTS[settings["experiment"]]
    op(config)  # writes <base>_records.csv and <base>_summary.json
    summary = json.loads((out / f"{base}_summary.json").read_text())
    _render_png(out / f"{base}_summary.png", lambda ax: draw(ax, summary))
    print(f"{settings['experiment']}: {summary['n_ok']} ok, "
          f"{summary['n_failed']} failed of {summary['n_records']} records")
    for name in (f"{base}_records.csv", f"{base}_summary.json",
                 f"{base}_summary.png"):
        print(f"wrote {out / name}")


_HANDLERS = {
    "gen-tree": _cmd_gen_tree,
    "sample-field": _cmd_sample_field,
    "solve": _cmd_solve,
    "sites": _cmd_sites,
    "spectrum": _cmd_spectrum,
    "rw": _cmd_rw,
    "experiment": _cmd_experiment,
}


def parse_and_dispatch(argv: list[str]) -> int:
    """Run one CLI invocation; returns the exit status (0 | 1 | 2)."""
    try:
        args = _build_parser().parse_args(argv)
    except _UsageError as exc:
        print(f"pamtree: error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help prints and leaves through here
        return exc.code if isinstance(exc.code, int) else 0
    try:
        settings = _resolve_settings(args)
        _validate_command(args.subcommand, settings)
        config = _experiment_config(args.subcommand, settings)
    except _UsageError as exc:
        print(f"pamtree {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    try:
        _HANDLERS[args.subcommand](config, settings, Path(settings["out_dir"]))
    except (ValueError, RuntimeError, OSError, OverflowError,
            FloatingPointError) as exc:
        print(f"pamtree {args.subcommand}: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 2
    return 0


def main() -> None:
    raise SystemExit(parse_and_dispatch(sys.argv[1:]))
