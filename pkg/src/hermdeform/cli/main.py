"""Command dispatch for the ``hermdeform`` executable.

Subcommands: ``report`` (curvature summary + eigenvalue grid),
``verify`` (variation-identity residual tables with Richardson ratios),
``deform-local`` / ``deform-global`` (budgeted conformal deformation),
and ``certify`` (pencil classification with an optional expectation).

Exit codes: 0 success, 1 numerical failure (a computation ran and
violated a contract), 2 configuration failure (rejected before any
computation).  Reports are deterministic: identical config file,
overrides, and package version produce byte-identical output.  The only
environment influence is ``HERMDEFORM_WORKERS`` (thread count for point
sweeps; results are independent of it because every quantity is
computed per point).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

import numpy as np

from .. import __version__
from ..chern import (
    curvature_tensor,
    general_trace,
    kahler_defect,
    rm_norm_sq,
    torsion_norm_sq,
)
from ..deform import BumpField, _local_deform_full, global_deform
from ..distance import build_rho, injectivity_lower_bound
from ..errors import CertificationError, ConfigError, HermdeformError
from ..positivity import classify, whiten_pencil
from ..variation import (
    BTensorState,
    b_identity_residual,
    constant_direction,
    first_trace_variation_fd_check,
    random_direction,
    richardson_gate,
    traced_variation_fd_check,
    variation_fd_check,
)
from .config import RunConfig, load_config
from .reports import write_csv, write_json, write_pgm

__all__ = ["main", "build_parser"]

_ENV_WORKERS = "HERMDEFORM_WORKERS"
_RICHARDSON_WINDOW = (30.0, 500.0)
_RICHARDSON_FLOOR = 1e-8
_EXACT_IDENTITY_TOL = 1e-6
_VERIFY_SEED = 2024
_VERIFY_POINTS_PER_ROW = 4


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


def worker_count() -> int:
    text = os.environ.get(_ENV_WORKERS)
    if text is None:
        return 1
    try:
        workers = int(text)
    except ValueError as exc:
        raise ConfigError(
            f"{_ENV_WORKERS} must be a positive integer, got {text!r}"
        ) from exc
    if workers < 1:
        raise ConfigError(
            f"{_ENV_WORKERS} must be a positive integer, got {workers}"
        )
    return workers


def sweep(fn: Callable, points: np.ndarray, workers: int):
    """Apply ``fn`` to the point batch, chunked over worker threads.

    Every quantity in this package is computed independently per point,
    so chunking never changes the numbers -- only the wall time.
    """
    if workers <= 1 or len(points) < 2 * workers:
        return fn(points)
    chunks = np.array_split(points, workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(fn, chunks))
    if isinstance(parts[0], tuple):
        return tuple(
            np.concatenate([p[i] for p in parts], axis=0)
            for i in range(len(parts[0]))
        )
    return np.concatenate(parts, axis=0)


def default_center(chart) -> tuple:
    """Fallback ball centre: box centre, torus origin, or the geometric
    middle radius of the shell on the first coordinate axis."""
    if chart.kind == "box":
        return tuple(chart.center)
    if chart.kind == "torus":
        return (0.0,) * chart.real_dim
    return (math.sqrt(chart.lam),) + (0.0,) * (chart.real_dim - 1)


def certification_grid(cfg: RunConfig) -> np.ndarray:
    """Sample grid of ``run.grid`` cell midpoints per axis: the whole
    chart by default, or the centred sub-box of half-width
    ``run.window`` so deformations keep chart room around every grid
    point."""
    if cfg.window is None:
        return cfg.chart.sample_grid(cfg.grid)
    base = (
        np.asarray(cfg.chart.center)
        if cfg.chart.kind == "box"
        else np.zeros(cfg.chart.real_dim)
    )
    w = cfg.window
    offsets = -w + (2.0 * w) * (np.arange(cfg.grid) + 0.5) / cfg.grid
    mesh = np.meshgrid(*[b + offsets for b in base], indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _base_report(cfg: RunConfig, command: str, point_count: int) -> dict:
    report = {
        "command": command,
        "versions": {"hermdeform": __version__, "numpy": np.__version__},
        "grid": {"resolution": cfg.grid, "points": int(point_count)},
    }
    report.update(cfg.describe())
    return report


def _paths(cfg: RunConfig, command: str) -> tuple:
    prefix = cfg.prefix if cfg.prefix is not None else command
    return cfg.out_dir, prefix


def _coordinate_names(chart) -> list:
    n = chart.n
    return [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]


def _slice_specs(chart) -> list:
    """Axis pairs (and labels) of the 2-d slices drawn as heatmaps."""
    if chart.kind == "annulus":
        if chart.n == 1:
            return [((0, 1), "logr_theta")]
        return [((0, 1), "logr_eta"), ((2, 3), "xi1_xi2")]
    if chart.n == 1:
        return [((0, 1), "z1")]
    return [((0, 2), "z1"), ((1, 3), "z2")]


def _heatmaps(
    field: np.ndarray, cfg: RunConfig, out_dir: str, prefix: str
) -> dict:
    """One PGM per 2-d slice of the sampled min-eigenvalue field; other
    parameter axes are frozen at their central grid index."""
    res = cfg.grid
    volume = np.asarray(field, dtype=np.float64).reshape(
        (res,) * cfg.chart.real_dim
    )
    artifacts = {}
    for axes, label in _slice_specs(cfg.chart):
        index: list = [res // 2] * cfg.chart.real_dim
        index[axes[0]] = slice(None)
        index[axes[1]] = slice(None)
        image = volume[tuple(index)]
        name = f"{prefix}_mineig_{label}.pgm"
        meta = write_pgm(os.path.join(out_dir, name), image)
        artifacts[label] = dict(meta, file=name)
    return artifacts


def _pencil_eigs(cfg: RunConfig, spec, points: np.ndarray, workers: int):
    """Eigenvalues (ascending) of the reference-traced curvature of
    ``spec`` against ``spec``'s own matrix, at each point."""

    def fn(pts):
        trace = general_trace(cfg.tilde, spec, pts)
        return whiten_pencil(trace, spec.matrix(pts)).real

    return sweep(fn, points, workers)


def _tolerances(cfg: RunConfig, **extra) -> dict:
    tols = {
        "richardson_window": list(_RICHARDSON_WINDOW),
        "richardson_floor": _RICHARDSON_FLOOR,
    }
    if cfg.tol_zero is not None:
        tols["tol_zero"] = cfg.tol_zero
    tols.update(extra)
    return tols


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(cfg: RunConfig) -> int:
    points = certification_grid(cfg)
    workers = worker_count()
    out_dir, prefix = _paths(cfg, "report")

    def fields(pts):
        cj = curvature_tensor(cfg.g0, pts)
        stats = np.stack(
            [
                np.max(np.abs(cj.gamma), axis=(-3, -2, -1)),
                torsion_norm_sq(cj),
                np.sqrt(np.maximum(rm_norm_sq(cj), 0.0)),
                np.max(np.abs(cj.first_trace), axis=(-2, -1)),
                np.max(np.abs(cj.second_trace), axis=(-2, -1)),
                cj.scalar,
            ],
            axis=-1,
        )
        trace = general_trace(cfg.tilde, cfg.g0, pts)
        eigs = whiten_pencil(trace, cj.h).real
        return stats, eigs

    stats, eigs = sweep(fields, points, workers)
    pencil = classify(
        general_trace(cfg.tilde, cfg.g0, points),
        cfg.g0.matrix(points),
        points=points,
        tol_zero=cfg.tol_zero,
    )

    names = _coordinate_names(cfg.chart)
    header = names + [f"eig_{i + 1}" for i in range(cfg.n)]
    table = np.concatenate([points, eigs], axis=-1)
    csv_name = f"{prefix}_eigs.csv"
    write_csv(os.path.join(out_dir, csv_name), header, table.tolist())
    heatmaps = _heatmaps(eigs[:, 0], cfg, out_dir, prefix)

    report = _base_report(cfg, "report", len(points))
    report["tolerances"] = _tolerances(cfg)
    report["curvature"] = {
        "gamma_sup": float(stats[:, 0].max()),
        "torsion_sq_sup": float(stats[:, 1].max()),
        "rm_sup": float(stats[:, 2].max()),
        "first_trace_sup": float(stats[:, 3].max()),
        "second_trace_sup": float(stats[:, 4].max()),
        "scalar_min": float(stats[:, 5].min()),
        "scalar_max": float(stats[:, 5].max()),
        "kahler_defect": kahler_defect(cfg.g0, points),
    }
    report["pencil"] = pencil.to_dict()
    report["artifacts"] = {"eigenvalue_table": csv_name, "heatmaps": heatmaps}
    write_json(os.path.join(out_dir, f"{prefix}.json"), report)
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(cfg: RunConfig) -> int:
    rng = np.random.default_rng(_VERIFY_SEED)
    out_dir, prefix = _paths(cfg, "verify")
    rows = []
    all_passed = True

    checks = (
        ("curvature", variation_fd_check),
        ("second_trace", traced_variation_fd_check),
        ("first_trace", first_trace_variation_fd_check),
    )
    directions = [("constant", constant_direction(cfg.n, 0.05 * np.eye(cfg.n)))]
    directions += [
        (f"random_{i}", random_direction(cfg.n, rng)) for i in range(cfg.triples)
    ]
    for label, direction in directions:
        pts = cfg.chart.random_points(rng, _VERIFY_POINTS_PER_ROW)
        for check_name, check in checks:
            coarse = check(cfg.g0, direction, pts, cfg.dt)
            fine = check(cfg.g0, direction, pts, cfg.dt / 10.0)
            passed = richardson_gate(coarse, fine)
            ratio = coarse / fine if fine > 0.0 else 0.0
            rows.append(
                (label, check_name, cfg.dt, coarse, fine, ratio, passed)
            )
            all_passed = all_passed and passed

    # Conformal-path identity: the reference-traced curvature of
    # e^{-tF} g0, weighted by e^{tF}, is affine in t with slope
    # lap_tilde(F) * g0, so its residual is pure roundoff.  The default
    # ball is the largest safe one: the bump profile decays like
    # exp(-1/rho), so small balls would leave the identity rows at
    # denormal magnitudes.
    center = np.asarray(
        cfg.center if cfg.center is not None else default_center(cfg.chart)
    )
    injectivity = injectivity_lower_bound(cfg.tilde, center)
    radius = (
        cfg.radius
        if cfg.radius is not None
        else 0.9 * min(injectivity, 1.0)
    )
    fld = build_rho(cfg.tilde, center, radius, injectivity=injectivity)
    bump = BumpField(fld)
    state = BTensorState(tilde=cfg.tilde, base=cfg.g0, exponent=bump)
    ball_pts = center + rng.uniform(
        -0.6 * radius, 0.6 * radius, size=(12, cfg.chart.real_dim)
    )
    for t in cfg.amplitudes:
        coarse = b_identity_residual(state.at(t), ball_pts, cfg.dt)
        fine = b_identity_residual(state.at(t), ball_pts, cfg.dt / 10.0)
        passed = coarse <= _EXACT_IDENTITY_TOL and richardson_gate(coarse, fine)
        ratio = coarse / fine if fine > 0.0 else 0.0
        rows.append(
            ("weighted_trace", f"t={format(t, 'g')}", cfg.dt, coarse, fine, ratio, passed)
        )
        all_passed = all_passed and passed

    csv_name = f"{prefix}_residuals.csv"
    write_csv(
        os.path.join(out_dir, csv_name),
        ["direction", "check", "dt", "residual_coarse", "residual_fine", "ratio", "passed"],
        rows,
    )
    report = _base_report(cfg, "verify", 0)
    report["tolerances"] = _tolerances(
        cfg, exact_identity_tol=_EXACT_IDENTITY_TOL
    )
    report["verify"] = {
        "rows": len(rows),
        "failures": sum(1 for row in rows if not row[-1]),
        "all_passed": all_passed,
        "bump_center": [float(c) for c in center],
        "bump_radius": float(radius),
    }
    report["artifacts"] = {"residual_table": csv_name}
    write_json(os.path.join(out_dir, f"{prefix}.json"), report)
    return 0 if all_passed else 1


# ---------------------------------------------------------------------------
# deform
# ---------------------------------------------------------------------------


def _require_eps(cfg: RunConfig) -> float:
    if cfg.eps is None:
        raise ConfigError('missing required key "run.eps"')
    return cfg.eps


def cmd_deform_local(cfg: RunConfig) -> int:
    eps = _require_eps(cfg)
    out_dir, prefix = _paths(cfg, "deform-local")
    center = cfg.seed_point or cfg.center or default_center(cfg.chart)
    center_arr = np.asarray(center, dtype=np.float64)
    if cfg.radius is not None:
        radius = cfg.radius
    else:
        injectivity = injectivity_lower_bound(cfg.tilde, center_arr)
        radius = 0.999 * 0.25 * min(injectivity, 1.0)

    result = _local_deform_full(
        cfg.g0, cfg.tilde, center_arr, radius, eps, cfg.k, cfg.sign_word
    )
    step = result.step

    grid = certification_grid(cfg)
    near = cfg.chart.chart_separation(center_arr, grid) <= radius
    ball_grid = grid[near] if near.any() else grid
    before = classify(
        general_trace(cfg.tilde, cfg.g0, ball_grid),
        cfg.g0.matrix(ball_grid),
        points=ball_grid,
        tol_zero=cfg.tol_zero,
    )
    after = classify(
        general_trace(cfg.tilde, result.spec, ball_grid),
        result.spec.matrix(ball_grid),
        points=ball_grid,
        tol_zero=cfg.tol_zero,
    )

    succeeded = step is not None and step.annulus_margin > 0.0
    report = _base_report(cfg, "deform-local", len(ball_grid))
    report["tolerances"] = _tolerances(cfg)
    report["deform"] = {
        "center": [float(c) for c in center],
        "radius": float(radius),
        "eps": eps,
        "k": cfg.k,
        "sign": cfg.sign,
        "t": result.t,
        "step": step.to_dict() if step is not None else None,
        "before": before.to_dict(),
        "after": after.to_dict(),
        "succeeded": succeeded,
    }
    write_json(os.path.join(out_dir, f"{prefix}.json"), report)
    return 0 if succeeded else 1


def cmd_deform_global(cfg: RunConfig) -> int:
    eps = _require_eps(cfg)
    out_dir, prefix = _paths(cfg, "deform-global")
    grid = certification_grid(cfg)
    precondition = f"quasi-{cfg.sign_word}"
    try:
        g1, plan = global_deform(
            cfg.g0,
            cfg.tilde,
            eps,
            cfg.k,
            cfg.sign_word,
            grid=grid,
            seed_point=cfg.seed_point,
        )
    except CertificationError as exc:
        if "need quasi-positive" in str(exc):
            print(
                f"error: precondition: {precondition} traced curvature "
                f"required ({exc})",
                file=sys.stderr,
            )
            return 1
        raise

    eigs = _pencil_eigs(cfg, g1, grid, worker_count())
    csv_name = f"{prefix}_eigs.csv"
    names = _coordinate_names(cfg.chart)
    write_csv(
        os.path.join(out_dir, csv_name),
        names + [f"eig_{i + 1}" for i in range(cfg.n)],
        np.concatenate([grid, eigs], axis=-1).tolist(),
    )
    heatmaps = _heatmaps(eigs[:, 0], cfg, out_dir, prefix)

    succeeded = plan.final_classification == cfg.sign_word
    report = _base_report(cfg, "deform-global", len(grid))
    report["tolerances"] = _tolerances(cfg)
    report["deform"] = {
        "eps": eps,
        "k": cfg.k,
        "sign": cfg.sign,
        "plan": plan.to_dict(),
        "succeeded": succeeded,
    }
    report["artifacts"] = {"eigenvalue_table": csv_name, "heatmaps": heatmaps}
    write_json(os.path.join(out_dir, f"{prefix}.json"), report)
    return 0 if succeeded else 1


# ---------------------------------------------------------------------------
# certify
# ---------------------------------------------------------------------------


def cmd_certify(cfg: RunConfig) -> int:
    out_dir, prefix = _paths(cfg, "certify")
    points = certification_grid(cfg)
    workers = worker_count()

    def fn(pts):
        trace = general_trace(cfg.tilde, cfg.g0, pts)
        return trace, cfg.g0.matrix(pts)

    trace, gmat = sweep(fn, points, workers)
    pencil = classify(trace, gmat, points=points, tol_zero=cfg.tol_zero)
    matched = cfg.expect is None or pencil.classification == cfg.expect

    report = _base_report(cfg, "certify", len(points))
    report["tolerances"] = _tolerances(cfg)
    report["pencil"] = pencil.to_dict()
    report["certify"] = {
        "expect": cfg.expect,
        "matched": matched,
    }
    write_json(os.path.join(out_dir, f"{prefix}.json"), report)
    if not matched:
        print(
            f"error: classification {pencil.classification!r} does not match "
            f"expected {cfg.expect!r}",
            file=sys.stderr,
        )
        return 1
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

_COMMANDS = {
    "report": (cmd_report, "curvature summary, eigenvalue grid, heatmaps"),
    "verify": (cmd_verify, "variation-identity residuals with Richardson ratios"),
    "deform-local": (cmd_deform_local, "one budgeted conformal bump step"),
    "deform-global": (cmd_deform_global, "staged deformation to a strict sign"),
    "certify": (cmd_certify, "classify the traced curvature pencil"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hermdeform",
        description=(
            "Numerical Hermitian geometry: canonical-connection curvature, "
            "traced-curvature positivity, and certified conformal "
            "deformations."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, metavar="PATH",
                       help="run configuration file")
        p.add_argument("--grid", type=int, metavar="N",
                       help="override run.grid (samples per axis)")
        p.add_argument("--out", metavar="DIR", help="override output.dir")
        p.add_argument("--eps", type=float, metavar="X",
                       help="override run.eps (deformation budget)")
        p.add_argument("--k", type=int, choices=(0, 1, 2),
                       help="override run.k (derivative order of the budget)")
        p.add_argument("--sign", choices=("pos", "neg"),
                       help="override run.sign (target sign)")
        p.add_argument("--seed-point", dest="seed_point", metavar="Z",
                       help='override run.seed_point ("z1,...,zn", deform only)')
    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        if args.grid is not None:
            overrides["run.grid"] = str(args.grid)
        if args.eps is not None:
            overrides["run.eps"] = repr(args.eps)
        if args.k is not None:
            overrides["run.k"] = str(args.k)
        if args.sign is not None:
            overrides["run.sign"] = args.sign
        if args.seed_point is not None:
            if args.command not in ("deform-local", "deform-global"):
                raise ConfigError(
                    "--seed-point only applies to deform-local and "
                    "deform-global"
                )
            overrides["run.seed_point"] = args.seed_point
        if args.out is not None:
            overrides["output.dir"] = args.out
        cfg = load_config(args.config, overrides)
        handler = _COMMANDS[args.command][0]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except HermdeformError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
