"""Run configuration: INI-style parsing, strict validation, metric building.

A run file has up to five sections::

    [manifold]  kind = box | torus | shell, n = 1 | 2, plus kind-specific
                geometry keys (box: center, half_widths; torus: periods;
                shell: lam)
    [g0]        base metric (flat | hopf_standard | fubini_study) and an
                optional conformal exponent expression
    [tilde]     reference metric, same keys; omitted means tilde = g0
    [run]       command parameters (grid, window, eps, k, sign,
                seed_point, center, radius, dt, triples, amplitudes,
                expect, tol_zero)
    [output]    dir, prefix

Everything is validated before any computation: unknown sections or
keys are rejected by name, kind-incompatible keys are rejected, and
conformal expressions are parsed and checked for real-valuedness on a
sample grid.  All validation problems raise :class:`ConfigError`, which
the command layer maps to exit code 2.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from ..core.charts import AnnulusChart, BoxChart, ChartModel, TorusChart, to_complex
from ..core.fields import JetFunctionField
from ..core.metrics import MetricSpec, conformal_scale
from ..errors import ChartDomainError, ConfigError
from . import expressions

__all__ = ["RunConfig", "load_config", "CLASSIFICATIONS"]

CLASSIFICATIONS = (
    "zero",
    "positive",
    "negative",
    "quasi-positive",
    "quasi-negative",
    "nonnegative",
    "nonpositive",
    "indefinite",
)

_MANIFOLD_KEYS = {
    "box": ("kind", "n", "center", "half_widths"),
    "torus": ("kind", "n", "periods"),
    "shell": ("kind", "n", "lam"),
}
_METRIC_KEYS = ("base", "conformal")
_RUN_KEYS = (
    "grid",
    "window",
    "eps",
    "k",
    "sign",
    "seed_point",
    "center",
    "radius",
    "dt",
    "triples",
    "amplitudes",
    "expect",
    "tol_zero",
)
_OUTPUT_KEYS = ("dir", "prefix")
_SECTIONS = ("manifold", "g0", "tilde", "run", "output")

_BASE_FOR_KIND = {
    "box": ("flat", "fubini_study"),
    "torus": ("flat",),
    "shell": ("hopf_standard",),
}

_REALNESS_TOL = 1e-12


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration with constructed chart and metrics."""

    path: str
    sha256: str
    overrides: tuple
    kind: str
    n: int
    chart: ChartModel
    g0: MetricSpec
    tilde: MetricSpec
    tilde_is_g0: bool
    g0_source: dict
    tilde_source: dict
    grid: int
    window: Optional[float]
    eps: Optional[float]
    k: int
    sign: str
    seed_point: Optional[tuple]
    center: Optional[tuple]
    radius: Optional[float]
    dt: float
    triples: int
    amplitudes: tuple
    expect: Optional[str]
    tol_zero: Optional[float]
    out_dir: str
    prefix: Optional[str]

    @property
    def sign_word(self) -> str:
        """``pos``/``neg`` mapped to the deformation vocabulary."""
        return "positive" if self.sign == "pos" else "negative"

    def describe(self) -> dict:
        """Configuration summary embedded in every report."""
        manifold: dict = {"kind": self.kind, "n": self.n}
        if self.kind == "box":
            manifold["center"] = list(self.chart.center)
            manifold["half_widths"] = list(self.chart.half_widths)
        elif self.kind == "torus":
            manifold["periods"] = [list(row) for row in self.chart.basis]
        else:
            manifold["lam"] = self.chart.lam
        run: dict = {
            "grid": self.grid,
            "k": self.k,
            "sign": self.sign,
            "dt": self.dt,
            "triples": self.triples,
            "amplitudes": list(self.amplitudes),
        }
        for key in ("window", "eps", "radius", "tol_zero"):
            value = getattr(self, key)
            if value is not None:
                run[key] = value
        for key in ("seed_point", "center"):
            value = getattr(self, key)
            if value is not None:
                run[key] = list(value)
        if self.expect is not None:
            run["expect"] = self.expect
        return {
            "config_sha256": self.sha256,
            "overrides": [list(pair) for pair in self.overrides],
            "manifold": manifold,
            "metrics": {
                "g0": self.g0_source,
                "tilde": self.tilde_source,
                "tilde_is_g0": self.tilde_is_g0,
            },
            "run": run,
        }


def load_config(
    path: str, overrides: Optional[Mapping[str, str]] = None
) -> RunConfig:
    """Read, override, and validate a run file.

    ``overrides`` maps dotted keys (``"run.grid"``) to raw string
    values; they are applied before validation exactly as if the file
    contained them, and recorded (sorted) for the report.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw_bytes = fh.read()
    digest = hashlib.sha256(raw_bytes).hexdigest()

    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    try:
        parser.read_string(raw_bytes.decode("utf-8"), source=path)
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config file is not UTF-8: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    data: dict[str, dict[str, str]] = {
        section: dict(parser.items(section)) for section in parser.sections()
    }

    pairs = tuple(sorted((overrides or {}).items()))
    for dotted, value in pairs:
        if dotted.count(".") != 1:
            raise ConfigError(f"override key must be section.key: {dotted!r}")
        section, key = dotted.split(".")
        data.setdefault(section, {})[key] = value

    for section in data:
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown section [{section}]; expected one of "
                f"{', '.join(_SECTIONS)}"
            )

    # ---- manifold --------------------------------------------------------
    manifold = data.get("manifold")
    if manifold is None:
        raise ConfigError('missing required key "manifold.kind"')
    kind = manifold.get("kind")
    if kind is None:
        raise ConfigError('missing required key "manifold.kind"')
    if kind not in _MANIFOLD_KEYS:
        raise ConfigError(
            f"manifold.kind must be box, torus, or shell, got {kind!r}"
        )
    _reject_unknown("manifold", manifold, _MANIFOLD_KEYS[kind])
    n = _get_int("manifold.n", manifold.get("n"), required=True)
    if n not in (1, 2):
        raise ConfigError(f"manifold.n must be 1 or 2, got {n}")
    chart = _build_chart(kind, n, manifold)

    # ---- metrics ---------------------------------------------------------
    g0_block = data.get("g0")
    if g0_block is None or "base" not in g0_block:
        raise ConfigError('missing required key "g0.base"')
    _reject_unknown("g0", g0_block, _METRIC_KEYS)
    g0, g0_source = _build_metric("g0", g0_block, kind, chart, name="g0")

    tilde_block = data.get("tilde")
    if tilde_block is None:
        tilde, tilde_source, tilde_is_g0 = g0, dict(g0_source), True
    else:
        if "base" not in tilde_block:
            raise ConfigError('missing required key "tilde.base"')
        _reject_unknown("tilde", tilde_block, _METRIC_KEYS)
        tilde, tilde_source = _build_metric(
            "tilde", tilde_block, kind, chart, name="tilde"
        )
        tilde_is_g0 = False

    # ---- run parameters ----------------------------------------------------
    run = data.get("run", {})
    _reject_unknown("run", run, _RUN_KEYS)
    grid = _get_int("run.grid", run.get("grid"), default=12)
    if grid < 2:
        raise ConfigError(f"run.grid must be at least 2, got {grid}")
    window = _get_float("run.window", run.get("window"))
    if window is not None:
        _validate_window(window, kind, chart)
    eps = _get_float("run.eps", run.get("eps"))
    if eps is not None and eps <= 0.0:
        raise ConfigError(f"run.eps must be positive, got {eps}")
    k = _get_int("run.k", run.get("k"), default=2)
    if k not in (0, 1, 2):
        raise ConfigError(f"run.k must be 0, 1, or 2, got {k}")
    sign = run.get("sign", "pos")
    if sign not in ("pos", "neg"):
        raise ConfigError(f"run.sign must be pos or neg, got {sign!r}")
    seed_point = _get_point("run.seed_point", run.get("seed_point"), n)
    center = _get_point("run.center", run.get("center"), n)
    radius = _get_float("run.radius", run.get("radius"))
    if radius is not None and radius <= 0.0:
        raise ConfigError(f"run.radius must be positive, got {radius}")
    dt = _get_float("run.dt", run.get("dt"), default=1e-3)
    if dt <= 0.0:
        raise ConfigError(f"run.dt must be positive, got {dt}")
    triples = _get_int("run.triples", run.get("triples"), default=20)
    if triples < 1:
        raise ConfigError(f"run.triples must be at least 1, got {triples}")
    amplitudes = _get_floats(
        "run.amplitudes", run.get("amplitudes"), default=(0.0, 0.05, 0.1)
    )
    if any(a < 0.0 for a in amplitudes):
        raise ConfigError("run.amplitudes must be non-negative")
    expect = run.get("expect")
    if expect is not None and expect not in CLASSIFICATIONS:
        raise ConfigError(
            f"run.expect must be one of {', '.join(CLASSIFICATIONS)}, "
            f"got {expect!r}"
        )
    tol_zero = _get_float("run.tol_zero", run.get("tol_zero"))
    if tol_zero is not None and tol_zero <= 0.0:
        raise ConfigError(f"run.tol_zero must be positive, got {tol_zero}")

    output = data.get("output", {})
    _reject_unknown("output", output, _OUTPUT_KEYS)
    out_dir = output.get("dir", "out")
    prefix = output.get("prefix")

    return RunConfig(
        path=path,
        sha256=digest,
        overrides=pairs,
        kind=kind,
        n=n,
        chart=chart,
        g0=g0,
        tilde=tilde,
        tilde_is_g0=tilde_is_g0,
        g0_source=g0_source,
        tilde_source=tilde_source,
        grid=grid,
        window=window,
        eps=eps,
        k=k,
        sign=sign,
        seed_point=seed_point,
        center=center,
        radius=radius,
        dt=dt,
        triples=triples,
        amplitudes=amplitudes,
        expect=expect,
        tol_zero=tol_zero,
        out_dir=out_dir,
        prefix=prefix,
    )


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _validate_window(window: float, kind: str, chart: ChartModel) -> None:
    """The certification window restricts sample grids to a centred
    sub-box; deformations then have chart room around every grid point
    (covering-ball radii must stay below the local injectivity bound)."""
    if window <= 0.0:
        raise ConfigError(f"run.window must be positive, got {window}")
    if kind == "box":
        limit = min(chart.half_widths)
        if window > limit:
            raise ConfigError(
                f"run.window {window} exceeds the smallest chart half-width "
                f"{limit}"
            )
    elif kind == "torus":
        limit = 0.5 * chart.shortest_lattice_vector()
        if window > limit:
            raise ConfigError(
                f"run.window {window} exceeds half the shortest lattice "
                f"vector {limit}"
            )
    else:
        raise ConfigError("run.window applies to box and torus manifolds only")


def _reject_unknown(section: str, block: Mapping[str, str], allowed) -> None:
    for key in block:
        if key not in allowed:
            raise ConfigError(
                f"unknown key {section}.{key}; allowed keys in [{section}]: "
                f"{', '.join(allowed)}"
            )


def _get_int(name: str, text, *, default=None, required: bool = False):
    if text is None:
        if required:
            raise ConfigError(f'missing required key "{name}"')
        return default
    try:
        return int(text)
    except ValueError as exc:
        raise ConfigError(f"{name} must be an integer, got {text!r}") from exc


def _get_float(name: str, text, *, default=None):
    if text is None:
        return default
    try:
        value = float(text)
    except ValueError as exc:
        raise ConfigError(f"{name} must be a number, got {text!r}") from exc
    if not np.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {text!r}")
    return value


def _get_floats(name: str, text, *, default=None) -> tuple:
    if text is None:
        return tuple(default) if default is not None else ()
    out = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            raise ConfigError(f"{name}: empty entry in {text!r}")
        out.append(_get_float(name, piece))
    return tuple(out)


def _get_point(name: str, text, n: int):
    """Parse ``"z1,...,zn"`` (complex literals) into real chart
    coordinates ordered ``x_1..x_n, y_1..y_n``."""
    if text is None:
        return None
    pieces = [p.strip() for p in text.split(",")]
    if len(pieces) != n:
        raise ConfigError(
            f"{name} needs {n} comma-separated complex entries, got "
            f"{len(pieces)} in {text!r}"
        )
    try:
        zs = [complex(p) for p in pieces]
    except ValueError as exc:
        raise ConfigError(f"{name}: {exc} in {text!r}") from exc
    return tuple([z.real for z in zs] + [z.imag for z in zs])


def _build_chart(kind: str, n: int, block: Mapping[str, str]) -> ChartModel:
    try:
        if kind == "box":
            center = _get_floats(
                "manifold.center", block.get("center"), default=(0.0,) * (2 * n)
            )
            half = _get_floats(
                "manifold.half_widths",
                block.get("half_widths"),
                default=(1.0,) * (2 * n),
            )
            if len(half) == 1:
                half = half * (2 * n)
            if len(center) == 1:
                center = center * (2 * n)
            return BoxChart(n=n, center=center, half_widths=half)
        if kind == "torus":
            periods = _get_floats("manifold.periods", block.get("periods"))
            if not periods:
                return TorusChart(n=n)
            if len(periods) != 2 * n:
                raise ConfigError(
                    f"manifold.periods needs {2 * n} entries (one per real "
                    f"coordinate), got {len(periods)}"
                )
            basis = tuple(
                tuple(p if i == j else 0.0 for j, _ in enumerate(periods))
                for i, p in enumerate(periods)
            )
            return TorusChart(n=n, basis=basis)
        lam = _get_float("manifold.lam", block.get("lam"), default=2.0)
        return AnnulusChart(n=n, lam=lam)
    except ChartDomainError as exc:
        raise ConfigError(f"manifold: {exc}") from exc


def _build_metric(
    section: str,
    block: Mapping[str, str],
    kind: str,
    chart: ChartModel,
    name: str,
):
    base = block["base"]
    allowed = _BASE_FOR_KIND[kind]
    if base not in allowed:
        raise ConfigError(
            f"{section}.base {base!r} is not valid on a {kind} manifold; "
            f"allowed: {', '.join(allowed)}"
        )
    spec = MetricSpec(chart=chart, base=base, name=name)
    source = {"base": base, "conformal": None}
    text = block.get("conformal")
    if text is not None:
        node = expressions.parse(text, chart.n)
        samples = to_complex(chart.sample_grid(4), chart.n)
        residue = expressions.imaginary_residue(node, samples)
        if residue > _REALNESS_TOL:
            raise ConfigError(
                f"{section}.conformal must be real-valued; relative "
                f"imaginary residue {residue:.3e} on the sample grid "
                "(build exponents from re, im, abs2)"
            )
        field = JetFunctionField(
            expressions.jet_closure(node, chart.n), label=text
        )
        spec = conformal_scale(spec, field, label="conformal")
        source["conformal"] = text
    return spec, source
