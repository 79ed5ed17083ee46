"""Experiment configuration: flat ``key = value`` text with dotted keys.

Example::

    # weak magnetic field on the unit disc
    domain.radius = 0.8
    outer.radius = 1.0
    force.magnetic.kind = constant
    force.magnetic.b = 0.2
    tau = 0.5

Lines starting with ``#`` and blank lines are ignored. Unknown keys,
malformed values and violated invariants raise :class:`ConfigError` naming
the offending line. :meth:`ExperimentConfig.dumps` writes every key in
sorted order, so parse -> dump -> parse is idempotent.

Scattering coefficients are five-term families in position and direction,
``kappa(x, theta) = c0 + c1 x + c2 y + c3 cos(beta) + c4 sin(beta)`` with
``beta`` the direction angle of ``theta``, given as ``c0,c1,c2,c3,c4``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ShellError
from .fields import AttenuationField, ScatteringKernel
from .geometry import (Disc, ForceField, Geometry, GriddedField, IntegratorOptions, Magnetic,
                       Potential)
from .grids import SpatialGrid

__all__ = ["ExperimentConfig", "DEFAULTS", "load_config", "parse_config"]

_AUTO = "auto"

# key -> (type, default); "vec" is a comma-separated float tuple
DEFAULTS = {
    "domain.center": ("vec", (0.0, 0.0)),
    "domain.radius": (float, 0.8),
    "outer.center": ("vec", (0.0, 0.0)),
    "outer.radius": (float, 1.0),
    "tau": (float, 0.5),
    "force.potential.kind": (str, "zero"),
    "force.potential.amplitude": (float, 0.0),
    "force.potential.width": (float, 1.0),
    "force.potential.center": ("vec", (0.0, 0.0)),
    "force.potential.file": (str, ""),
    "force.magnetic.kind": (str, "none"),
    "force.magnetic.b": (float, 0.0),
    "force.magnetic.b2": (float, 0.0),
    "force.magnetic.center": ("vec", (0.0, 0.0)),
    "force.magnetic.file": (str, ""),
    "sigma.kind": (str, "zero"),
    "sigma.value": (float, 0.0),
    "sigma.width": (float, 0.5),
    "sigma.center": ("vec", (0.0, 0.0)),
    "kernel.kind": (str, "zero"),
    "kernel.kappa1": ("vec", (1.0, 0.0, 0.0, 0.0, 0.0)),
    "kernel.kappa2": ("vec", (1.0, 0.0, 0.0, 0.0, 0.0)),
    "kernel.scale": (float, 1.0),
    "grid.nx": (int, 64),
    "grid.ny": (int, 64),
    "grid.ntheta": (int, 32),
    "nodes.boundary": (int, 180),
    "nodes.angle": (int, 90),
    "nodes.samples": ("auto_int", _AUTO),
    "integrator.h": ("auto_float", _AUTO),
    "integrator.eps": ("auto_float", _AUTO),
    "integrator.budget": ("auto_float", _AUTO),
    "solver.method": (str, "cgne"),
    "solver.tol": (float, 1e-8),
    "solver.max_iter": (int, 200),
    "solver.eps": (float, 0.0),
    "solver.step": ("auto_float", _AUTO),
    "solver.inner": (str, "fixed-point"),
    "transport.tol": (float, 1e-10),
    "transport.max_iter": (int, 500),
    "verify.boundary": (int, 100),
    "verify.angle": (int, 64),
    "verify.samples": (int, 128),
    "verify.trajectories": (int, 200),
    "verify.adjoint_grid": (int, 32),
    "verify.adjoint_pairs": (int, 20),
    "probe.count": (int, 20),
    "probe.kmax": (float, 6.0),
    "seed": (int, 0),
}

_CHOICES = {
    "force.potential.kind": ("zero", "harmonic", "gaussian", "grid"),
    "force.magnetic.kind": ("none", "constant", "radial", "grid"),
    "sigma.kind": ("zero", "constant", "gaussian"),
    "kernel.kind": ("zero", "separable"),
    "solver.method": ("cgne", "landweber"),
    "solver.inner": ("fixed-point", "direct"),
}


def _parse_value(key: str, raw: str, where: str):
    kind, _ = DEFAULTS[key]
    try:
        if kind is float:
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError("not finite")
            return v
        if kind is int:
            return int(raw)
        if kind is str:
            if key in _CHOICES and raw not in _CHOICES[key]:
                raise ValueError(f"expected one of {', '.join(_CHOICES[key])}")
            return raw
        if kind == "vec":
            return tuple(float(p) for p in raw.split(","))
        if raw == _AUTO:
            return _AUTO
        return int(raw) if kind == "auto_int" else float(raw)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value {raw!r} for {key}: {exc}") from None


def _format_value(v) -> str:
    if isinstance(v, tuple):
        return ",".join(format(x, ".17g") for x in v)
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def parse_config(text: str, source: str = "<config>", base_dir: str = ".") -> "ExperimentConfig":
    values = {k: d for k, (_, d) in DEFAULTS.items()}
    lines = {}
    for n, line in enumerate(text.split("\n"), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        where = f"{source}:{n}"
        if "=" not in s:
            raise ConfigError(f"{where}: expected 'key = value', got {s!r}")
        key, raw = (p.strip() for p in s.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"{where}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"{where}: duplicate key {key!r} (first set on line {lines[key]})")
        values[key] = _parse_value(key, raw, where)
        lines[key] = n
    cfg = ExperimentConfig(values, source=source, base_dir=base_dir, lines=lines)
    cfg.validate()
    return cfg


def load_config(path) -> "ExperimentConfig":
    with open(path, "r") as fh:
        text = fh.read()
    return parse_config(text, source=os.fspath(path), base_dir=os.path.dirname(os.fspath(path)))


def _kappa(c):
    c0, c1, c2, c3, c4 = c

    def fn(x, theta):
        b = np.arctan2(theta[..., 1], theta[..., 0])
        return c0 + c1 * x[..., 0] + c2 * x[..., 1] + c3 * np.cos(b) + c4 * np.sin(b)

    return fn


@dataclass(eq=False)
class ExperimentConfig:
    """Parsed configuration with builders for the numerical objects."""

    values: dict
    source: str = "<config>"
    base_dir: str = "."
    lines: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, key):
        return self.values[key]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    def _where(self, key: str) -> str:
        n = self.lines.get(key)
        return f"{self.source}:{n}" if n else f"{self.source} ({key})"

    def replace(self, **kw) -> "ExperimentConfig":
        """Copy with keys overridden (dots written as ``__``) and revalidated."""
        vals = dict(self.values)
        for k, v in kw.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown key {key!r}")
            vals[key] = _parse_value(key, _format_value(v), key)
        cfg = ExperimentConfig(vals, self.source, self.base_dir, dict(self.lines))
        cfg.validate()
        return cfg

    def dumps(self) -> str:
        return "".join(f"{k} = {_format_value(self.values[k])}\n" for k in sorted(self.values))

    def dump(self, path):
        with open(path, "w", newline="\n") as fh:
            fh.write(self.dumps())

    # -- validation ---------------------------------------------------------------

    def validate(self):
        v = self.values
        for key in ("domain.center", "outer.center", "force.potential.center",
                    "force.magnetic.center", "sigma.center"):
            if len(v[key]) != 2:
                raise ConfigError(f"{self._where(key)}: {key} needs 2 components")
        for key in ("kernel.kappa1", "kernel.kappa2"):
            if len(v[key]) != 5:
                raise ConfigError(f"{self._where(key)}: {key} needs 5 coefficients")
        for key in ("domain.radius", "outer.radius", "tau", "grid.nx", "grid.ny", "grid.ntheta",
                    "nodes.boundary", "nodes.angle", "solver.max_iter", "transport.max_iter",
                    "solver.tol", "transport.tol"):
            if not v[key] > 0:
                raise ConfigError(f"{self._where(key)}: {key} must be positive")
        if v["grid.ntheta"] % 2:
            raise ConfigError(f"{self._where('grid.ntheta')}: grid.ntheta must be even")
        if v["solver.eps"] < 0:
            raise ConfigError(f"{self._where('solver.eps')}: solver.eps must be nonnegative")
        for key in ("force.potential.file", "force.magnetic.file"):
            kind_key = key.replace(".file", ".kind")
            if v[kind_key] == "grid" and not v[key]:
                raise ConfigError(f"{self._where(kind_key)}: grid field needs {key}")
        ci, co = np.array(v["domain.center"]), np.array(v["outer.center"])
        if np.linalg.norm(ci - co) + v["domain.radius"] >= v["outer.radius"]:
            raise ConfigError(f"{self._where('domain.radius')}: domain must lie strictly inside "
                              "the enclosing domain")
        # builds the energy shell, which samples phi on the closed outer disc
        self.geometry()

    # -- builders --------------------------------------------------------------------

    def _grid_field(self, key: str) -> GriddedField:
        from .fileio import read_image

        path = os.path.join(self.base_dir, self.values[key])
        try:
            img = read_image(path)
        except OSError as exc:
            raise ConfigError(f"{self._where(key)}: cannot read {path}: {exc}") from None
        g = img.grid
        return GriddedField(img.values, (g.xs[0], g.xs[-1], g.ys[0], g.ys[-1]))

    def force(self) -> ForceField:
        v = self.values
        pk = v["force.potential.kind"]
        if pk == "zero":
            pot = Potential.zero()
        elif pk == "harmonic":
            pot = Potential.harmonic(v["force.potential.amplitude"], v["force.potential.center"])
        elif pk == "gaussian":
            pot = Potential.gaussian(v["force.potential.amplitude"], v["force.potential.width"],
                                     v["force.potential.center"])
        else:
            pot = Potential.grid(self._grid_field("force.potential.file"))
        mk = v["force.magnetic.kind"]
        if mk == "none":
            mag = Magnetic.none()
        elif mk == "constant":
            mag = Magnetic.constant(v["force.magnetic.b"])
        elif mk == "radial":
            mag = Magnetic.radial(v["force.magnetic.b"], v["force.magnetic.b2"],
                                  v["force.magnetic.center"])
        else:
            mag = Magnetic.grid(self._grid_field("force.magnetic.file"))
        return ForceField(pot, mag)

    def integrator(self) -> IntegratorOptions:
        v = self.values
        get = lambda k: None if v[k] == _AUTO else v[k]
        try:
            return IntegratorOptions(get("integrator.h"), get("integrator.eps"),
                                     get("integrator.budget"))
        except ValueError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def geometry(self) -> Geometry:
        v = self.values
        try:
            return Geometry(Disc(v["domain.center"], v["domain.radius"]), self.force(), v["tau"],
                            outer=Disc(v["outer.center"], v["outer.radius"]),
                            options=self.integrator())
        except ShellError as exc:
            raise ConfigError(f"{self._where('tau')}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"{self.source}: {exc}") from None

    def sigma(self) -> AttenuationField:
        v = self.values
        kind = v["sigma.kind"]
        try:
            if kind == "zero":
                return AttenuationField.zero()
            if kind == "constant":
                return AttenuationField.constant(v["sigma.value"])
            return AttenuationField.gaussian(v["sigma.value"], v["sigma.width"], v["sigma.center"])
        except ValueError as exc:
            raise ConfigError(f"{self._where('sigma.value')}: {exc}") from None

    def kernel(self) -> ScatteringKernel:
        v = self.values
        if v["kernel.kind"] == "zero":
            return ScatteringKernel.zero()
        return ScatteringKernel.separable(_kappa(v["kernel.kappa1"]),
                                          _kappa(v["kernel.kappa2"])).scaled(v["kernel.scale"])

    def grid(self) -> SpatialGrid:
        v = self.values
        c, r = v["outer.center"], v["outer.radius"]
        return SpatialGrid(v["grid.nx"], v["grid.ny"], (c[0] - r, c[0] + r, c[1] - r, c[1] + r))

    @property
    def n_samples(self) -> Optional[int]:
        s = self.values["nodes.samples"]
        return None if s == _AUTO else int(s)

    def setup(self, geom: Optional[Geometry] = None):
        from .reconstruction import InverseProblemSetup

        v = self.values
        k = self.kernel()
        return InverseProblemSetup(geom or self.geometry(), self.grid(), self.sigma(), k,
                                   separable=not k.is_zero, eps=v["solver.eps"],
                                   n_bdry=v["nodes.boundary"], n_angle=v["nodes.angle"],
                                   n_theta=v["grid.ntheta"], n_samples=self.n_samples,
                                   inner=v["solver.inner"])
