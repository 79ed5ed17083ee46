"""Attenuation and scattering coefficients."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .grids import PhaseGrid, SpatialGrid, bilinear_stencil

__all__ = ["AttenuationField", "ScatteringKernel"]


@dataclass(frozen=True, eq=False)
class AttenuationField:
    """Attenuation sigma(x, theta).

    Constructors: :meth:`zero`, :meth:`constant`, :meth:`gaussian`,
    :meth:`image` (bilinear over a spatial grid, zero outside it) and
    :meth:`from_callable`. With ``nonnegative=True`` every evaluation is
    checked for negative values.
    """

    kind: str = "zero"
    mu: float = 0.0
    width: float = 1.0
    center: tuple = (0.0, 0.0)
    values: Optional[np.ndarray] = None
    grid: Optional[SpatialGrid] = None
    fn: Optional[Callable] = None
    nonnegative: bool = True

    def __post_init__(self):
        if self.nonnegative:
            if self.kind in ("constant", "gaussian") and self.mu < 0:
                raise ValueError("attenuation flagged nonnegative has negative amplitude")
            if self.kind == "image" and np.any(self.values < 0):
                raise ValueError("attenuation flagged nonnegative has negative values")

    @classmethod
    def zero(cls) -> "AttenuationField":
        return cls("zero")

    @classmethod
    def constant(cls, mu: float, nonnegative: bool = True) -> "AttenuationField":
        return cls("constant", mu=float(mu), nonnegative=nonnegative)

    @classmethod
    def gaussian(cls, amplitude: float, width: float = 0.5, center=(0.0, 0.0)) -> "AttenuationField":
        return cls("gaussian", mu=float(amplitude), width=float(width), center=tuple(map(float, center)))

    @classmethod
    def image(cls, values, grid: SpatialGrid, nonnegative: bool = True) -> "AttenuationField":
        v = np.asarray(values, dtype=float)
        if v.shape != grid.shape:
            raise ValueError("attenuation image does not match its grid")
        return cls("image", values=v, grid=grid, nonnegative=nonnegative)

    @classmethod
    def from_callable(cls, fn: Callable, nonnegative: bool = True) -> "AttenuationField":
        """``fn(x, theta) -> values`` with trailing point dimension 2."""
        return cls("callable", fn=fn, nonnegative=nonnegative)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or (self.kind in ("constant", "gaussian") and self.mu == 0.0)

    def __call__(self, x, theta) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "constant":
            return np.full(shape, self.mu)
        if self.kind == "gaussian":
            d = x - np.asarray(self.center)
            return self.mu * np.exp(-np.einsum("...i,...i->...", d, d) / self.width ** 2)
        if self.kind == "image":
            cmap = np.arange(self.grid.size).reshape(self.grid.shape)
            cols, wts = bilinear_stencil(self.grid, x, cmap)
            out = np.sum(wts * self.values.ravel()[np.maximum(cols, 0)], axis=-1)
        else:
            out = np.asarray(self.fn(x, np.asarray(theta, dtype=float)), dtype=float)
            out = np.broadcast_to(out, shape)
        if not np.all(np.isfinite(out)):
            from .errors import DomainError
            raise DomainError("attenuation is not finite at some sample")
        if self.nonnegative and np.any(out < 0):
            raise ValueError("attenuation flagged nonnegative returned negative values")
        return out


@dataclass(frozen=True, eq=False)
class ScatteringKernel:
    """Scattering kernel k(x, theta, theta').

    Either a general callable ``k(x, theta, theta_prime)`` or a separable
    pair with ``k = kappa1(x, theta) * kappa2(x, theta_prime)``. ``scale``
    multiplies the kernel (applied to kappa1 in the separable case).
    """

    kind: str = "zero"
    k: Optional[Callable] = None
    kappa1: Optional[Callable] = None
    kappa2: Optional[Callable] = None
    scale: float = 1.0

    @classmethod
    def zero(cls) -> "ScatteringKernel":
        return cls("zero")

    @classmethod
    def general(cls, k: Callable) -> "ScatteringKernel":
        return cls("general", k=k)

    @classmethod
    def separable(cls, kappa1: Callable, kappa2: Callable) -> "ScatteringKernel":
        return cls("separable", kappa1=kappa1, kappa2=kappa2)

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.scale == 0.0

    @property
    def is_separable(self) -> bool:
        return self.kind in ("separable", "zero")

    def scaled(self, lam: float) -> "ScatteringKernel":
        return replace(self, scale=self.scale * float(lam))

    def as_general(self) -> "ScatteringKernel":
        """The same kernel through the general-callable code path."""
        if self.kind != "separable":
            return self
        k1, k2 = self.kappa1, self.kappa2
        return ScatteringKernel("general", k=lambda x, t, tp: k1(x, t) * k2(x, tp), scale=self.scale)

    def __call__(self, x, theta, theta_prime) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        shape = np.broadcast_shapes(x.shape, np.shape(theta), np.shape(theta_prime))[:-1]
        if self.kind == "zero":
            return np.zeros(shape)
        if self.kind == "separable":
            out = self.scale * self.kappa1(x, theta) * self.kappa2(x, theta_prime)
        else:
            out = self.scale * np.asarray(self.k(x, theta, theta_prime), dtype=float)
        return np.broadcast_to(out, shape)

    def tables(self, pg: PhaseGrid):
        """Kernel samples on a phase grid.

        Returns ``("separable", k1[c, j], k2[c, j'])`` or
        ``("general", k[c, j, j'])``.
        """
        th = pg.velocities()
        x = np.broadcast_to(pg.x[:, None, :], th.shape)
        if self.kind == "zero":
            z = np.zeros((pg.n_cells, pg.n_theta))
            return "separable", z, z
        if self.kind == "separable":
            k1 = self.scale * np.broadcast_to(np.asarray(self.kappa1(x, th), dtype=float), x.shape[:-1])
            k2 = np.broadcast_to(np.asarray(self.kappa2(x, th), dtype=float), x.shape[:-1])
            return "separable", np.array(k1), np.array(k2)
        xx = np.broadcast_to(pg.x[:, None, None, :], (pg.n_cells, pg.n_theta, pg.n_theta, 2))
        t = np.broadcast_to(th[:, :, None, :], xx.shape)
        tp = np.broadcast_to(th[:, None, :, :], xx.shape)
        return "general", np.array(self(xx, t, tp))
