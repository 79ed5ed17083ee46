"""Phantom catalog: gaussian-bump, two-discs, smooth-ring, one-hot and
random band-limited ensembles."""

from __future__ import annotations

import re

import numpy as np

from .grids import SourceImage, SpatialGrid

__all__ = ["CATALOG", "make_phantom", "band_limited_ensemble", "parse_phantom_name"]

CATALOG = ("gaussian-bump", "two-discs", "smooth-ring", "one-hot")


def _support_radius(domain, center):
    om = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    return float(domain.radius_at(om).min())


def _smooth_step(t, width):
    # C^1 transition from 1 (t << 0) to 0 (t >> 0)
    s = np.clip(0.5 - t / width, 0.0, 1.0)
    return s * s * (3 - 2 * s)


def parse_phantom_name(name: str):
    m = re.fullmatch(r"one-hot[:(]\s*(\d+)\s*,\s*(\d+)\s*\)?", name.strip())
    if m:
        return "one-hot", (int(m.group(1)), int(m.group(2)))
    if name in CATALOG and name != "one-hot":
        return name, ()
    raise ValueError(f"unknown phantom {name!r}; choose from gaussian-bump, two-discs, "
                     "smooth-ring, one-hot:i,j")


def make_phantom(name: str, grid: SpatialGrid, domain) -> SourceImage:
    """Catalog phantom on ``grid``, supported in ``domain``.

    Sizes scale with the inscribed radius R of the domain about its center:

    * ``gaussian-bump``: ``exp(-|x - c - 0.1 R e_x|^2 / (0.3 R)^2)``
    * ``two-discs``: two smoothed discs of radius ``0.25 R`` with heights 1 and 0.6
    * ``smooth-ring``: ``exp(-((|x - c| - 0.55 R) / (0.12 R))^2)``
    * ``one-hot:i,j``: 1 in cell (row i, column j)
    """
    kind, args = parse_phantom_name(name)
    support = grid.mask(domain)
    c = np.asarray(domain.center)
    R = _support_radius(domain, c)
    P = grid.points
    if kind == "one-hot":
        i, j = args
        if not (0 <= i < grid.ny and 0 <= j < grid.nx):
            raise ValueError(f"one-hot index ({i}, {j}) outside the {grid.ny}x{grid.nx} grid")
        v = np.zeros(grid.shape)
        v[i, j] = 1.0
        if not support[i, j]:
            raise ValueError(f"one-hot cell ({i}, {j}) lies outside the support domain")
        return SourceImage(v, grid, support)
    d = P - c
    if kind == "gaussian-bump":
        q = d - np.array([0.1 * R, 0.0])
        v = np.exp(-np.sum(q * q, axis=-1) / (0.3 * R) ** 2)
    elif kind == "two-discs":
        r1 = np.linalg.norm(d - np.array([-0.35 * R, 0.1 * R]), axis=-1)
        r2 = np.linalg.norm(d - np.array([0.3 * R, -0.2 * R]), axis=-1)
        w = 0.08 * R
        v = _smooth_step(r1 - 0.25 * R, w) + 0.6 * _smooth_step(r2 - 0.25 * R, w)
    else:
        r = np.linalg.norm(d, axis=-1)
        v = np.exp(-((r - 0.55 * R) / (0.12 * R)) ** 2)
    return SourceImage(v, grid, support)


def band_limited_ensemble(grid: SpatialGrid, domain, n: int = 20, k_max: float = 6.0,
                          n_modes: int = 12, seed: int = 0) -> list:
    """Random smooth phantoms: sums of ``n_modes`` plane waves with
    ``|k| <= k_max / R`` (R the inscribed radius), tapered to zero at the
    boundary by ``(1 - r^2 / R^2)^2``."""
    rng = np.random.default_rng(seed)
    c = np.asarray(domain.center)
    R = _support_radius(domain, c)
    d = grid.points - c
    r2 = np.sum(d * d, axis=-1) / R ** 2
    taper = np.where(r2 < 1, (1 - r2) ** 2, 0.0)
    support = grid.mask(domain)
    out = []
    for _ in range(n):
        kr = k_max / R * np.sqrt(rng.uniform(0, 1, n_modes))
        ka = rng.uniform(0, 2 * np.pi, n_modes)
        ph = rng.uniform(0, 2 * np.pi, n_modes)
        amp = rng.normal(size=n_modes)
        k = np.stack([kr * np.cos(ka), kr * np.sin(ka)], axis=-1)
        v = np.einsum("m,...m->...", amp, np.cos(d @ k.T + ph))
        out.append(SourceImage(v * taper, grid, support))
    return out
