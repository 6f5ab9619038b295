"""Gridded uncertainty fields over the terrain.

Cell ``(i, j)`` covers ``[i*res, (i+1)*res) x [j*res, (j+1)*res)`` and its
value is sampled at the cell centre. Values are densities per unit terrain
area, so ``values.sum() * res**2`` is the deposited mass.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .estimator import FilterInstance, covariance_residual

logger = logging.getLogger(__name__)

SPLAT_SIGMAS = 4.0
COV_FLOOR = 1e-6
# above this many cells per side the discrete normaliser is replaced by the analytic one
_MAX_WINDOW = 4096


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    resolution: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1 or not self.resolution > 0:
            raise ValueError(f"invalid grid spec {self}")

    @classmethod
    def for_terrain(cls, extent_x: float, extent_y: float, resolution: float = 1.0) -> "GridSpec":
        return cls(int(round(extent_x / resolution)), int(round(extent_y / resolution)), resolution)

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.resolution, self.height * self.resolution

    @property
    def cell_area(self) -> float:
        return self.resolution**2

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        r = self.resolution
        return (np.arange(self.width) + 0.5) * r, (np.arange(self.height) + 0.5) * r


@dataclass(frozen=True)
class GridMap:
    spec: GridSpec
    values: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.spec.width, self.spec.height):
            raise ValueError(f"values shape {v.shape} does not match {self.spec}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridMap":
        return cls(spec, np.zeros((spec.width, spec.height)))

    @property
    def width(self) -> int:
        return self.spec.width

    @property
    def height(self) -> int:
        return self.spec.height

    @property
    def resolution(self) -> float:
        return self.spec.resolution

    def mass(self) -> float:
        return float(self.values.sum() * self.spec.cell_area)


@dataclass
class HumanState:
    id: int
    gps_x: float
    gps_y: float
    sigma_gps: float = 2.0
    sigma_mob: float = 10.0
    weight: float = 1.0

    def __post_init__(self):
        if not self.sigma_gps > 0:
            raise ValueError("sigma_gps must be > 0")
        if self.sigma_mob < self.sigma_gps:
            raise ValueError("sigma_mob must be >= sigma_gps")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")

    @property
    def position(self) -> np.ndarray:
        return np.array([self.gps_x, self.gps_y])


def _positional_cov(P: np.ndarray) -> tuple[np.ndarray, bool]:
    cov = 0.5 * (P[:2, :2] + P[:2, :2].T)
    if np.all(np.isfinite(cov)) and np.linalg.eigvalsh(cov).min() > 0:
        return cov, False
    diag = np.nan_to_num(np.diag(cov), nan=COV_FLOOR, posinf=COV_FLOOR)
    return np.diag(np.maximum(diag, COV_FLOOR)), True


def splat_gaussian(values: np.ndarray, spec: GridSpec, mean, cov, mass: float) -> None:
    """Add a Gaussian of total mass ``mass`` to ``values`` in place.

    The splat is truncated at 4 sigma per axis and normalised on the cell
    lattice, so the deposited mass is exact whenever the window lies inside
    the grid, including for splats narrower than one cell.
    """
    if mass == 0.0:
        return
    r = spec.resolution
    mx, my = float(mean[0]), float(mean[1])
    sx, sy = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    # window in (possibly out-of-grid) cell indices
    i0 = math.floor((mx - SPLAT_SIGMAS * sx) / r)
    i1 = math.floor((mx + SPLAT_SIGMAS * sx) / r)
    j0 = math.floor((my - SPLAT_SIGMAS * sy) / r)
    j1 = math.floor((my + SPLAT_SIGMAS * sy) / r)
    analytic = (i1 - i0) > _MAX_WINDOW or (j1 - j0) > _MAX_WINDOW
    if analytic:
        i0, i1 = max(i0, 0), min(i1, spec.width - 1)
        j0, j1 = max(j0, 0), min(j1, spec.height - 1)
        if i0 > i1 or j0 > j1:
            return

    xs = (np.arange(i0, i1 + 1) + 0.5) * r - mx
    ys = (np.arange(j0, j1 + 1) + 0.5) * r - my
    inv = np.linalg.inv(cov)
    dx, dy = xs[:, None], ys[None, :]
    expo = -0.5 * (inv[0, 0] * dx * dx + 2.0 * inv[0, 1] * dx * dy + inv[1, 1] * dy * dy)
    dens = np.exp(expo)
    if analytic:
        norm = 2.0 * math.pi * math.sqrt(np.linalg.det(cov))
        dens *= mass / norm
    else:
        total = dens.sum()
        if total <= 0.0 or not math.isfinite(total):
            # narrower than the lattice can resolve: put it all in the nearest cell
            dens = np.zeros_like(dens)
            ci = min(max(math.floor(mx / r) - i0, 0), dens.shape[0] - 1)
            cj = min(max(math.floor(my / r) - j0, 0), dens.shape[1] - 1)
            dens[ci, cj] = 1.0
            total = 1.0
        dens *= mass / (total * spec.cell_area)

    gi0, gi1 = max(i0, 0), min(i1, spec.width - 1)
    gj0, gj1 = max(j0, 0), min(j1, spec.height - 1)
    if gi0 > gi1 or gj0 > gj1:
        return
    values[gi0:gi1 + 1, gj0:gj1 + 1] += dens[gi0 - i0:gi1 - i0 + 1, gj0 - j0:gj1 - j0 + 1]


def fire_uncertainty_map(filters: Iterable[FilterInstance], spec: GridSpec) -> GridMap:
    """Sum of per-spot Gaussian splats.

    Each splat sits at the spot estimate, takes the predicted positional
    covariance as its shape and ``Tr(S)`` as its total mass.
    """
    values = np.zeros((spec.width, spec.height))
    flags = []
    for f in filters:
        P = f.P_prior if f.P_prior is not None else f.P
        cov, degenerate = _positional_cov(P)
        if degenerate:
            logger.warning("spot %s: degenerate positional covariance, floored", f.spot_id)
            flags.append(f"degenerate_cov:{f.spot_id}")
        _, tr = covariance_residual(f)
        splat_gaussian(values, spec, f.position, cov, tr)
    return GridMap(spec, values, tuple(flags))


def human_uncertainty_map(humans: Iterable[HumanState], spec: GridSpec) -> GridMap:
    """Equal-weight two-component Gaussian mixture per human, both centred on the GPS fix."""
    cx, cy = spec.centers()
    values = np.zeros((spec.width, spec.height))
    for h in humans:
        if h.weight == 0:
            continue
        d2 = (cx[:, None] - h.gps_x) ** 2 + (cy[None, :] - h.gps_y) ** 2
        for sigma in (h.sigma_gps, h.sigma_mob):
            var = sigma * sigma
            values += 0.5 * h.weight * np.exp(-0.5 * d2 / var) / (2.0 * math.pi * var)
    return GridMap(spec, values)


def fuse(fire_map: GridMap, human_map: GridMap) -> GridMap:
    if fire_map.spec != human_map.spec:
        raise ValueError(f"grid mismatch: {fire_map.spec} vs {human_map.spec}")
    return GridMap(fire_map.spec, fire_map.values + human_map.values,
                   fire_map.flags + human_map.flags)


def interpolate(grid: GridMap, x: float, y: float) -> float:
    """Bilinear interpolation between cell centres, clamped at the outer centres."""
    r = grid.resolution
    fx = min(max(x / r - 0.5, 0.0), grid.width - 1.0)
    fy = min(max(y / r - 0.5, 0.0), grid.height - 1.0)
    i, j = min(int(fx), grid.width - 2), min(int(fy), grid.height - 2)
    i, j = max(i, 0), max(j, 0)
    tx, ty = fx - i, fy - j
    v = grid.values
    if grid.width == 1:
        tx, i = 0.0, 0
    if grid.height == 1:
        ty, j = 0.0, 0
    i1, j1 = min(i + 1, grid.width - 1), min(j + 1, grid.height - 1)
    return float((1 - tx) * (1 - ty) * v[i, j] + tx * (1 - ty) * v[i1, j]
                 + (1 - tx) * ty * v[i, j1] + tx * ty * v[i1, j1])


def sample_gradient(grid: GridMap, position: Sequence[float]) -> np.ndarray:
    """Central-difference gradient of the interpolated field, one-sided at the edges."""
    x, y = float(position[0]), float(position[1])
    ex, ey = grid.spec.extent
    if not (0.0 <= x <= ex and 0.0 <= y <= ey):
        raise ValueError(f"position ({x}, {y}) outside terrain [0, {ex}] x [0, {ey}]")
    r = grid.resolution
    h = 0.5 * r
    lo_x, hi_x = 0.5 * r, (grid.width - 0.5) * r
    lo_y, hi_y = 0.5 * r, (grid.height - 0.5) * r

    def axis_diff(c, lo, hi, f):
        if hi - lo < h:
            return 0.0
        # near an edge the stencil is anchored at the outer cell centre
        if c - h < lo:
            a, b = lo, max(c + h, lo + h)
        elif c + h > hi:
            a, b = min(c - h, hi - h), hi
        else:
            a, b = c - h, c + h
        return (f(b) - f(a)) / (b - a)

    gx = axis_diff(x, lo_x, hi_x, lambda t: interpolate(grid, t, y))
    gy = axis_diff(y, lo_y, hi_y, lambda t: interpolate(grid, x, t))
    return np.array([gx, gy])


def write_pgm(grid: GridMap, path: str | Path, maxval: int = 65535) -> float:
    """Write the map as a plain (P2) PGM and return the value-per-grey-level scale.

    Rows run along ``y`` (row 0 is the lowest ``y``), columns along ``x``. The
    header comment records the resolution and scale so values can be recovered
    as ``grey * scale``.
    """
    peak = float(grid.values.max()) if grid.values.size else 0.0
    scale = peak / maxval if peak > 0 else 1.0
    grey = np.rint(grid.values.T / scale).astype(np.int64)
    lines = [
        "P2",
        f"# resolution {grid.resolution!r} scale {scale!r}",
        f"{grid.width} {grid.height}",
        str(maxval),
    ]
    lines.extend(" ".join(map(str, row)) for row in grey)
    Path(path).write_text("\n".join(lines) + "\n")
    return scale


def read_pgm(path: str | Path) -> GridMap:
    tokens = []
    resolution, scale = 1.0, 1.0
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            meta = dict(zip(parts[::2], parts[1::2]))
            resolution = float(meta.get("resolution", resolution))
            scale = float(meta.get("scale", scale))
            continue
        tokens.extend(line.split())
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h = int(tokens[1]), int(tokens[2])
    grey = np.array(tokens[4:], dtype=float).reshape(h, w)
    return GridMap(GridSpec(w, h, resolution), grey.T * scale)
