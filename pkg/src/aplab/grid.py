"""Cell-centered tensor grids over the unit ball, fields, and quadrature.

The grid covers the box [-1, 1]^n with ``resolution`` cells per axis.  A cell
belongs to the ball when its center lies strictly inside B_1; region
membership is always decided by cell centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "GridDomain",
    "ScalarField",
    "MatrixField",
    "build_ball_grid",
    "gradient",
    "one_sided_differences",
    "integrate",
    "ball_mask",
    "annulus_mask",
    "shell_mask",
    "unit_ball_volume",
]


def unit_ball_volume(dim: int) -> float:
    """Lebesgue measure of the unit ball in R^dim."""
    return math.pi ** (dim / 2) / math.gamma(dim / 2 + 1)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridDomain:
    dim: int
    resolution: int
    cell_size: float
    axis_centers: np.ndarray
    coords: np.ndarray  # shape (*shape, dim)
    radius: np.ndarray  # |x| at every cell center
    interior_mask: np.ndarray
    boundary_band: np.ndarray  # interior cells with |x| >= 1 - h
    free_mask: np.ndarray  # interior cells carrying unknowns

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dim

    @property
    def h(self) -> float:
        return self.cell_size

    @property
    def cell_volume(self) -> float:
        return self.cell_size**self.dim

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights: h^n on interior cells, zero elsewhere."""
        return np.where(self.interior_mask, self.cell_volume, 0.0)

    @property
    def size(self) -> int:
        return self.resolution**self.dim

    def sample(self, func: Callable[[np.ndarray], np.ndarray], name: str = "",
               singular: bool = False) -> "ScalarField":
        """Evaluate ``func`` at every cell center (interior or not).

        ``func`` receives an array of points of shape (..., dim).
        """
        values = np.asarray(func(self.coords), dtype=float)
        values = np.broadcast_to(values, self.shape).copy()
        return ScalarField(self, values, name=name, singular=singular, sampler=func)

    def constant(self, value: float, name: str = "") -> "ScalarField":
        return self.sample(lambda x: np.full(x.shape[:-1], float(value)), name=name)

    def zeros(self, name: str = "") -> "ScalarField":
        return self.constant(0.0, name=name)

    def distance_to(self, point: Sequence[float]) -> np.ndarray:
        x0 = np.asarray(point, dtype=float).reshape((1,) * self.dim + (self.dim,))
        return np.linalg.norm(self.coords - x0, axis=-1)


def build_ball_grid(dim: int, resolution: int) -> GridDomain:
    """Build the cell-centered grid masking B_1 in R^dim.

    Resolution must be even so that the origin is never a cell center.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"dim must be 1, 2 or 3, got {dim}")
    if int(resolution) != resolution or resolution < 8:
        raise ValueError(f"resolution must be an integer >= 8, got {resolution}")
    resolution = int(resolution)
    if resolution % 2:
        raise ValueError(
            f"resolution must be even (odd resolution {resolution} puts a cell center at the origin)"
        )
    h = 2.0 / resolution
    centers = (np.arange(resolution) + 0.5) * h - 1.0
    mesh = np.meshgrid(*([centers] * dim), indexing="ij")
    coords = np.stack(mesh, axis=-1)
    radius = np.linalg.norm(coords, axis=-1)
    interior = radius < 1.0
    band = interior & (radius >= 1.0 - h)
    free = interior & ~band
    return GridDomain(
        dim=dim,
        resolution=resolution,
        cell_size=h,
        axis_centers=_frozen(centers),
        coords=_frozen(coords),
        radius=_frozen(radius),
        interior_mask=_frozen(interior),
        boundary_band=_frozen(band),
        free_mask=_frozen(free),
    )


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per cell.

    ``singular`` marks cell-center samples of an unbounded function (the
    values are finite because no center sits on the singular point).
    ``sampler``, when present, is the analytic function the values came
    from; rescaling uses it instead of interpolating.
    """

    domain: GridDomain
    values: np.ndarray
    name: str = ""
    singular: bool = False
    sampler: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.domain.shape:
            if values.size != self.domain.size:
                raise ValueError(
                    f"field {self.name!r} has {values.size} values, grid has {self.domain.size} cells"
                )
            values = values.reshape(self.domain.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError(f"field {self.name!r} contains non-finite values")
        object.__setattr__(self, "values", _frozen(values))

    def with_values(self, values: np.ndarray, name: Optional[str] = None) -> "ScalarField":
        return ScalarField(self.domain, values, name=self.name if name is None else name,
                           singular=self.singular)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.domain, self.values * other.values,
                               singular=self.singular or other.singular)
        return ScalarField(self.domain, self.values * float(other), name=self.name,
                           singular=self.singular)

    __rmul__ = __mul__

    def __add__(self, other):
        if isinstance(other, ScalarField):
            return ScalarField(self.domain, self.values + other.values,
                               singular=self.singular or other.singular)
        return ScalarField(self.domain, self.values + float(other), name=self.name,
                           singular=self.singular)

    def __sub__(self, other):
        return self + (-1.0) * other

    def __neg__(self):
        return (-1.0) * self


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Symmetric n x n coefficient matrix per cell with ellipticity bounds."""

    domain: GridDomain
    values: np.ndarray  # shape (*shape, dim, dim)
    lam: float
    Lam: float

    def __post_init__(self):
        n = self.domain.dim
        values = np.asarray(self.values, dtype=float)
        values = np.broadcast_to(values, self.domain.shape + (n, n)).copy()
        if not (0.0 < self.lam <= self.Lam < math.inf):
            raise ValueError(f"need 0 < lambda <= Lambda < inf, got {self.lam}, {self.Lam}")
        if not np.allclose(values, np.swapaxes(values, -1, -2), rtol=0, atol=1e-14):
            raise ValueError("coefficient matrix is not symmetric")
        eig = np.linalg.eigvalsh(values[self.domain.interior_mask])
        tol = 1e-12 * max(1.0, self.Lam)
        if eig.size and (eig.min() < self.lam - tol or eig.max() > self.Lam + tol):
            raise ValueError(
                f"eigenvalues in [{eig.min():.6g}, {eig.max():.6g}] violate bounds "
                f"[{self.lam:.6g}, {self.Lam:.6g}]"
            )
        object.__setattr__(self, "values", _frozen(values))

    @classmethod
    def identity(cls, domain: GridDomain) -> "MatrixField":
        return cls(domain, np.eye(domain.dim), 1.0, 1.0)

    @classmethod
    def from_function(cls, domain: GridDomain, func, lam: float, Lam: float) -> "MatrixField":
        return cls(domain, func(domain.coords), lam, Lam)

    @property
    def is_identity(self) -> bool:
        return bool(np.all(self.values == np.eye(self.domain.dim)))


def one_sided_differences(values: np.ndarray, active: np.ndarray, h: float, axis: int):
    """Forward/backward differences along ``axis`` and their availability.

    A one-sided difference at a cell exists when the neighbor on that side is
    active.  Unavailable entries are zero.
    """
    n = values.shape[axis]
    fwd = np.zeros_like(values)
    bwd = np.zeros_like(values)
    af = np.zeros(values.shape, dtype=bool)
    ab = np.zeros(values.shape, dtype=bool)

    lo = [slice(None)] * values.ndim
    hi = [slice(None)] * values.ndim
    lo[axis] = slice(0, n - 1)
    hi[axis] = slice(1, n)
    lo, hi = tuple(lo), tuple(hi)

    pair = active[lo] & active[hi]
    diff = np.where(pair, (values[hi] - values[lo]) / h, 0.0)
    fwd[lo] = diff
    af[lo] = pair
    bwd[hi] = diff
    ab[hi] = pair
    return fwd, bwd, af, ab


def gradient(u: ScalarField) -> np.ndarray:
    """Per-cell gradient samples, shape (*shape, dim).

    Central differences where both neighbors are in the ball, one-sided where
    only one is (boundary band).  Zero outside the ball.
    """
    dom = u.domain
    out = np.zeros(dom.shape + (dom.dim,))
    for d in range(dom.dim):
        fwd, bwd, af, ab = one_sided_differences(u.values, dom.interior_mask, dom.h, d)
        cnt = af.astype(float) + ab
        out[..., d] = np.where(cnt > 0, (fwd + bwd) / np.maximum(cnt, 1.0), 0.0)
    return out


def ball_mask(domain: GridDomain, center: Sequence[float] = None, radius: float = 1.0) -> np.ndarray:
    """Interior cells whose center lies in the open ball B_radius(center)."""
    if center is None:
        center = np.zeros(domain.dim)
    return domain.interior_mask & (domain.distance_to(center) < radius)


def annulus_mask(domain: GridDomain, center, r_in: float, r_out: float) -> np.ndarray:
    dist = domain.distance_to(center)
    return domain.interior_mask & (dist >= r_in) & (dist < r_out)


def shell_mask(domain: GridDomain, center, r: float) -> np.ndarray:
    """Cells whose center distance to ``center`` lies in [r - h, r + h]."""
    dist = domain.distance_to(center)
    return domain.interior_mask & (np.abs(dist - r) <= domain.h)


def integrate(u: ScalarField | np.ndarray, region: Optional[np.ndarray] = None,
              domain: Optional[GridDomain] = None) -> float:
    """Quadrature-weighted sum over cells whose centers lie in ``region``."""
    if isinstance(u, ScalarField):
        domain = u.domain
        vals = u.values
    else:
        if domain is None:
            raise TypeError("domain required when integrating a raw array")
        vals = np.asarray(u, dtype=float)
    mask = domain.interior_mask if region is None else (np.asarray(region, bool) & domain.interior_mask)
    if not mask.any():
        raise ValueError("empty integration region")
    return float(np.sum(vals[mask]) * domain.cell_volume)


def measure(domain: GridDomain, region: np.ndarray) -> float:
    """Quadrature measure |region| (cell count times h^n)."""
    return float(np.count_nonzero(region & domain.interior_mask) * domain.cell_volume)
