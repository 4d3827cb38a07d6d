"""Free-boundary geometry and growth-rate fits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .grid import GridDomain, ScalarField, unit_ball_volume

__all__ = [
    "PositivitySet",
    "ExponentFit",
    "FBReport",
    "positivity_set",
    "sphere_sup",
    "ball_sup",
    "growth_fit",
    "density_report",
    "dyadic_radii",
    "hausdorff_distance",
    "nearest_fb_point",
    "oscillation_decay",
]


def _vals(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, float)


@dataclass
class PositivitySet:
    mask: np.ndarray
    fb_mask: np.ndarray
    fb_points: np.ndarray  # (k, dim) cell centers
    t_pos: float

    @property
    def empty_fb(self) -> bool:
        return self.fb_points.shape[0] == 0


def positivity_set(u: ScalarField, t_pos: float) -> PositivitySet:
    """{u > t_pos} on the ball and its free-boundary cells.

    A free-boundary cell is a positive cell with an axis neighbor that is an
    interior cell outside the positivity set.
    """
    if not t_pos > 0:
        raise ValueError("t_pos must be positive")
    dom = u.domain
    interior = dom.interior_mask
    mask = interior & (_vals(u) > t_pos)
    zero = interior & ~mask
    touch = np.zeros(dom.shape, dtype=bool)
    n = dom.resolution
    for d in range(dom.dim):
        lo = [slice(None)] * dom.dim
        hi = [slice(None)] * dom.dim
        lo[d] = slice(0, n - 1)
        hi[d] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        touch[lo] |= zero[hi]
        touch[hi] |= zero[lo]
    fb = mask & touch
    return PositivitySet(mask, fb, dom.coords[fb], t_pos)


def hausdorff_distance(a: np.ndarray, b: np.ndarray) -> float:
    if len(a) == 0 or len(b) == 0:
        return math.inf
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


def nearest_fb_point(ps: PositivitySet, target: Sequence[float]) -> np.ndarray:
    if ps.empty_fb:
        raise ValueError("no free-boundary cells")
    d = np.linalg.norm(ps.fb_points - np.asarray(target, float), axis=1)
    return ps.fb_points[int(np.argmin(d))]


def dyadic_radii(r_max: float, r_min: float) -> list[float]:
    """r_max, r_max/2, ... down to r_min (inclusive, with a small slack)."""
    out = []
    r = r_max
    while r >= r_min * (1 - 1e-9):
        out.append(r)
        r /= 2
    return out


def ball_sup(u, domain: GridDomain, x0, r: float) -> float:
    sel = domain.interior_mask & (domain.distance_to(x0) < r)
    return float(_vals(u)[sel].max()) if sel.any() else math.nan


def sphere_sup(u, domain: GridDomain, x0, r: float) -> float:
    """Max over cells whose center distance to x0 lies in [r - h, r + h]."""
    sel = domain.interior_mask & (np.abs(domain.distance_to(x0) - r) <= domain.h)
    return float(_vals(u)[sel].max()) if sel.any() else math.nan


@dataclass
class ExponentFit:
    radii: list
    values: list
    slope: float
    intercept: float
    r2: float
    target: float
    tol: float
    check: str
    mode: str
    dropped: list = field(default_factory=list)

    @property
    def reliable(self) -> bool:
        return self.r2 >= 0.98

    @property
    def passed(self) -> bool:
        if self.check == "upper_bound":
            return self.slope >= self.target - self.tol
        if self.check == "lower_bound":
            return self.slope <= self.target + self.tol
        return abs(self.slope - self.target) <= self.tol

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(passed=self.passed, reliable=self.reliable)
        return d


def growth_fit(u: ScalarField, x0, mode: str, radii: Sequence[float], target: float,
               tol: float, check: str = "two_sided") -> ExponentFit:
    """Least-squares slope of log sup u against log r.

    ``check`` selects how the slope is judged against ``target``:
    ``upper_bound`` (growth at most r^target: slope >= target - tol),
    ``lower_bound`` (nondegeneracy: slope <= target + tol) or ``two_sided``.
    """
    if mode not in ("ball_sup", "sphere_sup"):
        raise ValueError(f"unknown mode {mode!r}")
    if check not in ("two_sided", "upper_bound", "lower_bound"):
        raise ValueError(f"unknown check {check!r}")
    dom = u.domain
    sup = ball_sup if mode == "ball_sup" else sphere_sup
    rs, vs, dropped = [], [], []
    for r in radii:
        v = sup(u, dom, x0, r)
        if not (v > 0):
            dropped.append(float(r))
            continue
        rs.append(float(r))
        vs.append(v)
    if len(rs) < 5:
        raise ValueError(f"only {len(rs)} usable radii (need >= 5)")
    lx = np.log(rs)
    # normalizing by the largest value first makes the slope bitwise invariant
    # under scaling u by a power of two
    top = max(vs)
    ly = np.log(np.asarray(vs) / top)
    xm = lx - lx.mean()
    ym = ly - ly.mean()
    slope = float(xm @ ym / (xm @ xm))
    intercept = float(ly.mean() - slope * lx.mean() + math.log(top))
    ss_res = float(np.sum((ym - slope * xm) ** 2))
    ss_tot = float(ym @ ym)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExponentFit(rs, vs, slope, intercept, r2, float(target), float(tol), check, mode, dropped)


@dataclass
class FBReport:
    y0: list
    radii: list
    density: list
    escapes: list
    t_pos: float
    fb_cells: int = 0
    positivity_fraction: float = math.nan
    notes: list = field(default_factory=list)

    @property
    def min_density(self) -> float:
        return float(min(self.density)) if self.density else math.nan

    @property
    def tau0_estimate(self) -> float:
        return self.min_density

    @property
    def degradation_alarm(self) -> bool:
        """Density shrinking monotonically toward zero as r decreases."""
        if len(self.density) < 3:
            return False
        by_r = [d for _, d in sorted(zip(self.radii, self.density))]
        monotone = all(a <= b for a, b in zip(by_r, by_r[1:]))
        return bool(monotone and by_r[0] < 0.1 * max(by_r[-1], 1e-300))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(min_density=self.min_density, tau0_estimate=self.tau0_estimate,
                 degradation_alarm=self.degradation_alarm)
        return d


def density_report(u: ScalarField, y0, radii: Sequence[float], t_pos: float = 0.0) -> FBReport:
    """|B_r(y0) ∩ {u > t_pos}| / |B_r(y0)| for each radius.

    The numerator is a cell-center quadrature over the ball; the denominator
    is the exact ball volume.  Balls reaching outside B_1 are kept and
    flagged: cells outside the domain count as not positive, so the ratio is a
    lower bound there.
    """
    dom = u.domain
    y0 = np.asarray(y0, float)
    vals = _vals(u)
    pos = dom.interior_mask & (vals > t_pos)
    dist = dom.distance_to(y0)
    rep = FBReport(y0=y0.tolist(), radii=[], density=[], escapes=[], t_pos=t_pos)
    vol = unit_ball_volume(dom.dim)
    for r in radii:
        num = np.count_nonzero(pos & (dist < r)) * dom.cell_volume
        rep.radii.append(float(r))
        rep.density.append(float(min(num / (vol * r**dom.dim), 1.0)))
        esc = bool(np.linalg.norm(y0) + r > 1.0)
        rep.escapes.append(esc)
    if any(rep.escapes):
        rep.notes.append("some balls reach outside B_1; exterior counted as zero set")
    rep.positivity_fraction = float(np.count_nonzero(pos) / np.count_nonzero(dom.interior_mask))
    return rep


def oscillation_decay(u: ScalarField, x0, radii: Sequence[float]) -> dict:
    """osc_{B_r(x0)} u over dyadic radii; a decaying sequence indicates a modulus of continuity."""
    dom = u.domain
    vals = _vals(u)
    dist = dom.distance_to(x0)
    osc = []
    for r in radii:
        sel = dom.interior_mask & (dist < r)
        osc.append(float(vals[sel].max() - vals[sel].min()) if sel.any() else math.nan)
    return {"radii": list(map(float, radii)), "oscillation": osc}
