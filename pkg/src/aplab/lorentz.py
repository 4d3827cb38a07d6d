"""Weak-L^p (Lorentz L^{p,infinity}) norms and the inequalities built on them.

All measures are quadrature sums over cell centers, so a sampled field is
treated as the step function that is constant on each cell.  On such a
function the distribution function is a finite staircase and the weak norm
is an exact maximum over the distinct sampled levels.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .grid import ScalarField, ball_mask, gradient

__all__ = [
    "LorentzReport",
    "MassConcentrationReport",
    "weak_lp_norm",
    "lp_norm",
    "embedding_check",
    "pairing_bound_check",
    "default_q_star",
    "mass_concentration_check",
]

DEFAULT_PAIRING_EPS = 0.05


@dataclass
class LorentzReport:
    p: float
    weak_norm: float
    t_star: float
    level_count: int
    min_cells: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def _inv(p: float) -> float:
    return 0.0 if math.isinf(p) else 1.0 / p


def _region(f: ScalarField, region) -> np.ndarray:
    dom = f.domain
    mask = dom.interior_mask if region is None else (np.asarray(region, bool) & dom.interior_mask)
    if not mask.any():
        raise ValueError("empty region")
    return mask


def weak_lp_norm(f: ScalarField, p: float, region=None, min_cells: int = 1) -> LorentzReport:
    """sup_t t |{|f| > t} ∩ region|^{1/p} for the cellwise-constant field.

    For t just below a sampled level v the superlevel set is {|f| >= v}, so
    the supremum is the maximum of v * |{|f| >= v}|^{1/p} over distinct
    positive levels v.  ``min_cells`` restricts the maximum to levels whose
    superlevel set holds at least that many cells; the default of 1 gives the
    exact norm of the step function.
    """
    if not p > 0:
        raise ValueError(f"p must be positive, got {p}")
    if min_cells < 1:
        raise ValueError("min_cells must be >= 1")
    mask = _region(f, region)
    a = np.abs(f.values[mask])
    a = a[a > 0]
    if a.size == 0:
        return LorentzReport(p, 0.0, 0.0, 0, min_cells)
    a = np.sort(a)[::-1]
    # last index of each tie group: count of cells with |f| >= that level
    last = np.flatnonzero(np.append(a[1:] != a[:-1], True))
    levels = a[last]
    counts = last + 1
    keep = counts >= min_cells
    if not keep.any():
        keep = counts == counts.max()
    vals = levels[keep] * (counts[keep] * f.domain.cell_volume) ** _inv(p)
    k = int(np.argmax(vals))
    return LorentzReport(p, float(vals[k]), float(levels[keep][k]), int(levels.size), min_cells)


def lp_norm(f: ScalarField | np.ndarray, r: float, region=None, domain=None) -> float:
    if isinstance(f, ScalarField):
        domain, vals = f.domain, f.values
    else:
        vals = np.asarray(f, float)
    mask = domain.interior_mask if region is None else (np.asarray(region, bool) & domain.interior_mask)
    a = np.abs(vals[mask])
    if math.isinf(r):
        return float(a.max(initial=0.0))
    return float((np.sum(a**r) * domain.cell_volume) ** (1.0 / r))


def embedding_check(f: ScalarField, p: float, r: float, region=None) -> dict:
    """Weak embedding ||f||_r <= (p/(p-r))^{1/r} |E|^{(p-r)/(pr)} ||f||_{p,inf}."""
    if not (0 < r < p):
        raise ValueError(f"need 0 < r < p, got r={r}, p={p}")
    mask = _region(f, region)
    meas = np.count_nonzero(mask) * f.domain.cell_volume
    lhs = lp_norm(f, r, mask)
    weak = weak_lp_norm(f, p, mask).weak_norm
    if math.isinf(p):
        const, expo = 1.0, 1.0 / r
    else:
        const, expo = (p / (p - r)) ** (1.0 / r), (p - r) / (p * r)
    rhs = const * meas**expo * weak
    return {"lhs": lhs, "rhs": rhs, "holds": bool(lhs <= rhs * (1 + 1e-12))}


def default_q_star(dim: int, gamma: float) -> tuple[float, Optional[float]]:
    """Sobolev-type exponent used in the pairing bound, and the epsilon behind it.

    n = 3 uses 2n/(n-2).  For n <= 2 the exponent is gamma/eps with
    eps = 0.05, shrunk when needed so the exponent stays above 2.
    """
    if dim >= 3:
        return 2.0 * dim / (dim - 2), None
    eps = min(DEFAULT_PAIRING_EPS, gamma / 4.0)
    return gamma / eps, eps


def pairing_bound_check(f: ScalarField, u: ScalarField, gamma: float, region=None,
                        q_star: Optional[float] = None, p: Optional[float] = None) -> dict:
    """Hölder step |∫ f |u|^γ| <= ||f||_{q*/(q*-γ)} (∫ |u|^{q*})^{γ/q*}.

    When ``p`` is given the report also carries the ratio of the integral to
    ||f||_{p,inf} ||u||_{H^1}^γ |E|^e (e the measure exponent of the
    constant-C form); it is informational only.
    """
    if not (0 < gamma < 2):
        raise ValueError(f"gamma must lie in (0, 2), got {gamma}")
    dom = f.domain
    eps = None
    if q_star is None:
        q_star, eps = default_q_star(dom.dim, gamma)
    if not q_star > max(2.0, gamma):
        raise ValueError(f"q_star must exceed max(2, gamma), got {q_star}")
    mask = _region(f, region)
    w = dom.cell_volume
    au = np.abs(u.values[mask])
    integral = float(np.sum(f.values[mask] * au**gamma) * w)
    s = q_star / (q_star - gamma)
    f_norm = lp_norm(f, s, mask)
    u_part = float(np.sum(au**q_star) * w) ** (gamma / q_star)
    bound = f_norm * u_part
    out = {
        "integral": integral,
        "bound": bound,
        "holds": bool(abs(integral) <= bound * (1 + 1e-12)),
        "q_star": q_star,
        "pairing_eps": eps,
    }
    if p is not None:
        meas = np.count_nonzero(mask) * w
        n = dom.dim
        expo = (2 - gamma) / 2 + gamma / n - _inv(p) if n >= 3 else 1 - _inv(p) - (eps or DEFAULT_PAIRING_EPS)
        grad = gradient(u)
        h1 = math.sqrt(float(np.sum(u.values[mask] ** 2 + np.sum(grad[mask] ** 2, axis=-1)) * w))
        denom = weak_lp_norm(f, p, mask).weak_norm * h1**gamma * meas**expo
        out["c1_ratio"] = abs(integral) / denom if denom > 0 else 0.0
        out["measure_exponent"] = expo
    return out


@dataclass
class MassConcentrationReport:
    p: float
    y0: list
    r0: float
    tau: float
    eps: float
    radii: list = field(default_factory=list)
    fraction: list = field(default_factory=list)
    neg_mass: list = field(default_factory=list)
    tau_ok: list = field(default_factory=list)
    eps_ok: list = field(default_factory=list)
    weak_norm: float = 0.0
    t_star: float = 0.0

    @property
    def verdict(self) -> bool:
        return bool(self.radii) and all(self.tau_ok) and all(self.eps_ok)

    def to_dict(self) -> dict:
        per_radius = [
            {"r": r, "fraction": fr, "neg_mass": nm, "tau_ok": t, "eps_ok": e}
            for r, fr, nm, t, e in zip(self.radii, self.fraction, self.neg_mass, self.tau_ok, self.eps_ok)
        ]
        return {
            "p": self.p, "weak_norm": self.weak_norm, "t_star": self.t_star,
            "y0": self.y0, "r0": self.r0, "tau": self.tau, "eps": self.eps,
            "verdict": self.verdict, "per_radius": per_radius,
        }


def mass_concentration_check(f: ScalarField, y0: Sequence[float], r0: float, p: float,
                             tau: float, eps: float) -> MassConcentrationReport:
    """Evaluate the positive-mass and small-negative-part conditions at y0.

    Radii r = r0 2^{-k} are checked down to 8h.
    """
    dom = f.domain
    n = dom.dim
    y0 = np.asarray(y0, float)
    if np.linalg.norm(y0) + 4 * r0 > 1.0 + 1e-12:
        raise ValueError(f"ball B_(4 r0)(y0) escapes B_1 (|y0| + 4 r0 = {np.linalg.norm(y0) + 4 * r0:.4g})")
    if not (1 - 4.0**-n < tau < 1):
        raise ValueError(f"tau must lie in (1 - 4^-n, 1) = ({1 - 4.0**-n:.6g}, 1), got {tau}")
    if not (0 < eps < 8.0**-n):
        raise ValueError(f"eps must lie in (0, 8^-n) = (0, {8.0**-n:.6g}), got {eps}")
    if r0 < 8 * dom.h:
        raise ValueError("r0 below the resolved scale 8h")
    np_ = _inv(p) * n
    outer = ball_mask(dom, y0, 4 * r0)
    wk = weak_lp_norm(f, p, outer)
    rep = MassConcentrationReport(p=p, y0=y0.tolist(), r0=r0, tau=tau, eps=eps,
                                  weak_norm=wk.weak_norm, t_star=wk.t_star)
    neg = np.maximum(-f.values, 0.0)
    w = dom.cell_volume
    r = r0
    while r >= 8 * dom.h - 1e-14:
        big = ball_mask(dom, y0, 4 * r)
        small = ball_mask(dom, y0, r)
        frac = np.count_nonzero(big & (f.values >= r**-np_)) / np.count_nonzero(big)
        nm = float(np.sum(neg[small]) * w)
        rep.radii.append(r)
        rep.fraction.append(float(frac))
        rep.neg_mass.append(nm)
        rep.tau_ok.append(bool(frac >= tau))
        rep.eps_ok.append(bool(nm <= eps * r ** (n - np_)))
        r /= 2
    return rep
