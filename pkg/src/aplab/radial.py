"""Exact radial solutions and an independent radial shooting solver.

Power-law solutions u = c r^alpha of

    Delta u = gamma f u^{gamma - 1}

exist for two source families:

* power source, f = alpha (n + alpha - 2) r^{-n/p}, alpha = (2 - n/p)/(2 - gamma);
* constant source, f = 1, alpha = 2/(2 - gamma).

Substituting c r^alpha gives c^{2-gamma} alpha (alpha + n - 2) = gamma K with
K the source coefficient, which fixes the amplitude c.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import minimize_scalar

from .errors import ParameterError, SolverError
from .grid import unit_ball_volume

__all__ = [
    "RadialCase",
    "RadialProfile",
    "radial_exact_case",
    "sharp_exponent",
    "radial_laplacian_power",
    "lorentz_classification",
    "truncated_weak_norm",
    "radial_bvp_oracle",
    "radial_energy",
    "angular_average",
    "profile_agreement",
]


def sharp_exponent(n: int, gamma: float, p: float) -> float:
    """theta = (2 - n/p) / (2 - gamma)."""
    n_over_p = 0.0 if math.isinf(p) else n / p
    return (2 - n_over_p) / (2 - gamma)


def radial_laplacian_power(c: float, alpha: float, n: int, r):
    """Delta (c r^alpha) = c alpha (alpha + n - 2) r^{alpha - 2}."""
    return c * alpha * (alpha + n - 2) * np.asarray(r, float) ** (alpha - 2)


@dataclass
class RadialCase:
    kind: str
    n: int
    gamma: float
    p: float
    alpha: float
    beta: float  # source decay exponent: f ~ r^{-beta}
    coeff: float  # f(r) = coeff * r^{-beta}
    amplitude: float  # u(r) = amplitude * r^alpha
    theta: float

    def u(self, r):
        return self.amplitude * np.asarray(r, float) ** self.alpha

    def f(self, r):
        r = np.asarray(r, float)
        if self.beta == 0:
            return np.full(r.shape, self.coeff)
        return self.coeff * r ** (-self.beta)

    def u_xyz(self, x):
        return self.u(np.linalg.norm(x, axis=-1))

    def f_xyz(self, x):
        return self.f(np.linalg.norm(x, axis=-1))

    def residual(self, r):
        """Delta u - gamma f u^{gamma-1} via the exact radial Laplacian."""
        r = np.asarray(r, float)
        lap = radial_laplacian_power(self.amplitude, self.alpha, self.n, r)
        return lap - self.gamma * self.f(r) * self.u(r) ** (self.gamma - 1)

    @property
    def boundary_value(self) -> float:
        return float(self.amplitude)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p"] = "inf" if math.isinf(self.p) else self.p
        return d


def radial_exact_case(kind: str, n: int, gamma: float, p: float = math.inf) -> RadialCase:
    """Closed-form radial pair (u, f) for the power or constant source family."""
    if n not in (1, 2, 3):
        raise ParameterError(f"n must be 1, 2 or 3, got {n}")
    if not (0 < gamma < 1):
        raise ParameterError(f"gamma must lie in (0,1), got {gamma}")
    if kind == "power_source":
        if not p > n / 2:
            raise ParameterError(f"p must exceed n/2 = {n / 2}, got {p}")
        alpha = sharp_exponent(n, gamma, p)
        beta = 2 - alpha * (2 - gamma)
        coeff = alpha * (n + alpha - 2)
    elif kind == "constant_source":
        p = math.inf
        alpha = 2 / (2 - gamma)
        beta = 0.0
        coeff = 1.0
    else:
        raise ParameterError(f"unknown radial case kind {kind!r}")
    lap_coeff = alpha * (alpha + n - 2)
    if lap_coeff == 0:
        raise ParameterError("degenerate case: r^alpha is harmonic away from the origin")
    ratio = gamma * coeff / lap_coeff
    if ratio <= 0:
        raise ParameterError("no positive power-law amplitude for these parameters")
    amplitude = ratio ** (1 / (2 - gamma))
    return RadialCase(kind, n, gamma, p, alpha, beta, coeff, amplitude, sharp_exponent(n, gamma, p))


def lorentz_classification(beta: float, n: int, p: float) -> dict:
    """Is |x|^{-beta} in weak L^p(B_1)?

    t |{|x|^{-beta} > t}|^{1/p} equals |B_1|^{1/p} for t <= 1 and
    |B_1|^{1/p} t^{1 - n/(beta p)} above, so membership holds exactly when
    beta <= n/p, with norm |B_1|^{1/p}.
    """
    if not beta > 0:
        raise ParameterError(f"beta must be positive, got {beta}")
    crit = 0.0 if math.isinf(p) else n / p
    member = beta <= crit * (1 + 1e-14)
    norm = unit_ball_volume(n) ** (0.0 if math.isinf(p) else 1 / p) if member else math.inf
    return {"in_weak_lp": bool(member), "norm_if_member": norm,
            "exponent": 1 - (n / (beta * p) if not math.isinf(p) else 0.0)}


def truncated_weak_norm(beta: float, n: int, p: float, inner_radius: float) -> float:
    """Weak-L^p norm of |x|^{-beta} over the annulus inner_radius < |x| < 1."""
    vol = unit_ball_volume(n)
    delta = inner_radius
    tmax = delta ** (-beta)

    def neg(logt):
        t = math.exp(logt)
        meas = vol * max(min(t ** (-n / beta), 1.0) - delta**n, 0.0)
        return -t * meas ** (1 / p)

    res = minimize_scalar(neg, bounds=(0.0, math.log(tmax)), method="bounded",
                          options={"xatol": 1e-12})
    return max(-res.fun, -neg(0.0))


# -- shooting oracle ----------------------------------------------------------

@dataclass
class RadialProfile:
    r: np.ndarray
    u: np.ndarray
    core_radius: float
    kind: str  # dead_core | point_core | positive_core
    mismatch: float
    notes: list = field(default_factory=list)
    energy: float = math.nan
    candidates: list = field(default_factory=list)

    def __call__(self, r):
        return np.interp(r, self.r, self.u)

    def to_dict(self) -> dict:
        return {"core_radius": self.core_radius, "kind": self.kind, "mismatch": self.mismatch,
                "energy": self.energy, "candidates": list(self.candidates), "notes": list(self.notes)}


def _rhs(n, gamma, f):
    def rhs(r, y):
        u = max(y[0], 1e-300)
        return [y[1], gamma * f(r) * u ** (gamma - 1) - (n - 1) / r * y[1]]
    return rhs


def _hit_zero(r, y):
    return y[0]


_hit_zero.terminal = True
_hit_zero.direction = -1

_RTOL, _ATOL = 1e-11, 1e-14


def _integrate(n, gamma, f, r0, y0, dense=False):
    sol = solve_ivp(_rhs(n, gamma, f), (r0, 1.0), y0, method="LSODA", rtol=_RTOL, atol=_ATOL,
                    events=_hit_zero, dense_output=dense)
    return sol


def _shoot_core(n, gamma, f, R0, dense=False):
    """Start at a dead-core edge R0 with u ~ C (r - R0)^q, q = 2/(2-gamma)."""
    q = 2 / (2 - gamma)
    fr = float(f(R0))
    if fr <= 0:
        return None, 0.0
    C = (gamma * fr / (q * (q - 1))) ** (1 / (2 - gamma))
    s0 = 1e-7 * min(R0, 1 - R0)
    sol = _integrate(n, gamma, f, R0 + s0, [C * s0**q, C * q * s0 ** (q - 1)], dense)
    end = sol.y[0, -1] if sol.status == 0 else 0.0
    return sol, float(end)


def _point_core_start(n, gamma, f):
    """Self-similar start c r^alpha for f ~ K r^{-beta} near the origin."""
    r1, r2 = 1e-7, 1e-6
    f1, f2 = float(f(r1)), float(f(r2))
    if f1 <= 0 or f2 <= 0:
        return None
    beta = -math.log(f2 / f1) / math.log(r2 / r1)
    if abs(beta) < 1e-9:
        beta = 0.0
    K = f1 * r1**beta
    alpha = (2 - beta) / (2 - gamma)
    lap = alpha * (alpha + n - 2)
    if alpha <= 0 or lap <= 0:
        return None
    c = (gamma * K / lap) ** (1 / (2 - gamma))
    return c, alpha


def _shoot_point(n, gamma, f, dense=False):
    start = _point_core_start(n, gamma, f)
    if start is None:
        return None, 0.0
    c, alpha = start
    r0 = 1e-6
    sol = _integrate(n, gamma, f, r0, [c * r0**alpha, c * alpha * r0 ** (alpha - 1)], dense)
    end = sol.y[0, -1] if sol.status == 0 else 0.0
    return (sol, (c, alpha, r0)), float(end)


def _shoot_positive(n, gamma, f, a, dense=False):
    """Start at u(0) = a > 0, u'(0) = 0."""
    r0 = 1e-8
    flux, _ = quad(lambda s: s ** (n - 1) * f(s), 0.0, r0, limit=200)
    du = gamma * a ** (gamma - 1) * flux / r0 ** (n - 1)
    sol = _integrate(n, gamma, f, r0, [a, du], dense)
    end = sol.y[0, -1] if sol.status == 0 else 0.0
    return sol, float(end)


def _profile_from(sol, r, start_r, before=0.0, head=None):
    u = np.full(r.shape, before)
    inside = r >= start_r
    if sol.status == 1:  # stopped at u = 0
        stop = sol.t[-1]
        inside &= r <= stop
    u[inside] = sol.sol(r[inside])[0]
    if head is not None:
        c, alpha, r0 = head
        small = r < start_r
        u[small] = c * r[small] ** alpha
    return np.maximum(u, 0.0)


def radial_energy(r: np.ndarray, u: np.ndarray, n: int, gamma: float,
                  f_radial: Callable[[float], float]) -> float:
    """|S^{n-1}| * integral of (u'^2/2 + f (u^+)^gamma) r^{n-1} dr by the midpoint rule."""
    dr = np.diff(r)
    rm = 0.5 * (r[1:] + r[:-1])
    um = np.maximum(0.5 * (u[1:] + u[:-1]), 0.0)
    du = np.diff(u) / dr
    fm = np.array([float(f_radial(x)) for x in rm])
    area = n * unit_ball_volume(n)
    return float(area * np.sum((0.5 * du**2 + fm * um**gamma) * rm ** (n - 1) * dr))


def _bisect(func, lo, hi, f_lo, target, iterations):
    """Bisection for func(x) = target on [lo, hi] given the sign at lo."""
    if lo == hi:
        return lo
    s_lo = f_lo > target
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if (func(mid) > target) == s_lo:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _sign_changes(xs, vals, target):
    """Brackets [x_k, x_k+1] where vals - target changes sign; exact hits give [x_k, x_k]."""
    out = []
    for k in range(len(xs)):
        a = vals[k] - target
        if a == 0:
            out.append((xs[k], xs[k], vals[k]))
        elif k + 1 < len(xs):
            b = vals[k + 1] - target
            if b != 0 and (a > 0) != (b > 0):
                out.append((xs[k], xs[k + 1], vals[k]))
    return out


def radial_bvp_oracle(n: int, gamma: float, f_radial: Callable[[float], float], g1: float,
                      resolution: int = 4096, iterations: int = 60, scan: int = 24,
                      branch: str = "min_energy") -> RadialProfile:
    """Minimal-energy radial solution of (r^{n-1} u')' = r^{n-1} gamma f u^{gamma-1}, u(1) = g1.

    Three shooting families are searched.  Dead-core shots start at R0 with
    u = u' = 0 (R0 -> 0 is the point-core limit, started from the
    self-similar profile); positive-core shots start at u(0) = a, u'(0) = 0.
    Each shooting map is sampled on ``scan`` points, every sign change of the
    mismatch is refined by bisection, and the candidate with the smallest
    radial energy is returned.  The maps need not be monotone (for singular
    sources the positive-core map oscillates around the point-core value), so
    the full candidate list is kept in ``candidates``.  ``branch`` restricts
    the choice to one family ("point_core", "dead_core" or "positive_core").
    """
    if branch not in ("min_energy", "point_core", "dead_core", "positive_core"):
        raise ParameterError(f"unknown branch {branch!r}")
    if g1 < 0:
        raise ParameterError("g1 must be nonnegative")
    if not (0 < gamma < 1):
        raise ParameterError(f"gamma must lie in (0,1), got {gamma}")
    r = np.linspace(0.0, 1.0, resolution + 1)
    notes: list = []
    if g1 == 0:
        return RadialProfile(r, np.zeros_like(r), 1.0, "dead_core", 0.0, ["zero boundary data"], 0.0)

    point, u_point = _shoot_point(n, gamma, f_radial)
    tol = 1e-10 * (1 + g1)
    found = []  # (kind, parameter, profile values, core radius, mismatch)

    if point is not None and abs(u_point - g1) <= tol:
        (sol, head), _ = _shoot_point(n, gamma, f_radial, dense=True)
        found.append(("point_core", 0.0, _profile_from(sol, r, head[2], head=head), 0.0, u_point - g1))

    def core_end(R0):
        return _shoot_core(n, gamma, f_radial, R0)[1]

    def pos_end(a):
        return _shoot_positive(n, gamma, f_radial, a)[1]

    # dead-core family, R0 in (0, 1); the point-core value closes the bracket at 0
    grid = np.concatenate([np.geomspace(1e-4, 0.5, scan // 2, endpoint=False),
                           1.0 - np.geomspace(0.5, 1e-4, scan - scan // 2)])
    xs = [0.0] + grid.tolist() if point is not None else grid.tolist()
    vals = ([u_point] if point is not None else []) + [core_end(x) for x in grid]
    for lo, hi, v_lo in _sign_changes(xs, vals, g1):
        if lo == 0.0:
            if abs(v_lo - g1) <= tol:
                continue
            lo = 1e-12 if hi > 1e-12 else lo
        R0 = _bisect(core_end, lo, hi, v_lo, g1, iterations)
        sol, val = _shoot_core(n, gamma, f_radial, R0, dense=True)
        if sol is None:
            continue
        found.append(("dead_core", R0, _profile_from(sol, r, sol.t[0]), R0, val - g1))

    # positive-core family, a in (0, g1]: u is nondecreasing for f >= 0
    agrid = g1 * np.geomspace(1e-4, 1.0, scan)
    xs = [0.0] + agrid.tolist() if point is not None else agrid.tolist()
    vals = ([u_point] if point is not None else []) + [pos_end(a) for a in agrid]
    for lo, hi, v_lo in _sign_changes(xs, vals, g1):
        if lo == 0.0 and abs(v_lo - g1) <= tol:
            continue
        a = _bisect(pos_end, lo, hi, v_lo, g1, iterations)
        sol, val = _shoot_positive(n, gamma, f_radial, a, dense=True)
        found.append(("positive_core", a, _profile_from(sol, r, sol.t[0], before=a), 0.0, val - g1))

    if not found:
        raise SolverError("shooting found no radial solution matching the boundary value")
    if not any(k == "dead_core" for k, *_ in found):
        notes.append("no dead core in (0,1)")
    energies = [radial_energy(r, u, n, gamma, f_radial) for _, _, u, _, _ in found]
    allowed = [i for i, c in enumerate(found) if branch in ("min_energy", c[0])]
    if not allowed:
        raise SolverError(f"no {branch} solution matches the boundary value")
    best = min(allowed, key=lambda i: energies[i])
    cands = [{"kind": k, "parameter": float(prm), "energy": e, "mismatch": float(mm)}
             for (k, prm, _, _, mm), e in zip(found, energies)]
    if len(found) > 1:
        notes.append(f"{len(found)} radial solutions match g1; lowest energy selected")
    kind, _, u, core, mm = found[best]
    return RadialProfile(r, u, core, kind, float(mm), notes, energies[best], cands)


def angular_average(u) -> tuple[np.ndarray, np.ndarray]:
    """Average of a grid field over shells of width h about the origin (interior cells only)."""
    dom = u.domain
    r = dom.radius[dom.interior_mask]
    v = u.values[dom.interior_mask]
    idx = np.minimum((r / dom.h).astype(int), int(1 / dom.h) - 1)
    counts = np.bincount(idx)
    keep = counts > 0
    rs = np.bincount(idx, weights=r)[keep] / counts[keep]
    vs = np.bincount(idx, weights=v)[keep] / counts[keep]
    return rs, vs


def profile_agreement(u, profile: RadialProfile) -> dict:
    """Sup-norm gap between the angular average of u and a radial profile, relative to max |profile|."""
    rs, vs = angular_average(u)
    ref = profile(rs)
    scale = float(np.max(np.abs(profile.u)))
    gap = float(np.max(np.abs(vs - ref)))
    return {"sup_gap": gap, "relative_gap": gap / scale if scale > 0 else gap, "shells": int(rs.size)}
