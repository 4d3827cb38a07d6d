"""Minimization of the discrete Alt-Phillips energy by smoothing continuation.

Each stage minimizes the C^1 surrogate with (u^+)^gamma replaced by
phi_eps(u) using preconditioned nonlinear conjugate gradients (Polak-Ribiere+)
and Armijo backtracking, warm-started from the previous stage.  The
preconditioner is the Dirichlet matrix plus the convex part of the source
term's curvature, refactored every few iterations.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .energy import ProblemParams, d2phi_eps, dphi_eps, energy, phi_eps, stiffness_matrix
from .errors import ParameterError, SolverError
from .grid import ScalarField

__all__ = ["SolverConfig", "SolveResult", "minimize", "harmonic_extension", "minimality_probe",
           "random_bump", "truncation_probe", "smoothing_gap"]

logger = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    eps_schedule: Sequence[float] = (1e-1, 1e-2, 1e-3, 1e-4)
    tol_g: float = 1e-8
    max_iter: int = 20000
    seed: int = 0
    multistart: int = 0
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    refresh: int = 5

    def __post_init__(self):
        eps = list(map(float, self.eps_schedule))
        if not eps or any(e <= 0 for e in eps):
            raise ParameterError("eps_schedule must be a nonempty list of positive numbers")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ParameterError("eps_schedule must be strictly decreasing")
        self.eps_schedule = tuple(eps)
        if self.tol_g <= 0 or self.max_iter < 1:
            raise ParameterError("tol_g must be positive and max_iter >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        known = {"eps_schedule", "tol_g", "max_iter", "seed", "multistart"}
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown solver keys: {sorted(extra)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {"eps_schedule": list(self.eps_schedule), "tol_g": self.tol_g,
                "max_iter": self.max_iter, "seed": self.seed, "multistart": self.multistart}


@dataclass
class SolveResult:
    u_star: ScalarField
    energy_trace: list
    final_grad_norm: float
    eps_final: float
    converged: bool
    wall_time: float
    energy: float = math.nan
    min_before_clamp: float = math.nan
    clamp_delta: float = 0.0
    basins: list = field(default_factory=list)
    tol_opt: float = 0.0

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "energy": self.energy,
            "energy_trace": self.energy_trace,
            "final_grad_norm": self.final_grad_norm,
            "eps_final": self.eps_final,
            "converged": self.converged,
            "min_before_clamp": self.min_before_clamp,
            "clamp_delta": self.clamp_delta,
            "basins": self.basins,
            "tol_opt": self.tol_opt,
            "max_u": float(self.u_star.values[self.u_star.domain.interior_mask].max()),
        }
        if include_time:
            d["wall_time"] = self.wall_time
        return d


class _Problem:
    """Flat-vector view of the surrogate energy restricted to free cells."""

    def __init__(self, params: ProblemParams):
        dom = params.domain
        self.params = params
        self.dom = dom
        self.K = stiffness_matrix(params.A)
        self.free = np.flatnonzero(dom.free_mask.ravel())
        self.w = dom.weights.ravel()
        self.wf = self.w * params.f.values.ravel()
        self.gamma = params.gamma
        base = np.zeros(dom.size)
        band = dom.boundary_band.ravel()
        base[band] = params.g.values.ravel()[band]
        self.base = base
        self.Kff = self.K[self.free][:, self.free].tocsc()

    def full(self, x: np.ndarray) -> np.ndarray:
        u = self.base.copy()
        u[self.free] = x
        return u

    def value(self, x, eps):
        u = self.full(x)
        return 0.5 * u @ (self.K @ u) + self.wf @ phi_eps(u, eps, self.gamma)

    def value_grad(self, x, eps):
        u = self.full(x)
        Ku = self.K @ u
        e = 0.5 * u @ Ku + self.wf @ phi_eps(u, eps, self.gamma)
        g = Ku[self.free] + self.wf[self.free] * dphi_eps(x, eps, self.gamma)
        return e, g, Ku[self.free]

    def delta(self, x, d, Ku, Kd, alpha, eps):
        """J_eps(x + alpha d) - J_eps(x), assembled from local differences.

        Forming the difference term by term keeps it accurate when it is far
        below the rounding level of the total energy, which is the regime the
        line search reaches near convergence at small eps.
        """
        wf = self.wf[self.free]
        dphi = phi_eps(x + alpha * d, eps, self.gamma) - phi_eps(x, eps, self.gamma)
        return alpha * (Ku @ d) + 0.5 * alpha**2 * (d @ Kd) + wf @ dphi

    def preconditioner(self, x, eps):
        # |curvature| keeps the matrix SPD while still damping steps in the
        # cells where the smoothed source term is strongly concave.
        curv = np.maximum(self.wf[self.free] * d2phi_eps(x, eps, self.gamma), 0.0)
        return splu((self.Kff + sp.diags(curv)).tocsc())


def harmonic_extension(params: ProblemParams) -> ScalarField:
    """Discrete A-harmonic function with boundary values g on the band."""
    prob = _Problem(params)
    rhs = -(prob.K @ prob.base)[prob.free]
    x = splu(prob.Kff).solve(rhs)
    return ScalarField(params.domain, prob.full(x).reshape(params.domain.shape), name="harmonic_extension")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise SolverError("NaN or infinity encountered during minimization")


def _stage(prob: _Problem, x: np.ndarray, eps: float, cfg: SolverConfig, budget: int):
    e, g, Ku = prob.value_grad(x, eps)
    _check_finite(e, g)
    e_start = e
    d = None
    z_prev = g_prev = None
    lu = None
    sign_at_lu = None
    it = 0
    ls_fail = False
    step0 = 1.0
    gnorm = float(np.linalg.norm(g))
    while it < budget:
        gnorm = float(np.linalg.norm(g))
        if gnorm <= cfg.tol_g * (1 + abs(e)):
            break
        restart = False
        # phi_eps'' jumps at u = 0, so a factorization is stale as soon as any
        # cell changes sign; refactor then, and otherwise every few iterations.
        sign = x > 0
        if lu is None or it % cfg.refresh == 0 or not np.array_equal(sign, sign_at_lu):
            lu = prob.preconditioner(x, eps)
            sign_at_lu = sign
            restart = True
        z = lu.solve(g)
        if d is None or restart:
            d = -z
        else:
            beta = max(0.0, float(z @ (g - g_prev)) / float(z_prev @ g_prev))
            d = -z + beta * d
        slope = float(g @ d)
        if slope >= 0:
            d = -z
            slope = float(g @ d)
        alpha = step0
        accepted = False
        Kd = prob.Kff @ d
        for _ in range(60):
            de = prob.delta(x, d, Ku, Kd, alpha, eps)
            if np.isfinite(de) and de <= cfg.armijo_c * alpha * slope:
                accepted = True
                break
            alpha *= cfg.backtrack
        if not accepted:
            ls_fail = True
            break
        step0 = min(1.0, 2.0 * alpha)
        z_prev, g_prev = z, g
        x = x + alpha * d
        e, g, Ku = prob.value_grad(x, eps)
        _check_finite(e, g)
        it += 1
    gnorm = float(np.linalg.norm(g))
    ok = gnorm <= cfg.tol_g * (1 + abs(e))
    rec = {"eps": eps, "energy_start": float(e_start), "energy_end": float(e), "iterations": it,
           "grad_norm": gnorm, "converged": bool(ok), "line_search_failed": ls_fail}
    return x, rec


def _continuation(prob: _Problem, x0: np.ndarray, cfg: SolverConfig):
    x = x0.copy()
    trace = []
    used = 0
    for eps in cfg.eps_schedule:
        x, rec = _stage(prob, x, eps, cfg, max(cfg.max_iter - used, 0))
        used += rec["iterations"]
        trace.append(rec)
        logger.debug("stage eps=%g: %d its, E=%.12g, |g|=%.3e", eps, rec["iterations"],
                     rec["energy_end"], rec["grad_norm"])
    return x, trace


def random_bump(domain, rng: np.random.Generator, amplitude: float,
                r_min: Optional[float] = None, r_max: float = 0.3) -> np.ndarray:
    """Smooth bump supported on free cells, with sup norm <= amplitude and random sign."""
    h = domain.h
    r_min = 3 * h if r_min is None else r_min
    radius = rng.uniform(r_min, max(r_max, r_min))
    reach = max(1.0 - 2 * h - radius, 0.0)
    while True:
        c = rng.uniform(-reach, reach, size=domain.dim)
        if np.linalg.norm(c) <= reach:
            break
    amp = amplitude * rng.uniform(0.1, 1.0) * rng.choice([-1.0, 1.0])
    dist2 = np.sum((domain.coords - c) ** 2, axis=-1) / radius**2
    bump = amp * np.maximum(1.0 - dist2, 0.0) ** 2
    return np.where(domain.free_mask, bump, 0.0)


def minimize(params: ProblemParams, config: Optional[SolverConfig] = None,
             init: Optional[ScalarField] = None) -> SolveResult:
    """Approximate a minimizer of J over fields equal to g on the boundary band."""
    cfg = config or SolverConfig()
    t0 = time.perf_counter()
    dom = params.domain
    _check_finite(params.f.values, params.g.values)
    prob = _Problem(params)
    if init is None:
        start = harmonic_extension(params).values.ravel()[prob.free]
    else:
        start = init.values.ravel()[prob.free].copy()

    starts = [start]
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.multistart):
        starts.append(start + random_bump(dom, rng, 0.5 * float(np.abs(prob.base).max()) + 0.1).ravel()[prob.free])

    runs = []
    for s in starts:
        x, trace = _continuation(prob, s, cfg)
        u_pre = prob.full(x)
        u_post = u_pre.copy()
        u_post[prob.free] = np.maximum(x, 0.0)
        e_pre = energy(params, u_pre.reshape(dom.shape))
        e_post = energy(params, u_post.reshape(dom.shape))
        runs.append((e_post, u_post, u_pre, trace, e_pre))

    best = min(range(len(runs)), key=lambda i: runs[i][0])
    e_post, u_post, u_pre, trace, e_pre = runs[best]
    last = trace[-1]
    basins = [{"start": i, "energy": float(r[0]), "converged": bool(r[3][-1]["converged"])}
              for i, r in enumerate(runs)]
    return SolveResult(
        u_star=ScalarField(dom, u_post.reshape(dom.shape), name="u_star"),
        energy_trace=trace,
        final_grad_norm=last["grad_norm"],
        eps_final=cfg.eps_schedule[-1],
        converged=bool(last["converged"]),
        wall_time=time.perf_counter() - t0,
        energy=float(e_post),
        min_before_clamp=float(u_pre[prob.free].min()),
        clamp_delta=float(e_post - e_pre),
        basins=basins if cfg.multistart else [],
        tol_opt=smoothing_gap(params, cfg.eps_schedule[-1]),
    )


def smoothing_gap(params: ProblemParams, eps: float) -> float:
    """Bound on |J_eps - J| for any field, from -eps^gamma <= phi_eps(u) - (u^+)^gamma <= 0 per cell."""
    w = params.domain.weights
    return float(np.sum(w * np.abs(params.f.values)) * eps**params.gamma)


def truncation_probe(params: ProblemParams, u, M: float, tol_opt: float) -> dict:
    """Check J(min(u, M)) >= J(u) - tol_opt for a level M >= max g."""
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, float)
    g_max = float(params.g.values[params.domain.boundary_band].max())
    if M < g_max:
        raise ParameterError(f"truncation level {M} is below max g = {g_max}")
    base = energy(params, vals)
    cut = energy(params, np.minimum(vals, M))
    return {"M": float(M), "energy": base, "energy_truncated": cut, "tol_opt": float(tol_opt),
            "passes": bool(cut >= base - tol_opt),
            "cells_cut": int(np.count_nonzero(params.domain.interior_mask & (vals > M)))}


def minimality_probe(params: ProblemParams, u, trials: int = 100, amplitude: float = 0.01,
                     seed: int = 0) -> dict:
    """Compare J(u + v) with J(u) for seeded random bumps v vanishing on the band."""
    dom = params.domain
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, float)
    rng = np.random.default_rng(seed)
    base = energy(params, vals)
    diffs = []
    for _ in range(trials):
        v = random_bump(dom, rng, amplitude)
        diffs.append(energy(params, vals + v) - base)
    tol = 1e-4 * (1 + abs(base))
    worst = float(min(diffs)) if diffs else 0.0
    return {"energy": base, "trials": trials, "amplitude": amplitude, "seed": seed,
            "min_diff": worst, "tol_probe": tol, "passes": bool(worst >= -tol),
            "negative_count": int(sum(d < 0 for d in diffs))}
