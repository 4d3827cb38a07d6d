"""The Alt-Phillips energy, its smoothed surrogate, and related operators.

Discrete Dirichlet form
-----------------------
At every cell and along every axis we take the available one-sided
differences (both inside the ball, one in the boundary band).  The cell's
Dirichlet density is the average of 1/2 <A g, g> over all combinations of
one-sided gradients g, which expands to

    1/2 [ sum_d a_dd mean_s (D_d^s u)^2 + sum_{d != k} a_dk Gbar_d Gbar_k ]

with Gbar the mean one-sided difference (central where both exist).  Each
combination is a PSD form, so the assembled matrix K is symmetric PSD for any
elliptic A, and affine functions have exact gradients.  The discrete operator
div(A grad u) is -K u divided by the cell volume.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.ndimage import distance_transform_edt
from scipy.sparse.linalg import cg

from .errors import DataError, GeometryError, ParameterError, SolverError
from .grid import GridDomain, MatrixField, ScalarField, ball_mask, one_sided_differences

__all__ = [
    "ProblemParams",
    "ScalingTransform",
    "phi_eps",
    "dphi_eps",
    "d2phi_eps",
    "energy",
    "energy_density",
    "dirichlet_density",
    "stiffness_matrix",
    "smoothed_energy_gradient",
    "div_A_grad",
    "el_residual",
    "ELReport",
    "harmonic_replacement",
    "replacement_decay",
    "rescale_problem",
    "resample",
]


@dataclass(frozen=True, eq=False)
class ProblemParams:
    gamma: float
    p: float
    A: MatrixField
    f: ScalarField
    g: ScalarField

    def __post_init__(self):
        dom = self.f.domain
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"gamma must lie in (0,1), got {self.gamma}")
        if not self.p > dom.dim / 2:
            raise ParameterError(f"p must exceed n/2 = {dom.dim / 2}, got {self.p}")
        if self.A.domain is not dom or self.g.domain is not dom:
            raise ParameterError("A, f and g must live on the same grid")
        gb = self.g.values[dom.boundary_band]
        if np.any(gb < 0):
            raise ParameterError("boundary data g must be >= 0 on the boundary band")
        if not np.any(gb > 0):
            raise ParameterError("boundary data g vanishes identically on the boundary band")

    @property
    def domain(self) -> GridDomain:
        return self.f.domain

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_over_p(self) -> float:
        return 0.0 if math.isinf(self.p) else self.dim / self.p

    @property
    def theta(self) -> float:
        return (2 - self.n_over_p) / (2 - self.gamma)


# -- smoothing of (u^+)^gamma -------------------------------------------------

def phi_eps(u, eps: float, gamma: float):
    """((u^+)^2 + eps^2)^{gamma/2} - eps^gamma; vanishes for u <= 0."""
    up = np.maximum(u, 0.0)
    return (up * up + eps * eps) ** (gamma / 2) - eps**gamma


def dphi_eps(u, eps: float, gamma: float):
    up = np.maximum(u, 0.0)
    return gamma * up * (up * up + eps * eps) ** (gamma / 2 - 1)


def d2phi_eps(u, eps: float, gamma: float):
    up = np.maximum(u, 0.0)
    s = up * up + eps * eps
    return np.where(u > 0, gamma * s ** (gamma / 2 - 2) * (eps * eps + (gamma - 1) * up * up), 0.0)


def _pos_pow(u, gamma: float):
    return np.maximum(u, 0.0) ** gamma


# -- Dirichlet form -----------------------------------------------------------

def _axis_data(u: np.ndarray, dom: GridDomain):
    out = []
    for d in range(dom.dim):
        fwd, bwd, af, ab = one_sided_differences(u, dom.interior_mask, dom.h, d)
        cnt = np.maximum(af.astype(float) + ab, 1.0)
        out.append((fwd, bwd, af / cnt, ab / cnt))
    return out


def dirichlet_density(A: MatrixField, u: np.ndarray) -> np.ndarray:
    """Per-cell 1/2 <A grad u, grad u> averaged over one-sided gradients."""
    dom = A.domain
    ax = _axis_data(u, dom)
    a = A.values
    dens = np.zeros(dom.shape)
    gbar = [wf * fwd + wb * bwd for fwd, bwd, wf, wb in ax]
    for d, (fwd, bwd, wf, wb) in enumerate(ax):
        dens += a[..., d, d] * (wf * fwd**2 + wb * bwd**2)
        for k in range(dom.dim):
            if k != d:
                dens += a[..., d, k] * gbar[d] * gbar[k]
    return np.where(dom.interior_mask, 0.5 * dens, 0.0)


def _dirichlet_adjoint(A: MatrixField, u: np.ndarray) -> np.ndarray:
    """Gradient of sum_c w_c dirichlet_density_c via the stencil adjoint."""
    dom = A.domain
    w = dom.weights
    a = A.values
    ax = _axis_data(u, dom)
    gbar = [wf * fwd + wb * bwd for fwd, bwd, wf, wb in ax]
    out = np.zeros(dom.shape)
    for d, (fwd, bwd, wf, wb) in enumerate(ax):
        cross = np.zeros(dom.shape)
        for k in range(dom.dim):
            if k != d:
                cross += a[..., d, k] * gbar[k]
        # dE/dF_d and dE/dB_d per cell
        cf = w * wf * (a[..., d, d] * fwd + cross)
        cb = w * wb * (a[..., d, d] * bwd + cross)
        n = dom.resolution
        lo = [slice(None)] * dom.dim
        hi = [slice(None)] * dom.dim
        lo[d] = slice(0, n - 1)
        hi[d] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        h = dom.h
        # F_d(c) = (u[c+e] - u[c]) / h
        out[lo] -= cf[lo] / h
        out[hi] += cf[lo] / h
        # B_d(c) = (u[c] - u[c-e]) / h
        out[hi] += cb[hi] / h
        out[lo] -= cb[hi] / h
    return out


@lru_cache(maxsize=16)
def stiffness_matrix(A: MatrixField) -> sp.csr_matrix:
    """Sparse symmetric matrix K with 1/2 u^T K u = sum_c w_c dirichlet_density_c."""
    dom = A.domain
    size, shape, h = dom.size, dom.shape, dom.h
    idx = np.arange(size).reshape(shape)
    w = dom.weights.ravel()
    a = A.values.reshape(size, dom.dim, dom.dim)
    ones = np.ones(shape)
    fops, bops, gops, wfs, wbs = [], [], [], [], []
    for d in range(dom.dim):
        _, _, af, ab = one_sided_differences(ones, dom.interior_mask, h, d)
        cnt = np.maximum(af.astype(float) + ab, 1.0)
        nb_f = np.roll(idx, -1, axis=d)
        nb_b = np.roll(idx, 1, axis=d)
        rf = idx[af]
        F = sp.csr_matrix(
            (np.concatenate([-np.ones(rf.size), np.ones(rf.size)]) / h,
             (np.concatenate([rf, rf]), np.concatenate([rf, nb_f[af]]))),
            shape=(size, size))
        rb = idx[ab]
        B = sp.csr_matrix(
            (np.concatenate([np.ones(rb.size), -np.ones(rb.size)]) / h,
             (np.concatenate([rb, rb]), np.concatenate([rb, nb_b[ab]]))),
            shape=(size, size))
        wf = (af / cnt).ravel()
        wb = (ab / cnt).ravel()
        fops.append(F)
        bops.append(B)
        wfs.append(wf)
        wbs.append(wb)
        gops.append(sp.diags(wf) @ F + sp.diags(wb) @ B)
    K = sp.csr_matrix((size, size))
    for d in range(dom.dim):
        add = a[:, d, d] * w
        K = K + fops[d].T @ sp.diags(add * wfs[d]) @ fops[d] + bops[d].T @ sp.diags(add * wbs[d]) @ bops[d]
        for k in range(dom.dim):
            if k != d:
                K = K + gops[d].T @ sp.diags(a[:, d, k] * w) @ gops[k]
    K = sp.csr_matrix(K)
    K.sum_duplicates()
    K.eliminate_zeros()
    return K


def div_A_grad(A: MatrixField, u: np.ndarray) -> np.ndarray:
    """Discrete div(A grad u) per unit volume on interior cells (zero elsewhere)."""
    dom = A.domain
    Ku = (stiffness_matrix(A) @ np.asarray(u, float).ravel()).reshape(dom.shape)
    return np.where(dom.interior_mask, -Ku / dom.cell_volume, 0.0)


# -- energies -----------------------------------------------------------------

def _values(u) -> np.ndarray:
    vals = u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DataError("non-finite values in field")
    return vals


def energy_density(params: ProblemParams, u) -> np.ndarray:
    vals = _values(u)
    dom = params.domain
    dens = dirichlet_density(params.A, vals) + params.f.values * _pos_pow(vals, params.gamma)
    return np.where(dom.interior_mask, dens, 0.0)


def energy(params: ProblemParams, u, region: Optional[np.ndarray] = None) -> float:
    """J(u) = sum over region cells of w [1/2 <A grad u, grad u> + f (u^+)^gamma]."""
    dom = params.domain
    mask = dom.interior_mask if region is None else (np.asarray(region, bool) & dom.interior_mask)
    if not mask.any():
        raise ValueError("empty integration region")
    dens = energy_density(params, u)
    return float(np.sum(dens[mask]) * dom.cell_volume)


def smoothed_energy_gradient(params: ProblemParams, u, eps: float):
    """Surrogate energy with (u^+)^gamma replaced by phi_eps, and its exact gradient.

    The gradient is with respect to every cell value (zero outside the ball);
    callers restrict it to free cells.
    """
    if not eps > 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    vals = _values(u)
    dom = params.domain
    w = dom.weights
    fv = params.f.values
    value = float(np.sum(w * (dirichlet_density(params.A, vals) + fv * phi_eps(vals, eps, params.gamma))))
    grad = _dirichlet_adjoint(params.A, vals) + w * fv * dphi_eps(vals, eps, params.gamma)
    grad = np.where(dom.interior_mask, grad, 0.0)
    return value, ScalarField(dom, grad, name="grad")


# -- Euler-Lagrange residual --------------------------------------------------

@dataclass
class ELReport:
    residual: ScalarField
    mask: np.ndarray
    max_abs: float
    l2: float
    t_pos: float
    empty: bool

    def to_dict(self) -> dict:
        return {"t_pos": self.t_pos, "max_abs": self.max_abs, "l2": self.l2,
                "cells": int(np.count_nonzero(self.mask)), "empty": self.empty}


def el_residual(params: ProblemParams, u, t_pos: float) -> ELReport:
    """div(A grad u) - gamma f u^{gamma-1} on cells of {u > t_pos} at distance >= 2h from its complement.

    The complement includes the boundary band and the exterior, so cells whose
    stencil touches the one-sided boundary treatment are excluded.
    """
    if not t_pos > 0:
        raise ParameterError(f"t_pos must be positive, got {t_pos}")
    vals = _values(u)
    dom = params.domain
    pos = dom.free_mask & (vals > t_pos)
    dist = distance_transform_edt(pos) * dom.h
    mask = pos & (dist >= 2 * dom.h)
    res = np.zeros(dom.shape)
    if mask.any():
        lap = div_A_grad(params.A, vals)
        safe = np.where(mask, vals, 1.0)
        res = np.where(mask, lap - params.gamma * params.f.values * safe ** (params.gamma - 1), 0.0)
    field = ScalarField(dom, res, name="el_residual")
    if not mask.any():
        return ELReport(field, mask, 0.0, 0.0, t_pos, True)
    return ELReport(field, mask, float(np.abs(res[mask]).max()),
                    float(math.sqrt(np.sum(res[mask] ** 2) * dom.cell_volume)), t_pos, False)


# -- harmonic replacement -----------------------------------------------------

def harmonic_replacement(A: MatrixField, u, center: Sequence[float], radius: float,
                         rtol: float = 1e-10, maxiter: Optional[int] = None) -> ScalarField:
    """A-harmonic function in B_R(center) agreeing with u outside it.

    Solved by Jacobi-preconditioned conjugate gradients on the ball's cells.
    """
    dom = A.domain
    vals = _values(u)
    center = np.asarray(center, float)
    if np.linalg.norm(center) + radius > 1.0 + 1e-12:
        raise GeometryError(f"ball of radius {radius} at {center.tolist()} is not inside B_1")
    if radius < 2 * dom.h:
        raise GeometryError(f"radius {radius} below 2h = {2 * dom.h}")
    ball = ball_mask(dom, center, radius) & dom.free_mask
    if not ball.any():
        raise GeometryError("replacement ball contains no free cells")
    K = stiffness_matrix(A)
    inner = np.flatnonzero(ball.ravel())
    outer_vals = np.where(ball, 0.0, vals).ravel()
    Kbb = K[inner][:, inner].tocsr()
    rhs = -(K[inner] @ outer_vals)
    diag = Kbb.diagonal()
    M = sp.diags(1.0 / diag)
    x0 = vals.ravel()[inner]
    maxiter = maxiter or 20 * inner.size
    sol, info = cg(Kbb, rhs, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter, M=M)
    rel = np.linalg.norm(Kbb @ sol - rhs) / max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if info != 0 and rel > 10 * rtol:
        raise SolverError(f"harmonic replacement did not converge: relative residual {rel:.3e}")
    out = vals.ravel().copy()
    out[inner] = sol
    return ScalarField(dom, out.reshape(dom.shape), name="harmonic_replacement")


def replacement_decay(A: MatrixField, u, center: Sequence[float], radii: Sequence[float]) -> dict:
    """Mean square distance to the harmonic replacement over dyadic balls, and its log-log slope."""
    vals = _values(u)
    dom = A.domain
    means = []
    for R in radii:
        hfield = harmonic_replacement(A, vals, center, R)
        ball = ball_mask(dom, center, R)
        means.append(float(np.mean((vals[ball] - hfield.values[ball]) ** 2)))
    lr, lm = np.log(radii), np.log(np.maximum(means, np.finfo(float).tiny))
    slope = float(np.polyfit(lr, lm, 1)[0]) if len(radii) >= 2 else float("nan")
    return {"radii": list(map(float, radii)), "mean_sq": means, "slope": slope}


# -- rescaling ----------------------------------------------------------------

@dataclass(frozen=True)
class ScalingTransform:
    rho: float
    kappa: float
    center: tuple = None

    def __post_init__(self):
        if not (0 < self.rho <= 1):
            raise ParameterError(f"rho must lie in (0, 1], got {self.rho}")
        if not self.kappa > 0:
            raise ParameterError(f"kappa must be positive, got {self.kappa}")

    def x0(self, dim: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(dim)
        return np.asarray(self.center, float)

    def check(self, dim: int):
        if self.rho * (1 + np.linalg.norm(self.x0(dim))) > 1 + 1e-12:
            raise ParameterError("rho (1 + |x0|) must not exceed 1")


def resample(field: ScalarField, points: np.ndarray) -> np.ndarray:
    """Values of ``field`` at arbitrary points: exact via its sampler, else multilinear interpolation."""
    if field.sampler is not None:
        return np.asarray(field.sampler(points), float)
    dom = field.domain
    c = dom.axis_centers
    pts = np.clip(points, c[0], c[-1])
    interp = RegularGridInterpolator((c,) * dom.dim, field.values, method="linear")
    return interp(pts.reshape(-1, dom.dim)).reshape(points.shape[:-1])


def rescale_problem(params: ProblemParams, u, t: ScalingTransform):
    """Blow-up/blow-down of a problem and a candidate around x0.

    Returns (params_tilde, u_tilde) with A~(y) = A(x0 + rho y),
    f~(y) = kappa^{2-gamma} rho^2 f(x0 + rho y), u~(y) = kappa u(x0 + rho y),
    and boundary data the trace of u~.
    """
    dom = params.domain
    t.check(dom.dim)
    x0 = t.x0(dom.dim)
    pts = x0 + t.rho * dom.coords
    gam = params.gamma
    scale_f = t.kappa ** (2 - gam) * t.rho**2

    if params.A.is_identity:
        A_new = MatrixField.identity(dom)
    else:
        comps = np.empty(dom.shape + (dom.dim, dom.dim))
        for i in range(dom.dim):
            for j in range(dom.dim):
                comp = ScalarField(dom, params.A.values[..., i, j])
                comps[..., i, j] = resample(comp, pts)
        comps = 0.5 * (comps + np.swapaxes(comps, -1, -2))
        A_new = MatrixField(dom, comps, params.A.lam, params.A.Lam)

    f_old = params.f
    f_vals = scale_f * resample(f_old, pts)
    sampler = None
    if f_old.sampler is not None:
        fs, rho, kap = f_old.sampler, t.rho, scale_f
        sampler = lambda y: kap * fs(x0 + rho * y)  # noqa: E731
    f_new = ScalarField(dom, f_vals, name=f_old.name, singular=f_old.singular, sampler=sampler)

    if isinstance(u, ScalarField):
        u_field = u
    else:
        u_field = ScalarField(dom, _values(u))
    u_new = ScalarField(dom, t.kappa * resample(u_field, pts), name="u_tilde")
    g_new = ScalarField(dom, np.maximum(u_new.values, 0.0), name="g_tilde")
    return ProblemParams(gam, params.p, A_new, f_new, g_new), u_new
