import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aplab.energy import (ProblemParams, ScalingTransform, d2phi_eps, dirichlet_density, dphi_eps,
                          el_residual, energy, harmonic_replacement, phi_eps, replacement_decay,
                          rescale_problem, smoothed_energy_gradient, stiffness_matrix)
from aplab.errors import GeometryError, ParameterError
from aplab.grid import MatrixField, ball_mask, build_ball_grid
from aplab.radial import radial_exact_case


def _params(dom, f=1.0, g=1.0, gamma=0.5, p=math.inf, A=None):
    A = A or MatrixField.identity(dom)
    f = dom.constant(f) if np.isscalar(f) else f
    g = dom.constant(g) if np.isscalar(g) else g
    return ProblemParams(gamma, p, A, f, g)


def _aniso(dom, rng):
    M = rng.normal(size=(2, 2))
    S = M @ M.T + 0.5 * np.eye(2)
    ev = np.linalg.eigvalsh(S)
    return MatrixField(dom, S, float(ev[0]), float(ev[-1]))


# -- smoothing ----------------------------------------------------------------

@given(st.floats(-2, 5), st.sampled_from([1e-1, 1e-2, 1e-3, 1e-4]), st.floats(0.05, 0.95))
def test_phi_eps_uniform_bound(u, eps, gamma):
    gap = float(phi_eps(u, eps, gamma)) - max(u, 0.0) ** gamma
    assert -eps**gamma * (1 + 1e-12) <= gap <= 1e-15


@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
def test_phi_derivatives_by_central_differences(gamma):
    eps, t = 1e-2, 1e-6
    u = np.array([-0.3, 0.004, 0.02, 0.5, 2.0])
    fd1 = (phi_eps(u + t, eps, gamma) - phi_eps(u - t, eps, gamma)) / (2 * t)
    fd2 = (dphi_eps(u + t, eps, gamma) - dphi_eps(u - t, eps, gamma)) / (2 * t)
    assert np.allclose(dphi_eps(u, eps, gamma), fd1, rtol=1e-6, atol=1e-9)
    assert np.allclose(d2phi_eps(u, eps, gamma), fd2, rtol=1e-5, atol=1e-7)


# -- Dirichlet form -----------------------------------------------------------

def test_stiffness_matches_density_and_is_psd():
    rng = np.random.default_rng(0)
    dom = build_ball_grid(2, 12)
    A = _aniso(dom, rng)
    K = stiffness_matrix(A).toarray()
    assert np.allclose(K, K.T, atol=1e-13)
    assert np.linalg.eigvalsh(K).min() > -1e-10
    u = rng.normal(size=dom.shape)
    quad = 0.5 * u.ravel() @ K @ u.ravel()
    dens = np.sum(dom.weights * dirichlet_density(A, u))
    assert quad == pytest.approx(dens, rel=1e-12)


def test_stiffness_psd_in_3d_with_anisotropy():
    dom = build_ball_grid(3, 8)
    S = np.array([[2.0, 0.4, 0.1], [0.4, 1.0, -0.3], [0.1, -0.3, 1.5]])
    ev = np.linalg.eigvalsh(S)
    K = stiffness_matrix(MatrixField(dom, S, ev[0], ev[-1])).toarray()
    assert np.linalg.eigvalsh(K).min() > -1e-10


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_dirichlet_energy_exact_for_affine(a, b):
    dom = build_ball_grid(2, 32)
    u = a * dom.coords[..., 0] + b * dom.coords[..., 1]
    dens = dirichlet_density(MatrixField.identity(dom), u)
    assert np.allclose(dens[dom.interior_mask], 0.5 * (a * a + b * b), rtol=1e-12, atol=1e-14)


# -- gradient -----------------------------------------------------------------

@pytest.mark.parametrize("gamma", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_smoothed_gradient_central_difference(gamma, eps):
    rng = np.random.default_rng(int(gamma * 100) + int(1 / eps))
    dom = build_ball_grid(2, 24)
    A = _aniso(dom, rng)
    f = dom.sample(lambda x: 1.0 + np.linalg.norm(x, axis=-1) ** -0.5 - 2.0 * x[..., 0], singular=True)
    params = _params(dom, f=f, g=0.5, gamma=gamma, A=A)
    u = rng.uniform(-0.5, 1.0, dom.shape)
    u = np.where(np.abs(u) < 1e-3, 1e-3, u)
    _, grad = smoothed_energy_gradient(params, u, eps)
    t = 1e-5
    for _ in range(5):
        v = np.where(dom.interior_mask, rng.normal(size=dom.shape), 0.0)
        jp, _ = smoothed_energy_gradient(params, u + t * v, eps)
        jm, _ = smoothed_energy_gradient(params, u - t * v, eps)
        fd = (jp - jm) / (2 * t)
        an = float(np.sum(grad.values * v))
        assert abs(fd - an) <= 1e-6 * max(abs(an), 1.0)


def test_gradient_with_zero_source_is_stiffness_product():
    rng = np.random.default_rng(1)
    dom = build_ball_grid(2, 16)
    params = _params(dom, f=0.0, g=1.0)
    u = rng.normal(size=dom.shape)
    val, grad = smoothed_energy_gradient(params, u, 1e-3)
    K = stiffness_matrix(params.A)
    ku = (K @ u.ravel()).reshape(dom.shape)
    assert np.abs(grad.values - np.where(dom.interior_mask, ku, 0)).max() < 1e-12
    assert val == pytest.approx(0.5 * u.ravel() @ (K @ u.ravel()), rel=1e-12)


# -- Euler-Lagrange residual --------------------------------------------------

def test_el_residual_vanishes_on_affine_1d():
    dom = build_ball_grid(1, 64)
    u = dom.sample(lambda x: np.maximum(x[..., 0], 0.0))
    params = _params(dom, f=0.0, g=u)
    rep = el_residual(params, u, t_pos=0.05)
    assert not rep.empty
    assert rep.max_abs < 1e-10


@pytest.mark.parametrize("kind,p", [("power_source", 4.0), ("constant_source", math.inf)])
def test_el_residual_first_order_on_exact_pairs(kind, p):
    case = radial_exact_case(kind, 2, 0.5, p)
    hs, errs = [], []
    for res in (64, 128, 256):
        dom = build_ball_grid(2, res)
        u = dom.sample(case.u_xyz)
        params = _params(dom, f=dom.sample(case.f_xyz, singular=True), g=u, p=p)
        rep = el_residual(params, u, t_pos=0.1)
        hs.append(dom.h)
        errs.append(rep.max_abs)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.0


def test_el_residual_empty_positivity_set_is_flagged():
    dom = build_ball_grid(2, 16)
    params = _params(dom, g=1.0)
    rep = el_residual(params, dom.constant(1e-6), t_pos=1e-3)
    assert rep.empty and rep.max_abs == 0.0


# -- harmonic replacement -----------------------------------------------------

def test_harmonic_replacement_of_square_norm():
    dom = build_ball_grid(2, 256)
    u = dom.sample(lambda x: np.sum(x**2, axis=-1))
    R = 0.75
    h = harmonic_replacement(MatrixField.identity(dom), u, [0.0, 0.0], R)
    inside = ball_mask(dom, [0, 0], R - 2 * dom.h)
    assert np.abs(h.values[inside] / R**2 - 1).max() < 0.02
    outside = dom.interior_mask & ~ball_mask(dom, [0, 0], R)
    assert np.array_equal(h.values[outside], u.values[outside])


def test_harmonic_replacement_reduces_dirichlet_energy():
    rng = np.random.default_rng(5)
    dom = build_ball_grid(2, 48)
    A = _aniso(dom, rng)
    u = dom.sample(lambda x: np.sin(3 * x[..., 0]) * np.cos(2 * x[..., 1]))
    h = harmonic_replacement(A, u, [0.1, -0.2], 0.5)
    E = lambda v: np.sum(dom.weights * dirichlet_density(A, v))  # noqa: E731
    assert E(h.values) <= E(u.values) + 1e-12


def test_replacement_decay_of_harmonic_is_tiny():
    dom = build_ball_grid(2, 64)
    u = dom.sample(lambda x: x[..., 0] ** 2 - x[..., 1] ** 2 + 0.3 * x[..., 0])
    rep = replacement_decay(MatrixField.identity(dom), u, [0, 0], [0.4, 0.2, 0.1])
    assert max(rep["mean_sq"]) < 1e-5


@pytest.mark.parametrize("center,radius", [([0.5, 0], 0.6), ([0, 0], 0.01)])
def test_harmonic_replacement_geometry_errors(center, radius):
    dom = build_ball_grid(2, 32)
    with pytest.raises(GeometryError):
        harmonic_replacement(MatrixField.identity(dom), dom.constant(1.0), center, radius)


# -- rescaling ----------------------------------------------------------------

@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("rho", [0.25, 0.5, 1.0])
def test_rescaling_energy_identity(kappa, rho):
    res = 64
    smooth = lambda x: 1.0 + 0.5 * x[..., 0] + 0.25 * np.sum(x**2, axis=-1)  # noqa: E731
    src = lambda x: 2.0 + x[..., 1]  # noqa: E731
    ref = build_ball_grid(2, int(res / rho))
    Pr = _params(ref, f=ref.sample(src), g=ref.sample(smooth))
    e_ref = energy(Pr, Pr.g, region=ball_mask(ref, [0, 0], rho))
    dom = build_ball_grid(2, res)
    P = _params(dom, f=dom.sample(src), g=dom.sample(smooth))
    Pt, ut = rescale_problem(P, P.g, ScalingTransform(rho, kappa))
    assert energy(Pt, ut) == pytest.approx(kappa**2 * e_ref, rel=0.02)
    assert np.allclose(Pt.f.values, kappa**1.5 * rho**2 * src(rho * dom.coords))


def test_rescaling_is_identity_for_unit_parameters():
    dom = build_ball_grid(2, 32)
    P = _params(dom, f=dom.sample(lambda x: 1 + x[..., 0]), g=dom.sample(lambda x: 2 + x[..., 1]))
    Pt, ut = rescale_problem(P, P.g, ScalingTransform(1.0, 1.0))
    assert np.array_equal(Pt.f.values, P.f.values)
    assert np.array_equal(ut.values, P.g.values)


def test_scaling_transform_validation():
    with pytest.raises(ParameterError):
        ScalingTransform(1.5, 1.0)
    with pytest.raises(ParameterError):
        ScalingTransform(0.5, -1.0)
    dom = build_ball_grid(2, 16)
    with pytest.raises(ParameterError):
        rescale_problem(_params(dom), dom.constant(1.0), ScalingTransform(0.8, 1.0, (0.5, 0.0)))


# -- parameters ---------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(gamma=1.5), dict(gamma=0.0), dict(p=0.9), dict(g=0.0), dict(g=-1.0)])
def test_problem_params_validation(kw):
    dom = build_ball_grid(2, 16)
    with pytest.raises(ParameterError):
        _params(dom, **kw)


def test_gamma_message_cites_interval():
    dom = build_ball_grid(2, 16)
    with pytest.raises(ParameterError, match=r"\(0,1\)"):
        _params(dom, gamma=1.5)
