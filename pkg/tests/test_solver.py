import math

import numpy as np
import pytest

from aplab.energy import ProblemParams, energy
from aplab.errors import ParameterError, SolverError
from aplab.grid import MatrixField, ScalarField, build_ball_grid
from aplab.radial import radial_exact_case
from aplab.solver import (SolverConfig, _check_finite, harmonic_extension, minimality_probe, minimize,
                          smoothing_gap, truncation_probe)


def _problem(res, f=1.0, g=None, gamma=0.5, dim=2, p=math.inf):
    dom = build_ball_grid(dim, res)
    g = g if g is not None else (lambda x: 1.0 + 0.5 * x[..., 0])
    f = dom.constant(f) if np.isscalar(f) else dom.sample(f, singular=True)
    return ProblemParams(gamma, p, MatrixField.identity(dom), f, dom.sample(g))


def _exact(kind, res):
    case = radial_exact_case(kind, 2, 0.5, 4.0 if kind == "power_source" else math.inf)
    dom = build_ball_grid(2, res)
    params = ProblemParams(case.gamma, case.p, MatrixField.identity(dom),
                           dom.sample(case.f_xyz, singular=True), dom.sample(case.u_xyz))
    return case, params


@pytest.fixture(scope="module")
def solved32():
    params = _problem(32, f=2.0)
    return params, minimize(params)


def test_zero_source_gives_harmonic_extension():
    params = _problem(48, f=0.0, g=lambda x: 1.5 + x[..., 0] * x[..., 1])
    res = minimize(params)
    ext = harmonic_extension(params)
    assert res.converged
    assert res.energy == pytest.approx(energy(params, ext), rel=1e-8)
    assert np.abs(res.u_star.values - ext.values).max() < 1e-6


def test_band_values_are_preserved(solved32):
    params, res = solved32
    band = params.domain.boundary_band
    assert np.array_equal(res.u_star.values[band], params.g.values[band])


def test_solution_is_nonnegative_and_clamp_is_small(solved32):
    params, res = solved32
    assert res.u_star.values[params.domain.interior_mask].min() >= 0
    assert res.min_before_clamp >= -1e-4
    assert abs(res.clamp_delta) <= res.tol_opt + 1e-12


def test_stage_energies_are_monotone(solved32):
    _, res = solved32
    for rec in res.energy_trace:
        assert rec["energy_end"] <= rec["energy_start"] + 1e-12
    assert [r["eps"] for r in res.energy_trace] == [1e-1, 1e-2, 1e-3, 1e-4]


def test_minimizer_passes_probe_and_corruption_fails(solved32):
    params, res = solved32
    assert res.converged
    probe = minimality_probe(params, res.u_star, trials=50, seed=3)
    assert probe["passes"], probe
    bad = res.u_star.values + np.where(params.domain.free_mask,
                                       0.05 * np.sin(20 * params.domain.coords[..., 0]), 0.0)
    assert not minimality_probe(params, bad, trials=50, seed=3)["passes"]


def test_convex_case_probe_passes():
    # f == 0 makes J a convex quadratic, so any perturbation increases it
    params = _problem(32, f=0.0)
    res = minimize(params)
    assert minimality_probe(params, res.u_star, trials=40, seed=1)["negative_count"] == 0


def test_runs_are_bitwise_deterministic():
    params = _problem(24, f=3.0)
    a = minimize(params, SolverConfig(seed=7))
    b = minimize(params, SolverConfig(seed=7))
    assert np.array_equal(a.u_star.values, b.u_star.values)
    assert a.energy_trace == b.energy_trace


def test_multistart_reports_basins_and_keeps_best():
    params = _problem(24, f=3.0)
    res = minimize(params, SolverConfig(multistart=3, seed=2))
    assert len(res.basins) == 4
    assert res.energy == pytest.approx(min(b["energy"] for b in res.basins), abs=0)


@pytest.mark.parametrize("kw", [dict(eps_schedule=[]), dict(eps_schedule=[1e-2, 1e-1]),
                                dict(eps_schedule=[1e-1, -1.0]), dict(tol_g=0.0), dict(max_iter=0)])
def test_config_validation(kw):
    with pytest.raises(ParameterError):
        SolverConfig(**kw)


def test_config_from_dict_rejects_unknown_keys():
    with pytest.raises(ParameterError, match="unknown"):
        SolverConfig.from_dict({"tol": 1e-3})


def test_nan_is_a_hard_error():
    dom = build_ball_grid(2, 16)
    vals = np.ones(dom.shape)
    vals[8, 8] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        ScalarField(dom, vals)
    with pytest.raises(SolverError):
        _check_finite(np.array([1.0, np.inf]))


@pytest.mark.parametrize("kind", ["power_source", "constant_source"])
def test_minimizer_beats_exact_pair_at_res64(kind):
    # the self-similar pair is a critical point but not the minimizer
    _, params = _exact(kind, 64)
    res = minimize(params)
    assert res.converged
    assert res.energy <= energy(params, params.g) + res.tol_opt
    assert res.energy == pytest.approx(energy(params, params.g), rel=0.03)


def test_sup_norm_stable_across_resolutions():
    sups = []
    for res in (64, 128):
        params = _problem(res, f=lambda x: np.linalg.norm(x, axis=-1) ** -0.5, p=3.0)
        sups.append(minimize(params).u_star.values.max())
    assert abs(sups[0] - sups[1]) <= 0.2 * sups[1]


def test_truncation_probe(solved32):
    params, res = solved32
    gmax = params.g.values[params.domain.boundary_band].max()
    for M in (gmax, 2 * gmax):
        assert truncation_probe(params, res.u_star, M, res.tol_opt)["passes"]
    with pytest.raises(ParameterError):
        truncation_probe(params, res.u_star, 0.5 * gmax, res.tol_opt)


def test_truncation_detects_overshoot():
    params = _problem(32, f=0.0, g=lambda x: np.ones(x.shape[:-1]))
    bumped = np.where(params.domain.interior_mask, 1.0, 0.0)
    bumped[params.domain.free_mask] += 0.5
    out = truncation_probe(params, bumped, 1.0, 0.0)
    assert out["cells_cut"] > 0 and out["energy_truncated"] < out["energy"]


def test_smoothing_gap_scales_with_eps():
    params = _problem(16, f=2.0, gamma=0.5)
    assert smoothing_gap(params, 1e-4) == pytest.approx(smoothing_gap(params, 1e-2) * 0.1)
