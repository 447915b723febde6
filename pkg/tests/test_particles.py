import math

import numpy as np
import pytest
import scipy.integrate

from sfpgalerkin import _fallback
from sfpgalerkin.basis import TruncationSpec
from sfpgalerkin.noise import NoiseSpec, sample_path
from sfpgalerkin.particles import (TAIL_TOL, OUState, ParticleEnsemble, compare_moments, fstat_norm_sq,
                                   fstat_spectral, fstat_tail, ou_evolve, ou_stationary_sample, pde_moments,
                                   q_covariance, q_covariance_asymptotic, simulate_langevin, stationary_norm_mean)


def test_maxwellian_statistics_and_determinism():
    ens = ParticleEnsemble.maxwellian(40_000, 2, 3)
    assert ens.positions.min() >= 0 and ens.positions.max() < 1
    assert np.abs(ens.velocities.mean(axis=0)).max() < 5 / math.sqrt(40_000)
    np.testing.assert_allclose(ens.velocities.var(axis=0), 1.0, rtol=0.03)
    np.testing.assert_allclose(ens.positions.mean(axis=0), 0.5, atol=0.01)
    again = ParticleEnsemble.maxwellian(40_000, 2, 3)
    np.testing.assert_array_equal(again.velocities, ens.velocities)
    # prefixes are stable under changing the count
    np.testing.assert_array_equal(ParticleEnsemble.maxwellian(10, 2, 3).velocities, ens.velocities[:10])


def test_positions_wrap_to_the_torus():
    ens = ParticleEnsemble([[1.25], [-0.25], [-1e-18]], [[0.0], [0.0], [0.0]])
    np.testing.assert_allclose(ens.positions[:, 0], [0.25, 0.75, 0.0])
    assert ens.positions.max() < 1.0
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((3, 1)), np.zeros((3, 2)))


def test_to_csv(tmp_path):
    ens = ParticleEnsemble.maxwellian(5, 2, 1)
    p = tmp_path / "p.csv"
    ens.to_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x0,x1,v0,v1" and len(lines) == 6
    np.testing.assert_array_equal(np.loadtxt(p, delimiter=",", skiprows=1)[:, 2:], ens.velocities)


@pytest.mark.parametrize("backend", [None, _fallback], ids=["default", "python"])
def test_langevin_without_diffusion_is_the_ou_recursion(backend):
    dt, steps, lam = 1e-2, 50, 0.4
    path = sample_path(1, 2, dt, steps)
    ens = ParticleEnsemble([[0.1], [0.7]], [[1.0], [-0.5]])
    run = simulate_langevin(ens, path, lam, dt, steps, diffusion=False, backend=backend)
    x, v = ens.positions[:, 0].copy(), ens.velocities[:, 0].copy()
    for n in range(steps):
        x = x + dt * v
        v = (1 - dt) * v + lam * path.increments[0, n]
    np.testing.assert_allclose(run.final.velocities[:, 0], v, rtol=1e-13, atol=1e-14)
    np.testing.assert_allclose(run.final.positions[:, 0], x - np.floor(x), atol=1e-13)
    np.testing.assert_allclose(run.mean_v[-1, 0], v.mean(), atol=1e-14)
    assert run.times.shape == (steps + 1,) and run.mean_v.shape == (steps + 1, 1)
    # the input ensemble is not touched
    assert ens.velocities[0, 0] == 1.0


def test_langevin_keeps_the_maxwellian_without_forcing():
    dt, steps = 1e-2, 200
    ens = ParticleEnsemble.maxwellian(20_000, 1, 5)
    run = simulate_langevin(ens, sample_path(1, 0, dt, steps), 0.0, dt, steps, seed=11, exact_decay=True)
    assert abs(run.mean_v[-1, 0]) < 5 / math.sqrt(20_000)
    # EM with exact decay has stationary variance 2 dt / (1 - e^{-2 dt})
    assert run.second_v[-1, 0] == pytest.approx(2 * dt / -math.expm1(-2 * dt), rel=0.04)


def test_langevin_validation():
    ens = ParticleEnsemble.maxwellian(4, 1, 0)
    path = sample_path(1, 0, 0.01, 10)
    with pytest.raises(ValueError):
        simulate_langevin(ens, path, 0.1, 0.02, 5)
    with pytest.raises(ValueError):
        simulate_langevin(ens, path, 0.1, 0.01, 11)
    with pytest.raises(ValueError):
        simulate_langevin(ens, sample_path(2, 0, 0.01, 10), 0.1, 0.01, 5)
    with pytest.raises(ValueError):
        simulate_langevin(ParticleEnsemble.maxwellian(0, 1, 0), path, 0.1, 0.01, 5)


@pytest.mark.parametrize("t", [1e-4, 5e-3, 0.1, 1.0, 7.0])
def test_q_covariance_matches_quadrature(t):
    f = [lambda s: 2 * (1 - math.exp(-s)) ** 2, lambda s: 2 * math.exp(-s) * (1 - math.exp(-s)),
         lambda s: 2 * math.exp(-2 * s)]
    q = [scipy.integrate.quad(g, 0, t, epsabs=0, epsrel=1e-13)[0] for g in f]
    Q = q_covariance(t)
    np.testing.assert_allclose([Q[0, 0], Q[0, 1], Q[1, 1]], q, rtol=1e-10)
    assert Q[0, 1] == Q[1, 0]


def test_q_covariance_branches_join_and_limit():
    lo, hi = q_covariance(1e-2 * (1 - 1e-12)), q_covariance(1e-2)
    np.testing.assert_allclose(lo, hi, rtol=1e-9)
    np.testing.assert_allclose(q_covariance(30.0), q_covariance_asymptotic(30.0), atol=1e-12)
    assert np.all(q_covariance(0.0) == 0)
    with pytest.raises(ValueError):
        q_covariance(-1.0)


def test_stationary_state_norms():
    trunc = TruncationSpec(1, 0, 40)
    lam, V = 0.5, 1.3
    g = fstat_spectral(lam, [V], trunc)
    assert np.sum(np.abs(g.coeffs) ** 2) == pytest.approx(fstat_norm_sq(lam, V), rel=1e-13)
    assert fstat_tail(lam, [V], trunc) < TAIL_TOL
    mass, mean, second = pde_moments(g.coeffs, trunc)
    a = lam * V / math.sqrt(2)
    assert mass == 1.0
    assert mean[0] == pytest.approx(a) and second[0] == pytest.approx(1 + a * a)
    with pytest.warns(UserWarning, match="tail"):
        fstat_spectral(0.9, [3.0], TruncationSpec(1, 0, 4))
    with pytest.raises(ValueError):
        fstat_spectral(1.0, [0.0], trunc)
    assert stationary_norm_mean(0.6, 2) == pytest.approx(1 / 0.64)
    assert stationary_norm_mean(1.0) == math.inf


def test_compare_moments():
    trunc = TruncationSpec(1, 1, 4)
    g = fstat_spectral(0.0, [0.0], trunc)
    ens = ParticleEnsemble.maxwellian(10_000, 1, 2)
    rep = compare_moments(g, ens)
    assert rep.delta_mass == 0.0
    assert rep.delta_mean[0] < 5 * rep.mean_stderr[0]
    assert rep.delta_second[0] < 5 * rep.second_stderr[0]
    assert set(rep.as_dict()) >= {"delta_mean", "delta_second", "count"}
    with pytest.raises(ValueError):
        compare_moments(g, ParticleEnsemble.maxwellian(10, 2, 0))
    with pytest.raises(ValueError):
        compare_moments(g.with_coeffs(np.zeros_like(g.coeffs)), ens)


def test_ou_evolve():
    s = OUState([0.5])
    p = sample_path(1, 4, 0.01, 3)
    em = ou_evolve(s, p, 0.01, 3, method="em")
    v = 0.5
    for n in range(3):
        v = 0.99 * v + math.sqrt(2) * p.increments[0, n]
    assert em.V[0] == pytest.approx(v, rel=1e-14)
    wz = ou_evolve(s, p, 0.01, 3)
    assert abs(wz.V[0] - v) < 1e-3
    assert ou_stationary_sample(1, 3).N == 3
    with pytest.raises(ValueError):
        ou_evolve(s, p, 0.01, 4)
    with pytest.raises(ValueError):
        ou_evolve(s, p, 0.01, 2, method="rk")
