import math

import numpy as np
import pytest
import scipy.linalg

from sfpgalerkin import _fallback
from sfpgalerkin.basis import SpectralState, TruncationSpec
from sfpgalerkin.diagnostics import dense_generator
from sfpgalerkin.noise import Constant, FourierMode, NoiseSpec, sample_path
from sfpgalerkin.operators import OperatorBundle
from sfpgalerkin.solver import (EM_ITO, EXP_EM, HEUN_STRAT, SCHEMES, STEPPERS, InstabilityError, SolverConfig,
                                capture_steps, integrate, integrate_batch, path_source, seeded_source)

from conftest import make_state

TRUNC = TruncationSpec(1, 3, 4)
NOISE = NoiseSpec((Constant((0.6,)), FourierMode((1,), (0.03 + 0.02j,))), 0.4)


def _g():
    return make_state(TRUNC, [(1.0, (0,), (0,)), (0.4, (1,), (1,)), (0.4, (-1,), (1,)), (0.3, (0,), (2,))])


@pytest.mark.parametrize("scheme", SCHEMES)
def test_kernel_path_matches_reference_steppers(scheme):
    bundle = OperatorBundle.assemble(TRUNC, NOISE)
    cfg = SolverConfig(scheme=scheme, dt=1e-3, t_end=0.02, lam=0.4, diag_every=20)
    path = sample_path(NOISE, 3, cfg.dt, cfg.n_steps)
    s = _g()
    for n in range(cfg.n_steps):
        s = STEPPERS[scheme](s, bundle, path, n, cfg)
    for backend in (None, _fallback):
        traj = integrate(_g(), bundle, path, cfg, backend=backend)
        np.testing.assert_allclose(traj.final[0], s.coeffs, atol=1e-13)


def test_deterministic_run_matches_matrix_exponential():
    bundle = OperatorBundle.assemble(TRUNC, NoiseSpec.canonical(1))
    g = _g()
    exact = scipy.linalg.expm(0.5 * dense_generator(TRUNC)) @ g.coeffs
    errs = {}
    for scheme in SCHEMES:
        for dt in (1e-3, 5e-4):
            cfg = SolverConfig(scheme=scheme, dt=dt, t_end=0.5, lam=0.0, diag_every=10**6)
            errs[scheme, dt] = np.abs(integrate(g, bundle, None, cfg).final[0] - exact).max()
    # first order for the Euler schemes, second order for Heun
    assert errs[EM_ITO, 1e-3] / errs[EM_ITO, 5e-4] == pytest.approx(2.0, rel=0.05)
    assert errs[EXP_EM, 1e-3] / errs[EXP_EM, 5e-4] == pytest.approx(2.0, rel=0.05)
    assert errs[HEUN_STRAT, 1e-3] / errs[HEUN_STRAT, 5e-4] == pytest.approx(4.0, rel=0.05)


def test_config_validation():
    with pytest.raises(ValueError, match="well posed"):
        SolverConfig(lam=1.2)
    assert SolverConfig(lam=1.2, override_lambda=True).lam == 1.2
    with pytest.raises(ValueError):
        SolverConfig(scheme="rk4")
    with pytest.raises(ValueError):
        SolverConfig(dt=0.0)
    with pytest.raises(ValueError):
        SolverConfig(diag_every=0)
    with pytest.raises(ValueError):
        SolverConfig(dt=0.3, t_end=1.0).n_steps


def test_stability_guard():
    trunc = TruncationSpec(1, 16, 16)
    cfg = SolverConfig(scheme=EM_ITO, dt=0.01)
    assert cfg.stiffness(trunc) == pytest.approx(0.01 * (16 + 2 * math.pi * 16 * 4))
    with pytest.raises(ValueError, match="stability"):
        cfg.check_stability(trunc)
    # the exponential scheme drops the diagonal term
    assert SolverConfig(scheme=EXP_EM, dt=0.01).stiffness(trunc) == pytest.approx(0.01 * 2 * math.pi * 64)


def test_capture_steps():
    np.testing.assert_array_equal(capture_steps(10, 4), [0, 4, 8, 10])
    np.testing.assert_array_equal(capture_steps(0, 3), [0])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_blow_up_raises_with_partial_trajectory():
    trunc = TruncationSpec(1, 8, 8)
    bundle = OperatorBundle.assemble(trunc, NoiseSpec.canonical(1))
    g = make_state(trunc, [(1.0, (0,), (0,)), (0.1, (1,), (1,)), (0.1, (-1,), (1,))])
    cfg = SolverConfig(scheme=EM_ITO, dt=0.5, t_end=500.0, lam=0.0, diag_every=10)
    with pytest.raises(InstabilityError) as exc:
        integrate(g, bundle, None, cfg, check_stability=False)
    partial = exc.value.partial
    assert exc.value.step > 0 and partial is not None
    assert partial.times[-1] <= exc.value.step * cfg.dt
    assert np.isfinite(partial.table[0, 0]).all()


def test_seeded_source_matches_sampled_paths():
    seeds = [5, 9, 13]
    src = seeded_source(seeds, 2, 1e-3)
    ref = path_source([sample_path(2, s, 1e-3, 300) for s in seeds])
    np.testing.assert_array_equal(src(0, 300), ref(0, 300))
    np.testing.assert_array_equal(src(120, 180), ref(120, 180))


def test_batch_rows_are_independent_of_grouping():
    bundle = OperatorBundle.assemble(TRUNC, NOISE)
    cfg = SolverConfig(dt=1e-3, t_end=0.1, lam=0.4, diag_every=25)
    G0 = np.tile(_g().coeffs, (3, 1))
    both = integrate_batch(G0, bundle, cfg, seeded_source([1, 2, 3], 2, cfg.dt))
    one = integrate_batch(G0[1:2], bundle, cfg, seeded_source([2], 2, cfg.dt))
    np.testing.assert_array_equal(both.final[1], one.final[0])
    # batched reductions may reorder sums
    np.testing.assert_allclose(both.table[1], one.table[0], rtol=1e-14)


def test_snapshots_and_reports():
    bundle = OperatorBundle.assemble(TRUNC, NOISE)
    cfg = SolverConfig(dt=1e-3, t_end=0.1, lam=0.4, diag_every=50, snapshot_times=(0.037,))
    traj = integrate(_g(), bundle, sample_path(NOISE, 0, 1e-3, 100), cfg)
    assert 0.037 in traj.snapshots
    assert math.isclose(traj.times[1], 0.037)
    reps = traj.reports
    assert reps[0].t == 0.0 and reps[0].rho == 1.0
    assert isinstance(traj.final_state(TRUNC), SpectralState)


def test_path_required_for_noise():
    bundle = OperatorBundle.assemble(TRUNC, NOISE)
    with pytest.raises(ValueError):
        integrate(_g(), bundle, None, SolverConfig(lam=0.4, t_end=0.01))
    with pytest.raises(ValueError):
        integrate(_g(), bundle, sample_path(NOISE, 0, 2e-3, 5), SolverConfig(lam=0.4, t_end=0.01))


def test_ito_drift_of_energy_matches_ensemble():
    # E|g(dt)|^2 - |g|^2 over one EM step equals dt * energy_rate up to O(dt^2) and sampling error
    from sfpgalerkin.diagnostics import energy_rate

    bundle = OperatorBundle.assemble(TRUNC, NOISE)
    g = _g()
    dt = 1e-3
    R = 20000
    cfg = SolverConfig(scheme=EM_ITO, dt=dt, t_end=dt, lam=0.4)
    traj = integrate_batch(np.tile(g.coeffs, (R, 1)), bundle, cfg, seeded_source(range(R), 2, dt))
    n1 = np.sum(np.abs(traj.final) ** 2, axis=1)
    n0 = np.sum(np.abs(g.coeffs) ** 2)
    est = (n1 - n0) / dt
    rate = energy_rate(g.coeffs, bundle, 0.4)
    assert abs(est.mean() - rate) < 5 * est.std() / math.sqrt(R) + 0.05 * abs(rate)
