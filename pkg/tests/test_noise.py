import math

import numpy as np
import pytest

from sfpgalerkin.noise import (BrownianPath, Constant, FourierMode, NoiseSpec, NoiseValidationError,
                               force_increments, refine, refined_family, regularity_sum, sample_increments,
                               sample_path, validate)


def test_unit_constant_field_sits_on_the_bound():
    r = validate(NoiseSpec((Constant((1.0,)),)))
    assert r.total == 1.0 and r.ok


def test_oversized_field_rejected():
    with pytest.raises(NoiseValidationError) as exc:
        validate(NoiseSpec((Constant((1.1,)),)))
    assert exc.value.total == pytest.approx(1.21)


def test_fourier_field_sum():
    a = 0.05
    r = regularity_sum(NoiseSpec((FourierMode((1,), (a,)),)))
    assert r.total == pytest.approx(4 * a * a * (1 + 4 * math.pi**2), rel=1e-14)


def test_fourier_sup_norm_is_attained():
    f = FourierMode((1, 2), (0.03 + 0.01j, -0.02j))
    xs = np.random.default_rng(1).random((20000, 2))
    vals = np.linalg.norm(f(xs), axis=1)
    assert vals.max() <= f.sup_norm() + 1e-15


def test_canonical_fields():
    spec = NoiseSpec.canonical(3, 0.2)
    assert spec.n_fields == 3 and spec.N == 3 and spec.lam == 0.2
    assert regularity_sum(spec).total == 3.0


def test_field_validation():
    with pytest.raises(ValueError):
        FourierMode((0,), (0.1,))
    with pytest.raises(ValueError):
        NoiseSpec((Constant((1.0,)), Constant((1.0, 0.0))))
    with pytest.raises(ValueError):
        NoiseSpec(())
    with pytest.raises(ValueError):
        NoiseSpec((Constant((1.0,)),), lam=-0.1)


def test_sample_path_statistics_and_determinism():
    p = sample_path(2, 5, 0.01, 50_000)
    assert p.increments.shape == (2, 50_000)
    assert p.increments.var() == pytest.approx(0.01, rel=0.02)
    np.testing.assert_array_equal(p.increments, sample_path(2, 5, 0.01, 50_000).increments)
    assert p.t_end == pytest.approx(500.0)
    with pytest.raises(ValueError):
        sample_path(1, 0, 0.0, 3)


def test_blocks_reproduce_the_full_path():
    full = sample_path(3, 11, 1e-3, 100).increments
    blocks = np.hstack([sample_increments(3, 11, 1e-3, a, a + 25) for a in range(0, 100, 25)])
    np.testing.assert_array_equal(full, blocks)


def test_refinement_preserves_coarse_increments():
    p = sample_path(2, 3, 0.1, 64)
    fam = refined_family(p, 4)
    assert [q.dt for q in fam] == [0.1 / 2**i for i in range(5)]
    for coarse, fine in zip(fam, fam[1:]):
        np.testing.assert_allclose(fine.increments[:, 0::2] + fine.increments[:, 1::2], coarse.increments,
                                   atol=1e-15)
        assert fine.coarsen() is coarse


def test_bridge_midpoint_variance():
    p = sample_path(1, 8, 1.0, 40_000)
    fine = refine(p)
    # conditional on the coarse increment the first half has variance dt/4
    resid = fine.increments[0, 0::2] - 0.5 * p.increments[0]
    assert resid.var() == pytest.approx(0.25, rel=0.03)
    assert fine.increments.var() == pytest.approx(0.5, rel=0.03)


def test_coarsen_without_parent():
    p = BrownianPath(0, 0.5, np.array([[1.0, 2.0, 3.0, 4.0]]))
    np.testing.assert_array_equal(p.coarsen().increments, [[3.0, 7.0]])
    with pytest.raises(ValueError):
        BrownianPath(0, 0.5, np.array([[1.0, 2.0, 3.0]])).coarsen()


def test_force_increments():
    spec = NoiseSpec((Constant((0.6, 0.0)), Constant((0.0, 0.8)), FourierMode((1, 0), (0.01, 0.0))))
    p = sample_path(spec, 2, 0.01, 10)
    F = force_increments(spec, p)
    np.testing.assert_allclose(F[:, 0], 0.6 * p.increments[0])
    np.testing.assert_allclose(F[:, 1], 0.8 * p.increments[1])
    with pytest.raises(ValueError):
        force_increments(spec, sample_path(1, 2, 0.01, 10))
