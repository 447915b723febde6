import math

import numpy as np
import pytest

from sfpgalerkin.basis import TruncationSpec, get_basis, hermite_functions
from sfpgalerkin.noise import Constant, FourierMode, NoiseSpec
from sfpgalerkin.operators import (OperatorBundle, assemble_noise_ops, assemble_strat_correction, assemble_transport,
                                   fokker_planck_diagonal, read_coo, write_coo)


def _velocity_moments(n, points=80):
    """Dense ``<q_i, v q_j>`` by Gauss-Hermite quadrature."""
    x, w = np.polynomial.hermite_e.hermegauss(points)
    q = hermite_functions(n, x)
    return (q * w * np.exp(0.5 * x * x) * x) @ q.T


def test_transport_matches_quadrature():
    trunc = TruncationSpec(1, 2, 5)
    b = get_basis(trunc)
    Vm = _velocity_moments(5)
    ref = np.zeros((b.dim, b.dim), dtype=complex)
    for i in range(b.dim):
        for j in range(b.dim):
            if b.k[i, 0] == b.k[j, 0]:
                ref[i, j] = 2j * math.pi * b.k[j, 0] * Vm[b.l[i, 0], b.l[j, 0]]
    np.testing.assert_allclose(assemble_transport(trunc).toarray(), ref, atol=1e-12)


@pytest.mark.parametrize("N", [1, 2])
def test_transport_skew_hermitian(N):
    A = assemble_transport(TruncationSpec(N, 2, 3)).toarray()
    assert np.abs(A + A.conj().T).max() == 0.0


def test_fourier_noise_matches_x_quadrature():
    trunc = TruncationSpec(1, 3, 3)
    b = get_basis(trunc)
    amp = 0.03 - 0.02j
    f = FourierMode((1,), (amp,))
    B = assemble_noise_ops(trunc, NoiseSpec((f,)))[0].toarray()
    xs = np.arange(32) / 32.0
    F = f(xs[:, None])[:, 0]
    ref = np.zeros_like(B)
    for i in range(b.dim):
        for j in range(b.dim):
            if b.l[i, 0] != b.l[j, 0] + 1:
                continue
            # <e_i, F D* e_j> with the x integral by the (exact) trapezoid rule
            xint = np.mean(np.exp(-2j * math.pi * b.k[i, 0] * xs) * F * np.exp(2j * math.pi * b.k[j, 0] * xs))
            ref[i, j] = xint * math.sqrt(b.l[j, 0] + 1)
    np.testing.assert_allclose(B, ref, atol=1e-14)


def test_constant_noise_is_scaled_raise():
    trunc = TruncationSpec(2, 1, 3)
    b = get_basis(trunc)
    B = assemble_noise_ops(trunc, NoiseSpec((Constant((0.6, 0.8)),)))[0].toarray()
    for j in range(b.dim):
        for a, w in ((0, 0.6), (1, 0.8)):
            i = b.up[a, j]
            if i >= 0:
                assert B[i, j] == pytest.approx(w * math.sqrt(b.l[j, a] + 1))


def test_strat_correction_is_half_square():
    trunc = TruncationSpec(1, 2, 4)
    noise = NoiseSpec((Constant((0.5,)), FourierMode((1,), (0.05,))))
    ops = assemble_noise_ops(trunc, noise)
    S = assemble_strat_correction(trunc, noise, ops).toarray()
    np.testing.assert_allclose(S, 0.5 * sum(B.toarray() @ B.toarray() for B in ops), atol=1e-15)


def test_ground_row_vanishes_so_mass_is_conserved():
    trunc = TruncationSpec(1, 3, 4)
    noise = NoiseSpec((Constant((0.5,)), FourierMode((2,), (0.03j,))))
    bundle = OperatorBundle.assemble(trunc, noise)
    g = bundle.basis.ground
    for M in [bundle.A, bundle.strat_corr, *bundle.noise_ops, bundle.ito_drift(0.7)]:
        assert np.abs(M.toarray()[g]).max() == 0.0


def test_fokker_planck_diagonal():
    trunc = TruncationSpec(2, 1, 3)
    np.testing.assert_array_equal(fokker_planck_diagonal(trunc), -get_basis(trunc).l_abs)


def test_bundle_generators():
    trunc = TruncationSpec(1, 1, 2)
    bundle = OperatorBundle.assemble(trunc, NoiseSpec.canonical(1))
    M0 = bundle.deterministic_generator().toarray()
    np.testing.assert_allclose(M0, np.diag(bundle.L_diag) - bundle.A.toarray())
    np.testing.assert_allclose(bundle.ito_drift(0.3).toarray(), M0 + 0.09 * bundle.strat_corr.toarray())


def test_noise_dimension_mismatch():
    with pytest.raises(ValueError):
        assemble_noise_ops(TruncationSpec(2, 1, 1), NoiseSpec.canonical(1))


def test_coo_roundtrip(tmp_path):
    trunc = TruncationSpec(1, 2, 3)
    bundle = OperatorBundle.assemble(trunc, NoiseSpec((FourierMode((1,), (0.02 + 0.01j,)),)))
    files = bundle.dump(tmp_path)
    assert {p.name for p in files} == {"transport.coo", "fokker_planck.coo", "strat_correction.coo", "noise_0.coo"}
    back = read_coo(tmp_path / "noise_0.coo")
    assert (back != bundle.noise_ops[0]).nnz == 0
    p = write_coo(bundle.A, tmp_path / "a.coo")
    assert (read_coo(p) != bundle.A).nnz == 0
