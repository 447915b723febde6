import os
import subprocess
import sys

import numpy as np
import pytest

from sfpgalerkin import _fallback, kernels
from sfpgalerkin.basis import TruncationSpec
from sfpgalerkin.noise import Constant, FourierMode, NoiseSpec, sample_path
from sfpgalerkin.operators import OperatorBundle
from sfpgalerkin.particles import ParticleEnsemble, _field_arrays
from sfpgalerkin.solver import SCHEMES, pack_operators

compiled = kernels.available_backends().get("cython")
needs_ext = pytest.mark.skipif(compiled is None, reason="extension not built")


def _setup(scheme, R=4, steps=50, lam=0.4):
    trunc = TruncationSpec(1, 3, 4)
    noise = NoiseSpec((Constant((0.5,)), FourierMode((1,), (0.04 - 0.01j,))), lam)
    bundle = OperatorBundle.assemble(trunc, noise)
    rs = np.random.default_rng(3)
    G = rs.standard_normal((R, trunc.dim)) + 1j * rs.standard_normal((R, trunc.dim))
    dW = np.sqrt(1e-3) * rs.standard_normal((R, steps, 2))
    return bundle, G, dW, pack_operators(bundle, scheme, lam, 1e-3)


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")
    assert "python" in kernels.available_backends()


def test_env_var_forces_fallback():
    env = dict(os.environ, SFPG_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from sfpgalerkin import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.parametrize("scheme", SCHEMES)
def test_advance_backends_agree(scheme):
    bundle, G, dW, (drift, noise, decay, heun) = _setup(scheme)
    out = {}
    for name, impl in (("py", _fallback), ("c", compiled)):
        X = G.copy()
        alive = np.ones(len(X), dtype=np.uint8)
        ab = np.full(len(X), -1, dtype=np.int64)
        impl.advance(X, drift, noise, decay, 0.4, 1e-3, dW, heun, alive, ab, 0)
        out[name] = X
    np.testing.assert_allclose(out["c"], out["py"], rtol=0, atol=1e-12)


@pytest.mark.parametrize("impl", [_fallback, compiled] if compiled else [_fallback], ids=lambda m: m.BACKEND)
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_advance_marks_blown_up_rows(impl):
    bundle, G, dW, (drift, noise, decay, heun) = _setup(SCHEMES[0], R=3, steps=5)
    G[1, 0] = np.inf
    alive = np.ones(3, dtype=np.uint8)
    ab = np.full(3, -1, dtype=np.int64)
    n = impl.advance(G, drift, noise, decay, 0.4, 1e-3, dW, heun, alive, ab, 10)
    assert n == 1
    np.testing.assert_array_equal(alive, [1, 0, 1])
    assert ab[1] == 10 and ab[0] == -1
    assert np.all(G[1] == 0) and np.all(np.isfinite(G))


@needs_ext
@pytest.mark.parametrize("diffusion,exact", [(True, False), (False, True)])
def test_langevin_backends_agree(diffusion, exact):
    noise = NoiseSpec((Constant((0.5, 0.0)), Constant((0.0, 0.5)), FourierMode((1, 1), (0.02, 0.01j))), 0.3)
    path = sample_path(noise, 4, 1e-2, 40)
    force, mk, ma, mb = _field_arrays(noise, path, 40)
    out = {}
    for name, impl in (("py", _fallback), ("c", compiled)):
        ens = ParticleEnsemble.maxwellian(500, 2, 1)
        s1, s2 = np.zeros((41, 2)), np.zeros((41, 2))
        impl.langevin(ens.positions, ens.velocities, force, mk, ma, mb, 0.3, 1e-2, 77, 0, diffusion, exact, s1, s2)
        out[name] = (ens.positions, ens.velocities, s1, s2)
    for a, b in zip(out["c"], out["py"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
