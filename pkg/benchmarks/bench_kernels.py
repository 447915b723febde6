"""Time the compiled kernels against the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints wall-clock seconds per backend for an ensemble advance in each
scheme and for the Langevin particle loop, plus the speed-up.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sfpgalerkin import kernels
from sfpgalerkin.basis import TruncationSpec
from sfpgalerkin.noise import Constant, FourierMode, NoiseSpec, sample_path
from sfpgalerkin.operators import OperatorBundle
from sfpgalerkin.particles import ParticleEnsemble, _field_arrays
from sfpgalerkin.solver import SCHEMES, pack_operators


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_advance(impl, scheme, repeat, R=32, steps=400):
    trunc = TruncationSpec(1, 8, 8)
    noise = NoiseSpec((Constant((0.6,)), FourierMode((1,), (0.05,))), 0.4)
    bundle = OperatorBundle.assemble(trunc, noise)
    dt = 1e-3
    drift, nz, decay, heun = pack_operators(bundle, scheme, 0.4, dt)
    rs = np.random.default_rng(0)
    G0 = np.zeros((R, trunc.dim), dtype=np.complex128)
    G0[:, bundle.basis.ground] = 1.0
    dW = np.sqrt(dt) * rs.standard_normal((R, steps, len(bundle.noise_ops)))

    def run():
        G = G0.copy()
        impl.advance(G, drift, nz, decay, 0.4, dt, dW, heun, np.ones(R, dtype=np.uint8),
                     np.full(R, -1, dtype=np.int64), 0)

    return _best(run, repeat)


def bench_langevin(impl, repeat, P=50_000, steps=200):
    noise = NoiseSpec((Constant((0.5,)), FourierMode((1,), (0.05 + 0.02j,))), 0.5)
    dt = 1e-2
    path = sample_path(noise, 1, dt, steps)
    force, mk, ma, mb = _field_arrays(noise, path, steps)
    ens = ParticleEnsemble.maxwellian(P, 1, 0)

    def run():
        e = ens.copy()
        s1, s2 = np.zeros((steps + 1, 1)), np.zeros((steps + 1, 1))
        impl.langevin(e.positions, e.velocities, force, mk, ma, mb, 0.5, dt, 7, 0, True, False, s1, s2)

    return _best(run, repeat)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"backends: {', '.join(backends)} (active: {kernels.BACKEND})")
    cases = [(f"advance/{s} R=32", lambda m, s=s: bench_advance(m, s, args.repeat)) for s in SCHEMES]
    cases += [(f"advance/{s} R=1", lambda m, s=s: bench_advance(m, s, args.repeat, R=1, steps=4000))
              for s in SCHEMES]
    cases.append(("langevin", lambda m: bench_langevin(m, args.repeat)))
    print(f"{'case':<42}" + "".join(f"{name:>12}" for name in backends) + f"{'speed-up':>12}")
    for label, fn in cases:
        times = {name: fn(mod) for name, mod in backends.items()}
        line = f"{label:<42}" + "".join(f"{t:>11.4f}s" for t in times.values())
        if "cython" in times:
            line += f"{times['python'] / times['cython']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
