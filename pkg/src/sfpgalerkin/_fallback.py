"""Pure numpy implementations of the hot loops.

Same signatures and in-place semantics as the compiled ``_kernels`` module;
selected by :mod:`sfpgalerkin.kernels` when the extension is unavailable.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from . import rng

BACKEND = "python"


def _csr(indptr, indices, data, dim):
    return sp.csr_matrix((data, indices, indptr), shape=(dim, dim))


def advance(G, drift, noise, decay, lam, dt, dW, heun, alive, abort_step, step0):
    """Advance every live row of ``G`` through ``dW.shape[1]`` steps.

    ``drift`` is a CSR triple ``(indptr, indices, data)``; ``noise`` is
    ``(indptr[J, dim+1], indices, data)`` with absolute offsets.  Rows that
    turn non-finite are zeroed, marked dead and their step recorded in
    ``abort_step``.  Returns the number of rows aborted by this call.
    """
    R, dim = G.shape
    n_steps = dW.shape[1]
    J = noise[0].shape[0]
    M = _csr(*drift, dim)
    Bs = []
    for j in range(J):
        ip = noise[0][j]
        a, b = ip[0], ip[-1]
        Bs.append(sp.csr_matrix((noise[2][a:b], noise[1][a:b], ip - a), shape=(dim, dim)))
    live = np.nonzero(alive)[0]
    if live.size == 0:
        return 0
    X = np.ascontiguousarray(G[live].T)  # (dim, R_live)
    dWl = dW[live]
    aborted = 0

    def incr(Y, n):
        out = dt * (M @ Y)
        for j in range(J):
            out += (lam * dWl[:, n, j])[None, :] * (Bs[j] @ Y)
        return out

    for n in range(n_steps):
        k1 = incr(X, n)
        if heun:
            k2 = incr(X + k1, n)
            X = X + 0.5 * (k1 + k2)
        else:
            X = X + k1
        if decay is not None:
            X *= decay[:, None]
        finite = np.isfinite(X).all(axis=0)
        if not finite.all():
            bad = np.nonzero(~finite)[0]
            for c in bad:
                r = live[c]
                if alive[r]:
                    alive[r] = 0
                    abort_step[r] = step0 + n
                    aborted += 1
            X[:, bad] = 0.0
    G[live] = X.T
    return aborted


def langevin(X, V, force_const, mode_k, mode_amp, mode_dbeta, lam, dt, seed, stream0,
             diffusion, exact_decay, sum_v, sum_v2):
    """Euler-Maruyama for ``dX = V dt``, ``dV = -V dt + lam F(X) dW + sqrt(2) dB``.

    ``B`` is drawn per particle from the counter generator keyed by
    ``(seed, stream0 + particle, step * N + axis)``.  ``sum_v`` and
    ``sum_v2`` (shape ``(steps + 1, N)``) receive per-step sums of ``V`` and
    ``V**2`` over particles, initial state included.
    """
    P, N = V.shape
    n_steps = force_const.shape[0]
    decay = np.exp(-dt) if exact_decay else 1.0 - dt
    sdt = np.sqrt(2.0 * dt)
    streams = (np.uint64(stream0) + np.arange(P, dtype=np.uint64))[:, None]
    axes = np.arange(N, dtype=np.uint64)[None, :]
    kvec = np.asarray(mode_k, dtype=float)
    sum_v[0] += V.sum(axis=0)
    sum_v2[0] += (V * V).sum(axis=0)
    for n in range(n_steps):
        F = np.broadcast_to(force_const[n], (P, N)).copy()
        for f in range(kvec.shape[0]):
            phase = np.exp(2j * np.pi * (X @ kvec[f]))
            F += 2.0 * np.real(phase[:, None] * mode_amp[f][None, :]) * mode_dbeta[n, f]
        Vn = decay * V + lam * F
        if diffusion:
            counter = np.uint64(n * N) + axes
            Vn += sdt * rng.normals(seed, streams, counter)
        X += V * dt
        X -= np.floor(X)
        X[X >= 1.0] = 0.0
        V[...] = Vn
        sum_v[n + 1] += V.sum(axis=0)
        sum_v2[n + 1] += (V * V).sum(axis=0)
