# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  See ``_fallback.py`` for the reference semantics."""

import numpy as np

from libc.math cimport sqrt, log, cos, sin, exp, floor, isfinite, M_PI
from libc.stdint cimport uint64_t, int64_t, uint8_t
from libc.stdlib cimport malloc, free

BACKEND = "cython"

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef uint64_t STREAM_MULT = 0xD2B74407B1CE6E93ULL
cdef double TWO_M53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t _key(uint64_t seed, uint64_t stream) noexcept nogil:
    cdef uint64_t base = _mix(seed ^ GOLDEN)
    return _mix(base ^ (stream * STREAM_MULT + GOLDEN))


cdef inline double _uniform(uint64_t key, uint64_t c) noexcept nogil:
    cdef uint64_t bits = _mix(key + (c + 1) * GOLDEN)
    return (<double>(bits >> 11) + 0.5) * TWO_M53


cdef inline double _normal(uint64_t key, uint64_t c) noexcept nogil:
    cdef uint64_t pair = c >> 1
    cdef double u1 = _uniform(key, 2 * pair)
    cdef double u2 = _uniform(key, 2 * pair + 1)
    cdef double r = sqrt(-2.0 * log(u1))
    cdef double theta = 2.0 * M_PI * u2
    if c & 1:
        return r * sin(theta)
    return r * cos(theta)


def normals(uint64_t seed, uint64_t[::1] streams, uint64_t[::1] counters):
    """Elementwise draws for paired ``streams``/``counters`` (testing hook)."""
    cdef Py_ssize_t n = streams.shape[0], i
    out = np.empty(n)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = _normal(_key(seed, streams[i]), counters[i])
    return out


cdef inline void _incr(const double complex* x, double complex* out, Py_ssize_t dim,
                       const int64_t* ip, const int64_t* ix, const double complex* dd,
                       const int64_t* nip, const int64_t* nix, const double complex* nd,
                       Py_ssize_t J, const double* dw, double lam, double dt) noexcept nogil:
    cdef Py_ssize_t i, p, j
    cdef double complex acc, nacc
    cdef const int64_t* row
    for i in range(dim):
        acc = 0
        for p in range(ip[i], ip[i + 1]):
            acc = acc + dd[p] * x[ix[p]]
        acc = acc * dt
        for j in range(J):
            row = nip + j * (dim + 1)
            nacc = 0
            for p in range(row[i], row[i + 1]):
                nacc = nacc + nd[p] * x[nix[p]]
            acc = acc + (lam * dw[j]) * nacc
        out[i] = acc


def advance(double complex[:, ::1] G, drift, noise, decay, double lam, double dt,
            double[:, :, ::1] dW, bint heun, uint8_t[::1] alive, int64_t[::1] abort_step,
            int64_t step0):
    cdef int64_t[::1] ip = np.ascontiguousarray(drift[0], dtype=np.int64)
    cdef int64_t[::1] ix = np.ascontiguousarray(drift[1], dtype=np.int64)
    cdef double complex[::1] dd = np.ascontiguousarray(drift[2], dtype=np.complex128)
    cdef int64_t[:, ::1] nip = np.ascontiguousarray(noise[0], dtype=np.int64)
    cdef int64_t[::1] nix = np.ascontiguousarray(noise[1], dtype=np.int64)
    cdef double complex[::1] nd = np.ascontiguousarray(noise[2], dtype=np.complex128)
    cdef bint has_decay = decay is not None
    cdef double[::1] dec = np.ascontiguousarray(decay if has_decay else np.ones(G.shape[1]), dtype=np.float64)
    cdef Py_ssize_t R = G.shape[0], dim = G.shape[1], n_steps = dW.shape[1], J = nip.shape[0]
    cdef Py_ssize_t r, n, i
    cdef int aborted = 0
    cdef bint ok
    # empty memoryviews have no valid data pointer
    cdef int64_t dummy_i = 0
    cdef double complex dummy_c = 0
    cdef const int64_t* p_ix = &ix[0] if ix.shape[0] else &dummy_i
    cdef const double complex* p_dd = &dd[0] if dd.shape[0] else &dummy_c
    cdef const int64_t* p_nix = &nix[0] if nix.shape[0] else &dummy_i
    cdef const double complex* p_nd = &nd[0] if nd.shape[0] else &dummy_c
    cdef const int64_t* p_nip = &nip[0, 0] if J else &dummy_i
    cdef double zero_dw = 0.0
    cdef double complex* k1 = <double complex*> malloc(dim * sizeof(double complex))
    cdef double complex* k2 = <double complex*> malloc(dim * sizeof(double complex))
    cdef double complex* xt = <double complex*> malloc(dim * sizeof(double complex))
    if k1 == NULL or k2 == NULL or xt == NULL:
        free(k1); free(k2); free(xt)
        raise MemoryError()
    try:
        with nogil:
            for r in range(R):
                if not alive[r]:
                    continue
                for n in range(n_steps):
                    _incr(&G[r, 0], k1, dim, &ip[0], p_ix, p_dd, p_nip, p_nix, p_nd, J,
                          &dW[r, n, 0] if J else &zero_dw, lam, dt)
                    if heun:
                        for i in range(dim):
                            xt[i] = G[r, i] + k1[i]
                        _incr(xt, k2, dim, &ip[0], p_ix, p_dd, p_nip, p_nix, p_nd, J,
                              &dW[r, n, 0] if J else &zero_dw, lam, dt)
                        for i in range(dim):
                            G[r, i] = G[r, i] + 0.5 * (k1[i] + k2[i])
                    else:
                        for i in range(dim):
                            G[r, i] = G[r, i] + k1[i]
                    if has_decay:
                        for i in range(dim):
                            G[r, i] = G[r, i] * dec[i]
                    ok = True
                    for i in range(dim):
                        if not (isfinite(G[r, i].real) and isfinite(G[r, i].imag)):
                            ok = False
                            break
                    if not ok:
                        alive[r] = 0
                        abort_step[r] = step0 + n
                        aborted += 1
                        for i in range(dim):
                            G[r, i] = 0
                        break
    finally:
        free(k1); free(k2); free(xt)
    return aborted


def langevin(double[:, ::1] X, double[:, ::1] V, double[:, ::1] force_const,
             mode_k, mode_amp, mode_dbeta, double lam, double dt, uint64_t seed,
             uint64_t stream0, bint diffusion, bint exact_decay,
             double[:, ::1] sum_v, double[:, ::1] sum_v2):
    cdef Py_ssize_t P = V.shape[0], N = V.shape[1], n_steps = force_const.shape[0]
    cdef double[:, ::1] kv = np.ascontiguousarray(mode_k, dtype=np.float64).reshape(-1, N)
    cdef double complex[:, ::1] amp = np.ascontiguousarray(mode_amp, dtype=np.complex128).reshape(-1, N)
    cdef Py_ssize_t Jf = kv.shape[0]
    cdef double[:, ::1] mdb = np.ascontiguousarray(mode_dbeta, dtype=np.float64).reshape(n_steps, Jf)
    cdef double decay = exp(-dt) if exact_decay else 1.0 - dt
    cdef double sdt = sqrt(2.0 * dt)
    cdef Py_ssize_t p, n, a, f
    cdef uint64_t key
    cdef double phase, c, s, force, vold
    cdef double* vnew = <double*> malloc(N * sizeof(double))
    if vnew == NULL:
        raise MemoryError()
    try:
        with nogil:
            for p in range(P):
                key = _key(seed, stream0 + <uint64_t>p)
                for a in range(N):
                    sum_v[0, a] += V[p, a]
                    sum_v2[0, a] += V[p, a] * V[p, a]
                for n in range(n_steps):
                    for a in range(N):
                        vnew[a] = decay * V[p, a]
                        force = force_const[n, a]
                        for f in range(Jf):
                            phase = 0.0
                            for s_ix in range(N):
                                phase = phase + kv[f, s_ix] * X[p, s_ix]
                            phase = 2.0 * M_PI * phase
                            c = cos(phase)
                            s = sin(phase)
                            force = force + 2.0 * (amp[f, a].real * c - amp[f, a].imag * s) * mdb[n, f]
                        vnew[a] = vnew[a] + lam * force
                        if diffusion:
                            vnew[a] = vnew[a] + sdt * _normal(key, <uint64_t>(n * N + a))
                    for a in range(N):
                        X[p, a] = X[p, a] + V[p, a] * dt
                        X[p, a] = X[p, a] - floor(X[p, a])
                        if X[p, a] >= 1.0:
                            X[p, a] = 0.0
                        V[p, a] = vnew[a]
                        sum_v[n + 1, a] += V[p, a]
                        sum_v2[n + 1, a] += V[p, a] * V[p, a]
    finally:
        free(vnew)
    return None
