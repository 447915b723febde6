"""Self-contained invariant checks run by ``sfpg validate``.

Each check returns a :class:`CheckResult` with the measured defect and the
tolerance it is held to.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate

from .basis import TruncationSpec, get_basis, hermite_functions
from .diagnostics import DiagnosticParams, norm_table, random_states, sandwich_constants, COL
from .noise import Constant, FourierMode, NoiseSpec, NoiseValidationError, validate
from .operators import (assemble_noise_ops, assemble_strat_correction, assemble_transport,
                        fokker_planck_diagonal, grad_matrix, lower_matrix, raise_matrix)
from .particles import fstat_norm_sq, fstat_spectral, q_covariance, q_covariance_asymptotic


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "tol": self.tol, "passed": self.passed}


def dense_ladders(trunc: TruncationSpec):
    """Dense ``(raise, lower, grad)`` lists, one matrix per axis."""
    b = get_basis(trunc)
    R = [raise_matrix(b, a).toarray() for a in range(b.N)]
    Lw = [lower_matrix(b, a).toarray() for a in range(b.N)]
    G = [grad_matrix(b, a).toarray() for a in range(b.N)]
    return R, Lw, G


def operator_identities(trunc: TruncationSpec) -> list[CheckResult]:
    """Ladder algebra on states with Hermite headroom (``|l| <= m_v - 1``)."""
    b = get_basis(trunc)
    N = b.N
    R, Lw, G = dense_ladders(trunc)
    A = assemble_transport(trunc).toarray()
    Ld = np.diag(fokker_planck_diagonal(trunc))
    inner = b.l_abs <= trunc.m_v - 1
    cols = np.nonzero(inner)[0]
    out = []
    DsD = sum(R[a] @ Lw[a] for a in range(N))
    DDs = sum(Lw[a] @ R[a] for a in range(N))
    out.append(CheckResult("L = -D*D", float(np.abs(Ld + DsD).max()), 1e-12))
    out.append(CheckResult("L = N - DD* (interior)", float(np.abs((Ld - (N * np.eye(b.dim) - DDs))[:, cols]).max()), 1e-12))
    comm = max(float(np.abs((Lw[a] @ A - A @ Lw[a] - G[a])[:, cols]).max()) for a in range(N))
    out.append(CheckResult("[D, A] = grad_x (interior)", comm, 1e-12))
    out.append(CheckResult("A skew-Hermitian", float(np.abs(A + A.conj().T).max()), 1e-12))
    C = random_states(trunc, 64, seed=1)
    C[:, ~inner] = 0.0
    nD = sum(np.sum(np.abs(C @ Lw[a].T) ** 2, axis=1) for a in range(N))
    nDs = sum(np.sum(np.abs(C @ R[a].T) ** 2, axis=1) for a in range(N))
    n = np.sum(np.abs(C) ** 2, axis=1)
    out.append(CheckResult("|D*f|^2 = |Df|^2 + N|f|^2 (interior)", float(np.max(np.abs(nDs - nD - N * n) / n)), 1e-12))
    adj = max(float(np.abs((R[a].T - Lw[a])[np.ix_(cols, cols)]).max()) for a in range(N))
    out.append(CheckResult("<D* f, h> = <f, D h>", adj, 1e-12))
    return out


def ladder_quadrature(n_max: int = 6, points: int = 120) -> list[CheckResult]:
    """Gauss-Hermite check of ``<D* q_j, q_{j+1}> = sqrt(j+1)`` and orthonormality.

    ``D* = -d/dv + v/2`` is applied to the recurrence-built ``q_j`` through
    ``q_j' = (sqrt(j) q_{j-1} - sqrt(j+1) q_{j+1}) / 2``; the derivative
    identity is itself cross-checked by finite differences.
    """
    x, w = np.polynomial.hermite_e.hermegauss(points)  # weight exp(-x^2/2)
    q = hermite_functions(n_max + 2, x)
    weight = w * np.exp(0.5 * x * x)
    gram = (q * weight) @ q.T
    err = float(np.abs(gram - np.eye(n_max + 3)).max())
    for j in range(n_max + 1):
        dq = 0.5 * ((math.sqrt(j) * q[j - 1] if j else 0.0) - math.sqrt(j + 1) * q[j + 1])
        dstar = -dq + 0.5 * x * q[j]
        c = float(np.sum(weight * dstar * q[j + 1]))
        err = max(err, abs(c - math.sqrt(j + 1)))
        # D* q_j must have no component outside q_{j+1}
        err = max(err, float(np.abs((q * weight) @ dstar - math.sqrt(j + 1) * np.eye(n_max + 3)[j + 1]).max()))
    out = [CheckResult("ladder coefficients by quadrature", err, 1e-10)]
    h = 1e-5
    v = np.linspace(-4, 4, 17)
    fd_err = 0.0
    qp, qm, q0 = hermite_functions(n_max + 1, v + h), hermite_functions(n_max + 1, v - h), hermite_functions(n_max + 1, v)
    for j in range(n_max + 1):
        fd = (qp[j] - qm[j]) / (2 * h)
        an = 0.5 * ((math.sqrt(j) * q0[j - 1] if j else 0.0) - math.sqrt(j + 1) * q0[j + 1])
        fd_err = max(fd_err, float(np.abs(fd - an).max()))
    out.append(CheckResult("Hermite derivative recurrence vs finite differences", fd_err, 1e-8))
    return out


def strat_correction_product(trunc: TruncationSpec, noise: NoiseSpec) -> CheckResult:
    ops = assemble_noise_ops(trunc, noise)
    S = assemble_strat_correction(trunc, noise, ops).toarray()
    ref = 0.5 * sum(B.toarray() @ B.toarray() for B in ops)
    return CheckResult("S = 1/2 sum B_j B_j", float(np.abs(S - ref).max()), 1e-12)


def noise_validation() -> list[CheckResult]:
    out = []
    r = validate(NoiseSpec((Constant((1.0,)),)))
    out.append(CheckResult("unit constant field accepted with sum 1", abs(r.total - 1.0), 1e-15))
    try:
        validate(NoiseSpec((Constant((1.1,)),)))
        out.append(CheckResult("field 1.1 rejected", math.inf, 0.0))
    except NoiseValidationError as exc:
        out.append(CheckResult("field 1.1 rejected with sum 1.21", abs(exc.total - 1.21), 1e-12))
    a = 0.05
    r = validate(NoiseSpec((FourierMode((1,), (a,)),)))
    out.append(CheckResult("Fourier field sum 4|a|^2(1+4pi^2)", abs(r.total - 4 * a * a * (1 + 4 * math.pi**2)), 1e-14))
    return out


def covariance_checks() -> list[CheckResult]:
    out = []
    err = 0.0
    for t in (0.1, 1.0, 10.0):
        Q = q_covariance(t)
        kw = dict(epsabs=1e-14, epsrel=1e-13, limit=200)
        ref11 = 2 * scipy.integrate.quad(lambda s: (-math.expm1(-s)) ** 2, 0, t, **kw)[0]
        ref12 = 2 * scipy.integrate.quad(lambda s: math.exp(-s) * -math.expm1(-s), 0, t, **kw)[0]
        ref22 = 2 * scipy.integrate.quad(lambda s: math.exp(-2 * s), 0, t, **kw)[0]
        err = max(err, abs(Q[0, 0] - ref11), abs(Q[0, 1] - ref12), abs(Q[1, 0] - ref12), abs(Q[1, 1] - ref22))
    out.append(CheckResult("covariance vs quadrature (t = 0.1, 1, 10)", err, 1e-10))
    out.append(CheckResult("covariance asymptotics at t = 20",
                           float(np.abs(q_covariance(20.0) - q_covariance_asymptotic(20.0)).max()), 1e-7))
    out.append(CheckResult("covariance (2,2) at t = ln 2 is 3/4", abs(q_covariance(math.log(2))[1, 1] - 0.75), 1e-15))
    return out


def stationary_norm_quadrature(lam: float = 0.5, V: float = 1.3) -> CheckResult:
    """``|g_stat|^2`` against ``int M(v - a)^2 / M(v) dv``, ``a = lam V / sqrt(2)``."""
    a = lam * V / math.sqrt(2.0)

    def integrand(v):
        # M(v-a)^2 / M(v) = (2 pi)^{-1/2} exp(-(v-a)^2 + v^2/2)
        return math.exp(-((v - a) ** 2) + 0.5 * v * v) / math.sqrt(2 * math.pi)

    ref = scipy.integrate.quad(integrand, -60, 60, epsabs=1e-14, epsrel=1e-13, points=[2 * a])[0]
    trunc = TruncationSpec(1, 0, 40)
    state = fstat_spectral(lam, [V], trunc, warn=False)
    spectral = float(np.sum(np.abs(state.coeffs) ** 2))
    err = max(abs(spectral - ref), abs(fstat_norm_sq(lam, V) - ref)) / ref
    return CheckResult("stationary norm vs quadrature (prefactor 1)", err, 1e-10)


def sandwich_check(trunc: TruncationSpec, params: DiagnosticParams | None = None, count: int = 1000) -> CheckResult:
    params = params or DiagnosticParams()
    C1, C2 = sandwich_constants(params, trunc.N)
    T = norm_table(random_states(trunc, count, seed=2), trunc, 0.0, params)
    ratio = T[:, COL["F_func"]] / T[:, COL["hypo_norm"]]
    viol = max(0.0, C1 - ratio.min(), ratio.max() - C2)
    return CheckResult("C1 <= F / hypo_norm <= C2", float(viol), 1e-12)


def run_all(trunc: TruncationSpec, noise: NoiseSpec, params: DiagnosticParams | None = None) -> list[CheckResult]:
    small = TruncationSpec(trunc.N, min(trunc.m_x, 2), min(max(trunc.m_v, 2), 6))
    out = operator_identities(small)
    out.extend(ladder_quadrature())
    out.append(strat_correction_product(TruncationSpec(trunc.N, min(trunc.m_x, 2), min(max(trunc.m_v, 1), 4)),
                                        noise))
    out.extend(noise_validation())
    out.extend(covariance_checks())
    out.append(stationary_norm_quadrature())
    out.append(sandwich_check(small, params))
    return out
