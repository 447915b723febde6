"""Langevin particle oracle and closed-form stationary objects.

Particles follow::

    dX = V dt,    dV = -V dt + lam sum_j F_j(X) d beta_j + sqrt(2) dB

with ``beta_j`` the shared Brownian path also driving the spectral solver
and ``B`` an independent Brownian motion per particle.  Averaging over
``B`` gives the mean velocity ``du = -u dt + lam d beta`` for constant
canonical noise, the same equation the spectral coefficient
``d_{0,e_a} / d_{0,0}`` obeys.

The stationary spectral state is the shifted Maxwellian
``M(v - s) / sqrt(M(v))`` with ``s = lam V / sqrt(2)``, whose Hermite
coefficients are ``d_l = prod_a s_a^{l_a} / sqrt(l_a!)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng
from .basis import SpectralState, TruncationSpec, get_basis
from .noise import BrownianPath, Constant, FourierMode, NoiseSpec

# stream offsets for initial draws, far from the per-particle noise streams
_INIT_POS = 1 << 56
_INIT_VEL = 2 << 56
_OU_STREAM = 3 << 56

TAIL_TOL = 1e-8


@dataclass(eq=False)
class ParticleEnsemble:
    """Positions in ``[0, 1)^N`` and velocities in ``R^N``, shape ``(P, N)``."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        x = np.array(self.positions, dtype=np.float64, order="C", ndmin=2)
        v = np.array(self.velocities, dtype=np.float64, order="C", ndmin=2)
        if x.shape != v.shape:
            raise ValueError(f"positions {x.shape} and velocities {v.shape} differ in shape")
        x = x - np.floor(x)
        x[x >= 1.0] = 0.0
        self.positions, self.velocities = x, v

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def N(self) -> int:
        return self.positions.shape[1]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.velocities.copy())

    @classmethod
    def maxwellian(cls, count: int, N: int, seed: int) -> "ParticleEnsemble":
        """Uniform positions, standard normal velocities, keyed by ``seed``."""
        p = np.arange(count, dtype=np.uint64)[:, None]
        a = np.arange(N, dtype=np.uint64)[None, :]
        key_x = rng.stream_key(seed, np.uint64(_INIT_POS) + a)
        x = rng.uniforms(np.broadcast_to(key_x, (count, N)), np.broadcast_to(p, (count, N)))
        v = rng.normals(seed, np.uint64(_INIT_VEL) + a, p)
        return cls(x, v)

    def to_csv(self, path) -> None:
        N = self.N
        header = ",".join([f"x{a}" for a in range(N)] + [f"v{a}" for a in range(N)])
        np.savetxt(path, np.hstack([self.positions, self.velocities]), delimiter=",",
                   header=header, comments="", fmt="%.17g")


@dataclass(eq=False)
class LangevinRun:
    """Result of :func:`simulate_langevin`.

    ``mean_v`` and ``second_v`` hold the particle averages of ``V`` and
    ``V**2`` per axis at every step (``steps + 1`` rows, initial included).
    """

    final: ParticleEnsemble
    times: np.ndarray
    mean_v: np.ndarray
    second_v: np.ndarray


def _field_arrays(noise: NoiseSpec, path: BrownianPath, steps: int):
    N = noise.N
    inc = path.increments[:, :steps]
    force = np.zeros((steps, N))
    ks, amps, cols = [], [], []
    for j, f in enumerate(noise.fields):
        if isinstance(f, Constant):
            force += inc[j][:, None] * np.array(f.vector)[None, :]
        elif isinstance(f, FourierMode):
            ks.append(f.mode)
            amps.append(f.amplitude)
            cols.append(inc[j])
        else:
            raise TypeError(f"unsupported field shape: {type(f).__name__}")
    mode_k = np.array(ks, dtype=np.float64).reshape(len(ks), N)
    mode_amp = np.array(amps, dtype=np.complex128).reshape(len(ks), N)
    mode_dbeta = np.ascontiguousarray(np.array(cols, dtype=np.float64).reshape(len(ks), steps).T)
    return np.ascontiguousarray(force), mode_k, mode_amp, mode_dbeta


def simulate_langevin(ensemble: ParticleEnsemble, path: BrownianPath, lam: float, dt: float,
                      steps: int, noise: NoiseSpec | None = None, seed: int = 0,
                      diffusion: bool = True, exact_decay: bool = False,
                      backend=None) -> LangevinRun:
    """Euler-Maruyama for the particle system on a shared path.

    Parameters
    ----------
    ensemble : ParticleEnsemble
        Initial particles; not modified.
    path : BrownianPath
        Shared increments ``d beta_j``; must have step ``dt``.
    noise : NoiseSpec, optional
        Force fields; defaults to the canonical constant fields ``e_a``.
    seed : int
        Key of the per-particle ``B`` streams (stream ``p`` for particle ``p``).
    diffusion : bool
        Disable to drop the ``sqrt(2) dB`` term.
    exact_decay : bool
        Use ``exp(-dt)`` instead of ``1 - dt`` for the friction factor.
    """
    if ensemble.count == 0:
        raise ValueError("empty particle ensemble")
    noise = noise or NoiseSpec.canonical(ensemble.N)
    if noise.N != ensemble.N:
        raise ValueError(f"noise is {noise.N}-dimensional, particles are {ensemble.N}-dimensional")
    if path.n_fields != noise.n_fields:
        raise ValueError(f"path has {path.n_fields} fields, noise has {noise.n_fields}")
    if not math.isclose(path.dt, dt, rel_tol=1e-12):
        raise ValueError(f"path dt {path.dt} differs from dt {dt}")
    if steps > path.length:
        raise ValueError(f"path of length {path.length} too short for {steps} steps")
    force, mode_k, mode_amp, mode_dbeta = _field_arrays(noise, path, steps)
    ens = ensemble.copy()
    sum_v = np.zeros((steps + 1, ens.N))
    sum_v2 = np.zeros((steps + 1, ens.N))
    impl = backend or kernels
    impl.langevin(ens.positions, ens.velocities, force, mode_k, mode_amp, mode_dbeta,
                  float(lam), float(dt), int(seed), 0, bool(diffusion), bool(exact_decay), sum_v, sum_v2)
    if not np.all(np.isfinite(ens.velocities)):
        raise FloatingPointError("non-finite particle velocities")
    P = ens.count
    return LangevinRun(ens, np.arange(steps + 1) * dt, sum_v / P, sum_v2 / P)


# ---------------------------------------------------------------- OU process


@dataclass(frozen=True)
class OUState:
    """Velocity of the stationary Ornstein-Uhlenbeck process ``dV = -V dt + sqrt(2) dW``."""

    V: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "V", tuple(float(x) for x in np.atleast_1d(self.V)))

    @property
    def N(self) -> int:
        return len(self.V)

    def array(self) -> np.ndarray:
        return np.array(self.V)


def ou_stationary_sample(seed: int, N: int = 1) -> OUState:
    """Standard normal draw (the stationary law), keyed by ``seed``."""
    return OUState(rng.normals(seed, _OU_STREAM, np.arange(N)))


def ou_evolve(state: OUState, path: BrownianPath, dt: float, steps: int, method: str = "wong-zakai",
              start: int = 0) -> OUState:
    """Advance ``V`` with ``dW`` = field ``a`` of ``path`` for axis ``a``.

    ``method`` is ``"em"`` (``V <- (1 - dt) V + sqrt(2) dW``) or
    ``"wong-zakai"`` (exact flow for the piecewise-linear path,
    ``V <- e^{-dt} V + sqrt(2) dW (1 - e^{-dt}) / dt``), which is the
    update a Stratonovich scheme for the spectral equation tracks.
    """
    if path.n_fields < state.N:
        raise ValueError(f"path has {path.n_fields} fields, need {state.N}")
    if not math.isclose(path.dt, dt, rel_tol=1e-12):
        raise ValueError(f"path dt {path.dt} differs from dt {dt}")
    if start + steps > path.length:
        raise ValueError("path too short")
    V = state.array()
    dW = path.increments[: state.N, start:start + steps]
    if method == "em":
        for n in range(steps):
            V = (1.0 - dt) * V + math.sqrt(2.0) * dW[:, n]
    elif method == "wong-zakai":
        e = math.exp(-dt)
        w = -math.expm1(-dt) / dt
        for n in range(steps):
            V = e * V + math.sqrt(2.0) * w * dW[:, n]
    else:
        raise ValueError(f"unknown method {method!r}")
    return OUState(V)


def q_covariance(t: float) -> np.ndarray:
    """Covariance of ``(int_0^t sqrt(2)(1 - e^{-s}) dW, int_0^t sqrt(2) e^{-s} dW)``.

    Entries ``2 int (1-e^{-s})^2``, ``2 int e^{-s}(1-e^{-s})`` and
    ``2 int e^{-2s}`` over ``[0, t]``.
    """
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    a = -math.expm1(-t)        # 1 - e^{-t}
    b = -math.expm1(-2.0 * t)  # 1 - e^{-2t}
    if t < 1e-2:
        # 2t - 4a + b loses all digits to cancellation; use its series
        q11 = math.fsum((-1) ** (n + 1) * (2.0**n - 4.0) * t**n / math.factorial(n) for n in range(3, 14))
    else:
        q11 = 2.0 * t - 4.0 * a + b
    q12 = 2.0 * a - b
    return np.array([[q11, q12], [q12, b]])


def q_covariance_asymptotic(t: float) -> np.ndarray:
    """Large-``t`` form ``[[2t - 3, 1], [1, 1]]``."""
    return np.array([[2.0 * t - 3.0, 1.0], [1.0, 1.0]])


# ---------------------------------------------------------------- stationary state


def fstat_shift(lam: float, V) -> np.ndarray:
    return lam / math.sqrt(2.0) * np.atleast_1d(np.asarray(V, dtype=float))


def fstat_norm_sq(lam: float, V) -> float:
    """Exact ``|g_stat|^2 = exp(lam^2 |V|^2 / 2)`` of the untruncated state."""
    s = fstat_shift(lam, V)
    return math.exp(float(s @ s))


def stationary_norm_mean(lam: float, N: int = 1) -> float:
    """``E exp(lam^2 |V|^2 / 2)`` for standard normal ``V``: ``(1 - lam^2)^{-N/2}``."""
    if lam >= 1:
        return math.inf
    return (1.0 - lam * lam) ** (-N / 2.0)


def fstat_spectral(lam: float, V, trunc: TruncationSpec, warn: bool = True) -> SpectralState:
    """Coefficients of ``g_stat = M^{-1/2} M(. - lam V / sqrt(2))``.

    Only ``k = 0`` modes are populated.  Warns when the Hermite mass dropped
    by the truncation exceeds ``1e-8``.
    """
    if lam >= 1:
        raise ValueError(f"lambda = {lam} >= 1: the stationary state is not square integrable")
    if lam < 0:
        raise ValueError(f"lambda must be non-negative, got {lam}")
    V = V.array() if isinstance(V, OUState) else np.atleast_1d(np.asarray(V, dtype=float))
    if V.shape != (trunc.N,):
        raise ValueError(f"V has shape {V.shape}, expected ({trunc.N},)")
    s = fstat_shift(lam, V)
    b = get_basis(trunc)
    c = np.zeros(b.dim, dtype=np.complex128)
    k0 = b.k_inf == 0
    # prod_a s_a^{l_a} / sqrt(l_a!), via logs-free recurrence per axis
    per_axis = np.ones((trunc.N, trunc.m_v + 1))
    for a in range(trunc.N):
        for n in range(1, trunc.m_v + 1):
            per_axis[a, n] = per_axis[a, n - 1] * s[a] / math.sqrt(n)
    vals = np.prod(per_axis[np.arange(trunc.N)[None, :], b.l], axis=1)
    c[k0] = vals[k0]
    state = SpectralState(trunc, c)
    if warn:
        tail = fstat_tail(lam, V, trunc)
        if tail > TAIL_TOL:
            warnings.warn(f"stationary state truncated with tail mass {tail:.3g} > {TAIL_TOL}", stacklevel=2)
    return state


def fstat_tail(lam: float, V, trunc: TruncationSpec) -> float:
    """Squared norm dropped by truncating ``g_stat`` at ``|l| <= m_v``."""
    V = V.array() if isinstance(V, OUState) else np.atleast_1d(np.asarray(V, dtype=float))
    s2 = float(np.sum(fstat_shift(lam, V) ** 2))
    # |l| is Poisson-like: sum_{|l| = n} prod s_a^{2 l_a} / l_a! = s2^n / n!
    kept = math.fsum(s2**n / math.factorial(n) for n in range(trunc.m_v + 1))
    return max(math.exp(s2) - kept, 0.0)


# ---------------------------------------------------------------- moments


def pde_moments(C: np.ndarray, trunc: TruncationSpec):
    """``(mass, mean velocity, second moment)`` per row from the ``k = 0`` coefficients.

    Uses ``v_a q_0 = q_{e_a}`` and ``v_a^2 q_0 = q_0 + sqrt(2) q_{2 e_a}``.
    """
    b = get_basis(trunc)
    C2 = np.atleast_2d(C)
    N = trunc.N
    zero = (0,) * N
    mass = C2[:, b.ground].real
    mean = np.zeros((C2.shape[0], N))
    second = np.zeros((C2.shape[0], N))
    for a in range(N):
        e1 = tuple(1 if i == a else 0 for i in range(N))
        e2 = tuple(2 if i == a else 0 for i in range(N))
        i1 = b.lookup.get((zero, e1))
        i2 = b.lookup.get((zero, e2))
        m1 = C2[:, i1].real if i1 is not None else 0.0
        m2 = C2[:, i2].real if i2 is not None else 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            mean[:, a] = m1 / mass
            second[:, a] = (math.sqrt(2.0) * m2 + mass) / mass
    if np.ndim(C) == 1:
        return float(mass[0]), mean[0], second[0]
    return mass, mean, second


@dataclass(frozen=True)
class MomentReport:
    mass_pde: float
    mean_pde: np.ndarray
    mean_particles: np.ndarray
    second_pde: np.ndarray
    second_particles: np.ndarray
    mean_stderr: np.ndarray
    second_stderr: np.ndarray
    count: int
    delta_mass: float = field(init=False)
    delta_mean: np.ndarray = field(init=False)
    delta_second: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "delta_mass", abs(self.mass_pde - 1.0))
        object.__setattr__(self, "delta_mean", np.abs(self.mean_pde - self.mean_particles))
        object.__setattr__(self, "delta_second", np.abs(self.second_pde - self.second_particles))

    def as_dict(self) -> dict:
        return {
            "count": self.count,
            "mass_pde": self.mass_pde,
            "delta_mass": self.delta_mass,
            "mean_pde": self.mean_pde.tolist(),
            "mean_particles": self.mean_particles.tolist(),
            "delta_mean": self.delta_mean.tolist(),
            "mean_stderr": self.mean_stderr.tolist(),
            "second_pde": self.second_pde.tolist(),
            "second_particles": self.second_particles.tolist(),
            "delta_second": self.delta_second.tolist(),
            "second_stderr": self.second_stderr.tolist(),
        }


def compare_moments(pde_state: SpectralState, particles: ParticleEnsemble) -> MomentReport:
    """Velocity moments of a spectral state against a particle cloud.

    Particles carry unit total mass; the spectral mass is ``d_{0,0}``.
    """
    P = particles.count
    if P == 0:
        raise ValueError("cannot compare against an empty particle ensemble")
    if particles.N != pde_state.trunc.N:
        raise ValueError("dimension mismatch between state and particles")
    mass, mean, second = pde_moments(pde_state.coeffs, pde_state.trunc)
    if mass == 0:
        raise ValueError("spectral state has zero mass")
    v = particles.velocities
    se1 = v.std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.full(particles.N, np.inf)
    se2 = (v * v).std(axis=0, ddof=1) / math.sqrt(P) if P > 1 else np.full(particles.N, np.inf)
    return MomentReport(mass, mean, v.mean(axis=0), second, (v * v).mean(axis=0), se1, se2, P)
