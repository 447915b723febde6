"""Time integration of the truncated Galerkin system.

Three schemes share the operators of an :class:`OperatorBundle`:

``euler-maruyama-ito``
    ``g += dt (-A + L + lam^2 S) g + lam sum_j dW_j B_j g``.
``heun-stratonovich``
    Predictor-corrector on ``(-A + L) g dt + lam sum_j B_j g o dW_j``.
``exponential-euler-ito``
    Euler-Maruyama for ``-A + lam^2 S`` and the noise, followed by the exact
    diagonal decay ``exp(-|l| dt)``.

Single paths go through :func:`integrate`; batches of independent rows
through :func:`integrate_batch`, which hands whole blocks of steps to the
compiled kernel between captures.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import kernels, rng
from .basis import SpectralState
from .diagnostics import ALL_COLUMNS, COL, DiagnosticParams, EnergyReport, norm_table
from .noise import BrownianPath
from .operators import OperatorBundle

EM_ITO = "euler-maruyama-ito"
HEUN_STRAT = "heun-stratonovich"
EXP_EM = "exponential-euler-ito"
SCHEMES = (EM_ITO, HEUN_STRAT, EXP_EM)


class InstabilityError(RuntimeError):
    """Non-finite coefficients appeared; ``partial`` holds the trajectory so far."""

    def __init__(self, step: int, partial: "Trajectory | None" = None):
        self.step = step
        self.partial = partial
        super().__init__(f"non-finite coefficients at step {step}")


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping parameters.

    ``stability_constant`` bounds ``dt * (m_v + 2 pi m_x sqrt(m_v))`` for the
    explicit schemes; the exponential scheme drops the ``m_v`` term because
    the diagonal is integrated exactly.  ``lam >= 1`` is refused unless
    ``override_lambda`` is set.
    """

    scheme: str = EXP_EM
    dt: float = 1e-3
    t_end: float = 1.0
    lam: float = 0.0
    diag_every: int = 1
    override_lambda: bool = False
    stability_constant: float = 2.0
    snapshot_times: tuple[float, ...] = ()

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {SCHEMES}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.t_end < 0:
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")
        if self.lam >= 1 and not self.override_lambda:
            raise ValueError(
                f"lambda = {self.lam} >= 1: solutions are only well posed for lambda < 1 "
                "(set override_lambda to run anyway)"
            )
        if int(self.diag_every) < 1:
            raise ValueError(f"diag_every must be >= 1, got {self.diag_every}")
        object.__setattr__(self, "snapshot_times", tuple(float(t) for t in self.snapshot_times))

    @property
    def n_steps(self) -> int:
        n = self.t_end / self.dt
        steps = int(round(n))
        if abs(n - steps) > 1e-6 * max(1.0, n):
            raise ValueError(f"t_end = {self.t_end} is not a multiple of dt = {self.dt}")
        return steps

    def stiffness(self, trunc) -> float:
        transport = 2.0 * math.pi * trunc.m_x * math.sqrt(trunc.m_v)
        if self.scheme == EXP_EM:
            return self.dt * transport
        return self.dt * (trunc.m_v + transport)

    def check_stability(self, trunc):
        s = self.stiffness(trunc)
        if s > self.stability_constant:
            raise ValueError(
                f"dt = {self.dt} too large for {trunc}: stiffness {s:.3g} exceeds "
                f"the stability constant {self.stability_constant}"
            )


# ---------------------------------------------------------------- single steps


def _noise_term(G, bundle, lam, dW):
    out = np.zeros_like(G)
    for j, B in enumerate(bundle.noise_ops):
        out += (lam * dW[j]) * (B @ G)
    return out


def _step_dW(path: BrownianPath, step_index: int, config: SolverConfig):
    if step_index >= path.length:
        raise IndexError(f"step {step_index} beyond path of length {path.length}")
    return path.increments[:, step_index]


def _finish(state: SpectralState, G: np.ndarray, step_index: int) -> SpectralState:
    if not np.all(np.isfinite(G)):
        raise InstabilityError(step_index)
    return state.with_coeffs(G)


def step_em_ito(state: SpectralState, bundle: OperatorBundle, path: BrownianPath,
                step_index: int, config: SolverConfig) -> SpectralState:
    """One Euler-Maruyama step of the Ito form."""
    dW = _step_dW(path, step_index, config)
    G = state.coeffs
    M = bundle.ito_drift(config.lam)
    return _finish(state, G + config.dt * (M @ G) + _noise_term(G, bundle, config.lam, dW), step_index)


def step_heun_strat(state: SpectralState, bundle: OperatorBundle, path: BrownianPath,
                    step_index: int, config: SolverConfig) -> SpectralState:
    """One Heun predictor-corrector step of the Stratonovich form."""
    dW = _step_dW(path, step_index, config)
    G = state.coeffs
    M = bundle.deterministic_generator()

    def incr(X):
        return config.dt * (M @ X) + _noise_term(X, bundle, config.lam, dW)

    k1 = incr(G)
    k2 = incr(G + k1)
    return _finish(state, G + 0.5 * (k1 + k2), step_index)


def step_exponential_em(state: SpectralState, bundle: OperatorBundle, path: BrownianPath,
                        step_index: int, config: SolverConfig) -> SpectralState:
    """Euler-Maruyama for everything but ``L``, then exact decay ``exp(-|l| dt)``."""
    dW = _step_dW(path, step_index, config)
    G = state.coeffs
    M = (-bundle.A + config.lam**2 * bundle.strat_corr).tocsr()
    X = G + config.dt * (M @ G) + _noise_term(G, bundle, config.lam, dW)
    return _finish(state, np.exp(bundle.L_diag * config.dt) * X, step_index)


STEPPERS = {EM_ITO: step_em_ito, HEUN_STRAT: step_heun_strat, EXP_EM: step_exponential_em}


# ---------------------------------------------------------------- kernel packing


def _csr_triple(M) -> tuple:
    M = sp.csr_matrix(M, dtype=complex)
    M.eliminate_zeros()
    M.sort_indices()
    return (M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data.astype(np.complex128))


def pack_operators(bundle: OperatorBundle, scheme: str, lam: float, dt: float):
    """``(drift, noise, decay, heun)`` in the layout the kernels expect."""
    if scheme == EM_ITO:
        drift, decay, heun = bundle.ito_drift(lam), None, False
    elif scheme == HEUN_STRAT:
        drift, decay, heun = bundle.deterministic_generator(), None, True
    elif scheme == EXP_EM:
        drift = (-bundle.A + lam**2 * bundle.strat_corr).tocsr()
        decay, heun = np.exp(bundle.L_diag * dt), False
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    ips, ixs, ds = [], [], []
    offset = 0
    for B in bundle.noise_ops:
        ip, ix, d = _csr_triple(B)
        ips.append(ip + offset)
        ixs.append(ix)
        ds.append(d)
        offset += d.size
    dim = bundle.dim
    noise = (
        np.stack(ips) if ips else np.zeros((0, dim + 1), dtype=np.int64),
        np.concatenate(ixs) if ixs else np.zeros(0, dtype=np.int64),
        np.concatenate(ds) if ds else np.zeros(0, dtype=np.complex128),
    )
    return _csr_triple(drift), noise, decay, heun


# ---------------------------------------------------------------- trajectories


@dataclass(eq=False)
class Trajectory:
    """Captured diagnostics of one or more realizations.

    ``table`` has shape ``(R, n_captures, len(ALL_COLUMNS))``; rows of
    realizations that aborted are NaN from the abort onwards.
    """

    times: np.ndarray
    table: np.ndarray
    N: int
    lam: float
    snapshots: dict = field(default_factory=dict)
    alive: np.ndarray | None = None
    abort_step: np.ndarray | None = None
    final: np.ndarray | None = None

    columns = ALL_COLUMNS

    @property
    def size(self) -> int:
        return self.table.shape[0]

    def column(self, name: str) -> np.ndarray:
        """``(R, n_captures)`` values of one column."""
        return self.table[:, :, COL[name]]

    def _live(self) -> np.ndarray:
        if self.alive is None:
            return self.table
        return self.table[np.asarray(self.alive, dtype=bool)]

    def mean(self, name: str) -> np.ndarray:
        return self._live()[:, :, COL[name]].mean(axis=0)

    def stderr(self, name: str) -> np.ndarray:
        x = self._live()[:, :, COL[name]]
        if x.shape[0] < 2:
            return np.zeros(x.shape[1])
        return x.std(axis=0, ddof=1) / math.sqrt(x.shape[0])

    @property
    def reports(self) -> list[EnergyReport]:
        """Reports of realization 0 (the only one for single-path runs)."""
        return [EnergyReport.from_row(t, row) for t, row in zip(self.times, self.table[0])]

    def mean_reports(self) -> list[EnergyReport]:
        m = self._live().mean(axis=0)
        return [EnergyReport.from_row(t, row) for t, row in zip(self.times, m)]

    def final_state(self, trunc, r: int = 0) -> SpectralState:
        return SpectralState(trunc, self.final[r])


def capture_steps(n_steps: int, diag_every: int) -> np.ndarray:
    """Step indices at which diagnostics are taken (always includes 0 and the last)."""
    caps = list(range(0, n_steps + 1, diag_every))
    if caps[-1] != n_steps:
        caps.append(n_steps)
    return np.array(caps, dtype=np.int64)


IncrementSource = Callable[[int, int], np.ndarray]


def path_source(paths: Sequence[BrownianPath], dt: float | None = None) -> IncrementSource:
    """Increment source backed by pre-sampled paths, one per row."""
    for p in paths:
        if dt is not None and not math.isclose(p.dt, dt, rel_tol=1e-12):
            raise ValueError(f"path dt {p.dt} does not match solver dt {dt}")

    def src(start, stop):
        for p in paths:
            if stop > p.length:
                raise ValueError(f"path of length {p.length} too short for step {stop}")
        return np.stack([p.increments[:, start:stop].T for p in paths])

    return src


def seeded_source(seeds: Sequence[int], n_fields: int, dt: float) -> IncrementSource:
    """Increment source drawing row ``r`` from :func:`sample_path` with ``seeds[r]``."""
    keys = np.stack([rng.stream_key(int(s), np.arange(n_fields)) for s in seeds])  # (R, J)
    sdt = math.sqrt(dt)
    buf = {"start": 0, "data": np.zeros((len(keys), 0, n_fields))}

    def src(start, stop):
        b0, data = buf["start"], buf["data"]
        if start < b0 or stop > b0 + data.shape[1]:
            # refill with a chunk of at least ~1M draws
            hi = max(stop, start + max(1, 1_000_000 // max(keys.size, 1)))
            n = np.arange(start, hi, dtype=np.uint64)
            data = sdt * rng.keyed_normals(keys[:, None, :], n[None, :, None])
            buf["start"], buf["data"] = start, data
            b0 = start
        return data[:, start - b0:stop - b0]

    return src


def integrate_batch(G0, bundle: OperatorBundle, config: SolverConfig, source: IncrementSource,
                    params: DiagnosticParams | None = None,
                    on_capture: Callable[[int, float, np.ndarray, np.ndarray], None] | None = None,
                    capture_at: np.ndarray | None = None, check_stability: bool = True,
                    backend=None) -> Trajectory:
    """Advance independent rows ``G0`` (shape ``(R, dim)``) over ``[0, t_end]``.

    Parameters
    ----------
    source : callable
        ``source(start, stop)`` returns increments of shape ``(R, stop-start, J)``.
    on_capture : callable, optional
        Called as ``on_capture(step, t, G, alive)`` at every capture with the
        current coefficients (read-only use).
    capture_at : array of step indices, optional
        Overrides the ``diag_every`` grid.
    backend : module, optional
        Kernel implementation (defaults to :mod:`sfpgalerkin.kernels`).
    """
    trunc = bundle.trunc
    if check_stability:
        config.check_stability(trunc)
    G = np.array(G0, dtype=np.complex128, order="C", copy=True)
    if G.ndim == 1:
        G = G[None, :]
    R = G.shape[0]
    n_steps = config.n_steps
    caps = capture_steps(n_steps, config.diag_every) if capture_at is None else np.asarray(capture_at, dtype=np.int64)
    snap_steps = {int(round(t / config.dt)): t for t in config.snapshot_times if 0 <= t <= config.t_end + 1e-12}
    caps = np.union1d(caps, np.array(sorted(snap_steps), dtype=np.int64))
    times = caps * config.dt
    drift, noise, decay, heun = pack_operators(bundle, config.scheme, config.lam, config.dt)
    impl = backend or kernels
    alive = np.ones(R, dtype=np.uint8)
    abort_step = np.full(R, -1, dtype=np.int64)
    table = np.full((R, caps.size, len(ALL_COLUMNS)), np.nan)
    snapshots = {}
    J = len(bundle.noise_ops)

    def capture(ci, step):
        t = step * config.dt
        live = alive.astype(bool)
        table[live, ci] = norm_table(G[live], trunc, t, params)
        if step in snap_steps:
            snapshots[snap_steps[step]] = G.copy()
        if on_capture is not None:
            on_capture(int(step), float(t), G, live)

    if caps[0] == 0:
        capture(0, 0)
    done = 0
    for ci, step in enumerate(caps):
        if step == 0:
            continue
        # split long blocks to bound the increment buffer
        while done < step:
            stop = min(step, done + max(1, 2_000_000 // max(R * max(J, 1), 1)))
            dW = np.ascontiguousarray(source(done, stop), dtype=np.float64) if J else np.zeros((R, stop - done, 0))
            impl.advance(G, drift, noise, decay, config.lam, config.dt, dW, heun, alive, abort_step, done)
            done = stop
        capture(ci, step)
    return Trajectory(times, table, trunc.N, config.lam, snapshots, alive, abort_step, G)


def integrate(g_in: SpectralState, bundle: OperatorBundle, path: BrownianPath | None,
              config: SolverConfig, params: DiagnosticParams | None = None, **kw) -> Trajectory:
    """Single-path evolution with captures every ``diag_every`` steps.

    ``path`` may be ``None`` when ``config.lam == 0``.  Raises
    :class:`InstabilityError` carrying the partial trajectory if the
    coefficients blow up.
    """
    if g_in.trunc != bundle.trunc:
        raise ValueError(f"state truncation {g_in.trunc} differs from operators {bundle.trunc}")
    J = len(bundle.noise_ops)
    if path is None:
        if config.lam != 0:
            raise ValueError("a Brownian path is required when lambda > 0")
        src = lambda a, b: np.zeros((1, b - a, J))  # noqa: E731
    else:
        if path.n_fields != J:
            raise ValueError(f"path has {path.n_fields} fields, operators have {J}")
        src = path_source([path], config.dt)
    traj = integrate_batch(g_in.coeffs, bundle, config, src, params, **kw)
    if not traj.alive[0]:
        step = int(traj.abort_step[0])
        keep = traj.times <= step * config.dt
        partial = Trajectory(traj.times[keep], traj.table[:, keep], traj.N, traj.lam, traj.snapshots,
                             traj.alive, traj.abort_step, None)
        raise InstabilityError(step, partial)
    return traj
