"""Monte Carlo over noise realizations.

Realization ``i`` of an ensemble draws its increments from
:func:`~sfpgalerkin.noise.sample_path` with seed ``derive_seed(base_seed, i)``,
so results depend only on ``base_seed`` and never on how realizations are
split across worker threads.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng
from .basis import SpectralState, TruncationSpec, get_basis, rho_inf
from .diagnostics import DecayFit, DiagnosticParams, fit_decay
from .operators import OperatorBundle
from .solver import SolverConfig, Trajectory, capture_steps, integrate_batch, seeded_source

DEFAULT_CHUNK = 16


def default_workers() -> int:
    return max(1, os.cpu_count() or 1)


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble of ``size`` realizations started from the same ``g_in``.

    ``mass`` is the prescribed value of ``rho_inf``; ``None`` takes it from
    ``g_in``.
    """

    size: int
    base_seed: int
    solver: SolverConfig
    g_in: SpectralState
    mass: float | None = None
    workers: int = 1
    chunk: int = DEFAULT_CHUNK

    def __post_init__(self):
        if self.size < 2:
            raise ValueError(f"ensemble size must be >= 2, got {self.size}")
        m = rho_inf(self.g_in)
        if self.mass is None:
            object.__setattr__(self, "mass", m)
        elif not math.isclose(m, self.mass, rel_tol=1e-12, abs_tol=1e-14):
            raise ValueError(f"initial state has mass {m}, configured mass is {self.mass}")
        if self.workers < 1 or self.chunk < 1:
            raise ValueError("workers and chunk must be positive")

    def seeds(self) -> list[int]:
        return [rng.derive_seed(self.base_seed, i) for i in range(self.size)]


@dataclass(eq=False)
class EnsembleResult:
    traj: Trajectory
    seeds: list
    aborted: int

    @property
    def times(self):
        return self.traj.times

    def mean(self, name: str) -> np.ndarray:
        return self.traj.mean(name)

    def stderr(self, name: str) -> np.ndarray:
        return self.traj.stderr(name)


def _chunks(n: int, size: int):
    return [(a, min(n, a + size)) for a in range(0, n, size)]


def _run_chunks(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(job) for job in jobs]
        return [f.result() for f in futures]


def _merge(parts: list[Trajectory]) -> Trajectory:
    first = parts[0]
    return Trajectory(
        first.times,
        np.concatenate([p.table for p in parts]),
        first.N,
        first.lam,
        {t: np.concatenate([p.snapshots[t] for p in parts]) for t in first.snapshots},
        np.concatenate([p.alive for p in parts]),
        np.concatenate([p.abort_step for p in parts]),
        np.concatenate([p.final for p in parts]),
    )


def run_ensemble(config: EnsembleConfig, bundle: OperatorBundle,
                 params: DiagnosticParams | None = None, capture_at=None) -> EnsembleResult:
    """Integrate every realization and collect the diagnostic tables.

    Aborted realizations stay in the table (NaN after the abort) but are
    excluded from means and standard errors; a warning reports how many.
    """
    if config.g_in.trunc != bundle.trunc:
        raise ValueError("initial state and operators use different truncations")
    seeds = config.seeds()
    J = len(bundle.noise_ops)

    def job(a, b):
        def run():
            G0 = np.tile(config.g_in.coeffs, (b - a, 1))
            return integrate_batch(G0, bundle, config.solver, seeded_source(seeds[a:b], J, config.solver.dt),
                                   params, capture_at=capture_at)
        return run

    parts = _run_chunks([job(a, b) for a, b in _chunks(config.size, config.chunk)], config.workers)
    traj = _merge(parts)
    aborted = int(np.sum(traj.alive == 0))
    if aborted:
        warnings.warn(f"{aborted} of {config.size} realizations aborted and were excluded", stacklevel=2)
    return EnsembleResult(traj, seeds, aborted)


# ---------------------------------------------------------------- invariant measure


def functional_names(trunc: TruncationSpec, clip: float) -> list[str]:
    b = get_basis(trunc)
    names = ["norm_clip", "hypo_clip", "norm_sq"]
    for k, l in b.indices:
        if max(map(abs, k), default=0) <= 2 and sum(l) <= 2:
            names.append(f"re_d[{','.join(map(str, k))};{','.join(map(str, l))}]")
    return names


def _functional_matrix(trunc: TruncationSpec):
    b = get_basis(trunc)
    sel = np.nonzero((b.k_inf <= 2) & (b.l_abs <= 2))[0]
    return sel


def evaluate_functionals(C: np.ndarray, trunc: TruncationSpec, clip: float) -> np.ndarray:
    """Test functionals per row: clipped norm, clipped hypocoercive norm, ``|g|^2``, low ``Re d_{k,l}``."""
    b = get_basis(trunc)
    C2 = np.atleast_2d(C)
    P = C2.real**2 + C2.imag**2
    n2 = P.sum(axis=1)
    hypo = P @ (b.l_abs + trunc.N + 4.0 * math.pi**2 * b.k_sq)
    sel = _functional_matrix(trunc)
    return np.column_stack([np.minimum(np.sqrt(n2), clip), np.minimum(np.sqrt(hypo), clip), n2, C2[:, sel].real])


@dataclass(frozen=True)
class MeasureEstimate:
    """Time-and-ensemble averages of test functionals over ``[burn_in, burn_in + T]``.

    ``stderr`` treats each realization's time average as one sample.
    """

    T: float
    burn_in: float
    names: tuple
    mean: np.ndarray
    stderr: np.ndarray
    cov: np.ndarray
    snapshot_count: int
    realizations: int
    max_mass_deviation: float

    def value(self, name: str) -> float:
        return float(self.mean[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.stderr[self.names.index(name)])

    def as_dict(self) -> dict:
        return {
            "T": self.T, "burn_in": self.burn_in, "snapshot_count": self.snapshot_count,
            "realizations": self.realizations, "max_mass_deviation": self.max_mass_deviation,
            "functionals": {n: {"mean": float(m), "stderr": float(s)}
                            for n, m, s in zip(self.names, self.mean, self.stderr)},
        }


def estimate_invariant(config: EnsembleConfig, bundle: OperatorBundle, T: float,
                       burn_in: float = 1.0, snapshots: int = 1000, clip: float = 1e3) -> MeasureEstimate:
    """Cesaro average of test functionals on a uniform grid in ``[burn_in, burn_in + T]``.

    The solver's ``t_end`` is replaced by ``burn_in + T``.
    """
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    solver = config.solver
    dt = solver.dt
    s0 = int(round(burn_in / dt))
    s1 = int(round((burn_in + T) / dt))
    grid = np.unique(np.round(np.linspace(s0, s1, max(2, snapshots))).astype(np.int64))
    solver = SolverConfig(solver.scheme, dt, s1 * dt, solver.lam, max(1, s1), solver.override_lambda,
                          solver.stability_constant)
    trunc = bundle.trunc
    names = tuple(functional_names(trunc, clip))
    seeds = config.seeds()
    J = len(bundle.noise_ops)
    ground = get_basis(trunc).ground

    def job(a, b):
        def run():
            acc = np.zeros((b - a, len(names)))
            sq = []
            count = np.zeros(b - a)
            dev = [0.0]

            def on_capture(step, t, G, live):
                if step < s0:
                    return
                vals = evaluate_functionals(G, trunc, clip)
                vals[~live] = 0.0
                acc[:] += vals
                count[:] += live
                sq.append(vals[live])
                dev[0] = max(dev[0], float(np.max(np.abs(G[live, ground].real - config.mass), initial=0.0)))

            G0 = np.tile(config.g_in.coeffs, (b - a, 1))
            tr = integrate_batch(G0, bundle, solver, seeded_source(seeds[a:b], J, dt), capture_at=grid,
                                 on_capture=on_capture)
            return acc, count, np.concatenate(sq) if sq else np.zeros((0, len(names))), dev[0], tr.alive

        return run

    parts = _run_chunks([job(a, b) for a, b in _chunks(config.size, config.chunk)], config.workers)
    acc = np.concatenate([p[0] for p in parts])
    count = np.concatenate([p[1] for p in parts])
    samples = np.concatenate([p[2] for p in parts])
    alive = np.concatenate([p[4] for p in parts]).astype(bool)
    per_real = acc[alive] / count[alive][:, None]
    mean = per_real.mean(axis=0)
    stderr = per_real.std(axis=0, ddof=1) / math.sqrt(per_real.shape[0]) if per_real.shape[0] > 1 else np.zeros_like(mean)
    cov = np.atleast_2d(np.cov(samples, rowvar=False)) if samples.shape[0] > 1 else np.zeros((len(names), len(names)))
    return MeasureEstimate(float(T), float(burn_in), names, mean, stderr, cov, int(samples.shape[0]),
                           int(alive.sum()), max(p[3] for p in parts))


# ---------------------------------------------------------------- mixing


@dataclass(eq=False)
class MixingResult:
    fit: DecayFit | None
    times: np.ndarray
    mean_sq_diff: np.ndarray
    stderr: np.ndarray
    max_mass_difference: float
    fit_error: str | None = None

    def as_dict(self) -> dict:
        return {
            "fit": self.fit.as_dict() if self.fit else None,
            "fit_error": self.fit_error,
            "max_mass_difference": self.max_mass_difference,
        }


def mixing_experiment(config: EnsembleConfig, bundle: OperatorBundle, g_in_1: SpectralState,
                      g_in_2: SpectralState, window: tuple[float, float] = (1.0, 6.0),
                      floor="none") -> MixingResult:
    """Decay of ``E|g_1(t) - g_2(t)|^2`` with both members of a pair on one path.

    ``config.g_in`` is ignored.  Both initial states must have the same mass.
    """
    m1, m2 = rho_inf(g_in_1), rho_inf(g_in_2)
    if not math.isclose(m1, m2, rel_tol=1e-12, abs_tol=1e-14):
        raise ValueError(f"initial masses differ ({m1} vs {m2}); the difference must have zero mass")
    if g_in_1.trunc != bundle.trunc or g_in_2.trunc != bundle.trunc:
        raise ValueError("initial states and operators use different truncations")
    solver = config.solver
    seeds = config.seeds()
    J = len(bundle.noise_ops)
    caps = capture_steps(solver.n_steps, solver.diag_every)
    ground = get_basis(bundle.trunc).ground

    def job(a, b):
        def run():
            n = b - a
            out = np.full((n, caps.size), np.nan)
            massdiff = [0.0]
            ci = [0]

            def on_capture(step, t, G, live):
                d = G[:n] - G[n:]
                ok = live[:n] & live[n:]
                out[ok, ci[0]] = np.sum(d[ok].real**2 + d[ok].imag**2, axis=1)
                massdiff[0] = max(massdiff[0], float(np.max(np.abs(d[ok, ground]), initial=0.0)))
                ci[0] += 1

            G0 = np.vstack([np.tile(g_in_1.coeffs, (n, 1)), np.tile(g_in_2.coeffs, (n, 1))])
            src = seeded_source(list(seeds[a:b]) * 2, J, solver.dt)
            integrate_batch(G0, bundle, solver, src, capture_at=caps, on_capture=on_capture)
            return out, massdiff[0]

        return run

    parts = _run_chunks([job(a, b) for a, b in _chunks(config.size, config.chunk)], config.workers)
    table = np.concatenate([p[0] for p in parts])
    table = table[np.all(np.isfinite(table), axis=1)]
    times = caps * solver.dt
    mean = table.mean(axis=0)
    se = table.std(axis=0, ddof=1) / math.sqrt(table.shape[0]) if table.shape[0] > 1 else np.zeros_like(mean)
    fit, err = None, None
    try:
        fit = fit_decay(times, mean, window, floor)
    except ValueError as exc:
        err = str(exc)
    return MixingResult(fit, times, mean, se, max(p[1] for p in parts), err)
