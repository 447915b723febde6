"""Energy functionals, decay fits and inequality monitors.

All norms are closed-form weighted sums over the coefficients: for a basis
function ``e_{k,l}`` the creation/annihilation operators act diagonally in
norm, e.g. ``|D e_{k,l}|^2 = |l|`` and ``|D* e_{k,l}|^2 = |l| + N``.  The
only non-diagonal quantity is the cross term ``Re <grad_x g, D g>``.

Norms that involve ``D*`` are those of the untruncated operator, so
``Dstar_sq == D_sq + N * norm_sq`` holds for every stored state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from .basis import SpectralState, TruncationSpec, get_basis

#: Columns of :class:`EnergyReport` (besides ``t``), in table order.
REPORT_COLUMNS = (
    "norm_sq", "grad_x_sq", "D_sq", "Dstar_sq", "cross",
    "F_func", "K_func", "rho", "hypo_norm",
)
#: Extra norms needed by the termwise inequality monitor.
EXTRA_COLUMNS = (
    "D_grad_sq",          # |D grad_x g|^2
    "D2_sq",              # |D^2 g|^2
    "Dstar2_sq",          # |(D*)^2 g|^2
    "DDstar_sq",          # |D D* g|^2
    "grad_int_sq",        # |Pi_{m,m-1} grad_x g|^2
    "Dstar_grad_int_sq",  # |D* Pi_{m,m-1} grad_x g|^2
)
ALL_COLUMNS = REPORT_COLUMNS + EXTRA_COLUMNS
COL = {name: i for i, name in enumerate(ALL_COLUMNS)}


@dataclass(frozen=True)
class DiagnosticParams:
    """Weights of the balance functional ``F`` and the regularisation functional ``K_t``.

    ``F(g) = |g|^2 + alpha |grad g|^2 + beta |Dg|^2 + 2 gamma <grad g, Dg>``
    and ``K_t(g) = |g|^2 + a t^3 |grad g|^2 + b t |Dg|^2 + 2 c t^2 <grad g, Dg>``.
    """

    alpha: float = 1.0
    beta: float = 0.05
    gamma: float = 0.05
    a: float = 1.0
    b: float = 0.05
    c: float = 0.05

    def __post_init__(self):
        if not self.gamma**2 < self.alpha * self.beta:
            raise ValueError(f"need gamma^2 < alpha*beta, got {self.gamma}, {self.alpha}, {self.beta}")
        if not self.c**2 < self.a * self.b:
            raise ValueError(f"need c^2 < a*b, got {self.c}, {self.a}, {self.b}")


@dataclass(frozen=True)
class EnergyReport:
    t: float
    norm_sq: float
    grad_x_sq: float
    D_sq: float
    Dstar_sq: float
    cross: float
    F_func: float
    K_func: float
    rho: float
    hypo_norm: float

    @classmethod
    def from_row(cls, t: float, row: Sequence[float]) -> "EnergyReport":
        return cls(float(t), *(float(row[COL[c]]) for c in REPORT_COLUMNS))

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class _Weights(NamedTuple):
    w_norm: np.ndarray
    w_grad: np.ndarray
    w_D: np.ndarray
    w_Dstar: np.ndarray
    w_Dgrad: np.ndarray
    w_D2: np.ndarray
    w_Dstar2: np.ndarray
    w_DDstar: np.ndarray
    w_gint: np.ndarray
    w_Dsgint: np.ndarray
    cross_src: tuple
    cross_dst: tuple
    cross_fac: tuple
    ground: int


@lru_cache(maxsize=32)
def _weights(trunc: TruncationSpec) -> _Weights:
    b = get_basis(trunc)
    N = b.N
    l = b.l_abs.astype(float)
    k2 = 4.0 * math.pi**2 * b.k_sq.astype(float)
    interior = (b.l_abs < trunc.m_v).astype(float)
    src, dst, fac = [], [], []
    for a in range(N):
        s = np.nonzero((b.up[a] >= 0) & (b.k[:, a] != 0))[0]
        src.append(s)
        dst.append(b.up[a, s])
        fac.append(2.0 * math.pi * b.k[s, a] * np.sqrt(b.l[s, a] + 1.0))
    return _Weights(
        np.ones(b.dim), k2, l, l + N, l * k2, l * l - l, (l + N) ** 2 + l + N,
        l * (l + N) + l + N, k2 * interior, (l + N) * k2 * interior,
        tuple(src), tuple(dst), tuple(fac), b.ground,
    )


def norm_table(C: np.ndarray, trunc: TruncationSpec, t, params: DiagnosticParams | None = None) -> np.ndarray:
    """All columns of :data:`ALL_COLUMNS` for a batch of coefficient rows.

    Parameters
    ----------
    C : array, shape (R, dim) or (dim,)
    t : float or array broadcasting against the rows (enters ``K_t``)

    Returns
    -------
    array of shape ``(R, len(ALL_COLUMNS))`` (or 1-D for 1-D input)
    """
    params = params or DiagnosticParams()
    C = np.asarray(C)
    single = C.ndim == 1
    C2 = np.atleast_2d(C)
    w = _weights(trunc)
    P = C2.real**2 + C2.imag**2
    out = np.empty((C2.shape[0], len(ALL_COLUMNS)))
    names_w = {
        "norm_sq": w.w_norm, "grad_x_sq": w.w_grad, "D_sq": w.w_D, "Dstar_sq": w.w_Dstar,
        "D_grad_sq": w.w_Dgrad, "D2_sq": w.w_D2, "Dstar2_sq": w.w_Dstar2, "DDstar_sq": w.w_DDstar,
        "grad_int_sq": w.w_gint, "Dstar_grad_int_sq": w.w_Dsgint,
    }
    for name, wt in names_w.items():
        out[:, COL[name]] = P @ wt
    # Re sum_a <d_a g, D_a g>, with (d_a g)_i = 2 pi i k_a d_i, (D_a g)_i = sqrt(l_a+1) d_{up(i)}
    cross = np.zeros(C2.shape[0])
    for s, d, f in zip(w.cross_src, w.cross_dst, w.cross_fac):
        if s.size:
            cross += np.real(1j * (C2[:, s] * np.conj(C2[:, d])) @ f)
    out[:, COL["cross"]] = cross
    n, g, D = out[:, COL["norm_sq"]], out[:, COL["grad_x_sq"]], out[:, COL["D_sq"]]
    out[:, COL["F_func"]] = n + params.alpha * g + params.beta * D + 2.0 * params.gamma * cross
    t = np.asarray(t, dtype=float)
    out[:, COL["K_func"]] = n + params.a * t**3 * g + params.b * t * D + 2.0 * params.c * t**2 * cross
    out[:, COL["rho"]] = C2[:, w.ground].real
    out[:, COL["hypo_norm"]] = out[:, COL["Dstar_sq"]] + g
    return out[0] if single else out


def report(state: SpectralState, t: float = 0.0, params: DiagnosticParams | None = None) -> EnergyReport:
    """Energy functionals of one state at time ``t``."""
    return EnergyReport.from_row(t, norm_table(state.coeffs, state.trunc, t, params))


def sandwich_constants(params: DiagnosticParams, N: int) -> tuple[float, float]:
    """``(C1, C2)`` with ``C1 * hypo_norm <= F <= C2 * hypo_norm``.

    Uses ``|g|^2 = (|D* g|^2 - |Dg|^2) / N`` and the extreme eigenvalues of
    the 2x2 form ``[[alpha, gamma], [gamma, beta]]`` acting on
    ``(|grad g|, |Dg|)``.
    """
    ev = np.linalg.eigvalsh(np.array([[params.alpha, params.gamma], [params.gamma, params.beta]]))
    return min(1.0 / N, ev[0]), max(1.0 / N, ev[1])


# ---------------------------------------------------------------- rates


def energy_rate(C: np.ndarray, bundle, lam: float) -> np.ndarray:
    """Ito drift of ``|g|^2``: ``2 Re <M g, g> + lam^2 sum_j |B_j g|^2`` per row.

    ``M`` is the Ito drift ``-A + L + lam^2 S``.
    """
    C2 = np.atleast_2d(C)
    M = bundle.ito_drift(lam)
    MG = (M @ C2.T).T
    out = 2.0 * np.real(np.sum(MG * np.conj(C2), axis=1))
    for B in bundle.noise_ops:
        BG = (B @ C2.T).T
        out += lam**2 * np.sum(np.abs(BG) ** 2, axis=1)
    return out if np.ndim(C) == 2 else out[0]


@dataclass(frozen=True)
class DecayFit:
    rate: float
    intercept: float
    r_squared: float
    window: tuple[float, float]
    floor: float = 0.0
    n_points: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class DecayFitError(ValueError):
    pass


def fit_decay(times, values, window: tuple[float, float] | None = None, floor="tail") -> DecayFit:
    """Least-squares fit of ``log(values - floor) ~ intercept - rate * t``.

    Parameters
    ----------
    times, values : 1-D arrays
    window : (t_a, t_b), optional
        Only samples with ``t_a <= t <= t_b`` are used.
    floor : {"tail", "none", "fit"} or float
        Asymptotic level subtracted before taking logs.  ``"tail"`` is the
        mean of the last 10% of the window, ``"none"`` is zero, ``"fit"``
        estimates it jointly by nonlinear least squares on
        ``a exp(-r t) + c``.

    Raises
    ------
    DecayFitError
        When values minus floor are not all positive.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is None:
        window = (float(t[0]), float(t[-1]))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    t, y = t[sel], y[sel]
    if t.size < 3:
        raise DecayFitError(f"window {window} holds only {t.size} samples")

    if isinstance(floor, str) and floor == "fit":
        return _fit_with_floor(t, y, window)
    if isinstance(floor, str):
        if floor == "tail":
            n_tail = max(1, int(round(0.1 * t.size)))
            c = float(np.mean(y[-n_tail:]))
            # the tail itself cannot be fitted once its mean is subtracted
            t, y = t[:-n_tail], y[:-n_tail]
        elif floor == "none":
            c = 0.0
        else:
            raise ValueError(f"unknown floor mode {floor!r}")
    else:
        c = float(floor)
    z = y - c
    if np.any(z <= 0):
        raise DecayFitError(
            f"{int(np.sum(z <= 0))} non-positive values after subtracting floor {c:.6g}"
        )
    logz = np.log(z)
    slope, intercept = np.polyfit(t, logz, 1)
    pred = intercept + slope * t
    ss_res = float(np.sum((logz - pred) ** 2))
    ss_tot = float(np.sum((logz - logz.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return DecayFit(float(-slope), float(intercept), float(min(max(r2, 0.0), 1.0)), tuple(window), c, int(t.size))


def _fit_with_floor(t, y, window) -> DecayFit:
    pos = y - y.min() + 1e-300
    slope0 = -np.polyfit(t, np.log(pos + 1e-12 * y.max()), 1)[0]
    p0 = (float(y[0] - y[-1]), max(float(slope0), 1e-3), float(y[-1]))
    scale = max(abs(y).max(), 1e-300)

    def model(tt, a, r, c):
        return a * np.exp(-r * (tt - t[0])) + c

    popt, _ = scipy.optimize.curve_fit(model, t, y / scale, p0=(p0[0] / scale, p0[1], p0[2] / scale), maxfev=20000)
    a, r, c = popt
    pred = model(t, a, r, c)
    ss_res = float(np.sum((y / scale - pred) ** 2))
    ss_tot = float(np.sum((y / scale - (y / scale).mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    intercept = math.log(abs(a * scale)) + r * t[0] if a != 0 else -math.inf
    return DecayFit(float(r), float(intercept), float(min(max(r2, 0.0), 1.0)), tuple(window), float(c * scale), int(t.size))


def fit_decay_column(traj, quantity: str, window=None, floor="tail") -> DecayFit:
    """:func:`fit_decay` on the ensemble mean of one column of a trajectory."""
    return fit_decay(traj.times, traj.mean(quantity), window, floor)


# ---------------------------------------------------------------- baselines


def dense_generator(trunc: TruncationSpec) -> np.ndarray:
    """Dense ``-A + L`` (the noise-free Galerkin generator)."""
    from .operators import assemble_transport, fokker_planck_diagonal

    return np.diag(fokker_planck_diagonal(trunc)).astype(complex) - assemble_transport(trunc).toarray()


def deterministic_baseline(trunc: TruncationSpec, g_in: SpectralState, times) -> np.ndarray:
    """``|exp(t (-A + L)) g_in|^2`` at each time, by dense matrix exponential."""
    if g_in.trunc != trunc:
        g_in = transfer(g_in, trunc)
    G = dense_generator(trunc)
    out = []
    for t in np.asarray(times, dtype=float):
        out.append(float(np.sum(np.abs(scipy.linalg.expm(t * G) @ g_in.coeffs) ** 2)))
    return np.array(out)


def hypocoercive_rate(trunc: TruncationSpec) -> float:
    """Decay rate of ``|g|^2`` for the slowest mode orthogonal to ``e_{0,0}``.

    Twice the spectral gap of the noise-free generator, from a dense
    eigendecomposition.
    """
    b = get_basis(trunc)
    G = dense_generator(trunc)
    keep = np.ones(b.dim, dtype=bool)
    keep[b.ground] = False
    ev = np.linalg.eigvals(G[np.ix_(keep, keep)])
    return float(-2.0 * ev.real.max())


def transfer(state: SpectralState, trunc: TruncationSpec) -> SpectralState:
    """Copy coefficients onto another truncation (dropping what does not fit)."""
    src = state.basis
    dst = get_basis(trunc)
    out = np.zeros(dst.dim, dtype=complex)
    for i, ix in enumerate(src.indices):
        j = dst.lookup.get(ix)
        if j is not None:
            out[j] = state.coeffs[i]
    return SpectralState(trunc, out)


# ---------------------------------------------------------------- inequality monitors


@dataclass(frozen=True)
class TermwiseMargins:
    """Signed margins ``rhs - lhs`` per inequality at interval midpoints."""

    times: np.ndarray
    margins: dict

    def min_margin(self, name: str) -> float:
        return float(np.min(self.margins[name]))

    def all_positive(self, tol: float = 0.0) -> bool:
        return all(np.all(m >= -tol) for m in self.margins.values())


def check_termwise(traj, lam: float, N: int | None = None) -> TermwiseMargins:
    """Evaluate the four energy inequalities on ensemble means.

    The time derivatives are forward differences between captures and all
    other terms are averaged over each interval (trapezoid).  Products of
    norms are formed per realization before averaging.  A positive margin
    means the inequality holds.

    The monitored inequalities, with ``P = Pi_{m,m-1}``::

        1/2 d|g|^2 + |Dg|^2 <= lam^2 |D*g|^2
        1/2 d|grad g|^2 + |D grad g|^2
            <= lam^2/2 [|D*g|^2 + (2|D*g| + |D* P grad g|)(|D grad g| + |D* P grad g|)]
        1/2 d|Dg|^2 + |D^2 g|^2 <= |P grad g||Dg| + lam^2/2 [|D*^2 g|^2 + |DD*g|^2]
        d<grad g, Dg> + |P grad g|^2
            <= |D grad g|^2 + 2|D grad g||D^2 g| + N |Dg||P grad g|
               + lam^2/2 [|D*^2 g|(|D grad g| + |D* P grad g|) + 2|DD* g|(|D* P grad g| + |D* g|)]
    """
    T = traj.table  # (R, n_c, Q)
    if T.ndim == 2:
        T = T[None]
    N = N if N is not None else traj.N
    if getattr(traj, "alive", None) is not None:
        T = T[np.asarray(traj.alive, dtype=bool)]
    t = np.asarray(traj.times, dtype=float)
    dt = np.diff(t)

    def col(name):
        return T[..., COL[name]]

    def rt(name):
        return np.sqrt(np.maximum(col(name), 0.0))

    def mid(x):
        m = x.mean(axis=0)
        return 0.5 * (m[1:] + m[:-1])

    def deriv(x):
        return np.diff(x.mean(axis=0)) / dt

    lam2 = lam * lam
    Ds, Dg, D2 = rt("Dstar_sq"), rt("D_grad_sq"), rt("D2_sq")
    Dsg, gi, D = rt("Dstar_grad_int_sq"), rt("grad_int_sq"), rt("D_sq")
    Ds2, DDs = rt("Dstar2_sq"), rt("DDstar_sq")

    m1 = mid(lam2 * col("Dstar_sq")) - (0.5 * deriv(col("norm_sq")) + mid(col("D_sq")))
    rhs2 = 0.5 * lam2 * (col("Dstar_sq") + (2 * Ds + Dsg) * (Dg + Dsg))
    m2 = mid(rhs2) - (0.5 * deriv(col("grad_x_sq")) + mid(col("D_grad_sq")))
    rhs3 = gi * D + 0.5 * lam2 * (col("Dstar2_sq") + col("DDstar_sq"))
    m3 = mid(rhs3) - (0.5 * deriv(col("D_sq")) + mid(col("D2_sq")))
    rhs4 = (col("D_grad_sq") + 2 * Dg * D2 + N * D * gi
            + 0.5 * lam2 * (Ds2 * (Dg + Dsg) + 2 * DDs * (Dsg + Ds)))
    m4 = mid(rhs4) - (deriv(col("cross")) + mid(col("grad_int_sq")))
    return TermwiseMargins(0.5 * (t[1:] + t[:-1]), {"energy": m1, "gradient": m2, "dissipation": m3, "cross": m4})


@dataclass(frozen=True)
class RegularizationTable:
    times: np.ndarray
    t_D: np.ndarray        # t * E|Dg|^2
    t3_grad: np.ndarray    # t^3 * E|grad_x g|^2
    initial_norm: float    # E|g_in|^2

    def sup(self, t_min: float = 0.0, t_max: float = math.inf) -> tuple[float, float]:
        sel = (self.times >= t_min) & (self.times <= t_max)
        if not sel.any():
            return 0.0, 0.0
        return float(self.t_D[sel].max()), float(self.t3_grad[sel].max())

    def bound_constant(self, t_min: float = 0.0, t_max: float = math.inf) -> float:
        """Smallest ``C`` with both tables ``<= C * E|g_in|^2`` on the window."""
        if self.initial_norm == 0:
            return 0.0
        return max(self.sup(t_min, t_max)) / self.initial_norm


def check_regularization(traj, t0: float | None = None) -> RegularizationTable:
    """Tables of ``t E|Dg(t)|^2`` and ``t^3 E|grad_x g(t)|^2`` for ``0 < t <= t0``."""
    t = np.asarray(traj.times, dtype=float)
    sel = t > 0 if t0 is None else (t > 0) & (t <= t0 + 1e-12)
    D = traj.mean("D_sq")
    g = traj.mean("grad_x_sq")
    n0 = float(traj.mean("norm_sq")[0])
    return RegularizationTable(t[sel], t[sel] * D[sel], t[sel] ** 3 * g[sel], n0)


def random_states(trunc: TruncationSpec, count: int, seed: int = 0, hermitian: bool = True) -> np.ndarray:
    """Random coefficient rows (Gaussian, Hermitian-symmetrised if asked)."""
    rs = np.random.default_rng(seed)
    b = get_basis(trunc)
    C = rs.standard_normal((count, b.dim)) + 1j * rs.standard_normal((count, b.dim))
    if hermitian:
        C = 0.5 * (C + np.conj(C[:, b.conj]))
    return C
