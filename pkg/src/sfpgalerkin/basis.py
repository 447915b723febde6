"""Fourier x Hermite tensor basis and coefficient-space primitives.

The basis functions are ``e_{k,l}(x, v) = exp(2 pi i k.x) q_l(v)`` on the unit
torus times R^N, where ``q_l`` are the normalised Hermite functions built on
the square root of the Maxwellian, ``q_0 = (2 pi)^(-N/4) exp(-|v|^2 / 4)``.
The truncated index set is the Fourier box ``|k|_inf <= m_x`` crossed with
the Hermite simplex ``|l|_1 <= m_v``.

Ladder conventions (creation ``D*_a = -d/dv_a + v_a/2``, annihilation
``D_a = d/dv_a + v_a/2``)::

    D*_a q_l = sqrt(l_a + 1) q_{l + e_a}
    D_a  q_l = sqrt(l_a)     q_{l - e_a}

Inner products are linear in the first argument: ``<f, h> = sum f conj(h)``.
Axes are 0-based throughout.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

MAX_DIM = 200_000


class MultiIndex(NamedTuple):
    k: tuple[int, ...]
    l: tuple[int, ...]


@dataclass(frozen=True)
class TruncationSpec:
    """Truncation of the Fourier x Hermite index set.

    Parameters
    ----------
    N : int
        Dimension of the torus and of velocity space.
    m_x : int
        Largest Fourier mode per axis, ``|k|_inf <= m_x``.
    m_v : int
        Largest total Hermite degree, ``|l|_1 <= m_v``.
    """

    N: int = 1
    m_x: int = 4
    m_v: int = 4

    def __post_init__(self):
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")
        if self.m_x < 0:
            raise ValueError(f"m_x must be >= 0, got {self.m_x}")
        if self.m_v < 0:
            raise ValueError(f"m_v must be >= 0, got {self.m_v}")

    @property
    def n_fourier(self) -> int:
        return (2 * self.m_x + 1) ** self.N

    @property
    def n_hermite(self) -> int:
        # number of l in N^N with |l|_1 <= m_v
        return _binom(self.m_v + self.N, self.N)

    @property
    def dim(self) -> int:
        return self.n_fourier * self.n_hermite


def _binom(n: int, k: int) -> int:
    from math import comb

    return comb(n, k)


def _hermite_levels(N: int, m_v: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(m_v + 1):
        for l in itertools.product(range(total + 1), repeat=N):
            if sum(l) == total:
                out.append(tuple(reversed(l)))
    return out


def enumerate_basis(trunc: TruncationSpec, max_dim: int = MAX_DIM) -> list[MultiIndex]:
    """All retained indices in storage order.

    Fourier modes vary slowest (lexicographic over the box), Hermite indices
    fastest (graded by total degree).  Raises ``OverflowError`` when the
    index count exceeds ``max_dim``.
    """
    if trunc.dim > max_dim:
        raise OverflowError(
            f"truncation {trunc} has {trunc.dim} basis functions (limit {max_dim})"
        )
    ks = itertools.product(range(-trunc.m_x, trunc.m_x + 1), repeat=trunc.N)
    ls = _hermite_levels(trunc.N, trunc.m_v)
    return [MultiIndex(tuple(k), l) for k in ks for l in ls]


class Basis:
    """Index tables for one truncation.  Use :func:`get_basis` (cached)."""

    def __init__(self, trunc: TruncationSpec, max_dim: int = MAX_DIM):
        self.trunc = trunc
        self.N = trunc.N
        self.indices = enumerate_basis(trunc, max_dim)
        self.dim = len(self.indices)
        self.k = np.array([ix.k for ix in self.indices], dtype=np.int64).reshape(self.dim, self.N)
        self.l = np.array([ix.l for ix in self.indices], dtype=np.int64).reshape(self.dim, self.N)
        self.l_abs = self.l.sum(axis=1)
        self.k_inf = np.abs(self.k).max(axis=1)
        self.k_sq = (self.k**2).sum(axis=1)
        self.lookup = {ix: i for i, ix in enumerate(self.indices)}
        self.ground = self.lookup[MultiIndex((0,) * self.N, (0,) * self.N)]

        self.up = np.full((self.N, self.dim), -1, dtype=np.int64)
        self.down = np.full((self.N, self.dim), -1, dtype=np.int64)
        for i, (k, l) in enumerate(self.indices):
            for a in range(self.N):
                lu = l[:a] + (l[a] + 1,) + l[a + 1 :]
                self.up[a, i] = self.lookup.get(MultiIndex(k, lu), -1)
                if l[a] > 0:
                    ld = l[:a] + (l[a] - 1,) + l[a + 1 :]
                    self.down[a, i] = self.lookup[MultiIndex(k, ld)]
        self.conj = np.array(
            [self.lookup[MultiIndex(tuple(-x for x in k), l)] for k, l in self.indices],
            dtype=np.int64,
        )

    def index(self, k: Sequence[int], l: Sequence[int]) -> int:
        return self.lookup[MultiIndex(tuple(int(x) for x in k), tuple(int(x) for x in l))]

    def shift_k(self, mode: Sequence[int]) -> np.ndarray:
        """Index of ``(k + mode, l)`` for each ordinal, ``-1`` when outside the box."""
        mode = tuple(int(x) for x in mode)
        out = np.full(self.dim, -1, dtype=np.int64)
        for i, (k, l) in enumerate(self.indices):
            out[i] = self.lookup.get(MultiIndex(tuple(a + b for a, b in zip(k, mode)), l), -1)
        return out

    def __repr__(self):
        return f"Basis({self.trunc}, dim={self.dim})"


@lru_cache(maxsize=32)
def get_basis(trunc: TruncationSpec) -> Basis:
    return Basis(trunc)


@dataclass(frozen=True, eq=False)
class SpectralState:
    """Coefficients ``d_{k,l}`` of a truncated function on the torus x R^N."""

    trunc: TruncationSpec
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=np.complex128)
        if c.shape != (self.trunc.dim,):
            raise ValueError(f"expected {self.trunc.dim} coefficients, got shape {c.shape}")
        c.flags.writeable = False
        object.__setattr__(self, "coeffs", c)

    @property
    def basis(self) -> Basis:
        return get_basis(self.trunc)

    @classmethod
    def zeros(cls, trunc: TruncationSpec) -> "SpectralState":
        return cls(trunc, np.zeros(trunc.dim, dtype=np.complex128))

    def with_coeffs(self, coeffs) -> "SpectralState":
        return SpectralState(self.trunc, coeffs)

    def __add__(self, other: "SpectralState") -> "SpectralState":
        _same(self, other)
        return self.with_coeffs(self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralState") -> "SpectralState":
        _same(self, other)
        return self.with_coeffs(self.coeffs - other.coeffs)

    def __mul__(self, a) -> "SpectralState":
        return self.with_coeffs(a * self.coeffs)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralState":
        return self.with_coeffs(-self.coeffs)

    def coefficient(self, k: Sequence[int], l: Sequence[int]) -> complex:
        return complex(self.coeffs[self.basis.index(k, l)])

    def hermitian_defect(self) -> float:
        """max |d_{-k,l} - conj(d_{k,l})|; zero for real-valued functions."""
        c = self.coeffs
        return float(np.max(np.abs(c[self.basis.conj] - np.conj(c)), initial=0.0))


def _same(a: SpectralState, b: SpectralState):
    if a.trunc != b.trunc:
        raise ValueError(f"truncation mismatch: {a.trunc} vs {b.trunc}")


def basis_vector(trunc: TruncationSpec, k: Sequence[int], l: Sequence[int]) -> SpectralState:
    c = np.zeros(trunc.dim, dtype=np.complex128)
    c[get_basis(trunc).index(k, l)] = 1.0
    return SpectralState(trunc, c)


def hermitianize(state: SpectralState) -> SpectralState:
    """Closest Hermitian-symmetric state, ``(d_{k,l} + conj d_{-k,l}) / 2``."""
    c = state.coeffs
    return state.with_coeffs(0.5 * (c + np.conj(c[state.basis.conj])))


def _check_axis(state: SpectralState, axis: int):
    if not 0 <= axis < state.trunc.N:
        raise ValueError(f"axis {axis} out of range for N={state.trunc.N}")


def apply_raise(state: SpectralState, axis: int) -> SpectralState:
    """Truncated creation operator ``Pi D*_axis``; mass raised past ``m_v`` is dropped."""
    _check_axis(state, axis)
    b = state.basis
    out = np.zeros(b.dim, dtype=np.complex128)
    src = np.nonzero(b.up[axis] >= 0)[0]
    out[b.up[axis, src]] = np.sqrt(b.l[src, axis] + 1.0) * state.coeffs[src]
    return state.with_coeffs(out)


def apply_lower(state: SpectralState, axis: int) -> SpectralState:
    """Annihilation operator ``D_axis`` (exact on the truncated space)."""
    _check_axis(state, axis)
    b = state.basis
    out = np.zeros(b.dim, dtype=np.complex128)
    src = np.nonzero(b.down[axis] >= 0)[0]
    out[b.down[axis, src]] = np.sqrt(b.l[src, axis].astype(float)) * state.coeffs[src]
    return state.with_coeffs(out)


def apply_grad_x(state: SpectralState, axis: int) -> SpectralState:
    _check_axis(state, axis)
    factor = 2j * np.pi * state.basis.k[:, axis]
    return state.with_coeffs(factor * state.coeffs)


def project(state: SpectralState, k0: int, l0: int) -> SpectralState:
    """Orthogonal projection onto ``|k|_inf <= k0``, ``|l|_1 <= l0``."""
    b = state.basis
    keep = (b.k_inf <= k0) & (b.l_abs <= l0)
    return state.with_coeffs(np.where(keep, state.coeffs, 0.0))


def inner(s1: SpectralState, s2: SpectralState) -> complex:
    _same(s1, s2)
    return complex(np.sum(s1.coeffs * np.conj(s2.coeffs)))


def norm_sq(state: SpectralState) -> float:
    return float(np.sum(np.abs(state.coeffs) ** 2))


def rho_inf(state: SpectralState) -> float:
    """Conserved mass: the coefficient on ``e_{0,0} = sqrt(Maxwellian)``."""
    return float(state.coeffs[state.basis.ground].real)


def hermite_functions(n_max: int, v) -> np.ndarray:
    """Normalised Hermite functions ``q_0 .. q_{n_max}`` in one velocity variable.

    Three-term recurrence ``q_{n+1} = (v q_n - sqrt(n) q_{n-1}) / sqrt(n+1)``,
    stable for the magnitudes used here.  Returns shape ``(n_max + 1,) + v.shape``.
    """
    v = np.asarray(v, dtype=float)
    out = np.empty((n_max + 1,) + v.shape)
    out[0] = (2.0 * np.pi) ** -0.25 * np.exp(-0.25 * v * v)
    if n_max >= 1:
        out[1] = v * out[0]
    for n in range(1, n_max):
        out[n + 1] = (v * out[n] - np.sqrt(n) * out[n - 1]) / np.sqrt(n + 1.0)
    return out


def evaluate_pointwise(state: SpectralState, x, v, v_window: float = 30.0) -> float:
    """Value of ``g(x, v) = sum d_{k,l} exp(2 pi i k.x) q_l(v)``.

    ``x`` and ``v`` are length-N sequences.  Velocities outside
    ``|v|_inf <= v_window`` are rejected.
    """
    b = state.basis
    x = np.asarray(x, dtype=float).reshape(b.N)
    v = np.asarray(v, dtype=float).reshape(b.N)
    if np.any(np.abs(v) > v_window):
        raise ValueError(f"velocity {v} outside evaluation window {v_window}")
    q = hermite_functions(state.trunc.m_v, v)  # (m_v+1, N)
    herm = np.prod(q[b.l, np.arange(b.N)], axis=1)
    phase = np.exp(2j * np.pi * (b.k @ x))
    return float(np.real(np.sum(state.coeffs * phase * herm)))
