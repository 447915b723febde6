"""Sparse Galerkin operators on the truncated Fourier x Hermite space.

All matrices act on coefficient vectors (columns are source indices) and are
stored as CSR.  The Galerkin system they assemble reads, in Stratonovich form,

    dg = (-A g + L g) dt + lambda sum_j B_j g o d beta_j,

with ``B_j = Pi (F_j . D*)``.  Its Ito form adds the drift
``lambda^2 * S g`` with ``S = 1/2 sum_j B_j B_j``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .basis import Basis, SpectralState, TruncationSpec, get_basis
from .noise import Constant, FourierMode, NoiseSpec


def raise_matrix(basis: Basis, axis: int) -> sp.csr_matrix:
    """Truncated ``Pi D*_axis``."""
    src = np.nonzero(basis.up[axis] >= 0)[0]
    vals = np.sqrt(basis.l[src, axis] + 1.0)
    return sp.csr_matrix((vals, (basis.up[axis, src], src)), shape=(basis.dim, basis.dim))


def lower_matrix(basis: Basis, axis: int) -> sp.csr_matrix:
    """``D_axis`` (maps the truncated space into itself)."""
    src = np.nonzero(basis.down[axis] >= 0)[0]
    vals = np.sqrt(basis.l[src, axis].astype(float))
    return sp.csr_matrix((vals, (basis.down[axis, src], src)), shape=(basis.dim, basis.dim))


def grad_matrix(basis: Basis, axis: int) -> sp.csr_matrix:
    return sp.diags(2j * np.pi * basis.k[:, axis]).tocsr()


def shift_matrix(basis: Basis, mode) -> sp.csr_matrix:
    """Multiplication by ``exp(2 pi i mode.x)`` followed by truncation."""
    dst = basis.shift_k(mode)
    src = np.nonzero(dst >= 0)[0]
    return sp.csr_matrix(
        (np.ones(len(src), dtype=complex), (dst[src], src)), shape=(basis.dim, basis.dim)
    )


def assemble_transport(trunc: TruncationSpec) -> sp.csr_matrix:
    """Galerkin transport ``Pi (v . grad_x)`` with ``v_a = D_a + D*_a``.

    The truncated matrix is exactly skew-Hermitian.
    """
    b = get_basis(trunc)
    A = sp.csr_matrix((b.dim, b.dim), dtype=complex)
    for a in range(b.N):
        A = A + grad_matrix(b, a) @ (raise_matrix(b, a) + lower_matrix(b, a))
    A = A.tocsr()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def multiplication_matrix(basis: Basis, f, axis: int) -> sp.csr_matrix:
    """Truncated multiplication by component ``axis`` of the field ``f``."""
    if isinstance(f, Constant):
        return (f.vector[axis] * sp.identity(basis.dim, dtype=complex, format="csr")).tocsr()
    if isinstance(f, FourierMode):
        a = f.amplitude[axis]
        neg = tuple(-m for m in f.mode)
        return (a * shift_matrix(basis, f.mode) + np.conj(a) * shift_matrix(basis, neg)).tocsr()
    raise TypeError(f"unsupported field shape: {type(f).__name__}")


def assemble_noise_ops(trunc: TruncationSpec, noise: NoiseSpec) -> list[sp.csr_matrix]:
    """``B_j = Pi (F_j . D*)`` for every field."""
    if noise.N != trunc.N:
        raise ValueError(f"noise is {noise.N}-dimensional, truncation has N={trunc.N}")
    b = get_basis(trunc)
    ops = []
    for f in noise.fields:
        B = sp.csr_matrix((b.dim, b.dim), dtype=complex)
        for a in range(b.N):
            B = B + multiplication_matrix(b, f, a) @ raise_matrix(b, a)
        B = B.tocsr()
        B.eliminate_zeros()
        B.sort_indices()
        ops.append(B)
    return ops


def assemble_strat_correction(trunc: TruncationSpec, noise: NoiseSpec, noise_ops=None) -> sp.csr_matrix:
    """``1/2 sum_j B_j B_j`` (projection between the two factors).

    ``lambda^2`` is applied by the integrators.
    """
    ops = assemble_noise_ops(trunc, noise) if noise_ops is None else noise_ops
    S = sp.csr_matrix((trunc.dim, trunc.dim), dtype=complex)
    for B in ops:
        S = S + B @ B
    S = (0.5 * S).tocsr()
    S.eliminate_zeros()
    S.sort_indices()
    return S


def fokker_planck_diagonal(trunc: TruncationSpec) -> np.ndarray:
    """Eigenvalues ``-|l|`` of ``L`` in storage order."""
    return -get_basis(trunc).l_abs.astype(float)


def apply_L(state: SpectralState) -> SpectralState:
    return state.with_coeffs(fokker_planck_diagonal(state.trunc) * state.coeffs)


@dataclass(frozen=True, eq=False)
class OperatorBundle:
    """Assembled operators for one truncation and one set of noise fields."""

    trunc: TruncationSpec
    noise: NoiseSpec
    A: sp.csr_matrix = field(repr=False)
    L_diag: np.ndarray = field(repr=False)
    noise_ops: tuple[sp.csr_matrix, ...] = field(repr=False)
    strat_corr: sp.csr_matrix = field(repr=False)

    @classmethod
    def assemble(cls, trunc: TruncationSpec, noise: NoiseSpec) -> "OperatorBundle":
        ops = assemble_noise_ops(trunc, noise)
        return cls(
            trunc,
            noise,
            assemble_transport(trunc),
            fokker_planck_diagonal(trunc),
            tuple(ops),
            assemble_strat_correction(trunc, noise, ops),
        )

    @property
    def basis(self) -> Basis:
        return get_basis(self.trunc)

    @property
    def dim(self) -> int:
        return self.trunc.dim

    def deterministic_generator(self) -> sp.csr_matrix:
        """``-A + L`` (the lambda = 0 dynamics)."""
        return (sp.diags(self.L_diag) - self.A).tocsr()

    def ito_drift(self, lam: float) -> sp.csr_matrix:
        return (self.deterministic_generator() + lam**2 * self.strat_corr).tocsr()

    def dump(self, directory: str | Path) -> list[Path]:
        """Write every matrix as ``row col re im`` text files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        mats = {"transport": self.A, "fokker_planck": sp.diags(self.L_diag).tocsr(),
                "strat_correction": self.strat_corr}
        mats.update({f"noise_{j}": B for j, B in enumerate(self.noise_ops)})
        written = []
        for name, M in mats.items():
            written.append(write_coo(M, directory / f"{name}.coo"))
        return written


def write_coo(M, path: str | Path) -> Path:
    path = Path(path)
    C = sp.coo_matrix(M)
    with path.open("w") as fh:
        fh.write(f"# shape {C.shape[0]} {C.shape[1]}\n# row col re im\n")
        for r, c, v in zip(C.row, C.col, C.data.astype(complex)):
            fh.write(f"{r} {c} {float(v.real)!r} {float(v.imag)!r}\n")
    return path


def read_coo(path: str | Path) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    shape = None
    with Path(path).open() as fh:
        for line in fh:
            if line.startswith("# shape"):
                shape = tuple(int(x) for x in line.split()[2:4])
                continue
            if line.startswith("#") or not line.strip():
                continue
            r, c, re, im = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(complex(float(re), float(im)))
    return sp.csr_matrix((np.array(vals, dtype=complex), (rows, cols)), shape=shape)
