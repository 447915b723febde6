"""Noise fields ``F_j`` and seeded Brownian increments.

The forcing is ``dW(x, t) = sum_j F_j(x) d beta_j(t)`` with real fields of two
shapes: a constant vector, or a single real Fourier mode
``F(x) = a exp(2 pi i k.x) + conj(a) exp(-2 pi i k.x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import rng


class NoiseValidationError(ValueError):
    """The fields violate ``sum_j |F_j|_inf^2 + |grad F_j|_inf^2 <= 1``."""

    def __init__(self, total: float):
        self.total = total
        super().__init__(
            f"noise regularity bound violated: sum_j |F_j|_inf^2 + |grad_x F_j|_inf^2 "
            f"= {total:.6g} > 1"
        )


@dataclass(frozen=True)
class Constant:
    vector: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "vector", tuple(float(x) for x in self.vector))

    @property
    def dim(self) -> int:
        return len(self.vector)

    def sup_norm(self) -> float:
        return math.sqrt(sum(x * x for x in self.vector))

    def grad_sup_norm(self) -> float:
        return 0.0

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.array(self.vector), x.shape[:-1] + (self.dim,))


@dataclass(frozen=True)
class FourierMode:
    """Real field ``a e^{2 pi i k.x} + c.c.`` with complex amplitude vector ``a``."""

    mode: tuple[int, ...]
    amplitude: tuple[complex, ...]

    def __post_init__(self):
        object.__setattr__(self, "mode", tuple(int(x) for x in self.mode))
        object.__setattr__(self, "amplitude", tuple(complex(x) for x in self.amplitude))
        if len(self.mode) != len(self.amplitude):
            raise ValueError("mode and amplitude must have the same length")
        if not any(self.mode):
            raise ValueError("FourierMode needs a nonzero mode; use Constant for k = 0")

    @property
    def dim(self) -> int:
        return len(self.mode)

    def amp_norm(self) -> float:
        return math.sqrt(sum(abs(a) ** 2 for a in self.amplitude))

    def sup_norm(self) -> float:
        return 2.0 * self.amp_norm()

    def grad_sup_norm(self) -> float:
        k = math.sqrt(sum(m * m for m in self.mode))
        return 2.0 * 2.0 * math.pi * k * self.amp_norm()

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        phase = np.exp(2j * np.pi * (x @ np.array(self.mode, dtype=float)))
        return 2.0 * np.real(phase[..., None] * np.array(self.amplitude))


FieldSpec = Union[Constant, FourierMode]


@dataclass(frozen=True)
class NoiseSpec:
    fields: tuple[FieldSpec, ...]
    lam: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if not self.fields:
            raise ValueError("at least one noise field is required")
        dims = {f.dim for f in self.fields}
        if len(dims) != 1:
            raise ValueError(f"noise fields disagree on dimension: {sorted(dims)}")
        if self.lam < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam}")

    @property
    def N(self) -> int:
        return self.fields[0].dim

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    @classmethod
    def canonical(cls, N: int, lam: float = 0.0) -> "NoiseSpec":
        """``F_j = e_j``, ``j = 1..N`` (an N-dimensional Brownian force)."""
        eye = np.eye(N)
        return cls(tuple(Constant(tuple(row)) for row in eye), lam)


@dataclass(frozen=True)
class ValidationReport:
    total: float
    per_field: tuple[float, ...]

    @property
    def ok(self) -> bool:
        return self.total <= 1.0


def regularity_sum(spec: NoiseSpec) -> ValidationReport:
    per = tuple(f.sup_norm() ** 2 + f.grad_sup_norm() ** 2 for f in spec.fields)
    return ValidationReport(math.fsum(per), per)


def validate(spec: NoiseSpec) -> ValidationReport:
    """Closed-form check of the regularity bound; raises when it fails."""
    report = regularity_sum(spec)
    if not report.ok:
        raise NoiseValidationError(report.total)
    return report


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments ``d beta_j`` for each field on a uniform grid.

    ``increments`` has shape ``(n_fields, steps)``.  ``level`` counts how many
    times the path was refined from its sampled ancestor; refinement keeps the
    ancestor's increments as pair sums.
    """

    seed: int
    dt: float
    increments: np.ndarray = field(repr=False)
    level: int = 0

    def __post_init__(self):
        inc = np.array(self.increments, dtype=np.float64)
        if inc.ndim != 2:
            raise ValueError("increments must be 2-D (fields, steps)")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @property
    def length(self) -> int:
        return self.increments.shape[1]

    @property
    def n_fields(self) -> int:
        return self.increments.shape[0]

    @property
    def t_end(self) -> float:
        return self.length * self.dt

    def coarsen(self) -> "BrownianPath":
        parent = getattr(self, "_parent", None)
        if parent is not None:
            return parent
        if self.length % 2:
            raise ValueError("cannot coarsen a path with an odd number of steps")
        inc = self.increments[:, 0::2] + self.increments[:, 1::2]
        return BrownianPath(self.seed, 2.0 * self.dt, inc, self.level - 1)

    def refine(self) -> "BrownianPath":
        return refine(self)


def sample_path(spec: NoiseSpec | int, seed: int, dt: float, steps: int) -> BrownianPath:
    """Increments with variance ``dt``, increment ``(j, n)`` keyed by ``(seed, j, n)``.

    ``spec`` may be a :class:`NoiseSpec` or just the number of fields.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n_fields = spec if isinstance(spec, int) else spec.n_fields
    inc = sample_increments(n_fields, seed, dt, 0, steps)
    return BrownianPath(int(seed), float(dt), inc, 0)


def sample_increments(n_fields: int, seed: int, dt: float, start: int, stop: int) -> np.ndarray:
    """Steps ``start .. stop-1`` of :func:`sample_path`, shape ``(n_fields, stop - start)``.

    Lets long runs generate their increments block by block.
    """
    j = np.arange(n_fields, dtype=np.uint64)[:, None]
    n = np.arange(start, stop, dtype=np.uint64)[None, :]
    inc = math.sqrt(dt) * rng.normals(seed, j, n)
    return inc.reshape(n_fields, stop - start)


def _bridge_stream(level: int, n_fields: int) -> np.ndarray:
    # streams above 2**32 never collide with the field streams of sample_path
    return (np.uint64(level + 1) << np.uint64(32)) + np.arange(n_fields, dtype=np.uint64)


def refine(path: BrownianPath) -> BrownianPath:
    """Insert Brownian-bridge midpoints, halving ``dt``.

    The first half-increment is ``dW/2 + sqrt(dt)/2 Z`` and the second is the
    remainder, so pair sums reproduce ``dW`` up to one rounding.  The parent
    is kept so that ``refine(path).coarsen()`` returns it bit for bit.
    """
    dW = path.increments
    J, n = dW.shape
    z = rng.normals(path.seed, _bridge_stream(path.level, J)[:, None], np.arange(n, dtype=np.uint64)[None, :])
    first = 0.5 * dW + 0.5 * math.sqrt(path.dt) * z.reshape(J, n)
    second = dW - first
    out = np.empty((J, 2 * n))
    out[:, 0::2] = first
    out[:, 1::2] = second
    child = BrownianPath(path.seed, 0.5 * path.dt, out, path.level + 1)
    object.__setattr__(child, "_parent", path)
    return child


def refined_family(path: BrownianPath, levels: int) -> list[BrownianPath]:
    """``[path, refine(path), refine(refine(path)), ...]`` (``levels + 1`` entries)."""
    out = [path]
    for _ in range(levels):
        out.append(refine(out[-1]))
    return out


def force_increments(spec: NoiseSpec, path: BrownianPath) -> np.ndarray:
    """Constant-field force ``sum_j F_j d beta_j`` per step, shape ``(steps, N)``.

    Fourier-mode fields contribute nothing here; their force depends on
    position and is evaluated by the particle kernels.
    """
    if path.n_fields != spec.n_fields:
        raise ValueError(f"path has {path.n_fields} fields, noise spec has {spec.n_fields}")
    out = np.zeros((path.length, spec.N))
    for j, f in enumerate(spec.fields):
        if isinstance(f, Constant):
            out += path.increments[j][:, None] * np.array(f.vector)[None, :]
    return out

