"""Run configuration read from TOML.

A config file is a flat set of tables.  Every key is optional except where
an experiment needs it; unknown keys are rejected with the line they sit on.

.. code-block:: toml

    experiment = "simulate"     # simulate | ensemble | decay-fit | invariant
                                # | mixing | validate | oracle-compare
    seed = 0
    out = "run"

    [model]
    N = 1
    m_x = 4
    m_v = 4

    [noise]
    lambda = 0.3
    override_lambda = false
    # omitted: F_j = e_j, j = 1..N
    [[noise.fields]]
    type = "constant"
    vector = [1.0]
    [[noise.fields]]
    type = "fourier"
    mode = [1]
    amplitude = [[0.05, 0.0]]   # (re, im) per component, or plain reals

    [solver]
    scheme = "exponential-euler-ito"
    dt = 1e-3
    t_end = 1.0
    diag_every = 1
    stability_constant = 2.0
    snapshot_times = []

    [initial]
    preset = "single-mode"      # ground | single-mode | random
    k = [1]
    l = [1]
    amplitude = 0.5
    mass = 1.0

    [ensemble]
    size = 64
    workers = 0                 # 0 (default): all available cores
    chunk = 16

    [diagnostics]
    alpha = 1.0
    beta = 0.05
    gamma = 0.05
    a = 1.0
    b = 0.05
    c = 0.05
    quantity = "norm_sq"
    window = [1.0, 5.0]
    floor = "tail"              # tail | none | fit | <number>

    [invariant]
    T = 50.0
    burn_in = 1.0
    snapshots = 1000
    clip = 1000.0

    [mixing]
    window = [1.0, 6.0]
    floor = "none"
    [mixing.initial]            # second initial state, same keys as [initial]
    preset = "ground"

    [particles]
    count = 100000
    seed = 0
    diffusion = true
    exact_decay = false
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .basis import SpectralState, TruncationSpec, get_basis
from .diagnostics import DiagnosticParams, random_states
from .noise import Constant, FourierMode, NoiseSpec, NoiseValidationError, validate
from .solver import EXP_EM, SCHEMES, SolverConfig

EXPERIMENTS = ("simulate", "ensemble", "decay-fit", "invariant", "mixing", "validate", "oracle-compare")
PRESETS = ("ground", "single-mode", "random")

_TOP = {"experiment", "seed", "out", "model", "noise", "solver", "initial", "ensemble",
        "diagnostics", "invariant", "mixing", "particles"}
_TABLES = {
    "model": {"N", "m_x", "m_v"},
    "noise": {"lambda", "override_lambda", "fields"},
    "solver": {"scheme", "dt", "t_end", "diag_every", "stability_constant", "snapshot_times"},
    "initial": {"preset", "k", "l", "amplitude", "mass", "seed"},
    "ensemble": {"size", "workers", "chunk"},
    "diagnostics": {"alpha", "beta", "gamma", "a", "b", "c", "quantity", "window", "floor"},
    "invariant": {"T", "burn_in", "snapshots", "clip"},
    "mixing": {"window", "floor", "initial"},
    "particles": {"count", "seed", "diffusion", "exact_decay"},
}
_FIELD_KEYS = {"constant": {"type", "vector"}, "fourier": {"type", "mode", "amplitude"}}


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass(frozen=True)
class InitialSpec:
    """Named initial state.

    ``ground`` is ``mass * e_{0,0}``.  ``single-mode`` adds ``amplitude`` on
    ``e_{k,l}`` and on its partner ``e_{-k,l}`` (so the state stays real).
    ``random`` draws a Hermitian Gaussian state with seed ``seed``, rescales
    its non-ground part to norm ``amplitude`` and sets the ground coefficient
    to ``mass``.
    """

    preset: str = "ground"
    k: tuple[int, ...] | None = None
    l: tuple[int, ...] | None = None
    amplitude: float = 1.0
    mass: float = 1.0
    seed: int = 0

    def build(self, trunc: TruncationSpec) -> SpectralState:
        b = get_basis(trunc)
        c = np.zeros(b.dim, dtype=np.complex128)
        if self.preset == "ground":
            c[b.ground] = self.mass
        elif self.preset == "single-mode":
            k = self.k if self.k is not None else (0,) * trunc.N
            l = self.l if self.l is not None else (0,) * trunc.N
            if len(k) != trunc.N or len(l) != trunc.N:
                raise ConfigError(f"k and l need {trunc.N} entries", "initial")
            try:
                i = b.index(k, l)
                j = b.index(tuple(-x for x in k), l)
            except (KeyError, IndexError, ValueError):
                raise ConfigError(f"mode k={k}, l={l} is outside the truncation {trunc}", "initial") from None
            c[b.ground] = self.mass
            c[i] += self.amplitude
            if j != i:
                c[j] += self.amplitude
            if i == b.ground:
                c[b.ground] = self.mass
        elif self.preset == "random":
            c = random_states(trunc, 1, seed=self.seed)[0]
            c[b.ground] = 0.0
            n = math.sqrt(float(np.sum(np.abs(c) ** 2)))
            if n > 0:
                c *= self.amplitude / n
            c[b.ground] = self.mass
        else:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {PRESETS}", "initial.preset")
        return SpectralState(trunc, c)


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "simulate"
    seed: int = 0
    out: str = "out"
    trunc: TruncationSpec = field(default_factory=TruncationSpec)
    noise: NoiseSpec | None = None
    override_lambda: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialSpec = field(default_factory=InitialSpec)
    ensemble_size: int = 64
    workers: int = 0
    chunk: int = 16
    diagnostics: DiagnosticParams = field(default_factory=DiagnosticParams)
    fit_quantity: str = "norm_sq"
    fit_window: tuple[float, float] | None = None
    fit_floor: Any = "tail"
    invariant_T: float = 50.0
    burn_in: float = 1.0
    snapshots: int = 1000
    clip: float = 1e3
    mixing_window: tuple[float, float] = (1.0, 6.0)
    mixing_floor: Any = "none"
    mixing_initial: InitialSpec = field(default_factory=InitialSpec)
    particle_count: int = 100_000
    particle_seed: int = 0
    diffusion: bool = True
    exact_decay: bool = False
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def lam(self) -> float:
        return self.solver.lam

    def noise_spec(self) -> NoiseSpec:
        return self.noise if self.noise is not None else NoiseSpec.canonical(self.trunc.N, self.lam)

    def echo(self) -> dict:
        """Resolved configuration as plain JSON-ready data.

        The output directory and the worker count are left out: neither can
        change a result, so moving or re-threading a run keeps its hash.
        """
        echo = _to_plain(self.raw)
        echo.pop("out", None)
        if isinstance(echo.get("ensemble"), dict):
            echo["ensemble"].pop("workers", None)
            if not echo["ensemble"]:
                del echo["ensemble"]
        return echo

    def config_hash(self) -> str:
        text = json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "RunConfig":
        """Re-validate with command-line overrides (see :func:`apply_overrides`)."""
        return from_dict(apply_overrides(self.raw, **overrides))


def apply_overrides(raw: dict, seed: int | None = None, out: str | None = None, workers: int | None = None,
                    override_lambda: bool = False, experiment: str | None = None) -> dict:
    """Copy of a parsed document with command-line values written in.

    Overrides land in the document itself so the echo and hash see them.
    """
    raw = json.loads(json.dumps(raw))
    if experiment is not None:
        raw["experiment"] = experiment
    if seed is not None:
        raw["seed"] = int(seed)
    if out is not None:
        raw["out"] = str(out)
    if workers is not None:
        if not isinstance(raw.setdefault("ensemble", {}), dict):
            raise ConfigError("expected a table", "ensemble")
        raw["ensemble"]["workers"] = int(workers)
    if override_lambda:
        if not isinstance(raw.setdefault("noise", {}), dict):
            raise ConfigError("expected a table", "noise")
        raw["noise"]["override_lambda"] = True
    return raw


def _to_plain(x):
    if isinstance(x, dict):
        return {k: _to_plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_plain(v) for v in x]
    return x


def _key_line(text: str, path: tuple[str, ...]) -> int | None:
    """Best-effort line of ``path`` (table names then key) in TOML ``text``."""
    if not text:
        return None
    table: tuple[str, ...] = ()
    *parent, key = path
    header = re.compile(r"^\s*\[\[?\s*([^\]]+?)\s*\]\]?\s*(#.*)?$")
    assign = re.compile(r"^\s*([A-Za-z0-9_\-\"']+)\s*=")
    for n, line in enumerate(text.splitlines(), 1):
        m = header.match(line)
        if m:
            table = tuple(p.strip().strip("\"'") for p in m.group(1).split("."))
            if table == tuple(path):
                return n
            continue
        m = assign.match(line)
        if m and table == tuple(parent) and m.group(1).strip("\"'") == key:
            return n
    return None


def _as_float(v, key):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", key)
    return float(v)


def _as_int(v, key):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"expected an integer, got {v!r}", key)
    return int(v)


def _as_bool(v, key):
    if not isinstance(v, bool):
        raise ConfigError(f"expected true or false, got {v!r}", key)
    return v


def _int_tuple(v, key):
    if not isinstance(v, list):
        raise ConfigError(f"expected a list of integers, got {v!r}", key)
    return tuple(_as_int(x, key) for x in v)


def _window(v, key):
    if not isinstance(v, list) or len(v) != 2:
        raise ConfigError("expected [t_start, t_end]", key)
    a, b = (_as_float(x, key) for x in v)
    if not b > a:
        raise ConfigError(f"empty window [{a}, {b}]", key)
    return (a, b)


def _floor(v, key):
    if isinstance(v, str):
        if v not in ("tail", "none", "fit"):
            raise ConfigError(f"floor must be 'tail', 'none', 'fit' or a number, got {v!r}", key)
        return v
    return _as_float(v, key)


def _amplitude(v, key):
    out = []
    for a in v if isinstance(v, list) else [v]:
        if isinstance(a, list):
            if len(a) != 2:
                raise ConfigError("complex amplitudes are written [re, im]", key)
            out.append(complex(_as_float(a[0], key), _as_float(a[1], key)))
        else:
            out.append(complex(_as_float(a, key)))
    return tuple(out)


def _check_keys(d: dict, allowed: set, prefix: tuple[str, ...], text: str):
    for k in d:
        if k not in allowed:
            path = prefix + (k,)
            raise ConfigError(f"unknown key; allowed here: {', '.join(sorted(allowed))}",
                              ".".join(path), _key_line(text, path))


def _initial(d: dict, prefix: tuple[str, ...], text: str) -> InitialSpec:
    _check_keys(d, _TABLES["initial"], prefix, text)
    name = ".".join(prefix)
    preset = d.get("preset", "ground")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}", f"{name}.preset",
                          _key_line(text, prefix + ("preset",)))
    return InitialSpec(
        preset=preset,
        k=_int_tuple(d["k"], f"{name}.k") if "k" in d else None,
        l=_int_tuple(d["l"], f"{name}.l") if "l" in d else None,
        amplitude=_as_float(d.get("amplitude", 1.0), f"{name}.amplitude"),
        mass=_as_float(d.get("mass", 1.0), f"{name}.mass"),
        seed=_as_int(d.get("seed", 0), f"{name}.seed"),
    )


def _fields(items, N: int, text: str) -> tuple:
    if not isinstance(items, list) or not items:
        raise ConfigError("noise.fields must be a non-empty array of tables", "noise.fields")
    out = []
    for i, f in enumerate(items):
        key = f"noise.fields[{i}]"
        if not isinstance(f, dict) or f.get("type") not in _FIELD_KEYS:
            raise ConfigError("each field needs type = 'constant' or 'fourier'", key)
        _check_keys(f, _FIELD_KEYS[f["type"]], ("noise", "fields"), text)
        if f["type"] == "constant":
            vec = tuple(_as_float(x, key) for x in f.get("vector", []))
            if len(vec) != N:
                raise ConfigError(f"vector needs {N} entries", key)
            out.append(Constant(vec))
        else:
            mode = _int_tuple(f.get("mode", []), key)
            amp = _amplitude(f.get("amplitude", []), key)
            if len(mode) != N or len(amp) != N:
                raise ConfigError(f"mode and amplitude need {N} entries", key)
            try:
                out.append(FourierMode(mode, amp))
            except ValueError as exc:
                raise ConfigError(str(exc), key) from None
    return tuple(out)


def from_dict(raw: dict, text: str = "") -> RunConfig:
    """Validate a parsed TOML document and build a :class:`RunConfig`."""
    _check_keys(raw, _TOP, (), text)
    for name in _TABLES:
        if name in raw:
            if not isinstance(raw[name], dict):
                raise ConfigError("expected a table", name, _key_line(text, (name,)))
            if name not in ("initial",):
                allowed = _TABLES[name]
                _check_keys(raw[name], allowed, (name,), text)

    experiment = raw.get("experiment", "simulate")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}", "experiment",
                          _key_line(text, ("experiment",)))
    seed = _as_int(raw.get("seed", 0), "seed")
    if seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "seed", _key_line(text, ("seed",)))

    m = raw.get("model", {})
    try:
        trunc = TruncationSpec(_as_int(m.get("N", 1), "model.N"), _as_int(m.get("m_x", 4), "model.m_x"),
                               _as_int(m.get("m_v", 4), "model.m_v"))
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), "model") from None

    nz = raw.get("noise", {})
    lam = _as_float(nz.get("lambda", 0.0), "noise.lambda")
    override = _as_bool(nz.get("override_lambda", False), "noise.override_lambda")
    if lam < 0:
        raise ConfigError("lambda must be non-negative", "noise.lambda", _key_line(text, ("noise", "lambda")))
    if lam >= 1 and not override:
        raise ConfigError(
            f"lambda = {lam} >= 1: the solution is only known to exist, be unique and conserve mass for "
            "lambda < 1; pass --override-lambda (or noise.override_lambda = true) to run anyway",
            "noise.lambda", _key_line(text, ("noise", "lambda")))
    noise = None
    if "fields" in nz:
        noise = NoiseSpec(_fields(nz["fields"], trunc.N, text), lam)
    spec = noise if noise is not None else NoiseSpec.canonical(trunc.N, lam)
    try:
        validate(spec)
    except NoiseValidationError as exc:
        raise ConfigError(
            f"{exc}; the noise fields must satisfy sum_j (|F_j|_inf^2 + |grad_x F_j|_inf^2) <= 1",
            "noise.fields", _key_line(text, ("noise", "fields"))) from None

    s = raw.get("solver", {})
    scheme = s.get("scheme", EXP_EM)
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}; choose from {SCHEMES}", "solver.scheme",
                          _key_line(text, ("solver", "scheme")))
    try:
        solver = SolverConfig(
            scheme=scheme,
            dt=_as_float(s.get("dt", 1e-3), "solver.dt"),
            t_end=_as_float(s.get("t_end", 1.0), "solver.t_end"),
            lam=lam,
            diag_every=_as_int(s.get("diag_every", 1), "solver.diag_every"),
            override_lambda=override,
            stability_constant=_as_float(s.get("stability_constant", 2.0), "solver.stability_constant"),
            snapshot_times=tuple(_as_float(x, "solver.snapshot_times") for x in s.get("snapshot_times", [])),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "solver") from None

    initial = _initial(raw.get("initial", {}), ("initial",), text)

    e = raw.get("ensemble", {})
    size = _as_int(e.get("size", 64), "ensemble.size")
    workers = _as_int(e.get("workers", 0), "ensemble.workers")
    chunk = _as_int(e.get("chunk", 16), "ensemble.chunk")
    if size < 2:
        raise ConfigError("ensemble size must be >= 2", "ensemble.size", _key_line(text, ("ensemble", "size")))
    if workers < 0 or chunk < 1:
        raise ConfigError("workers must be >= 0 and chunk >= 1", "ensemble")

    dg = raw.get("diagnostics", {})
    try:
        params = DiagnosticParams(**{k: _as_float(dg[k], f"diagnostics.{k}")
                                     for k in ("alpha", "beta", "gamma", "a", "b", "c") if k in dg})
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), "diagnostics") from None

    inv = raw.get("invariant", {})
    mix = raw.get("mixing", {})
    if "initial" in mix and not isinstance(mix["initial"], dict):
        raise ConfigError("expected a table", "mixing.initial")
    mixing_initial = _initial(mix.get("initial", {}), ("mixing", "initial"), text)
    if experiment == "mixing" and not math.isclose(initial.mass, mixing_initial.mass, rel_tol=1e-12):
        raise ConfigError(f"mixing needs equal masses, got {initial.mass} and {mixing_initial.mass}",
                          "mixing.initial.mass", _key_line(text, ("mixing", "initial", "mass")))
    p = raw.get("particles", {})

    cfg = RunConfig(
        experiment=experiment,
        seed=seed,
        out=str(raw.get("out", "out")),
        trunc=trunc,
        noise=noise,
        override_lambda=override,
        solver=solver,
        initial=initial,
        ensemble_size=size,
        workers=workers,
        chunk=chunk,
        diagnostics=params,
        fit_quantity=str(dg.get("quantity", "norm_sq")),
        fit_window=_window(dg["window"], "diagnostics.window") if "window" in dg else None,
        fit_floor=_floor(dg.get("floor", "tail"), "diagnostics.floor"),
        invariant_T=_as_float(inv.get("T", 50.0), "invariant.T"),
        burn_in=_as_float(inv.get("burn_in", 1.0), "invariant.burn_in"),
        snapshots=_as_int(inv.get("snapshots", 1000), "invariant.snapshots"),
        clip=_as_float(inv.get("clip", 1e3), "invariant.clip"),
        mixing_window=_window(mix.get("window", [1.0, 6.0]), "mixing.window"),
        mixing_floor=_floor(mix.get("floor", "none"), "mixing.floor"),
        mixing_initial=mixing_initial,
        particle_count=_as_int(p.get("count", 100_000), "particles.count"),
        particle_seed=_as_int(p.get("seed", 0), "particles.seed"),
        diffusion=_as_bool(p.get("diffusion", True), "particles.diffusion"),
        exact_decay=_as_bool(p.get("exact_decay", False), "particles.exact_decay"),
    )
    from .diagnostics import ALL_COLUMNS
    if cfg.fit_quantity not in ALL_COLUMNS:
        raise ConfigError(f"unknown quantity {cfg.fit_quantity!r}", "diagnostics.quantity",
                          _key_line(text, ("diagnostics", "quantity")))
    # the bound on initial states is checked once the truncation is known
    cfg.initial.build(trunc)
    if experiment == "mixing":
        cfg.mixing_initial.build(trunc)
    return replace(cfg, raw=_canonical(raw))


def _canonical(raw: dict) -> dict:
    """Copy of ``raw`` with the documented defaults filled in."""
    out = json.loads(json.dumps(raw))
    out.setdefault("experiment", "simulate")
    out.setdefault("seed", 0)
    out.setdefault("out", "out")
    model = out.setdefault("model", {})
    model.setdefault("N", 1)
    model.setdefault("m_x", 4)
    model.setdefault("m_v", 4)
    noise = out.setdefault("noise", {})
    noise.setdefault("lambda", 0.0)
    noise.setdefault("override_lambda", False)
    solver = out.setdefault("solver", {})
    for k, v in (("scheme", EXP_EM), ("dt", 1e-3), ("t_end", 1.0), ("diag_every", 1),
                 ("stability_constant", 2.0), ("snapshot_times", [])):
        solver.setdefault(k, v)
    out.setdefault("initial", {}).setdefault("preset", "ground")
    return out


def parse_toml(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed TOML: {exc}", line=int(m.group(1)) if m else None) from None


def parse_config(text: str, **overrides) -> RunConfig:
    """Parse TOML ``text``; malformed input raises :class:`ConfigError` with its line.

    Keyword arguments are command-line overrides applied before validation.
    """
    return from_dict(apply_overrides(parse_toml(text), **overrides), text)


def load_config(path, **overrides) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), **overrides)
