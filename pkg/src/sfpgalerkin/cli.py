"""Command-line entry point: ``sfpg <experiment> --config run.toml``.

Every output file carries the config hash and seed; CSV files start with a
``# sfpgalerkin-csv`` comment naming the column schema and its version.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import checks
from .config import EXPERIMENTS, ConfigError, RunConfig, load_config, parse_config
from .diagnostics import (ALL_COLUMNS, REPORT_COLUMNS, DecayFitError, check_regularization, check_termwise,
                          fit_decay, hypocoercive_rate)
from .ensemble import EnsembleConfig, default_workers, estimate_invariant, mixing_experiment, run_ensemble
from .basis import TruncationSpec, get_basis
from .noise import Constant, sample_path
from .operators import OperatorBundle
from .particles import ParticleEnsemble, compare_moments, pde_moments, simulate_langevin, stationary_norm_mean
from .rng import derive_seed
from .solver import InstabilityError, integrate

CSV_VERSION = 1
EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_ABORTED = 0, 1, 2, 3


class Writer:
    """Writes CSV/JSON artifacts stamped with the config hash and seed."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.hash = cfg.config_hash()
        out.mkdir(parents=True, exist_ok=True)
        self.written: list[Path] = []

    def csv(self, name: str, schema: str, columns, rows) -> Path:
        path = self.out / name
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# sfpgalerkin-csv schema={schema} version={CSV_VERSION} "
                     f"config_hash={self.hash} seed={self.cfg.seed}\n")
            fh.write(",".join(columns) + "\n")
            for row in rows:
                fh.write(",".join(_fmt(x) for x in row) + "\n")
        self.written.append(path)
        return path

    def json(self, name: str, schema: str, payload: dict) -> Path:
        path = self.out / name
        doc = {"schema": schema, "version": CSV_VERSION, "config_hash": self.hash, "seed": self.cfg.seed,
               "config": self.cfg.echo()}
        doc.update(payload)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        self.written.append(path)
        return path


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _bundle(cfg: RunConfig) -> OperatorBundle:
    return OperatorBundle.assemble(cfg.trunc, cfg.noise_spec())


def _ensemble_config(cfg: RunConfig) -> EnsembleConfig:
    return EnsembleConfig(cfg.ensemble_size, cfg.seed, cfg.solver, cfg.initial.build(cfg.trunc),
                          workers=cfg.workers or default_workers(), chunk=cfg.chunk)


def _report_rows(times, table):
    return [[t, *row] for t, row in zip(times, table)]


# ---------------------------------------------------------------- experiments


def run_simulate(cfg: RunConfig, w: Writer) -> int:
    bundle = _bundle(cfg)
    g_in = cfg.initial.build(cfg.trunc)
    path = sample_path(cfg.noise_spec(), cfg.seed, cfg.solver.dt, cfg.solver.n_steps) if cfg.lam > 0 else None
    status, abort = EXIT_OK, None
    try:
        traj = integrate(g_in, bundle, path, cfg.solver, cfg.diagnostics)
    except InstabilityError as exc:
        traj, status, abort = exc.partial, EXIT_ABORTED, exc.step
    rows = _report_rows(traj.times, traj.table[0])
    w.csv("trajectory.csv", "trajectory", ["t", *ALL_COLUMNS], rows)
    b = get_basis(cfg.trunc)
    rho = traj.table[0][:, ALL_COLUMNS.index("rho")]
    summary = {
        "experiment": "simulate",
        "aborted": abort is not None,
        "abort_step": abort,
        "captures": len(traj.times),
        "initial": dict(zip(ALL_COLUMNS, traj.table[0][0])),
        "final": dict(zip(ALL_COLUMNS, traj.table[0][-1])),
        "max_mass_deviation": float(np.nanmax(np.abs(rho - rho[0]))),
    }
    w.json("summary.json", "simulate-summary", summary)
    if traj.snapshots:
        manifest = [[*map(int, b.k[i]), *map(int, b.l[i])] for i in range(b.dim)]
        snaps = [{"t": t, "re": G[0].real, "im": G[0].imag} for t, G in sorted(traj.snapshots.items())]
        w.json("snapshots.json", "snapshots", {"index_columns": [f"k{a}" for a in range(b.N)] +
                                              [f"l{a}" for a in range(b.N)],
                                              "index": manifest, "snapshots": snaps})
    return status


def _ensemble_table(res) -> tuple[list[str], list]:
    cols = ["t"]
    data = [res.times]
    for c in REPORT_COLUMNS:
        cols += [f"mean_{c}", f"se_{c}"]
        data += [res.mean(c), res.stderr(c)]
    return cols, [list(r) for r in zip(*data)]


def run_ensemble_cmd(cfg: RunConfig, w: Writer) -> int:
    bundle = _bundle(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_ensemble(_ensemble_config(cfg), bundle, cfg.diagnostics)
    cols, rows = _ensemble_table(res)
    w.csv("ensemble.csv", "ensemble-mean", cols, rows)
    margins = check_termwise(res.traj, cfg.lam, cfg.trunc.N)
    reg = check_regularization(res.traj, min(1.0, cfg.solver.t_end))
    w.json("summary.json", "ensemble-summary", {
        "experiment": "ensemble",
        "size": cfg.ensemble_size,
        "aborted": res.aborted,
        "termwise_min_margin": {k: margins.min_margin(k) for k in margins.margins} if len(margins.times) else {},
        "regularization_constant": reg.bound_constant(),
    })
    return EXIT_ABORTED if res.aborted else EXIT_OK


def run_decay_fit(cfg: RunConfig, w: Writer) -> int:
    bundle = _bundle(cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = run_ensemble(_ensemble_config(cfg), bundle, cfg.diagnostics)
    q = cfg.fit_quantity
    mean, se = res.mean(q), res.stderr(q)
    w.csv("decay.csv", "decay-series", ["t", f"mean_{q}", f"se_{q}"], zip(res.times, mean, se))
    payload = {"experiment": "decay-fit", "quantity": q, "aborted": res.aborted}
    try:
        payload["fit"] = fit_decay(res.times, mean, cfg.fit_window, cfg.fit_floor).as_dict()
    except DecayFitError as exc:
        payload["fit"] = None
        payload["fit_error"] = str(exc)
    small = TruncationSpec(cfg.trunc.N, min(cfg.trunc.m_x, 4), min(cfg.trunc.m_v, 4))
    if small.dim <= 2000:
        payload["deterministic_rate_baseline"] = hypocoercive_rate(small)
    w.json("fit.json", "decay-fit", payload)
    if res.aborted:
        return EXIT_ABORTED
    return EXIT_OK if payload["fit"] is not None else EXIT_FAILED


def run_invariant(cfg: RunConfig, w: Writer) -> int:
    bundle = _bundle(cfg)
    est = estimate_invariant(_ensemble_config(cfg), bundle, cfg.invariant_T, cfg.burn_in, cfg.snapshots,
                             cfg.clip)
    w.csv("invariant.csv", "invariant-functionals", ["name", "mean", "stderr"],
          zip(est.names, est.mean, est.stderr))
    payload = {"experiment": "invariant", **est.as_dict()}
    noise = cfg.noise_spec()
    canonical = all(isinstance(f, Constant) for f in noise.fields) and cfg.trunc.m_x == 0
    if canonical and cfg.initial.preset == "ground" and cfg.lam < 1:
        payload["closed_form_norm_sq"] = stationary_norm_mean(cfg.lam, cfg.trunc.N) * cfg.initial.mass ** 2
    w.json("invariant.json", "invariant", payload)
    return EXIT_OK


def run_mixing(cfg: RunConfig, w: Writer) -> int:
    bundle = _bundle(cfg)
    g1 = cfg.initial.build(cfg.trunc)
    g2 = cfg.mixing_initial.build(cfg.trunc)
    ec = _ensemble_config(cfg)
    res = mixing_experiment(ec, bundle, g1, g2, cfg.mixing_window, cfg.mixing_floor)
    w.csv("mixing.csv", "mixing", ["t", "mean_sq_diff", "se"], zip(res.times, res.mean_sq_diff, res.stderr))
    w.json("mixing.json", "mixing", {"experiment": "mixing", **res.as_dict()})
    return EXIT_OK if res.fit is not None else EXIT_FAILED


def run_validate(cfg: RunConfig, w: Writer) -> int:
    results = checks.run_all(cfg.trunc, cfg.noise_spec(), cfg.diagnostics)
    w.csv("validate.csv", "validate", ["check", "value", "tol", "passed"],
          [[r.name.replace(",", ";"), r.value, r.tol, r.passed] for r in results])
    w.json("validate.json", "validate", {"experiment": "validate", "checks": [r.as_dict() for r in results],
                                        "all_passed": all(r.passed for r in results)})
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.value:.3g} <= {r.tol:.0e})")
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILED


def run_oracle_compare(cfg: RunConfig, w: Writer) -> int:
    """PDE mean velocity against a particle cloud driven by the same path."""
    if cfg.initial.preset != "ground":
        raise ConfigError("oracle-compare starts from the Maxwellian; use preset = 'ground'", "initial.preset")
    noise = cfg.noise_spec()
    steps, dt = cfg.solver.n_steps, cfg.solver.dt
    path = sample_path(noise, cfg.seed, dt, steps)
    bundle = _bundle(cfg)
    g_in = cfg.initial.build(cfg.trunc)
    pde_mean = {}

    def on_capture(step, t, G, live):
        pde_mean[step] = pde_moments(G[0], cfg.trunc)[1]

    status = EXIT_OK
    try:
        traj = integrate(g_in, bundle, path, cfg.solver, cfg.diagnostics, on_capture=on_capture)
        final_pde = traj.final_state(cfg.trunc)
    except InstabilityError:
        return EXIT_ABORTED
    cloud = ParticleEnsemble.maxwellian(cfg.particle_count, cfg.trunc.N, cfg.particle_seed)
    run = simulate_langevin(cloud, path, cfg.lam, dt, steps, noise, seed=derive_seed(cfg.seed, 1),
                            diffusion=cfg.diffusion, exact_decay=cfg.exact_decay)
    N = cfg.trunc.N
    rows, worst = [], 0.0
    for step in sorted(pde_mean):
        u, up = pde_mean[step], run.mean_v[step]
        d = float(np.max(np.abs(u - up)))
        worst = max(worst, d)
        rows.append([step * dt, *u, *up, d])
    cols = ["t"] + [f"u_pde_{a}" for a in range(N)] + [f"u_particles_{a}" for a in range(N)] + ["discrepancy"]
    w.csv("oracle.csv", "oracle-compare", cols, rows)
    bound = 3.0 * (dt + cfg.particle_count ** -0.5)
    w.json("oracle.json", "oracle-compare", {
        "experiment": "oracle-compare",
        "max_discrepancy": worst,
        "bound": bound,
        "within_bound": worst <= bound,
        "final_moments": compare_moments(final_pde, run.final).as_dict(),
    })
    return status


RUNNERS = {
    "simulate": run_simulate,
    "ensemble": run_ensemble_cmd,
    "decay-fit": run_decay_fit,
    "invariant": run_invariant,
    "mixing": run_mixing,
    "validate": run_validate,
    "oracle-compare": run_oracle_compare,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sfpg", description="Galerkin solver for the stochastic kinetic "
                                "Fokker-Planck equation on the torus.")
    p.add_argument("experiment", choices=EXPERIMENTS, nargs="?",
                   help="experiment to run (defaults to the config's 'experiment' key)")
    p.add_argument("--config", type=Path, help="TOML run configuration (defaults apply when omitted)")
    p.add_argument("--out", type=Path, help="output directory (overrides 'out')")
    p.add_argument("--seed", type=int, help="unsigned 64-bit base seed (overrides 'seed')")
    p.add_argument("--workers", type=int, help="ensemble worker threads; 0 uses every core")
    p.add_argument("--override-lambda", action="store_true", help="allow lambda >= 1")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
        if args.workers is not None and args.workers < 0:
            raise ConfigError("workers must be >= 0", "--workers")
        overrides = dict(seed=args.seed, out=str(args.out) if args.out else None, workers=args.workers,
                         override_lambda=args.override_lambda, experiment=args.experiment)
        cfg = load_config(args.config, **overrides) if args.config else parse_config("", **overrides)
        writer = Writer(cfg, Path(cfg.out))
        status = RUNNERS[cfg.experiment](cfg, writer)
    except ConfigError as exc:
        print(f"sfpg: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError) as exc:
        print(f"sfpg: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in writer.written:
        print(f"wrote {p}")
    if status == EXIT_ABORTED:
        print("sfpg: trajectory aborted (non-finite or exploding coefficients)", file=sys.stderr)
    elif status != EXIT_OK:
        print(f"sfpg: {cfg.experiment} reported failures", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
