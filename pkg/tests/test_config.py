import numpy as np
import pytest

from sfpgalerkin.basis import get_basis
from sfpgalerkin.config import ConfigError, InitialSpec, load_config, parse_config
from sfpgalerkin.noise import FourierMode
from sfpgalerkin.solver import EXP_EM, HEUN_STRAT


def test_empty_config_uses_defaults():
    cfg = parse_config("")
    assert cfg.experiment == "simulate" and cfg.seed == 0
    assert (cfg.trunc.N, cfg.trunc.m_x, cfg.trunc.m_v) == (1, 4, 4)
    assert cfg.solver.scheme == EXP_EM and cfg.lam == 0.0
    assert cfg.workers == 0 and cfg.initial.preset == "ground"


def test_full_document(tmp_path):
    text = """
experiment = "ensemble"
seed = 12
[model]
N = 1
m_x = 3
m_v = 5
[noise]
lambda = 0.5
[[noise.fields]]
type = "constant"
vector = [0.6]
[[noise.fields]]
type = "fourier"
mode = [1]
amplitude = [[0.02, 0.01]]
[solver]
scheme = "heun-stratonovich"
dt = 0.002
t_end = 0.1
[ensemble]
size = 8
workers = 2
"""
    p = tmp_path / "c.toml"
    p.write_text(text)
    cfg = load_config(p)
    assert cfg.experiment == "ensemble" and cfg.seed == 12 and cfg.ensemble_size == 8
    assert cfg.solver.scheme == HEUN_STRAT and cfg.solver.n_steps == 50
    f = cfg.noise_spec().fields[1]
    assert isinstance(f, FourierMode) and f.amplitude == (0.02 + 0.01j,)


def test_lambda_at_or_above_one_rejected_with_reason():
    with pytest.raises(ConfigError, match="lambda < 1") as exc:
        parse_config("[noise]\nlambda = 1.2\n")
    assert exc.value.line == 2 and exc.value.key == "noise.lambda"
    assert parse_config("[noise]\nlambda = 1.2\n", override_lambda=True).lam == 1.2


def test_oversized_noise_rejected():
    text = '[noise]\nlambda = 0.1\n[[noise.fields]]\ntype = "constant"\nvector = [1.5]\n'
    with pytest.raises(ConfigError, match="<= 1"):
        parse_config(text)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("seed = 1\n[solver]\ndt = 0.01\nstep = 3\n")
    assert exc.value.line == 4 and "solver.step" in str(exc.value)


def test_malformed_toml_reports_line():
    with pytest.raises(ConfigError) as exc:
        parse_config("seed = 1\n[solver\n")
    assert exc.value.line == 2


@pytest.mark.parametrize("text", [
    'experiment = "fly"', "seed = -1", '[solver]\nscheme = "rk4"', "[solver]\ndt = 0",
    "[ensemble]\nsize = 1", '[diagnostics]\nquantity = "nope"', "[diagnostics]\ngamma = 5.0",
    '[initial]\npreset = "single-mode"\nk = [9]\nl = [1]', "[model]\nm_v = -1", 'seed = "x"',
    "[diagnostics]\nwindow = [3.0, 1.0]", '[diagnostics]\nfloor = "median"',
])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_mixing_masses_must_match():
    text = 'experiment = "mixing"\n[initial]\nmass = 1.0\n[mixing.initial]\nmass = 2.0\n'
    with pytest.raises(ConfigError, match="equal masses"):
        parse_config(text)


def test_presets():
    cfg = parse_config("[model]\nm_x = 2\nm_v = 3\n")
    b = get_basis(cfg.trunc)
    g = InitialSpec("single-mode", (1,), (2,), 0.25, 2.0).build(cfg.trunc)
    assert g.coeffs[b.ground] == 2.0
    assert g.coefficient((1,), (2,)) == 0.25 and g.coefficient((-1,), (2,)) == 0.25
    r = InitialSpec("random", amplitude=0.5, mass=1.0, seed=3).build(cfg.trunc)
    c = r.coeffs.copy()
    c[b.ground] = 0
    assert np.linalg.norm(c) == pytest.approx(0.5) and r.hermitian_defect() < 1e-15


def test_overrides_and_hash():
    base = parse_config("seed = 1\n")
    assert parse_config("seed = 1\n", seed=5).seed == 5
    # output location and thread count do not enter the hash
    assert parse_config("seed = 1\n", out="elsewhere", workers=3).config_hash() == base.config_hash()
    assert parse_config("seed = 1\n", seed=2).config_hash() != base.config_hash()
    # filling in defaults explicitly keeps the hash
    assert parse_config("seed = 1\n[model]\nN = 1\n").config_hash() == base.config_hash()
    assert base.with_overrides(experiment="validate").experiment == "validate"
    assert "out" not in base.echo()
