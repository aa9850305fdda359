import csv
import json
import logging
import math

import numpy as np
import pytest
from scipy.special import gammaln

from logbalance import __version__
from logbalance.cli import main, model_path
from logbalance.config import ConfigError, ExperimentConfig
from logbalance.solver import load_model

SMALL_CONFIG = {
    "n_trunc": 520, "x_max": 300.0, "a_grid": [10.0, 50.0, 100.0],
    "x_grid": [20.0, 40.0, 80.0, 120.0], "poisson_a": [10.0, 20.0, 40.0], "poisson_dps": 20,
}
SMALL = []


@pytest.fixture(scope="module", autouse=True)
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.json"
    path.write_text(json.dumps(SMALL_CONFIG))
    SMALL[:] = ["--config", str(path)]
    yield path


def read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith(f"# logbalance {__version__} command=")
    rows = list(csv.reader(lines[1:]))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["solve", "--out", str(out), "--beta", "0,0.5"] + SMALL) == 0
    return out


# -- configuration ----------------------------------------------------------------


def test_defaults_valid():
    cfg = ExperimentConfig()
    assert cfg.betas == [0.0, 0.3, 0.6, 0.9] and cfg.workers == 1


@pytest.mark.parametrize("field,value", [
    ("betas", [1.2]), ("betas", []), ("x_max", 5.0), ("tol", 0.0), ("workers", 0),
    ("a_grid", [500.0]), ("x_grid", []), ("m_grid", [1.02]), ("poisson_dps", 5),
])
def test_validation_names_field(field, value):
    with pytest.raises(ConfigError, match=field):
        ExperimentConfig.from_dict({field: value})


def test_unknown_field():
    with pytest.raises(ConfigError, match="bogus"):
        ExperimentConfig.from_dict({"bogus": 1})


def test_load_and_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"betas": [0.25], "x_max": 300}))
    cfg = ExperimentConfig.load(path)
    assert cfg.betas == [0.25] and cfg.x_max == 300.0
    assert cfg.override(tol=None) is cfg
    assert cfg.override(tol=1e-8).tol == 1e-8
    with pytest.raises(ConfigError, match="betas"):
        cfg.override(betas=[2.0])


def test_digest_ignores_outputs():
    a = ExperimentConfig()
    assert a.digest() == a.override(outputs="elsewhere", workers=4).digest()
    assert a.digest() != a.override(tol=1e-9).digest()
    assert ExperimentConfig.from_dict(json.loads(a.to_json())) == a


# -- exit codes -----------------------------------------------------------------------


def test_bad_beta_exit_2(tmp_path, capsys):
    assert main(["solve", "--out", str(tmp_path), "--beta", "1.2"]) == 2
    assert "betas" in capsys.readouterr().err


def test_empty_grid_exit_2(tmp_path, capsys):
    assert main(["theory", "--out", str(tmp_path), "--m-grid", ""]) == 2
    assert "m_grid" in capsys.readouterr().err


def test_unreadable_config_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{ nope")
    assert main(["solve", "--config", str(bad)]) == 2
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2


def test_parser_rejects_garbage(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["solve", "--beta", "x,y"])
    assert info.value.code == 2


def test_max_iter_exit_1_keeps_partial(tmp_path):
    assert main(["solve", "--out", str(tmp_path), "--beta", "0.5", "--max-iter", "2"] + SMALL) == 1
    model = load_model(tmp_path / "models" / "beta_0.5000.json")
    assert not model.report.converged
    header, rows = read_csv(tmp_path / "solve.csv")
    assert rows[0][header.index("converged")] == "0"


def test_corrupt_model_exit_2(tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    assert main(["diagnose", "--out", str(tmp_path), "--model", str(bad)]) == 2


# -- subcommands ------------------------------------------------------------------------


def test_solve_outputs(solved_dir):
    header, rows = read_csv(solved_dir / "solve.csv")
    assert [r[0] for r in rows] == ["0", "0.5"]
    assert all(r[header.index("converged")] == "1" for r in rows)
    m0 = load_model(solved_dir / "models" / "beta_0.0000.json")
    top = min(m0.trusted_degree, 50)
    assert np.abs(m0.lam[: top + 1] - gammaln(np.arange(top + 1) + 1.0)).max() < 1e-6
    schema = (solved_dir / "SCHEMA.md").read_text()
    for col in header:
        assert f"`{col}`" in schema


def test_solve_warm_start_not_slower(tmp_path, solved_dir):
    _, warm = read_csv(solved_dir / "solve.csv")
    assert main(["solve", "--out", str(tmp_path), "--beta", "0.5"] + SMALL) == 0
    _, cold = read_csv(tmp_path / "solve.csv")
    assert int(warm[1][1]) <= int(cold[0][1])


def test_diagnose_flags_untrusted(tmp_path, solved_dir, caplog):
    model = str(model_path(ExperimentConfig(outputs=str(solved_dir)), 0.0))
    with caplog.at_level(logging.WARNING, logger="logbalance"):
        code = main(["diagnose", "--out", str(tmp_path), "--model", model, "--a-grid", "10,100,160"] + SMALL)
    assert code == 0
    assert "trusted range" in caplog.text
    header, rows = read_csv(tmp_path / "diagnostics.csv")
    flags = [r[header.index("flag")] for r in rows]
    assert flags == ["ok", "ok", "untrusted"]
    d2 = [float(r[header.index("lambda_d2")]) for r in rows]
    assert all(v > 0 for v in d2)
    for r in rows[:2]:
        a = float(r[header.index("a")])
        oracle = math.exp(gammaln(a + 1.0) + a - a * math.log(a) - 0.5 * math.log(a))
        assert float(r[header.index("nu_classic")]) == pytest.approx(oracle, rel=1e-4)


def test_omega_and_compare(tmp_path, solved_dir, capsys):
    args = ["--out", str(solved_dir), "--beta", "0,0.5"] + SMALL
    assert main(["omega"] + args) == 0
    out = capsys.readouterr().out
    assert "omega increasing in beta: PASS" in out and "conjectured 0.5" in out
    header, rows = read_csv(solved_dir / "omega.csv")
    assert abs(float(rows[0][header.index("omega_hat")])) < 1e-3
    assert main(["compare"] + args) == 0
    assert "PASS" in capsys.readouterr().out
    header, rows = read_csv(solved_dir / "compare.csv")
    assert header == ["beta1", "beta2", "i", "log_k"] and len(rows) > 10


def test_compare_needs_two_betas(solved_dir):
    assert main(["compare", "--out", str(solved_dir), "--beta", "0"] + SMALL) == 2


def test_theory_command(tmp_path, capsys):
    assert main(["theory", "--out", str(tmp_path), "--m-grid", "1,1.002,1.004,1.006"] + SMALL) == 0
    header, rows = read_csv(tmp_path / "theory.csv")
    assert float(rows[0][header.index("p")]) == pytest.approx(0.159155, abs=1e-4)
    assert float(rows[0][header.index("q")]) == pytest.approx(0.159155, abs=1e-4)
    assert "p_slope" in capsys.readouterr().out


def test_poisson_command(solved_dir, capsys):
    args = ["poisson", "--out", str(solved_dir), "--beta", "0"] + SMALL
    assert main(args) == 0
    assert "slope" in capsys.readouterr().out
    header, rows = read_csv(solved_dir / "poisson.csv")
    assert header[-1] == "dps" and len(rows) == 12
    assert all(int(r[-1]) >= 20 for r in rows)


# -- determinism ------------------------------------------------------------------------------


@pytest.mark.parametrize("command,extra", [
    ("solve", ["--beta", "0,0.5"]),
    ("theory", ["--m-grid", "1,1.005,1.01"]),
    ("diagnose", ["--beta", "0.5", "--a-grid", "10,80"]),
])
def test_byte_identical_runs(tmp_path, command, extra):
    names = {"solve": "solve.csv", "theory": "theory.csv", "diagnose": "diagnostics.csv"}
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main([command, "--out", str(out)] + extra + SMALL) == 0
        outs.append((out / names[command]).read_bytes())
    assert outs[0] == outs[1]
