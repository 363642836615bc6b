import json

import pytest
import yaml

from polyuq.cli import main
from polyuq.config import EXPERIMENTS, bundled_config, config_digest, load_config, parse_config
from polyuq.exceptions import ConfigError

SMALL_MLMC = {"experiment": "mlmc-convergence", "p": [1], "max_level": 3, "seed": 5,
              "mesh": {"source": "cartesian", "n0": 2}}


def _config(tmp_path, data, name="c.yaml"):
    f = tmp_path / name
    f.write_text(yaml.safe_dump(data))
    return str(f)


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_bundled_configs_validate(name):
    cfg = load_config(bundled_config(name))
    assert cfg.experiment == name


@pytest.mark.parametrize("data", [
    {"experiment": "mlmc-convergence", "bogus": 1},
    {"experiment": "mlmc-convergence", "mesh": {"n0": 2, "shape": "x"}},
    {"experiment": "nope"},
    {"experiment": "mlmc-convergence", "p": [0]},
    {"experiment": "mlmc-convergence", "min_level": 4, "max_level": 2},
    {"experiment": "mlmc-convergence", "p": [1, 2], "max_level": {1: 3}},
    {"experiment": "mlmc-convergence", "tolerances": {"speed": 1}},
    {"experiment": "mlmc-convergence", "solver": "magic"},
    {"experiment": "mlmc-convergence", "coefficient": {"model": "lognormal"}},
    {"experiment": "qoi-convergence", "p": [1, 2], "mesh": {"grading": {1: [1.0, 1.0]}}},
    {"experiment": "qoi-convergence", "mesh": {"grading": {1: [1.0]}}},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_per_order_grading():
    cfg = parse_config({"experiment": "qoi-convergence", "p": [1, 3],
                        "mesh": {"grading": {"1": [1.5, -1], 3: [3, -1]}}})
    assert cfg.mesh.grading == {1: [1.5, -1.0], 3: [3.0, -1.0]}


def test_config_digest_is_stable():
    a, b = parse_config(dict(SMALL_MLMC)), parse_config(dict(SMALL_MLMC))
    assert config_digest(a) == config_digest(b)
    assert config_digest(a) != config_digest(parse_config({**SMALL_MLMC, "seed": 6}))


def test_exit_code_config_error(tmp_path, capsys):
    bad = _config(tmp_path, {**SMALL_MLMC, "unknown_key": 3})
    assert main(["mlmc-convergence", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "unknown key" in capsys.readouterr().err
    assert main(["mlmc-convergence", "--config", str(tmp_path / "missing.yaml")]) == 2
    mismatch = _config(tmp_path, SMALL_MLMC, "m.yaml")
    assert main(["samples-table", "--config", mismatch, "--out", str(tmp_path / "o")]) == 2
    assert main(["not-an-experiment"]) == 2


def test_exit_code_bad_mesh_file(tmp_path):
    mesh = tmp_path / "bad.mesh"
    mesh.write_text("polymesh 1\nV 2\n0 0\n")
    cfg = _config(tmp_path, {**SMALL_MLMC, "mesh": {"source": "files", "files": [str(mesh)]}})
    assert main(["mlmc-convergence", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_exit_code_numerical_failure(tmp_path, capsys):
    cfg = _config(tmp_path, {"experiment": "samples-table", "p": [1], "max_level": 6,
                             "max_count": 10})
    assert main(["samples-table", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_manifest_and_outputs(tmp_path):
    out = tmp_path / "run"
    cfg = _config(tmp_path, SMALL_MLMC)
    assert main(["mlmc-convergence", "--config", cfg, "--out", str(out), "--seed", "9", "-q"]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["version"].startswith("v")
    assert manifest["config_sha256"] == config_digest(load_config(cfg, {"seed": 9}))
    header = (out / "results.csv").read_text().splitlines()[0]
    assert header == "method,p,L,level,M,N,cost,error_h1,error_qoi,var_level"
    assert (out / "results.dat").read_text().startswith("#")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["experiment"] == "mlmc-convergence"


def test_reruns_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, SMALL_MLMC)
    for d in ("a", "b"):
        assert main(["mlmc-convergence", "--config", cfg, "--out", str(tmp_path / d), "-q"]) == 0
    for name in ("results.csv", "results.dat", "summary.json", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_samples_table_output(tmp_path):
    out = tmp_path / "s"
    assert main(["samples-table", "--out", str(out), "-q"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["table"]["1"]["6"]["mlmc"] == [1024, 1024, 576, 256, 100, 36]
    assert summary["complexity"]["1"]["r2"] >= 0.98
