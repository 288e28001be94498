import json

import numpy as np
import pytest

from tposeen.cli import ConfigError, load_config, main
from tposeen.solver import load_field


def write_config(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


BASE = {"params": {"lambda": 1.0, "period": 2 * np.pi}}


def test_missing_lambda_is_a_config_error(tmp_path, capsys):
    path = write_config(tmp_path, {"params": {"period": 6.0}})
    assert main(["--config", str(path), "--out", str(tmp_path / "o"), "selfcheck"]) == 2
    assert "params.lambda" in capsys.readouterr().err


@pytest.mark.parametrize(
    "patch,field",
    [
        ({"grid": {"n": 63}}, "grid.n"),
        ({"forcing": {"amplitudes": {"x": 1.0}}}, "forcing.amplitudes.x"),
        ({"rays": [{"theta": 2.0, "radii": [1.0]}]}, "rays[0]"),
        ({"quadrature": {"nope": 1}}, "quadrature.nope"),
        ({"points": [[1.0, 2.0]]}, "points[0]"),
        ({"bogus": 1}, "bogus"),
    ],
)
def test_config_errors_name_the_field(tmp_path, patch, field):
    path = write_config(tmp_path, {**BASE, **patch})
    with pytest.raises(ConfigError) as exc:
        load_config(path)
    assert exc.value.path == field


def test_params_required_in_file(tmp_path):
    with pytest.raises(ConfigError, match="params"):
        load_config(write_config(tmp_path, {}))
    cfg = load_config(write_config(tmp_path, BASE))
    assert cfg["params"]["lambda"] == 1.0 and cfg["grid"]["n"] == 64


def test_selfcheck_deterministic(tmp_path):
    cfg = write_config(tmp_path, {**BASE, "selfcheck": {"cases": [[1.0, 2.0]], "n_samples": 5000}})
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["--config", str(cfg), "--seed", "7", "--out", str(out), "selfcheck"]) == 0
        outs.append(((out / "selfcheck.csv").read_bytes(), (out / "selfcheck.json").read_bytes()))
    assert outs[0] == outs[1]
    rep = json.loads(outs[0][1])
    assert rep["passed"] and rep["seed"] == 7


def test_kernel_eval_and_verify(tmp_path):
    cfg = write_config(tmp_path, {**BASE, "points": [[1.0, 0.0, 0.0], [-2.0, 0.5, 0.0]]})
    out = tmp_path / "k"
    assert main(["--config", str(cfg), "--out", str(out), "kernel", "eval"]) == 0
    text = (out / "kernels.csv").read_text().splitlines()
    assert len(text) == 3
    assert main(["--config", str(cfg), "--out", str(out), "kernel", "verify"]) == 0
    rep = json.loads((out / "kernel_verify.json").read_text())
    assert rep["truncation_violations"] == 0 and len(rep["truncation"]) == 40


def test_small_nonlinear_solve(tmp_path):
    cfg = write_config(tmp_path, {**BASE, "grid": {"n": 16, "half_length": 4.0}, "K_max": 2})
    out = tmp_path / "s"
    assert main(["--config", str(cfg), "--out", str(out), "solve", "nonlinear"]) == 0
    meta = json.loads((out / "solve_nonlinear.json").read_text())
    assert meta["meta"]["converged"] and meta["K_max"] == 2
    fld, params = load_field(out / "field_nonlinear.tposn")
    assert fld.grid.n == 16 and params.lam == 1.0
    assert np.max(np.abs(fld.modes[0])) > 0
