import json
import subprocess
import sys

import numpy as np
import pytest

from gchjb import cli
from gchjb import validation
from gchjb.errors import ConfigError


def run(tmp_path, *argv):
    return cli.main([*argv, "--out", str(tmp_path)])


def data_files(path):
    """Every output file, with the wall-time field removed from run.json."""
    out = {}
    for f in sorted(path.iterdir()):
        text = f.read_text()
        if f.name == "run.json":
            doc = json.loads(text)
            doc.pop("wall_time")
            text = json.dumps(doc, sort_keys=True)
        out[f.name] = text
    return out


# -- configuration ------------------------------------------------------------------


def test_minimal_file_fills_defaults(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("domain=ball radius=1 n=2 r=1 h=0.01\n")
    cfg = cli.parse_config(p)
    assert (cfg["domain"], cfg["radius"], cfg["n"], cfg["r"], cfg["h"]) == ("ball", 1.0, 2, 1.0, 0.01)
    assert cfg["delta"] == 0.05
    assert cfg["tolerance"] == cli.OPTION_MAP["tolerance"].default


def test_negative_r_names_the_field(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("domain=ball radius=1 n=2 r=-1 h=0.01\n")
    with pytest.raises(ConfigError) as info:
        cli.parse_config(p)
    assert info.value.field == "r"
    assert info.value.exit_code == 2


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment line\ndomain=ball\nh=0.01  # trailing\n")
    assert cli.parse_config(p, {"h": "0.005"})["h"] == 0.005


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("domain=ball\n\nradius 2\n")
    with pytest.raises(ConfigError) as info:
        cli.parse_config(p)
    assert info.value.line == 3


def test_unknown_key_and_bad_value(tmp_path):
    with pytest.raises(ConfigError) as info:
        cli.parse_config_text("colour=red")
    assert info.value.field == "colour"
    with pytest.raises(ConfigError) as info:
        cli.parse_config(None, {"h": "fine"})
    assert info.value.field == "h"
    with pytest.raises(ConfigError):
        cli.parse_config(tmp_path / "missing.cfg")


def test_interval_forces_one_dimension():
    assert cli.parse_config(None, {"domain": "interval", "n": "2"})["n"] == 1


def test_self_check_agrees():
    assert cli.self_check() == []


def test_self_check_catches_drift(monkeypatch):
    opt = cli.OPTION_MAP["delta"]
    monkeypatch.setitem(cli.OPTION_MAP, "delta", cli.Option(opt.name, opt.parse, 0.1, opt.help))
    assert any(line.startswith("delta") for line in cli.self_check())


# -- subcommands --------------------------------------------------------------------


def test_solve_interval(tmp_path):
    assert run(tmp_path, "solve", "--domain", "interval", "--h", "0.0625") == 0
    rows = (tmp_path / "solution.csv").read_text().splitlines()
    assert rows[0] == "x1,u"
    meta = json.loads((tmp_path / "run.json").read_text())
    assert meta["status"] == "ok"
    assert meta["config"]["h"] == 0.0625
    assert meta["version"] == cli.__version__
    assert meta["residuals"]["final_residual"] <= 1e-10
    assert "wall_time" in meta
    assert (tmp_path / "residual_history.csv").exists()


def test_compare_eikonal_ball(tmp_path):
    assert run(tmp_path, "compare", "--fixture", "eikonal_ball", "--h", "0.0625") == 0
    header, row = (tmp_path / "compare.csv").read_text().splitlines()
    assert header == "h,error,error_over_h,threshold,passed"
    err = float(row.split(",")[1])
    assert err < 3 * 0.0625
    assert row.endswith("true")


def test_oracle_and_freeboundary(tmp_path):
    assert run(tmp_path / "o", "oracle", "--fixture", "ball", "--samples", "11") == 0
    doc = json.loads((tmp_path / "o" / "oracle.json").read_text())
    assert doc["interfaces"] == [1.0]
    assert len((tmp_path / "o" / "oracle_profile.csv").read_text().splitlines()) == 12
    assert run(tmp_path / "f", "freeboundary", "--fixture", "ball", "--h", "0.0625",
               "--label_method", "branch") == 0
    diag = json.loads((tmp_path / "f" / "diagnostics.json").read_text())
    assert abs(diag["interface"]["rho_hat"][0] - 1.0) < 0.125
    assert (tmp_path / "f" / "regions.csv").exists()


def test_validate_comparison_passes(tmp_path):
    code = run(tmp_path, "validate", "comparison", "--domain", "box", "--widths", "1,1",
               "--h", "0.125", "--trials", "10")
    assert code == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["passed"] and rep["checks"]["no_violations"]["value"] == 0


def test_validate_comparison_failing_trial(tmp_path, monkeypatch):
    """A solver that ignores the data breaks the ordering and must exit 1."""
    real = validation.sweep_solve
    rng = np.random.default_rng(0)

    def noisy(spec, grid, mask, config=None):
        res = real(spec, grid, mask, config)
        res.solution = res.solution + rng.uniform(0, 1, size=res.solution.shape)
        return res

    monkeypatch.setattr(validation, "sweep_solve", noisy)
    code = run(tmp_path, "validate", "comparison", "--domain", "box", "--widths", "1,1",
               "--h", "0.25", "--trials", "10")
    assert code == 1
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["checks"]["no_violations"]["value"] > 0
    assert any(r["violated"] for r in rep["runs"])
    assert json.loads((tmp_path / "run.json").read_text())["status"] == "fail"


def test_validate_unknown_study(tmp_path):
    assert run(tmp_path, "validate", "everything") == 2
    assert json.loads((tmp_path / "error.json").read_text())["field"] == "study"


def test_growth_contrast_from_cli(tmp_path):
    code = run(tmp_path, "validate", "growth", "--n", "1", "--r", "0", "--r_in", "0.25")
    assert code == 0


@pytest.mark.parametrize("argv", [
    ["solve", "--domain", "ball", "--radius", "1.5", "--h", "0.125"],
    ["dpp", "--domain", "ball", "--radius", "1", "--h", "0.25"],
    ["regularized", "--domain", "interval", "--h", "0.125", "--eps", "0.1"],
    ["freeboundary", "--fixture", "annulus_2piece", "--h", "0.0625"],
    ["validate", "comparison", "--domain", "box", "--widths", "1,1", "--h", "0.25", "--trials", "10",
     "--seed", "7"],
])
def test_reruns_are_byte_identical(tmp_path, argv):
    assert run(tmp_path / "a", *argv) == 0
    assert run(tmp_path / "b", *argv) == 0
    assert data_files(tmp_path / "a") == data_files(tmp_path / "b")


# -- errors and output directory ------------------------------------------------------


def test_config_error_exit_code_and_error_json(tmp_path, capsys):
    assert run(tmp_path, "solve", "--r", "-1") == 2
    doc = json.loads((tmp_path / "error.json").read_text())
    assert doc["error"] == "ConfigError" and doc["field"] == "r" and doc["exit_code"] == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1]) == doc


def test_no_convergence_exit_code(tmp_path):
    code = run(tmp_path, "solve", "--domain", "ball", "--radius", "2", "--h", "0.0625",
               "--max_sweeps", "2", "--accelerate", "false")
    assert code == 3
    doc = json.loads((tmp_path / "error.json").read_text())
    assert doc["error"] == "NoConvergence"
    assert doc["residual_history_length"] > 0
    assert (tmp_path / "residual_history.csv").exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HJB_OUTPUT_DIR", str(tmp_path / "env"))
    assert cli.main(["oracle", "--domain", "interval"]) == 0
    assert (tmp_path / "env" / "oracle.json").exists()


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "gchjb.cli", "solve", "--help"],
                         capture_output=True, text=True, check=True).stdout
    assert "--tolerance" in out and "default:" in out
