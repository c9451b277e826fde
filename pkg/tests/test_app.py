import json

import pytest

from app import build_parser, main
from ui.plots import gnuplot_script
from ui.styles import metric_card, summary_card


def write_config(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


SMALL = "mesh_size=30\ndt=0.001\nhorizon=0.02\ncoefficients=linear\nstochastic=true\nchannels=4\n"


def test_simulate_command(tmp_path, capsys):
    config = write_config(tmp_path / "run.env", SMALL)
    out = tmp_path / "out"
    code = main(["simulate", "--config", config, "--out", str(out), "--seed", "5", "--paths", "2"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 5
    assert manifest["config"]["paths"] == 2
    assert "simulate  [OK]" in capsys.readouterr().out


def test_emit_plots_flag(tmp_path):
    config = write_config(tmp_path / "run.env", SMALL)
    out = tmp_path / "out"
    assert main(["simulate", "--config", config, "--out", str(out), "--emit-plots"]) == 0
    assert (out / "trajectory.gp").exists()


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("OBSTACLE_SPDE_OUTPUT_DIR", str(tmp_path / "env"))
    config = write_config(tmp_path / "c.env", "mesh_size=20\nhorizon=0.01\nobstacle=inactive\n")
    assert main(["verify", "--config", config]) == 0
    assert (tmp_path / "env" / "verify.json").exists()


def test_invalid_config_exit_code(tmp_path, capsys):
    config = write_config(tmp_path / "bad.env", "mesh_size=30\nmesh_sise=40\n")
    assert main(["simulate", "--config", config, "--out", str(tmp_path)]) == 2
    assert "mesh_sise" in capsys.readouterr().out


def test_compare_inverted_hypotheses_exit_code(tmp_path):
    first = write_config(tmp_path / "a.env", SMALL)
    second = write_config(tmp_path / "b.env", SMALL + "f_shift=-0.5\n")
    assert main(["compare", "--config", first, "--config-prime", second, "--out", str(tmp_path)]) == 2


def test_compare_different_noise_coefficient_exit_code(tmp_path):
    base = "mesh_size=30\ndt=0.001\nhorizon=0.02\nstochastic=true\nchannels=4\n"
    first = write_config(tmp_path / "a.env", base + "coefficients=zero\nobstacle_scale=0.2\n")
    second = write_config(tmp_path / "b.env", base + "coefficients=forcing\nobstacle_scale=0.25\n")
    assert main(["compare", "--config", first, "--config-prime", second, "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "compare.json").exists()


def test_compare_ordered_configs(tmp_path):
    first = write_config(tmp_path / "a.env", SMALL)
    second = write_config(tmp_path / "b.env", SMALL + "f_shift=0.5\nxi_shift=0.1\n")
    assert main(["compare", "--config", first, "--config-prime", second, "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "compare.json").read_text())
    assert payload["solutions"]["max_violation"] <= 1e-8


def test_converge_command(tmp_path):
    config = write_config(tmp_path / "c.env", "mesh_size=30\nhorizon=0.3\nschedule=10,100,1000\n")
    assert main(["converge", "--config", config, "--out", str(tmp_path)]) == 0
    assert (tmp_path / "converge.csv").exists()


def test_parser_requires_prime_for_compare():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["compare", "--config", "a.env"])


def test_summary_card_text():
    card = summary_card("converge", {"violation_slope": None, "scheme_fault": False, "mass": 0.5}, 0)
    assert "[OK]" in card
    assert "undefined" in card
    assert metric_card("mass", 0.5, delta=-0.1).endswith("(-0.1)")


def test_gnuplot_script_columns():
    script = gnuplot_script("converge.csv", ["n", "violation_norm", "skorokhod"], "n", ["skorokhod"], "converge")
    assert "using 1:3" in script
    assert "set logscale xy" in script
    with pytest.raises(ValueError):
        gnuplot_script("converge.csv", ["n"], "n", ["missing"], "converge")
