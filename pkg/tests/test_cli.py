import json
import math
import subprocess
import sys

import pytest

from gmclab import __version__
from gmclab.cli import EXPERIMENTS, SUMMARY_SCHEMA, build_parser, eval_number, main


def run(tmp_path, *args):
    code = main([*args, "--out", str(tmp_path)])
    return code


def summary(tmp_path, experiment):
    return json.loads((tmp_path / experiment / "summary.json").read_text())


def test_invalid_gamma_exits_2(tmp_path, capsys):
    assert run(tmp_path, "scaling", "--gamma", "2.5") == 2
    assert "(0, 2)" in capsys.readouterr().err
    assert not (tmp_path / "scaling").exists()


def test_precondition_error_exits_2(tmp_path, capsys):
    assert run(tmp_path, "scaling", "--gamma", "1.8", "--p", "0.6") == 2
    assert "lower p" in capsys.readouterr().err


@pytest.mark.parametrize("flags", [
    ("--samples", "0"), ("--r", "1.5"), ("--region", "1,0"), ("--seed", "-3"), ("--epsilon-list", "0.1,-0.1"),
])
def test_range_validation(tmp_path, flags):
    assert run(tmp_path, "scaling", *flags) == 2


def test_ineq_default_budget(tmp_path):
    assert run(tmp_path, "ineq") == 0
    folder = tmp_path / "ineq"
    rows = (folder / "fuzz_summary.csv").read_text().splitlines()
    assert rows[0] == "proposition,cases,violations,worst_relative_slack"
    assert len(rows) == 5
    assert all(line.split(",")[1:3] == ["100000", "0"] for line in rows[1:])
    assert (folder / "counterexamples.csv").read_text().count("\n") == 1


def test_scaling_reports_expected_ratio(tmp_path):
    code = run(tmp_path, "scaling", "--gamma", "1", "--p", "0.8", "--r", "0.5", "--epsilon", "2^-3",
               "--samples", "2000", "--lambda-shift", "1.5", "--seed", "0")
    assert code == 0
    result = summary(tmp_path, "scaling")["results"]["summary"]
    assert result["expected_ratio"] == pytest.approx(2 ** -(2.5 * 0.8 - 0.64), rel=1e-12)
    assert result["expected_ratio"] == pytest.approx(0.3897, abs=2e-4)
    header = (tmp_path / "scaling" / "scaling.csv").read_text().splitlines()[0]
    assert header == "scale,epsilon,estimate,stderr,method"


def test_summary_schema(tmp_path):
    assert run(tmp_path, "first-moment", "--region", "-1,1,0,1", "--epsilon-list", "2^-4,2^-5,2^-6") == 0
    s = summary(tmp_path, "first-moment")
    assert set(s) == {"schema_version", "experiment", "version", "seed", "config", "wall_time_seconds",
                      "passed", "checks", "results"}
    assert s["schema_version"] == SUMMARY_SCHEMA
    assert s["version"].startswith(__version__)
    assert s["config"]["region"] == "-1,1,0,1"
    assert s["config"]["epsilon_list"] == [2**-4, 2**-5, 2**-6]
    assert s["results"]["slope"] == 0.0
    values = s["results"]["values"]
    assert values[-1] == pytest.approx(4.0, abs=1e-12)


def test_config_file_with_flag_override(tmp_path):
    config = tmp_path / "run.yaml"
    config.write_text("gamma: 1.8\np: 1.0\nregion: '-1,1,0,1'\nepsilon-list: [2^-40, 2^-45, 2^-50]\n")
    assert run(tmp_path, "first-moment", "--config", str(config), "--gamma", "1") == 0
    s = summary(tmp_path, "first-moment")
    assert s["config"]["gamma"] == 1.0
    assert s["config"]["epsilon_list"] == [2**-40, 2**-45, 2**-50]
    assert s["results"]["slope"] == 0.0
    assert run(tmp_path, "first-moment", "--config", str(config)) == 0
    assert summary(tmp_path, "first-moment")["results"]["slope"] == pytest.approx(1.8**2 / 2 - 1, rel=1e-6)


def test_config_rejects_unknown_keys(tmp_path, capsys):
    config = tmp_path / "bad.yaml"
    config.write_text("gama: 1.0\n")
    assert run(tmp_path, "first-moment", "--config", str(config)) == 2
    assert "gama" in capsys.readouterr().err


def test_rerun_is_byte_identical(tmp_path):
    args = ["cross", "--mode", "sokoban", "--region", "-0.5,0.5,0,0.5", "--epsilon", "2^-4",
            "--samples", "200", "--lambda-shift", "0", "--strips", "4"]
    first, second = tmp_path / "a", tmp_path / "b"
    assert main([*args, "--out", str(first)]) in (0, 1)
    assert main([*args, "--out", str(second), "--workers", "4"]) in (0, 1)
    for csv_file in (first / "cross").glob("*.csv"):
        assert csv_file.read_bytes() == (second / "cross" / csv_file.name).read_bytes()


def test_cross_moment_mode(tmp_path):
    code = run(tmp_path, "cross", "--region", "-0.5,0.5,0,0.5", "--epsilon", "2^-4", "--samples", "100",
               "--lambda-shift", "0", "--noise", "zero", "--k", "1", "--q", "1")
    assert code == 0
    row = (tmp_path / "cross" / "cross.csv").read_text().splitlines()[1].split(",")
    # Zero field: the product of the two weight integrals, each 0.5 * 2 * sqrt(0.5).
    assert float(row[2]) == pytest.approx(0.5, rel=1e-12)


def test_negative_region_values_parse(tmp_path):
    assert run(tmp_path, "first-moment", "--region", "-1,1", "--gamma", "0.5") == 0
    assert summary(tmp_path, "first-moment")["config"]["region"] == "-1,1"


def test_eval_number():
    assert eval_number("2^-7") == 2**-7
    assert eval_number(" 0.25 ") == 0.25
    assert eval_number(3) == 3
    with pytest.raises(ValueError):
        eval_number("two")


def test_parser_lists_every_experiment():
    parser = build_parser()
    choices = parser._subparsers._group_actions[0].choices
    assert set(choices) == set(EXPERIMENTS)
    for name, sub in choices.items():
        assert ".csv" in sub.description


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "gmclab", "--version"], capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"gmclab {__version__}"
