import csv
import io
import json
import subprocess
import sys

import pytest

from backup_cnot import cli
from backup_cnot.cli import ConfigError, RunSpec, main, parse_config, parse_config_text


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# --- configuration ------------------------------------------------------------------


def test_empty_config_is_ideal():
    spec = parse_config()
    assert spec == RunSpec()
    assert spec.noise().is_ideal
    assert (spec.trials, spec.seed, spec.max_retries) == (10_000, 0, 100)


@pytest.mark.parametrize(
    "values,key",
    [
        ({"eta_abs": "1.2"}, "eta_abs"),
        ({"zeta_abs": "-0.1"}, "zeta_abs"),
        ({"delta": "0.3rad"}, "delta"),
        ({"trials": "0"}, "trials"),
        ({"trials": "1e4"}, "trials"),
        ({"detector_efficiency": "0"}, "detector_efficiency"),
        ({"colour": "blue"}, "colour"),
        ({"input": "5"}, "input"),
        ({"sweep_param": "gamma"}, "sweep_param"),
        ({"k_d_re": "nan"}, "k_d_re"),
    ],
)
def test_config_errors_name_the_key(values, key):
    with pytest.raises(ConfigError, match=key):
        parse_config(values)


def test_flags_override_file():
    file_values = parse_config_text("# noisy point\ndelta = 0.3\neta_abs=0.9\n\n")
    spec = parse_config(file_values, {"delta": "0.5", "eta_abs": None})
    assert spec.delta == 0.5 and spec.eta_abs == 0.9


def test_malformed_line():
    with pytest.raises(ConfigError, match="line 2"):
        parse_config_text("delta=0.1\njust words\n")


def test_echo_round_trips():
    spec = parse_config({"eta_abs": "0.91", "eta_arg": "-0.3", "k_plus_im": "0.1", "sweep_param": "k_d_re", "input": "random", "mode": "sweep"})
    assert parse_config(parse_config_text(spec.to_config_text())) == spec
    assert parse_config(spec.echo()) == spec


def test_complex_parameters_from_polar_and_cartesian():
    spec = parse_config({"eta_abs": "0.5", "eta_arg": "1.5707963267948966", "k_d_re": "0.1", "k_d_im": "-0.2"})
    noise = spec.noise()
    assert noise.eta == pytest.approx(0.5j)
    assert noise.k_d == 0.1 - 0.2j


# --- check / enumerate / sample -----------------------------------------------------------


def test_check_ideal(capsys):
    code, out, _ = run_cli(capsys, "check")
    record = json.loads(out)
    assert code == 0
    assert record["success_probability"] == pytest.approx(1, abs=1e-12)
    assert record["worst_fidelity"] >= 1 - 1e-10
    assert "wall_time" not in record


def test_check_noisy(capsys):
    code, out, _ = run_cli(capsys, "check", "--eta_abs", "0.9", "--zeta-abs", "0.8", "--delta", "0.3", "--k_plus_re", "0.1", "--k_d_re", "0.2")
    record = json.loads(out)
    assert code == 0
    assert record["success_probability"] < 1
    assert record["config"]["zeta_abs"] == 0.8


def test_corrupted_extraction_table_exits_nonzero(capsys):
    code, out, _ = run_cli(capsys, "check", "--corrupt-extraction-table")
    assert code == 1
    assert json.loads(out)["passed"] is False


def test_enumerate_record(capsys):
    code, out, _ = run_cli(capsys, "enumerate", "--input", "bell-ancilla", "--k_d_im", "0.3", "--dump-state")
    record = json.loads(out)
    assert code == 0
    assert record["probability_total"] == pytest.approx(1, abs=1e-9)
    assert record["outcome_probabilities"]["beta-in-d"] > 0
    assert record["final_state"]["layout"]["subsystems"][-1] == ["ancilla", 2]


def test_sample_record(capsys):
    code, out, _ = run_cli(capsys, "sample", "--trials", "300", "--eta_abs", "0.9", "--input", "random", "--seed", "4")
    record = json.loads(out)
    assert code == 0
    assert set(record["z_scores"]) == {"success", "loss-T1", "loss-T2", "beta-in-d"}
    assert record["truncated"] == 0
    assert record["worst_fidelity"] >= 1 - 1e-10


def test_identical_spec_gives_identical_bytes(capsys):
    args = ("sample", "--trials", "150", "--eta_abs", "0.8", "--k_plus_im", "0.2", "--seed", "7", "--dump-state")
    _, first, _ = run_cli(capsys, *args)
    _, second, _ = run_cli(capsys, *args)
    _, threaded, _ = run_cli(capsys, *args, "--workers", "2")
    assert first == second == threaded


def test_output_record_reruns_exactly(capsys, tmp_path):
    _, first, _ = run_cli(capsys, "sample", "--trials", "50", "--zeta_abs", "0.7", "--seed", "11")
    echo = json.loads(first)["config"]
    cfg = tmp_path / "rerun.cfg"
    cfg.write_text(parse_config(echo).to_config_text())
    _, second, _ = run_cli(capsys, "sample", "--config", str(cfg))
    assert first == second


def test_timing_is_opt_in(capsys):
    _, out, _ = run_cli(capsys, "check", "--timing")
    assert json.loads(out)["wall_time"] > 0


def test_floats_keep_full_precision(capsys):
    _, out, _ = run_cli(capsys, "check", "--eta_abs", "0.9", "--zeta_abs", "0.8")
    record = json.loads(out)
    assert record["success_probability"] == pytest.approx((0.9 * 0.8) ** 2, abs=1e-14)


# --- sweep -------------------------------------------------------------------------------------


def read_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], [[float(x) for x in r] for r in rows[1:]]


def test_single_point_sweep_matches_check(capsys):
    _, check_out, _ = run_cli(capsys, "check", "--eta_abs", "1.0")
    code, out, _ = run_cli(capsys, "sweep", "--sweep_param", "eta_abs", "--sweep_min", "1.0", "--sweep_max", "1.0", "--sweep_steps", "1")
    header, rows = read_csv(out)
    assert code == 0
    assert header == ["value", "success_probability", "mean_attempts", "worst_fidelity"]
    assert len(rows) == 1
    check = json.loads(check_out)
    assert rows[0][1] == check["success_probability"]
    assert rows[0][3] == check["worst_fidelity"]


def test_k_d_sweep_is_monotone_with_constant_fidelity(capsys, tmp_path):
    target = tmp_path / "sweep.csv"
    code, out, _ = run_cli(capsys, "sweep", "--sweep_param", "k_d_re", "--sweep_min", "0", "--sweep_max", "0.5", "--sweep_steps", "6", "--out", str(target))
    assert code == 0 and out == ""
    _, rows = read_csv(target.read_text())
    assert [r[0] for r in rows] == pytest.approx([0, 0.1, 0.2, 0.3, 0.4, 0.5])
    probs = [r[1] for r in rows]
    assert all(b <= a for a, b in zip(probs, probs[1:]))
    assert all(abs(r[3] - 1) <= 1e-10 for r in rows)


def test_sweep_without_parameter_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "sweep")
    assert code == 2 and "sweep_param" in err


def test_sweep_out_of_range_point_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "sweep", "--sweep_param", "eta_abs", "--sweep_min", "0.9", "--sweep_max", "1.1", "--sweep_steps", "3")
    assert code == 2 and "eta_abs" in err


# --- EPR chain -------------------------------------------------------------------------------


def test_epr_chain_ideal_and_noisy(capsys):
    for extra in ((), ("--eta_abs", "0.85", "--k_plus_im", "0.2", "--k_d_re", "0.3", "--delta", "1.0")):
        code, out, _ = run_cli(capsys, "epr-chain", *extra)
        record = json.loads(out)
        assert code == 0
        assert record["horizontal_fidelities"][0] == pytest.approx(1, abs=1e-10)
        assert record["vertical_fidelities"][0] == pytest.approx(1, abs=1e-10)


def test_epr_chain_two_nodes_is_usage_error(capsys):
    code, _, err = run_cli(capsys, "epr-chain", "--node_count", "2")
    assert code == 2 and "node_count" in err


# --- process-level behaviour ----------------------------------------------------------------


def test_usage_errors_exit_2(capsys):
    assert run_cli(capsys, "check", "--eta_abs", "1.2")[0] == 2
    assert run_cli(capsys, "check", "--config", "/nonexistent/file.cfg")[0] == 2
    with pytest.raises(SystemExit) as info:
        main(["launch"])
    assert info.value.code == 2


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "backup_cnot", "check"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["passed"] is True


def test_all_subcommands_registered():
    parser = cli.build_parser()
    for mode in cli.MODES:
        assert parser.parse_args([mode]).mode == mode
