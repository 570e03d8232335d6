import json

import pytest

from app.main import EXIT_OK, EXIT_VERIFICATION_FAILED, build_parser, main, run
from app.utils.logging_config import LOG_FILE_NAME


def _summary(out_dir):
    return json.loads((out_dir / "summary.json").read_text())


def _config(tmp_path, small_config, **changes):
    data = json.loads(open(small_config).read())
    data.update(changes)
    path = tmp_path / "changed.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_solve_op_writes_its_files(tmp_path, small_config):
    out = tmp_path / "out"
    assert main(["solve-op", "--config", small_config, "--out", str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["control.csv", "state.csv", "summary.json"]
    summary = _summary(out)
    assert summary["subcommand"] == "solve-op"
    assert 0.0 < summary["r"] < summary["r_T"]
    assert summary["inputs"]["M"] == 8.0
    control_lines = (out / "control.csv").read_text().splitlines()
    assert control_lines[0] == "t,coeff_1,coeff_2,coeff_3,coeff_4"
    assert len(control_lines) == 21
    assert len((out / "state.csv").read_text().splitlines()) == 22


def test_zero_norm_reports_the_free_distance(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-op", _config(tmp_path, small_config, M=0.0), str(out)) == EXIT_OK
    summary = _summary(out)
    assert summary["r"] == summary["r_T"]


def test_solve_np_writes_a_trace(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-np", small_config, str(out)) == EXIT_OK
    summary = _summary(out)
    assert summary["reach"] <= 0.3
    assert summary["halvings"] > 0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "n,a,b,mid,r_mid"
    assert len(trace) == summary["halvings"] + 1


def test_optimal_norm_feeds_the_target_problem(tmp_path, small_config):
    assert run("solve-np", small_config, str(tmp_path / "np")) == EXIT_OK
    M_star = _summary(tmp_path / "np")["M_star"]
    config = _config(tmp_path, small_config, M=M_star)
    assert run("solve-op", config, str(tmp_path / "op")) == EXIT_OK
    assert _summary(tmp_path / "op")["r"] == pytest.approx(0.3, abs=1e-6)


def test_solve_tp(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-tp", small_config, str(out)) == EXIT_OK
    summary = _summary(out)
    assert summary["r_start"] <= 0.3
    assert 0.0 <= summary["tau_star_snapped"] < 1.0
    assert summary["reach"] <= 0.3
    assert (out / "trace.csv").exists()


def test_feedback_sim(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("feedback-sim", small_config, str(out)) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == [
        "closed_loop.csv", "control.csv", "n_per_step.csv", "summary.json"]
    summary = _summary(out)
    assert summary["terminal_miss"] <= 0.3 + 1e-6
    assert summary["open_loop_gap"] <= 1e-6
    assert (out / "n_per_step.csv").read_text().splitlines()[0] == "t,N,masked_adjoint_norm"


def test_reruns_are_byte_identical(tmp_path, small_config):
    first, second = tmp_path / "a", tmp_path / "b"
    assert run("solve-np", small_config, str(first)) == EXIT_OK
    assert run("solve-np", small_config, str(second)) == EXIT_OK
    for path in first.iterdir():
        assert path.read_bytes() == (second / path.name).read_bytes()


def test_unknown_config_key_exits_with_one(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-op", _config(tmp_path, small_config, gain=2.0), str(out)) == 1
    assert not out.exists()


def test_negative_refinement_exits_with_one(tmp_path, small_config):
    assert run("solve-op", small_config, str(tmp_path / "out"), refine=-1) == 1


def test_infeasible_radius_exits_with_two(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-tp", _config(tmp_path, small_config, r=0.5), str(out)) == 2
    assert not out.exists()


def test_radius_below_immediate_activation_exits_with_two(tmp_path, small_config):
    assert run("solve-tp", _config(tmp_path, small_config, r=1e-4, M=0.5), str(tmp_path / "out")) == 2


def test_refinement_doubles_the_cells(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-op", small_config, str(out), refine=1) == EXIT_OK
    assert _summary(out)["grid"]["n_steps"] == 40


def test_log_file_is_opt_in(tmp_path, small_config):
    quiet, logged = tmp_path / "quiet", tmp_path / "logged"
    assert main(["solve-op", "--config", small_config, "--out", str(quiet)]) == EXIT_OK
    assert main(["solve-op", "--config", small_config, "--out", str(logged), "--log-file"]) == EXIT_OK
    assert not (quiet / LOG_FILE_NAME).exists()
    assert (logged / LOG_FILE_NAME).exists()


def test_parser_rejects_unknown_subcommands():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["solve-xx"])


def test_seed_override_reaches_the_summary(tmp_path, small_config):
    out = tmp_path / "out"
    assert run("solve-op", small_config, str(out), seed=42) == EXIT_OK
    assert _summary(out)["inputs"]["seed"] == 42


@pytest.mark.slow
def test_verify(tmp_path, small_config):
    out = tmp_path / "out"
    code = run("verify", small_config, str(out))
    report = json.loads((out / "report.json").read_text())
    assert code == (EXIT_OK if report["passed"] else EXIT_VERIFICATION_FAILED)
    assert report["passed"]
    assert report["summary"]["total"] == len(report["checks"])


@pytest.mark.parametrize("subcommand", [
    "solve-op",
    "solve-np",
    "solve-tp",
    pytest.param("feedback-sim", marks=pytest.mark.slow),
    pytest.param("verify", marks=pytest.mark.slow),
])
def test_shipped_defaults_run_every_subcommand(tmp_path, subcommand):
    out = tmp_path / "out"
    assert run(subcommand, None, str(out)) == EXIT_OK
    summary = _summary(out)
    assert summary["subcommand"] == subcommand
    if subcommand == "solve-tp":
        assert summary["r_start"] <= summary["inputs"]["r"]
    if subcommand == "verify":
        assert json.loads((out / "report.json").read_text())["passed"]
