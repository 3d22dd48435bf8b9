import json
import subprocess
import sys

import pytest

from wrinklelab.cli import EXIT_CONFIG, EXIT_IO, EXIT_NONCONVERGENCE, main
from wrinklelab.experiments import (
    ConfigError,
    ExperimentConfig,
    ScanRecord,
    load_config,
    read_records,
    report,
    run,
    sigma_inequalities,
)


def tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize(
    "bad",
    [
        {"experiment": "nope"},
        {"L": []},
        {"L": [0.5]},
        {"L": [1.0, 1.0]},
        {"N": 4},
        {"gamma": 0},
        {"M": 1},
        {"solver": {"bogus": 1}},
        {"solver": {"restarts": 0}},
        {"eta": 0.5},
        {"seed": -1},
        {"seed": 2**64},
        {"workers": 0},
        {"experiment": "scaling", "L": [6.0], "L0": 4.0},
        {"experiment": "solve", "L": [1.0, 2.0]},
        {"unknown_key": 1},
    ],
)
def test_invalid_configs_are_rejected_before_compute(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(bad)


def test_L_list_is_sorted_and_normalized():
    cfg = ExperimentConfig.from_dict({"L": [4, 1, 2]})
    assert cfg.L == (1.0, 2.0, 4.0)


def test_precedence_file_env_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"L": [1, 2], "N": 32, "seed": 5}))
    env = {"WRINKLELAB_GRID_N": "48", "WRINKLELAB_SEED": "6"}
    cfg = load_config(path, {"seed": 7}, environ=env)
    assert cfg.L == (1.0, 2.0) and cfg.N == 48 and cfg.seed == 7


def test_bad_json_file_is_a_config_error(tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(path, environ={})


def test_hash_ignores_output_location_and_pool_size():
    a = ExperimentConfig.from_dict({"out": "x", "workers": 1})
    b = ExperimentConfig.from_dict({"out": "y", "workers": 4})
    c = ExperimentConfig.from_dict({"seed": 1})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_full_seed_range_is_accepted():
    cfg = ExperimentConfig.from_dict({"seed": 2**64 - 1})
    assert cfg.solve_options().seed == 2**64 - 1


# ---------------------------------------------------------------------------
# inequalities


def test_inequality_pairs_and_kinds():
    sig = {1.0: 10.0, 1.5: 5.0, 2.0: 4.0, 3.0: 4.0}
    rows = sigma_inequalities(sig)
    kinds = {(r["L"], r["L2"]): r["kind"] for r in rows if r["kind"] != "sup"}
    assert kinds[(1.0, 2.0)] == "periodic" and kinds[(1.0, 1.5)] == "rescale" and kinds[(1.5, 3.0)] == "periodic"
    assert all(r["passed"] for r in rows)


def test_violations_are_reported():
    rows = sigma_inequalities({1.0: 1.0, 2.0: 2.0})
    assert not next(r for r in rows if r["kind"] == "periodic")["passed"]


# ---------------------------------------------------------------------------
# runs


def small_scan(out, workers=1):
    return ExperimentConfig.from_dict(
        {"experiment": "scan", "L": [1, 1.5, 2], "N": 32, "solver": {"restarts": 1}, "out": str(out), "workers": workers}
    )


def test_scan_outputs_and_byte_identical_rerun(tmp_path):
    s = run(small_scan(tmp_path / "a"))
    assert s["passed"]
    run(small_scan(tmp_path / "b", workers=2))
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert a == b
    for name in ("scan/sigma_scan.csv", "scan/inequalities.csv", "scan/L1.5/mu.csv", "scan/L2/spectrum.csv"):
        assert name in a


def test_scan_resumes_from_records(tmp_path):
    cfg = small_scan(tmp_path)
    run(cfg)
    rec = tmp_path / "scan" / "records.jsonl"
    first = rec.read_bytes()
    # a torn trailing line from an interrupted run is ignored
    rec.write_bytes(first + b'{"L": 3.0, "sig')
    run(cfg)
    assert rec.read_bytes() == first + b'{"L": 3.0, "sig'
    recs = read_records(rec, cfg.config_hash())
    assert sorted(recs) == [1.0, 1.5, 2.0]
    assert isinstance(recs[1.0], ScanRecord)


def test_repair_experiment(tmp_path):
    cfg = ExperimentConfig.from_dict({"experiment": "repair-test", "L": [4, 16, 64], "out": str(tmp_path)})
    s = run(cfg)
    assert s["passed"]
    assert [r["L"] for r in s["rows"]] == [4.0, 16.0, 64.0]


def test_report_empty_and_deterministic(tmp_path):
    b = report(tmp_path)
    assert b["experiments"] == {}
    assert "No experiments found." in (tmp_path / "report.md").read_text()
    cfg = ExperimentConfig.from_dict({"experiment": "repair-test", "L": [4, 16], "out": str(tmp_path)})
    run(cfg)
    report(tmp_path)
    first = tree_bytes(tmp_path)
    report(tmp_path)
    assert tree_bytes(tmp_path) == first
    assert "repair-test" in json.loads((tmp_path / "report.json").read_text())["experiments"]


# ---------------------------------------------------------------------------
# command line


def test_cli_validation_exit_code(tmp_path, capsys):
    assert main(["scan", "--L", "0.5", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["repair-test", "--L", "4", "--eta", "0.9", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_cli_argparse_errors_use_validation_code():
    with pytest.raises(SystemExit) as e:
        main(["scan", "--grid-n", "many"])
    assert e.value.code == EXIT_CONFIG


def test_cli_io_exit_code(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["repair-test", "--L", "4", "--out", str(blocker)]) == EXIT_IO


def test_cli_nonconvergence_keeps_partial_outputs(tmp_path, monkeypatch):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"solver": {"tol": 1e-300, "restarts": 1}}))
    code = main(["solve", "--L", "1", "--grid-n", "16", "--config", str(path), "--out", str(tmp_path / "o")])
    assert code == EXIT_NONCONVERGENCE
    assert (tmp_path / "o" / "solve" / "L1" / "solution.json").exists()


def test_cli_runs_as_console_script(tmp_path):
    out = subprocess.run(
        [sys.executable, "-m", "wrinklelab.cli", "repair-test", "--L", "4,16", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    assert "delta_hat_decreasing" in out.stdout
    assert main(["report", "--out", str(tmp_path)]) == 0
