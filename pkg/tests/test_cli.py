import json
import subprocess
import sys

import pytest

from kcm import cli, results


def run(*argv):
    return cli.main(list(argv))


def last_run(root, command):
    dirs = sorted(p for p in root.iterdir() if p.name.startswith(command + "_"))
    return dirs[-1]


def test_exact_gap_record(results_dir, capsys):
    assert run("exact-gap", "--d", "2", "--n", "2", "--p", "0.3", "--family", "northeast",
               "--seed", "1") == 0
    out = json.loads(capsys.readouterr().out)
    rec = json.loads((last_run(results_dir, "exact-gap") / "result.json").read_text())
    assert rec["quantity"] == "spectral_gap" and 0 < rec["value"] <= 1
    assert rec["value"] == pytest.approx(0.20804299348778285, abs=1e-10)
    assert out["value"] == rec["value"]
    assert set(rec) >= {"model", "d", "n", "p", "method", "residual"}


def test_schedule_command(results_dir):
    assert run("schedule", "--n", "2", "--eps", "0.25", "--c", "1.0") == 0
    rd = last_run(results_dir, "schedule")
    rec = json.loads((rd / "result.json").read_text())
    assert rec["final_time"] == pytest.approx(9.53416, abs=1e-5)
    assert (rd / "schedule.csv").read_text().startswith("# {")


def test_simulate_twice_identical(results_dir):
    for _ in range(2):
        assert run("simulate", "--d", "2", "--n", "4", "--p", "0.3", "--horizon", "10", "--seed", "7") == 0
    a, b = sorted(p for p in results_dir.iterdir())
    assert results.read_manifest(a) == results.read_manifest(b)
    assert set(results.read_manifest(a)) == {"events.csv", "influence.csv", "result.json"}
    for name in ("config.echo.json", "MANIFEST", "result.json", "runtime.json"):
        assert (a / name).exists()


def test_run_from_echoed_config(results_dir):
    assert run("validate-mc", "--n", "2", "--replicas", "2000", "--time", "1.5", "--seed", "3") == 0
    first = last_run(results_dir, "validate-mc")
    assert run("run", "--config", str(first / "config.echo.json")) == 0
    second = last_run(results_dir, "validate-mc")
    assert first != second
    assert (first / "MANIFEST").read_text() == (second / "MANIFEST").read_text()


def test_config_file_and_flag_override(results_dir, tmp_path):
    cfg = {"model": {"d": 1, "n": 3, "p": 0.3, "family": "northeast"},
           "command": {"name": "exact-gap", "method": "dense"},
           "execution": {"seed": 4}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert run("exact-gap", "--config", str(path), "--p", "0.4") == 0
    echo = json.loads((last_run(results_dir, "exact-gap") / "config.echo.json").read_text())
    assert echo["model"]["p"] == 0.4 and echo["model"]["n"] == 3
    assert echo["command"]["method"] == "dense" and echo["execution"]["seed"] == 4


def test_unknown_keys_rejected(results_dir, tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"d": 2, "colour": 1}}))
    assert run("exact-gap", "--config", str(path)) == 1
    path.write_text(json.dumps({"extras": {}}))
    assert run("exact-gap", "--config", str(path)) == 1
    path.write_text(json.dumps({"command": {"name": "schedule"}}))
    assert run("exact-gap", "--config", str(path)) == 1


@pytest.mark.parametrize("argv,code", [
    (["exact-gap", "--p", "1.5"], 1),
    (["exact-gap", "--bogus", "1"], 1),
    (["frobnicate"], 1),
    (["simulate", "--initial", "half"], 1),
    (["exact-gap", "--n", "5"], 2),
    (["exact-gap", "--n", "3", "--state-cap", "64"], 2),
    (["tau-scaling", "--n-list", "8", "--replicas", "100", "--cap-factor", "0.5"], 3),
    (["validate-mc", "--n", "2", "--replicas", "100000", "--p", "0.3", "--time", "2"], 0),
])
def test_exit_codes(results_dir, argv, code):
    assert run(*argv) == code


def test_custom_family_from_flag(results_dir):
    custom = json.dumps({"1,2": [[1, 1]], "2,1": [[1, 1]], "2,2": [[1, 1]]})
    assert run("lsi-bound", "--family", "custom", "--constraints", custom) == 0
    bad = json.dumps({"1,2": [[2, 1]], "2,1": [[1, 1]], "2,2": [[1, 1]]})
    assert run("lsi-bound", "--family", "custom", "--constraints", bad) == 1


def test_every_command_runs(results_dir):
    cases = [("exact-mix", "--n", "2"), ("fk-bound", "--n", "2"),
             ("lsi-bound", "--family", "maximal", "--n", "2"), ("schedule", "--n", "3"),
             ("diagonal-decay", "--n", "2", "--i", "3", "--times", "0,1,2,3"),
             ("tau-scaling", "--n-list", "2,3", "--replicas", "50"),
             ("shape", "--n", "16", "--replicas", "3", "--snapshots", "4,8", "--horizon", "8"),
             ("simulate", "--n", "3", "--level", "4", "--initial", "pi", "--plot-data", "true")]
    for argv in cases:
        assert run(*argv) == 0, argv
    rd = last_run(results_dir, "simulate")
    assert (rd / "plot_long.csv").exists()
    fk = json.loads((last_run(results_dir, "fk-bound") / "result.json").read_text())
    assert fk["value"] < 0 and fk["beta_le_minus_c0"]


def test_help_lists_every_flag(capsys):
    for command in cli.COMMANDS:
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args([command, "--help"])
        text = capsys.readouterr().out
        for opt in cli.OPTIONS:
            if not opt.commands or command in opt.commands:
                assert opt.flag in text
                assert f"{opt.section}.{opt.key}" in text


def test_flags_and_keys_one_to_one():
    keys = [(o.section, o.key) for o in cli.OPTIONS]
    flags = [o.flag for o in cli.OPTIONS]
    assert len(set(keys)) == len(keys) and len(set(flags)) == len(flags)
    for o in cli.OPTIONS:
        assert o.flag[2:].replace("-", "_") == o.key


def test_module_entry_point(tmp_path):
    env = {"KCM_RESULTS_DIR": str(tmp_path), "PATH": "/usr/bin:/bin"}
    proc = subprocess.run([sys.executable, "-m", "kcm", "schedule", "--n", "2", "--c", "1"],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["final_time"] == pytest.approx(9.534161491, abs=1e-8)
