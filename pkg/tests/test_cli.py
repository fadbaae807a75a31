import json
import subprocess
import sys

import numpy as np
import pytest

from erwlab.cli import CSV_HEADER, main, parse_schedule
from erwlab.experiments import geometric_schedule
from erwlab.stats import log_floor


def run(*argv):
    return main([str(a) for a in argv])


def test_schedule_forms():
    assert parse_schedule("1024,4096") == (1024, 4096)
    assert parse_schedule("2^10..2^12") == (1024, 2048, 4096)
    assert parse_schedule("10:1000:10") == (10, 100, 1000)
    assert parse_schedule("1e3") == (1000,)


def test_simulate_smallest_run_is_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("simulate", "--t-schedule", 1024, "--replicas", 2, "--seed", 7, "--out", a, "--quiet") == 0
    assert run("simulate", "--t-schedule", 1024, "--replicas", 2, "--seed", 7, "--out", b, "--quiet") == 0
    csv_a = (a / "simulate.csv").read_bytes()
    assert csv_a == (b / "simulate.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    lines = csv_a.decode().splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert all(l.split(",")[0] == "1024" and l.endswith(",2") for l in lines[1:])
    man = json.loads((a / "manifest.json").read_text())
    assert man["master_seed"] == 7 and man["seed_source"] == "flag"
    assert set(man["outputs"]) == {"simulate.csv", "summary.json"}


def test_rerun_from_manifest(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run("simulate", "--t-schedule", "100,1000", "--replicas", 3, "--seed", 4,
        "--targets", "1,0,0", "--out", a, "--quiet")
    assert run("simulate", "--config", a / "manifest.json", "--out", b, "--quiet") == 0
    assert (a / "simulate.csv").read_bytes() == (b / "simulate.csv").read_bytes()
    assert json.loads((b / "manifest.json").read_text())["seed_source"] == "config"


def test_flags_override_config_and_env_seed(tmp_path, monkeypatch):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"t-schedule": "100", "replicas": 5}))
    monkeypatch.setenv("ERWLAB_SEED", "42")
    assert run("simulate", "--config", cfg, "--replicas", 2, "--out", tmp_path / "o", "--quiet") == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["replicas"] == 2 and man["master_seed"] == 42
    assert man["seed_source"] == "env:ERWLAB_SEED"


def test_drift_lower_assertion_refused(tmp_path, capsys):
    assert run("simulate", "--mode", "drift:0.5", "--assert-lower", "--out", tmp_path) == 2
    assert "open problem" in capsys.readouterr().err
    assert not (tmp_path / "simulate.csv").exists()


def test_assert_lower_passes_on_growing_means(tmp_path):
    assert run("simulate", "--t-schedule", "16,65536", "--replicas", 200, "--seed", 1,
               "--assert-lower", "--out", tmp_path, "--quiet") == 0


@pytest.mark.parametrize("argv", [
    ["simulate", "--replicas", "x"],
    ["simulate", "--t-schedule", "abc"],
    ["simulate", "--mode", "lazy"],
    ["nonsense"],
    ["bdchain"],
])
def test_usage_errors(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] == "simulate" else argv) == 2


def test_couple_empty_configuration(capsys):
    assert run("couple", "--t", 2000, "--runs", 5, "--checked", "--quiet") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] and rep["mean_V_R"] == rep["mean_V_S"]


def test_couple_rejects_illegal_configuration(tmp_path, capsys):
    f = tmp_path / "vis.txt"
    f.write_text("0 0 1\n0 0 3\n")
    assert run("couple", "--t", 10, "--vis-s", f) == 2
    assert "(0, 0, 3)" in capsys.readouterr().err


def test_couple_writes_manifest(tmp_path):
    f = tmp_path / "vis.json"
    f.write_text("[[0, 0, 1]]")
    out = tmp_path / "out"
    assert run("couple", "--t", 1000, "--runs", 4, "--vis-s", f, "--start", "0,0,1",
               "--checked", "--out", out, "--quiet") == 0
    rep = json.loads((out / "couple.json").read_text())
    assert rep["dominance_failures"] == 0 and (out / "manifest.json").exists()


def test_bdchain_spec_prints_ratio(capsys):
    assert run("bdchain", "--spec", "n=4,q=1/3,start=2") == 0
    cap = capsys.readouterr()
    assert json.loads(cap.out)["r"] == "1/7" and "1/7" in cap.err


def test_bdchain_spec_file(tmp_path, capsys):
    f = tmp_path / "chain.json"
    f.write_text(json.dumps({"n": 5, "q": ["1/4", "1/3", "1/5"], "start": 3}))
    assert run("bdchain", "--spec", f, "--check", "exact-vs-solve") == 0
    assert json.loads(capsys.readouterr().out)["chain"]["n"] == 5


def test_bdchain_invalid_probability():
    assert run("bdchain", "--spec", "n=4,q=1.5,start=2") == 2


def test_bdchain_random_dominance(capsys):
    assert run("bdchain", "--random", "30,300", "--check", "dominance", "--seed", 1) == 0
    assert json.loads(capsys.readouterr().out)["random"]["dominance"]["violations"] == 0


def write_csv(path, t, y, stat="V"):
    with open(path, "w") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for a, b in zip(t, map(float, y)):
            fh.write(f"{a},{stat},{b!r},{b - 0.01!r},{b + 0.01!r},100\n")


@pytest.mark.parametrize("shape,expect", [("sqrt_log", "sqrt_log"), ("log", "log")])
def test_fit_synthetic(tmp_path, capsys, shape, expect):
    t = np.array(geometric_schedule(2**10, 2**24))
    L = log_floor(t)
    y = 0.5 * np.sqrt(L) + 0.1 if shape == "sqrt_log" else 0.5 * L + 0.1
    write_csv(tmp_path / "s.csv", t, y)
    assert run("fit", "--in", tmp_path / "s.csv", "--expect", expect) == 0
    assert json.loads(capsys.readouterr().out)["winner"] == expect


def test_fit_errors(tmp_path):
    write_csv(tmp_path / "few.csv", [1, 2, 3], [1.0, 2.0, 3.0])
    assert run("fit", "--in", tmp_path / "few.csv") == 2
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    assert run("fit", "--in", tmp_path / "bad.csv") == 2
    assert run("fit", "--in", tmp_path / "missing.csv") == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "erwlab", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.startswith("erwlab")
