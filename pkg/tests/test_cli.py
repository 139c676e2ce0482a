import json
import subprocess
import sys

import pytest

from idcascade.cli import main

BASE = """
[model]
sigma2 = 0.5
jump_kind = none

[grid]
levels = 4
oversample = 2
cell_levels = 0

[experiment]
seed = 5
replicas = 3
{experiment}

[output]
formats = both
{output}
"""


def write_cfg(path, outdir, experiment="", output=""):
    text = BASE.format(experiment=experiment,
                       output=f"directory = {outdir}\n{output}")
    path.write_text(text)
    return path


@pytest.fixture
def cfg_file(tmp_path):
    return write_cfg(tmp_path / "run.ini", tmp_path / "out")


def run(*argv):
    return main([str(a) for a in argv])


def test_theory_writes_stamped_report(cfg_file, tmp_path):
    assert run("--config", cfg_file, "theory") == 0
    payload = json.loads((tmp_path / "out" / "diagnostics.json").read_text())
    assert payload["tail_index"] == pytest.approx(4.0)
    assert payload["seed"] == 5
    assert len(payload["config_hash"]) == 16


def test_simulate_outputs_and_reruns_identically(cfg_file, tmp_path):
    assert run("--config", cfg_file, "simulate") == 0
    out = tmp_path / "out"
    first = (out / "summary.csv").read_bytes()
    blob = (out / "realization_000002.bin").read_bytes()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["replicas"] == 3
    assert summary["mean_total_mass"] > 0
    header, cols, *rows = first.decode().strip().splitlines()
    assert header.startswith("# config_hash=")
    assert cols == "replica,total_mass"
    assert len(rows) == 3

    assert run("--config", cfg_file, "--out", tmp_path / "o2",
               "simulate") == 0
    assert (tmp_path / "o2" / "realization_000002.bin").read_bytes() == blob
    # the stamp differs (directory is part of the config), the data rows not
    second = (tmp_path / "o2" / "summary.csv").read_bytes()
    assert second.decode().splitlines()[2:] == first.decode().splitlines()[2:]


def test_seed_flag_changes_rows(cfg_file, tmp_path):
    assert run("--config", cfg_file, "--format", "csv", "simulate") == 0
    a = (tmp_path / "out" / "summary.csv").read_text().splitlines()[2]
    assert not (tmp_path / "out" / "summary.json").exists()
    assert run("--config", cfg_file, "--seed", 6, "simulate") == 0
    b = (tmp_path / "out" / "summary.csv").read_text().splitlines()[2]
    assert a != b


def test_verify_pass_fail_and_unknown(cfg_file, tmp_path, capsys):
    path = write_cfg(tmp_path / "v.ini", tmp_path / "v",
                     experiment="checks = normalization,areas,star\n")
    assert run("--config", path, "verify") == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines == ["normalization: pass", "areas: pass", "star: pass"]
    payload = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert payload["all_passed"] is True

    strict = write_cfg(tmp_path / "strict.ini", tmp_path / "v",
                       experiment="checks = areas\nareas_tol = 0\n")
    assert run("--config", strict, "verify") == 1
    assert "areas: FAIL" in capsys.readouterr().out

    bad = write_cfg(tmp_path / "bad.ini", tmp_path / "v",
                    experiment="checks = nonsense\n")
    assert run("--config", bad, "verify") == 2


def test_estimate_moments_report(cfg_file, tmp_path):
    assert run("--config", cfg_file, "estimate") == 0
    payload = json.loads((tmp_path / "out" / "moments.json").read_text())
    qs = [row["q"] for row in payload["estimates"]]
    assert qs == [1.0, 2.0]
    assert all(row["mean"] > 0 for row in payload["estimates"])
    assert (tmp_path / "out" / "moments.csv").exists()


def test_config_error_exits_2(tmp_path):
    assert run("--config", tmp_path / "missing.ini", "theory") == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[martian]\nx = 1\n")
    assert run("--config", bad, "theory") == 2
    ok = write_cfg(tmp_path / "ok.ini", tmp_path / "out")
    assert run("--config", ok, "--seed", -1, "theory") == 2


def test_runtime_error_exits_3(tmp_path):
    path = write_cfg(tmp_path / "r.ini", tmp_path / "r",
                     experiment="kind = scaling\nscale_ratios = 0.3\n")
    assert run("--config", path, "estimate") == 3


def test_console_script_smoke(cfg_file, tmp_path):
    proc = subprocess.run(
        ["idcascade", "--config", str(cfg_file), "--threads", "1", "theory"],
        capture_output=True, text=True, timeout=120)
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.strip().endswith("diagnostics.json")
