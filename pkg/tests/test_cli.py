"""CLI contract: exit codes, config handling, manifests, reproducibility."""

import csv
import json

import numpy as np
import pytest

from oypolymer.cli import EXIT_CONFIG, EXIT_OK, EXIT_SCIENTIFIC, main


def write_cfg(tmp_path, text, name="cfg.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(args):
    return main(args)


def test_verify_default_small(tmp_path):
    cfg = write_cfg(tmp_path, """
[run]
seed = 3
[verify]
tests = mean, comparison
n = 3
t = 1.5
replicas = 120
count = 20
""")
    code = run(["verify", "--config", cfg, "--out-dir", str(tmp_path / "out"),
                "--workers", "1"])
    assert code == EXIT_OK
    reports = json.loads((tmp_path / "out" / "verify_reports.json").read_text())
    assert {r["name"] for r in reports} == {"mean_identity", "comparison_suite"}
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["command"] == "verify"
    assert manifest["outputs"][0]["path"] == "verify_reports.json"


def test_unknown_test_name_is_config_error(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "[verify]\ntests = mean, bogus\n")
    code = run(["verify", "--config", cfg, "--out-dir", str(tmp_path)])
    assert code == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bogus" in err and "tests" in err


def test_missing_config_file_is_config_error(tmp_path):
    assert run(["verify", "--config", str(tmp_path / "nope.ini"),
                "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_bad_value_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "[verify]\nreplicas = many\n")
    assert run(["verify", "--config", cfg,
                "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_bad_experiment_section_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "[experiment]\ntheta = 1.0\nbeta = 2.0\n")
    assert run(["exponent", "--config", cfg,
                "--out-dir", str(tmp_path)]) == EXIT_CONFIG


EXP_CFG = """
[run]
seed = 5
[experiment]
theta = 1.0
n_values = 4, 8, 16
replicas = 150
m_per_level = 10
"""


def test_exponent_outputs_and_worker_independence(tmp_path):
    cfg = write_cfg(tmp_path, EXP_CFG)
    sums = []
    for w in (1, 2):
        out = tmp_path / f"w{w}"
        run(["exponent", "--config", cfg, "--out-dir", str(out),
             "--workers", str(w)])
        manifest = json.loads((out / "manifest.json").read_text())
        sums.append({o["path"]: o["sha256"] for o in manifest["outputs"]})
        fit = json.loads((out / "variance_exponent.json").read_text())
        assert "boundary" in fit and len(fit["boundary"]["points"]) == 3
    assert sums[0] == sums[1]


def test_rerun_from_manifest_reproduces_checksums(tmp_path):
    cfg = write_cfg(tmp_path, EXP_CFG)
    first = tmp_path / "first"
    run(["exponent", "--config", cfg, "--out-dir", str(first), "--workers", "1"])
    manifest_path = first / "manifest.json"
    second = tmp_path / "second"
    run(["exponent", "--config", str(manifest_path), "--out-dir", str(second),
         "--workers", "2"])
    a = json.loads(manifest_path.read_text())["outputs"]
    b = json.loads((second / "manifest.json").read_text())["outputs"]
    assert a == b


def test_seed_override_changes_outputs(tmp_path):
    cfg = write_cfg(tmp_path, EXP_CFG)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    run(["exponent", "--config", cfg, "--out-dir", str(out_a), "--workers", "1"])
    run(["exponent", "--config", cfg, "--out-dir", str(out_b), "--workers", "1",
         "--seed", "99"])
    a = json.loads((out_a / "manifest.json").read_text())["outputs"]
    b = json.loads((out_b / "manifest.json").read_text())["outputs"]
    assert a != b


def test_sample_zero_noise_uniform_sigma1(tmp_path):
    cfg = write_cfg(tmp_path, """
[sample]
model = free
zero_noise = true
n = 2
m = 8
t = 1.0
count = 4000
seed = 1
""")
    out = tmp_path / "out"
    assert run(["sample", "--config", cfg, "--out-dir", str(out)]) == EXIT_OK
    with open(out / "paths.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4000
    idx = np.array([round(float(r["sigma_1"]) / 0.125) for r in rows])
    counts = np.bincount(idx.astype(int), minlength=8)
    expect = len(rows) / 8
    chi2 = float(np.sum((counts - expect) ** 2 / expect))
    assert chi2 < 30.0  # uniform over the 8 grid slots


def test_sample_bad_model_is_config_error(tmp_path):
    cfg = write_cfg(tmp_path, "[sample]\nmodel = diagonal\n")
    assert run(["sample", "--config", cfg,
                "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_env_gen_round_trip(tmp_path):
    cfg = write_cfg(tmp_path, "[env-gen]\nn = 2\nm = 16\nt = 1.0\ncount = 2\n")
    out = tmp_path / "out"
    assert run(["env-gen", "--config", cfg, "--out-dir", str(out),
                "--seed", "4"]) == EXIT_OK
    from oypolymer.environment import load_environment
    env = load_environment(out / "environment_0000.bin")
    assert env.grid.n == 2 and env.grid.m == 16
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["outputs"]) == 2


def test_free_energy_command_small(tmp_path):
    cfg = write_cfg(tmp_path, """
[experiment]
tau = 1.0
n_values = 2, 8, 32
replicas = 40
m_per_level = 16
seed = 2
resolution_doubling = on
""")
    out = tmp_path / "out"
    code = run(["free-energy", "--config", cfg, "--out-dir", str(out)])
    assert code == EXIT_OK  # error column must be monotone decreasing
    with open(out / "free_energy.csv") as fh:
        rows = list(csv.DictReader(fh))
    errs = [float(r["abs_error"]) for r in rows]
    assert all(b < a for a, b in zip(errs, errs[1:]))


def test_fluctuation_command_small(tmp_path):
    cfg = write_cfg(tmp_path, """
[experiment]
theta = 1.0
n_values = 4, 16
replicas = 100
m_per_level = 10
seed = 6
""")
    out = tmp_path / "out"
    assert run(["fluctuation", "--config", cfg,
                "--out-dir", str(out)]) == EXIT_OK
    result = json.loads((out / "fluctuation.json").read_text())
    assert result["ks_pair"] == [4, 16]


def test_inconclusive_fit_is_scientific_failure(tmp_path):
    # tiny replica count: slope stderr blows past the 0.1 limit
    cfg = write_cfg(tmp_path, """
[experiment]
theta = 1.0
n_values = 4, 8, 16
replicas = 12
m_per_level = 8
""")
    assert run(["exponent", "--config", cfg,
                "--out-dir", str(tmp_path / "o")]) == EXIT_SCIENTIFIC
