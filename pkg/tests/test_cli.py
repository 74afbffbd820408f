import hashlib
import json
import os

import numpy as np
import pytest

from nmsse.cli import main
from nmsse.config import DEFAULTS, ConfigError, parse_config, parse_matrix

DEPHASING = """
experiment: dephasing-compare
model:
  H0: [[0, 0], [0, 0]]
  L: [[[1, 0], [0, 0]], [[0, 0], [-1, 0]]]
  gamma: 1.0
"""

MARTINGALE = """
experiment: martingale
model:
  H: [[0, 1], [1, 0]]
  R: [[[0, 1], [0, 0]]]
numerics: {dt: 0.002, T: 0.5, N: 300, master_seed: 4, psi0: [0, 1]}
"""


def test_minimal_config_gets_defaults():
    cfg = parse_config(DEPHASING)
    assert cfg.experiment == "dephasing-compare"
    assert cfg.numerics.dt == DEFAULTS["dt"] == 1e-3
    assert cfg.numerics.N == 10_000 and cfg.numerics.master_seed == 0
    np.testing.assert_array_equal(cfg.model.L, np.diag([1, -1]))
    assert cfg.model.kind == "ou"


def test_json_is_accepted():
    cfg = parse_config(json.dumps({"experiment": "ou-stats",
                                   "model": {"H0": [[0, 0], [0, 0]], "L": [[1, 0], [0, -1]],
                                             "gamma": 0.5}}))
    assert cfg.model.gamma == 0.5


@pytest.mark.parametrize("text,path", [
    (DEPHASING.replace("gamma: 1.0", "gamma: -1"), "model.gamma"),
    (DEPHASING.replace("H0: [[0, 0], [0, 0]]", "H0: [[0, 0, 1], [0, 0, 0]]"), "model.H0"),
    (DEPHASING.replace("H0: [[0, 0], [0, 0]]", "H0: [[0, 1], [0, 0]]"), "model.H0"),
    (DEPHASING.replace("H0: [[0, 0], [0, 0]]", "H0: [[0, 0, 0], [0, 0, 0], [0, 0, 0]]"),
     "model.L"),
    (DEPHASING + "numerics: {dt: 0}\n", "numerics.dt"),
    (DEPHASING + "numerics: {dt: 0.1, T: 0.05}\n", "numerics.T"),
    (DEPHASING + "numerics: {N: 0}\n", "numerics.N"),
    (DEPHASING + "numerics: {renorm: maybe}\n", "numerics.renorm"),
    (DEPHASING + "numerics: {psi0: [1, 0, 0]}\n", "numerics.psi0"),
    (DEPHASING.replace("dephasing-compare", "nope"), "experiment"),
    (MARTINGALE.replace("martingale", "memory-me"), "model"),
    ("[1, 2]", "<root>"),
])
def test_config_errors_carry_field_path(text, path):
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert exc.value.path == path
    assert str(exc.value).startswith(path)


def test_parse_matrix_pairs():
    m = parse_matrix([[[1, 2], 0], [0, [0, -1]]], "m")
    np.testing.assert_array_equal(m, [[1 + 2j, 0], [0, -1j]])
    with pytest.raises(ConfigError):
        parse_matrix([[1, "a"]], "m")


def _write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _manifest(directory):
    with open(os.path.join(directory, "manifest.jsonl")) as fh:
        return [json.loads(line) for line in fh]


def test_cli_run_and_manifest(tmp_path):
    out = tmp_path / "out"
    code = main([_write(tmp_path, MARTINGALE), "--out", str(out), "--dump-trajectories", "-q"])
    assert code == 0
    (rec,) = _manifest(out)
    assert rec["experiment"] == "martingale" and rec["passed"]
    assert rec["checks"] == {"final_weight_within_4se": True}
    assert "max_abs_z" in rec["summary"] and rec["version"]
    written = sorted(f for f in os.listdir(out) if f != "manifest.jsonl")
    assert sorted(f["path"] for f in rec["files"]) == written
    assert any(f.startswith("martingale_trajectory_") for f in written)
    for f in rec["files"]:
        data = (out / f["path"]).read_bytes()
        assert hashlib.sha256(data).hexdigest() == f["sha256"]


def test_cli_reproducible_across_workers(tmp_path):
    cfg = _write(tmp_path, MARTINGALE.replace("N: 300", "N: 5000"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main([cfg, "--out", str(a), "--workers", "1", "-q"]) == 0
    assert main([cfg, "--out", str(b), "--workers", "2", "-q"]) == 0
    files = [f for f in os.listdir(a) if f != "manifest.jsonl"]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_cli_env_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("NMSSE_OUT_DIR", str(tmp_path / "env"))
    text = MARTINGALE.replace("N: 300", "N: 20")
    assert main([_write(tmp_path, text), "-q"]) == 0
    assert (tmp_path / "env" / "martingale_ensemble.csv").exists()


def test_cli_exit_codes(tmp_path):
    bad = DEPHASING.replace("gamma: 1.0", "gamma: -1")
    assert main([_write(tmp_path, bad), "--out", str(tmp_path), "-q"]) == 2
    assert main([str(tmp_path / "missing.yaml"), "-q"]) == 2
    assert main([_write(tmp_path, MARTINGALE), "--workers", "0", "-q"]) == 2
    blow = """
experiment: martingale
model: {H: [[0, 1], [1, 0]], R: [[[0, 30], [0, 0]]]}
numerics: {dt: 0.5, T: 100, N: 4}
"""
    assert main([_write(tmp_path, blow), "--out", str(tmp_path / "b"), "-q"]) == 3
    failing = """
experiment: norm-preservation
model: {H0: [[0, 1], [1, 0]], L: [[1, 0], [0, -1]], gamma: 1.0}
numerics: {dt: 0.001, T: 0.2, N: 50}
"""
    assert main([_write(tmp_path, failing), "--out", str(tmp_path / "n"), "-q"]) == 1


@pytest.mark.parametrize("experiment,N", [("ou-stats", 40_000), ("propagator-check", 1),
                                          ("memory-me", 1)])
def test_cli_other_experiments(tmp_path, experiment, N):
    text = f"""
experiment: {experiment}
model: {{H0: [[0, 1], [1, 0]], L: [[1, 0], [0, -1]], gamma: 0.5}}
numerics: {{dt: 0.01, T: 2.0, N: {N}}}
"""
    out = tmp_path / "o"
    assert main([_write(tmp_path, text), "--out", str(out), "-q"]) == 0
    (rec,) = _manifest(out)
    assert rec["checks"] and all(rec["checks"].values())


def test_cli_dephasing_table(tmp_path):
    text = DEPHASING + "numerics: {dt: 0.002, T: 1.0, N: 400}\n"
    out = tmp_path / "o"
    main([_write(tmp_path, text), "--out", str(out), "-q"])
    head = (out / "dephasing-compare_coherence.csv").read_text().splitlines()[0]
    assert head == ("t,ensemble_abs_eta01,ensemble_se,memory_me_abs_eta01,oracle_abs_eta01")
    (rec,) = _manifest(out)
    assert "coherence_within_3se" in rec["checks"]
