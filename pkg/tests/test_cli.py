import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from rclub import cli, ingest

TINY = """
[instance]
u = 8
m = 2
d = 4
pool = 30
arms_per_round = 5
corrupted_fraction = 0.25

[corruption]
k = 100

[run]
T = 600
seeds = [0, 1]
trace_downsample = 20

[detector]
detect_every = 300

[[policies]]
kind = "RCLUB_WCU"
alpha = 0.3
C = {C}
alpha1 = 0.3
beta = 0.3

[[policies]]
kind = "LINUCB_IND"
beta = 0.3
"""


@pytest.fixture
def config_file(tmp_path):
    def write(C=1.0):
        f = tmp_path / f"tiny_{C}.toml"
        f.write_text(TINY.replace("{C}", repr(float(C))))
        return f
    return write


def hashes(folder):
    return {p.relative_to(folder).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(folder.rglob("*")) if p.is_file()}


def test_help(capsys):
    assert cli.main(["--help"]) == 0
    assert "diag-t0" in capsys.readouterr().out


@pytest.mark.parametrize("sub", ["run", "gen-instance", "svd", "diag-t0"])
def test_subcommand_help(sub, capsys):
    assert cli.main([sub, "--help"]) == 0
    assert "usage" in capsys.readouterr().out


def test_unknown_flag(capsys):
    assert cli.main(["run", "--config", "x.toml", "--bogus"]) == 1
    assert "--bogus" in capsys.readouterr().err


def test_missing_subcommand():
    assert cli.main([]) == 1


def test_missing_config_names_file(tmp_path, capsys):
    missing = tmp_path / "missing.toml"
    assert cli.main(["run", "--config", str(missing)]) == 1
    assert "missing.toml" in capsys.readouterr().err


def test_bad_config_value(tmp_path, capsys):
    f = tmp_path / "bad.toml"
    f.write_text("[run]\nT = 0\n")
    assert cli.main(["run", "--config", str(f)]) == 1
    assert "T" in capsys.readouterr().err


def test_run_twice_is_hash_identical(config_file, tmp_path):
    cfg = config_file()
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a, b = hashes(tmp_path / "a"), hashes(tmp_path / "b")
    assert a == b
    assert "seed_0/regret.csv" in a and "seed_1/run_meta.json" in a


def test_run_single_seed_uses_env_root(config_file, tmp_path, monkeypatch):
    monkeypatch.setenv("RCLUB_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = config_file()
    assert cli.main(["run", "--config", str(cfg), "--seed", "5"]) == 0
    meta = json.loads((tmp_path / "root" / cfg.stem / "run_meta.json").read_text())
    assert meta["seed"] == 5


def test_runtime_failure_exit_code(config_file, tmp_path, monkeypatch):
    from rclub import harness

    def boom(*a, **k):
        raise RuntimeError("disk on fire")

    monkeypatch.setattr(harness, "run_experiment", boom)
    assert cli.main(["run", "--config", str(config_file()), "--out", str(tmp_path)]) == 2


def test_gen_instance(config_file, tmp_path, capsys):
    out = tmp_path / "inst.json"
    assert cli.main(["gen-instance", "--config", str(config_file()), "--out", str(out),
                     "--seed", "3"]) == 0
    doc = json.loads(out.read_text())
    assert doc["dims"]["u"] == 8 and doc["seed"] == 3 and len(doc["corrupted"]) == 2


def test_svd(tmp_path, capsys):
    rng = np.random.default_rng(0)
    ratings = tmp_path / "r.csv"
    lines = ["user_id,item_id,rating"]
    for u in range(12):
        for i in range(9):
            if rng.random() < 0.7:
                lines.append(f"{u},{i},{rng.integers(1, 6)}")
    ratings.write_text("\n".join(lines) + "\n")
    items, users = tmp_path / "items.csv", tmp_path / "users.csv"
    assert cli.main(["svd", "--ratings", str(ratings), "--rank", "3", "--out", str(items),
                     "--users-out", str(users)]) == 0
    x = ingest.load_features(items)
    assert x.shape == (9, 3) and np.linalg.norm(x, axis=1).max() <= 1 + 1e-12
    assert ingest.load_features(users).shape == (12, 3)


def test_svd_rank_too_large(tmp_path):
    f = tmp_path / "r.csv"
    f.write_text("5,1\n2,4\n")
    assert cli.main(["svd", "--ratings", str(f), "--rank", "3", "--out",
                     str(tmp_path / "o.csv")]) == 1


def test_svd_malformed_ratings(tmp_path, capsys):
    f = tmp_path / "r.csv"
    f.write_text("user_id,item_id,rating\n1,2\n")
    assert cli.main(["svd", "--ratings", str(f), "--rank", "1", "--out",
                     str(tmp_path / "o.csv")]) == 1
    assert ":2:" in capsys.readouterr().err


def test_diag_t0_without_corruption(config_file, capsys):
    assert cli.main(["diag-t0", "--config", str(config_file(C=0.0))]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if l.startswith("T0 max-terms"))
    terms = [float(v) for v in line.split("[")[1].split("]")[0].split(",")]
    assert len(terms) == 4 and terms[3] == 0.0
    assert "lambda_tilde_x" in out


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "rclub.cli", "--help"], capture_output=True,
                         text=True, timeout=300)
    assert res.returncode == 0 and "usage" in res.stdout


def test_numpy_backend_matches_compiled(config_file, tmp_path):
    cfg = config_file()
    env = dict(os.environ, RCLUB_JIT="0")
    code = ("import sys; from rclub import cli; "
            f"sys.exit(cli.main(['run', '--config', {str(cfg)!r}, '--seed', '1', "
            f"'--out', {str(tmp_path / 'py')!r}]))")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                         text=True, timeout=900)
    assert res.returncode == 0, res.stderr
    assert cli.main(["run", "--config", str(cfg), "--seed", "1", "--out",
                     str(tmp_path / "jit")]) == 0
    py = json.loads((tmp_path / "py" / "run_meta.json").read_text())
    jit = json.loads((tmp_path / "jit" / "run_meta.json").read_text())
    assert py["versions"]["backend"] != jit["versions"]["backend"]
    assert py["final_components"] == jit["final_components"]
    for lab, v in jit["total_regret"].items():
        assert py["total_regret"][lab] == pytest.approx(v, rel=1e-9)
