import json
import subprocess
import sys

import pytest

from fisherlab.cli import cli_dispatch


def write_config(path, **kw):
    cfg = dict(kind="game", R=60.0, N=4, trials=100, seed=11, strategy="scan",
               params={"max_centers": 10})
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


def test_bounds_fano(capsys):
    assert cli_dispatch(["bounds", "--fano", "--M", "4", "--N", "0"]) == 0
    assert capsys.readouterr().out.strip() == "0.5"


def test_bounds_embed_dim(capsys):
    assert cli_dispatch(["bounds", "--embed-dim", "--eps", "1e-10"]) == 0
    assert capsys.readouterr().out.strip() == "10"


def test_bounds_packing(capsys):
    assert cli_dispatch(["bounds", "--packing", "--d", "1", "--eps", "1e-3"]) == 0
    assert float(capsys.readouterr().out) > 1


def test_usage_errors():
    assert cli_dispatch(["no-such-command"]) == 64
    assert cli_dispatch(["bounds", "--bogus"]) == 64
    assert cli_dispatch(["bounds", "--fano", "--M", "4"]) == 64
    assert cli_dispatch([]) == 64


def test_validation_errors(tmp_path):
    assert cli_dispatch(["bounds", "--fano", "--M", "3", "--N", "0"]) == 1
    assert cli_dispatch(["solve-instance", "--d", "1", "--eps", "0.5",
                         "--out", str(tmp_path / "x.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kind": "game", "surprise": 1}))
    assert cli_dispatch(["game", "--config", str(bad), "--out", str(tmp_path / "g.csv")]) == 1
    assert cli_dispatch(["audit-instance", str(tmp_path / "missing.json")]) == 1


def test_solve_then_audit(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    assert cli_dispatch(["solve-instance", "--d", "1", "--eps", "1e-3", "--out", str(inst)]) == 0
    report = tmp_path / "audit.json"
    assert cli_dispatch(["audit-instance", str(inst), "--pairs", "500",
                         "--out", str(report)]) == 0
    assert json.loads(report.read_text())["passed"] is True


def test_audit_flags_tampered_instance(tmp_path):
    inst = tmp_path / "inst.json"
    cli_dispatch(["solve-instance", "--d", "1", "--eps", "1e-3", "--out", str(inst)])
    data = json.loads(inst.read_text())
    data["centers"][1] = data["centers"][0]
    inst.write_text(json.dumps(data))
    assert cli_dispatch(["audit-instance", str(inst), "--pairs", "200"]) == 1


def test_game_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "game.json")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli_dispatch(["game", "--config", str(cfg), "--out", str(a)]) == 0
    assert cli_dispatch(["game", "--config", str(cfg), "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta_a = json.loads((tmp_path / "a.meta.json").read_text())
    meta_b = json.loads((tmp_path / "b.meta.json").read_text())
    assert meta_a["config_sha256"] == meta_b["config_sha256"]
    assert meta_a["summary"]["exact_success"] == "1/2"


def test_game_seed_override(tmp_path):
    cfg = write_config(tmp_path / "game.json")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    cli_dispatch(["game", "--config", str(cfg), "--out", str(a)])
    cli_dispatch(["game", "--config", str(cfg), "--out", str(b), "--seed", "12"])
    assert a.read_bytes() != b.read_bytes()


def test_timing_column(tmp_path):
    cfg = write_config(tmp_path / "game.json", trials=5)
    plain, timed = tmp_path / "p.csv", tmp_path / "t.csv"
    cli_dispatch(["game", "--config", str(cfg), "--out", str(plain)])
    cli_dispatch(["game", "--config", str(cfg), "--out", str(timed), "--timing"])
    plain_rows = plain.read_text().splitlines()[1:]
    timed_rows = timed.read_text().splitlines()[1:]
    assert all(row.endswith(",") for row in plain_rows)
    assert all(not row.endswith(",") for row in timed_rows)


def test_scaling_and_equivalence(tmp_path):
    cfg = write_config(tmp_path / "s.json", kind="scaling", strategy="rejection_accuracy",
                       R=None, N=None, params={"M0": 1.0, "eps_values": [0.1, 0.01, 0.001]})
    out = tmp_path / "s.csv"
    assert cli_dispatch(["scaling", "--config", str(cfg), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "x,value,stderr" and len(lines) == 4
    eq = write_config(tmp_path / "e.json", kind="equivalence", eps=0.1, R=None, N=None,
                      strategy=None, trials=200, params={})
    assert cli_dispatch(["equivalence", "--config", str(eq), "--out",
                         str(tmp_path / "e.csv")]) == 0


def test_sample_and_diagnose(tmp_path):
    inst = tmp_path / "inst.json"
    cli_dispatch(["solve-instance", "--d", "1", "--R", "10", "--out", str(inst)])
    out = tmp_path / "x.csv"
    assert cli_dispatch(["sample", str(inst), "--method", "exact", "--n", "50",
                         "--out", str(out)]) == 0
    assert len(out.read_text().splitlines()) == 51
    dens = tmp_path / "dens.csv"
    assert cli_dispatch(["diagnose", str(inst), "--grid", "2048",
                         "--density-csv", str(dens), "--out", str(tmp_path / "d.json")]) == 0
    assert dens.read_text().startswith("x,density")


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fisherlab.cli", "bounds", "--fano",
                           "--M", "4", "--N", "0"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "0.5"


@pytest.mark.parametrize("argv", [["--version"], ["bounds", "--help"]])
def test_informational_flags(argv):
    assert cli_dispatch(argv) == 0
