import shutil
import subprocess
import sys

import pytest

from soundattack import io as sio
from soundattack.cli import main
from soundattack.evaluation import ROW_FIELDS, SUMMARY_FIELDS, parse_csv, summary_value

CONFIG = """\
seed: 4
datagen:
  sat_var_range: [3, 6]
  sat_pairs: 12
  tsp_node_range: [5, 7]
  tsp_count: 3
training:
  width: 6
  rounds: 2
  epochs: 2
  finetune_epochs: 1
  attack_steps: 3
attack:
  sat:
    steps: 6
  dtsp:
    steps: 4
    budget: 2
  convtsp:
    steps: 4
    budget: 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "exp.yaml").write_text(CONFIG)
    assert main(["gen-sat", "--config", str(root / "exp.yaml"), "--out", str(root / "sat")]) == 0
    assert main([
        "train", "--config", str(root / "exp.yaml"), "--data", str(root / "sat"),
        "--out", str(root / "sat.ckpt"),
    ]) == 0
    return root


def _attack(root, out, *extra):
    return main([
        "attack", "--config", str(root / "exp.yaml"), "--checkpoint", str(root / "sat.ckpt"),
        "--data", str(root / "sat"), "--out", str(root / out), *extra,
    ])


def test_gen_sat_writes_pairs_and_manifest(workspace):
    manifest = sio.read_manifest(workspace / "sat")
    assert manifest["counts"] == {"pairs": 12, "formulas": 24}
    assert manifest["seed"] == 4 and "oracle_versions" in manifest
    assert len(sio.read_sat_dataset(workspace / "sat")) == 24


def test_attack_then_verify_is_fully_sound(workspace, capsys):
    assert _attack(workspace, "run") == 0
    capsys.readouterr()
    assert main(["verify", str(workspace / "run")]) == 0
    assert "soundness rate: 1.0 (48/48)" in capsys.readouterr().out
    rows = parse_csv((workspace / "run" / "rows.csv").read_text(), ROW_FIELDS)
    assert len(rows) == 48 and all(r["verified"] == "1" for r in rows)


def test_same_config_and_seed_give_identical_csvs(workspace):
    assert _attack(workspace, "again") == 0
    for name in ("rows.csv", "summary.csv", "summary.txt"):
        assert (workspace / "run" / name).read_bytes() == (workspace / "again" / name).read_bytes()


def test_zero_budget_keeps_clean_accuracy(workspace):
    assert _attack(workspace, "zero", "--budget", "0") == 0
    summary = parse_csv((workspace / "zero" / "summary.csv").read_text(), SUMMARY_FIELDS)
    for attack in ("pgd", "random"):
        clean = summary_value(summary, attack, "all", "clean_acc")
        assert summary_value(summary, attack, "all", "adv_acc") == clean


def test_report_rebuilds_summary(workspace, capsys, tmp_path):
    out = tmp_path / "summary.csv"
    assert main(["report", str(workspace / "run" / "rows.csv"), "--out", str(out)]) == 0
    assert out.read_bytes() == (workspace / "run" / "summary.csv").read_bytes()
    assert capsys.readouterr().out == (workspace / "run" / "summary.txt").read_text()


def test_verify_fails_on_tampered_instance(workspace, tmp_path, capsys):
    run = tmp_path / "run"
    shutil.copytree(workspace / "run", run)
    victim = sorted((run / "perturbed").glob("pgd_*.cnf"))[1]  # odd ids are UNSAT
    text = victim.read_text()
    header = [l for l in text.splitlines() if l.startswith("p cnf")][0]
    n = int(header.split()[2])
    # keep only the first clause: now satisfiable
    lines = text.splitlines()
    body = [l for l in lines if l and not l.startswith(("c", "p"))][:1]
    comments = [l for l in lines if l.startswith("c")]
    victim.write_text("\n".join(comments + [f"p cnf {n} 1"] + body) + "\n")
    assert main(["verify", str(run), "--data", str(workspace / "sat")]) == 1
    captured = capsys.readouterr()
    assert f"failed: {victim.name}" in captured.out
    assert captured.err.startswith("error[verification]:")


def test_finetune_writes_checkpoint(workspace):
    out = workspace / "ft.ckpt"
    assert main([
        "finetune", "--config", str(workspace / "exp.yaml"), "--data", str(workspace / "sat"),
        "--checkpoint", str(workspace / "sat.ckpt"), "--out", str(out),
    ]) == 0
    assert sio.read_checkpoint(out).role == "sat"


@pytest.mark.parametrize("role", ["dtsp", "convtsp"])
def test_tsp_pipeline(workspace, role, capsys):
    cfg = str(workspace / "exp.yaml")
    data = workspace / "tsp"
    if not data.exists():
        assert main(["gen-tsp", "--config", cfg, "--out", str(data)]) == 0
    ckpt = workspace / f"{role}.ckpt"
    assert main(["train", "--config", cfg, "--data", str(data), "--role", role, "--out", str(ckpt)]) == 0
    run = workspace / f"run-{role}"
    assert main(["attack", "--config", cfg, "--checkpoint", str(ckpt), "--data", str(data), "--out", str(run)]) == 0
    capsys.readouterr()
    assert main(["verify", str(run)]) == 0
    assert "soundness rate: 1.0" in capsys.readouterr().out


def test_errors_use_prefix_and_exit_one(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("sed: 1\n")
    assert main(["gen-sat", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert capsys.readouterr().err.startswith("error[parse]:")
    assert main(["report", str(tmp_path / "missing.csv")]) == 1
    assert capsys.readouterr().err.startswith("error[not-found]:")
    assert main(["verify", str(tmp_path)]) == 1
    assert capsys.readouterr().err.startswith("error[parse]:")


def test_usage_error_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["attack"])
    assert exc.value.code == 1
    assert "error[usage]:" in capsys.readouterr().err


def test_module_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "soundattack", "--help"], capture_output=True, text=True, check=True
    )
    assert "gen-sat" in out.stdout and "verify" in out.stdout
