import json
import math
from pathlib import Path

import numpy as np
import pytest

from emstress import cases
from emstress.cli import main
from emstress.config import config_hash
from emstress.oracle import StressField

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write_config(tmp_path, tree, name="run.json", **blocks):
    data = dict(cases.tree_to_config(tree), seed=0, output_dir=str(tmp_path / "out"), **blocks)
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(*argv):
    return main([str(a) for a in argv])


def test_validate_cross(capsys):
    assert run("validate", "--config", CONFIGS / "cross.json") == 0
    assert capsys.readouterr().out.strip() == "4 segments, 1 junction, 4 terminals"


def test_validate_every_shipped_config():
    for path in sorted(CONFIGS.glob("*.json")):
        assert run("validate", "--config", path) == 0, path.name


def test_validate_negative_width(tmp_path, capsys):
    data = cases.tree_to_config(cases.cross())
    data["segments"][1]["width_m"] = -1e-7
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    assert run("validate", "--config", path) == 1
    assert "segments[1].width_m" in capsys.readouterr().err


def test_validate_missing_node(tmp_path, capsys):
    data = cases.tree_to_config(cases.four_segment())
    data["segments"][2]["next"] = 42
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    assert run("validate", "--config", path) == 1
    assert "DanglingReference" in capsys.readouterr().err


def test_validate_reports_json_line(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "nodes": [\n    {"id": 0,,}\n  ]\n}')
    assert run("validate", "--config", path) == 1
    assert "line 3" in capsys.readouterr().err


def test_probe_time_beyond_horizon_rejected(tmp_path, capsys):
    path = write_config(tmp_path, cases.blocked_wire(), probes={"times": [1e9]})
    assert run("validate", "--config", path) == 1
    assert "probes.times[0]" in capsys.readouterr().err


def test_unknown_block_field_rejected(tmp_path, capsys):
    path = write_config(tmp_path, cases.blocked_wire(), training={"n_c": 5, "batch": 3})
    assert run("validate", "--config", path) == 1
    assert "training.batch" in capsys.readouterr().err


def test_oracle_zero_currents(tmp_path):
    tree = cases.four_segment()
    path = write_config(tmp_path, tree)
    data = json.loads(path.read_text())
    for s in data["segments"]:
        s["j_A_per_m2"] = 0.0
    path.write_text(json.dumps(data))
    out = tmp_path / "zero.csv"
    assert run("oracle", "--config", path, "--out", out) == 0
    f = StressField.read_csv(out)
    assert len(f) == 4 * 11 * 10 and np.all(f.sigma_Pa == 0.0)


def test_oracle_blocked_wire_linear_profile(tmp_path):
    path = write_config(tmp_path, cases.blocked_wire(), probes={"times": [1e8]})
    out = tmp_path / "blocked.csv"
    assert run("oracle", "--config", path, "--out", out) == 0
    f = StressField.read_csv(out)
    G = 4009.11 * 4e9
    exact = G * (10e-6 / 2 - f.x_m)
    assert np.max(np.abs(f.sigma_Pa - exact)) <= 1e-3 * G * 10e-6 / 2


def test_oracle_rerun_is_byte_identical(tmp_path):
    path = write_config(tmp_path, cases.cross())
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("oracle", "--config", path, "--out", a) == 0
    assert run("oracle", "--config", path, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0]
    assert header == f"# command=oracle, config_hash={config_hash(json.loads(path.read_text()))}, seed=0"


def test_train_without_junction(tmp_path):
    path = write_config(tmp_path, cases.blocked_wire())
    ckpt = tmp_path / "m.bin"
    assert run("train", "--config", path, "--out", ckpt) == 0
    report = json.loads((tmp_path / "m_report.json").read_text())
    assert report["iterations"] == 0 and report["final_loss"] == 0.0
    lines = (tmp_path / "m_loss.csv").read_text().splitlines()
    assert lines[0].startswith("# command=train") and lines[1] == "iter,loss,grad_norm,wall_time_s"


@pytest.fixture(scope="module")
def trained_cross(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cross")
    path = write_config(tmp, cases.cross(), training={"max_iters": 2000})
    ckpt = tmp / "model.bin"
    assert run("train", "--config", path, "--out", ckpt) == 0
    return tmp, path, ckpt


def test_train_seed_is_deterministic(tmp_path):
    path = write_config(tmp_path, cases.cross(), training={"max_iters": 25, "n_c": 8})
    losses = []
    for name in ("a", "b"):
        assert run("train", "--config", path, "--out", tmp_path / f"{name}.bin", "--quiet") == 0
        losses.append(json.loads((tmp_path / f"{name}_report.json").read_text())["final_loss"])
        assert (tmp_path / f"{name}.bin").exists()
    assert losses[0] == losses[1]
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert run("train", "--config", path, "--out", tmp_path / "c.bin", "--seed", "3", "--quiet") == 0
    assert json.loads((tmp_path / "c_report.json").read_text())["final_loss"] != losses[0]


def test_infer_at_time_zero(trained_cross, tmp_path):
    tmp, _, ckpt = trained_cross
    path = write_config(tmp_path, cases.cross(), probes={"times": [0.0, 1e6]})
    out = tmp_path / "infer.csv"
    assert run("infer", "--config", path, "--checkpoint", ckpt, "--out", out) == 0
    f = StressField.read_csv(out)
    assert f.source == "trial"
    assert np.all(f.at_time(0.0).sigma_Pa == 0.0)
    assert np.any(f.at_time(1e6).sigma_Pa != 0.0)


def test_infer_junction_from_both_sides(trained_cross, tmp_path):
    tmp, path, ckpt = trained_cross
    report = json.loads((tmp / "model_report.json").read_text())
    # arms 0 and 2 end at the centre, arms 1 and 3 start there
    points = [[0, 1.0], [1, 0.0], [2, 1.0], [3, 0.0]]
    cfg = write_config(tmp_path, cases.cross(), probes={"points": points})
    out = tmp_path / "junction.csv"
    assert run("infer", "--config", cfg, "--checkpoint", ckpt, "--out", out) == 0
    f = StressField.read_csv(out)
    assert np.all(f.x_m[f.segment_id % 2 == 1] == 0.0)
    spread = max(np.ptp(f.at_time(t).sigma_Pa) for t in np.unique(f.t_s))
    assert spread <= 3 * math.sqrt(report["final_loss"] / report["n_pairs"]) / 1e-7


def test_infer_nucleation(trained_cross, tmp_path, capsys):
    tmp, path, ckpt = trained_cross
    assert run("infer", "--config", path, "--checkpoint", ckpt, "--out", tmp_path / "i.csv", "--nucleation") == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("nucleation_time_s=")


def test_infer_architecture_mismatch(trained_cross, tmp_path, capsys):
    _, _, ckpt = trained_cross
    path = write_config(tmp_path, cases.cross(), training={"mode": "parameterized"})
    assert run("infer", "--config", path, "--checkpoint", ckpt) == 1
    assert "ArchitectureMismatch" in capsys.readouterr().err


def test_missing_checkpoint(tmp_path):
    path = write_config(tmp_path, cases.cross())
    assert run("infer", "--config", path, "--checkpoint", tmp_path / "nope.bin") == 1


def test_compare_cross(trained_cross, tmp_path, capsys):
    _, path, ckpt = trained_cross
    out = tmp_path / "cmp.csv"
    assert run("compare", "--config", path, "--checkpoint", ckpt, "--out", out) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    err = float(lines[0].split("=")[1])
    assert err <= 0.02
    assert len(lines) == 11
    rows = out.read_text().splitlines()
    assert rows[1] == "t_s,rel_error" and rows[2].startswith("all,")


def test_single_cell_sweep_equals_train_and_compare(tmp_path, capsys):
    path = write_config(tmp_path, cases.cross(), training={"max_iters": 30, "n_c": 10}, sweep={"N_c": [10]})
    out = tmp_path / "sweep.csv"
    assert run("sweep", "--config", path, "--axis", "N_c", "--out", out) == 0
    rows = out.read_text().splitlines()
    assert rows[1] == "N_c,rel_error,train_s,infer_s,final_loss,iterations"
    assert len(rows) == 3
    sweep_err = float(rows[2].split(",")[1])
    assert (tmp_path / "sweep_cells" / "cell_000.json").exists()
    ckpt = tmp_path / "m.bin"
    assert run("train", "--config", path, "--out", ckpt) == 0
    capsys.readouterr()
    assert run("compare", "--config", path, "--checkpoint", ckpt) == 0
    plain_err = float(capsys.readouterr().out.splitlines()[0].split("=")[1])
    assert float(f"{sweep_err:.6e}") == plain_err


def test_sweep_jobs_do_not_change_results(tmp_path):
    path = write_config(tmp_path, cases.cross(), training={"max_iters": 10, "n_c": 5},
                        sweep={"N_g": [8, 16], "N_c": [5]})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("sweep", "--config", path, "--axis", "N_g,N_c", "--out", a) == 0
    assert run("sweep", "--config", path, "--axis", "N_g,N_c", "--out", b, "--jobs", "2") == 0
    def stable(p):
        # drop the wall-clock columns train_s and infer_s
        return [[r.split(",")[i] for i in (0, 1, 2, 5, 6)] for r in p.read_text().splitlines()[2:]]

    assert len(stable(a)) == 2
    assert stable(a) == stable(b)


def test_sweep_unknown_axis(tmp_path):
    path = write_config(tmp_path, cases.cross())
    assert run("sweep", "--config", path, "--axis", "dropout") == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exit_code(tmp_path, capsys):
    path = write_config(tmp_path, cases.cross(), training={"max_iters": 5})
    data = json.loads(path.read_text())
    data["segments"][0]["j_A_per_m2"] = 1e300
    path.write_text(json.dumps(data))
    assert run("train", "--config", path, "--out", tmp_path / "m.bin") == 2
    assert "numerical failure" in capsys.readouterr().err
