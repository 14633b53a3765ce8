import json

import numpy as np
import pytest

from kpnet.cli import main
from kpnet.data import write_idx
from kpnet.graph import preset, save_arch
from kpnet.routes import enumerate_routes

from oracles import shape_walker
from support import tiny_dataset, tiny_student, tiny_teacher


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "json")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny IDX dataset, tiny architectures and a trained teacher checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    data.mkdir()
    for split, n, seed in (("train", 120, 0), ("t10k", 45, 1)):
        d = tiny_dataset(n, seed=seed)
        pixels = np.clip(d.images[:, 0] / 2.5, 0, 1)
        write_idx(data / f"{split}-images-idx3-ubyte", np.round(pixels * 255).astype(np.uint8))
        write_idx(data / f"{split}-labels-idx1-ubyte", d.labels.astype(np.uint8))
    save_arch(tiny_teacher(), root / "teacher.json")
    save_arch(tiny_student(), root / "student.json")
    config = {"total_iterations": 24, "batch_size": 16, "prune_period": 4, "beta": 1.0, "revoke_duration": 2,
              "lr_schedule": [[0, 0.05]], "val_fraction": 0.2}
    (root / "run.json").write_text(json.dumps(config))
    code = main(["teacher-train", "--data", str(data), "--arch", str(root / "teacher.json"),
                 "--config", str(root / "run.json"), "--out", str(root / "teacher")])
    assert code == 0
    return root


def test_complexity_matches_shape_walker(capsys):
    report = run_json(capsys, "complexity", "--arch", "50-")
    rows = shape_walker.walk(preset("50-").to_dict())
    assert report["total_multiply_adds"] == sum(r[1] for r in rows)
    assert report["total_params"] == sum(r[2] for r in rows)
    assert report["conv_layers"] == 50


def test_complexity_text_table(capsys):
    code, out, _ = run(capsys, "complexity", "--arch", "26--")
    assert code == 0 and "multiply_adds" in out and "26 conv layers" in out


def test_routes_identity_at_zero_tolerance(capsys):
    report = run_json(capsys, "routes", "--teacher", "26--", "--arch", "26--", "--beta", "0")
    pairs = [(r["knowledge"], r["injection"]) for r in report["routes"]]
    assert pairs == [(i, i) for i in range(1, 27)]


def test_routes_match_library(capsys, workspace):
    report = run_json(capsys, "routes", "--teacher", str(workspace / "teacher" / "teacher.kpnc"),
                      "--arch", str(workspace / "student.json"), "--beta", "1.0")
    expected = enumerate_routes(tiny_teacher(), tiny_student(), 1.0)
    assert [r["label"] for r in report["routes"]] == [r.label for r in expected]


def test_teacher_train_outputs(workspace):
    metrics = json.loads((workspace / "teacher" / "teacher_metrics.json").read_text())
    assert metrics["iterations"] == 24 and 0 <= metrics["test_accuracy"] <= 1
    assert (workspace / "teacher" / "teacher_log.ndjson").read_text().count("\n") == 24


@pytest.fixture(scope="module")
def trained(workspace):
    out = workspace / "kpn"
    code = main(["kpn-train", "--data", str(workspace / "data"), "--teacher",
                 str(workspace / "teacher" / "teacher.kpnc"), "--arch", str(workspace / "student.json"),
                 "--config", str(workspace / "run.json"), "--subset-size", "90", "--out", str(out)])
    assert code == 0
    return out


def test_kpn_train_writes_checkpoint_log_and_report(trained):
    metrics = json.loads((trained / "metrics.json").read_text())
    assert len(metrics["prune_events"]) == len(metrics["routes"]) - 1
    assert metrics["train_samples"] + metrics["val_samples"] == 90
    assert (trained / "kpn.kpnc").exists() and (trained / "subset.json").exists()
    lines = (trained / "log.ndjson").read_text().splitlines()
    assert all(json.loads(line)["iter"] < 24 for line in lines)


def test_export_then_eval_gives_same_accuracy(capsys, workspace, trained):
    before = run_json(capsys, "eval", "--checkpoint", str(trained / "kpn.kpnc"), "--data", str(workspace / "data"))
    exported = run_json(capsys, "export", "--checkpoint", str(trained / "kpn.kpnc"),
                        "--out", str(workspace / "student.kpnc"))
    after = run_json(capsys, "eval", "--checkpoint", exported["exported"], "--data", str(workspace / "data"))
    assert after["accuracy"] == before["accuracy"]
    assert after["samples"] == 45


def test_kpn_train_is_idempotent(workspace, trained):
    again = workspace / "kpn-again"
    main(["kpn-train", "--data", str(workspace / "data"), "--teacher", str(workspace / "teacher" / "teacher.kpnc"),
          "--arch", str(workspace / "student.json"), "--config", str(workspace / "run.json"),
          "--subset-size", "90", "--out", str(again)])
    for name in ("kpn.kpnc", "log.ndjson", "subset.json"):
        assert (again / name).read_bytes() == (trained / name).read_bytes()
    a = json.loads((trained / "metrics.json").read_text())
    b = json.loads((again / "metrics.json").read_text())
    for doc in (a, b):
        doc.pop("elapsed_seconds")
        doc.pop("checkpoint")
    assert a == b


def test_prune_stats_tallies_every_repeat(capsys, workspace):
    report = run_json(capsys, "prune-stats", "--data", str(workspace / "data"),
                      "--teacher", str(workspace / "teacher" / "teacher.kpnc"),
                      "--arch", str(workspace / "student.json"), "--config", str(workspace / "run.json"),
                      "--repeats", "2")
    assert sum(report["tally"].values()) == 2
    assert [r["seed"] for r in report["runs"]] == [0, 1]


def test_print_defaults(capsys):
    code, out, _ = run(capsys, "--print-defaults")
    doc = json.loads(out)
    assert code == 0 and doc["beta"] == 0.2 and doc["lambda0"] == 0.6 and doc["prune_direction"] == "worst"
    code, sub_out, _ = run(capsys, "routes", "--print-defaults")
    assert code == 0 and json.loads(sub_out) == doc


def error_record(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_unknown_arch_is_config_error(capsys):
    code, _, err = run(capsys, "complexity", "--arch", "nope")
    assert code == 2 and error_record(err)["exit_code"] == 2


def test_unknown_config_key_is_config_error(capsys, tmp_path):
    (tmp_path / "c.json").write_text(json.dumps({"colour": 1}))
    code, _, err = run(capsys, "complexity", "--arch", "50-", "--config", str(tmp_path / "c.json"))
    assert code == 2 and error_record(err)["error"] == "ConfigError"


def test_missing_checkpoint_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "eval", "--checkpoint", str(tmp_path / "x.kpnc"), "--data", str(tmp_path))
    assert code == 3 and error_record(err)["exit_code"] == 3


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "routes", "--arch", "50-")
    assert code == 2 and "--teacher" in error_record(err)["message"]


def test_shape_mismatch_on_eval_is_data_error(capsys, workspace):
    big = workspace / "big"
    big.mkdir(exist_ok=True)
    write_idx(big / "t10k-images-idx3-ubyte", np.zeros((2, 10, 10), np.uint8))
    write_idx(big / "t10k-labels-idx1-ubyte", np.zeros(2, np.uint8))
    code, _, err = run(capsys, "eval", "--checkpoint", str(workspace / "teacher" / "teacher.kpnc"),
                       "--data", str(big))
    assert code == 3 and error_record(err)["error"] == "DataError"


def test_no_command_prints_help(capsys):
    code, out, _ = run(capsys)
    assert code == 2 and "kpn-train" in out
