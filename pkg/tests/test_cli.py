import csv
import json

import pytest

from oracles import sum_of_shapes
from treegpt.checkpoint import load_checkpoint
from treegpt.cli import UsageError, load_run_config, main
from treegpt.data import load_arc_file

SMALL = ["--set", "model.hidden_dim=8", "--set", "model.num_layers=1", "--set", "model.iterations=1",
         "--set", "model.edge_dim=4", "--set", "model.max_seq_len=64"]
STEPS = ["--set", "train.total_steps=20", "--set", "train.warmup_steps=2", "--set", "train.eval_every=10",
         "--set", "train.batch_size=4"]


@pytest.fixture(scope="module")
def copy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("copy")
    assert main(["gen-data", "--family", "copy", "--count", "10", "--seed", "3", "--out", str(out),
                 "--set", "data.max_size=3"]) == 0
    return out


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_gen_data_files_validate(copy_dir):
    files = sorted(p for p in copy_dir.glob("*.json") if p.name != "manifest.json")
    assert len(files) == 10
    for f in files:
        t = load_arc_file(f)
        assert all(i == o for i, o in t.train_pairs)
    manifest = json.loads((copy_dir / "manifest.json").read_text())
    assert manifest["family"] == "copy" and manifest["seed"] == 3 and len(manifest["files"]) == 10


def test_gen_data_is_byte_identical(copy_dir, tmp_path):
    assert main(["gen-data", "--family", "copy", "--count", "10", "--seed", "3", "--out", str(tmp_path),
                 "--set", "data.max_size=3"]) == 0
    for f in copy_dir.iterdir():
        assert (tmp_path / f.name).read_bytes() == f.read_bytes()


def test_unknown_family_lists_valid_ones(tmp_path, capsys):
    assert main(["gen-data", "--family", "spiral", "--out", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert "copy" in err and "rect_fill" in err


def test_train_smoke_and_summary(copy_dir, tmp_path):
    out = tmp_path / "run"
    argv = ["train", "--out", str(out), "--set", f"data.train_dir={copy_dir}"] + SMALL + STEPS
    assert main(argv) == 0
    metrics = rows(out / "metrics.csv")
    assert metrics[0] == ["step", "lr", "loss", "token_acc", "exact_match"]
    assert [int(r[0]) for r in metrics[1:]] == list(range(1, 21))
    assert metrics[10][3] != "" and metrics[9][3] == ""
    summary = json.loads((out / "summary.json").read_text())
    model, state = load_checkpoint(out / "final.ckpt")
    assert summary["parameter_count"] == sum_of_shapes(model)
    mc = summary["message_count"]
    assert mc["instrumented"] == mc["closed_form"] == 2 * (mc["seq_len"] - 1)
    assert state.step == 20
    assert (out / "figures" / "training.png").stat().st_size > 0


def test_resume_continues_numbering(copy_dir, tmp_path):
    out = tmp_path / "r"
    base = ["train", "--out", str(out), "--set", f"data.train_dir={copy_dir}"] + SMALL + STEPS
    assert main(base + ["--until", "7"]) == 0
    assert main(base + ["--resume", str(out / "final.ckpt")]) == 0
    assert [int(r[0]) for r in rows(out / "metrics.csv")[1:]] == list(range(1, 21))


def test_resume_rejects_model_mismatch(copy_dir, tmp_path, capsys):
    out = tmp_path / "m"
    base = ["train", "--out", str(out), "--set", f"data.train_dir={copy_dir}"] + SMALL + STEPS
    assert main(base + ["--until", "2"]) == 0
    assert main(base + ["--resume", str(out / "final.ckpt"), "--set", "model.hidden_dim=12"]) == 1
    assert "hidden_dim" in capsys.readouterr().err


def test_invalid_key_is_named(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--set", "model.hiden_dim=8"]) == 1
    assert "model.hiden_dim" in capsys.readouterr().err
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[model]\nlayers = 3\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "model.layers" in capsys.readouterr().err


def test_missing_data_is_an_error(tmp_path, capsys):
    assert main(["train", "--out", str(tmp_path), "--set", f"data.train_dir={tmp_path / 'nope'}"]) == 1
    assert "does not exist" in capsys.readouterr().err


def test_three_layer_precedence(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[model]\nhidden_dim = 32\nedge_dim = 16\n[train]\nseed = 4\nlr_max = 0.001\n")
    r = load_run_config(str(cfg), ["model.hidden_dim=48"], seed=9)
    assert r.model.hidden_dim == 48          # command line beats file
    assert r.model.edge_dim == 16            # file beats default
    assert r.model.num_layers == 2           # default
    assert r.train.seed == 9 and r.train.lr_max == 0.001
    assert "model.hidden_dim" in r.explicit and "model.num_layers" not in r.explicit


def test_config_value_errors():
    with pytest.raises(UsageError, match="model.hidden_dim"):
        load_run_config(None, ["model.hidden_dim=big"])
    with pytest.raises(UsageError, match="KEY=VALUE"):
        load_run_config(None, ["model.hidden_dim"])
    with pytest.raises(UsageError, match="combination_mode"):
        load_run_config(None, ["model.combination_mode=mixed"])


def test_eval_report(copy_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert main(["train", "--out", str(run), "--set", f"data.train_dir={copy_dir}"] + SMALL + STEPS) == 0
    out = tmp_path / "e"
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(copy_dir), "--out", str(out)]) == 0
    report = json.loads((out / "eval.json").read_text())
    assert report["tasks"] == 10
    correct = sum(t["correct"] for t in report["per_task"])
    total = sum(t["total"] for t in report["per_task"])
    assert correct / total == report["token_accuracy"]
    assert len(rows(out / "eval_tasks.csv")) == 11


def test_eval_empty_dir_and_mismatch(copy_dir, tmp_path, capsys):
    run = tmp_path / "t"
    assert main(["train", "--out", str(run), "--set", f"data.train_dir={copy_dir}"] + SMALL + STEPS
                + ["--until", "1"]) == 0
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(empty), "--out", str(tmp_path)]) == 1
    assert "no task files" in capsys.readouterr().err
    assert main(["eval", "--checkpoint", str(run / "final.ckpt"), "--data", str(copy_dir), "--out", str(tmp_path),
                 "--set", "model.num_layers=3"]) == 1
    assert "num_layers" in capsys.readouterr().err


def test_corrupt_checkpoint_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"TREEGPT-CHECKPOINT\nversion 9\n")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(tmp_path), "--out", str(tmp_path)]) == 1
    assert "version 9" in capsys.readouterr().err


def test_gradcheck_default_passes(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path)]) == 0
    text = (tmp_path / "gradcheck.txt").read_text()
    assert text.rstrip().endswith("PASS")
    assert "token_embedding" in text


def test_gradcheck_too_tight_fails_cleanly(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path), "--tol", "1e-12"]) == 2
    out = capsys.readouterr().out
    assert "FAIL" in out and "Traceback" not in out


def test_gradcheck_refuses_large_model(tmp_path, capsys):
    assert main(["gradcheck", "--out", str(tmp_path), "--set", "gradcheck.hidden_dim=128"]) == 1
    assert "capped" in capsys.readouterr().err


def test_ablate_small(tmp_path):
    argv = ["ablate", "--out", str(tmp_path), "--set", "data.count=6", "--set", "data.heldout=2",
            "--set", "data.max_size=2", "--set", "ablation.seeds=0", "--set", "train.total_steps=2",
            "--set", "train.warmup_steps=0"] + SMALL
    assert main(argv) == 0
    text = (tmp_path / "ablation.txt").read_text()
    assert "Baseline TreeFFN" in text and "reference values" in text
    assert len(rows(tmp_path / "ablation.csv")) == 7
    assert (tmp_path / "figures" / "ablation.png").exists()


def test_unknown_subcommand_exit_code(capsys):
    assert main(["fly"]) == 1
