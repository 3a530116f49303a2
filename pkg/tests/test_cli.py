"""Command-line surface: flags, config file, outputs, exit codes."""

import numpy as np
import pytest

from chunkmem.cli import main
from chunkmem.tasks import load_episodes_jsonl
from chunkmem.training import METRICS_COLUMNS, load_checkpoint, read_metrics_csv


TRAIN_SMALL = ["--task", "ballet", "--dances", "2", "--delay", "4",
               "--d-model", "32", "--batch", "4", "--steps", "2",
               "--eval-every", "2", "--eval-episodes", "8", "--seed", "5"]


def test_train_writes_metrics_and_checkpoint(tmp_path, capsys):
    out = tmp_path / "metrics.csv"
    ckpt = tmp_path / "model.ckpt"
    code = main(["train", *TRAIN_SMALL, "--out", str(out),
                 "--checkpoint", str(ckpt)])
    assert code == 0
    assert out.read_text().splitlines()[0] == ",".join(METRICS_COLUMNS)
    rows = read_metrics_csv(str(out))
    assert [r.step for r in rows] == [2]
    model = load_checkpoint(str(ckpt))
    assert model.config.d_model == 32
    stdout = capsys.readouterr().out
    assert "step 2" in stdout and "done step 2" in stdout


def test_train_resume_continues_from_checkpoint(tmp_path, capsys):
    ckpt = tmp_path / "warm.ckpt"
    assert main(["train", *TRAIN_SMALL, "--checkpoint", str(ckpt)]) == 0
    ckpt2 = tmp_path / "warm2.ckpt"
    assert main(["train", *TRAIN_SMALL, "--resume", str(ckpt),
                 "--checkpoint", str(ckpt2)]) == 0
    a = load_checkpoint(str(ckpt))
    b = load_checkpoint(str(ckpt2))
    changed = any(
        not np.array_equal(a.params[k].data, b.params[k].data)
        for k in a.params)
    assert changed  # resumed run actually trained further


def test_eval_prints_accuracy(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    main(["train", *TRAIN_SMALL, "--checkpoint", str(ckpt)])
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(ckpt), "--task", "ballet",
                 "--dances", "2", "--delay", "4", "--episodes", "16"])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("eval_acc ")
    acc = float(out.split()[1])
    assert 0.0 <= acc <= 1.0


def test_eval_task_mismatch_is_one_line_error(tmp_path, capsys):
    ckpt = tmp_path / "m.ckpt"
    main(["train", *TRAIN_SMALL, "--checkpoint", str(ckpt)])
    capsys.readouterr()
    code = main(["eval", "--checkpoint", str(ckpt), "--task", "pai",
                 "--episodes", "4"])
    assert code != 0
    err = capsys.readouterr().err
    lines = [ln for ln in err.splitlines() if ln]
    assert len(lines) == 1
    assert lines[0].startswith("error: ShapeMismatchError:")


def test_config_file_with_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("dances 2\ndelay = 4\nd-model 32\nbatch 4\nsteps 4\n"
                   "eval-every 2\neval-episodes 8\n# trailing comment\n")
    code = main(["train", "--config", str(cfg), "--steps", "2"])
    assert code == 0
    out = capsys.readouterr().out
    assert "done step 2" in out  # the flag beat the file's steps 4


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("warp-speed 9\n")
    code = main(["train", "--config", str(cfg)])
    assert code != 0
    assert "error: ContractError:" in capsys.readouterr().err


def test_unwritable_output_path_rejected(tmp_path, capsys):
    code = main(["train", *TRAIN_SMALL, "--out",
                 str(tmp_path / "no" / "such" / "dir" / "m.csv")])
    assert code != 0
    assert "not writable" in capsys.readouterr().err


def test_bench_reports_exact_counts(capsys):
    code = main(["bench", "--n-chunks", "32", "--chunk-size", "8",
                 "--top-k", "2", "--trials", "3"])
    assert code == 0
    out = capsys.readouterr().out
    assert "scores_per_query hcam 48 dense 256" in out
    assert "ratio 5.33" in out
    assert "median_ms" in out
    assert "params hcam" in out


def test_bench_rejects_k_above_n(capsys):
    code = main(["bench", "--n-chunks", "4", "--top-k", "9", "--trials", "1"])
    assert code != 0
    assert "error: ContractError:" in capsys.readouterr().err


def test_dump_episodes_round_trip(tmp_path, capsys):
    out = tmp_path / "eps.jsonl"
    code = main(["dump-episodes", "--task", "pai", "--chain-length", "3",
                 "--episodes", "5", "--seed", "2", "--out", str(out)])
    assert code == 0
    records = load_episodes_jsonl(str(out))
    assert len(records) == 5
    assert all(r["chain_length"] == 3 for r in records)


def test_gradcheck_passes_and_fails_by_tolerance(capsys):
    code = main(["gradcheck"])
    out = capsys.readouterr().out
    assert code == 0
    assert "gradcheck ok" in out
    assert "FAIL" not in out
    assert "harness_catches_corruption" in out

    # an absurd tolerance must flip the exit code
    code = main(["gradcheck", "--tol", "1e-13"])
    out = capsys.readouterr().out
    assert code == 1
    assert "FAIL" in out
