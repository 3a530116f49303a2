"""Training loop, metrics, evaluation, and checkpoint contracts."""

import numpy as np
import pytest

from chunkmem.errors import (
    CheckpointError,
    ContractError,
    NonFiniteLossError,
    ShapeMismatchError,
    TruncatedBlobError,
    VersionMismatchError,
)
from chunkmem.stack import forward_sequence
from chunkmem.tasks import ballet_batch, ballet_logits, encode_ballet_tokens
from chunkmem.tensor import GradTape
from chunkmem.training import (
    METRICS_COLUMNS,
    MetricsRow,
    RunConfig,
    build_model,
    evaluate,
    fixed_batch_losses,
    load_checkpoint,
    model_config,
    read_metrics_csv,
    save_checkpoint,
    train,
    write_metrics_csv,
)


def small_rc(**kw):
    base = dict(task="ballet", n_dances=2, delay=4, d_model=32, n_heads=4,
                batch=8, steps=6, eval_every=3, eval_episodes=16, seed=3)
    base.update(kw)
    return RunConfig(**base)


# ------------------------------------------------------------- run config

def test_run_config_validation():
    with pytest.raises(ContractError):
        RunConfig(task="chess")
    with pytest.raises(ContractError):
        RunConfig(model="transformer")
    with pytest.raises(ContractError):
        RunConfig(batch=0)
    with pytest.raises(ContractError):
        RunConfig(steps=-1)
    with pytest.raises(ContractError):
        RunConfig(lr=0.0)
    with pytest.raises(ContractError):
        RunConfig(aux_weight=-0.5)
    with pytest.raises(ContractError):
        RunConfig(eval_every=0)
    with pytest.raises(ContractError):
        RunConfig(task="pai", model="trxl")


def test_model_config_mapping():
    cfg = model_config(RunConfig(model="trxl-topk", n_dances=5))
    assert cfg.kind == "trxl_topk"
    assert cfg.n_classes == 5
    assert cfg.dancer_vocab == 9  # default null row still fits

    cfg13 = model_config(RunConfig(n_dances=13))
    assert cfg13.dancer_vocab == 14  # ids up to 12 plus the null row

    cfg_pai = model_config(RunConfig(task="pai"))
    assert cfg_pai.task == "pai"
    assert cfg_pai.n_classes == 2


# ------------------------------------------------------------- metrics

def test_metrics_csv_round_trip(tmp_path):
    rows = [
        MetricsRow(10, 0.123456789012345, 0.5, 0.25, 12.75, 1000),
        MetricsRow(20, 0.1, 1.0 / 3.0, 0.875, 901.5, 2000),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(str(path), rows)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(METRICS_COLUMNS)
    assert read_metrics_csv(str(path)) == rows


def test_metrics_rows_shape_and_monotonicity(tmp_path):
    path = tmp_path / "m.csv"
    _model, rows = train(small_rc(), metrics_path=str(path))
    assert [r.step for r in rows] == [3, 6]
    assert all(rows[i].step < rows[i + 1].step for i in range(len(rows) - 1))
    assert all(
        rows[i].attention_score_count <= rows[i + 1].attention_score_count
        for i in range(len(rows) - 1))
    assert rows[0].attention_score_count > 0
    assert read_metrics_csv(str(path)) == rows


def test_lstm_counts_no_attention_scores():
    _model, rows = train(small_rc(model="lstm", steps=2, eval_every=2))
    assert rows[-1].attention_score_count == 0


def test_same_seed_runs_match_bitwise_except_wall(tmp_path):
    rc = small_rc(steps=8, eval_every=2)
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    _m1, rows1 = train(rc, checkpoint_path=str(p1))
    _m2, rows2 = train(rc, checkpoint_path=str(p2))
    assert len(rows1) == len(rows2)
    for a, b in zip(rows1, rows2):
        assert a.step == b.step
        assert a.train_loss == b.train_loss
        assert a.train_acc == b.train_acc
        assert a.eval_acc == b.eval_acc
        assert a.attention_score_count == b.attention_score_count
    assert p1.read_bytes() == p2.read_bytes()


def test_progress_callback_sees_every_row():
    seen = []
    _model, rows = train(small_rc(), progress=seen.append)
    assert seen == rows


def test_early_stop_on_target_accuracy():
    # an untrained 2-way readout sits near 50%, far above a 1% target
    _model, rows = train(small_rc(steps=500, eval_every=2,
                                  target_accuracy=0.01))
    assert rows[-1].step == 2
    assert len(rows) == 1


# ------------------------------------------------------------- descent

def test_fixed_batch_loss_strictly_decreases_50_steps():
    rc = RunConfig(task="ballet", n_dances=2, delay=16, batch=8,
                   lr=2e-4, seed=0)
    losses = fixed_batch_losses(rc, 50)
    assert len(losses) == 50
    assert all(np.isfinite(losses))
    for i in range(len(losses) - 1):
        assert losses[i + 1] < losses[i], (
            f"loss rose at update {i}: {losses[i]} -> {losses[i + 1]}")


def test_divergent_lr_aborts_with_named_step():
    rc = small_rc(lr=1e5, steps=200, eval_every=1000)
    with pytest.raises(NonFiniteLossError) as exc:
        with np.errstate(all="ignore"):  # overflow on the way down is the point
            train(rc)
    msg = str(exc.value)
    assert "step" in msg
    assert "parameter norms" in msg


# ------------------------------------------------------------- chance level

def test_untrained_ballet_accuracy_is_chance():
    rc = RunConfig(task="ballet", n_dances=8, delay=16, seed=11)
    model = build_model(rc)
    acc = evaluate(model, rc, n_episodes=1000)
    p = 1.0 / 8.0
    sigma = np.sqrt(p * (1 - p) / 1000)
    assert abs(acc - p) < 3 * sigma, f"accuracy {acc} not within 3 sigma of {p}"


def test_untrained_pai_accuracy_is_chance():
    rc = RunConfig(task="pai", chain_length=1, seed=7)
    model = build_model(rc)
    acc = evaluate(model, rc, n_episodes=1000)
    sigma = np.sqrt(0.25 / 1000)
    assert abs(acc - 0.5) < 3 * sigma, f"accuracy {acc} not within 3 sigma of 0.5"


def test_evaluate_is_deterministic():
    rc = small_rc()
    model = build_model(rc)
    a = evaluate(model, rc, n_episodes=64)
    b = evaluate(model, rc, n_episodes=64)
    assert a == b


# ------------------------------------------------------------- checkpoints

def test_checkpoint_save_load_save_byte_identical(tmp_path):
    for dtype in ("float32", "float64"):
        rc = small_rc(steps=2, eval_every=2, dtype=dtype)
        model, _rows = train(rc)
        p1 = tmp_path / f"{dtype}.ckpt"
        p2 = tmp_path / f"{dtype}2.ckpt"
        save_checkpoint(str(p1), model)
        save_checkpoint(str(p2), load_checkpoint(str(p1)))
        assert p1.read_bytes() == p2.read_bytes()


def test_checkpoint_round_trip_preserves_forward_bitwise(tmp_path):
    rc = small_rc(steps=3, eval_every=3, dtype="float32")
    model, _rows = train(rc)
    path = tmp_path / "m.ckpt"
    save_checkpoint(str(path), model)
    loaded = load_checkpoint(str(path))
    assert loaded.config == model.config

    dancers, directions, queries, _labels = ballet_batch(
        rc.n_dances, rc.delay, rc.seed, 0, 4)

    def logits_of(m):
        tape = GradTape(recording=False)
        xs = encode_ballet_tokens(tape, m, dancers, directions, queries)
        ys, _ = forward_sequence(tape, m, xs)
        return ballet_logits(tape, m, ys).data

    assert np.array_equal(logits_of(model), logits_of(loaded))


def test_zero_step_train_writes_loadable_checkpoint(tmp_path):
    path = tmp_path / "init.ckpt"
    rc = small_rc(steps=0)
    model, rows = train(rc, checkpoint_path=str(path))
    assert rows == []
    loaded = load_checkpoint(str(path))
    for k, p in model.params.items():
        assert np.array_equal(p.data.astype(np.float32),
                              loaded.params[k].data)


def _saved(tmp_path):
    rc = small_rc(steps=0)
    model, _ = train(rc)
    path = tmp_path / "base.ckpt"
    save_checkpoint(str(path), model)
    return path


def test_checkpoint_version_mismatch(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    bad = raw.replace(b"chunkmem checkpoint 1", b"chunkmem checkpoint 2", 1)
    path.write_bytes(bad)
    with pytest.raises(VersionMismatchError):
        load_checkpoint(str(path))


def test_checkpoint_shape_mismatch(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    assert b"param head.w 32x2 " in raw
    path.write_bytes(raw.replace(b"param head.w 32x2 ", b"param head.w 2x32 ", 1))
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(str(path))


def test_checkpoint_missing_param_line(tmp_path):
    path = _saved(tmp_path)
    lines = path.read_bytes().split(b"\n")
    dropped = [ln for ln in lines if not ln.startswith(b"param head.b ")]
    path.write_bytes(b"\n".join(dropped))
    with pytest.raises(ShapeMismatchError):
        load_checkpoint(str(path))


def test_checkpoint_truncated_blob(tmp_path):
    path = _saved(tmp_path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-17])
    with pytest.raises(TruncatedBlobError):
        load_checkpoint(str(path))


def test_checkpoint_trailing_garbage(tmp_path):
    path = _saved(tmp_path)
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00\x00")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))


def test_checkpoint_rejects_headerless_file(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    with pytest.raises(CheckpointError):
        load_checkpoint(str(path))
