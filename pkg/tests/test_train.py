import dataclasses

import numpy as np
import pytest

from ntl import losses as L
from ntl.datagen import GenSpec, gen_copy, generate
from ntl.model import forward, init_params
from ntl.numvocab import build_vocabulary, default_vocabulary
from ntl.train import (
    ConfigError,
    Objective,
    TrainConfig,
    TrainingDiverged,
    TrainLog,
    assemble_batch,
    encode_samples,
    load_state,
    resume_training,
    run_training,
)

V = default_vocabulary()
TINY = dict(d_model=16, n_heads=2, n_layers=1, d_ff=32, context_length=40, batch_size=8)


@pytest.fixture(scope="module")
def data():
    return generate(GenSpec("add_sub", (1, 2), 3, 300, 40, 40, seed=0))


def records(tlog):
    return [dataclasses.replace(r, wall_ms=0.0) for r in tlog.records]


def test_same_config_gives_same_log(data):
    cfg = TrainConfig(loss="ce+ntl-was", steps=30, eval_every=10, eval_samples=20, **TINY)
    p1, log1 = run_training(cfg, data["train"], V, data["interpolation"])
    p2, log2 = run_training(cfg, data["train"], V, data["interpolation"])
    assert records(log1) == records(log2)
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert [r.step for r in log1.records] == [10, 20, 30]


def test_lambda_zero_matches_pure_ce(data):
    ce = TrainConfig(loss="ce", steps=20, eval_every=10, eval_samples=16, **TINY)
    was = dataclasses.replace(ce, loss="ce+ntl-was", lam=0.0)
    p1, log1 = run_training(ce, data["train"], V, data["interpolation"])
    p2, log2 = run_training(was, data["train"], V, data["interpolation"])
    assert all(np.array_equal(p1[k], p2[k]) for k in p1)
    assert [(r.loss_ce, r.eval_mape) for r in log1.records] == [(r.loss_ce, r.eval_mape) for r in log2.records]


def test_resume_matches_uninterrupted(data, tmp_path):
    cfg = TrainConfig(loss="ce+ntl-mse", steps=24, **TINY)
    full, _ = run_training(cfg, data["train"], V)
    run_training(cfg, data["train"], V, out_dir=tmp_path / "half", until=12)
    state, _ = load_state(tmp_path / "half", len(V))
    assert state.step == 12
    resumed, _ = resume_training(cfg, data["train"], V, tmp_path / "half")
    assert all(np.array_equal(full[k], resumed[k]) for k in full)


def test_question_positions_get_zero_gradient(data):
    cfg = TrainConfig(loss="ce+ntl-was", **TINY)
    enc = encode_samples(data["train"][:4], V)
    inputs, pad, labels = assemble_batch(enc, V)
    mcfg = cfg.model_config(len(V))
    logits, _ = forward(init_params(mcfg), mcfg, inputs, pad)
    B, T, _ = logits.shape
    res, _, _ = Objective(cfg, V)(logits.reshape(B * T, -1), labels)
    g = res.grad_logits.reshape(B, T, -1)
    for b, e in enumerate(enc):
        n_scored = len(e.answer)
        assert not g[b, : T - n_scored].any()
        assert np.abs(g[b, T - n_scored:]).sum(axis=-1).min() > 0
        scored = labels.ids.reshape(B, T)[b, T - n_scored:]
        assert scored.tolist() == list(e.answer)


def test_single_batch_memorization():
    samples = generate(GenSpec("add_sub", (1, 1), 2, 4, 0, 0, seed=1))["train"]
    cfg = TrainConfig(loss="ce+ntl-was", steps=200, lr=3e-3, eval_every=10, seed=0,
                      **{**TINY, "batch_size": 16})
    _, tlog = run_training(cfg, samples, V)
    assert tlog.records[-1].loss_total < 0.05


def test_outputs_written(data, tmp_path):
    cfg = TrainConfig(loss="ce+gce+ntl-was-cdf", steps=10, eval_every=5, eval_samples=12, **TINY)
    run_training(cfg, data["train"], V, data["extrapolation"], tmp_path)
    for name in ("model.ntlf", "optimizer.npz", "train_log.csv", "eval_buckets.csv", "train.cfg"):
        assert (tmp_path / name).exists()
    header = (tmp_path / "train_log.csv").read_text().splitlines()[0]
    assert header == "step,loss_total,loss_ce,loss_ntl,eval_accuracy,eval_mae,eval_mape,wall_ms"
    back = TrainLog.read_csv(tmp_path / "train_log.csv", tmp_path / "eval_buckets.csv")
    assert [r.step for r in back.records] == [5, 10]
    assert set(back.records[0].bucket_mape) == {3}
    assert TrainConfig.loads((tmp_path / "train.cfg").read_text()) == cfg


def test_config_file_parsing():
    cfg = TrainConfig.loads("loss = ce+ntl-huber  # comment\nlam = 0.5\nsquash = none\n\nsteps=7\n")
    assert (cfg.loss, cfg.lam, cfg.squash, cfg.steps) == ("ce+ntl-huber", 0.5, None, 7)
    with pytest.raises(ConfigError, match="unknown key"):
        TrainConfig.loads("learning_rate = 0.1\n")
    with pytest.raises(ConfigError):
        TrainConfig.loads("steps = many\n")
    with pytest.raises(ConfigError):
        TrainConfig.loads("no equals sign\n")


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(loss="ce+ntl-xyz")
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(ConfigError):
        TrainConfig(loss="ce+gce", sigma=0)
    uneven = build_vocabulary(["<pad>", "<eos>"], [("1", 1), ("10", 10), ("100", 100)])
    with pytest.raises(ConfigError, match="equal spacing"):
        Objective(TrainConfig(loss="ce+ntl-was-cdf"), uneven)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_loss_aborts_with_record(data, tmp_path):
    cfg = TrainConfig(loss="ce", steps=5, lr=1e30, **TINY)
    with pytest.raises(TrainingDiverged) as info:
        run_training(cfg, data["train"], V, out_dir=tmp_path)
    rec = info.value.record
    assert len(rec["questions"]) == TINY["batch_size"]
    assert (tmp_path / "nan_abort.json").exists()


def test_text_only_data_is_unaffected_by_ntl():
    samples = gen_copy(60, seed=2)
    ce = TrainConfig(loss="ce", steps=15, **TINY)
    a, _ = run_training(ce, samples, V)
    b, _ = run_training(dataclasses.replace(ce, loss="ce+ntl-was"), samples, V)
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_empty_or_overlong_data_rejected(data):
    with pytest.raises(ValueError):
        run_training(TrainConfig(**TINY), [], V)
    with pytest.raises(ConfigError):
        run_training(TrainConfig(**{**TINY, "context_length": 8}), data["train"], V)


def test_objective_ntl_is_zero_on_text_labels():
    labels = L.LabelBatch.of([V.id("a"), V.id("b")])
    z = np.random.default_rng(0).normal(size=(2, len(V)))
    res, ce_total, ntl_total = Objective(TrainConfig(loss="ce+ntl-was"), V)(z, labels)
    assert ntl_total == 0.0 and res.total == ce_total
