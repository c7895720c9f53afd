"""Training loop: batches -> model -> CE (+ number-token loss) -> AdamW."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses as L
from .checkpoint import load_checkpoint, save_checkpoint
from .costs import build_cost
from .evalx import evaluate_by_bucket
from .model import AdamState, ModelConfig, Params, adam_step, backward, forward, init_params
from .numvocab import NumberVocabulary

log = logging.getLogger(__name__)

LOSS_SPECS = (
    "ce", "ce+ntl-mse", "ce+ntl-mae", "ce+ntl-huber", "ce+ntl-was", "ce+ntl-was-cdf",
    "ce+gce", "ce+gce+ntl-was-cdf",
)
LOG_HEADER = ["step", "loss_total", "loss_ce", "loss_ntl", "eval_accuracy", "eval_mae", "eval_mape", "wall_ms"]


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "ce"
    lam: float = L.DEFAULT_LAMBDA
    sigma: float = L.DEFAULT_SIGMA
    squash: float | None = None
    huber_delta: float = 1.0
    softmax_domain: str = "slice"
    batch_size: int = 32
    steps: int = 1000
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 0
    eval_samples: int = 256
    checkpoint_every: int = 0
    context_length: int = 64
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256

    def __post_init__(self):
        if self.loss not in LOSS_SPECS:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {', '.join(LOSS_SPECS)}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if "gce" in self.loss and not self.sigma > 0:
            raise ConfigError("sigma must be > 0 when GCE is enabled")
        if self.squash is not None and not self.squash > 0:
            raise ConfigError("squash factor must be > 0")
        if self.softmax_domain not in ("slice", "full"):
            raise ConfigError("softmax_domain must be 'slice' or 'full'")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size, self.context_length, self.d_model, self.n_heads,
                           self.n_layers, self.d_ff, self.seed, 32)

    def check_vocab(self, vocab: NumberVocabulary) -> None:
        if "was-cdf" in self.loss and not vocab.sorted_equidistant:
            raise ConfigError(
                f"loss {self.loss} requires number tokens sorted by value with equal spacing; "
                "this vocabulary is not")

    # flat `key = value` files

    def dumps(self) -> str:
        out = []
        for f in dataclasses.fields(self):
            val = getattr(self, f.name)
            out.append(f"{f.name} = {'none' if val is None else val}")
        return "\n".join(out) + "\n"

    @classmethod
    def loads(cls, text: str, **overrides) -> "TrainConfig":
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        kwargs = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = (part.strip() for part in line.partition("="))
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            kwargs[key] = _coerce(types[key], val, key)
        kwargs.update(overrides)
        return cls(**kwargs)


def _coerce(typ: str, val: str, key: str):
    try:
        if val.lower() == "none" and "None" in str(typ):
            return None
        if "int" in str(typ):
            return int(val)
        if "float" in str(typ):
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"bad value for {key}: {val!r}") from None


# ------------------------------------------------------------------ losses


@dataclass
class Objective:
    """Maps a loss spec onto the loss functions for one vocabulary."""

    config: TrainConfig
    vocab: NumberVocabulary

    def __post_init__(self):
        self.config.check_vocab(self.vocab)
        kind = "euclidean" if self.config.squash is None else "squashed"
        self.cost = build_cost(self.vocab, kind, self.config.squash)

    def __call__(self, logits: np.ndarray, labels: L.LabelBatch):
        """Returns (combined LossResult, ce total, ntl total)."""
        cfg = self.config
        dom = cfg.softmax_domain
        ce = L.cross_entropy(logits, labels)
        spec = cfg.loss
        if spec == "ce":
            return ce, ce.total, 0.0
        if spec.startswith("ce+ntl-"):
            variant = spec.removeprefix("ce+ntl-")
            if variant in ("mse", "mae", "huber"):
                ntl = L.ntl_lp(logits, labels, self.vocab, variant, cfg.huber_delta, dom)
            elif variant == "was":
                ntl = L.ntl_was(logits, labels, self.vocab, self.cost, dom)
            else:
                ntl = L.ntl_was_cdf(logits, None, labels, self.vocab, dom)
            return L.combine(ce, ntl, cfg.lam, consume=True), ce.total, ntl.total
        targets = L.gaussian_smooth_labels(labels, cfg.sigma, self.vocab)
        out = L.combine(ce, L.gce(logits, targets, labels, self.vocab, dom), 1.0, consume=True)
        if spec == "ce+gce":
            return out, ce.total, 0.0
        ntl = L.ntl_was_cdf(logits, targets, labels, self.vocab, dom)
        return L.combine(out, ntl, cfg.lam, consume=True), ce.total, ntl.total


# ---------------------------------------------------------------- batching


@dataclass
class EncodedSample:
    prompt: tuple[int, ...]
    answer: tuple[int, ...]  # includes the stop token


def encode_samples(samples, vocab: NumberVocabulary) -> list[EncodedSample]:
    return [EncodedSample(vocab.encode_text(s.question).ids,
                          vocab.encode_text(s.answer).ids + (vocab.eos_id,)) for s in samples]


def assemble_batch(encoded: Sequence[EncodedSample], vocab: NumberVocabulary):
    """Left-padded inputs with next-token labels; only answer tokens are scored.

    Returns ``(inputs, pad_mask, labels)`` where ``labels.pad_mask`` excludes
    padding and every question position.
    """
    seqs = [e.prompt + e.answer for e in encoded]
    width = max(len(s) for s in seqs) - 1
    B = len(seqs)
    inputs = np.full((B, width), vocab.pad_id, dtype=np.int64)
    targets = np.full((B, width), vocab.pad_id, dtype=np.int64)
    pad = np.ones((B, width), dtype=bool)
    ignore = np.ones((B, width), dtype=bool)
    for b, (e, s) in enumerate(zip(encoded, seqs)):
        n = len(s) - 1
        off = width - n
        inputs[b, off:] = s[:-1]
        targets[b, off:] = s[1:]
        pad[b, off:] = False
        ignore[b, off + len(e.prompt) - 1:] = False
    return inputs, pad, L.LabelBatch.of(targets.reshape(-1), ignore.reshape(-1))


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Sample indices for one step; depends only on (seed, step) so runs can resume."""
    return np.random.default_rng([seed, step]).integers(0, n, size=batch_size)


# -------------------------------------------------------------------- logs


@dataclass
class LogRecord:
    step: int
    loss_total: float
    loss_ce: float
    loss_ntl: float
    eval_accuracy: float | None
    eval_mae: float | None
    eval_mape: float | None
    wall_ms: float
    bucket_mape: dict[int, float | None] = field(default_factory=dict)


@dataclass
class TrainLog:
    records: list[LogRecord] = field(default_factory=list)

    def append(self, rec: LogRecord) -> None:
        if self.records and rec.step <= self.records[-1].step:
            raise ValueError("log steps must increase")
        self.records.append(rec)

    def bucket_series(self) -> dict[int, list[tuple[int, float | None]]]:
        out: dict[int, list[tuple[int, float | None]]] = {}
        for r in self.records:
            for b, m in r.bucket_mape.items():
                out.setdefault(b, []).append((r.step, m))
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(LOG_HEADER)
            for r in self.records:
                w.writerow([_cell(getattr(r, k)) for k in LOG_HEADER])

    def write_bucket_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "bucket", "eval_mape"])
            for r in self.records:
                for b, m in sorted(r.bucket_mape.items()):
                    w.writerow([r.step, b, _cell(m)])

    @classmethod
    def read_csv(cls, path: str | Path, bucket_path: str | Path | None = None) -> "TrainLog":
        buckets: dict[int, dict[int, float | None]] = {}
        if bucket_path is not None and Path(bucket_path).exists():
            with open(bucket_path, newline="") as fh:
                for row in csv.DictReader(fh):
                    buckets.setdefault(int(row["step"]), {})[int(row["bucket"])] = _num(row["eval_mape"])
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                step = int(row["step"])
                out.append(LogRecord(step, float(row["loss_total"]), float(row["loss_ce"]), float(row["loss_ntl"]),
                                     _num(row["eval_accuracy"]), _num(row["eval_mae"]), _num(row["eval_mape"]),
                                     float(row["wall_ms"]), buckets.get(step, {})))
        return out


def _cell(x):
    return "" if x is None else (repr(x) if isinstance(x, float) else x)


def _num(s: str) -> float | None:
    return None if s == "" else float(s)


# ------------------------------------------------------------------- state


@dataclass
class TrainState:
    params: Params
    adam: AdamState
    step: int = 0


def save_state(state: TrainState, cfg: ModelConfig, out_dir: str | Path) -> Path:
    """Checkpoint plus the optimizer moments needed to resume exactly."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ntlf"
    save_checkpoint(state.params, cfg, ckpt)
    np.savez(out / "optimizer.npz", step=np.int64(state.step), adam_step=np.int64(state.adam.step),
             **{f"m/{k}": a for k, a in state.adam.m.items()},
             **{f"v/{k}": a for k, a in state.adam.v.items()})
    return ckpt


def load_state(out_dir: str | Path, vocab_size: int | None = None) -> tuple[TrainState, ModelConfig]:
    out = Path(out_dir)
    params, cfg = load_checkpoint(out / "model.ntlf", vocab_size)
    with np.load(out / "optimizer.npz") as z:
        m = {k: z[f"m/{k}"] for k in params}
        v = {k: z[f"v/{k}"] for k in params}
        return TrainState(params, AdamState(int(z["adam_step"]), m, v), int(z["step"])), cfg


# -------------------------------------------------------------------- loop


def train_step(state: TrainState, mcfg: ModelConfig, objective: Objective, batch, cfg: TrainConfig):
    inputs, pad, labels = batch
    logits, cache = forward(state.params, mcfg, inputs, pad)
    B, T, V = logits.shape
    res, ce_total, ntl_total = objective(logits.reshape(B * T, V), labels)
    if not np.isfinite(res.total):
        return res, ce_total, ntl_total
    grads = backward(state.params, mcfg, cache, res.grad_logits.reshape(B, T, V))
    adam_step(state.params, grads, state.adam, cfg.lr, weight_decay=cfg.weight_decay)
    state.step += 1
    return res, ce_total, ntl_total


def run_training(cfg: TrainConfig, train_samples, vocab: NumberVocabulary, eval_samples=None,
                 out_dir: str | Path | None = None, state: TrainState | None = None,
                 until: int | None = None) -> tuple[Params, TrainLog]:
    """Train for ``cfg.steps`` steps (or until step ``until`` when resuming).

    Logs at ``cfg.eval_every`` and at the final step; writes ``train_log.csv``,
    ``eval_buckets.csv`` and checkpoints under ``out_dir`` when given.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    objective = Objective(cfg, vocab)
    mcfg = cfg.model_config(len(vocab))
    encoded = encode_samples(train_samples, vocab)
    longest = max(len(e.prompt) + len(e.answer) - 1 for e in encoded)
    if longest > mcfg.context_length:
        raise ConfigError(f"longest sample needs {longest} positions > context length {mcfg.context_length}")
    if state is None:
        params = init_params(mcfg)
        state = TrainState(params, AdamState.zeros(params))
    end = cfg.steps if until is None else until
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    tlog = TrainLog()
    sums = np.zeros(3)
    count = 0
    t0 = time.perf_counter()
    while state.step < end:
        step = state.step
        idx = batch_indices(cfg.seed, step, len(encoded), cfg.batch_size)
        batch = assemble_batch([encoded[i] for i in idx], vocab)
        res, ce_total, ntl_total = train_step(state, mcfg, objective, batch, cfg)
        if not np.isfinite(res.total):
            record = {"step": step, "loss_total": float(res.total), "loss_ce": ce_total, "loss_ntl": ntl_total,
                      "batch_indices": idx.tolist(),
                      "questions": [train_samples[i].question for i in idx]}
            if out is not None:
                (out / "nan_abort.json").write_text(json.dumps(record, indent=2) + "\n")
            raise TrainingDiverged(f"non-finite loss at step {step}", record)
        sums += (res.total, ce_total, ntl_total)
        count += 1
        done = state.step
        if (cfg.eval_every and done % cfg.eval_every == 0) or done == end:
            acc = mae = mape = None
            buckets: dict[int, float | None] = {}
            if eval_samples:
                subset = list(eval_samples)[: cfg.eval_samples]
                report, by_bucket = evaluate_by_bucket(state.params, mcfg, subset, vocab)
                acc, mae, mape = report.exact_match_accuracy, report.mae, report.mape
                buckets = {b: r.mape for b, r in by_bucket.items()}
            mean = sums / count
            tlog.append(LogRecord(done, float(mean[0]), float(mean[1]), float(mean[2]), acc, mae, mape,
                                  (time.perf_counter() - t0) * 1e3, buckets))
            log.info("step %d loss %.4f (ce %.4f ntl %.4f) acc %s mape %s", done, mean[0], mean[1], mean[2], acc, mape)
            sums[:] = 0
            count = 0
        if out is not None and cfg.checkpoint_every and done % cfg.checkpoint_every == 0:
            save_state(state, mcfg, out)
    if out is not None:
        save_state(state, mcfg, out)
        tlog.write_csv(out / "train_log.csv")
        tlog.write_bucket_csv(out / "eval_buckets.csv")
        (out / "train.cfg").write_text(cfg.dumps())
    return state.params, tlog


def resume_training(cfg: TrainConfig, train_samples, vocab: NumberVocabulary, ckpt_dir: str | Path,
                    eval_samples=None, out_dir: str | Path | None = None):
    state, mcfg = load_state(ckpt_dir, len(vocab))
    if mcfg != cfg.model_config(len(vocab)):
        raise ConfigError("checkpoint model configuration does not match the training config")
    return run_training(cfg, train_samples, vocab, eval_samples, out_dir, state)
