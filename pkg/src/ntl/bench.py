"""Wall-clock benchmark of the losses, alone and inside a full training step.

Configurations are interleaved within every iteration so slow drifts in
machine load hit all of them equally, and the order is reshuffled every
iteration so no configuration always runs right after the cache-flushing
full-vocabulary one. Warmup iterations are discarded.
"""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as L
from .costs import build_cost
from .model import AdamState, ModelConfig, adam_step, backward, forward, init_params
from .numvocab import DIGITS, NumberVocabulary, build_vocabulary

LOSS_ONLY_CONFIGS = ("ce", "ntl-mse", "ntl-was", "ntl-was-cdf", "ce+ntl-mse", "ce+ntl-was", "ce+ntl-was-cdf")
FULL_STEP_CONFIGS = ("ce", "ce+ntl-mse", "ce+ntl-was", "ce+ntl-was-cdf")
CSV_HEADER = ["scenario", "config", "mean_us", "std_us", "min_us", "median_us", "overhead_vs_ce"]


@dataclass(frozen=True)
class BenchSpec:
    vocab_size: int = 32000
    n_number_tokens: int = 10
    number_proportion: float = 0.8
    positions: int = 512
    iterations: int = 100
    warmup: int = 5
    loss_configs: tuple[str, ...] = LOSS_ONLY_CONFIGS
    step_configs: tuple[str, ...] = FULL_STEP_CONFIGS
    context_length: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.number_proportion <= 1.0:
            raise ValueError("number_proportion must be in [0, 1]")
        if self.iterations < 10:
            raise ValueError("iterations must be >= 10")
        if not 2 <= self.n_number_tokens <= 10:
            raise ValueError("n_number_tokens must be between 2 and 10")
        if self.vocab_size <= self.n_number_tokens:
            raise ValueError("vocab_size must exceed the number-token count")
        if self.positions % self.context_length:
            raise ValueError("positions must be a multiple of context_length")


@dataclass(frozen=True)
class BenchRow:
    scenario: str
    config: str
    mean_us: float
    std_us: float
    min_us: float
    median_us: float
    overhead_vs_ce: float | None


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    def get(self, scenario: str, config: str) -> BenchRow:
        for r in self.rows:
            if r.scenario == scenario and r.config == config:
                return r
        raise KeyError((scenario, config))

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.scenario, r.config, f"{r.mean_us:.3f}", f"{r.std_us:.3f}", f"{r.min_us:.3f}",
                            f"{r.median_us:.3f}", "" if r.overhead_vs_ce is None else f"{r.overhead_vs_ce:.6f}"])

    def to_text(self) -> str:
        lines = [f"{'scenario':<10} {'config':<16} {'mean_us':>12} {'median_us':>12} {'overhead':>9}"]
        for r in self.rows:
            ov = "" if r.overhead_vs_ce is None else f"{100 * r.overhead_vs_ce:+.1f}%"
            lines.append(f"{r.scenario:<10} {r.config:<16} {r.mean_us:>12.1f} {r.median_us:>12.1f} {ov:>9}")
        return "\n".join(lines) + "\n"


def bench_vocabulary(spec: BenchSpec) -> NumberVocabulary:
    text = [f"<t{i}>" for i in range(spec.vocab_size - spec.n_number_tokens)]
    return build_vocabulary(text, DIGITS[: spec.n_number_tokens])


def random_labels(spec: BenchSpec, vocab: NumberVocabulary, rng: np.random.Generator) -> L.LabelBatch:
    """Number-token labels at a random ``number_proportion`` of positions."""
    n_num = int(round(spec.number_proportion * spec.positions))
    ids = rng.integers(0, spec.vocab_size - spec.n_number_tokens, size=spec.positions)
    where = rng.permutation(spec.positions)[:n_num]
    ids[where] = rng.choice(vocab.number_indices, size=n_num)
    return L.LabelBatch.of(ids)


def _loss_fn(config: str, vocab: NumberVocabulary):
    cost = build_cost(vocab)
    ntl = {
        "ntl-mse": lambda z, y: L.ntl_lp(z, y, vocab, "mse"),
        "ntl-was": lambda z, y: L.ntl_was(z, y, vocab, cost),
        "ntl-was-cdf": lambda z, y: L.ntl_was_cdf(z, None, y, vocab),
    }
    if config == "ce":
        return L.cross_entropy
    if config in ntl:
        return ntl[config]
    if config.startswith("ce+") and config[3:] in ntl:
        part = ntl[config[3:]]
        return lambda z, y: L.combine(L.cross_entropy(z, y), part(z, y), consume=True)
    raise ValueError(f"unknown benchmark config {config!r}")


def _summarize(scenario: str, samples: dict[str, list[int]]) -> list[BenchRow]:
    means = {c: statistics.fmean(t) / 1e3 for c, t in samples.items()}
    rows = []
    for c, t in samples.items():
        us = [x / 1e3 for x in t]
        base = means.get("ce")
        rows.append(BenchRow(scenario, c, means[c], statistics.pstdev(us), min(us), statistics.median(us),
                             None if base is None else (means[c] - base) / base))
    return rows


def _interleaved(configs, iterations: int, warmup: int, run, seed: int = 0) -> dict[str, list[int]]:
    configs = list(configs)
    rng = np.random.default_rng(seed)
    samples: dict[str, list[int]] = {c: [] for c in configs}
    for it in range(warmup + iterations):
        for k in rng.permutation(len(configs)):
            c = configs[k]
            t0 = time.perf_counter_ns()
            run(c)
            dt = time.perf_counter_ns() - t0
            if it >= warmup:
                samples[c].append(dt)
    return samples


def bench_loss_only(spec: BenchSpec) -> list[BenchRow]:
    rng = np.random.default_rng(spec.seed)
    vocab = bench_vocabulary(spec)
    logits = rng.normal(size=(spec.positions, spec.vocab_size)).astype(np.float32)
    labels = random_labels(spec, vocab, rng)
    fns = {c: _loss_fn(c, vocab) for c in spec.loss_configs}
    samples = _interleaved(spec.loss_configs, spec.iterations, spec.warmup, lambda c: fns[c](logits, labels), spec.seed)
    return _summarize("loss", samples)


def bench_full_step(spec: BenchSpec) -> list[BenchRow]:
    """Forward, loss, backward and AdamW on the default model at ``vocab_size``."""
    rng = np.random.default_rng(spec.seed)
    vocab = bench_vocabulary(spec)
    cfg = ModelConfig(spec.vocab_size, context_length=spec.context_length, seed=spec.seed)
    B, T = spec.positions // spec.context_length, spec.context_length
    inputs = rng.integers(0, spec.vocab_size, size=(B, T))
    labels = random_labels(spec, vocab, rng)
    fns = {c: _loss_fn(c, vocab) for c in spec.step_configs}
    states = {}
    for c in spec.step_configs:
        params = init_params(cfg)
        states[c] = (params, AdamState.zeros(params))

    def step(c):
        params, adam = states[c]
        logits, cache = forward(params, cfg, inputs)
        res = fns[c](logits.reshape(B * T, -1), labels)
        grads = backward(params, cfg, cache, res.grad_logits.reshape(B, T, -1))
        adam_step(params, grads, adam, 1e-4)

    samples = _interleaved(spec.step_configs, spec.iterations, spec.warmup, step, spec.seed)
    return _summarize("step", samples)


def run_bench(spec: BenchSpec, full_step: bool = True) -> BenchReport:
    rows = bench_loss_only(spec) if spec.loss_configs else []
    if full_step and spec.step_configs:
        rows += bench_full_step(spec)
    return BenchReport(rows)
