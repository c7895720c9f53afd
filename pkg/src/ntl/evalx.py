"""Greedy-decoding evaluation and the numeric metric suite."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .model import ModelConfig, Params, generate_batch
from .numvocab import NumberVocabulary

DEFAULT_THRESHOLD = 0.5
_INT_RE = re.compile(r"^[+-]?\d+$")


@dataclass(frozen=True)
class MetricsReport:
    exact_match_accuracy: float
    mae: float | None
    r2: float | None
    mape: float | None
    pearson: float | None
    spearman: float | None
    parse_failure_rate: float
    n: int
    log_transform_applied: bool

    HEADER = ("exact_match_accuracy,mae,r2,mape,pearson,spearman,"
              "parse_failure_rate,n,log_transform_applied")

    def to_csv(self) -> str:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, bool):
                return str(x).lower()
            return repr(x) if isinstance(x, float) else str(x)

        return self.HEADER + "\n" + ",".join(fmt(getattr(self, f.name)) for f in fields(self)) + "\n"

    def to_text(self) -> str:
        lines = []
        for key, val in asdict(self).items():
            shown = "n/a" if val is None else (f"{val:.6g}" if isinstance(val, float) else str(val))
            lines.append(f"{key:>22}: {shown}")
        return "\n".join(lines) + "\n"


def signed_log10(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.log10(1.0 + np.abs(x))


def canonical_answer(s: str) -> str:
    s = s.strip()
    if _INT_RE.match(s):
        return str(int(s))
    return s


def parse_prediction(ids: Sequence[int], vocab: NumberVocabulary) -> float | None:
    """Value of the generated answer, or None unless it is exactly one number."""
    if len(ids) == 0:
        return None
    span = vocab.decode_number_span(ids, 0)
    if span is None or span[1] != len(ids):
        return None
    return span[0]


def _mean(xs: Iterable[float]) -> float:
    xs = list(xs)
    return math.fsum(xs) / len(xs)


def compute_metrics(pred_ids: Sequence[Sequence[int]], truths: Sequence[str], vocab: NumberVocabulary,
                    log_transform: bool = True) -> MetricsReport:
    """Metrics from decoded answer token ids (stop token already removed)."""
    n = len(truths)
    if n == 0:
        raise ValueError("no samples to evaluate")
    correct = 0
    pairs = []
    failures = 0
    for ids, truth in zip(pred_ids, truths):
        text = vocab.decode(ids)
        if canonical_answer(text) == canonical_answer(truth):
            correct += 1
        val = parse_prediction(ids, vocab)
        if val is None:
            failures += 1
            continue
        try:
            pairs.append((val, float(truth)))
        except ValueError:
            pass  # non-numeric ground truth
    acc = correct / n
    pfr = failures / n
    if not pairs:
        return MetricsReport(acc, None, None, None, None, None, pfr, n, log_transform)
    pred = np.array([p for p, _ in pairs])
    true = np.array([t for _, t in pairs])
    tp, tt = (signed_log10(pred), signed_log10(true)) if log_transform else (pred, true)
    mae = _mean(np.abs(tp - tt))
    ss_res = math.fsum((tt - tp) ** 2)
    ss_tot = math.fsum((tt - _mean(tt)) ** 2)
    if ss_res == 0:
        r2 = 1.0
    elif ss_tot == 0:
        r2 = None
    else:
        r2 = 1.0 - ss_res / ss_tot
    mape = _mean(np.abs(pred - true) / np.maximum(np.abs(true), 1.0))
    pearson = spearman = None
    if len(pairs) >= 2 and np.ptp(pred) > 0 and np.ptp(true) > 0:
        pearson = float(stats.pearsonr(pred, true)[0])
        spearman = float(stats.spearmanr(pred, true)[0])
    return MetricsReport(acc, float(mae), r2, float(mape), pearson, spearman, pfr, n, log_transform)


def decode_answers(params: Params, cfg: ModelConfig, questions: Sequence[str], vocab: NumberVocabulary,
                   max_new: int = 12, batch_size: int = 256) -> list[list[int]]:
    """Greedy answers (without the stop token) for each question."""
    out: list[list[int]] = []
    prompts = [list(vocab.encode_text(q).ids) for q in questions]
    for start in range(0, len(prompts), batch_size):
        chunk = prompts[start:start + batch_size]
        seqs = generate_batch(params, cfg, chunk, max_new, vocab.eos_id, vocab.pad_id)
        for prompt, seq in zip(chunk, seqs):
            gen = seq[len(prompt):]
            if vocab.eos_id in gen:
                gen = gen[:gen.index(vocab.eos_id)]
            out.append(gen)
    return out


def evaluate(params: Params, cfg: ModelConfig, samples, vocab: NumberVocabulary,
             log_transform: bool = True, max_new: int = 12) -> MetricsReport:
    if not samples:
        raise ValueError("no samples to evaluate")
    preds = decode_answers(params, cfg, [s.question for s in samples], vocab, max_new)
    return compute_metrics(preds, [s.answer for s in samples], vocab, log_transform)


def evaluate_by_bucket(params: Params, cfg: ModelConfig, samples, vocab: NumberVocabulary,
                       log_transform: bool = True, max_new: int = 12):
    """Overall report plus one report per difficulty bucket (largest operand digit count)."""
    preds = decode_answers(params, cfg, [s.question for s in samples], vocab, max_new)
    overall = compute_metrics(preds, [s.answer for s in samples], vocab, log_transform)
    by_bucket = {}
    for b in sorted({s.bucket for s in samples}):
        idx = [i for i, s in enumerate(samples) if s.bucket == b]
        by_bucket[b] = compute_metrics([preds[i] for i in idx], [samples[i].answer for i in idx],
                                       vocab, log_transform)
    return overall, by_bucket


@dataclass(frozen=True)
class Crossing:
    bucket: int
    step_a: int | None
    step_b: int | None


def first_crossing(series: Sequence[tuple[int, float | None]], threshold: float) -> int | None:
    for step, mape in series:
        if mape is not None and mape < threshold:
            return step
    return None


def compare_runs(log_a, log_b, threshold: float = DEFAULT_THRESHOLD) -> dict[int, Crossing]:
    """First eval step with MAPE below ``threshold`` per bucket, for two training logs."""
    steps_a = [r.step for r in log_a.records]
    steps_b = [r.step for r in log_b.records]
    if steps_a != steps_b:
        raise ValueError("logs were evaluated at different steps")
    buckets = sorted(set(log_a.bucket_series()) | set(log_b.bucket_series()))
    out = {}
    for b in buckets:
        out[b] = Crossing(b, first_crossing(log_a.bucket_series().get(b, []), threshold),
                          first_crossing(log_b.bucket_series().get(b, []), threshold))
    return out
