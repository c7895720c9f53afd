"""Oracle self-checks: finite-difference gradients and transport equivalences.

Every case is generated from ``numpy.random.default_rng([seed, suite, case])``
so a ``(seed, cases)`` pair always produces the same case set. The loss ops
under test live in :data:`LOSS_OPS`; callers may pass their own mapping to
check a modified op.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import losses as L
from .costs import CostSpec, build_cost
from .numvocab import NumberVocabulary, build_vocabulary
from .ot import wasserstein_oracle

GRAD_TOL = 1e-6
EQUIV_TOL = 1e-9
FD_STEP = 1e-6
VOCAB_SIZE = 30
N_NUMBER = 10
POSITIONS = 8


@dataclass(frozen=True)
class Instance:
    """One random gradient-check problem; ``logits`` is the evaluation point."""

    vocab: NumberVocabulary
    logits: np.ndarray
    labels: L.LabelBatch
    huber_delta: float
    costs: dict[str, CostSpec]  # euclidean, squashed, explicit
    targets: L.TargetDistribution


LossOp = Callable[[Instance, np.ndarray], L.LossResult]


def _was(kind: str) -> LossOp:
    return lambda inst, z: L.ntl_was(z, inst.labels, inst.vocab, inst.costs[kind])


def _combined(inst: Instance, z: np.ndarray) -> L.LossResult:
    ce = L.cross_entropy(z, inst.labels)
    return L.combine(ce, L.ntl_was(z, inst.labels, inst.vocab, inst.costs["euclidean"]), L.DEFAULT_LAMBDA)


LOSS_OPS: dict[str, LossOp] = {
    "ce": lambda inst, z: L.cross_entropy(z, inst.labels),
    "ntl-mse": lambda inst, z: L.ntl_lp(z, inst.labels, inst.vocab, "mse"),
    "ntl-mae": lambda inst, z: L.ntl_lp(z, inst.labels, inst.vocab, "mae"),
    "ntl-huber": lambda inst, z: L.ntl_lp(z, inst.labels, inst.vocab, "huber", inst.huber_delta),
    "ntl-was/euclidean": _was("euclidean"),
    "ntl-was/squashed": _was("squashed"),
    "ntl-was/explicit": _was("explicit"),
    "ntl-was-cdf": lambda inst, z: L.ntl_was_cdf(z, None, inst.labels, inst.vocab),
    "ntl-was-cdf/gaussian": lambda inst, z: L.ntl_was_cdf(z, inst.targets, inst.labels, inst.vocab),
    "gce": lambda inst, z: L.gce(z, inst.targets, inst.labels, inst.vocab),
    "ntl-mse/full": lambda inst, z: L.ntl_lp(z, inst.labels, inst.vocab, "mse", domain="full"),
    "ntl-was/full": lambda inst, z: L.ntl_was(z, inst.labels, inst.vocab, inst.costs["euclidean"], "full"),
    "combined": _combined,
}


@dataclass
class CheckResult:
    name: str
    cases: int
    worst: float
    tolerance: float
    seconds: float
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures and self.worst <= self.tolerance


@dataclass
class SelfcheckReport:
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def to_text(self) -> str:
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            lines.append(f"{status} {r.name}: {r.cases} cases, worst {r.worst:.3e} "
                         f"(tol {r.tolerance:.0e}), {r.seconds:.1f}s")
            lines.extend(f"    {msg}" for msg in r.failures[:5])
        lines.append("selfcheck " + ("passed" if self.passed else "FAILED: " + ", ".join(self.failed)))
        return "\n".join(lines) + "\n"


# ----------------------------------------------------------------- cases


def _vocabulary(rng: np.random.Generator, equidistant: bool) -> NumberVocabulary:
    if equidistant:
        start, step = rng.uniform(-5, 5), rng.uniform(0.25, 3.0)
        values = start + step * np.arange(N_NUMBER)
    else:
        values = np.sort(rng.choice(np.arange(-40, 41), size=N_NUMBER, replace=False)
                         + rng.uniform(0, 0.5, size=N_NUMBER))
        values = rng.permutation(values)
    text = [f"w{i}" for i in range(VOCAB_SIZE - N_NUMBER)]
    return build_vocabulary(text, [(f"n{i}", float(v)) for i, v in enumerate(values)])


def _explicit_cost(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.uniform(0.1, 3.0, size=(n, n))
    m = a + a.T
    np.fill_diagonal(m, 0.0)
    return m


def make_instance(rng: np.random.Generator) -> Instance:
    """Random logits and labels with a mix of number, text and padded positions."""
    vocab = _vocabulary(rng, equidistant=True)
    logits = rng.normal(scale=2.0, size=(POSITIONS, VOCAB_SIZE))
    ids = rng.integers(0, VOCAB_SIZE, size=POSITIONS)
    ids[: POSITIONS // 2] = rng.choice(vocab.number_indices, size=POSITIONS // 2)
    ids = rng.permutation(ids)
    pad = rng.random(POSITIONS) < 0.15
    if not np.any(vocab.is_number[ids] & ~pad):
        pad[:] = False
    labels = L.LabelBatch.of(ids, pad)
    sigma = rng.uniform(0.3, 2.0) * vocab.spacing
    costs = {"euclidean": build_cost(vocab),
             "squashed": build_cost(vocab, "squashed", float(rng.uniform(1.0, 9.0))),
             "explicit": build_cost(vocab, "explicit", matrix=_explicit_cost(rng, N_NUMBER))}
    return Instance(vocab, logits, labels, float(rng.uniform(0.2, 3.0)), costs,
                    L.gaussian_smooth_labels(labels, sigma, vocab))


def finite_difference(op: LossOp, inst: Instance, h: float = FD_STEP) -> np.ndarray:
    """Central differences of the mean loss with respect to every logit."""
    z = inst.logits
    fd = np.zeros_like(z)
    for idx in np.ndindex(*z.shape):
        zp = z.copy()
        zm = z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd[idx] = (op(inst, zp).total - op(inst, zm).total) / (2.0 * h)
    return fd


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest absolute deviation scaled by the largest gradient entry of the instance."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


# ---------------------------------------------------------------- suites


def gradient_checks(seed: int = 0, cases: int = 100, ops: Mapping[str, LossOp] | None = None) -> list[CheckResult]:
    ops = LOSS_OPS if ops is None else ops
    instances = [make_instance(np.random.default_rng([seed, 1, k])) for k in range(cases)]
    results = []
    for name, op in ops.items():
        t0 = time.perf_counter()
        worst = 0.0
        failures = []
        for k, inst in enumerate(instances):
            try:
                err = relative_error(op(inst, inst.logits).grad_logits, finite_difference(op, inst))
            except Exception as exc:  # report, keep checking the other ops
                failures.append(f"case {k}: {type(exc).__name__}: {exc}")
                continue
            if not err <= GRAD_TOL:
                failures.append(f"case {k}: relative error {err:.3e}")
            worst = max(worst, err) if np.isfinite(err) else np.inf
        results.append(CheckResult(f"grad:{name}", cases, worst, GRAD_TOL, time.perf_counter() - t0, failures))
    return results


def _one_hot(n: int, k: int) -> np.ndarray:
    e = np.zeros(n)
    e[k] = 1.0
    return e


def ot_equivalence(seed: int = 0, cases: int = 200) -> CheckResult:
    """Per-position NTL-WAS against the exact transport optimum.

    Value maps are unsorted and unevenly spaced; the euclidean cost goes
    through the closed form, a random explicit cost through the simplex.
    """
    t0 = time.perf_counter()
    worst = 0.0
    failures = []
    for k in range(cases):
        rng = np.random.default_rng([seed, 2, k])
        vocab = _vocabulary(rng, equidistant=False)
        logits = rng.normal(scale=2.0, size=(4, VOCAB_SIZE))
        labels = L.LabelBatch.of(rng.choice(vocab.number_indices, size=4))
        p = L.number_softmax(logits, vocab)
        slots = vocab.slice_position()[labels.ids]
        for cost in (build_cost(vocab), build_cost(vocab, "explicit", matrix=_explicit_cost(rng, N_NUMBER))):
            got = L.ntl_was(logits, labels, vocab, cost).per_position
            for i, s in enumerate(slots):
                err = abs(got[i] - wasserstein_oracle(_one_hot(N_NUMBER, s), p[i], cost))
                worst = max(worst, err)
                if not err <= EQUIV_TOL:
                    failures.append(f"case {k} ({cost.kind}) row {i}: |diff| {err:.3e}")
    return CheckResult("ntl-was == transport optimum", cases, worst, EQUIV_TOL, time.perf_counter() - t0, failures)


def cdf_equivalence(seed: int = 0, cases: int = 200) -> CheckResult:
    """CDF form against the cost-weighted form on one-hot labels."""
    t0 = time.perf_counter()
    worst = 0.0
    failures = []
    for k in range(cases):
        rng = np.random.default_rng([seed, 3, k])
        vocab = _vocabulary(rng, equidistant=True)
        logits = rng.normal(scale=2.0, size=(POSITIONS, VOCAB_SIZE))
        labels = L.LabelBatch.of(rng.choice(vocab.number_indices, size=POSITIONS))
        a = L.ntl_was_cdf(logits, None, labels, vocab).per_position
        b = L.ntl_was(logits, labels, vocab).per_position
        err = float(np.abs(a - b).max())
        worst = max(worst, err)
        if not err <= EQUIV_TOL:
            failures.append(f"case {k}: |diff| {err:.3e}")
    return CheckResult("ntl-was-cdf == ntl-was", cases, worst, EQUIV_TOL, time.perf_counter() - t0, failures)


def run_selfcheck(seed: int = 0, cases: int | None = None, ops: Mapping[str, LossOp] | None = None) -> SelfcheckReport:
    """All suites; ``cases`` overrides the per-suite defaults (100 gradient, 200 equivalence)."""
    results = gradient_checks(seed, 100 if cases is None else cases, ops)
    results.append(ot_equivalence(seed, 200 if cases is None else cases))
    results.append(cdf_equivalence(seed, 200 if cases is None else cases))
    return SelfcheckReport(results)
