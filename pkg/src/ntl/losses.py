"""Cross-entropy and number-token losses with analytic logit gradients.

Every loss takes a flattened ``(P, V)`` logit array and returns a
:class:`LossResult` carrying the mean loss, per-position losses and the
gradient of the mean with respect to the logits. Number-token losses only
see the columns listed in ``vocab.number_indices`` and only the positions
whose label is a number token; everything else gets exactly zero loss and
zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Literal

import numpy as np

from .costs import CostSpec, build_cost
from .numvocab import NumberVocabulary, number_mask

SoftmaxDomain = Literal["slice", "full"]
GCE_LOG_FLOOR = 1e-12
DEFAULT_LAMBDA = 0.3
DEFAULT_SIGMA = 0.5


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LabelBatch:
    ids: np.ndarray
    pad_mask: np.ndarray  # True where the position is excluded

    @classmethod
    def of(cls, ids, pad_mask=None) -> "LabelBatch":
        ids = np.asarray(ids, dtype=np.int64).reshape(-1)
        if pad_mask is None:
            pad_mask = np.zeros(ids.shape, dtype=bool)
        pad_mask = np.asarray(pad_mask, dtype=bool).reshape(-1)
        if pad_mask.shape != ids.shape:
            raise LossError("pad_mask shape does not match ids")
        return cls(ids, pad_mask)

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class TargetDistribution:
    """Row-stochastic targets over the number slice; rows outside ``mask`` are unused."""

    probs: np.ndarray  # (P, n)
    mask: np.ndarray  # (P,) number positions

    def validate(self, tol: float = 1e-9) -> None:
        rows = self.probs[self.mask]
        if np.any(rows < 0) or np.any(np.abs(rows.sum(axis=1) - 1.0) > tol):
            raise LossError("target rows must be non-negative and sum to 1")


@dataclass(frozen=True, eq=False)
class LossResult:
    """Mean loss, per-position losses and the logit gradient.

    Number-token losses touch only a ``rows x cols`` block of the logits, so
    they keep just that block in ``grad`` together with ``support`` and the
    full ``shape``; :attr:`grad_logits` builds the dense array on request.
    """

    total: float
    per_position: np.ndarray
    grad: np.ndarray  # dense (P, V), or the support block when support is set
    number_position_count: int
    empty: bool = False  # no position contributed to the mean
    support: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)
    shape: tuple[int, int] | None = None

    @cached_property
    def grad_logits(self) -> np.ndarray:
        if self.support is None:
            return self.grad
        dense = np.zeros(self.shape, dtype=self.grad.dtype)
        dense[np.ix_(*self.support)] = self.grad
        return dense


def _as_logits(logits) -> np.ndarray:
    logits = np.asarray(logits)
    if logits.ndim != 2:
        raise LossError(f"logits must be (positions, vocab), got shape {logits.shape}")
    if not np.issubdtype(logits.dtype, np.floating):
        logits = logits.astype(np.float64)
    return logits


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def number_softmax(logits, vocab: NumberVocabulary, domain: SoftmaxDomain = "slice") -> np.ndarray:
    """Probabilities over the number tokens, shape ``(P, n)``.

    ``slice`` renormalizes over the number columns only. ``full`` takes the
    number columns of the full-vocabulary softmax (rows then sum to < 1).
    """
    if len(vocab.number_indices) < 2:
        raise LossError("need at least two number tokens")
    logits = _as_logits(logits)
    idx = list(vocab.number_indices)
    if domain == "slice":
        return _softmax(logits[:, idx])
    if domain == "full":
        return _softmax(logits)[:, idx]
    raise LossError(f"unknown softmax domain {domain!r}")


def _number_probs(logits, vocab, rows, domain):
    """Forward pieces shared by the number-token losses on the selected rows."""
    idx = vocab.number_index_array
    if domain == "slice":
        q = _softmax(logits[np.ix_(rows, idx)])
        return q, q
    if domain == "full":
        q = _softmax(logits[rows])
        return q[:, idx], q
    raise LossError(f"unknown softmax domain {domain!r}")


def _chain_softmax(dp: np.ndarray, q: np.ndarray, vocab, domain) -> np.ndarray:
    """Pull ``dL/dp`` (rows x n) back through the softmax.

    Gives the gradient on the softmax inputs: the number columns for
    ``slice``, every column for ``full``.
    """
    if domain == "slice":
        return q * (dp - (q * dp).sum(axis=1, keepdims=True))
    full = np.zeros_like(q)
    full[:, vocab.number_index_array] = dp
    return q * (full - (q * full).sum(axis=1, keepdims=True))


def _number_rows(labels: LabelBatch, vocab: NumberVocabulary):
    mask = number_mask(labels.ids, labels.pad_mask, vocab)
    rows = np.flatnonzero(mask)
    return mask, rows


def _finish(per_row, dp, q, vocab, domain, logits, rows) -> LossResult:
    count = len(rows)
    per_position = np.zeros(logits.shape[0], dtype=logits.dtype)
    cols = vocab.number_index_array if domain == "slice" else np.arange(logits.shape[1])
    support = (rows, cols)
    if count == 0:
        block = np.zeros((0, len(cols)), dtype=logits.dtype)
        return LossResult(0.0, per_position, block, 0, True, support, logits.shape)
    per_position[rows] = per_row
    block = _chain_softmax(dp / count, q, vocab, domain).astype(logits.dtype, copy=False)
    return LossResult(float(per_row.sum() / count), per_position, block, count, False, support, logits.shape)


# --------------------------------------------------------------------- CE


def cross_entropy(logits, labels: LabelBatch) -> LossResult:
    """Full-vocabulary cross-entropy averaged over non-padded positions."""
    logits = _as_logits(logits)
    if len(labels) != logits.shape[0]:
        raise LossError("labels and logits disagree on the number of positions")
    rows = np.flatnonzero(~labels.pad_mask)
    per_position = np.zeros(logits.shape[0], dtype=logits.dtype)
    count = len(rows)
    if count == 0:
        return LossResult(0.0, per_position, np.zeros_like(logits), 0, empty=True)
    dense = count == logits.shape[0]
    z = logits if dense else logits[rows]
    tgt = labels.ids[rows]
    ar = np.arange(count)
    # single working buffer: shifted logits -> exp -> softmax -> gradient
    work = z - z.max(axis=1, keepdims=True)
    picked = work[ar, tgt].copy()
    np.exp(work, out=work)
    total = work.sum(axis=1)
    nll = np.log(total) - picked
    per_position[rows] = nll
    work *= (1.0 / (total * count))[:, None].astype(work.dtype)
    work[ar, tgt] -= work.dtype.type(1.0 / count)
    if dense:
        grad = work
    else:
        grad = np.zeros_like(logits)
        grad[rows] = work
    return LossResult(float(nll.sum() / count), per_position, grad, count)


# ----------------------------------------------------------------- NTL-Lp


def _penalty(r: np.ndarray, variant: str, delta: float):
    """Penalty on the residual and its derivative with respect to the residual."""
    if variant == "mse":
        return r * r, 2.0 * r
    if variant == "mae":
        return np.abs(r), np.sign(r)
    if variant == "huber":
        a = np.abs(r)
        quad = a <= delta
        val = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
        return val, np.clip(r, -delta, delta)
    raise LossError(f"unknown NTL-Lp variant {variant!r}")


def ntl_lp(
    logits,
    labels: LabelBatch,
    vocab: NumberVocabulary,
    variant: str = "mse",
    delta: float = 1.0,
    domain: SoftmaxDomain = "slice",
) -> LossResult:
    """Regression penalty between the label value and the expected token value.

    The residual is written as ``sum_j p_j (y - v_j)``, which equals
    ``y - p . v`` for normalized ``p`` but is exactly zero whenever the
    probability mass is balanced around the label.
    """
    logits = _as_logits(logits)
    mask, rows = _number_rows(labels, vocab)
    p, q = _number_probs(logits, vocab, rows, domain)
    vals = vocab.number_values(logits.dtype)
    y = vals[vocab.slice_position()[labels.ids[rows]]]
    pen, dp = lp_from_probs(p, y, vals, variant, delta)
    return _finish(pen, dp, q, vocab, domain, logits, rows)


def lp_from_probs(p, y, values, variant: str = "mse", delta: float = 1.0):
    """Per-row NTL-Lp penalty and its gradient with respect to the probabilities."""
    variant = variant.lower()
    if variant == "huber" and delta <= 0:
        raise LossError("Huber delta must be positive")
    offsets = np.asarray(y)[:, None] - np.asarray(values)[None, :]
    r = (p * offsets).sum(axis=1)
    pen, dpen = _penalty(r, variant, delta)
    return pen, dpen[:, None] * offsets


# ---------------------------------------------------------------- NTL-WAS


def ntl_was(
    logits,
    labels: LabelBatch,
    vocab: NumberVocabulary,
    cost: CostSpec | None = None,
    domain: SoftmaxDomain = "slice",
) -> LossResult:
    """Transport cost from a one-hot label to the predicted number distribution.

    With euclidean cost this is ``sum_j p_j |y - v_j|``.
    """
    logits = _as_logits(logits)
    if cost is None:
        cost = build_cost(vocab)
    mask, rows = _number_rows(labels, vocab)
    p, q = _number_probs(logits, vocab, rows, domain)
    slot = vocab.slice_position()[labels.ids[rows]]
    per_row, dp = was_from_probs(p, slot, cost.matrix.astype(logits.dtype, copy=False))
    return _finish(per_row, dp, q, vocab, domain, logits, rows)


def was_from_probs(p, label_slots, cost_matrix):
    """Per-row transport cost from one-hot labels (slice positions) to ``p``, and dL/dp."""
    c = cost_matrix[label_slots]
    return (p * c).sum(axis=1), c


def _targets_for(targets, labels, vocab, mask, rows) -> np.ndarray:
    if targets is None:
        t = np.zeros((len(rows), len(vocab.number_indices)))
        t[np.arange(len(rows)), vocab.slice_position()[labels.ids[rows]]] = 1.0
        return t
    if not isinstance(targets, TargetDistribution):
        targets = TargetDistribution(np.asarray(targets, dtype=np.float64), mask)
    if targets.probs.shape != (len(labels), len(vocab.number_indices)):
        raise LossError("targets must have shape (positions, number tokens)")
    if not np.array_equal(targets.mask[rows], np.ones(len(rows), dtype=bool)):
        raise LossError("targets are missing rows for some number positions")
    rowsum = targets.probs[rows].sum(axis=1)
    if np.any(targets.probs[rows] < 0) or np.any(np.abs(rowsum - 1.0) > 1e-9):
        raise LossError("target rows must be non-negative and sum to 1")
    return targets.probs[rows]


def ntl_was_cdf(
    logits,
    targets: TargetDistribution | np.ndarray | None,
    labels: LabelBatch,
    vocab: NumberVocabulary,
    domain: SoftmaxDomain = "slice",
) -> LossResult:
    """Wasserstein-1 via the L1 distance between CDFs.

    Needs number tokens sorted by value with constant spacing; the CDF sum
    is scaled by that spacing so one-hot targets reproduce :func:`ntl_was`.
    ``targets=None`` means one-hot labels.
    """
    if not vocab.sorted_equidistant:
        raise LossError(
            "ntl-was-cdf requires number tokens sorted by value with equal spacing"
        )
    logits = _as_logits(logits)
    mask, rows = _number_rows(labels, vocab)
    t = _targets_for(targets, labels, vocab, mask, rows).astype(logits.dtype, copy=False)
    p, q = _number_probs(logits, vocab, rows, domain)
    # The last CDF entry is 1 for both distributions and never contributes.
    diff = np.cumsum(p, axis=1)[:, :-1] - np.cumsum(t, axis=1)[:, :-1]
    spacing = vocab.spacing
    per_row = spacing * np.abs(diff).sum(axis=1)
    s = np.sign(diff)
    dp = np.zeros_like(p)
    dp[:, :-1] = spacing * np.cumsum(s[:, ::-1], axis=1)[:, ::-1]
    return _finish(per_row, dp, q, vocab, domain, logits, rows)


# -------------------------------------------------------------------- GCE


def gaussian_smooth_values(values, sigma: float, vocab: NumberVocabulary) -> np.ndarray:
    """Gaussian soft targets centred on each value, renormalized over the slice."""
    if not sigma > 0:
        raise LossError("sigma must be positive")
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    vals = vocab.number_values()
    known = np.isin(values, vals)
    if not np.all(known):
        raise LossError(f"label value {values[~known][0]} is not a number-token value")
    logw = -((vals[None, :] - values[:, None]) ** 2) / (2.0 * sigma * sigma)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def gaussian_smooth_labels(labels: LabelBatch, sigma: float, vocab: NumberVocabulary) -> TargetDistribution:
    mask, rows = _number_rows(labels, vocab)
    probs = np.zeros((len(labels), len(vocab.number_indices)))
    y = vocab.value_table()[labels.ids[rows]]
    probs[rows] = gaussian_smooth_values(y, sigma, vocab)
    return TargetDistribution(probs, mask)


def gce(
    logits,
    targets: TargetDistribution | np.ndarray,
    labels: LabelBatch,
    vocab: NumberVocabulary,
    domain: SoftmaxDomain = "slice",
) -> LossResult:
    """Cross-entropy of soft number targets against the predicted number distribution."""
    logits = _as_logits(logits)
    mask, rows = _number_rows(labels, vocab)
    t = _targets_for(targets, labels, vocab, mask, rows).astype(logits.dtype, copy=False)
    p, q = _number_probs(logits, vocab, rows, domain)
    clamped = p <= GCE_LOG_FLOOR
    logp = np.log(np.where(clamped, GCE_LOG_FLOOR, p))
    per_row = -(t * logp).sum(axis=1)
    dp = np.where(clamped, 0.0, -t / np.where(clamped, 1.0, p))
    return _finish(per_row, dp, q, vocab, domain, logits, rows)


# ---------------------------------------------------------------- combine


def combine(ce: LossResult, ntl: LossResult, lam: float = DEFAULT_LAMBDA, consume: bool = False) -> LossResult:
    """``ce + lam * ntl`` for totals, per-position losses and gradients.

    With ``consume=True`` the gradient buffer of ``ce`` is reused; only pass
    it for a ``ce`` result nobody else holds.
    """
    if lam < 0:
        raise LossError("lambda must be non-negative")
    base = ce.grad_logits
    if base.shape != (ntl.shape or ntl.grad.shape):
        raise LossError("cannot combine losses over different logit shapes")
    if ntl.support is None:
        grad = base + lam * ntl.grad
    else:
        grad = base if consume else base.copy()
        grad[np.ix_(*ntl.support)] += lam * ntl.grad
    return LossResult(
        ce.total + lam * ntl.total,
        ce.per_position + lam * ntl.per_position,
        grad,
        ntl.number_position_count,
        ce.empty,
    )
