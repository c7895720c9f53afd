"""Seeded synthetic arithmetic Q&A with train / interpolation / extrapolation splits."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

Split = Literal["train", "interpolation", "extrapolation"]
SPLITS: tuple[Split, ...] = ("train", "interpolation", "extrapolation")


class CapacityError(ValueError):
    pass


@dataclass(frozen=True)
class TaskSample:
    question: str
    answer: str
    answer_value: int | None  # None for answers that are not numbers
    difficulty: tuple[int, ...]  # digit count of each operand (word length for copy samples)
    split: str

    @property
    def bucket(self) -> int:
        return max(self.difficulty)


@dataclass(frozen=True)
class GenSpec:
    task: Literal["add_sub", "multiplication"]
    train_digits: tuple[int, int] = (1, 5)
    extra_digits: int = 6
    n_train: int = 1000
    n_interp: int = 200
    n_extra: int = 200
    seed: int = 0
    n_operands: tuple[int, int] = (2, 4)  # add_sub only

    def __post_init__(self):
        lo, hi = self.train_digits
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid digit range {lo}..{hi}")
        if self.extra_digits <= hi:
            raise ValueError("extrapolation digits must exceed the training range")
        if min(self.n_train, self.n_interp, self.n_extra) < 0:
            raise ValueError("sample counts must be non-negative")
        if self.n_train + self.n_interp + self.n_extra < 1:
            raise ValueError("at least one sample is required")
        a, b = self.n_operands
        if not 2 <= a <= b:
            raise ValueError("operand count range must start at 2")
        if self.task not in ("add_sub", "multiplication"):
            raise ValueError(f"unknown task {self.task!r}")


def _count_with_digits(k: int) -> int:
    return 10 if k == 1 else 9 * 10 ** (k - 1)


def _draw_operand(rng: np.random.Generator, k: int) -> int:
    if k == 1:
        return int(rng.integers(0, 10))
    return int(rng.integers(10 ** (k - 1), 10 ** k))


def _digit_pairs(lo: int, hi: int, need: int | None) -> list[tuple[int, int]]:
    pairs = [(k, l) for k in range(lo, hi + 1) for l in range(lo, hi + 1)]
    if need is not None:
        pairs = [p for p in pairs if max(p) == need]
    return pairs


def _mul_capacity(pairs) -> int:
    return sum(_count_with_digits(k) * _count_with_digits(l) for k, l in pairs)


def _addsub_capacity(lo: int, hi: int, n_ops: tuple[int, int], need: int | None) -> int:
    per = [_count_with_digits(k) for k in range(lo, hi + 1)]
    total = 0
    for n in range(n_ops[0], n_ops[1] + 1):
        all_ = sum(per) ** n
        if need is not None:
            all_ -= sum(per[:-1]) ** n  # at least one operand with `need` digits
        total += all_ * 2 ** (n - 1)
    return total


def _mul_sample(rng, pairs, split) -> TaskSample:
    k, l = pairs[int(rng.integers(len(pairs)))]
    a, b = _draw_operand(rng, k), _draw_operand(rng, l)
    return TaskSample(f"What is {a} * {b}?", str(a * b), a * b, (k, l), split)


def _addsub_sample(rng, lo, hi, n_ops, need, split) -> TaskSample:
    while True:
        n = int(rng.integers(n_ops[0], n_ops[1] + 1))
        digits = [int(rng.integers(lo, hi + 1)) for _ in range(n)]
        if need is None or max(digits) == need:
            break
    ops = [_draw_operand(rng, k) for k in digits]
    signs = [("+", "-")[int(rng.integers(2))] for _ in range(n - 1)]
    expr = str(ops[0])
    value = ops[0]
    for s, x in zip(signs, ops[1:]):
        expr += f" {s} {x}"
        value = value + x if s == "+" else value - x
    return TaskSample(f"What is {expr}?", str(value), value, tuple(digits), split)


def _fill(rng, n, capacity, taken: set[str], draw) -> list[TaskSample]:
    if n > capacity - len(taken):
        raise CapacityError(f"requested {n} distinct questions but only {capacity - len(taken)} remain")
    out: list[TaskSample] = []
    seen: set[str] = set()
    budget = 50 * n + 10_000
    while len(out) < n:
        if budget == 0:
            raise CapacityError(f"could not draw {n} distinct questions (capacity {capacity})")
        budget -= 1
        s = draw()
        if s.question in seen or s.question in taken:
            continue
        seen.add(s.question)
        out.append(s)
    return out


def generate(spec: GenSpec) -> dict[str, list[TaskSample]]:
    """All three splits. Questions are distinct within and across splits."""
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.train_digits
    if spec.task == "multiplication":
        inner, outer = _digit_pairs(lo, hi, None), _digit_pairs(lo, spec.extra_digits, spec.extra_digits)
        cap_in, cap_out = _mul_capacity(inner), _mul_capacity(outer)
        draw_in = lambda split: (lambda: _mul_sample(rng, inner, split))  # noqa: E731
        draw_out = lambda: _mul_sample(rng, outer, "extrapolation")  # noqa: E731
    else:
        cap_in = _addsub_capacity(lo, hi, spec.n_operands, None)
        cap_out = _addsub_capacity(lo, spec.extra_digits, spec.n_operands, spec.extra_digits)
        draw_in = lambda split: (lambda: _addsub_sample(rng, lo, hi, spec.n_operands, None, split))  # noqa: E731
        draw_out = lambda: _addsub_sample(rng, lo, spec.extra_digits, spec.n_operands, spec.extra_digits, "extrapolation")  # noqa: E731
    if spec.n_train + spec.n_interp > cap_in:
        raise CapacityError(
            f"train + interpolation request {spec.n_train + spec.n_interp} exceeds {cap_in} distinct questions")
    train = _fill(rng, spec.n_train, cap_in, set(), draw_in("train"))
    interp = _fill(rng, spec.n_interp, cap_in, {s.question for s in train}, draw_in("interpolation"))
    extra = _fill(rng, spec.n_extra, cap_out, set(), draw_out)
    return {"train": train, "interpolation": interp, "extrapolation": extra}


def gen_multiplication(spec: GenSpec) -> dict[str, list[TaskSample]]:
    if spec.task != "multiplication":
        raise ValueError("spec is not a multiplication spec")
    return generate(spec)


def gen_addsub(spec: GenSpec) -> dict[str, list[TaskSample]]:
    if spec.task != "add_sub":
        raise ValueError("spec is not an add_sub spec")
    return generate(spec)


COPY_PREFIX = "Copy "
_LETTERS = np.array(list("abcdefghijklmnopqrstuvwxyz"))


def gen_copy(n: int, seed: int = 0, lengths: tuple[int, int] = (3, 8)) -> list[TaskSample]:
    """Number-free samples ``Copy {word}?`` -> ``{word}`` over lowercase letters."""
    lo, hi = lengths
    if not 1 <= lo <= hi:
        raise ValueError(f"invalid length range {lo}..{hi}")
    capacity = sum(26 ** k for k in range(lo, hi + 1))
    rng = np.random.default_rng(seed)

    def draw():
        word = "".join(_LETTERS[rng.integers(0, 26, size=int(rng.integers(lo, hi + 1)))])
        return TaskSample(f"{COPY_PREFIX}{word}?", word, None, (len(word),), "train")

    return _fill(rng, n, capacity, set(), draw)


# ------------------------------------------------------------------ files


def write_split(samples, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(f"{s.question}\t{s.answer}\n")


def read_split(path: str | Path, split: str = "train") -> list[TaskSample]:
    """Load a ``question<TAB>answer`` file, recomputing difficulty from the question."""
    out = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line:
            continue
        q, a = line.split("\t")
        if q.startswith(COPY_PREFIX):
            out.append(TaskSample(q, a, None, (len(a),), split))
            continue
        operands = [t for t in q.removeprefix("What is ").rstrip("?").split() if t not in "+-*"]
        out.append(TaskSample(q, a, int(a), tuple(len(t) for t in operands), split))
    return out


def write_dataset(splits: dict[str, list[TaskSample]], out_dir: str | Path, spec: GenSpec) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {}
    for name, samples in splits.items():
        path = out / f"{name}.tsv"
        write_split(samples, path)
        files[name] = {"path": path.name, "count": len(samples)}
    manifest = out / "splits.json"
    manifest.write_text(json.dumps({"task": spec.task, "seed": spec.seed, "splits": files}, indent=2) + "\n")
    return manifest


def load_dataset(data_dir: str | Path) -> dict[str, list[TaskSample]]:
    data_dir = Path(data_dir)
    meta = json.loads((data_dir / "splits.json").read_text())
    return {name: read_split(data_dir / info["path"], name) for name, info in meta["splits"].items()}

