"""Vocabulary with a token -> numeric value map and digit-level number encoding."""

from __future__ import annotations

import math
import re
import string
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD = "<pad>"
EOS = "<eos>"

_NUMBER_RE = re.compile(r"^[+-]?\d+(\.\d+)?$")


class VocabularyError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    text: str

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class NumberVocabulary:
    """Ordered token inventory plus a partial map from token to numeric value.

    ``number_indices`` lists the value-bearing tokens in insertion order; the
    number-token losses only ever look at this slice and at ``values``.
    """

    tokens: tuple[str, ...]
    values: tuple[float | None, ...]
    number_indices: tuple[int, ...]
    sorted_equidistant: bool
    _index: dict[str, int] = field(repr=False, compare=False, default_factory=dict)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise VocabularyError(f"unknown token {token!r}") from None

    def value_of(self, i: int) -> float | None:
        return self.values[i]

    def number_values(self, dtype=np.float64) -> np.ndarray:
        """Values of the number tokens, in ``number_indices`` order."""
        return self._number_values.astype(dtype, copy=True)

    @cached_property
    def _number_values(self) -> np.ndarray:
        return _frozen(np.array([self.values[i] for i in self.number_indices], dtype=np.float64))

    @cached_property
    def number_index_array(self) -> np.ndarray:
        return _frozen(np.array(self.number_indices, dtype=np.int64))

    @cached_property
    def is_number(self) -> np.ndarray:
        return _frozen(np.array([v is not None for v in self.values], dtype=bool))

    def value_table(self) -> np.ndarray:
        """Per-token values with NaN for non-number tokens (read-only)."""
        return self._value_table

    @cached_property
    def _value_table(self) -> np.ndarray:
        return _frozen(np.array([np.nan if v is None else v for v in self.values], dtype=np.float64))

    def slice_position(self) -> np.ndarray:
        """Map token id -> position inside the number slice, -1 for text tokens (read-only)."""
        return self._slice_position

    @cached_property
    def _slice_position(self) -> np.ndarray:
        pos = np.full(len(self.tokens), -1, dtype=np.int64)
        pos[list(self.number_indices)] = np.arange(len(self.number_indices))
        return _frozen(pos)

    @property
    def spacing(self) -> float:
        vals = self.number_values()
        return float(vals[1] - vals[0]) if len(vals) > 1 else 1.0

    @property
    def pad_id(self) -> int:
        return self.id(PAD)

    @property
    def eos_id(self) -> int:
        return self.id(EOS)

    # text <-> ids

    def encode_text(self, text: str) -> TokenSequence:
        """Greedy longest-match tokenization against the inventory."""
        longest = max(len(t) for t in self.tokens)
        ids = []
        i = 0
        while i < len(text):
            for n in range(min(longest, len(text) - i), 0, -1):
                j = self._index.get(text[i : i + n])
                if j is not None:
                    ids.append(j)
                    i += n
                    break
            else:
                raise VocabularyError(f"cannot tokenize {text[i]!r} in {text!r}")
        return TokenSequence(tuple(ids), text)

    def decode(self, ids: Iterable[int]) -> str:
        return "".join(self.tokens[i] for i in ids)

    def encode_number(self, x: str) -> TokenSequence:
        """Digit-level encoding: one token per sign, digit and decimal point."""
        if not isinstance(x, str) or not _NUMBER_RE.match(x):
            raise VocabularyError(f"malformed number {x!r}")
        ids = []
        for ch in x:
            if ch not in self._index:
                raise VocabularyError(f"vocabulary has no token for {ch!r}")
            ids.append(self._index[ch])
        return TokenSequence(tuple(ids), x)

    def decode_number_span(self, ids: Sequence[int], start: int) -> tuple[float, int] | None:
        """Parse the longest numeric literal at ``start``.

        Returns ``(value, end)`` with ``end`` one past the literal, or None
        when no literal starts there.
        """
        if not 0 <= start < len(ids):
            raise IndexError(start)
        i = start
        text = ""
        if self.tokens[ids[i]] in ("-", "+"):
            text = self.tokens[ids[i]]
            i += 1
        int_start = i
        while i < len(ids) and self.values[ids[i]] is not None:
            text += self.tokens[ids[i]]
            i += 1
        if i == int_start:
            return None
        if i + 1 < len(ids) and self.tokens[ids[i]] == "." and self.values[ids[i + 1]] is not None:
            text += "."
            i += 1
            while i < len(ids) and self.values[ids[i]] is not None:
                text += self.tokens[ids[i]]
                i += 1
        return float(text), i

    # persistence

    def save(self, path: str | Path) -> None:
        lines = []
        for tok, val in zip(self.tokens, self.values):
            lines.append(f"{tok}\t{'NONE' if val is None else repr(float(val))}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NumberVocabulary":
        text_tokens: list[str] = []
        entries: list[tuple[str, float | None]] = []
        raw = Path(path).read_text(encoding="utf-8")
        if raw.endswith("\n"):
            raw = raw[:-1]
        for lineno, line in enumerate(raw.split("\n"), 1):
            tok, sep, val = line.rpartition("\t")
            if not sep:
                raise VocabularyError(f"{path}:{lineno}: expected token<TAB>value")
            entries.append((tok, None if val == "NONE" else float(val)))
        return _from_entries(entries)


def _equidistant(vals: Sequence[float]) -> bool:
    if len(vals) <= 2:
        return len(vals) < 2 or vals[1] > vals[0]
    gaps = np.diff(np.asarray(vals, dtype=np.float64))
    step = gaps[0]
    if step <= 0:
        return False
    return bool(np.all(np.abs(gaps - step) <= 1e-12 * abs(step)))


def _from_entries(entries: Sequence[tuple[str, float | None]]) -> NumberVocabulary:
    index: dict[str, int] = {}
    for i, (tok, val) in enumerate(entries):
        if not tok or "\t" in tok or "\n" in tok:
            raise VocabularyError(f"invalid token string {tok!r}")
        if tok in index:
            raise VocabularyError(f"duplicate token {tok!r}")
        if val is not None and not math.isfinite(val):
            raise VocabularyError(f"non-finite value for token {tok!r}")
        index[tok] = i
    number_indices = tuple(i for i, (_, v) in enumerate(entries) if v is not None)
    if not number_indices:
        raise VocabularyError("vocabulary has no number tokens")
    vals = [entries[i][1] for i in number_indices]
    return NumberVocabulary(
        tokens=tuple(t for t, _ in entries),
        values=tuple(None if v is None else float(v) for _, v in entries),
        number_indices=number_indices,
        sorted_equidistant=_equidistant(vals),
        _index=index,
    )


def build_vocabulary(
    text_tokens: Sequence[str], number_tokens: Sequence[tuple[str, float]]
) -> NumberVocabulary:
    """Text tokens first (no value), then number tokens in the given order."""
    entries: list[tuple[str, float | None]] = [(t, None) for t in text_tokens]
    for tok, val in number_tokens:
        entries.append((tok, float(val)))
    return _from_entries(entries)


DIGITS = [(str(d), float(d)) for d in range(10)]


def default_vocabulary() -> NumberVocabulary:
    """Character-level vocabulary for the arithmetic templates, digits last."""
    text = [PAD, EOS, " ", "?", "+", "-", "*", ".", "="]
    text += list(string.ascii_lowercase) + list(string.ascii_uppercase)
    return build_vocabulary(text, DIGITS)


def digit_vocabulary() -> NumberVocabulary:
    """Only the ten digits; used for loss landscapes where full = slice."""
    return build_vocabulary([], DIGITS)


def number_mask(label_ids: np.ndarray, pad_mask: np.ndarray | None, vocab: NumberVocabulary) -> np.ndarray:
    label_ids = np.asarray(label_ids)
    if label_ids.size and (label_ids.min() < 0 or label_ids.max() >= len(vocab)):
        raise VocabularyError("label id out of range")
    mask = vocab.is_number[label_ids]
    if pad_mask is not None:
        mask &= ~np.asarray(pad_mask, dtype=bool)
    return mask
