"""Character alphabets, one-hot vectors and shifted-by-one training batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterator, Sequence, Tuple

import numpy as np

from .errors import EmptyCorpus, IndexOutOfAlphabet, TextTooShort


class Alphabet:
    """Dense character <-> index mapping ordered by ascending code point."""

    def __init__(self, chars: Sequence[str]):
        chars = tuple(chars)
        if len(set(chars)) != len(chars):
            raise ValueError("alphabet characters must be distinct")
        if list(chars) != sorted(chars):
            raise ValueError("alphabet must be in code-point order")
        self.chars: Tuple[str, ...] = chars
        self.index_of: Dict[str, int] = {c: i for i, c in enumerate(chars)}
        self._lookup = None

    @property
    def size(self) -> int:
        return len(self.chars)

    def __len__(self) -> int:
        return len(self.chars)

    def __contains__(self, ch: str) -> bool:
        return ch in self.index_of

    def __eq__(self, other) -> bool:
        return isinstance(other, Alphabet) and self.chars == other.chars

    def __repr__(self) -> str:
        return f"Alphabet(I={self.size})"

    def encode(self, text: str) -> np.ndarray:
        """Map ``text`` to int32 indices; unknown characters raise IndexOutOfAlphabet."""
        if self._lookup is None:
            top = max(ord(c) for c in self.chars)
            lut = np.full(top + 1, -1, dtype=np.int32)
            for i, c in enumerate(self.chars):
                lut[ord(c)] = i
            self._lookup = lut
        codes = np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32)
        if codes.size == 0:
            return np.zeros(0, dtype=np.int32)
        if codes.max() >= self._lookup.size:
            bad = next(c for c in text if ord(c) >= self._lookup.size)
            raise IndexOutOfAlphabet(f"character {bad!r} is not in the alphabet")
        out = self._lookup[codes]
        if (out < 0).any():
            bad = text[int(np.argmax(out < 0))]
            raise IndexOutOfAlphabet(f"character {bad!r} is not in the alphabet")
        return out

    def decode(self, indices) -> str:
        n = self.size
        out = []
        for i in np.asarray(indices).ravel():
            if not 0 <= i < n:
                raise IndexOutOfAlphabet(f"index {int(i)} outside [0, {n})")
            out.append(self.chars[i])
        return "".join(out)


def build_alphabet(text: str) -> Alphabet:
    if not text:
        raise EmptyCorpus("cannot build an alphabet from empty text")
    return Alphabet(sorted(set(text)))


def one_hot(index: int, size: int) -> np.ndarray:
    if not 0 <= index < size:
        raise IndexOutOfAlphabet(f"index {index} outside [0, {size})")
    v = np.zeros(size, dtype=np.float32)
    v[index] = 1.0
    return v


@dataclass(frozen=True)
class SequenceBatch:
    inputs: np.ndarray   # [batch, seq_len] int
    targets: np.ndarray  # [batch, seq_len] int

    @property
    def batch(self) -> int:
        return self.inputs.shape[0]

    @property
    def seq_len(self) -> int:
        return self.inputs.shape[1]


def n_windows(n_chars: int, seq_len: int) -> int:
    """Non-overlapping windows of ``seq_len`` inputs (plus one shifted target)."""
    return (n_chars - 1) // seq_len


def batches_per_epoch(n_chars: int, seq_len: int, batch: int) -> int:
    return n_windows(n_chars, seq_len) // batch


def make_batches(text: np.ndarray, seq_len: int, batch: int,
                 rng: np.random.Generator) -> Iterator[SequenceBatch]:
    """Yield one epoch of shuffled, non-overlapping windows.

    Window ``k`` covers ``text[k*seq_len : (k+1)*seq_len + 1]``; the trailing
    partial batch is dropped.
    """
    text = np.asarray(text)
    if text.size <= seq_len:
        raise TextTooShort(f"text of {text.size} chars cannot fill a window of {seq_len}")
    n = n_windows(text.size, seq_len)
    order = rng.permutation(n)
    starts = order * seq_len
    offs = np.arange(seq_len + 1)
    for b in range(n // batch):
        idx = starts[b * batch:(b + 1) * batch, None] + offs[None, :]
        chunk = text[idx]
        yield SequenceBatch(chunk[:, :-1], chunk[:, 1:])


def sequential_batches(text: np.ndarray, seq_len: int, batch: int) -> Iterator[SequenceBatch]:
    """Deterministic in-order windows for evaluation; keeps the last partial batch."""
    text = np.asarray(text)
    if text.size <= seq_len:
        raise TextTooShort(f"text of {text.size} chars cannot fill a window of {seq_len}")
    n = n_windows(text.size, seq_len)
    offs = np.arange(seq_len + 1)
    for b0 in range(0, n, batch):
        starts = np.arange(b0, min(n, b0 + batch)) * seq_len
        chunk = text[starts[:, None] + offs[None, :]]
        yield SequenceBatch(chunk[:, :-1], chunk[:, 1:])
