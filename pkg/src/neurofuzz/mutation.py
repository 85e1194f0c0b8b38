"""Naive per-position character replacement over dataset tags."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .generator import CaseSet, make_case_sets
from .seeding import derive_seed
from .seqdata import Alphabet

# 0.1% doubling up to 51.2%
DEFAULT_LADDER: Tuple[float, ...] = tuple(0.001 * 2 ** k for k in range(10))


@dataclass(frozen=True)
class MutationConfig:
    probability: float
    alphabet: Alphabet
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")


def replacement_pool(alphabet: Alphabet) -> np.ndarray:
    """Indices a position may be replaced with; newline is never drawn."""
    return np.array([i for i, c in enumerate(alphabet.chars) if c != "\n"], dtype=np.int64)


def mutate_counted(text: str, cfg: MutationConfig) -> Tuple[str, int]:
    """Mutate ``text`` and also return how many replacement draws were made.

    Newline positions are never touched.  A draw may pick the original
    character again.
    """
    a = cfg.alphabet
    codes = a.encode(text)
    if codes.size == 0 or cfg.probability == 0.0:
        return text, 0
    rng = np.random.default_rng(cfg.seed)
    newline = a.index_of.get("\n", -1)
    hit = rng.random(codes.size) < cfg.probability
    hit &= codes != newline
    n = int(hit.sum())
    pool = replacement_pool(a)
    out = codes.copy()
    out[hit] = pool[rng.integers(0, pool.size, size=n)]
    return "".join(a.chars[i] for i in out), n


def mutate_text(text: str, cfg: MutationConfig) -> str:
    return mutate_counted(text, cfg)[0]


def mutate_tags(tags: Sequence[str], cfg: MutationConfig) -> List[str]:
    joined = "\n".join(tags)
    out = mutate_text(joined, cfg).split("\n")
    assert len(out) == len(tags)
    return out


def ladder_label(p: float) -> str:
    return f"p{p * 100:g}".replace(".", "_")


def make_mutation_sets(dataset_tags: Sequence[str], alphabet: Alphabet,
                       probabilities: Sequence[float] = DEFAULT_LADDER,
                       sizes: Sequence[int] = (128, 256), seed: int = 0) -> List[CaseSet]:
    """One CaseSet per (probability, size) pair."""
    if not probabilities:
        raise ValueError("probabilities must be non-empty")
    sets = []
    for p in probabilities:
        pseed = derive_seed(seed, "mutation", repr(float(p)))
        mutated = mutate_tags(dataset_tags, MutationConfig(p, alphabet, pseed))
        sets.extend(make_case_sets(
            mutated, sizes,
            provenance={"kind": "mutation", "probability": float(p), "seed": pseed},
            prefix=f"mutation-{ladder_label(p)}"))
    return sets
