"""Sampling tags from a trained checkpoint and assembling HTML test cases."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import nn
from .errors import MaxLenExceeded, NotDivisible, RetryBudgetExhausted
from .training import Checkpoint

TEMPLATE_VERSION = 1
TEMPLATE_HEAD = '<!DOCTYPE html>\n<html>\n<head>\n<meta charset="utf-8">\n</head>\n<body>\n'
TEMPLATE_TAIL = "</body>\n</html>\n"
DEFAULT_MAX_LEN = 1024
START_CHAR = "<"
END_CHAR = "\n"


@dataclass(frozen=True)
class HtmlTemplate:
    head: str = TEMPLATE_HEAD
    tail: str = TEMPLATE_TAIL
    version: int = TEMPLATE_VERSION

    def render(self, tags: Sequence[str]) -> str:
        return self.head + "".join(t + "\n" for t in tags) + self.tail

    def digest(self) -> str:
        return hashlib.sha256((self.head + "\x00" + self.tail).encode("utf-8")).hexdigest()


DEFAULT_TEMPLATE = HtmlTemplate()


def _draw(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cdf = np.cumsum(probs.astype(np.float64), axis=-1)
    u = rng.random(probs.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=-1), probs.shape[-1] - 1)


def next_char_probs(cp: Checkpoint, logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    return nn.softmax(logits.astype(np.float64) / temperature)


def sample_tag(cp: Checkpoint, rng: np.random.Generator, max_len: int = DEFAULT_MAX_LEN,
               temperature: float = 1.0) -> str:
    """Feed '<', then each sampled character, until a newline is drawn."""
    a = cp.alphabet
    start, end = a.index_of[START_CHAR], a.index_of[END_CHAR]
    state = nn.zero_state(cp.model, 1)
    out = [START_CHAR]
    idx = np.array([start])
    while True:
        logits, state = nn.step_logits(cp.model, idx, state)
        nxt = int(_draw(next_char_probs(cp, logits, temperature), rng)[0])
        if nxt == end:
            return "".join(out)
        if len(out) >= max_len:
            raise MaxLenExceeded(f"no newline within {max_len} characters", "".join(out))
        out.append(a.chars[nxt])
        idx = np.array([nxt])


@dataclass
class SampleResult:
    tags: List[str]
    discarded: int
    seed: int


def sample_tags(cp: Checkpoint, n: int, seed: int, max_len: int = DEFAULT_MAX_LEN,
                temperature: float = 1.0, streams: int = 256,
                retry_budget: Optional[int] = None) -> SampleResult:
    """Draw exactly ``n`` newline-terminated tags.

    Up to ``streams`` samplers run side by side, each owning a fixed quota of
    tags so that long tags are not under-represented.  A stream restarts from
    '<' with a zero state after every tag.  Samples reaching ``max_len`` are
    discarded, counted and redrawn.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return SampleResult([], 0, seed)
    if retry_budget is None:
        retry_budget = max(16, n)
    a = cp.alphabet
    start, end = a.index_of[START_CHAR], a.index_of[END_CHAR]
    rng = np.random.default_rng(seed)
    k = min(streams, n)
    quota = [n // k + (1 if j < n % k else 0) for j in range(k)]
    done: List[List[str]] = [[] for _ in range(k)]
    state = nn.zero_state(cp.model, k)
    idx = np.full(k, start)
    bufs: List[List[int]] = [[] for _ in range(k)]
    discarded = 0
    remaining = n
    while remaining:
        logits, state = nn.step_logits(cp.model, idx, state)
        nxt = _draw(next_char_probs(cp, logits, temperature), rng)
        reset = []
        for j in range(k):
            if len(done[j]) >= quota[j]:
                continue
            c = int(nxt[j])
            if c == end:
                done[j].append(START_CHAR + "".join(a.chars[i] for i in bufs[j]))
                remaining -= 1
                reset.append(j)
            elif len(bufs[j]) + 1 >= max_len:
                discarded += 1
                if discarded > retry_budget:
                    raise RetryBudgetExhausted(
                        f"{discarded} samples exceeded max_len={max_len} before {n} tags were drawn")
                reset.append(j)
            else:
                bufs[j].append(c)
        idx = nxt.copy()
        for j in reset:
            bufs[j] = []
            idx[j] = start
            for layer_state in state:
                for arr in (layer_state if isinstance(layer_state, tuple) else (layer_state,)):
                    arr[j] = 0
    tags = [done[j][q] for q in range(max(quota)) for j in range(k) if q < quota[j]]
    return SampleResult(tags, discarded, seed)


@dataclass
class TestCase:
    tags: List[str]
    rendered_html: str
    id: str


def assemble_case(tags: Sequence[str], template: HtmlTemplate = DEFAULT_TEMPLATE,
                  case_id: Optional[str] = None) -> TestCase:
    for t in tags:
        if "\n" in t:
            raise ValueError(f"tag contains a newline: {t[:40]!r}")
    html = template.render(tags)
    if case_id is None:
        case_id = hashlib.sha256(html.encode("utf-8")).hexdigest()[:16]
    return TestCase(list(tags), html, case_id)


@dataclass
class CaseSet:
    name: str
    cases: List[TestCase]
    tags_per_case: int
    provenance: Dict[str, object] = field(default_factory=dict)

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "tags_per_case": self.tags_per_case,
            "n_cases": len(self.cases),
            "provenance": self.provenance,
            "template": DEFAULT_TEMPLATE.digest(),
            "cases": [c.id for c in self.cases],
        }

    def write(self, directory: Union[str, Path]) -> Path:
        """Write ``{name}_{index}.html`` files, ``tags.txt`` and ``manifest.json``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for case in self.cases:
            (d / f"{case.id}.html").write_bytes(case.rendered_html.encode("utf-8"))
        tags = [t for c in self.cases for t in c.tags]
        (d / "tags.txt").write_bytes("".join(t + "\n" for t in tags).encode("utf-8"))
        (d / "manifest.json").write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n")
        return d

    @classmethod
    def read(cls, directory: Union[str, Path]) -> "CaseSet":
        d = Path(directory)
        man = json.loads((d / "manifest.json").read_text())
        tags = read_tags(d / "tags.txt")
        k = man["tags_per_case"]
        cases = []
        for i, cid in enumerate(man["cases"]):
            html = (d / f"{cid}.html").read_bytes().decode("utf-8")
            cases.append(TestCase(tags[i * k:(i + 1) * k], html, cid))
        return cls(man["name"], cases, k, man["provenance"])


def read_tags(path: Union[str, Path]) -> List[str]:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def make_case_sets(tags: Sequence[str], sizes: Sequence[int] = (128, 256),
                   provenance: Optional[dict] = None, prefix: str = "set",
                   template: HtmlTemplate = DEFAULT_TEMPLATE) -> List[CaseSet]:
    """Split ``tags`` into one CaseSet per per-case size."""
    out = []
    for size in sizes:
        if size < 1 or len(tags) % size:
            raise NotDivisible(f"{len(tags)} tags cannot be split into cases of {size}")
    for size in sizes:
        name = f"{prefix}_{size}"
        cases = [
            assemble_case(tags[i:i + size], template, f"{name}_{i // size:04d}")
            for i in range(0, len(tags), size)
        ]
        prov = dict(provenance or {})
        out.append(CaseSet(name, cases, size, prov))
    return out
