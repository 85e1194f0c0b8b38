"""Flat, non-nested HTML tag corpora generated from a controllable grammar.

Every corpus line is one complete tag construct::

    <h2 id="id0" dir="rtl"> 2e100 </h2>

Void elements carry no inner text and no closing tag.  The grammar lives in a
JSON document (see ``data/default_grammar.json``) so it can be extended
without touching code.
"""

from __future__ import annotations

import bisect
import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import CorpusTooSmall, NeurofuzzError

VALUE_KINDS = (
    "id-counter",
    "fixed-string-pool",
    "boolean-pair",
    "direction-pair",
    "language-code-pool",
    "integer-pool",
    "float-pool",
    "script-snippet-pool",
)

DEFAULT_MAX_LINE_BYTES = 512


class GrammarError(NeurofuzzError):
    pass


@dataclass(frozen=True)
class AttributeSpec:
    name: str
    kind: str
    values: Tuple[str, ...] = ()
    prefix: str = "id"
    limit: int = 500000

    def draw(self, rng: random.Random) -> str:
        if self.kind == "id-counter":
            return f"{self.prefix}{rng.randrange(self.limit)}"
        return self.values[rng.randrange(len(self.values))]


@dataclass(frozen=True)
class TagGrammar:
    tag_names: Tuple[str, ...]
    void_tags: frozenset
    excluded_tags: frozenset
    attributes: Tuple[AttributeSpec, ...]
    inner_text_pool: Tuple[str, ...]
    max_attributes_per_tag: int = 6

    def __post_init__(self):
        self.check()

    @property
    def attribute_names(self) -> frozenset:
        return frozenset(a.name for a in self.attributes)

    @property
    def tag_set(self) -> frozenset:
        return frozenset(self.tag_names)

    def is_void(self, name: str) -> bool:
        return name in self.void_tags

    def check(self) -> None:
        """Raise GrammarError unless every generator is total and newline-free."""
        if not self.tag_names:
            raise GrammarError("grammar has no usable tags")
        clash = self.tag_set & self.excluded_tags
        if clash:
            raise GrammarError(f"excluded tags listed as usable: {sorted(clash)}")
        if self.max_attributes_per_tag < 0:
            raise GrammarError("max_attributes_per_tag must be >= 0")
        if self.max_attributes_per_tag > len(self.attributes):
            raise GrammarError("max_attributes_per_tag exceeds number of attributes")
        if not self.inner_text_pool:
            raise GrammarError("inner_text_pool is empty")
        for attr in self.attributes:
            if attr.kind not in VALUE_KINDS:
                raise GrammarError(f"attribute {attr.name!r}: unknown kind {attr.kind!r}")
            if attr.kind == "id-counter":
                if attr.limit < 1 or not attr.prefix:
                    raise GrammarError(f"attribute {attr.name!r}: bad id-counter")
                _check_token(attr.prefix, f"id prefix of {attr.name!r}", quoted=True)
            elif not attr.values:
                raise GrammarError(f"attribute {attr.name!r}: empty value pool")
            for v in attr.values:
                if not v:
                    raise GrammarError(f"attribute {attr.name!r}: empty value")
                _check_token(v, f"value of {attr.name!r}", quoted=True)
            _check_name(attr.name)
        for name in self.tag_names:
            _check_name(name)
        for text in self.inner_text_pool:
            if not text:
                raise GrammarError("empty inner text entry")
            _check_token(text, "inner text", quoted=False)

    def to_dict(self) -> dict:
        pools: Dict[str, List[str]] = {}
        attrs: Dict[str, dict] = {}
        for a in self.attributes:
            if a.kind == "id-counter":
                attrs[a.name] = {"kind": a.kind, "prefix": a.prefix, "limit": a.limit}
            else:
                attrs[a.name] = {"kind": a.kind, "values": list(a.values)}
        return {
            "version": 1,
            "tags": [{"name": n, "void": n in self.void_tags} for n in self.tag_names],
            "excluded_tags": sorted(self.excluded_tags),
            "attributes": attrs,
            "value_pools": pools,
            "inner_text_pool": list(self.inner_text_pool),
            "max_attributes_per_tag": self.max_attributes_per_tag,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TagGrammar":
        pools = doc.get("value_pools", {})
        attrs = []
        for name, spec in doc["attributes"].items():
            kind = spec["kind"]
            if kind == "id-counter":
                attrs.append(
                    AttributeSpec(name, kind, prefix=spec.get("prefix", "id"),
                                  limit=int(spec.get("limit", 500000)))
                )
                continue
            values = spec.get("values")
            if values is None:
                if kind not in pools:
                    raise GrammarError(f"attribute {name!r}: no pool for kind {kind!r}")
                values = pools[kind]
            attrs.append(AttributeSpec(name, kind, tuple(values)))
        tags = doc["tags"]
        return cls(
            tag_names=tuple(t["name"] for t in tags),
            void_tags=frozenset(t["name"] for t in tags if t.get("void")),
            excluded_tags=frozenset(doc.get("excluded_tags", ())),
            attributes=tuple(attrs),
            inner_text_pool=tuple(doc["inner_text_pool"]),
            max_attributes_per_tag=int(doc.get("max_attributes_per_tag", 6)),
        )

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


_FORBIDDEN_NAME = set(' \t\n\r\f"\'<>/=')


def _check_name(name: str) -> None:
    if not name or any(c in _FORBIDDEN_NAME for c in name):
        raise GrammarError(f"illegal tag/attribute name {name!r}")


def _check_token(text: str, what: str, quoted: bool) -> None:
    if "\n" in text or "\r" in text or "\0" in text:
        raise GrammarError(f"{what} contains a line break or NUL: {text!r}")
    if quoted and '"' in text:
        raise GrammarError(f"{what} contains a double quote: {text!r}")
    if "<" in text or (not quoted and ">" in text):
        raise GrammarError(f"{what} contains tag delimiters: {text!r}")
    if "&" in text and not quoted:
        # only complete named references are allowed in text
        stripped = re.sub(r"&[A-Za-z]+;", "", text)
        if "&" in stripped:
            raise GrammarError(f"{what} contains a bare ampersand: {text!r}")


def load_grammar(path: Union[str, Path, None] = None) -> TagGrammar:
    """Load a grammar JSON document; ``None`` loads the bundled default."""
    if path is None:
        raw = resources.files("neurofuzz").joinpath("data/default_grammar.json").read_text("utf-8")
    else:
        raw = Path(path).read_text(encoding="utf-8")
    return TagGrammar.from_dict(json.loads(raw))


_DEFAULT: Optional[TagGrammar] = None


def default_grammar() -> TagGrammar:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_grammar()
    return _DEFAULT


def generate_tag(grammar: TagGrammar, rng: random.Random) -> str:
    """Draw one tag line (without trailing newline) from ``grammar``."""
    name = grammar.tag_names[rng.randrange(len(grammar.tag_names))]
    parts = ["<", name]
    k = grammar.max_attributes_per_tag
    if k > 0:
        n_attr = rng.randint(1, k)
        for attr in rng.sample(grammar.attributes, n_attr):
            parts.append(f' {attr.name}="{attr.draw(rng)}"')
    parts.append(">")
    if name not in grammar.void_tags:
        text = grammar.inner_text_pool[rng.randrange(len(grammar.inner_text_pool))]
        parts.append(f" {text} </{name}>")
    return "".join(parts)


@dataclass
class Corpus:
    lines: List[str]
    provenance: Dict[str, object] = field(default_factory=dict)

    @property
    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    @property
    def data(self) -> bytes:
        return self.text.encode("utf-8")

    @property
    def byte_size(self) -> int:
        return len(self.data)

    def line_offsets(self) -> List[int]:
        """Byte offset of every line start, followed by the total size."""
        offsets = [0]
        total = 0
        for line in self.lines:
            total += len(line.encode("utf-8")) + 1
            offsets.append(total)
        return offsets

    def slice_text(self, start: int, end: int) -> str:
        return self.data[start:end].decode("utf-8")

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.data)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Corpus":
        text = Path(path).read_bytes().decode("utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines, {"source": str(path)})


def generate_corpus(grammar: TagGrammar, n_tags: int, seed: int,
                    max_line_bytes: int = DEFAULT_MAX_LINE_BYTES) -> Corpus:
    if n_tags < 1:
        raise ValueError("n_tags must be >= 1")
    rng = random.Random(seed)
    lines = []
    for _ in range(n_tags):
        line = generate_tag(grammar, rng)
        if len(line.encode("utf-8")) >= max_line_bytes:
            raise GrammarError(f"generated line exceeds {max_line_bytes} bytes: {line[:60]!r}...")
        lines.append(line)
    return Corpus(lines, {"grammar": grammar.digest(), "seed": seed, "n_tags": n_tags})


Interval = Tuple[int, int]


@dataclass(frozen=True)
class SplitSet:
    splits: Tuple[Tuple[Interval, Interval], ...]

    @property
    def n_splits(self) -> int:
        return len(self.splits)

    def to_list(self) -> list:
        return [{"train": list(t), "val": list(v)} for t, v in self.splits]

    @classmethod
    def from_list(cls, items: Sequence[dict]) -> "SplitSet":
        return cls(tuple((tuple(d["train"]), tuple(d["val"])) for d in items))


def make_splits(corpus: Corpus, n_splits: int, train_bytes: int, val_bytes: int,
                seed: int, max_attempts: int = 1000) -> SplitSet:
    """Draw ``n_splits`` pairwise-distinct (train, validation) byte intervals.

    Both intervals are snapped outward to line boundaries and never overlap.
    """
    size = corpus.byte_size
    if n_splits < 1:
        raise ValueError("n_splits must be >= 1")
    if train_bytes < 1 or val_bytes < 1 or train_bytes + val_bytes > size:
        raise CorpusTooSmall(
            f"need {train_bytes} + {val_bytes} bytes, corpus has {size}")
    bounds = corpus.line_offsets()

    def snap_up(x: int) -> int:
        return bounds[bisect.bisect_left(bounds, x)] if x <= size else size + 1

    def val_starts(lo: int, hi: int) -> List[int]:
        # line starts v in [lo, hi) whose snapped interval ends at or before hi
        i0 = bisect.bisect_left(bounds, lo)
        out = []
        for i in range(i0, len(bounds) - 1):
            v = bounds[i]
            if snap_up(v + val_bytes) > hi:
                break
            out.append(v)
        return out

    feasible = []
    for i in range(len(bounds) - 1):
        s = bounds[i]
        e = snap_up(s + train_bytes)
        if e > size:
            break
        before = snap_up(val_bytes) <= s
        after = snap_up(e + val_bytes) <= size
        if before or after:
            feasible.append((s, e, before, after))
    if not feasible:
        raise CorpusTooSmall("no line-aligned placement fits both intervals")

    rng = random.Random(seed)
    chosen: List[Tuple[Interval, Interval]] = []
    attempts = 0
    while len(chosen) < n_splits:
        attempts += 1
        if attempts > max_attempts:
            raise CorpusTooSmall(f"cannot find {n_splits} distinct splits")
        s, e, before, after = feasible[rng.randrange(len(feasible))]
        sides = [side for side, ok in (("before", before), ("after", after)) if ok]
        side = sides[rng.randrange(len(sides))]
        starts = val_starts(0, s) if side == "before" else val_starts(e, size)
        v = starts[rng.randrange(len(starts))]
        pair = ((s, e), (v, snap_up(v + val_bytes)))
        if pair not in chosen:
            chosen.append(pair)
    return SplitSet(tuple(chosen))
