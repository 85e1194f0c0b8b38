"""A deterministic instrumented HTML tokenizer standing in for a browser engine.

Every control-flow arm of a small WHATWG-flavoured tokenizer and tree
walker is named (``"start:div"``, ``"attrval:id:word"``,
``"err:unknown-attr"``, ...) and mapped to a fabricated basic block in a
single module, so running a test case yields a drcov log that the coverage
pipeline consumes exactly like one produced by a real instrumented target.

The surrogate is deliberately strict about anything the generating grammar
never produces: attribute values must be double quoted, ``/>`` is flagged,
and comments are only tolerated before ``<body>``.  Arms whose name starts
with ``err:`` are the error-recovery paths.  Tag and attribute names are
matched case-sensitively, as the validator does.

External targets (anything that writes a drcov file) are driven through
:func:`run_external`.
"""

from __future__ import annotations

import hashlib
import os
import re
import shlex
import shutil
import subprocess
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple, Union

from .corpus import TagGrammar, default_grammar
from .coverage import BlockSet, CoverageLog, make_log, parse_drcov, write_drcov
from .errors import NoLogProduced, SpawnFailed, TargetTimeout
from .generator import CaseSet, TestCase

MODULE_NAME = "surrogate_renderer"
MODULE_BASE = 0x00007F5500000000
BLOCK_BASE = 0x1000
BLOCK_SIZE = 16
BLOCK_MAP_VERSION = 1

# tokenizer states
DATA = "Data"
TAG_OPEN = "TagOpen"
TAG_NAME = "TagName"
BEFORE_ATTR_NAME = "BeforeAttrName"
ATTR_NAME = "AttrName"
BEFORE_ATTR_VALUE = "BeforeAttrValue"
ATTR_VALUE_QUOTED = "AttrValueQuoted"
ATTR_VALUE_UNQUOTED = "AttrValueUnquoted"
AFTER_ATTR_VALUE = "AfterAttrValue"
END_TAG_OPEN = "EndTagOpen"
END_TAG_NAME = "EndTagName"
CHAR_REF = "CharRef"
BOGUS_TAG = "BogusTag"
STATES = (DATA, TAG_OPEN, TAG_NAME, BEFORE_ATTR_NAME, ATTR_NAME, BEFORE_ATTR_VALUE,
          ATTR_VALUE_QUOTED, ATTR_VALUE_UNQUOTED, AFTER_ATTR_VALUE, END_TAG_OPEN,
          END_TAG_NAME, CHAR_REF, BOGUS_TAG)

# insertion modes of the tree walker
INITIAL = "initial"
BEFORE_HTML = "before-html"
BEFORE_HEAD = "before-head"
IN_HEAD = "in-head"
AFTER_HEAD = "after-head"
IN_BODY = "in-body"
AFTER_BODY = "after-body"
AFTER_AFTER_BODY = "after-after-body"
_PRE_BODY = (INITIAL, BEFORE_HTML, BEFORE_HEAD, IN_HEAD, AFTER_HEAD)

STRUCTURAL_TAGS = ("body", "html")
TEMPLATE_ATTRS = ("charset",)      # only recognised inside <head>
ENTITIES = {"amp": "&", "lt": "<", "gt": ">", "quot": '"', "apos": "'", "nbsp": "\xa0",
            "copy": "\xa9", "reg": "\xae", "euro": "€", "shy": "\xad"}
TEXT_CLASSES = ("digit", "lower", "upper", "space", "newline", "punct", "non-ascii")
VALUE_CLASSES = ("empty", "int", "float", "word", "other")
MAX_DEPTH_ARM = 8
MAX_ATTR_ARM = 8

GENERIC_ARMS: Tuple[str, ...] = (
    "entry", "eof", "eof:clean", "eof:in-body",
    "data:text", "data:lt", "data:amp",
    "tagopen:letter", "tagopen:solidus", "tagopen:bang",
    "tagname:run", "endtagname:run", "tag:ws", "tag:emit-start", "tag:emit-end",
    "attrname:run", "attrname:equals", "attrname:ws-end", "attrvalue:quoted", "attrvalue:close",
    "afterval:ws", "afterval:gt", "afterval:solidus",
    "markup:comment", "markup:doctype", "doctype:html",
    "charref:bare-amp", "charref:literal-amp", "charref:numeric", "charref:hex",
    "charref:in-attr",
    "tree:doctype", "tree:html-open", "tree:head-open", "tree:head-close", "tree:body-open",
    "tree:body-close", "tree:html-close", "tree:implied-body", "tree:comment", "head:meta",
    "tree:void-insert", "tree:push", "tree:push-nested", "tree:pop-match", "tree:newline",
    "tree:text-in-element", "tree:whitespace-after-body",
    # error recovery
    "err:invalid-utf8", "err:null-char", "err:missing-doctype", "err:misplaced-doctype",
    "err:unknown-doctype", "err:unknown-tag", "err:unknown-end-tag", "err:unknown-attr",
    "err:duplicate-attr", "err:attr-without-value", "err:missing-attr-value",
    "err:space-around-equals", "err:single-quoted-value", "err:unquoted-attr-value",
    "err:unexpected-char-in-unquoted-value", "err:unexpected-char-in-attr-name",
    "err:unexpected-equals-before-attr-name", "err:missing-whitespace-between-attrs",
    "err:self-closing-syntax", "err:unexpected-solidus-in-tag",
    "err:invalid-first-char-of-tag-name", "err:missing-end-tag-name",
    "err:unexpected-question-mark", "err:bogus-comment", "err:end-tag-with-attributes",
    "err:end-tag-for-void", "err:end-tag-implied-close", "err:stray-end-tag",
    "err:stray-text-in-body", "err:text-outside-body", "err:misplaced-structural-tag",
    "err:content-after-body", "err:comment-outside-head", "err:unknown-named-charref",
    "err:missing-semicolon-after-charref", "err:absence-of-digits-in-numeric-charref",
    "err:invalid-numeric-charref",
    "err:eof-before-tag-name", "err:eof-in-tag", "err:eof-in-attr-value",
    "err:eof-in-comment", "err:eof-in-doctype", "err:eof-open-elements",
    "err:eof-unclosed-document",
)

WS = "\t\n\f\r "
_TEXT_RUN = re.compile(r"[^<&]*")
_WS_RUN = re.compile(r"[\t\n\f\r ]*")
_TAG_NAME_RUN = re.compile(r"[^\t\n\f\r />]*")
_ATTR_NAME_RUN = re.compile(r"[^\t\n\f\r />=]*")
_QUOTED_RUN = {'"': re.compile(r'[^"&]*'), "'": re.compile(r"[^'&]*")}
_UNQUOTED_RUN = re.compile(r"[^\t\n\f\r >&]*")
_ENTITY = re.compile(r"&(#[xX][0-9A-Fa-f]*|#[0-9]*|[A-Za-z0-9]+)(;?)")
_INT = re.compile(r"[+-]?\d+")
_FLOAT = re.compile(r"[+-]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?|[+-]?Infinity|NaN")
_CLASS_RE = {
    "digit": re.compile(r"[0-9]"),
    "lower": re.compile(r"[a-z]"),
    "upper": re.compile(r"[A-Z]"),
    "space": re.compile(r"[ \t\f\r]"),
    "newline": re.compile(r"\n"),
    "punct": re.compile(r"[!-/:-@\[-`{-~]"),
    "non-ascii": re.compile(r"[^\x00-\x7f]"),
}


def is_error_arm(arm: str) -> bool:
    return arm.startswith("err:")


def is_boundary_arm(arm: str) -> bool:
    """Entry and end-of-input arms, which depend on where the input stops."""
    return arm == "entry" or arm.startswith("eof") or arm.startswith("err:eof")


def _value_class(v: str) -> str:
    if not v:
        return "empty"
    if _INT.fullmatch(v):
        return "int"
    if _FLOAT.fullmatch(v):
        return "float"
    if v.isascii() and v.isalpha():
        return "word"
    return "other"


@dataclass(frozen=True)
class StaticBlockMap:
    """Frozen arm -> (offset, size) table under one module."""

    arms: Tuple[str, ...]
    known_tags: FrozenSet[str]
    void_tags: FrozenSet[str]
    known_attrs: FrozenSet[str]
    module: str = MODULE_NAME
    version: int = BLOCK_MAP_VERSION
    offsets: Dict[str, int] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        if len(set(self.arms)) != len(self.arms):
            raise ValueError("duplicate arm names")
        self.offsets.update({a: BLOCK_BASE + BLOCK_SIZE * i for i, a in enumerate(self.arms)})

    @property
    def size(self) -> int:
        return BLOCK_SIZE

    @property
    def module_end(self) -> int:
        return MODULE_BASE + BLOCK_BASE + BLOCK_SIZE * len(self.arms)

    def offset(self, arm: str) -> int:
        return self.offsets[arm]

    def arm_at(self, offset: int) -> str:
        i, r = divmod(offset - BLOCK_BASE, BLOCK_SIZE)
        if r or not 0 <= i < len(self.arms):
            raise KeyError(offset)
        return self.arms[i]

    def blocks(self, arms) -> BlockSet:
        return frozenset((self.module, self.offsets[a]) for a in arms)

    def error_offsets(self) -> FrozenSet[int]:
        return frozenset(o for a, o in self.offsets.items() if is_error_arm(a))

    def digest(self) -> str:
        h = hashlib.sha256(f"{self.module}\x00{self.version}\x00".encode())
        h.update("\n".join(self.arms).encode("utf-8"))
        return h.hexdigest()


def build_block_map(grammar: TagGrammar) -> StaticBlockMap:
    """Generic arms, then per-tag and per-attribute dispatch arms in sorted order."""
    tags = sorted(set(grammar.tag_names) | set(STRUCTURAL_TAGS))
    voids = frozenset(grammar.void_tags)
    attrs = sorted(set(grammar.attribute_names) | set(TEMPLATE_ATTRS))
    arms = list(GENERIC_ARMS)
    arms += [f"tag:attrs-{k}" for k in range(MAX_ATTR_ARM + 1)]
    arms += [f"tree:depth-{d}" for d in range(1, MAX_DEPTH_ARM + 1)]
    arms += [f"text:{c}" for c in TEXT_CLASSES]
    arms += [f"entity:{e}" for e in sorted(ENTITIES)]
    for t in tags:
        arms.append(f"void:{t}" if t in voids else f"start:{t}")
    arms += [f"end:{t}" for t in tags if t not in voids]
    for a in attrs:
        arms.append(f"attr:{a}")
        arms += [f"attrval:{a}:{c}" for c in VALUE_CLASSES]
    return StaticBlockMap(tuple(arms), frozenset(tags), voids, frozenset(grammar.attribute_names))


@lru_cache(maxsize=1)
def default_block_map() -> StaticBlockMap:
    return build_block_map(default_grammar())


@dataclass
class TokenizerState:
    """Where a run stopped: tokenizer state, open elements, insertion mode, arms hit."""

    state: str
    stack: List[str]
    mode: str
    hit_blocks: Set[str]


class _Tag:
    __slots__ = ("name", "end", "attrs", "self_closing")

    def __init__(self, name: str, end: bool):
        self.name = name
        self.end = end
        self.attrs: List[Tuple[str, Optional[str]]] = []
        self.self_closing = False


class _Machine:
    def __init__(self, bmap: StaticBlockMap):
        self.bmap = bmap
        self.hits: Set[str] = set()
        self.tokens: List[tuple] = []
        self.stack: List[str] = []
        self.mode = INITIAL
        self.state = DATA
        self.tag: Optional[_Tag] = None
        self.attr_name = ""
        self.attr_value: List[str] = []
        self.quote = '"'

    # -- tokenizer ---------------------------------------------------------

    def run(self, s: str) -> None:
        hit = self.hits.add
        hit("entry")
        i, n = 0, len(s)
        while i < n:
            st = self.state
            c = s[i]
            if st == DATA:
                if c == "<":
                    hit("data:lt")
                    self.state = TAG_OPEN
                    i += 1
                elif c == "&":
                    i = self._charref(s, i, DATA)
                else:
                    j = _TEXT_RUN.match(s, i).end()
                    self._text(s[i:j])
                    i = j
            elif st == TAG_OPEN:
                if c == "!":
                    hit("tagopen:bang")
                    i = self._markup(s, i + 1)
                elif c == "/":
                    hit("tagopen:solidus")
                    self.state = END_TAG_OPEN
                    i += 1
                elif c == "?":
                    hit("err:unexpected-question-mark")
                    self.state = BOGUS_TAG
                elif c.isascii() and c.isalpha():
                    hit("tagopen:letter")
                    self.tag = _Tag("", False)
                    self.state = TAG_NAME
                else:
                    hit("err:invalid-first-char-of-tag-name")
                    self._text("<")
                    self.state = DATA
            elif st == TAG_NAME or st == END_TAG_NAME:
                j = _TAG_NAME_RUN.match(s, i).end()
                self._tag_named(s[i:j])
                self.state = BEFORE_ATTR_NAME
                i = j
            elif st == END_TAG_OPEN:
                if c.isascii() and c.isalpha():
                    self.tag = _Tag("", True)
                    self.state = END_TAG_NAME
                elif c == ">":
                    hit("err:missing-end-tag-name")
                    self.state = DATA
                    i += 1
                else:
                    hit("err:invalid-first-char-of-tag-name")
                    self.state = BOGUS_TAG
            elif st == BEFORE_ATTR_NAME:
                if c in WS:
                    hit("tag:ws")
                    i = _WS_RUN.match(s, i).end()
                elif c == ">":
                    self._emit_tag()
                    i += 1
                elif c == "/":
                    if s.startswith("/>", i):
                        hit("err:self-closing-syntax")
                        self.tag.self_closing = True
                        self._emit_tag()
                        i += 2
                    else:
                        hit("err:unexpected-solidus-in-tag")
                        i += 1
                elif c == "=":
                    hit("err:unexpected-equals-before-attr-name")
                    self.attr_name = "="
                    self.state = ATTR_NAME
                    i += 1
                else:
                    self.attr_name = ""
                    self.state = ATTR_NAME
            elif st == ATTR_NAME:
                j = _ATTR_NAME_RUN.match(s, i).end()
                hit("attrname:run")
                self.attr_name += s[i:j]
                i = j
                if i >= n:
                    break
                c = s[i]
                if c == "=":
                    hit("attrname:equals")
                    self.state = BEFORE_ATTR_VALUE
                    i += 1
                elif c in WS:
                    j = _WS_RUN.match(s, i).end()
                    if j < n and s[j] == "=":
                        hit("err:space-around-equals")
                        self.state = BEFORE_ATTR_VALUE
                        i = j + 1
                    else:
                        hit("attrname:ws-end")
                        self._finish_attr(None, None)
                        self.state = BEFORE_ATTR_NAME
                        i = j
                else:                       # '/' or '>'
                    self._finish_attr(None, None)
                    self.state = BEFORE_ATTR_NAME
            elif st == BEFORE_ATTR_VALUE:
                if c in WS:
                    hit("err:space-around-equals")
                    i = _WS_RUN.match(s, i).end()
                elif c == '"' or c == "'":
                    if c == "'":
                        hit("err:single-quoted-value")
                    hit("attrvalue:quoted")
                    self.quote = c
                    self.attr_value = []
                    self.state = ATTR_VALUE_QUOTED
                    i += 1
                elif c == ">":
                    hit("err:missing-attr-value")
                    self._finish_attr("", None)
                    self._emit_tag()
                    i += 1
                else:
                    hit("err:unquoted-attr-value")
                    self.attr_value = []
                    self.state = ATTR_VALUE_UNQUOTED
            elif st == ATTR_VALUE_QUOTED:
                if c == self.quote:
                    hit("attrvalue:close")
                    self._finish_attr("".join(self.attr_value), self.quote)
                    self.state = AFTER_ATTR_VALUE
                    i += 1
                elif c == "&":
                    i = self._charref(s, i, ATTR_VALUE_QUOTED)
                else:
                    j = _QUOTED_RUN[self.quote].match(s, i).end()
                    self.attr_value.append(s[i:j])
                    i = j
            elif st == ATTR_VALUE_UNQUOTED:
                if c in WS:
                    self._finish_attr("".join(self.attr_value), "")
                    self.state = BEFORE_ATTR_NAME
                elif c == ">":
                    self._finish_attr("".join(self.attr_value), "")
                    self._emit_tag()
                    i += 1
                elif c == "&":
                    i = self._charref(s, i, ATTR_VALUE_UNQUOTED)
                else:
                    j = _UNQUOTED_RUN.match(s, i).end()
                    run = s[i:j]
                    if any(q in run for q in "\"'<=`"):
                        hit("err:unexpected-char-in-unquoted-value")
                    self.attr_value.append(run)
                    i = j
            elif st == AFTER_ATTR_VALUE:
                if c in WS:
                    hit("afterval:ws")
                    self.state = BEFORE_ATTR_NAME
                elif c == ">":
                    hit("afterval:gt")
                    self._emit_tag()
                    i += 1
                elif c == "/":
                    hit("afterval:solidus")
                    self.state = BEFORE_ATTR_NAME
                else:
                    hit("err:missing-whitespace-between-attrs")
                    self.state = BEFORE_ATTR_NAME
            elif st == BOGUS_TAG:
                hit("err:bogus-comment")
                j = s.find(">", i)
                end = n if j < 0 else j
                self._comment(s[i:end], bogus=True)
                self.state = DATA
                i = end + 1
            else:                            # pragma: no cover - CHAR_REF is never a resting state
                raise AssertionError(st)
        self._eof()

    def _markup(self, s: str, i: int) -> int:
        if s.startswith("--", i):
            hit = self.hits.add
            j = s.find("-->", i + 2)
            if j < 0:
                hit("err:eof-in-comment")
                self.state = DATA
                return len(s)
            hit("markup:comment")
            self._comment(s[i + 2:j], bogus=False)
            self.state = DATA
            return j + 3
        if s[i:i + 7].upper() == "DOCTYPE":
            j = s.find(">", i)
            if j < 0:
                self.hits.add("err:eof-in-doctype")
                self.state = DATA
                return len(s)
            self.hits.add("markup:doctype")
            self._doctype(s[i + 7:j].strip(WS))
            self.state = DATA
            return j + 1
        self.state = BOGUS_TAG
        return i

    def _charref(self, s: str, i: int, ret: str) -> int:
        hit = self.hits.add
        if ret == DATA:
            hit("data:amp")
        else:
            hit("charref:in-attr")
        m = _ENTITY.match(s, i)
        if m is None:
            hit("charref:bare-amp")
            out, j = "&", i + 1
        else:
            body, semi = m.group(1), m.group(2)
            j = m.end()
            if body.startswith("#"):
                hexa = body[1:2] in ("x", "X")
                digits = body[2:] if hexa else body[1:]
                if not digits:
                    hit("err:absence-of-digits-in-numeric-charref")
                    out = m.group(0)
                else:
                    cp = int(digits, 16 if hexa else 10)
                    if not semi:
                        hit("err:missing-semicolon-after-charref")
                    if cp == 0 or cp > 0x10FFFF or 0xD800 <= cp <= 0xDFFF:
                        hit("err:invalid-numeric-charref")
                        out = "�"
                    else:
                        hit("charref:hex" if hexa else "charref:numeric")
                        out = chr(cp)
            elif body in ENTITIES:
                if not semi:
                    hit("err:missing-semicolon-after-charref")
                hit(f"entity:{body}")
                out = ENTITIES[body]
            elif semi:
                hit("err:unknown-named-charref")
                out = m.group(0)
            else:
                hit("charref:literal-amp")
                out = m.group(0)
        if ret == DATA:
            self._text(out)
        else:
            self.attr_value.append(out)
        return j

    def _tag_named(self, name: str) -> None:
        hit = self.hits.add
        tag = self.tag
        tag.name = name
        known = name in self.bmap.known_tags
        if tag.end:
            hit("endtagname:run")
            if not known:
                hit("err:unknown-end-tag")
            elif name in self.bmap.void_tags:
                hit("err:end-tag-for-void")
            else:
                hit(f"end:{name}")
        else:
            hit("tagname:run")
            if not known:
                hit("err:unknown-tag")
            elif name in self.bmap.void_tags:
                hit(f"void:{name}")
            else:
                hit(f"start:{name}")

    def _finish_attr(self, value: Optional[str], quote: Optional[str]) -> None:
        hit = self.hits.add
        tag, name = self.tag, self.attr_name
        if tag.end:
            hit("err:end-tag-with-attributes")
        if value is None:
            hit("err:attr-without-value")
        elif quote == "":
            hit("err:unquoted-attr-value")
        if any(q in name for q in "\"'<"):
            hit("err:unexpected-char-in-attr-name")
        if any(a == name for a, _ in tag.attrs):
            hit("err:duplicate-attr")
        known = name in self.bmap.known_attrs or (name in TEMPLATE_ATTRS and self.mode == IN_HEAD)
        if known:
            hit(f"attr:{name}")
            if value is not None:
                hit(f"attrval:{name}:{_value_class(value)}")
        else:
            hit("err:unknown-attr")
        tag.attrs.append((name, value))

    def _emit_tag(self) -> None:
        tag = self.tag
        self.tag = None
        self.state = DATA
        self.hits.add(f"tag:attrs-{min(len(tag.attrs), MAX_ATTR_ARM)}")
        kind = "end" if tag.end else "start"
        self.tokens.append((kind, tag.name, tuple(tag.attrs), tag.self_closing))
        if tag.end:
            self.hits.add("tag:emit-end")
            self._tree_end(tag.name)
        else:
            self.hits.add("tag:emit-start")
            self._tree_start(tag.name)

    def _eof(self) -> None:
        hit = self.hits.add
        hit("eof")
        st = self.state
        if st == TAG_OPEN or st == END_TAG_OPEN:
            hit("err:eof-before-tag-name")
            self._text("<" if st == TAG_OPEN else "</")
        elif st == ATTR_VALUE_QUOTED:
            hit("err:eof-in-attr-value")
        elif st != DATA:
            hit("err:eof-in-tag")
        if self.mode == IN_BODY:
            hit("eof:in-body")
            if self.stack:
                hit("err:eof-open-elements")
        if self.mode == AFTER_AFTER_BODY:
            hit("eof:clean")
        else:
            hit("err:eof-unclosed-document")
        self.tokens.append(("eof",))

    # -- tree walker -------------------------------------------------------

    def _text(self, run: str) -> None:
        if not run:
            return
        hit = self.hits.add
        hit("data:text")
        tokens = self.tokens
        if tokens and tokens[-1][0] == "text":
            tokens[-1] = ("text", tokens[-1][1] + run)
        else:
            tokens.append(("text", run))
        meaningful = run.strip("\n") != ""
        if self.mode in (AFTER_BODY, AFTER_AFTER_BODY):
            if not meaningful:
                hit("tree:whitespace-after-body")
                return
            hit("err:content-after-body")
            self.mode = IN_BODY
        if self.mode != IN_BODY:
            if meaningful:
                hit("err:text-outside-body")
            return
        if self.stack:
            hit("tree:text-in-element")
            for cls, rx in _CLASS_RE.items():
                if rx.search(run):
                    hit(f"text:{cls}")
        elif meaningful:
            hit("err:stray-text-in-body")
        else:
            hit("tree:newline")

    def _comment(self, text: str, bogus: bool) -> None:
        self.tokens.append(("comment", text))
        if bogus:
            return
        if self.mode in _PRE_BODY:
            self.hits.add("tree:comment")
        else:
            self.hits.add("err:comment-outside-head")

    def _doctype(self, name: str) -> None:
        self.tokens.append(("doctype", name))
        if self.mode != INITIAL:
            self.hits.add("err:misplaced-doctype")
            return
        self.hits.add("tree:doctype")
        self.hits.add("doctype:html" if name.lower() == "html" else "err:unknown-doctype")
        self.mode = BEFORE_HTML

    def _require_doctype(self) -> None:
        if self.mode == INITIAL:
            self.hits.add("err:missing-doctype")
            self.mode = BEFORE_HTML

    def _tree_start(self, name: str) -> None:
        hit = self.hits.add
        mode = self.mode
        if mode in (AFTER_BODY, AFTER_AFTER_BODY):
            hit("err:content-after-body")
            self.mode = mode = IN_BODY
        if name == "html":
            if mode in (INITIAL, BEFORE_HTML):
                self._require_doctype()
                hit("tree:html-open")
                self.mode = BEFORE_HEAD
            else:
                hit("err:misplaced-structural-tag")
            return
        if name == "body":
            if mode in _PRE_BODY:
                self._require_doctype()
                hit("tree:body-open")
                self.mode = IN_BODY
            else:
                hit("err:misplaced-structural-tag")
            return
        if name == "head" and mode in (INITIAL, BEFORE_HTML, BEFORE_HEAD):
            self._require_doctype()
            hit("tree:head-open")
            self.mode = IN_HEAD
            return
        if mode == IN_HEAD and name == "meta":
            hit("head:meta")
            return
        if mode in _PRE_BODY:
            self._require_doctype()
            hit("tree:implied-body")
            self.mode = IN_BODY
        if name in self.bmap.void_tags:
            hit("tree:void-insert")
            return
        hit("tree:push-nested" if self.stack else "tree:push")
        self.stack.append(name)
        hit(f"tree:depth-{min(len(self.stack), MAX_DEPTH_ARM)}")

    def _close_all(self) -> None:
        if self.stack:
            self.hits.add("err:end-tag-implied-close")
            self.stack.clear()

    def _tree_end(self, name: str) -> None:
        hit = self.hits.add
        mode = self.mode
        if name == "head" and mode == IN_HEAD:
            hit("tree:head-close")
            self.mode = AFTER_HEAD
            return
        if name == "body" or name == "html":
            if mode == IN_BODY or (name == "html" and mode == AFTER_BODY):
                self._close_all()
                hit(f"tree:{name}-close")
                self.mode = AFTER_BODY if name == "body" else AFTER_AFTER_BODY
            else:
                hit("err:stray-end-tag")
            return
        if mode in _PRE_BODY:
            hit("err:stray-end-tag")
            return
        if mode in (AFTER_BODY, AFTER_AFTER_BODY):
            hit("err:content-after-body")
            self.mode = IN_BODY
        stack = self.stack
        if name in self.bmap.void_tags:
            return                          # already flagged by the tokenizer
        if stack and stack[-1] == name:
            hit("tree:pop-match")
            stack.pop()
        elif name in stack:
            hit("err:end-tag-implied-close")
            del stack[len(stack) - 1 - stack[::-1].index(name):]
        else:
            hit("err:stray-end-tag")


def _decode(html: Union[bytes, str], hits: Set[str]) -> str:
    if isinstance(html, str):
        text = html
    else:
        try:
            text = html.decode("utf-8")
        except UnicodeDecodeError:
            hits.add("err:invalid-utf8")
            text = html.decode("utf-8", "replace")
    if "\x00" in text:
        hits.add("err:null-char")
        text = text.replace("\x00", "�")
    return text


def run_tokenizer(html: Union[bytes, str],
                  block_map: Optional[StaticBlockMap] = None) -> Tuple[List[tuple], TokenizerState]:
    """Tokenize and return the token list plus the final machine state."""
    m = _Machine(block_map or default_block_map())
    text = _decode(html, m.hits)
    m.run(text)
    return m.tokens, TokenizerState(m.state, list(m.stack), m.mode, m.hits)


def hit_arms(html: Union[bytes, str], block_map: Optional[StaticBlockMap] = None) -> FrozenSet[str]:
    return frozenset(run_tokenizer(html, block_map)[1].hit_blocks)


def tokenize_instrumented(html: Union[bytes, str],
                          block_map: Optional[StaticBlockMap] = None) -> Tuple[List[tuple], BlockSet]:
    """Token stream and the set of ``(module, offset)`` blocks hit."""
    bmap = block_map or default_block_map()
    tokens, st = run_tokenizer(html, bmap)
    return tokens, bmap.blocks(st.hit_blocks)


def coverage_log(html: Union[bytes, str], block_map: Optional[StaticBlockMap] = None) -> CoverageLog:
    bmap = block_map or default_block_map()
    offsets = sorted(bmap.offset(a) for a in hit_arms(html, bmap))
    return make_log([(bmap.module, MODULE_BASE, bmap.module_end)],
                    [(o, BLOCK_SIZE, 0) for o in offsets])


def run_case(case: Union[TestCase, bytes, str], block_map: Optional[StaticBlockMap] = None) -> bytes:
    """drcov bytes for one test case, one block record per hit arm."""
    html = case.rendered_html if isinstance(case, TestCase) else case
    return write_drcov(coverage_log(html, block_map))


# --- external targets ------------------------------------------------------------


def _drcov_files(directory: Path) -> Dict[Path, float]:
    out = {}
    for p in directory.rglob("*"):
        if p.is_file() and "drcov" in p.name:
            out[p] = p.stat().st_mtime
    return out


def run_external(command_template: str, case_path: Union[str, Path],
                 drcov_output_dir: Union[str, Path], timeout: float) -> Tuple[CoverageLog, bytes]:
    """Run one external target on one case and parse the drcov file it leaves.

    ``command_template`` is split like a shell command line; ``{case}`` and
    ``{out}`` are substituted per argument (no shell is involved).  The newest
    file with ``drcov`` in its name that appeared or changed during the run
    is parsed.  Returns the parsed log and its raw bytes.
    """
    if "{case}" not in command_template:
        raise SpawnFailed("command template lacks a {case} placeholder")
    out_dir = Path(drcov_output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        argv = [a.replace("{case}", str(case_path)).replace("{out}", str(out_dir))
                for a in shlex.split(command_template)]
    except ValueError as exc:
        raise SpawnFailed(f"cannot parse command template: {exc}") from exc
    if not argv:
        raise SpawnFailed("empty command")
    before = _drcov_files(out_dir)
    try:
        proc = subprocess.Popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.PIPE,
                                start_new_session=True)
    except OSError as exc:
        raise SpawnFailed(f"cannot start {argv[0]!r}: {exc}") from exc
    try:
        _, err = proc.communicate(timeout=timeout)
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, 9)
        except OSError:
            proc.kill()
        proc.communicate()
        for p, mtime in _drcov_files(out_dir).items():
            if before.get(p) != mtime:
                p.unlink(missing_ok=True)
        raise TargetTimeout(f"{argv[0]} exceeded {timeout}s on {case_path}")
    fresh = [(mtime, str(p), p) for p, mtime in _drcov_files(out_dir).items()
             if before.get(p) != mtime]
    if not fresh:
        detail = err.decode("utf-8", "replace").strip()[-200:]
        raise NoLogProduced(f"{argv[0]} exited with {proc.returncode} and wrote no drcov file"
                            + (f": {detail}" if detail else ""))
    newest = max(fresh)[2]
    data = newest.read_bytes()
    return parse_drcov(data), data


# --- batch driver --------------------------------------------------------------------


def _surrogate_job(args: Tuple[str, str]) -> Tuple[str, bytes]:
    case_id, html = args
    return case_id, run_case(html)


def _external_job(args) -> Tuple[str, bytes]:
    case_id, cmd, case_path, work, timeout = args
    _, data = run_external(cmd, case_path, work, timeout)
    shutil.rmtree(work, ignore_errors=True)
    return case_id, data


def run_target(case_set: CaseSet, cases_dir: Union[str, Path], out_dir: Union[str, Path],
               target: str = "surrogate", cmd: Optional[str] = None, timeout: float = 60.0,
               jobs: int = 1) -> List[Path]:
    """Write ``{case_id}.drcov.log`` for every case of a set.

    External runs get a private working directory each, so concurrent
    targets cannot steal each other's logs.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = max(1, int(jobs))
    if target == "surrogate":
        work = [(c.id, c.rendered_html) for c in case_set.cases]
        if jobs == 1:
            results = [_surrogate_job(w) for w in work]
        else:
            with ProcessPoolExecutor(jobs) as ex:
                results = list(ex.map(_surrogate_job, work, chunksize=8))
    elif target == "external":
        if not cmd:
            raise SpawnFailed("external target needs a command template")
        cdir = Path(cases_dir)
        work = [(c.id, cmd, str(cdir / f"{c.id}.html"), str(out / ".work" / c.id), timeout)
                for c in case_set.cases]
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(_external_job, work))
        shutil.rmtree(out / ".work", ignore_errors=True)
    else:
        raise ValueError(f"unknown target {target!r}")
    paths = []
    for case_id, data in results:
        p = out / f"{case_id}.drcov.log"
        p.write_bytes(data)
        paths.append(p)
    return paths


def blank_runs(k: int = 1, template_html: Optional[str] = None) -> List[CoverageLog]:
    """Coverage of the empty template, ``k`` times (the surrogate is deterministic)."""
    from .generator import DEFAULT_TEMPLATE
    html = template_html if template_html is not None else DEFAULT_TEMPLATE.render([])
    return [coverage_log(html) for _ in range(k)]

