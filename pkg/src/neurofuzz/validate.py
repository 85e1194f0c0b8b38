"""Typed structural checks of single HTML tag lines against a grammar.

The error rate of a tag collection is the mean number of findings per tag.
Calibration points::

    <war id="id55804" scellcheck="false" tpalleaeck="false" class="style_class_0" title="50000000"> null</sab>
        -> UnknownTagName, UnknownAttributeName x2, UnknownClosingTagName
    <head id="id240801" sang="al" style="style" class="style_class_0" dir="rtl"> 7500000000</pre>
        -> UnknownAttributeName, MismatchedClosingTag

Inner text is never inspected, so a model that nests a complete tag inside
another one is not penalised.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, List, Optional

from .corpus import TagGrammar
from .errors import EmptyInput

UNKNOWN_TAG_NAME = "UnknownTagName"
UNKNOWN_ATTRIBUTE_NAME = "UnknownAttributeName"
MALFORMED_ATTRIBUTE_SYNTAX = "MalformedAttributeSyntax"
MISMATCHED_CLOSING_TAG = "MismatchedClosingTag"
MISSING_CLOSING_DELIMITER = "MissingClosingDelimiter"
UNKNOWN_CLOSING_TAG_NAME = "UnknownClosingTagName"

WS = " \t\n\f\r"
_TAG_NAME = re.compile(r"<([^ \t\n\f\r>/]*)")
_ATTR = re.compile(r'([^ \t\n\f\r=>"\'</]+)="([^"]*)"')
_ATTR_NAME = re.compile(r'[^ \t\n\f\r=>"\'</]*')
_CLOSE = re.compile(r"</([^ \t\n\f\r/>]*)[ \t\n\f\r]*(>?)")


@dataclass(frozen=True)
class Finding:
    kind: str
    detail: str = ""


@dataclass
class TagErrorReport:
    tag: str
    errors: List[Finding] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.errors)

    def kinds(self) -> List[str]:
        return [e.kind for e in self.errors]


def validate_tag(tag: str, grammar: TagGrammar) -> TagErrorReport:
    """Check one tag line; never raises on arbitrary input."""
    report = TagErrorReport(tag)
    err = report.errors
    s = tag
    known_tags = grammar.tag_set
    known_attrs = grammar.attribute_names

    if not s.startswith("<"):
        err.append(Finding(UNKNOWN_TAG_NAME, ""))
        first = s.find("<")
        if first < 0:
            return report
        s = s[first:]

    m = _TAG_NAME.match(s)
    name = m.group(1)
    opening_known = name in known_tags
    if not opening_known:
        err.append(Finding(UNKNOWN_TAG_NAME, name))
    pos = m.end()
    n = len(s)

    closed = False
    while pos < n:
        while pos < n and s[pos] in WS:
            pos += 1
        if pos >= n:
            break
        ch = s[pos]
        if ch == ">":
            pos += 1
            closed = True
            break
        am = _ATTR.match(s, pos)
        if am:
            if am.group(1) not in known_attrs:
                err.append(Finding(UNKNOWN_ATTRIBUTE_NAME, am.group(1)))
            pos = am.end()
            if pos < n and s[pos] not in WS and s[pos] != ">":
                err.append(Finding(MALFORMED_ATTRIBUTE_SYNTAX, "missing whitespace after value"))
            continue
        # malformed attribute: report the name if it is misspelled, then resynchronise
        nm = _ATTR_NAME.match(s, pos)
        attr_name = nm.group(0)
        if attr_name and attr_name not in known_attrs:
            err.append(Finding(UNKNOWN_ATTRIBUTE_NAME, attr_name))
        err.append(Finding(MALFORMED_ATTRIBUTE_SYNTAX, attr_name or s[pos]))
        pos = _skip_malformed(s, nm.end())

    if not closed:
        err.append(Finding(MISSING_CLOSING_DELIMITER, "start tag"))
        return report

    rest = s[pos:]
    idx = rest.rfind("</")
    is_void = name in grammar.void_tags
    if idx < 0:
        if opening_known and not is_void:
            err.append(Finding(MISMATCHED_CLOSING_TAG, ""))
        return report
    cm = _CLOSE.match(rest, idx)
    close_name, gt = cm.group(1), cm.group(2)
    if not gt:
        err.append(Finding(MISSING_CLOSING_DELIMITER, "end tag"))
    if close_name not in known_tags:
        err.append(Finding(UNKNOWN_CLOSING_TAG_NAME, close_name))
    elif opening_known and (is_void or close_name != name):
        err.append(Finding(MISMATCHED_CLOSING_TAG, close_name))
    return report


def _skip_malformed(s: str, pos: int) -> int:
    n = len(s)
    start = pos
    if pos < n and s[pos] == "=":
        pos += 1
    if pos < n and s[pos] in "\"'":
        q = s[pos]
        end = s.find(q, pos + 1)
        return n if end < 0 else end + 1
    while pos < n and s[pos] not in WS and s[pos] != ">":
        pos += 1
    if pos == start:
        pos += 1
    return pos


def error_count(tag: str, grammar: TagGrammar) -> int:
    return validate_tag(tag, grammar).count


def error_rate(tags: Iterable[str], grammar: TagGrammar) -> float:
    """Mean number of findings per tag."""
    counts = [validate_tag(t, grammar).count for t in tags]
    if not counts:
        raise EmptyInput("error_rate needs at least one tag")
    return sum(counts) / len(counts)
