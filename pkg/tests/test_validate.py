import random

import pytest
from hypothesis import given, strategies as st

from neurofuzz.corpus import generate_tag
from neurofuzz.errors import EmptyInput
from neurofuzz.mutation import DEFAULT_LADDER, MutationConfig, mutate_tags
from neurofuzz.validate import (MALFORMED_ATTRIBUTE_SYNTAX, MISMATCHED_CLOSING_TAG,
                                MISSING_CLOSING_DELIMITER, UNKNOWN_ATTRIBUTE_NAME,
                                UNKNOWN_CLOSING_TAG_NAME, UNKNOWN_TAG_NAME, error_count,
                                error_rate, validate_tag)

WAR = ('<war id="id55804" scellcheck="false" tpalleaeck="false" class="style_class_0" '
       'title="50000000"> null</sab>')
P_LINE = '<p id="id38564" lang="mk"> ' + "B" * 40 + "</p>"
HEAD = ('<head id="id240801" sang="al" style="style" class="style_class_0" dir="rtl"> '
        '7500000000</pre>')
TRAINING_LINES = [
    '<h2 id="id0" style="style" spellcheck="false" dir="rtl" title="eval(n1, $)"> 2e100 </h2>',
    '<ul id="id3" style="style" translate="no" contenteditable="true" tabindex="4400000000">'
    ' 4400000000 </ul>',
]


def test_misspelled_tag_and_attributes(grammar):
    r = validate_tag(WAR, grammar)
    assert r.count == 4
    assert sorted(r.kinds()) == sorted([UNKNOWN_TAG_NAME, UNKNOWN_ATTRIBUTE_NAME,
                                        UNKNOWN_ATTRIBUTE_NAME, UNKNOWN_CLOSING_TAG_NAME])
    names = {f.kind: f.detail for f in r.errors if f.kind != UNKNOWN_ATTRIBUTE_NAME}
    assert names == {UNKNOWN_TAG_NAME: "war", UNKNOWN_CLOSING_TAG_NAME: "sab"}


def test_wrong_closing_and_misspelled_attribute(grammar):
    r = validate_tag(HEAD, grammar)
    assert sorted(r.kinds()) == sorted([UNKNOWN_ATTRIBUTE_NAME, MISMATCHED_CLOSING_TAG])
    assert validate_tag(P_LINE, grammar).count == 0
    assert error_rate([P_LINE, HEAD], grammar) == 1.0


def test_training_lines_are_clean(grammar):
    for line in TRAINING_LINES:
        assert validate_tag(line, grammar).count == 0, validate_tag(line, grammar).errors


def test_generated_tags_are_clean(grammar, valid_tags):
    assert error_rate(valid_tags, grammar) == 0.0


@pytest.mark.parametrize("tag,kind", [
    ('<b id=x>t</b>', MALFORMED_ATTRIBUTE_SYNTAX),
    ("<b id='x'>t</b>", MALFORMED_ATTRIBUTE_SYNTAX),
    ('<b id="x"', MISSING_CLOSING_DELIMITER),
    ('<b id="x"> t </b', MISSING_CLOSING_DELIMITER),
    ('<b id="x"> t', MISMATCHED_CLOSING_TAG),
    ('<b id="x"> t </i>', MISMATCHED_CLOSING_TAG),
    ('<b id="x"> t </zzz>', UNKNOWN_CLOSING_TAG_NAME),
    ('<zzz id="x"> t </b>', UNKNOWN_TAG_NAME),
    ('hello', UNKNOWN_TAG_NAME),
])
def test_single_defects(grammar, tag, kind):
    r = validate_tag(tag, grammar)
    assert kind in r.kinds()


def test_nesting_is_not_an_error(grammar):
    assert validate_tag('<b id="x"> <i id="y"> t </i> </b>', grammar).count == 0


def test_void_tags_need_no_closing(grammar):
    void = sorted(grammar.void_tags)[0]
    assert validate_tag(f'<{void} id="x">', grammar).count == 0
    assert MISMATCHED_CLOSING_TAG in validate_tag(f'<{void} id="x"></{void}>', grammar).kinds()


@given(st.text(max_size=200))
def test_total_on_arbitrary_text(grammar, s):
    r = validate_tag(s, grammar)
    assert r.count == len(r.errors) >= 0


@given(st.binary(max_size=200))
def test_total_on_arbitrary_bytes(grammar, b):
    validate_tag(b.decode("utf-8", errors="surrogateescape"), grammar)


@given(st.integers(0, 2**32), st.integers(0, 200), st.text(max_size=4))
def test_total_on_corrupted_valid_tags(grammar, seed, pos, junk):
    tag = generate_tag(grammar, random.Random(seed))
    pos = pos % (len(tag) + 1)
    corrupted = tag[:pos] + junk + tag[pos + len(junk):]
    assert error_count(corrupted, grammar) >= 0


def test_error_rate_needs_input(grammar):
    with pytest.raises(EmptyInput):
        error_rate([], grammar)


def test_error_rate_rises_along_ladder(grammar, alphabet, valid_tags):
    rates = [error_rate(mutate_tags(valid_tags, MutationConfig(p, alphabet, seed=3)), grammar)
             for p in (0.0,) + DEFAULT_LADDER]
    assert rates[0] == 0.0
    # at 51.2% most tags lose their '>' early and the typed count saturates, so
    # the top rung is only reported
    rising = rates[:-1]
    assert all(hi > lo for lo, hi in zip(rising, rising[1:])), rates
    print("error rate by rung:", dict(zip((0.0,) + DEFAULT_LADDER, rates)))
