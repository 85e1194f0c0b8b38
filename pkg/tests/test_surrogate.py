import random
import shutil
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neurofuzz.corpus import default_grammar, generate_tag
from neurofuzz.coverage import block_set, parse_drcov
from neurofuzz.errors import NoLogProduced, SpawnFailed, TargetTimeout
from neurofuzz.generator import (DEFAULT_TEMPLATE, TEMPLATE_HEAD, TEMPLATE_TAIL, assemble_case,
                                 make_case_sets)
from neurofuzz.mutation import MutationConfig, mutate_text
from neurofuzz.surrogate import (DATA, MODULE_NAME, STATES, blank_runs, default_block_map,
                                 hit_arms, is_boundary_arm, is_error_arm, run_case, run_external,
                                 run_target, run_tokenizer, tokenize_instrumented)
from neurofuzz.validate import validate_tag

BLANK_GOLDEN = frozenset([
    "afterval:gt", "attr:charset", "attrname:equals", "attrname:run", "attrval:charset:other",
    "attrvalue:close", "attrvalue:quoted", "data:lt", "data:text", "doctype:html", "end:body",
    "end:head", "end:html", "endtagname:run", "entry", "eof", "eof:clean", "head:meta",
    "markup:doctype", "start:body", "start:head", "start:html", "tag:attrs-0", "tag:attrs-1",
    "tag:emit-end", "tag:emit-start", "tag:ws", "tagname:run", "tagopen:bang", "tagopen:letter",
    "tagopen:solidus", "tree:body-close", "tree:body-open", "tree:doctype", "tree:head-close",
    "tree:head-open", "tree:html-close", "tree:html-open", "tree:newline",
    "tree:whitespace-after-body", "void:meta",
])
BLANK_MAP_DIGEST = "d315c58ac5e2da1c583c180eb0dc2cf804605881057fa18bda6b42d8cf20eeae"


def body(html: str) -> str:
    return TEMPLATE_HEAD + html + TEMPLATE_TAIL


def test_block_map_shape():
    bmap = default_block_map()
    assert len(bmap.arms) >= 256
    offs = [bmap.offset(a) for a in bmap.arms]
    assert len(set(offs)) == len(offs)
    assert offs[0] == 0x1000 and all(b - a == 16 for a, b in zip(offs, offs[1:]))
    assert bmap.arm_at(offs[5]) == bmap.arms[5]
    assert bmap.digest() == BLANK_MAP_DIGEST


def test_empty_input_hits_only_boundary_arms():
    arms = hit_arms(b"")
    assert "entry" in arms and "eof" in arms
    assert all(is_boundary_arm(a) for a in arms)


def test_simple_tag_arms():
    arms = hit_arms(b'<b id="x">t</b>')
    for need in ["tagopen:letter", "start:b", "attr:id", "attrvalue:quoted", "data:text",
                 "end:b", "tree:pop-match"]:
        assert need in arms
    assert not any(is_error_arm(a) for a in hit_arms(body('<b id="x">t</b>\n')))


def test_broken_tag_reaches_recovery_arms():
    good = hit_arms(b'<b id="x">t</b>')
    bad = hit_arms(b"<war x=1></sab>")
    new = bad - good
    assert {"err:unknown-tag", "err:unknown-end-tag", "err:unquoted-attr-value"} <= new


def test_blank_golden_and_determinism():
    blank = DEFAULT_TEMPLATE.render([])
    assert hit_arms(blank) == BLANK_GOLDEN
    assert run_case(blank) == run_case(blank)
    logs = blank_runs(3)
    assert block_set(logs[0]) == block_set(logs[2])


def test_known_vs_unknown_tag_differ():
    a = parse_drcov(run_case(assemble_case(['<b id="x"> t </b>'])))
    b = parse_drcov(run_case(assemble_case(['<zz id="x"> t </zz>'])))
    assert block_set(a) != block_set(b)
    assert a.modules[0].path == MODULE_NAME


@given(st.binary(max_size=300))
def test_total_on_random_bytes(data):
    tokens, state = run_tokenizer(data)
    assert state.state in STATES
    bmap = default_block_map()
    assert state.hit_blocks <= set(bmap.arms)
    log = parse_drcov(run_case(data))
    assert len(log.bbs) == len(state.hit_blocks)


def test_total_on_many_random_strings():
    # a large cheap sweep of short inputs biased toward markup characters
    rng = np.random.default_rng(0)
    alphabet = np.array(list('<>/="\' &;#!-?abAZ09\n\t\x00é'))
    domain = set(default_block_map().arms)
    for _ in range(20000):
        s = "".join(rng.choice(alphabet, size=int(rng.integers(0, 40))))
        assert hit_arms(s) <= domain


GRAMMAR = default_grammar()
tag_lines = st.integers(0, 2**32).map(lambda s: generate_tag(GRAMMAR, random.Random(s)))


def noisy_lines(alphabet_chars):
    return st.tuples(tag_lines, st.floats(0, 0.3), st.integers(0, 2**32)).map(
        lambda t: mutate_text(t[0], MutationConfig(t[1], alphabet_chars, t[2])))


@given(st.data())
def test_prefix_monotone_at_line_boundary(alphabet, data):
    lines = data.draw(st.lists(noisy_lines(alphabet), min_size=1, max_size=4))
    # text runs merge across the cut, so the continuation starts with markup
    rest = "<" + data.draw(st.text(max_size=60))
    a = "".join(l + "\n" for l in lines)
    tokens, state = run_tokenizer(a)
    if state.state != DATA:
        return
    strip = lambda arms: {x for x in arms if not is_boundary_arm(x)}
    assert strip(hit_arms(a)) <= hit_arms(a + rest)


@given(st.data())
def test_suffix_monotone_after_balanced_prefix(alphabet, data):
    prefix = data.draw(st.lists(tag_lines, min_size=1, max_size=3))
    suffix = data.draw(st.lists(noisy_lines(alphabet), min_size=1, max_size=3))
    a = "".join(l + "\n" for l in prefix)
    _, st_head = run_tokenizer(TEMPLATE_HEAD)
    _, st_a = run_tokenizer(TEMPLATE_HEAD + a)
    if st_a.stack != st_head.stack or st_a.state != DATA:
        return  # the prefix left elements open, so the suffix sees a different tree
    b = "".join(l + "\n" for l in suffix)
    strip = lambda arms: {x for x in arms if not is_boundary_arm(x)}
    assert strip(hit_arms(body(b))) <= hit_arms(body(a + b))


def test_validator_consistency(grammar, valid_tags, alphabet):
    for tag in valid_tags[:300]:
        assert not any(is_error_arm(x) for x in hit_arms(body(tag + "\n"))), tag
    rng = random.Random(1)
    flagged = 0
    for tag in valid_tags:
        bad = mutate_text(tag, MutationConfig(0.05, alphabet, rng.randrange(2**32)))
        if validate_tag(bad, grammar).count:
            flagged += 1
            assert any(is_error_arm(x) for x in hit_arms(body(bad + "\n"))), bad
    assert flagged > 100


def test_tokenize_instrumented_blocks_match_arms():
    tokens, blocks = tokenize_instrumented('<b id="x">t</b>')
    bmap = default_block_map()
    assert blocks == bmap.blocks(hit_arms('<b id="x">t</b>'))
    assert tokens


@pytest.fixture
def fixture_log(tmp_path):
    p = tmp_path / "fixture.drcov.log"
    p.write_bytes(run_case(assemble_case(['<b id="x"> t </b>'])))
    return p


def test_run_external_copy(tmp_path, fixture_log):
    case = tmp_path / "case.html"
    case.write_text("<b>")
    cp = shutil.which("cp")
    cmd = f"sh -c '{cp} {fixture_log} \"$0\"/drcov.target.1.log' {{out}} {{case}}"
    log, data = run_external(cmd, case, tmp_path / "out", timeout=10)
    assert data == fixture_log.read_bytes()
    assert log.modules[0].path == MODULE_NAME


def test_run_external_failures(tmp_path):
    case = tmp_path / "case.html"
    case.write_text("<b>")
    with pytest.raises((SpawnFailed, NoLogProduced)):
        run_external("false {case}", case, tmp_path / "o1", timeout=10)
    with pytest.raises(SpawnFailed):
        run_external("/nonexistent/binary {case}", case, tmp_path / "o2", timeout=10)
    with pytest.raises(SpawnFailed):
        run_external("cat", case, tmp_path / "o3", timeout=10)
    script = ("import sys,time,pathlib; "
              "pathlib.Path(sys.argv[1],'drcov.partial.log').write_text('x'); time.sleep(30)")
    out = tmp_path / "o4"
    with pytest.raises(TargetTimeout):
        run_external(f"{sys.executable} -c \"{script}\" {{out}} {{case}}", case, out, timeout=1)
    assert not list(out.glob("*drcov*"))


def test_run_target_surrogate_and_external(tmp_path, valid_tags):
    (cs,) = make_case_sets(valid_tags[:16], (8,), prefix="dataset")
    cdir = cs.write(tmp_path / "cases")
    paths = run_target(cs, cdir, tmp_path / "cov", jobs=1)
    assert [p.name for p in paths] == [f"{c.id}.drcov.log" for c in cs.cases]
    for p, c in zip(paths, cs.cases):
        assert p.read_bytes() == run_case(c)
    par = run_target(cs, cdir, tmp_path / "cov2", jobs=2)
    assert [p.read_bytes() for p in par] == [p.read_bytes() for p in paths]
    # an external target that simply runs the surrogate through the CLI module
    script = ("import sys,pathlib; from neurofuzz.surrogate import run_case; "
              "pathlib.Path(sys.argv[2],'drcov.x.log').write_bytes("
              "run_case(pathlib.Path(sys.argv[1]).read_bytes()))")
    ext = run_target(cs, cdir, tmp_path / "cov3", target="external",
                     cmd=f"{sys.executable} -c \"{script}\" {{case}} {{out}}", jobs=2)
    assert [p.read_bytes() for p in ext] == [p.read_bytes() for p in paths]
    with pytest.raises(ValueError):
        run_target(cs, cdir, tmp_path / "cov4", target="bogus")
