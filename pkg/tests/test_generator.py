import numpy as np
import pytest

from neurofuzz import nn
from neurofuzz.errors import MaxLenExceeded, NotDivisible, RetryBudgetExhausted
from neurofuzz.generator import (DEFAULT_TEMPLATE, TEMPLATE_HEAD, TEMPLATE_TAIL, CaseSet,
                                 assemble_case, make_case_sets, read_tags, sample_tag,
                                 sample_tags)
from neurofuzz.seqdata import Alphabet
from neurofuzz.training import Checkpoint, TrainConfig


def successor_checkpoint(successor, cell=nn.GRU):
    """A one-layer model that deterministically emits ``successor[c]`` after ``c``."""
    alpha = Alphabet(sorted(successor))
    I = alpha.size
    cfg = nn.ModelConfig(cell, 1, I, I, dropout_prob=0.0)
    m = nn.Model.zeros(cfg, dtype=np.float64)
    W, b = m.layer(0)
    if cell == nn.GRU:
        b[:I] = 50.0                      # z -> 1: h is the candidate
        W[:I, 2 * I:] = 10 * np.eye(I)    # candidate encodes the current input
    else:
        b[:I] = 50.0                      # input gate open
        b[2 * I:3 * I] = 50.0             # output gate open
        b[I:2 * I] = -50.0                # forget gate shut
        W[:I, 3 * I:] = 10 * np.eye(I)
    for c, nxt in successor.items():
        m.params["out.W"][alpha.index_of[c], alpha.index_of[nxt]] = 100.0
    return Checkpoint(m, alpha, TrainConfig())


B_TAG = {"<": "b", "b": ">", ">": "\n", "\n": "<"}


@pytest.mark.parametrize("cell", [nn.GRU, nn.LSTM])
def test_degenerate_model_always_emits_b(cell):
    cp = successor_checkpoint(B_TAG, cell)
    rng = np.random.default_rng(0)
    assert {sample_tag(cp, rng) for _ in range(20)} == {"<b>"}
    assert sample_tags(cp, 37, seed=1, streams=8).tags == ["<b>"] * 37


def test_max_len_exceeded_is_flagged():
    cp = successor_checkpoint({"<": "b", "b": "b", "\n": "<"})
    with pytest.raises(MaxLenExceeded) as exc:
        sample_tag(cp, np.random.default_rng(0), max_len=6)
    assert exc.value.partial.startswith("<bbb")
    with pytest.raises(RetryBudgetExhausted):
        sample_tags(cp, 4, seed=0, max_len=6, retry_budget=10)


@pytest.fixture(scope="module")
def random_cp(alphabet):
    cfg = nn.ModelConfig(nn.GRU, 2, 16, alphabet.size)
    return Checkpoint(nn.Model.init(cfg, np.random.default_rng(3)), alphabet, TrainConfig())


def test_sample_tags_count_and_determinism(random_cp):
    a = sample_tags(random_cp, 100, seed=4, streams=16)
    b = sample_tags(random_cp, 100, seed=4, streams=16)
    assert len(a.tags) == 100
    assert a.tags == b.tags and a.discarded == b.discarded
    assert all(t.startswith("<") and "\n" not in t for t in a.tags)
    assert sample_tags(random_cp, 100, seed=5, streams=16).tags != a.tags
    assert sample_tags(random_cp, 0, seed=4).tags == []


def test_sample_tag_same_seed_same_tag(random_cp):
    t1 = sample_tag(random_cp, np.random.default_rng(9))
    t2 = sample_tag(random_cp, np.random.default_rng(9))
    assert t1 == t2


def test_long_samples_are_discarded(random_cp):
    res = sample_tags(random_cp, 64, seed=2, max_len=8, streams=8, retry_budget=10**6)
    assert len(res.tags) == 64
    assert all(len(t) <= 8 for t in res.tags)
    assert res.discarded > 0


def test_temperature_must_be_positive(random_cp):
    with pytest.raises(ValueError):
        sample_tags(random_cp, 4, seed=0, temperature=0.0)


def test_blank_case_is_template():
    case = assemble_case([])
    assert case.rendered_html == TEMPLATE_HEAD + TEMPLATE_TAIL
    assert case.rendered_html == DEFAULT_TEMPLATE.render([])


def test_two_tags_in_order():
    html = assemble_case(["<b>", "<i>"]).rendered_html
    body = html[len(TEMPLATE_HEAD):-len(TEMPLATE_TAIL)]
    assert body.index("<b>") < body.index("<i>")
    assert body == "<b>\n<i>\n"
    with pytest.raises(ValueError):
        assemble_case(["<b>\n"])


def test_case_set_sizes():
    tags = [f"<b id=\"{i}\">" for i in range(16384)]
    s128, s256 = make_case_sets(tags, (128, 256))
    assert (len(s128.cases), s128.tags_per_case) == (128, 128)
    assert (len(s256.cases), s256.tags_per_case) == (64, 256)
    assert make_case_sets(tags[:256], (256,))[0].cases[0].tags == tags[:256]
    with pytest.raises(NotDivisible):
        make_case_sets(tags[:100], (128,))


def test_case_set_write_read(tmp_path, valid_tags):
    (cs,) = make_case_sets(valid_tags[:256], (128,), provenance={"kind": "dataset"},
                           prefix="dataset")
    d = cs.write(tmp_path / cs.name)
    back = CaseSet.read(d)
    assert back.manifest() == cs.manifest()
    assert [c.rendered_html for c in back.cases] == [c.rendered_html for c in cs.cases]
    assert read_tags(d / "tags.txt") == valid_tags[:256]
