import random
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neurofuzz.corpus import default_grammar, generate_corpus, generate_tag
from neurofuzz.seqdata import build_alphabet

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grammar():
    return default_grammar()


@pytest.fixture(scope="session")
def small_corpus(grammar):
    return generate_corpus(grammar, 2000, seed=7)


@pytest.fixture(scope="session")
def alphabet(small_corpus):
    return build_alphabet(small_corpus.text)


@pytest.fixture(scope="session")
def valid_tags(grammar):
    rng = random.Random(11)
    return [generate_tag(grammar, rng) for _ in range(1024)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    """Two executions of the desk config with the same seed.

    The first goes stage by stage so per-stage wall time is known; the second
    is a single run-all.  Returns (roots, total seconds, per-stage seconds).
    """
    from desk import run_stages
    from neurofuzz.cli import main

    first = tmp_path_factory.mktemp("desk0") / "run"
    stage_secs = run_stages(first)
    second = tmp_path_factory.mktemp("desk1") / "run"
    t0 = time.perf_counter()
    assert main(["run-all", "--out", str(second)]) == 0
    return (first, second), (sum(stage_secs.values()), time.perf_counter() - t0), stage_secs


def pytest_terminal_summary(terminalreporter):
    from desk import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
