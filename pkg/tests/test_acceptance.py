"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``ACCEPTANCE <n> PASS|FAIL ...`` line, printed
together in the "acceptance criteria" section of the pytest terminal summary.  Criteria 4, 6 and 7 share two full executions of
the bundled desk config, which dominate the runtime.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from neurofuzz import layout, nn
from neurofuzz.analysis import error_rate
from neurofuzz.corpus import default_grammar, generate_corpus
from neurofuzz.coverage import (block_set, make_log, overlap, parse_drcov, similarity_matrix,
                                union_blocks, write_drcov)
from neurofuzz.experiment import artifact_hashes, load_config
from neurofuzz.generator import read_tags, sample_tags
from neurofuzz.mutation import MutationConfig, ladder_label, mutate_counted
from neurofuzz.seeding import derive_seed
from neurofuzz.seqdata import build_alphabet
from neurofuzz.surrogate import default_block_map
from neurofuzz.training import load_checkpoint, read_history_csv
from neurofuzz.validate import MISMATCHED_CLOSING_TAG, UNKNOWN_ATTRIBUTE_NAME, validate_tag

from desk import ACCEPTANCE_LINES, COVERAGE_STAGES, untrained_like
from drcov_fixtures import naive_block_set, random_log
from gradcheck import grad_check

CRITERION_4_RUN = "gru-l2-s0-r0"


def report(n: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print("\n" + line)
    assert ok, detail


def test_criterion_1_parameter_counts():
    lstm = nn.count_parameters(nn.ModelConfig(nn.LSTM, 6, 256, 107))
    gru = nn.count_parameters(nn.ModelConfig(nn.GRU, 6, 256, 107))
    report(1, (lstm, gru) == (3_026_795, 2_276_971), f"LSTM {lstm:,}, GRU {gru:,}")


def test_criterion_2_validator_calibration():
    g = default_grammar()
    war = validate_tag('<war id="id55804" scellcheck="false" tpalleaeck="false" '
                       'class="style_class_0" title="50000000"> null</sab>', g)
    head = validate_tag('<head id="id240801" sang="al" style="style" class="style_class_0" '
                        'dir="rtl"> 7500000000</pre>', g)
    ok = (war.count == 4 and war.kinds().count(UNKNOWN_ATTRIBUTE_NAME) == 2
          and sorted(head.kinds()) == sorted([UNKNOWN_ATTRIBUTE_NAME, MISMATCHED_CLOSING_TAG]))
    report(2, ok, f"{war.kinds()} / {head.kinds()}")


def test_criterion_3_gradient_check():
    t0 = time.perf_counter()
    worst = {}
    for cell in (nn.LSTM, nn.GRU):
        for depth in (1, 2, 3):
            worst[(cell, depth)] = grad_check(cell, depth, s=8, I=8, T=8, B=2, eps=1e-5)
    top = max(worst.values())
    secs = time.perf_counter() - t0
    report(3, top < 1e-4 and secs < 60,
           f"max relative error {top:.2e} over {len(worst)} configs in {secs:.1f}s")


def test_criterion_4_learning_progress(desk_runs):
    root = desk_runs[0][0]
    cfg = load_config(None)
    g = default_grammar()
    rows = read_history_csv(root / layout.CHECKPOINTS / CRITERION_4_RUN / "history.csv")
    hist = [float(r["val_loss"]) for r in rows]
    train_secs = sum(float(r["seconds"]) for r in rows)
    decreasing = len(hist) == 5 and all(b < a for a, b in zip(hist, hist[1:]))

    trained = error_rate(read_tags(root / layout.SAMPLES / CRITERION_4_RUN / "tags.txt"), g)
    cp = load_checkpoint(root / layout.CHECKPOINTS / CRITERION_4_RUN / "model.nfz")
    assert (cp.model_cfg.cell_type, cp.model_cfg.layers, cp.model_cfg.hidden_size) == ("gru", 2, 64)
    untrained_cp = untrained_like(cp)
    s = cfg.sampling
    untrained_tags = sample_tags(untrained_cp, s.n_tags,
                                 derive_seed(cfg.seed, "sample-untrained", CRITERION_4_RUN),
                                 s.max_len, s.temperature, s.streams).tags
    untrained = error_rate(untrained_tags, g)
    size = s.case_sizes[0]
    mutated = read_tags(root / layout.CASES / f"mutation-{ladder_label(0.256)}_{size}" / "tags.txt")
    mutation = error_rate(mutated, g)
    corpus_bytes = (root / layout.CORPUS / "corpus.txt").stat().st_size
    ok = (decreasing and trained < untrained and trained < mutation and train_secs <= 900
          and len(untrained_tags) == 1024 and len(mutated) == 1024 and corpus_bytes >= 1_000_000)
    report(4, ok, f"val loss {[round(v, 4) for v in hist]}; error rate trained {trained:.3f} "
                  f"< untrained {untrained:.3f} and mutation(25.6%) {mutation:.3f}; "
                  f"corpus {corpus_bytes:,} bytes; trained in {train_secs:.0f}s")


def _set_blocks(root: Path, name: str, baseline, module: str):
    logs = sorted((root / layout.COVERAGE / name).glob("*.drcov.log"))
    return union_blocks(block_set(parse_drcov(p.read_bytes()), module) for p in logs) - baseline


def test_criterion_6_coverage_claims(desk_runs):
    root, stage_secs = desk_runs[0][0], desk_runs[2]
    t0 = time.perf_counter()
    bmap = default_block_map()
    module = bmap.module
    blank = union_blocks(block_set(parse_drcov(p.read_bytes()), module)
                         for p in (root / layout.COVERAGE / layout.BLANK).glob("*.drcov.log"))
    err = {(module, o) for o in bmap.error_offsets()}
    sets = {}
    for man in sorted((root / layout.CASES).glob("*/manifest.json")):
        kind = layout.read_json(man)["provenance"]["kind"]
        sets[man.parent.name] = (kind, _set_blocks(root, man.parent.name, blank, module))
    by_kind = lambda k: {n: b for n, (kk, b) in sets.items() if kk == k}
    dataset_union = union_blocks(by_kind("dataset").values())
    models, mutations, datasets = by_kind("model"), by_kind("mutation"), by_kind("dataset")
    novel = {n: len(b - dataset_union) for n, b in models.items()}
    ok = (bool(models) and bool(mutations) and bool(datasets)
          and all(v >= 1 for v in novel.values())
          and all(not (b & err) for b in datasets.values())
          and all(b & err for b in models.values())
          and all(b & err for b in mutations.values()))
    # cases, target runs, reports and these checks; training is budgeted by criterion 4
    secs = time.perf_counter() - t0 + sum(stage_secs[k] for k in COVERAGE_STAGES)
    report(6, ok and secs <= 300,
           f"{len(models)} model sets, novel blocks vs dataset union min {min(novel.values())} "
           f"max {max(novel.values())}; error blocks: dataset "
           f"{max(len(b & err) for b in datasets.values())}, model min "
           f"{min(len(b & err) for b in models.values())}, mutation min "
           f"{min(len(b & err) for b in mutations.values())}; {secs:.1f}s")


def test_criterion_5_coverage_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    round_trip = 0
    for _ in range(100):
        data = write_drcov(random_log(rng))
        round_trip += write_drcov(parse_drcov(data)) == data
    agree = True
    for n in (10, 1000, 100_000):
        a = random_log(rng, max_blocks=0)
        mods = [(m.path, m.base, m.end) for m in a.modules]
        logs = []
        for _ in range(3):
            offs = rng.integers(0, n // 2 + 1, n).tolist()
            mids = rng.integers(0, len(mods), n).tolist()
            logs.append(make_log(mods, zip(offs, [4] * n, mids)))
        naive = [naive_block_set(log) for log in logs]
        fast = [block_set(log) for log in logs]
        agree &= all(x == y for x, y in zip(naive, fast))
        diff = (naive[1] | naive[2]) - naive[0]
        agree &= (union_blocks(fast[1:]) - fast[0]) == diff
        inter = sum(1 for x in naive[1] if x in naive[2])
        ov = overlap(fast[1], fast[2])
        agree &= math.isclose(ov["jaccard"], inter / len(naive[1] | naive[2]), rel_tol=0, abs_tol=0)
        agree &= math.isclose(ov["containment_ab"], inter / len(naive[1]), rel_tol=0, abs_tol=0)
        _, mat = similarity_matrix({str(i): f for i, f in enumerate(fast)})
        agree &= mat[1, 2] == ov["jaccard"] and mat[2, 1] == ov["jaccard"]
    secs = time.perf_counter() - t0
    report(5, round_trip == 100 and agree and secs < 60,
           f"{round_trip}/100 byte-identical round trips; set algebra agrees up to 1e5 blocks; "
           f"{secs:.1f}s")


def test_criterion_7_determinism(desk_runs):
    (a, b), seconds, _ = desk_runs
    ha, hb = artifact_hashes(a), artifact_hashes(b)
    differing = sorted(k for k in set(ha) | set(hb) if ha.get(k) != hb.get(k))
    # the runtime budget is twice the 15 minute budget of criterion 4
    report(7, not differing and len(ha) > 100 and max(seconds) <= 1800,
           f"{len(ha)} artifacts compared, {len(differing)} differ {differing[:5]}; "
           f"pipeline took {seconds[0]:.0f}s and {seconds[1]:.0f}s")


def test_criterion_8_mutation_statistics():
    alphabet = build_alphabet(generate_corpus(default_grammar(), 2000, seed=1).text)
    chars = [c for c in alphabet.chars if c != "\n"]
    text = "".join(np.random.default_rng(8).choice(chars, size=10**6))
    n, p = len(text), 0.016
    _, draws = mutate_counted(text, MutationConfig(p, alphabet, seed=2024))
    sigma = math.sqrt(n * p * (1 - p))
    same, zero_draws = mutate_counted(text, MutationConfig(0.0, alphabet, seed=2024))
    ok = abs(draws - n * p) < 3 * sigma and same == text and zero_draws == 0
    report(8, ok, f"{draws} draws vs expected {n * p:.0f} +- {3 * sigma:.0f} (3 sigma); "
                  f"p=0 identity {same == text}")
