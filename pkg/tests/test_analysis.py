import csv

import pytest

from neurofuzz import layout
from neurofuzz.analysis import aggregate, fmt, mean_std
from neurofuzz.coverage import block_set, parse_drcov
from neurofuzz.errors import MissingArtifacts
from neurofuzz.generator import DEFAULT_TEMPLATE, make_case_sets
from neurofuzz.surrogate import MODULE_NAME, default_block_map, run_case
from neurofuzz.training import write_history_csv

# final validation loss per (cell, depth, split); means are checked by hand below
FINAL = {("gru", 1, 0): 1.0, ("gru", 1, 1): 2.0, ("gru", 2, 0): 0.5, ("gru", 2, 1): 0.75,
         ("lstm", 1, 0): 3.0, ("lstm", 1, 1): 3.0, ("lstm", 2, 0): 1.25, ("lstm", 2, 1): 0.25}

GOOD = ['<b id="a1"> x </b>', '<i dir="rtl"> y </i>', '<p title="t"> z </p>', '<br id="q">']
BROKEN = ['<war x=1> x </sab>', '<b id="a1"> x </i>', '<zz> q', '<p title="t"> z </p>']


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def experiment(tmp_path):
    root = tmp_path / "exp"
    for (cell, depth, split), final in FINAL.items():
        name = f"{cell}-l{depth}-s{split}-r0"
        d = root / layout.CHECKPOINTS / name
        d.mkdir(parents=True)
        write_history_csv([
            {"epoch": 1, "train_loss": 9.0, "val_loss": final + 1, "lr": 0.01, "seconds": 1.0},
            {"epoch": 2, "train_loss": 8.0, "val_loss": final, "lr": 0.01, "seconds": 1.0},
        ], d / "history.csv")
        layout.write_json(d / "run.json", {"cell": cell, "depth": depth, "split": split,
                                           "restart": 0, "name": name})
    sets = make_case_sets(GOOD, (2, 4), {"kind": "dataset"}, prefix="dataset")
    sets += make_case_sets(BROKEN, (2, 4), {"kind": "model", "cell": "gru", "depth": 1},
                           prefix="model-gru-l1-s0-r0")
    sets += make_case_sets(BROKEN[:2] + GOOD[:2], (2,), {"kind": "mutation", "probability": 0.25},
                           prefix="mutation-p25")
    cov = root / layout.COVERAGE
    (cov / layout.BLANK).mkdir(parents=True)
    (cov / layout.BLANK / "blank_0000.drcov.log").write_bytes(run_case(DEFAULT_TEMPLATE.render([])))
    for cs in sets:
        cs.write(root / layout.CASES / cs.name)
        (cov / cs.name).mkdir()
        for c in cs.cases:
            (cov / cs.name / f"{c.id}.drcov.log").write_bytes(run_case(c))
    layout.write_json(cov / layout.TARGET_FILE, {"kind": "surrogate", "module_filter": MODULE_NAME})
    return root


def test_val_loss_table(experiment):
    aggregate(experiment)
    rows = read_csv(experiment / layout.REPORTS / "val_loss_by_depth.csv")
    assert [(r["cell"], r["depth"]) for r in rows] == [("gru", "1"), ("gru", "2"),
                                                      ("lstm", "1"), ("lstm", "2")]
    expected_mean = [1.5, 0.625, 3.0, 0.75]
    expected_std = [0.5, 0.125, 0.0, 0.5]
    for r, m, s in zip(rows, expected_mean, expected_std):
        assert float(r["mean_val_loss"]) == m and float(r["std_val_loss"]) == s
        assert r["n_runs"] == "2"


def test_error_rates_and_coverage(experiment, grammar):
    paths = aggregate(experiment, grammar)
    assert sorted(p.name for p in paths.values()) == sorted(layout.REPORT_FILES)
    rates = {(r["kind"], r["probability"]): r for r in
             read_csv(experiment / layout.REPORTS / "error_rate_by_depth.csv")}
    assert float(rates[("dataset", "")]["mean_error_rate"]) == 0.0
    assert float(rates[("mutation", "0.25")]["mean_error_rate"]) > 0
    unique = {r["set"]: r for r in read_csv(experiment / layout.REPORTS / "unique_blocks.csv")}
    assert unique["dataset_2"]["error_blocks"] == "0"
    assert int(unique["model-gru-l1-s0-r0_2"]["error_blocks"]) > 0
    # one dataset set per case size, so each band collapses to that set
    for k in ("2", "4"):
        band = unique[f"dataset_{k}"]["unique_blocks"]
        assert unique[f"model-gru-l1-s0-r0_{k}"]["dataset_band_min"] == band
        assert unique[f"model-gru-l1-s0-r0_{k}"]["dataset_band_max"] == band
    diff = {r["set"]: r for r in read_csv(experiment / layout.REPORTS / "diff_to_best.csv")}
    assert set(diff) == {"model-gru-l1-s0-r0_2", "model-gru-l1-s0-r0_4", "mutation-p25_2"}
    assert int(diff["model-gru-l1-s0-r0_4"]["novel_blocks"]) > 0
    sim = read_csv(experiment / layout.REPORTS / "similarity.csv")
    assert [r["source"] for r in sim] == ["model-gru-l1-s0-r0", "dataset"]
    assert float(sim[0]["model-gru-l1-s0-r0"]) == 1.0
    ov = read_csv(experiment / layout.REPORTS / "overlaps.csv")
    assert len(ov) == 3  # three sources, every unordered pair


def test_unique_blocks_match_naive_recount(experiment):
    aggregate(experiment)
    cov = experiment / layout.COVERAGE
    blank = block_set(parse_drcov((cov / "blank" / "blank_0000.drcov.log").read_bytes()))
    unique = {r["set"]: int(r["unique_blocks"])
              for r in read_csv(experiment / layout.REPORTS / "unique_blocks.csv")}
    for name, count in unique.items():
        hit = set()
        for p in (cov / name).glob("*.drcov.log"):
            hit |= block_set(parse_drcov(p.read_bytes()))
        assert count == len(hit - blank)
    err = {(default_block_map().module, o) for o in default_block_map().error_offsets()}
    assert not err & blank


def test_rerun_is_identical(experiment):
    aggregate(experiment)
    first = {n: (experiment / layout.REPORTS / n).read_bytes() for n in layout.REPORT_FILES}
    aggregate(experiment)
    assert first == {n: (experiment / layout.REPORTS / n).read_bytes() for n in layout.REPORT_FILES}


def test_missing_artifacts(tmp_path, experiment):
    with pytest.raises(MissingArtifacts) as exc:
        aggregate(tmp_path / "empty")
    assert len(exc.value.missing) == 3
    victim = next((experiment / layout.COVERAGE / "dataset_2").glob("*.drcov.log"))
    victim.unlink()
    with pytest.raises(MissingArtifacts) as exc:
        aggregate(experiment)
    assert any("dataset_2" in m for m in exc.value.missing)


def test_mean_std_and_fmt():
    assert mean_std([1.0, 2.0, 3.0, 4.0]) == (2.5, pytest.approx(1.118033988749895, abs=1e-12))
    with pytest.raises(ValueError):
        mean_std([])
    assert fmt(1 / 3) == "0.333333"
    assert fmt(None) == ""
    assert fmt(float("nan")) == "nan"
    assert fmt(1234567.0) == "1.23457e+06"
