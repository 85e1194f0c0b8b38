"""Error rates, coverage set reductions and the CSV reports of an experiment.

All six reports are pure functions of the artifact tree; floats are written
with six significant digits and undefined ratios are left empty.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layout
from .corpus import TagGrammar, default_grammar
from .coverage import (BlockSet, block_set, blank_baseline, best_reference, overlap,
                       parse_drcov, similarity_matrix, union_blocks)
from .errors import MissingArtifacts
from .generator import read_tags
from .surrogate import default_block_map
from .training import read_history_csv
from .validate import Finding, TagErrorReport, error_count, error_rate, validate_tag

__all__ = ["Finding", "TagErrorReport", "validate_tag", "error_count", "error_rate",
           "mean_std", "fmt", "aggregate", "load_coverage", "SetInfo"]


def fmt(x: Optional[float]) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return f"{x:.6g}"


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    if not values:
        raise ValueError("mean_std needs at least one value")
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std())


class SetInfo:
    """One case set as seen by the reports."""

    def __init__(self, name: str, manifest: dict, directory: Path):
        self.name = name
        self.manifest = manifest
        self.directory = directory
        prov = manifest.get("provenance", {})
        self.kind = prov.get("kind", "unknown")
        self.cell = prov.get("cell", "")
        self.depth = prov.get("depth", "")
        self.probability = prov.get("probability")
        self.tags_per_case = manifest["tags_per_case"]
        self.case_ids = manifest["cases"]
        self.source = layout.source_of(name)


def _read_sets(root: Path) -> Dict[str, SetInfo]:
    out = {}
    for man in sorted((root / layout.CASES).glob("*/manifest.json")):
        info = SetInfo(man.parent.name, layout.read_json(man), man.parent)
        out[info.name] = info
    return out


def load_coverage(root: Path, sets: Dict[str, SetInfo], module_filter: str
                  ) -> Tuple[BlockSet, Dict[str, BlockSet], List[str]]:
    """Blank baseline, per-set effective blocks, and a list of missing inputs."""
    cov = root / layout.COVERAGE
    missing = []
    blank_logs = sorted((cov / layout.BLANK).glob("*.drcov.log"))
    if not blank_logs:
        missing.append(f"{layout.COVERAGE}/{layout.BLANK}/*.drcov.log")
    baseline = blank_baseline([parse_drcov(p.read_bytes()) for p in blank_logs], module_filter) \
        if blank_logs else frozenset()
    per_set = {}
    for name, info in sets.items():
        blocks = []
        for cid in info.case_ids:
            p = cov / name / f"{cid}.drcov.log"
            if not p.is_file():
                missing.append(f"{layout.COVERAGE}/{name}/{cid}.drcov.log")
                continue
            blocks.append(block_set(parse_drcov(p.read_bytes()), module_filter))
        per_set[name] = union_blocks(blocks) - baseline
    return baseline, per_set, missing


def _write_csv(path: Path, header: Sequence[str], rows: List[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(r)


def _val_loss_rows(root: Path) -> List[list]:
    groups: Dict[Tuple[str, int], List[float]] = defaultdict(list)
    for run_json in sorted((root / layout.CHECKPOINTS).glob("*/run.json")):
        run = layout.read_json(run_json)
        hist = read_history_csv(run_json.parent / "history.csv")
        if hist:
            groups[(run["cell"], int(run["depth"]))].append(hist[-1]["val_loss"])
    rows = []
    for (cell, depth), vals in sorted(groups.items()):
        m, s = mean_std(vals)
        rows.append([cell, depth, len(vals), fmt(m), fmt(s)])
    return rows


def _error_rate_rows(sets: Dict[str, SetInfo], grammar: TagGrammar) -> List[list]:
    # the per-case-size sets of one source share their tags; score each source once
    by_source: Dict[str, SetInfo] = {}
    for name in sorted(sets):
        by_source.setdefault(sets[name].source, sets[name])
    groups: Dict[Tuple[str, str, str, str], List[Tuple[float, int]]] = defaultdict(list)
    for src, info in by_source.items():
        tags = read_tags(info.directory / "tags.txt")
        prob = "" if info.probability is None else fmt(float(info.probability))
        key = (info.kind, info.cell, str(info.depth), prob)
        groups[key].append((error_rate(tags, grammar), len(tags)))
    rows = []
    for (kind, cell, depth, prob), vals in sorted(
            groups.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].zfill(3),
                                            float(kv[0][3] or 0))):
        m, s = mean_std([v for v, _ in vals])
        rows.append([kind, cell, depth, prob, len(vals), sum(n for _, n in vals), fmt(m), fmt(s)])
    return rows


def _kind_of(sets: Dict[str, SetInfo], source: str) -> str:
    for info in sets.values():
        if info.source == source:
            return info.kind
    return "unknown"


def aggregate(experiment_dir, grammar: Optional[TagGrammar] = None,
              module_filter: Optional[str] = None) -> Dict[str, Path]:
    """Write the six report CSVs under ``reports/`` and return their paths."""
    root = Path(experiment_dir)
    grammar = grammar or default_grammar()
    missing = []
    if not list((root / layout.CHECKPOINTS).glob("*/history.csv")):
        missing.append(f"{layout.CHECKPOINTS}/*/history.csv")
    sets = _read_sets(root)
    if not sets:
        missing.append(f"{layout.CASES}/*/manifest.json")
    target_file = root / layout.COVERAGE / layout.TARGET_FILE
    target = layout.read_json(target_file) if target_file.is_file() else None
    if target is None:
        missing.append(f"{layout.COVERAGE}/{layout.TARGET_FILE}")
    if missing:
        raise MissingArtifacts(missing)
    if module_filter is None:
        module_filter = target.get("module_filter", "")
    _, blocks, cov_missing = load_coverage(root, sets, module_filter)
    if cov_missing:
        raise MissingArtifacts(cov_missing)
    err_blocks = None
    if target.get("kind") == "surrogate":
        bmap = default_block_map()
        err_blocks = frozenset((bmap.module, o) for o in bmap.error_offsets())

    out_dir = root / layout.REPORTS
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: out_dir / name for name in layout.REPORT_FILES}

    _write_csv(paths["val_loss_by_depth.csv"],
               ["cell", "depth", "n_runs", "mean_val_loss", "std_val_loss"], _val_loss_rows(root))
    _write_csv(paths["error_rate_by_depth.csv"],
               ["kind", "cell", "depth", "probability", "n_sources", "n_tags",
                "mean_error_rate", "std_error_rate"], _error_rate_rows(sets, grammar))

    names = sorted(sets)
    dataset = {n: blocks[n] for n in names if sets[n].kind == "dataset"}
    band: Dict[int, Tuple[int, int]] = {}
    for n, b in dataset.items():
        k = sets[n].tags_per_case
        lo, hi = band.get(k, (len(b), len(b)))
        band[k] = (min(lo, len(b)), max(hi, len(b)))
    rows = []
    for n in names:
        info, b = sets[n], blocks[n]
        lo, hi = band.get(info.tags_per_case, (None, None))
        rows.append([n, info.kind, info.cell, info.depth,
                     "" if info.probability is None else fmt(float(info.probability)),
                     info.tags_per_case, len(info.case_ids), len(b),
                     "" if err_blocks is None else len(b & err_blocks),
                     "" if lo is None else lo, "" if hi is None else hi])
    _write_csv(paths["unique_blocks.csv"],
               ["set", "kind", "cell", "depth", "probability", "tags_per_case", "n_cases",
                "unique_blocks", "error_blocks", "dataset_band_min", "dataset_band_max"], rows)

    rows = []
    if dataset:
        best = best_reference(dataset)
        ref = dataset[best]
        for n in names:
            if sets[n].kind == "dataset":
                continue
            novel = blocks[n] - ref
            rows.append([n, sets[n].kind, best, len(novel),
                         "" if err_blocks is None else len(novel & err_blocks)])
    _write_csv(paths["diff_to_best.csv"],
               ["set", "kind", "best_reference", "novel_blocks", "novel_error_blocks"], rows)

    # per-source unions (all case sizes of one model, rung or the dataset)
    sources: Dict[str, BlockSet] = {}
    for n in names:
        src = sets[n].source
        sources[src] = sources.get(src, frozenset()) | blocks[n]
    models = sorted(s for s in sources if s.startswith("model-"))
    sim_names = models + [s for s in sorted(sources) if _kind_of(sets, s) == "dataset"]
    rows = []
    if len(sim_names) >= 2:
        order, mat = similarity_matrix({s: sources[s] for s in sim_names})
        rows = [[order[i]] + [fmt(float(x)) for x in mat[i]] for i in range(len(order))]
    else:
        order = sim_names
    _write_csv(paths["similarity.csv"], ["source"] + list(order), rows)

    rows = []
    src_names = sorted(sources)
    for i, a in enumerate(src_names):
        for b in src_names[i + 1:]:
            ov = overlap(sources[a], sources[b])
            rows.append([a, b, len(sources[a]), len(sources[b]),
                         fmt(ov["containment_ab"]), fmt(ov["containment_ba"]), fmt(ov["jaccard"])])
    _write_csv(paths["overlaps.csv"],
               ["a", "b", "size_a", "size_b", "containment_ab", "containment_ba", "jaccard"], rows)
    return paths

