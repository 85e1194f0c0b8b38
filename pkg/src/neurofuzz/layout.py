"""Where each pipeline stage keeps its artifacts under an experiment root.

::

    root/
      manifest.json                 versions, seeds, stage hashes
      corpus/corpus.txt, splits.json
      checkpoints/<run>/model.nfz, history.csv, run.json
      samples/<run>/tags.txt, sample.json
      cases/<set>/<case>.html, tags.txt, manifest.json
      coverage/blank/*.drcov.log, coverage/<set>/<case>.drcov.log, coverage/target.json
      reports/*.csv
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, Union

PathLike = Union[str, Path]

CORPUS = "corpus"
CHECKPOINTS = "checkpoints"
SAMPLES = "samples"
CASES = "cases"
COVERAGE = "coverage"
REPORTS = "reports"
BLANK = "blank"
STAGE_FILE = "stage.json"
TARGET_FILE = "target.json"

REPORT_FILES = ("val_loss_by_depth.csv", "error_rate_by_depth.csv", "unique_blocks.csv",
                "diff_to_best.csv", "similarity.csv", "overlaps.csv")


def model_source(run_name: str) -> str:
    return f"model-{run_name}"


def source_of(set_name: str) -> str:
    """Strip the ``_<tags per case>`` suffix from a case-set name."""
    head, _, tail = set_name.rpartition("_")
    return head if head and tail.isdigit() else set_name


def write_json(path: PathLike, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def read_json(path: PathLike):
    return json.loads(Path(path).read_text(encoding="utf-8"))


def sha256_file(path: PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_files(root: PathLike, skip: Iterable[str] = ()) -> Dict[str, Path]:
    """Relative POSIX path -> absolute path of every regular file below ``root``."""
    base = Path(root)
    skip = set(skip)
    out = {}
    for p in sorted(base.rglob("*")):
        if p.is_file():
            rel = p.relative_to(base).as_posix()
            if p.name not in skip:
                out[rel] = p
    return out


def hash_tree(root: PathLike, skip: Iterable[str] = ()) -> str:
    h = hashlib.sha256()
    for rel, p in tree_files(root, skip).items():
        h.update(rel.encode("utf-8") + b"\x00" + sha256_file(p).encode() + b"\n")
    return h.hexdigest()
