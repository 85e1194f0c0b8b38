"""drcov (version 2) logs and basic-block set algebra.

File layout::

    DRCOV VERSION: 2
    DRCOV FLAVOR: drcov
    Module Table: version 2, count 1
    Columns: id, base, end, entry, checksum, timestamp, path
     0, 0x00007f0000000000, 0x00007f0000002000, 0x0000000000000000, 0x00000000, 0x00000000, renderer
    BB Table: 2 bbs
    <2 x {u32 start, u16 size, u16 module_id}, little-endian>

A block is identified by ``(module path, start offset)``; its size is ignored.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import BadModuleIndex, MalformedHeader, TruncatedBlockTable

BB_DTYPE = np.dtype([("start", "<u4"), ("size", "<u2"), ("module_id", "<u2")])
DEFAULT_COLUMNS = ("id", "base", "end", "entry", "checksum", "timestamp", "path")

_VERSION = re.compile(rb"DRCOV VERSION: (\d+)\n")
_FLAVOR = re.compile(rb"DRCOV FLAVOR: ([^\n]*)\n")
_MODTABLE = re.compile(rb"Module Table: version (\d+), count (\d+)\n")
_COLUMNS = re.compile(rb"Columns: ([^\n]*)\n")
_BBTABLE = re.compile(rb"BB Table: (\d+) bbs\n")

BlockId = Tuple[str, int]
BlockSet = FrozenSet[BlockId]


@dataclass
class ModuleEntry:
    id: int
    base: int
    end: int
    path: str
    extra: Dict[str, str] = field(default_factory=dict)
    raw: Optional[str] = None    # original line text, kept for byte-exact rewriting

    def line(self, columns: Sequence[str]) -> str:
        if self.raw is not None:
            return self.raw
        vals = []
        for col in columns:
            if col == "id":
                vals.append(f"{self.id:3d}")
            elif col in ("base", "start"):
                vals.append(f"0x{self.base:016x}")
            elif col == "end":
                vals.append(f"0x{self.end:016x}")
            elif col == "path":
                vals.append(self.path)
            elif col == "entry":
                vals.append(self.extra.get(col, "0x" + "0" * 16))
            else:
                vals.append(self.extra.get(col, "0x" + "0" * 8))
        return ", ".join(vals)


@dataclass(frozen=True)
class BlockRecord:
    start_offset: int
    size: int
    module_id: int


@dataclass
class CoverageLog:
    modules: List[ModuleEntry]
    bbs: np.ndarray                     # structured array of BB_DTYPE
    version: int = 2
    flavor: str = "drcov"
    table_version: int = 2
    columns: Tuple[str, ...] = DEFAULT_COLUMNS
    trailer: bytes = b""

    @property
    def blocks(self) -> List[BlockRecord]:
        return [BlockRecord(int(r["start"]), int(r["size"]), int(r["module_id"])) for r in self.bbs]

    def module_by_id(self) -> Dict[int, ModuleEntry]:
        return {m.id: m for m in self.modules}


def make_log(modules: Sequence[Tuple[str, int, int]], blocks: Iterable[Tuple[int, int, int]],
             flavor: str = "drcov") -> CoverageLog:
    """Build a log from ``(path, base, end)`` modules and ``(start, size, module_id)`` blocks."""
    mods = [ModuleEntry(i, base, end, path) for i, (path, base, end) in enumerate(modules)]
    bbs = np.array(list(blocks), dtype=[("start", "<u4"), ("size", "<u2"), ("module_id", "<u2")])
    return CoverageLog(mods, bbs.astype(BB_DTYPE), flavor=flavor)


def _expect(pattern, data: bytes, pos: int, what: str):
    m = pattern.match(data, pos)
    if not m:
        snippet = data[pos:pos + 40]
        raise MalformedHeader(f"expected {what}, found {snippet!r}", pos)
    return m


def parse_drcov(data: bytes) -> CoverageLog:
    """Parse a binary-BB-table drcov v2 log."""
    pos = 0
    m = _expect(_VERSION, data, pos, "'DRCOV VERSION: 2' line")
    version = int(m.group(1))
    if version != 2:
        raise MalformedHeader(f"unsupported drcov version {version}", pos)
    pos = m.end()
    m = _expect(_FLAVOR, data, pos, "'DRCOV FLAVOR:' line")
    flavor = m.group(1).decode("utf-8", "replace")
    pos = m.end()
    m = _expect(_MODTABLE, data, pos, "'Module Table: version V, count N' line")
    table_version, n_mod = int(m.group(1)), int(m.group(2))
    if not 2 <= table_version <= 4:
        raise MalformedHeader(f"unsupported module table version {table_version}", pos)
    pos = m.end()
    m = _expect(_COLUMNS, data, pos, "'Columns:' line")
    columns = tuple(c.strip() for c in m.group(1).decode("utf-8", "replace").split(","))
    for need in ("id", "end", "path"):
        if need not in columns:
            raise MalformedHeader(f"module table lacks a {need!r} column", pos)
    base_col = "base" if "base" in columns else "start"
    if base_col not in columns:
        raise MalformedHeader("module table lacks a 'base' column", pos)
    pos = m.end()

    modules = []
    for _ in range(n_mod):
        nl = data.find(b"\n", pos)
        if nl < 0:
            raise MalformedHeader("module table ends early", pos)
        raw = data[pos:nl].decode("utf-8", "replace")
        parts = [p.strip() for p in raw.split(",", len(columns) - 1)]
        if len(parts) != len(columns):
            raise MalformedHeader(f"module line has {len(parts)} fields, expected {len(columns)}", pos)
        rec = dict(zip(columns, parts))
        try:
            mid = int(rec["id"])
            base = int(rec[base_col], 16)
            end = int(rec["end"], 16)
        except ValueError as exc:
            raise MalformedHeader(f"bad number in module line: {exc}", pos) from exc
        if base >= end:
            raise MalformedHeader(f"module {mid} has base >= end", pos)
        extra = {k: v for k, v in rec.items() if k not in ("id", base_col, "end", "path")}
        modules.append(ModuleEntry(mid, base, end, rec["path"], extra, raw))
        pos = nl + 1

    m = _expect(_BBTABLE, data, pos, "'BB Table: N bbs' line")
    n_bb = int(m.group(1))
    pos = m.end()
    need = n_bb * BB_DTYPE.itemsize
    avail = len(data) - pos
    if avail < need:
        whole = avail // BB_DTYPE.itemsize
        raise TruncatedBlockTable(
            f"declared {n_bb} blocks but only {whole} complete records present",
            pos + whole * BB_DTYPE.itemsize)
    bbs = np.frombuffer(data, dtype=BB_DTYPE, count=n_bb, offset=pos).copy()
    ids = np.array(sorted(mm.id for mm in modules), dtype=np.int64)
    if n_bb:
        known = np.isin(bbs["module_id"].astype(np.int64), ids)
        if not known.all():
            i = int(np.argmin(known))
            raise BadModuleIndex(
                f"block {i} references unknown module {int(bbs['module_id'][i])}",
                pos + i * BB_DTYPE.itemsize)
    trailer = data[pos + need:]
    return CoverageLog(modules, bbs, version, flavor, table_version, columns, trailer)


def write_drcov(log: CoverageLog) -> bytes:
    out = [
        f"DRCOV VERSION: {log.version}\n",
        f"DRCOV FLAVOR: {log.flavor}\n",
        f"Module Table: version {log.table_version}, count {len(log.modules)}\n",
        f"Columns: {', '.join(log.columns)}\n",
    ]
    out.extend(m.line(log.columns) + "\n" for m in log.modules)
    out.append(f"BB Table: {len(log.bbs)} bbs\n")
    return ("".join(out)).encode("utf-8") + np.ascontiguousarray(log.bbs, dtype=BB_DTYPE).tobytes() + log.trailer


# --- set algebra ---------------------------------------------------------------


def block_set(log: CoverageLog, module_filter: str = "") -> BlockSet:
    """Unique ``(module path, offset)`` pairs of modules whose path contains the filter."""
    mods = {m.id: m.path for m in log.modules if module_filter in m.path}
    if not mods or len(log.bbs) == 0:
        return frozenset()
    out = set()
    for mid, path in mods.items():
        sel = log.bbs["start"][log.bbs["module_id"] == mid]
        out.update((path, int(o)) for o in np.unique(sel))
    return frozenset(out)


def union_blocks(sets: Iterable[BlockSet]) -> BlockSet:
    out = set()
    for s in sets:
        out |= s
    return frozenset(out)


def blank_baseline(logs: Sequence[CoverageLog], module_filter: str = "") -> BlockSet:
    if not logs:
        raise ValueError("blank_baseline needs at least one log")
    return union_blocks(block_set(log, module_filter) for log in logs)


def effective_blocks(case_logs: Iterable[CoverageLog], baseline: BlockSet,
                     module_filter: str = "") -> BlockSet:
    """Union of the case block sets minus the blank baseline."""
    return union_blocks(block_set(log, module_filter) for log in case_logs) - baseline


def overlap(a: BlockSet, b: BlockSet) -> Dict[str, Optional[float]]:
    """Containment both ways plus Jaccard; undefined ratios are ``None``."""
    inter = len(a & b)
    union = len(a | b)
    return {
        "containment_ab": inter / len(a) if a else None,
        "containment_ba": inter / len(b) if b else None,
        "jaccard": inter / union if union else None,
    }


def best_reference(references: Mapping[str, BlockSet]) -> str:
    """Largest set; ties go to the lexicographically smallest name."""
    if not references:
        raise ValueError("need at least one reference set")
    return min(references, key=lambda name: (-len(references[name]), name))


def diff_to_best(candidates: Mapping[str, BlockSet],
                 references: Mapping[str, BlockSet]) -> Tuple[str, Dict[str, int]]:
    best = best_reference(references)
    ref = references[best]
    return best, {name: len(s - ref) for name, s in candidates.items()}


def similarity_matrix(sets: Mapping[str, BlockSet]) -> Tuple[List[str], np.ndarray]:
    """Pairwise Jaccard matrix; unit diagonal, NaN where both sets are empty."""
    if len(sets) < 2:
        raise ValueError("similarity_matrix needs at least two sets")
    names = list(sets)
    n = len(names)
    mat = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            jac = overlap(sets[names[i]], sets[names[j]])["jaccard"]
            mat[i, j] = mat[j, i] = np.nan if jac is None else jac
    return names, mat
