"""Experiment configuration and the pipeline stages driven by the command line.

Each stage owns one directory and records a ``stage.json`` holding the hash
of its inputs (configuration slice, derived seed and upstream artifact
hashes) and the hash of every file it produced.  A stage whose record still
matches is skipped, so reruns are cheap and any upstream change invalidates
exactly the downstream work.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import platform
import random
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import layout, nn
from .corpus import Corpus, SplitSet, generate_corpus, load_grammar, make_splits
from .errors import ConfigError
from .generator import (DEFAULT_TEMPLATE, CaseSet, assemble_case, make_case_sets, read_tags,
                        sample_tags)
from .mutation import DEFAULT_LADDER, make_mutation_sets
from .seeding import derive_seed
from .seqdata import build_alphabet
from .surrogate import MODULE_NAME, default_block_map, run_target
from .training import (RunSpec, TrainConfig, load_checkpoint, save_checkpoint, sweep, train,
                       write_history_csv)

log = logging.getLogger(__name__)

MAX_DEPTH = 8
CELLS = (nn.LSTM, nn.GRU)
TARGET_KINDS = ("surrogate", "external")


@dataclass(frozen=True)
class CorpusSection:
    grammar: Optional[str] = None
    n_tags: int = 12000
    max_line_bytes: int = 512
    train_bytes: int = 900_000
    val_bytes: int = 50_000
    dataset_tags: int = 1024          # corpus lines drawn as the dataset baseline


@dataclass(frozen=True)
class ModelSection:
    cells: Tuple[str, ...] = (nn.GRU, nn.LSTM)
    depths: Tuple[int, ...] = (1, 2, 3)
    hidden_size: int = 64
    dropout: float = 0.3


@dataclass(frozen=True)
class SamplingSection:
    n_tags: int = 1024
    max_len: int = 1024
    temperature: float = 1.0
    case_sizes: Tuple[int, ...] = (128, 256)
    streams: int = 256


@dataclass(frozen=True)
class MutationSection:
    probabilities: Tuple[float, ...] = DEFAULT_LADDER


@dataclass(frozen=True)
class TargetSection:
    kind: str = "surrogate"
    cmd: Optional[str] = None
    timeout: float = 60.0
    blank_runs: int = 1
    module_filter: str = ""


_DESK_TRAINING = dict(epochs=5, batch=32, base_lr=0.01, n_splits=1, n_restarts=1)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    out: str = "experiment"
    corpus: CorpusSection = field(default_factory=CorpusSection)
    models: ModelSection = field(default_factory=ModelSection)
    training: TrainConfig = field(default_factory=lambda: TrainConfig(**_DESK_TRAINING))
    sampling: SamplingSection = field(default_factory=SamplingSection)
    mutation: MutationSection = field(default_factory=MutationSection)
    target: TargetSection = field(default_factory=TargetSection)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        m = self.models
        if not m.depths:
            raise ConfigError("models.depths must not be empty")
        for d in m.depths:
            if not 1 <= d <= MAX_DEPTH:
                raise ConfigError(f"depth {d} outside [1, {MAX_DEPTH}]")
        for c in m.cells:
            if c not in CELLS:
                raise ConfigError(f"unknown cell type {c!r}")
        if m.hidden_size < 1:
            raise ConfigError("models.hidden_size must be >= 1")
        if not 0.0 <= m.dropout < 1.0:
            raise ConfigError("models.dropout must be in [0, 1)")
        s = self.sampling
        for n, what in ((s.n_tags, "sampling.n_tags"), (self.corpus.dataset_tags, "corpus.dataset_tags")):
            for k in s.case_sizes:
                if k < 1 or n % k:
                    raise ConfigError(f"{what}={n} is not divisible by case size {k}")
        if self.corpus.dataset_tags > self.corpus.n_tags:
            raise ConfigError("corpus.dataset_tags exceeds corpus.n_tags")
        for p in self.mutation.probabilities:
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"mutation probability {p} outside [0, 1]")
        t = self.target
        if t.kind not in TARGET_KINDS:
            raise ConfigError(f"target.kind must be one of {TARGET_KINDS}")
        if t.kind == "external" and (not t.cmd or "{case}" not in t.cmd):
            raise ConfigError("external target needs target.cmd with a {case} placeholder")
        if t.blank_runs < 1:
            raise ConfigError("target.blank_runs must be >= 1")
        if self.corpus.grammar is not None and not Path(self.corpus.grammar).is_file():
            raise ConfigError(f"grammar file not found: {self.corpus.grammar}")

    def to_dict(self) -> dict:
        return json.loads(json.dumps(dataclasses.asdict(self)))

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        sections = {"corpus": CorpusSection, "models": ModelSection, "training": TrainConfig,
                    "sampling": SamplingSection, "mutation": MutationSection,
                    "target": TargetSection}
        unknown = set(doc) - set(sections) - {"seed", "out"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: doc[k] for k in ("seed", "out") if k in doc}
        try:
            for name, klass in sections.items():
                sub = dict(doc.get(name, {}))
                if klass is TrainConfig:
                    sub = {**_DESK_TRAINING, **sub}
                names = {f.name for f in dataclasses.fields(klass)}
                bad = set(sub) - names
                if bad:
                    raise ConfigError(f"unknown keys in {name}: {sorted(bad)}")
                for f in dataclasses.fields(klass):
                    if f.name in sub and isinstance(sub[f.name], list):
                        sub[f.name] = tuple(sub[f.name])
                kw[name] = klass(**sub)
            return cls(**kw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """Read a JSON config; ``None`` gives the bundled desk-scale config."""
    if path is None:
        text = resources.files("neurofuzz").joinpath("data/desk_config.json").read_text("utf-8")
    else:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(doc)


# --- hashing and stage records ------------------------------------------------------


def digest_obj(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def artifact_digest(path: Path) -> str:
    """File hash; wall-clock columns of training histories are left out."""
    if path.name == "history.csv":
        rows = list(csv.reader(io.StringIO(path.read_text(encoding="utf-8"))))
        keep = [i for i, c in enumerate(rows[0]) if c != "seconds"] if rows else []
        text = "\n".join(",".join(r[i] for i in keep) for r in rows)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()
    return layout.sha256_file(path)


def artifact_hashes(root) -> Dict[str, str]:
    """Relative path -> digest for the whole artifact tree (timing-free)."""
    return {rel: artifact_digest(p) for rel, p in layout.tree_files(root).items()}


def _outputs_ok(d: Path, outputs: Dict[str, str]) -> bool:
    files = layout.tree_files(d, skip=[layout.STAGE_FILE])
    if set(files) != set(outputs):
        return False
    return all(artifact_digest(files[rel]) == h for rel, h in outputs.items())


@dataclass
class StageResult:
    name: str
    directory: Path
    record: dict
    skipped: bool

    @property
    def digest(self) -> str:
        return digest_obj(self.record)


def run_stage(name: str, directory: Path, inputs: dict, build: Callable[[Path], None]) -> StageResult:
    d = Path(directory)
    key = digest_obj(inputs)
    rec_path = d / layout.STAGE_FILE
    if rec_path.is_file():
        try:
            rec = layout.read_json(rec_path)
        except ValueError:
            rec = {}
        if rec.get("inputs") == key and _outputs_ok(d, rec.get("outputs", {})):
            log.info("%s: up to date, skipped", name)
            return StageResult(name, d, rec, True)
    if d.exists():
        shutil.rmtree(d)
    d.mkdir(parents=True)
    build(d)
    outputs = {rel: artifact_digest(p)
               for rel, p in layout.tree_files(d, skip=[layout.STAGE_FILE]).items()}
    rec = {"stage": name, "inputs": key, "outputs": outputs}
    layout.write_json(rec_path, rec)
    log.info("%s: built %d files", name, len(outputs))
    return StageResult(name, d, rec, False)


def relocatable(cfg: ExperimentConfig) -> dict:
    """The config as stored inside its own output tree, without the output path."""
    doc = cfg.to_dict()
    doc.pop("out")
    return doc


def update_manifest(root: Path, cfg: ExperimentConfig, results: Sequence[StageResult]) -> None:
    path = root / "manifest.json"
    man = layout.read_json(path) if path.is_file() else {}
    from . import __version__
    man.update({
        "package": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "seed": cfg.seed,
        "config_digest": digest_obj(relocatable(cfg)),
        "block_map": default_block_map().digest(),
        "template": DEFAULT_TEMPLATE.digest(),
    })
    stages = man.setdefault("stages", {})
    for r in results:
        stages[r.directory.relative_to(root).as_posix()] = {
            "inputs": r.record["inputs"], "outputs": digest_obj(r.record["outputs"])}
    man["stages"] = dict(sorted(stages.items()))
    layout.write_json(path, man)


def _stage_record(directory: Path) -> dict:
    p = directory / layout.STAGE_FILE
    if not p.is_file():
        raise ConfigError(f"{directory} has not been built yet (no {layout.STAGE_FILE})")
    return layout.read_json(p)


# --- stages -----------------------------------------------------------------------------


def stage_corpus(cfg: ExperimentConfig, root: Path) -> StageResult:
    c = cfg.corpus
    grammar = load_grammar(c.grammar)
    seeds = {k: derive_seed(cfg.seed, k) for k in ("corpus", "splits", "dataset")}
    inputs = {"grammar": grammar.digest(), "corpus": dataclasses.asdict(c),
              "n_splits": cfg.training.n_splits, "seeds": seeds}

    def build(d: Path) -> None:
        corpus = generate_corpus(grammar, c.n_tags, seeds["corpus"], c.max_line_bytes)
        corpus.save(d / "corpus.txt")
        splits = make_splits(corpus, cfg.training.n_splits, c.train_bytes, c.val_bytes,
                             seeds["splits"])
        layout.write_json(d / "splits.json", splits.to_list())
        picks = random.Random(seeds["dataset"]).sample(range(len(corpus.lines)), c.dataset_tags)
        (d / "dataset_tags.txt").write_bytes(
            "".join(corpus.lines[i] + "\n" for i in picks).encode("utf-8"))
        alphabet = build_alphabet(corpus.text)
        layout.write_json(d / "alphabet.json", {"chars": list(alphabet.chars), "size": alphabet.size})

    return run_stage("corpus", root / layout.CORPUS, inputs, build)


def runs(cfg: ExperimentConfig) -> List[RunSpec]:
    return sweep(cfg.seed, cfg.models.cells, cfg.models.depths,
                 cfg.training.n_splits, cfg.training.n_restarts)


def _train_one(args) -> Tuple[str, dict]:
    root, run, cfg_doc, inputs = args
    cfg = ExperimentConfig.from_dict(cfg_doc)
    root = Path(root)
    m = cfg.models

    def build(d: Path) -> None:
        corpus = Corpus.load(root / layout.CORPUS / "corpus.txt")
        splits = SplitSet.from_list(layout.read_json(root / layout.CORPUS / "splits.json"))
        alphabet = build_alphabet(corpus.text)
        model_cfg = nn.ModelConfig(run.cell_type, run.layers, m.hidden_size, alphabet.size, m.dropout)
        tcfg = dataclasses.replace(cfg.training, seed=run.seed)
        cp = train(model_cfg, tcfg, corpus, splits.splits[run.split_id], run.split_id,
                   run.restart, alphabet, run.seed)
        write_history_csv(cp.history, d / "history.csv")
        # wall time lives in history.csv only, so checkpoints stay reproducible
        cp.history = [{k: v for k, v in h.items() if k != "seconds"} for h in cp.history]
        save_checkpoint(cp, d / "model.nfz")
        layout.write_json(d / "run.json", {
            "name": run.name, "cell": run.cell_type, "depth": run.layers,
            "split": run.split_id, "restart": run.restart, "seed": run.seed,
            "final_val_loss": cp.history[-1]["val_loss"] if cp.history else None,
            "n_params": cp.model.n_params})

    res = run_stage(f"train {run.name}", root / layout.CHECKPOINTS / run.name, inputs, build)
    return run.name, {"record": res.record, "skipped": res.skipped}


def stage_train(cfg: ExperimentConfig, root: Path, jobs: int = 1) -> List[StageResult]:
    corpus_rec = _stage_record(root / layout.CORPUS)
    work = []
    for run in runs(cfg):
        inputs = {"corpus": digest_obj(corpus_rec["outputs"]), "run": dataclasses.asdict(run),
                  "models": dataclasses.asdict(cfg.models), "training": cfg.training.to_dict()}
        work.append((str(root), run, cfg.to_dict(), inputs))
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(min(jobs, len(work))) as ex:
            done = list(ex.map(_train_one, work))
    else:
        done = [_train_one(w) for w in work]
    return [StageResult(f"train {name}", root / layout.CHECKPOINTS / name, r["record"], r["skipped"])
            for name, r in done]


def stage_sample(cfg: ExperimentConfig, root: Path) -> List[StageResult]:
    s = cfg.sampling
    out = []
    for run in runs(cfg):
        cdir = root / layout.CHECKPOINTS / run.name
        seed = derive_seed(cfg.seed, "sample", run.name)
        inputs = {"checkpoint": digest_obj(_stage_record(cdir)["outputs"]),
                  "sampling": dataclasses.asdict(s), "seed": seed}

        def build(d: Path, cdir=cdir, seed=seed) -> None:
            cp = load_checkpoint(cdir / "model.nfz")
            res = sample_tags(cp, s.n_tags, seed, s.max_len, s.temperature, s.streams)
            (d / "tags.txt").write_bytes("".join(t + "\n" for t in res.tags).encode("utf-8"))
            layout.write_json(d / "sample.json", {"seed": seed, "n_tags": len(res.tags),
                                                  "discarded": res.discarded})

        out.append(run_stage(f"sample {run.name}", root / layout.SAMPLES / run.name, inputs, build))
    return out


def _write_sets(root: Path, sets: List[CaseSet], upstream: str) -> List[StageResult]:
    out = []
    for cs in sets:
        inputs = {"upstream": upstream, "set": cs.name, "manifest": cs.manifest(),
                  "template": DEFAULT_TEMPLATE.digest()}
        out.append(run_stage(f"cases {cs.name}", root / layout.CASES / cs.name, inputs, cs.write))
    return out


def stage_make_cases(cfg: ExperimentConfig, root: Path) -> List[StageResult]:
    sizes = cfg.sampling.case_sizes
    corpus_dir = root / layout.CORPUS
    dataset = read_tags(corpus_dir / "dataset_tags.txt")
    up = digest_obj(_stage_record(corpus_dir)["outputs"])
    out = _write_sets(root, make_case_sets(
        dataset, sizes, {"kind": "dataset", "seed": derive_seed(cfg.seed, "dataset")}, "dataset"), up)
    for run in runs(cfg):
        sdir = root / layout.SAMPLES / run.name
        rec = _stage_record(sdir)
        meta = layout.read_json(sdir / "sample.json")
        prov = {"kind": "model", "run": run.name, "cell": run.cell_type, "depth": run.layers,
                "split": run.split_id, "restart": run.restart, "seed": meta["seed"],
                "discarded": meta["discarded"]}
        sets = make_case_sets(read_tags(sdir / "tags.txt"), sizes, prov, layout.model_source(run.name))
        out += _write_sets(root, sets, digest_obj(rec["outputs"]))
    return out


def stage_mutate(cfg: ExperimentConfig, root: Path) -> List[StageResult]:
    corpus_dir = root / layout.CORPUS
    dataset = read_tags(corpus_dir / "dataset_tags.txt")
    alphabet = build_alphabet(Corpus.load(corpus_dir / "corpus.txt").text)
    sets = make_mutation_sets(dataset, alphabet, cfg.mutation.probabilities,
                              cfg.sampling.case_sizes, derive_seed(cfg.seed, "mutation"))
    return _write_sets(root, sets, digest_obj(_stage_record(corpus_dir)["outputs"]))


def _target_doc(cfg: ExperimentConfig) -> dict:
    t = cfg.target
    doc = {"kind": t.kind, "module_filter": t.module_filter or (MODULE_NAME if t.kind == "surrogate" else "")}
    if t.kind == "surrogate":
        doc["block_map"] = default_block_map().digest()
    else:
        doc["cmd"] = t.cmd
    return doc


def run_blank(cfg: ExperimentConfig, out_dir: Path) -> None:
    """Blank-template coverage, ``target.blank_runs`` times."""
    t = cfg.target
    html = DEFAULT_TEMPLATE.render([])
    blank_case = CaseSet(layout.BLANK, [assemble_case([], case_id=f"blank_{i:04d}")
                                        for i in range(t.blank_runs)], 1)
    if t.kind == "surrogate":
        run_target(blank_case, out_dir, out_dir, "surrogate")
    else:
        src = out_dir / ".input"
        src.mkdir(parents=True, exist_ok=True)
        for c in blank_case.cases:
            (src / f"{c.id}.html").write_text(html, encoding="utf-8")
        run_target(blank_case, src, out_dir, "external", t.cmd, t.timeout)
        shutil.rmtree(src)


def stage_run_target(cfg: ExperimentConfig, root: Path, jobs: int = 1,
                     set_dirs: Optional[Sequence[Path]] = None) -> List[StageResult]:
    """Coverage of the blank template and of every case set.

    ``set_dirs`` defaults to every set under ``root/cases``.
    """
    t = cfg.target
    cov = root / layout.COVERAGE
    cov.mkdir(parents=True, exist_ok=True)
    doc = _target_doc(cfg)
    layout.write_json(cov / layout.TARGET_FILE, doc)
    out = [run_stage("coverage blank", cov / layout.BLANK,
                     {"target": doc, "template": DEFAULT_TEMPLATE.digest(), "runs": t.blank_runs},
                     lambda d: run_blank(cfg, d))]
    if set_dirs is None:
        set_dirs = [m.parent for m in sorted((root / layout.CASES).glob("*/manifest.json"))]
    for sdir in set_dirs:
        sdir = Path(sdir)
        cs = CaseSet.read(sdir)
        rec = layout.read_json(sdir / layout.STAGE_FILE) if (sdir / layout.STAGE_FILE).is_file() \
            else {"outputs": {rel: artifact_digest(p) for rel, p in layout.tree_files(sdir).items()}}
        inputs = {"target": doc, "cases": digest_obj(rec["outputs"])}
        out.append(run_stage(f"coverage {cs.name}", cov / cs.name, inputs,
                             lambda d, cs=cs, sdir=sdir: run_target(cs, sdir, d, t.kind, t.cmd,
                                                                    t.timeout, jobs)))
    return out


def stage_analyze(cfg: ExperimentConfig, root: Path) -> StageResult:
    from .analysis import aggregate
    grammar = load_grammar(cfg.corpus.grammar)
    upstream = {}
    for sub in (layout.CHECKPOINTS, layout.CASES, layout.COVERAGE):
        for rec in sorted((root / sub).glob(f"*/{layout.STAGE_FILE}")):
            upstream[rec.parent.relative_to(root).as_posix()] = digest_obj(layout.read_json(rec)["outputs"])
    inputs = {"grammar": grammar.digest(), "upstream": upstream, "target": _target_doc(cfg)}

    def build(d: Path) -> None:
        aggregate(root, grammar)

    return run_stage("analyze", root / layout.REPORTS, inputs, build)


STAGES = ("gen-corpus", "train", "sample", "mutate", "make-cases", "run-target", "analyze")


def run_pipeline(cfg: ExperimentConfig, root: Path, stages: Sequence[str] = STAGES,
                 jobs: int = 1) -> List[StageResult]:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    layout.write_json(root / "config.json", relocatable(cfg))
    results: List[StageResult] = []
    for st in stages:
        if st == "gen-corpus":
            got = [stage_corpus(cfg, root)]
        elif st == "train":
            got = stage_train(cfg, root, jobs)
        elif st == "sample":
            got = stage_sample(cfg, root)
        elif st == "mutate":
            got = stage_mutate(cfg, root)
        elif st == "make-cases":
            got = stage_make_cases(cfg, root)
        elif st == "run-target":
            got = stage_run_target(cfg, root, jobs)
        elif st == "analyze":
            got = [stage_analyze(cfg, root)]
        else:
            raise ConfigError(f"unknown stage {st!r}")
        results += got
        update_manifest(root, cfg, got)
    return results
