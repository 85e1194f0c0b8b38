"""ADAM training loop, learning-rate schedule, validation and checkpoints."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from . import nn
from .corpus import Corpus, SplitSet
from .errors import CorruptCheckpoint, NonFiniteLoss, ShapeMismatch
from .seeding import derive_seed
from .seqdata import Alphabet, build_alphabet, make_batches, sequential_batches

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch: int = 512
    seq_len: int = 150
    base_lr: float = 0.001
    lr_halving_period: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    n_splits: int = 5
    n_restarts: int = 3
    seed: int = 0
    clip_norm: Optional[float] = 5.0
    loss: str = nn.BCE_LOSS

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be > 0")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("ADAM betas must lie in (0, 1)")
        if self.lr_halving_period < 1:
            raise ValueError("lr_halving_period must be >= 1")
        if self.loss not in (nn.BCE_LOSS, nn.CATEGORICAL_LOSS):
            raise ValueError(f"unknown loss {self.loss!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.base_lr * 2.0 ** -(epoch // cfg.lr_halving_period)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """Bias-corrected ADAM update, in place on ``params`` and ``state``."""
    for k, p in params.items():
        if grads[k].shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeMismatch(f"{k}: parameter {p.shape}, gradient {grads[k].shape}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_epsilon)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    norm = math.sqrt(sum(float(np.square(g, dtype=np.float64).sum()) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= g.dtype.type(scale)
    return norm


@dataclass
class Checkpoint:
    model: nn.Model
    alphabet: Alphabet
    train_cfg: TrainConfig
    history: List[dict] = field(default_factory=list)
    split: Optional[Tuple[Tuple[int, int], Tuple[int, int]]] = None
    split_id: int = 0
    restart: int = 0
    seed: int = 0

    @property
    def model_cfg(self) -> nn.ModelConfig:
        return self.model.cfg

    def metadata(self) -> dict:
        return {
            "model": self.model.cfg.to_dict(),
            "alphabet": list(self.alphabet.chars),
            "train": self.train_cfg.to_dict(),
            "history": self.history,
            "split": [list(self.split[0]), list(self.split[1])] if self.split else None,
            "split_id": self.split_id,
            "restart": self.restart,
            "seed": self.seed,
        }

    def same_as(self, other: "Checkpoint", ignore_time: bool = True) -> bool:
        a, b = self.metadata(), other.metadata()
        if ignore_time:
            for meta in (a, b):
                meta["history"] = [{k: v for k, v in h.items() if k != "seconds"}
                                   for h in meta["history"]]
        if a != b:
            return False
        return all(np.array_equal(self.model.params[k], other.model.params[k])
                   and self.model.params[k].dtype == other.model.params[k].dtype
                   for k in self.model.params)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name, p in self.model.params.items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p, dtype="<f4").tobytes())
        return h.hexdigest()


MAGIC = b"NFZCKPT\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def checkpoint_bytes(cp: Checkpoint) -> bytes:
    meta = cp.metadata()
    meta["tensors"] = [{"name": k, "shape": list(p.shape)} for k, p in cp.model.params.items()]
    header = json.dumps(meta, ensure_ascii=False, sort_keys=True).encode("utf-8")
    out = io.BytesIO()
    out.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
    out.write(header)
    for p in cp.model.params.values():
        out.write(np.ascontiguousarray(p, dtype="<f4").tobytes())
    return out.getvalue()


def save_checkpoint(cp: Checkpoint, path: Union[str, Path]) -> None:
    Path(path).write_bytes(checkpoint_bytes(cp))


def checkpoint_from_bytes(blob: bytes) -> Checkpoint:
    if len(blob) < _PREFIX.size:
        raise CorruptCheckpoint(f"file too short for header prefix: {len(blob)} bytes at offset 0")
    magic, version, hlen = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptCheckpoint("bad magic bytes at offset 0")
    if version != FORMAT_VERSION:
        raise CorruptCheckpoint(f"unsupported format version {version} (expected {FORMAT_VERSION}) at offset 8")
    start = _PREFIX.size
    if len(blob) < start + hlen:
        raise CorruptCheckpoint(
            f"metadata header truncated: need {hlen} bytes at offset {start}, have {len(blob) - start}")
    try:
        meta = json.loads(blob[start:start + hlen].decode("utf-8"))
        cfg = nn.ModelConfig.from_dict(meta["model"])
        tcfg = TrainConfig.from_dict(meta["train"])
        alphabet = Alphabet(meta["alphabet"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpoint(f"unreadable metadata header at offset {start}: {exc}") from exc
    offset = start + hlen
    params = {}
    for rec in meta["tensors"]:
        shape = tuple(rec["shape"])
        n = int(np.prod(shape)) * 4
        if len(blob) < offset + n:
            raise CorruptCheckpoint(
                f"tensor {rec['name']!r} truncated at offset {offset}: need {n} bytes, have {len(blob) - offset}")
        params[rec["name"]] = np.frombuffer(blob, dtype="<f4", count=n // 4, offset=offset).reshape(shape).astype(np.float32)
        offset += n
    if offset != len(blob):
        raise CorruptCheckpoint(f"{len(blob) - offset} trailing bytes at offset {offset}")
    try:
        model = nn.Model(cfg, params)
    except ShapeMismatch as exc:
        raise CorruptCheckpoint(f"tensor table does not match model config: {exc}") from exc
    split = meta.get("split")
    return Checkpoint(
        model=model,
        alphabet=alphabet,
        train_cfg=tcfg,
        history=meta["history"],
        split=(tuple(split[0]), tuple(split[1])) if split else None,
        split_id=meta["split_id"],
        restart=meta["restart"],
        seed=meta["seed"],
    )


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())


HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "lr", "seconds")


def write_history_csv(history: List[dict], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for rec in history:
            w.writerow([rec["epoch"]] + [f"{rec[c]:.6g}" for c in HISTORY_COLUMNS[1:]])


def read_history_csv(path: Union[str, Path]) -> List[dict]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return [{"epoch": int(r["epoch"]), **{c: float(r[c]) for c in HISTORY_COLUMNS[1:]}} for r in rows]


def evaluate_loss(model: nn.Model, indices: np.ndarray, seq_len: int, batch: int,
                  kind: str = nn.BCE_LOSS) -> float:
    total, count = 0.0, 0
    for b in sequential_batches(indices, seq_len, batch):
        probs = nn.stacked_forward(model, b.inputs)
        n = b.targets.size
        total += nn.loss(probs, b.targets, kind) * n
        count += n
    return total / count


def validate(cp: Checkpoint, validation_text: str) -> float:
    """Loss over ``validation_text`` without dropout."""
    idx = cp.alphabet.encode(validation_text)
    t = cp.train_cfg
    seq_len = min(t.seq_len, idx.size - 1)
    return evaluate_loss(cp.model, idx, seq_len, t.batch, t.loss)


def train(model_cfg: nn.ModelConfig, train_cfg: TrainConfig, corpus: Corpus,
          split: Tuple[Tuple[int, int], Tuple[int, int]], split_id: int = 0,
          restart: int = 0, alphabet: Optional[Alphabet] = None,
          seed: Optional[int] = None) -> Checkpoint:
    """Train one model on ``split`` of ``corpus`` and return its checkpoint.

    ``seed`` (default ``train_cfg.seed``) fixes initialization, batch order and
    dropout masks.
    """
    seed = train_cfg.seed if seed is None else seed
    if alphabet is None:
        alphabet = build_alphabet(corpus.text)
    if model_cfg.vocab_size != alphabet.size:
        raise ShapeMismatch(f"model vocabulary {model_cfg.vocab_size} != alphabet size {alphabet.size}")
    (t0, t1), (v0, v1) = split
    train_idx = alphabet.encode(corpus.slice_text(t0, t1))
    val_idx = alphabet.encode(corpus.slice_text(v0, v1))
    init_ss, batch_ss, drop_ss = np.random.SeedSequence(seed).spawn(3)
    model = nn.Model.init(model_cfg, np.random.default_rng(init_ss))
    batch_rng = np.random.default_rng(batch_ss)
    drop_rng = np.random.default_rng(drop_ss)
    state = AdamState.zeros_like(model.params)
    history = []
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        lr = lr_at(epoch, train_cfg)
        losses = []
        for b in make_batches(train_idx, train_cfg.seq_len, train_cfg.batch, batch_rng):
            value, grads = nn.loss_and_grads(model, b.inputs, b.targets, train_cfg.loss, drop_rng)
            if not math.isfinite(value):
                raise NonFiniteLoss(
                    f"non-finite loss {value} at epoch {epoch}, step {state.t + 1} "
                    f"(cell={model_cfg.cell_type}, layers={model_cfg.layers}, lr={lr})")
            clip_global_norm(grads, train_cfg.clip_norm)
            adam_step(model.params, grads, state, lr, train_cfg)
            losses.append(value)
        val_seq = min(train_cfg.seq_len, val_idx.size - 1)
        val_loss = evaluate_loss(model, val_idx, val_seq, train_cfg.batch, train_cfg.loss)
        rec = {
            "epoch": epoch + 1,
            "train_loss": float(np.mean(losses)) if losses else float("nan"),
            "val_loss": val_loss,
            "lr": lr,
            "seconds": time.perf_counter() - started,
        }
        history.append(rec)
        log.info("%s l=%d epoch %d train %.5f val %.5f", model_cfg.cell_type,
                 model_cfg.layers, epoch + 1, rec["train_loss"], val_loss)
    return Checkpoint(model, alphabet, train_cfg, history,
                      ((t0, t1), (v0, v1)), split_id, restart, seed)


@dataclass(frozen=True)
class RunSpec:
    cell_type: str
    layers: int
    split_id: int
    restart: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.cell_type}-l{self.layers}-s{self.split_id}-r{self.restart}"


def sweep(master_seed: int, cell_types, depths, n_splits: int, n_restarts: int) -> List[RunSpec]:
    """Every (cell, depth, split, restart) run with its derived seed."""
    return [
        RunSpec(cell, depth, sp, rs, derive_seed(master_seed, "train", cell, depth, sp, rs))
        for cell in cell_types
        for depth in depths
        for sp in range(n_splits)
        for rs in range(n_restarts)
    ]
