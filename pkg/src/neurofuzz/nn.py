"""Stacked LSTM/GRU character model in plain numpy.

Layer ``k`` owns one weight matrix ``W`` of shape ``[(in + s), G * s]`` applied
to the concatenation ``[x; h_prev]`` and a bias ``b`` of shape ``[G * s]``.
Gate blocks are laid out column-wise in the order

* LSTM: input, forget, output, candidate  (G = 4)
* GRU:  update, reset, candidate          (G = 3)

The GRU uses ``h = (1 - z) * h_prev + z * candidate`` with the reset gate
applied to ``h_prev`` before the candidate's recurrent product.  A dense
softmax layer of ``I`` units sits on top of the last recurrent layer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import MissingCache, ShapeMismatch

LSTM = "lstm"
GRU = "gru"
GATES = {LSTM: 4, GRU: 3}

CLAMP = 1e-7
BCE_LOSS = "bce"              # element-wise binary cross-entropy over the softmax vector
CATEGORICAL_LOSS = "categorical"


@dataclass(frozen=True)
class ModelConfig:
    cell_type: str
    layers: int
    hidden_size: int
    vocab_size: int
    dropout_prob: float = 0.3

    def __post_init__(self):
        if self.cell_type not in GATES:
            raise ValueError(f"cell_type must be one of {sorted(GATES)}, got {self.cell_type!r}")
        if self.layers < 1 or self.hidden_size < 1 or self.vocab_size < 1:
            raise ValueError("layers, hidden_size and vocab_size must be >= 1")
        if not 0.0 <= self.dropout_prob < 1.0:
            raise ValueError("dropout_prob must be in [0, 1)")

    @property
    def gates(self) -> int:
        return GATES[self.cell_type]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def count_parameters(cfg: ModelConfig) -> int:
    g, s, i, l = cfg.gates, cfg.hidden_size, cfg.vocab_size, cfg.layers
    first = g * ((i + s) * s + s)
    rest = (l - 1) * g * ((2 * s) * s + s)
    return first + rest + s * i + i


def glorot_init(n_in: int, n_out: int, rng: np.random.Generator,
                dtype=np.float32) -> np.ndarray:
    if n_in < 1 or n_out < 1:
        raise ValueError("glorot_init needs positive sizes")
    bound = math.sqrt(6.0) / math.sqrt(n_in + n_out)
    return rng.uniform(-bound, bound, size=(n_in, n_out)).astype(dtype)


def param_shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, ...]]]:
    s, g = cfg.hidden_size, cfg.gates
    shapes = []
    for k in range(cfg.layers):
        n_in = cfg.vocab_size if k == 0 else s
        shapes.append((f"layer{k}.W", (n_in + s, g * s)))
        shapes.append((f"layer{k}.b", (g * s,)))
    shapes.append(("out.W", (s, cfg.vocab_size)))
    shapes.append(("out.b", (cfg.vocab_size,)))
    return shapes


class Model:
    """Configuration plus an ordered dict of parameter tensors."""

    def __init__(self, cfg: ModelConfig, params: Dict[str, np.ndarray]):
        expected = param_shapes(cfg)
        if [n for n, _ in expected] != list(params):
            raise ShapeMismatch("parameter names do not match the configuration")
        for name, shape in expected:
            if params[name].shape != shape:
                raise ShapeMismatch(f"{name}: expected {shape}, got {params[name].shape}")
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "Model":
        s, g = cfg.hidden_size, cfg.gates
        params = {}
        for name, shape in param_shapes(cfg):
            if name.endswith(".b"):
                params[name] = np.zeros(shape, dtype=dtype)
            elif name == "out.W":
                params[name] = glorot_init(s, cfg.vocab_size, rng, dtype)
            else:
                n_rows = shape[0]
                params[name] = np.concatenate(
                    [glorot_init(n_rows, s, rng, dtype) for _ in range(g)], axis=1)
        return cls(cfg, params)

    @classmethod
    def zeros(cls, cfg: ModelConfig, dtype=np.float64) -> "Model":
        return cls(cfg, {n: np.zeros(sh, dtype=dtype) for n, sh in param_shapes(cfg)})

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    @property
    def dtype(self):
        return self.params["out.W"].dtype

    def astype(self, dtype) -> "Model":
        return Model(self.cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    def copy(self) -> "Model":
        return Model(self.cfg, {k: v.copy() for k, v in self.params.items()})

    def layer(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        return self.params[f"layer{k}.W"], self.params[f"layer{k}.b"]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form cannot overflow
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_step(x, h, W, gates):
    s = h.shape[-1]
    if W.shape[0] != x.shape[-1] + s or W.shape[1] != gates * s:
        raise ShapeMismatch(
            f"weights {W.shape} do not fit input {x.shape[-1]} and hidden {s}")


def lstm_forward(x: np.ndarray, state: Tuple[np.ndarray, np.ndarray],
                 W: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One LSTM step; ``x`` and the state may carry leading batch dimensions."""
    h_prev, c_prev = state
    _check_step(x, h_prev, W, 4)
    s = h_prev.shape[-1]
    a = np.concatenate([x, h_prev], axis=-1) @ W + b
    i = sigmoid(a[..., :s])
    f = sigmoid(a[..., s:2 * s])
    o = sigmoid(a[..., 2 * s:3 * s])
    g = np.tanh(a[..., 3 * s:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def gru_forward(x: np.ndarray, h_prev: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_step(x, h_prev, W, 3)
    s = h_prev.shape[-1]
    n_in = x.shape[-1]
    Wx, Wh = W[:n_in], W[n_in:]
    a_zr = x @ Wx[:, :2 * s] + h_prev @ Wh[:, :2 * s] + b[:2 * s]
    z = sigmoid(a_zr[..., :s])
    r = sigmoid(a_zr[..., s:])
    cand = np.tanh(x @ Wx[:, 2 * s:] + (r * h_prev) @ Wh[:, 2 * s:] + b[2 * s:])
    return (1.0 - z) * h_prev + z * cand


# --- sequence forward / backward --------------------------------------------------


def _lstm_seq(xw, Wh, h0, c0):
    T, B, _ = xw.shape
    s = Wh.shape[0]
    acts = np.empty((T, B, 4 * s), dtype=xw.dtype)
    cs = np.empty((T, B, s), dtype=xw.dtype)
    tcs = np.empty_like(cs)
    hs = np.empty_like(cs)
    h, c = h0, c0
    for t in range(T):
        a = xw[t] + h @ Wh
        sg = sigmoid(a[:, :3 * s])
        g = np.tanh(a[:, 3 * s:])
        acts[t, :, :3 * s] = sg
        acts[t, :, 3 * s:] = g
        c = sg[:, s:2 * s] * c + sg[:, :s] * g
        tc = np.tanh(c)
        h = sg[:, 2 * s:] * tc
        cs[t], tcs[t], hs[t] = c, tc, h
    return hs, {"acts": acts, "c": cs, "tc": tcs, "c0": c0}


def _lstm_seq_backward(dH, hs, h0, Wh, cache):
    T, B, s = dH.shape
    acts, cs, tcs = cache["acts"], cache["c"], cache["tc"]
    da = np.empty((T, B, 4 * s), dtype=dH.dtype)
    dh_next = np.zeros((B, s), dtype=dH.dtype)
    dc_next = np.zeros((B, s), dtype=dH.dtype)
    WhT = Wh.T
    for t in range(T - 1, -1, -1):
        i = acts[t, :, :s]
        f = acts[t, :, s:2 * s]
        o = acts[t, :, 2 * s:3 * s]
        g = acts[t, :, 3 * s:]
        c_prev = cs[t - 1] if t > 0 else cache["c0"]
        tc = tcs[t]
        dh = dH[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        da[t, :, :s] = dc * g * i * (1.0 - i)
        da[t, :, s:2 * s] = dc * c_prev * f * (1.0 - f)
        da[t, :, 2 * s:3 * s] = dh * tc * o * (1.0 - o)
        da[t, :, 3 * s:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = da[t] @ WhT
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0)
    dWh = h_prev.reshape(T * B, s).T @ da.reshape(T * B, 4 * s)
    return da, dWh


def _gru_seq(xw, Wh, h0):
    T, B, _ = xw.shape
    s = Wh.shape[0]
    Wzr, Wc = Wh[:, :2 * s], Wh[:, 2 * s:]
    gates = np.empty((T, B, 3 * s), dtype=xw.dtype)  # z, r, candidate
    rh = np.empty((T, B, s), dtype=xw.dtype)
    hs = np.empty((T, B, s), dtype=xw.dtype)
    h = h0
    for t in range(T):
        zr = sigmoid(xw[t, :, :2 * s] + h @ Wzr)
        r_h = zr[:, s:] * h
        cand = np.tanh(xw[t, :, 2 * s:] + r_h @ Wc)
        z = zr[:, :s]
        h = h + z * (cand - h)
        gates[t, :, :2 * s] = zr
        gates[t, :, 2 * s:] = cand
        rh[t], hs[t] = r_h, h
    return hs, {"gates": gates, "rh": rh}


def _gru_seq_backward(dH, hs, h0, Wh, cache):
    T, B, s = dH.shape
    gates, rh = cache["gates"], cache["rh"]
    Wzr_T, Wc_T = Wh[:, :2 * s].T, Wh[:, 2 * s:].T
    da = np.empty((T, B, 3 * s), dtype=dH.dtype)
    dh_next = np.zeros((B, s), dtype=dH.dtype)
    for t in range(T - 1, -1, -1):
        z = gates[t, :, :s]
        r = gates[t, :, s:2 * s]
        cand = gates[t, :, 2 * s:]
        h_prev = hs[t - 1] if t > 0 else h0
        dh = dH[t] + dh_next
        da_c = dh * z * (1.0 - cand * cand)
        drh = da_c @ Wc_T
        da[t, :, :s] = dh * (cand - h_prev) * z * (1.0 - z)
        da[t, :, s:2 * s] = drh * h_prev * r * (1.0 - r)
        da[t, :, 2 * s:] = da_c
        dh_next = dh * (1.0 - z) + drh * r + da[t, :, :2 * s] @ Wzr_T
    h_prev = np.concatenate([h0[None], hs[:-1]], axis=0).reshape(T * B, s)
    dWh = np.empty((s, 3 * s), dtype=dH.dtype)
    dWh[:, :2 * s] = h_prev.T @ da[:, :, :2 * s].reshape(T * B, 2 * s)
    dWh[:, 2 * s:] = rh.reshape(T * B, s).T @ da[:, :, 2 * s:].reshape(T * B, s)
    return da, dWh


@dataclass
class ForwardCache:
    inputs: np.ndarray                 # [B, T] int
    layer_inputs: List[Optional[np.ndarray]]   # time-major dropped inputs, None for one-hot layer
    layer_outputs: List[np.ndarray]    # time-major raw h, per layer
    masks: List[Optional[np.ndarray]]  # dropout masks on each layer output
    internals: List[dict]
    top: np.ndarray                    # time-major dropped output of last layer
    probs: np.ndarray                  # [B, T, I]


def _check_inputs(model: Model, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs)
    if inputs.ndim != 2:
        raise ShapeMismatch(f"inputs must be [batch, seq_len], got shape {inputs.shape}")
    if inputs.size and (inputs.min() < 0 or inputs.max() >= model.cfg.vocab_size):
        raise ShapeMismatch("input index outside the model vocabulary")
    return inputs


def forward(model: Model, inputs: np.ndarray,
            dropout_rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, ForwardCache]:
    """Run the stack over ``inputs`` ([batch, seq_len] indices) from zero state.

    Dropout (keep probability ``1 - dropout_prob``, inverted scaling) is applied
    to every recurrent layer's output only when ``dropout_rng`` is given.
    """
    inputs = _check_inputs(model, inputs)
    cfg = model.cfg
    B, T = inputs.shape
    s, I = cfg.hidden_size, cfg.vocab_size
    dtype = model.dtype
    keep = 1.0 - cfg.dropout_prob
    x_tm = None
    layer_inputs, outputs, masks, internals = [], [], [], []
    for k in range(cfg.layers):
        W, b = model.layer(k)
        if k == 0:
            xw = W[:I][inputs.T] + b           # one-hot product is a row gather
            Wh = W[I:]
        else:
            xw = x_tm @ W[:s] + b
            Wh = W[s:]
        h0 = np.zeros((B, s), dtype=dtype)
        if cfg.cell_type == LSTM:
            hs, internal = _lstm_seq(xw, Wh, h0, np.zeros((B, s), dtype=dtype))
        else:
            hs, internal = _gru_seq(xw, Wh, h0)
        layer_inputs.append(x_tm)
        outputs.append(hs)
        internals.append(internal)
        if dropout_rng is not None and cfg.dropout_prob > 0:
            mask = (dropout_rng.random(hs.shape) < keep).astype(dtype) / dtype.type(keep)
            x_tm = hs * mask
        else:
            mask = None
            x_tm = hs
        masks.append(mask)
    logits = x_tm @ model.params["out.W"] + model.params["out.b"]
    probs = softmax(logits).transpose(1, 0, 2)
    return probs, ForwardCache(inputs, layer_inputs, outputs, masks, internals, x_tm, probs)


def stacked_forward(model: Model, inputs: np.ndarray,
                    dropout_rng: Optional[np.random.Generator] = None) -> np.ndarray:
    return forward(model, inputs, dropout_rng)[0]


def _targets_check(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets)
    if probs.ndim != 3 or targets.shape != probs.shape[:2]:
        raise ShapeMismatch(f"probs {probs.shape} and targets {targets.shape} disagree")
    return targets


def loss(probs: np.ndarray, targets: np.ndarray, kind: str = BCE_LOSS) -> float:
    """Mean loss over all batch x seq_len positions (float64 accumulation).

    ``kind="bce"`` sums ``y log p + (1 - y) log(1 - p)`` over every class of
    the softmax vector; ``kind="categorical"`` keeps only the target term.
    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``.
    """
    targets = _targets_check(probs, targets)
    p = np.clip(probs.astype(np.float64), CLAMP, 1.0 - CLAMP)
    n = targets.size
    p_t = np.take_along_axis(p, targets[..., None], axis=-1)[..., 0]
    if kind == CATEGORICAL_LOSS:
        return float(-np.log(p_t).sum() / n)
    if kind != BCE_LOSS:
        raise ValueError(f"unknown loss kind {kind!r}")
    total = np.log1p(-p).sum() - np.log1p(-p_t).sum() + np.log(p_t).sum()
    return float(-total / n)


def loss_grad_logits(probs: np.ndarray, targets: np.ndarray, kind: str = BCE_LOSS) -> np.ndarray:
    """Gradient of :func:`loss` with respect to the pre-softmax logits."""
    targets = _targets_check(probs, targets)
    n = targets.size
    p = probs.astype(np.float64)
    if kind == CATEGORICAL_LOSS:
        dz = p.copy()
        np.put_along_axis(dz, targets[..., None],
                          np.take_along_axis(p, targets[..., None], axis=-1) - 1.0, axis=-1)
        return (dz / n).astype(probs.dtype)
    if kind != BCE_LOSS:
        raise ValueError(f"unknown loss kind {kind!r}")
    # d/dp of -sum_j [y log p + (1-y) log(1-p)] is 1/(1-p) off-target, -1/p on target;
    # zero where the clamp is active
    active = (p > CLAMP) & (p < 1.0 - CLAMP)
    g = np.zeros_like(p)
    np.divide(1.0, 1.0 - p, out=g, where=active)
    p_t = np.take_along_axis(p, targets[..., None], axis=-1)
    g_t = np.where((p_t > CLAMP) & (p_t < 1.0 - CLAMP), -1.0 / p_t, 0.0)
    np.put_along_axis(g, targets[..., None], g_t, axis=-1)
    dz = p * (g - (p * g).sum(axis=-1, keepdims=True))
    return (dz / n).astype(probs.dtype)


def backward(model: Model, cache: Optional[ForwardCache], targets: np.ndarray,
             kind: str = BCE_LOSS) -> Dict[str, np.ndarray]:
    """Backpropagation through time over the cached forward pass."""
    if cache is None:
        raise MissingCache("backward() needs the cache returned by forward()")
    cfg = model.cfg
    s, I = cfg.hidden_size, cfg.vocab_size
    dlogits = loss_grad_logits(cache.probs, targets, kind).transpose(1, 0, 2)  # [T,B,I]
    T, B, _ = dlogits.shape
    grads: Dict[str, np.ndarray] = {}
    top = cache.top.reshape(T * B, s)
    grads["out.W"] = top.T @ dlogits.reshape(T * B, I)
    grads["out.b"] = dlogits.reshape(T * B, I).sum(axis=0)
    dX = dlogits @ model.params["out.W"].T
    for k in range(cfg.layers - 1, -1, -1):
        W, _ = model.layer(k)
        if cache.masks[k] is not None:
            dX = dX * cache.masks[k]
        hs = cache.layer_outputs[k]
        h0 = np.zeros((B, s), dtype=hs.dtype)
        n_in = I if k == 0 else s
        Wh = W[n_in:]
        if cfg.cell_type == LSTM:
            da, dWh = _lstm_seq_backward(dX, hs, h0, Wh, cache.internals[k])
        else:
            da, dWh = _gru_seq_backward(dX, hs, h0, Wh, cache.internals[k])
        G = da.shape[-1]
        flat = da.reshape(T * B, G)
        dW = np.empty_like(W)
        dW[n_in:] = dWh
        if k == 0:
            onehot = np.eye(I, dtype=da.dtype)[cache.inputs.T.reshape(-1)]
            dW[:I] = onehot.T @ flat
        else:
            x = cache.layer_inputs[k]
            dW[:s] = x.reshape(T * B, s).T @ flat
            dX = da @ W[:s].T
        grads[f"layer{k}.W"] = dW
        grads[f"layer{k}.b"] = flat.sum(axis=0)
    return {name: grads[name] for name in model.params}


def loss_and_grads(model: Model, inputs: np.ndarray, targets: np.ndarray,
                   kind: str = BCE_LOSS,
                   dropout_rng: Optional[np.random.Generator] = None):
    probs, cache = forward(model, inputs, dropout_rng)
    return loss(probs, targets, kind), backward(model, cache, targets, kind)


# --- single-stream stepping, used for sampling ------------------------------------


def zero_state(model: Model, batch: int = 1):
    s = model.cfg.hidden_size
    dt = model.dtype
    if model.cfg.cell_type == LSTM:
        return [(np.zeros((batch, s), dt), np.zeros((batch, s), dt)) for _ in range(model.cfg.layers)]
    return [np.zeros((batch, s), dt) for _ in range(model.cfg.layers)]


def step_logits(model: Model, indices: np.ndarray, state) -> Tuple[np.ndarray, list]:
    """Advance every stream by one input character; returns ``(logits, new_state)``."""
    cfg = model.cfg
    I = cfg.vocab_size
    W0, b0 = model.layer(0)
    new_state = []
    x = None
    for k in range(cfg.layers):
        W, b = model.layer(k)
        if k == 0:
            # one-hot input: gather rows instead of multiplying
            n_in = I
            pre_x = W0[:I][indices]
        else:
            n_in = cfg.hidden_size
            pre_x = x @ W[:n_in]
        Wh = W[n_in:]
        s = cfg.hidden_size
        if cfg.cell_type == LSTM:
            h_prev, c_prev = state[k]
            a = pre_x + h_prev @ Wh + b
            sg = sigmoid(a[:, :3 * s])
            g = np.tanh(a[:, 3 * s:])
            c = sg[:, s:2 * s] * c_prev + sg[:, :s] * g
            h = sg[:, 2 * s:] * np.tanh(c)
            new_state.append((h, c))
        else:
            h_prev = state[k]
            zr = sigmoid(pre_x[:, :2 * s] + h_prev @ Wh[:, :2 * s] + b[:2 * s])
            cand = np.tanh(pre_x[:, 2 * s:] + (zr[:, s:] * h_prev) @ Wh[:, 2 * s:] + b[2 * s:])
            z = zr[:, :s]
            h = h_prev + z * (cand - h_prev)
            new_state.append(h)
        x = h
    logits = x @ model.params["out.W"] + model.params["out.b"]
    return logits, new_state
