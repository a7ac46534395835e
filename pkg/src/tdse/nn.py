"""Small reverse-mode layer set for the Stage-1 networks and the meta ANN.

Only the compositions the extractors need are supported: per-branch 1-D
convolution + batch norm, concatenation, dense layers, a two-layer tanh
RNN and a softmax / cross-entropy head. All arrays are float64 and
batch-first.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DegenerateBatch, EmptySequence, KernelTooLong, ShapeMismatch

BN_EPS = 1e-5
BN_MOMENTUM = 0.9
CHECKPOINT_FORMAT = "tdse-params"
CHECKPOINT_VERSION = 1


def relu(x):
    return np.maximum(x, 0.0)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


# ------------------------------------------------------------ functional ops


def conv1d_forward(x, kernel) -> np.ndarray:
    """out_j = ReLU(sum_k w_k x_{j+k-1}); valid padding, stride 1."""
    x = np.asarray(x, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    if len(kernel) > len(x):
        raise KernelTooLong(f"kernel length {len(kernel)} exceeds input length {len(x)}")
    return relu(sliding_window_view(x, len(kernel)) @ kernel)


@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM


def batchnorm_forward(batch, gamma, beta, mode: str = "train", state: RunningStats | None = None,
                      eps: float = BN_EPS) -> np.ndarray:
    """Per-feature standardisation followed by ``gamma * xhat + beta``.

    Train mode uses batch statistics and updates ``state`` in place; infer
    mode uses ``state``.
    """
    x = np.asarray(batch, dtype=float)
    if mode == "train":
        if x.shape[0] < 2:
            raise DegenerateBatch("batch norm needs at least 2 rows in train mode")
        mu = x.mean(axis=0)
        var = x.var(axis=0)
        if state is not None:
            n = x.shape[0]
            state.mean = state.momentum * state.mean + (1 - state.momentum) * mu
            state.var = state.momentum * state.var + (1 - state.momentum) * var * n / (n - 1)
    elif mode == "infer":
        if state is None:
            raise ValueError("infer mode requires running statistics")
        mu, var = state.mean, state.var
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


def dense_forward(x, weights, bias, activation: str = "relu") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if x.shape[-1] != weights.shape[0] or weights.shape[1] != np.shape(bias)[-1]:
        raise ShapeMismatch(f"x{x.shape} @ W{weights.shape} + b{np.shape(bias)}")
    z = x @ weights + bias
    if activation == "relu":
        return relu(z)
    if activation == "identity":
        return z
    raise ValueError(f"unknown activation {activation!r}")


@dataclass
class RnnParams:
    """Shapes: U (s, h1), W1 (h1, h1), b1 (h1,), V (h1, h2), W2 (h2, h2), b2 (h2,)."""

    U: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    V: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


def rnn_forward(sequence: Sequence, params: RnnParams) -> np.ndarray:
    """Two stacked tanh layers from zero state; returns the last layer-2 state."""
    if len(sequence) == 0:
        raise EmptySequence("sequence must contain at least one step")
    h1 = np.zeros(params.W1.shape[0])
    h2 = np.zeros(params.W2.shape[0])
    for x in sequence:
        h1 = np.tanh(np.asarray(x, dtype=float) @ params.U + h1 @ params.W1 + params.b1)
        h2 = np.tanh(h1 @ params.V + h2 @ params.W2 + params.b2)
    return h2


def softmax_head(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """Bias-corrected Adam; updates ``params`` arrays in place and returns them."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        mhat = m / (1 - state.beta1**t)
        vhat = v / (1 - state.beta2**t)
        p -= state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return params, state


# -------------------------------------------------------------------- layers


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)


class Conv1D(Layer):
    """``filters`` kernels of length ``kernel_len`` with ReLU; output is
    flattened filter-major to (B, filters * (n - F + 1))."""

    def __init__(self, in_len: int, filters: int, kernel_len: int, rng):
        super().__init__()
        if kernel_len > in_len:
            raise KernelTooLong(f"kernel length {kernel_len} exceeds input length {in_len}")
        self.in_len, self.filters, self.kernel_len = in_len, filters, kernel_len
        self.out_len = in_len - kernel_len + 1
        self.params["w"] = glorot(rng, kernel_len, filters, (filters, kernel_len))
        self.zero_grad()

    @property
    def out_width(self) -> int:
        return self.filters * self.out_len

    def forward(self, x, train=True):
        if x.shape[1] != self.in_len:
            raise ShapeMismatch(f"conv expects width {self.in_len}, got {x.shape[1]}")
        win = sliding_window_view(x, self.kernel_len, axis=1)  # (B, L, F)
        pre = win @ self.params["w"].T  # (B, L, filters)
        self._cache = (win, pre)
        return relu(pre).transpose(0, 2, 1).reshape(x.shape[0], -1)

    def backward(self, dout):
        win, pre = self._cache
        b = dout.shape[0]
        dpre = dout.reshape(b, self.filters, self.out_len).transpose(0, 2, 1) * (pre > 0)
        self.grads["w"] += np.einsum("blf,blk->fk", dpre, win)
        dwin = dpre @ self.params["w"]  # (B, L, F)
        dx = np.zeros((b, self.in_len))
        for k in range(self.kernel_len):
            dx[:, k:k + self.out_len] += dwin[:, :, k]
        return dx


class BatchNorm(Layer):
    def __init__(self, width: int, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.params["gamma"] = np.ones(width)
        self.params["beta"] = np.zeros(width)
        self.buffers["running_mean"] = np.zeros(width)
        self.buffers["running_var"] = np.ones(width)
        self.momentum = momentum
        self.zero_grad()

    def forward(self, x, train=True):
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            return (x - self.buffers["running_mean"]) / np.sqrt(self.buffers["running_var"] + BN_EPS) * g + b
        state = RunningStats(self.buffers["running_mean"], self.buffers["running_var"], self.momentum)
        out = batchnorm_forward(x, g, b, "train", state)
        self.buffers["running_mean"], self.buffers["running_var"] = state.mean, state.var
        inv = 1.0 / np.sqrt(x.var(axis=0) + BN_EPS)
        self._cache = ((x - x.mean(axis=0)) * inv, inv)
        return out

    def backward(self, dout):
        xhat, inv = self._cache
        n = dout.shape[0]
        self.grads["gamma"] += np.sum(dout * xhat, axis=0)
        self.grads["beta"] += np.sum(dout, axis=0)
        dxhat = dout * self.params["gamma"]
        return inv / n * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))


class Dense(Layer):
    def __init__(self, n_in: int, n_out: int, rng, activation: str = "relu"):
        super().__init__()
        self.activation = activation
        self.params["W"] = glorot(rng, n_in, n_out, (n_in, n_out))
        self.params["b"] = np.zeros(n_out)
        self.zero_grad()

    def forward(self, x, train=True):
        z = x @ self.params["W"] + self.params["b"]
        self._cache = (x, z)
        return relu(z) if self.activation == "relu" else z

    def backward(self, dout):
        x, z = self._cache
        if self.activation == "relu":
            dout = dout * (z > 0)
        self.grads["W"] += x.T @ dout
        self.grads["b"] += dout.sum(axis=0)
        return dout @ self.params["W"].T


class RNN2(Layer):
    """Two stacked tanh recurrent layers over (B, T, s) input; emits the last
    layer-2 state (B, h2). Gradients are exact backprop through time."""

    def __init__(self, n_in: int, h1: int, h2: int, rng):
        super().__init__()
        self.params.update(
            U=glorot(rng, n_in, h1, (n_in, h1)),
            W1=glorot(rng, h1, h1, (h1, h1)),
            b1=np.zeros(h1),
            V=glorot(rng, h1, h2, (h1, h2)),
            W2=glorot(rng, h2, h2, (h2, h2)),
            b2=np.zeros(h2),
        )
        self.zero_grad()

    def as_params(self) -> RnnParams:
        return RnnParams(**{k: self.params[k] for k in ("U", "W1", "b1", "V", "W2", "b2")})

    def forward(self, x, train=True):
        if x.ndim != 3 or x.shape[1] == 0:
            raise EmptySequence("RNN input must be (batch, steps >= 1, features)")
        p = self.params
        b, t_len, _ = x.shape
        h1 = [np.zeros((b, p["W1"].shape[0]))]
        h2 = [np.zeros((b, p["W2"].shape[0]))]
        for t in range(t_len):
            h1.append(np.tanh(x[:, t] @ p["U"] + h1[-1] @ p["W1"] + p["b1"]))
            h2.append(np.tanh(h1[-1] @ p["V"] + h2[-1] @ p["W2"] + p["b2"]))
        self._cache = (x, h1, h2)
        return h2[-1]

    def backward(self, dout):
        x, h1, h2 = self._cache
        p, g = self.params, self.grads
        dx = np.zeros_like(x)
        dh2 = dout
        dh1_next = np.zeros_like(h1[0])
        for t in range(x.shape[1], 0, -1):
            da2 = dh2 * (1 - h2[t] ** 2)
            g["V"] += h1[t].T @ da2
            g["W2"] += h2[t - 1].T @ da2
            g["b2"] += da2.sum(axis=0)
            dh1 = da2 @ p["V"].T + dh1_next
            dh2 = da2 @ p["W2"].T
            da1 = dh1 * (1 - h1[t] ** 2)
            g["U"] += x[:, t - 1].T @ da1
            g["W1"] += h1[t - 1].T @ da1
            g["b1"] += da1.sum(axis=0)
            dh1_next = da1 @ p["W1"].T
            dx[:, t - 1] = da1 @ p["U"].T
        return dx


def softmax_cross_entropy(z, y):
    """Mean negative log-likelihood and its gradient w.r.t. the logits."""
    probs = softmax_head(z)
    n = len(y)
    loss = -np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None)))
    dz = probs.copy()
    dz[np.arange(n), y] -= 1.0
    return loss, dz / n, probs


# -------------------------------------------------------------------- models


class Model:
    """Base for networks built from the layers above.

    Subclasses set ``self.named_layers`` (ordered name -> Layer) and implement
    ``_forward(inputs, train)`` / ``_backward(dlogits)``.
    """

    named_layers: dict

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": p for ln, layer in self.named_layers.items() for pn, p in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": layer.grads[pn] for ln, layer in self.named_layers.items() for pn in layer.params}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{bn}": b for ln, layer in self.named_layers.items() for bn, b in layer.buffers.items()}

    def zero_grad(self):
        for layer in self.named_layers.values():
            layer.zero_grad()

    def zero_(self):
        """Set every weight and bias to zero (gamma stays 1)."""
        for layer in self.named_layers.values():
            for k, p in layer.params.items():
                if k != "gamma":
                    p[...] = 0.0

    def logits(self, inputs, train=False):
        return self._forward(inputs, train)

    def predict_proba(self, inputs) -> np.ndarray:
        return softmax_head(self._forward(inputs, False))

    def loss_and_grad(self, inputs, y, l2: float = 0.0) -> float:
        self.zero_grad()
        z = self._forward(inputs, True)
        loss, dz, _ = softmax_cross_entropy(z, y)
        self._backward(dz)
        if l2:
            for ln, layer in self.named_layers.items():
                for pn, p in layer.params.items():
                    if p.ndim >= 2:
                        loss += 0.5 * l2 * float(np.sum(p * p))
                        layer.grads[pn] += l2 * p
        return loss

    def state_dict(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state_dict(self, state: dict) -> None:
        for ln, layer in self.named_layers.items():
            for store in (layer.params, layer.buffers):
                for k in store:
                    arr = np.asarray(state[f"{ln}.{k}"], dtype=float)
                    if arr.shape != store[k].shape:
                        raise ShapeMismatch(f"{ln}.{k}: {arr.shape} vs {store[k].shape}")
                    store[k] = arr.copy()
            layer.zero_grad()


class MultiBranchNet(Model):
    """One Conv1D + BatchNorm stack per branch, concatenated, then a ReLU
    dense layer and a 2-way linear output layer."""

    def __init__(self, branch_widths: Sequence[int], filters: int = 4, kernel_len: int = 2,
                 dense_width: int = 16, seed: int = 0, bn_momentum: float = BN_MOMENTUM, n_out: int = 2):
        rng = np.random.default_rng(seed)
        self.branch_widths = list(branch_widths)
        self.named_layers = {}
        concat = 0
        for i, w in enumerate(self.branch_widths):
            f = min(kernel_len, w)
            conv = Conv1D(w, filters, f, rng)
            self.named_layers[f"conv{i}"] = conv
            self.named_layers[f"bn{i}"] = BatchNorm(conv.out_width, bn_momentum)
            concat += conv.out_width
        self.named_layers["dense"] = Dense(concat, dense_width, rng, "relu")
        self.named_layers["out"] = Dense(dense_width, n_out, rng, "identity")
        self._widths = []

    def _forward(self, inputs, train):
        if len(inputs) != len(self.branch_widths):
            raise ShapeMismatch(f"expected {len(self.branch_widths)} branch inputs, got {len(inputs)}")
        parts = []
        for i, x in enumerate(inputs):
            h = self.named_layers[f"conv{i}"].forward(np.asarray(x, dtype=float), train)
            parts.append(self.named_layers[f"bn{i}"].forward(h, train))
        self._widths = [p.shape[1] for p in parts]
        h = self.named_layers["dense"].forward(np.concatenate(parts, axis=1), train)
        return self.named_layers["out"].forward(h, train)

    def _backward(self, dz):
        d = self.named_layers["dense"].backward(self.named_layers["out"].backward(dz))
        grads_in = []
        start = 0
        for i, w in enumerate(self._widths):
            dp = self.named_layers[f"bn{i}"].backward(d[:, start:start + w])
            grads_in.append(self.named_layers[f"conv{i}"].backward(dp))
            start += w
        return grads_in


class RecurrentNet(Model):
    """RNN2 followed by a linear 2-way output layer (softmax applied by the head)."""

    def __init__(self, n_in: int, h1: int = 8, h2: int = 8, seed: int = 0, n_out: int = 2):
        rng = np.random.default_rng(seed)
        self.named_layers = {"rnn": RNN2(n_in, h1, h2, rng), "out": Dense(h2, n_out, rng, "identity")}

    def _forward(self, inputs, train):
        x = inputs[0] if isinstance(inputs, (list, tuple)) else inputs
        return self.named_layers["out"].forward(self.named_layers["rnn"].forward(np.asarray(x, dtype=float), train), train)

    def _backward(self, dz):
        return [self.named_layers["rnn"].backward(self.named_layers["out"].backward(dz))]


class MLP(Model):
    """ReLU hidden layers and a linear output layer."""

    def __init__(self, n_in: int, hidden: Sequence[int], seed: int = 0, n_out: int = 2):
        rng = np.random.default_rng(seed)
        self.named_layers = {}
        prev = n_in
        for i, h in enumerate(hidden):
            self.named_layers[f"h{i}"] = Dense(prev, h, rng, "relu")
            prev = h
        self.named_layers["out"] = Dense(prev, n_out, rng, "identity")

    def _forward(self, inputs, train):
        h = inputs[0] if isinstance(inputs, (list, tuple)) else inputs
        h = np.asarray(h, dtype=float)
        for layer in self.named_layers.values():
            h = layer.forward(h, train)
        return h

    def _backward(self, dz):
        d = dz
        for layer in reversed(list(self.named_layers.values())):
            d = layer.backward(d)
        return [d]


# ------------------------------------------------------------------ training


def _as_list(inputs):
    return list(inputs) if isinstance(inputs, (list, tuple)) else [inputs]


def batch_slices(n: int, batch_size: int, rng: np.random.Generator | None):
    """Shuffled mini-batch index arrays; a trailing batch of one row is merged
    into the previous batch so batch norm always sees >= 2 rows."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    cuts = list(range(0, n, batch_size))
    batches = [order[c:c + batch_size] for c in cuts]
    if len(batches) > 1 and len(batches[-1]) < 2:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def train_model(model: Model, inputs, y, epochs: int = 30, batch_size: int = 32, lr: float = 1e-3,
                seed: int = 0, l2: float = 0.0) -> list[float]:
    """Mini-batch Adam on cross-entropy; returns the per-epoch mean loss."""
    xs = _as_list(inputs)
    y = np.asarray(y, dtype=int)
    n = len(y)
    if n < 2:
        raise DegenerateBatch("need at least 2 training rows")
    rng = np.random.default_rng(seed)
    state = AdamState(lr=lr)
    params = model.parameters()
    history = []
    for _ in range(epochs):
        total = 0.0
        for idx in batch_slices(n, batch_size, rng):
            loss = model.loss_and_grad([x[idx] for x in xs], y[idx], l2)
            adam_step(params, model.gradients(), state)
            total += loss * len(idx)
        history.append(total / n)
    return history


# ------------------------------------------------------------ gradient check


def numerical_gradient(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic, numeric, floor: float = 1e-6) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)."""
    a = np.asarray(analytic)
    n = np.asarray(numeric)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def check_gradients(model: Model, inputs, y, h: float = 1e-5, l2: float = 0.0) -> dict[str, float]:
    """Max relative error per parameter (and per input, keyed ``input{i}``)
    between backprop and central finite differences of the training loss."""
    xs = [np.array(x, dtype=float) for x in _as_list(inputs)]
    y = np.asarray(y, dtype=int)
    buffers = {k: v.copy() for k, v in model.buffers().items()}

    def loss():
        val = model.loss_and_grad(xs, y, l2)
        return val

    model.loss_and_grad(xs, y, l2)
    analytic = {k: g.copy() for k, g in model.gradients().items()}
    z = model._forward(xs, True)
    _, dz, _ = softmax_cross_entropy(z, y)
    model.zero_grad()
    dinputs = model._backward(dz)
    out = {}
    for name, p in model.parameters().items():
        out[name] = relative_error(analytic[name], numerical_gradient(loss, p, h))
    for i, x in enumerate(xs):
        out[f"input{i}"] = relative_error(dinputs[i], numerical_gradient(loss, x, h))
    for k, v in buffers.items():
        ln, bn = k.split(".", 1)
        model.named_layers[ln].buffers[bn] = v
    return out


# --------------------------------------------------------------- checkpoints


def save_checkpoint(path, state: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Versioned JSON dump of shapes + values; float repr makes it round-trip exact."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "arrays": {k: {"shape": list(np.shape(v)), "values": np.asarray(v, dtype=float).ravel().tolist()}
                   for k, v in sorted(state.items())},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
    arrays = {k: np.array(v["values"], dtype=float).reshape(v["shape"]) for k, v in doc["arrays"].items()}
    return arrays, doc.get("meta", {})
