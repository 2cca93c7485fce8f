"""Fully connected, LSTM, dropout and one-hot embedding building blocks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import ndcore as nd
from .ndcore import Parameter, ShapeError, Tensor

ACTIVATIONS = ("relu", "softmax", "identity")
GATES = ("i", "f", "o", "g")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, activation: str = "relu",
                 rng: np.random.Generator | None = None, name: str = "dense"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.weight = Parameter(glorot_uniform(rng, in_dim, out_dim), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_dim), name=f"{name}.bias")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(self, x)


def dense_forward(layer: DenseLayer, x) -> Tensor:
    x = nd.as_tensor(x)
    if x.data.ndim != 2 or x.shape[1] != layer.in_dim:
        raise ShapeError(f"dense: expected (batch, {layer.in_dim}) input, got {x.shape}")
    z = nd.add_bias(nd.matmul(x, layer.weight), layer.bias)
    if layer.activation == "relu":
        return nd.relu(z)
    if layer.activation == "softmax":
        return nd.softmax(z)
    return z


class LstmLayer:
    """Standard forget-gate LSTM without peepholes.

    The four gate blocks are stored side by side in ``W`` (in x 4h), ``U``
    (h x 4h) and ``b`` (4h) in the order i, f, o, g so one step costs two
    matmuls; :meth:`block` exposes each gate's view.
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator | None = None,
                 forget_bias: float = 1.0, name: str = "lstm"):
        if hidden < 1 or in_dim < 1:
            raise ValueError("LSTM dimensions must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.hidden_size = hidden
        self.W = Parameter(np.concatenate([glorot_uniform(rng, in_dim, hidden) for _ in GATES], axis=1),
                           name=f"{name}.W")
        self.U = Parameter(np.concatenate([glorot_uniform(rng, hidden, hidden) for _ in GATES], axis=1),
                           name=f"{name}.U")
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = forget_bias
        self.b = Parameter(b, name=f"{name}.b")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    def block(self, which: str, gate: str) -> np.ndarray:
        """View of one gate block, e.g. ``block("W", "f")`` is W_f."""
        k = GATES.index(gate)
        h = self.hidden_size
        arr = getattr(self, which).data
        return arr[..., k * h:(k + 1) * h]

    def parameters(self) -> list[Parameter]:
        return [self.W, self.U, self.b]

    def zero_state(self, batch: int) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden_size))
        return Tensor(z), Tensor(z.copy())


def lstm_step(layer: LstmLayer, x_t, h_prev, c_prev) -> tuple[Tensor, Tensor]:
    x_t, h_prev, c_prev = nd.as_tensor(x_t), nd.as_tensor(h_prev), nd.as_tensor(c_prev)
    h = layer.hidden_size
    if x_t.data.ndim != 2 or x_t.shape[1] != layer.in_dim:
        raise ShapeError(f"lstm: expected (batch, {layer.in_dim}) input, got {x_t.shape}")
    want = (x_t.shape[0], h)
    if h_prev.shape != want or c_prev.shape != want:
        raise ShapeError(f"lstm: state shapes {h_prev.shape}, {c_prev.shape} != {want}")
    z = nd.add_bias(nd.add(nd.matmul(x_t, layer.W), nd.matmul(h_prev, layer.U)), layer.b)
    i = nd.sigmoid(nd.slice_cols(z, 0, h))
    f = nd.sigmoid(nd.slice_cols(z, h, 2 * h))
    o = nd.sigmoid(nd.slice_cols(z, 2 * h, 3 * h))
    g = nd.tanh(nd.slice_cols(z, 3 * h, 4 * h))
    c_t = nd.add(nd.mul(f, c_prev), nd.mul(i, g))
    h_t = nd.mul(o, nd.tanh(c_t))
    return h_t, c_t


@dataclass
class SequenceBatch:
    """Time-major batch: ``steps[t]`` is (batch, dim); ``mask[t, b]`` flags valid steps."""

    steps: list
    mask: np.ndarray | None = None
    lengths: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not self.steps:
            raise ValueError("empty sequence")
        batch = self.steps[0].shape[0]
        if self.lengths is None and self.mask is None:
            self.lengths = np.full(batch, len(self.steps), dtype=np.int64)
        if self.mask is None:
            self.mask = mask_from_lengths(self.lengths, len(self.steps))
        if self.lengths is None:
            self.lengths = self.mask.sum(axis=0).astype(np.int64)
        if not np.array_equal(self.mask, mask_from_lengths(self.lengths, len(self.steps))):
            raise ValueError("mask inconsistent with lengths")

    @property
    def batch(self) -> int:
        return self.steps[0].shape[0]


def mask_from_lengths(lengths, n_steps: int) -> np.ndarray:
    lengths = np.asarray(lengths)
    return (np.arange(n_steps)[:, None] < lengths[None, :]).astype(np.float64)


def _carry(mask_col: np.ndarray, new: Tensor, old: Tensor) -> Tensor:
    # m * new + (1 - m) * old, with m expanded to the state shape
    m = np.broadcast_to(mask_col[:, None], new.shape).copy()
    return nd.add(nd.mul(new, m), nd.mul(old, 1.0 - m))


def lstm_forward_sequence(stack: Sequence[LstmLayer], seq: SequenceBatch, return_all: bool = False,
                          init_states: Sequence[tuple[Tensor, Tensor]] | None = None,
                          dropout: "DropoutSpec | None" = None, rng: np.random.Generator | None = None):
    """Run a stack of LSTM layers over ``seq``.

    Returns ``(top_hidden, final_states)`` where ``top_hidden`` is the last
    hidden state of the top layer, or a list of every step's top hidden state
    when ``return_all`` is set.  Masked steps carry state through unchanged.
    """
    if not seq.steps:
        raise ValueError("empty sequence")
    for lower, upper in zip(stack, stack[1:]):
        if upper.in_dim != lower.hidden_size:
            raise ShapeError(f"LSTM stack: layer input {upper.in_dim} != previous hidden {lower.hidden_size}")
    batch = seq.batch
    states = list(init_states) if init_states is not None else [layer.zero_state(batch) for layer in stack]
    full_mask = not (seq.mask < 1).any()
    outputs = []
    for t, x in enumerate(seq.steps):
        inp = nd.as_tensor(x)
        for k, layer in enumerate(stack):
            h_prev, c_prev = states[k]
            h_t, c_t = lstm_step(layer, inp, h_prev, c_prev)
            if not full_mask:
                h_t = _carry(seq.mask[t], h_t, h_prev)
                c_t = _carry(seq.mask[t], c_t, c_prev)
            states[k] = (h_t, c_t)
            inp = h_t
            if dropout is not None:
                inp = dropout_apply(dropout, inp, rng)
        outputs.append(inp)
    return (outputs if return_all else outputs[-1]), states


@dataclass
class DropoutSpec:
    rate: float = 0.2
    mode: str = "train"

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"dropout mode must be train or eval, got {self.mode!r}")


def dropout_apply(spec: DropoutSpec, x, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; the identity in eval mode or at rate 0."""
    x = nd.as_tensor(x)
    if spec.mode == "eval" or spec.rate == 0.0:
        return x
    keep = rng.random(x.shape) >= spec.rate
    return nd.mul(x, keep / (1.0 - spec.rate))


def embed_onehot(vocab_size: int, index: int) -> Tensor:
    if not 0 <= index < vocab_size:
        raise IndexError(f"index {index} outside vocabulary of size {vocab_size}")
    v = np.zeros(vocab_size)
    v[index] = 1.0
    return Tensor(v)
