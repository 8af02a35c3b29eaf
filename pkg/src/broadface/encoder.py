"""Small tanh MLP encoder with a hand-written backward pass."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .linalg import DimensionMismatch

MAGIC = b"BFE1"


@dataclass
class MlpEncoder:
    """Multi-layer perceptron ``f(x; theta)``.

    ``weights[k]`` has shape ``(layer_sizes[k + 1], layer_sizes[k])``. Hidden
    layers use ``tanh``; the output layer is linear.

    ``counters`` tracks how many rows went through :func:`forward` and
    :func:`backward`, which the trainer uses to prove that queued embeddings
    are never re-encoded and never receive gradients.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    counters: dict[str, int] = field(default_factory=lambda: {"forward_rows": 0, "backward_rows": 0})

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def embedding_dim(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"w{k}"] = w
            out[f"b{k}"] = b
        return out

    def copy(self) -> "MlpEncoder":
        return MlpEncoder(
            tuple(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre_activations: list[np.ndarray]
    activations: list[np.ndarray]


def _check_sizes(layer_sizes) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2:
        raise ValueError(f"need at least an input and an output size, got {sizes}")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    return sizes


def init_encoder(layer_sizes, seed: int) -> MlpEncoder:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    sizes = _check_sizes(layer_sizes)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpEncoder(sizes, weights, biases)


def forward(enc: MlpEncoder, x) -> tuple[np.ndarray, ForwardTrace]:
    """Encode one vector ``(d,)`` or a batch ``(n, d)``; output has the same rank."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != enc.input_dim:
        raise DimensionMismatch(f"encoder expects input dim {enc.input_dim}, got shape {x.shape}")
    enc.counters["forward_rows"] += a.shape[0]

    pre, acts = [], [a]
    last = len(enc.weights) - 1
    for k, (w, b) in enumerate(zip(enc.weights, enc.biases)):
        z = a @ w.T + b
        a = z if k == last else np.tanh(z)
        pre.append(z)
        acts.append(a)
    trace = ForwardTrace(acts[0], pre, acts)
    return (a[0] if single else a), trace


def backward(enc: MlpEncoder, trace: ForwardTrace, grad_e) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, summed over the batch."""
    g = np.asarray(grad_e, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    n = trace.inputs.shape[0]
    if g.shape != (n, enc.embedding_dim) or len(trace.pre_activations) != len(enc.weights):
        raise DimensionMismatch(f"grad shape {g.shape} does not match trace of {n} rows")
    enc.counters["backward_rows"] += n

    grads = {}
    last = len(enc.weights) - 1
    for k in range(last, -1, -1):
        if k != last:
            g = g * (1.0 - trace.activations[k + 1] ** 2)
        grads[f"w{k}"] = g.T @ trace.activations[k]
        grads[f"b{k}"] = g.sum(axis=0)
        if k:
            g = g @ enc.weights[k]
    return grads


def save_checkpoint(enc: MlpEncoder, path) -> None:
    """Write ``BFE1`` | u32 layer count | u32 sizes | f64 params (w0, b0, w1, ...)."""
    parts = [MAGIC, struct.pack("<I", len(enc.layer_sizes))]
    parts.append(struct.pack(f"<{len(enc.layer_sizes)}I", *enc.layer_sizes))
    for w, b in zip(enc.weights, enc.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> MlpEncoder:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a BFE1 checkpoint")
    (count,) = struct.unpack_from("<I", raw, 4)
    sizes = _check_sizes(struct.unpack_from(f"<{count}I", raw, 8))
    offset = 8 + 4 * count
    expected = offset + 8 * sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        w = np.frombuffer(raw, dtype="<f8", count=fan_out * fan_in, offset=offset)
        offset += 8 * w.size
        b = np.frombuffer(raw, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * b.size
        weights.append(w.reshape(fan_out, fan_in).astype(np.float64))
        biases.append(b.astype(np.float64))
    return MlpEncoder(sizes, weights, biases)
