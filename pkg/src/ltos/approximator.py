"""Small feedforward approximator with explicit forward and reverse-mode passes.

Both policy levels run on this substrate. Gradients are hand-coded per layer
(the networks are 2-3 layers deep) so that the input-gradient path, which the
high-level update needs, is explicit and testable. All arithmetic is float64.
"""

from __future__ import annotations

import struct

import numpy as np

ACTIVATION_CODES = {"identity": 0, "relu": 1, "softmax": 2}
_CODE_TO_ACTIVATION = {v: k for k, v in ACTIVATION_CODES.items()}


class Approximator:
    """Layer weights, biases and activation tags of one feedforward net."""

    def __init__(self, weights, biases, activations):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("weights, biases and activations must align")
        for act in activations:
            if act not in ACTIVATION_CODES:
                raise ValueError(f"unknown activation {act!r}")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k > 0 and w.shape[1] != weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input size {w.shape[1]} does not chain")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError(f"layer {k}: non-finite parameters")
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activations = list(activations)

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def n_layers(self):
        return len(self.weights)

    def copy(self) -> "Approximator":
        return Approximator(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def init_params(layer_sizes, rng, out_activation="identity", scheme="fan_in_uniform",
                zero_output_weights=False) -> Approximator:
    """Fresh parameters: ReLU hidden layers, zero biases.

    ``fan_in_uniform`` draws weights from U(-1/sqrt(fan_in), +1/sqrt(fan_in));
    ``normal`` draws from N(0, 0.1). ``zero_output_weights`` zeroes the last
    layer's weight matrix so the initial output is exactly its bias.
    """
    weights, biases, activations = [], [], []
    for k in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
        last = k == len(layer_sizes) - 2
        if last and zero_output_weights:
            w = np.zeros((fan_out, fan_in))
        elif scheme == "fan_in_uniform":
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        elif scheme == "normal":
            w = rng.normal(0.0, 0.1, size=(fan_out, fan_in))
        else:
            raise ValueError(f"unknown init scheme {scheme!r}")
        weights.append(w)
        biases.append(np.zeros(fan_out))
        activations.append(out_activation if last else "relu")
    return Approximator(weights, biases, activations)


def _apply_activation(z, act):
    if act == "identity":
        return z
    if act == "relu":
        return np.maximum(z, 0.0)
    # softmax, rowwise and shift-invariant
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def forward(params: Approximator, x) -> np.ndarray:
    """Evaluate the network on a single input (d,) or a batch (B, d)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.in_dim:
        raise ValueError(f"input width {h.shape[1]} != expected {params.in_dim}")
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = _apply_activation(h @ w.T + b, act)
    return h[0] if single else h


def _forward_trace(params, x):
    inputs = []
    pre = []
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        inputs.append(h)
        z = h @ w.T + b
        pre.append(z)
        h = _apply_activation(z, act)
    return inputs, pre, h


def backward(params: Approximator, x, upstream):
    """Reverse-mode gradients of <upstream, output> w.r.t. parameters and input.

    Accepts single inputs (d,) with upstream (out,), or batches (B, d) with
    upstream (B, out). Parameter gradients are summed over the batch; the
    input gradient is returned per sample.
    """
    x = np.asarray(x, dtype=float)
    upstream = np.asarray(upstream, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    up = upstream[None, :] if single else upstream
    if h.shape[1] != params.in_dim or up.shape[1] != params.out_dim:
        raise ValueError("backward shapes inconsistent with the network")
    inputs, pre, out = _forward_trace(params, h)
    d_weights = [None] * params.n_layers
    d_biases = [None] * params.n_layers
    delta = up
    for k in reversed(range(params.n_layers)):
        act = params.activations[k]
        if act == "identity":
            dz = delta
        elif act == "relu":
            dz = delta * (pre[k] > 0.0)
        else:  # softmax
            y = _apply_activation(pre[k], "softmax")
            dz = y * (delta - (delta * y).sum(axis=-1, keepdims=True))
        d_weights[k] = dz.T @ inputs[k]
        d_biases[k] = dz.sum(axis=0)
        delta = dz @ params.weights[k]
    d_input = delta[0] if single else delta
    return (d_weights, d_biases), d_input


def _check_finite_grads(grads):
    d_weights, d_biases = grads
    for dw, db in zip(d_weights, d_biases):
        if not (np.isfinite(dw).all() and np.isfinite(db).all()):
            raise ValueError("non-finite gradients")


def sgd_step(params: Approximator, grads, lr: float) -> Approximator:
    """One plain descent step, in place."""
    _check_finite_grads(grads)
    d_weights, d_biases = grads
    for w, b, dw, db in zip(params.weights, params.biases, d_weights, d_biases):
        w -= lr * dw
        b -= lr * db
    return params


class AdamState:
    """Per-parameter first and second moments plus the step counter."""

    def __init__(self, params: Approximator):
        self.m_w = [np.zeros_like(w) for w in params.weights]
        self.v_w = [np.zeros_like(w) for w in params.weights]
        self.m_b = [np.zeros_like(b) for b in params.biases]
        self.v_b = [np.zeros_like(b) for b in params.biases]
        self.t = 0


def adam_step(params: Approximator, grads, lr: float, state: AdamState,
              beta1=0.9, beta2=0.999, eps=1e-8) -> Approximator:
    """One Adam descent step with bias correction, in place."""
    _check_finite_grads(grads)
    d_weights, d_biases = grads
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k in range(params.n_layers):
        for value, grad, m, v in (
            (params.weights[k], d_weights[k], state.m_w[k], state.v_w[k]),
            (params.biases[k], d_biases[k], state.m_b[k], state.v_b[k]),
        ):
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad ** 2
            value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


class TargetPair:
    """Online parameters plus their slowly tracking target copy."""

    def __init__(self, online: Approximator, target: Approximator | None = None):
        self.online = online
        self.target = online.copy() if target is None else target

    def soft_update(self, tau: float) -> "TargetPair":
        soft_update_params(self.target, self.online, tau)
        return self


def soft_update_params(target: Approximator, online: Approximator, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise."""
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau={tau} outside [0, 1]")
    for tw, ow in zip(target.weights, online.weights):
        tw *= 1.0 - tau
        tw += tau * ow
    for tb, ob in zip(target.biases, online.biases):
        tb *= 1.0 - tau
        tb += tau * ob


# -- checkpoint serialization ------------------------------------------------
# Flat binary layout: magic, layer count, then per layer (in, out, activation
# code) as int64 little-endian, followed by all row-major float64 payloads.

_MAGIC = b"LTOSPARM"


def _pack_one(params: Approximator) -> bytes:
    chunks = [struct.pack("<q", params.n_layers)]
    for w, act in zip(params.weights, params.activations):
        chunks.append(struct.pack("<qqq", w.shape[1], w.shape[0], ACTIVATION_CODES[act]))
    for w, b in zip(params.weights, params.biases):
        chunks.append(w.astype("<f8").tobytes(order="C"))
        chunks.append(b.astype("<f8").tobytes(order="C"))
    return b"".join(chunks)


def _unpack_one(buf: memoryview, offset: int):
    (n_layers,) = struct.unpack_from("<q", buf, offset)
    offset += 8
    shapes = []
    for _ in range(n_layers):
        fan_in, fan_out, code = struct.unpack_from("<qqq", buf, offset)
        offset += 24
        shapes.append((fan_in, fan_out, _CODE_TO_ACTIVATION[code]))
    weights, biases, activations = [], [], []
    for fan_in, fan_out, act in shapes:
        n = fan_out * fan_in
        w = np.frombuffer(buf, dtype="<f8", count=n, offset=offset).reshape(fan_out, fan_in)
        offset += 8 * n
        b = np.frombuffer(buf, dtype="<f8", count=fan_out, offset=offset)
        offset += 8 * fan_out
        weights.append(w.copy())
        biases.append(b.copy())
        activations.append(act)
    return Approximator(weights, biases, activations), offset


def save_params(stack, path) -> None:
    """Write one or several approximators to a flat binary checkpoint."""
    nets = [stack] if isinstance(stack, Approximator) else list(stack)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<q", len(nets)))
        for net in nets:
            fh.write(_pack_one(net))


def load_params(path) -> list:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(_MAGIC)] != _MAGIC:
        raise ValueError(f"{path} is not a parameter checkpoint")
    buf = memoryview(data)
    (count,) = struct.unpack_from("<q", buf, len(_MAGIC))
    offset = len(_MAGIC) + 8
    nets = []
    for _ in range(count):
        net, offset = _unpack_one(buf, offset)
        nets.append(net)
    return nets
