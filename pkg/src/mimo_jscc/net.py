"""Small fully-connected networks with explicit forward/backward passes.

The layer vocabulary is deliberately tiny: affine layers, softplus hidden
activations, and an optional logistic squash on the output.  Everything runs
in float64 so analytic gradients can be checked against central finite
differences to tight tolerance.
"""

from __future__ import annotations

import json
import struct

import numpy as np


def softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Mlp:
    """Affine stack with softplus between layers; output linear or sigmoid."""

    def __init__(self, dims: tuple[int, ...], rng: np.random.Generator, output: str = "linear"):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if output not in ("linear", "sigmoid"):
            raise ValueError(f"unknown output activation {output!r}")
        self.dims = tuple(int(d) for d in dims)
        self.output = output
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a (batch, in_dim) input."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"expected input dim {self.dims[0]}, got {x.shape[1]}")
        cache = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = x @ w + b
            last = i == self.num_layers - 1
            if not last:
                out = softplus(z)
                deriv = sigmoid(z)  # d softplus / dz
            elif self.output == "sigmoid":
                out = sigmoid(z)
                deriv = out * (1.0 - out)
            else:
                out = z
                deriv = None
            cache.append((x, deriv))
            x = out
        return x, cache

    def backward(self, grad_out: np.ndarray, cache):
        """Returns (grad_input, grads) with grads flattened in parameter order."""
        g = np.atleast_2d(grad_out)
        grads_w = [None] * self.num_layers
        grads_b = [None] * self.num_layers
        for i in range(self.num_layers - 1, -1, -1):
            layer_in, deriv = cache[i]
            if deriv is not None:
                g = g * deriv
            grads_w[i] = layer_in.T @ g
            grads_b[i] = g.sum(axis=0)
            g = g @ self.weights[i].T
        return g, self._flatten(grads_w, grads_b)

    # -- flat parameter vector (declaration order: W0, b0, W1, b1, ...) --

    def _flatten(self, ws, bs) -> np.ndarray:
        chunks = []
        for w, b in zip(ws, bs):
            chunks.append(w.ravel())
            chunks.append(b.ravel())
        return np.concatenate(chunks)

    def get_params(self) -> np.ndarray:
        return self._flatten(self.weights, self.biases)

    def set_params(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.param_count,):
            raise ValueError(f"expected {self.param_count} params, got {flat.shape}")
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = flat[pos:pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = flat[pos:pos + b.size].copy()
            pos += b.size

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


class Adam:
    """Adaptive-moment gradient descent with the standard defaults."""

    def __init__(self, num_params: int, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = np.zeros(num_params)
        self.v = np.zeros(num_params)
        self.t = 0

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads * grads
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


_CKPT_MAGIC = b"MJCP"


def save_flat_checkpoint(path, header: dict, params: np.ndarray) -> None:
    """Binary checkpoint: JSON header, then raw float64 params in declaration order."""
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(params, dtype=np.float64).tobytes())


def load_flat_checkpoint(path) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (length,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(length).decode())
        params = np.frombuffer(fh.read(), dtype=np.float64).copy()
    return header, params
