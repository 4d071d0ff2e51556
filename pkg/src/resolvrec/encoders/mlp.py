"""A small fully connected network with manual backprop and L2-normalized output."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError

DEFAULT_WIDTHS = (128, 96, 64, 48, 40, 32)


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)
    activation: str = "relu"
    frozen: bool = False


@dataclass
class Mlp:
    layers: list[Layer] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.layers[0].W.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    def validate(self) -> None:
        for lower, upper in zip(self.layers, self.layers[1:]):
            if upper.W.shape[1] != lower.W.shape[0]:
                raise ShapeError("adjacent layer dimensions do not chain")
        if self.layers[-1].activation != "identity":
            raise ShapeError("final layer must be linear")

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.W.copy(), l.b.copy(), l.activation, l.frozen) for l in self.layers])

    def freeze_lowest(self, n: int) -> "Mlp":
        for i, layer in enumerate(self.layers):
            layer.frozen = i < n
        return self


def init_mlp(input_dim: int, widths=DEFAULT_WIDTHS, seed: int = 0) -> Mlp:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = input_dim
    for i, width in enumerate(widths):
        bound = 1.0 / np.sqrt(fan_in)
        W = rng.uniform(-bound, bound, size=(width, fan_in))
        b = np.zeros(width)
        layers.append(Layer(W, b, "identity" if i == len(widths) - 1 else "relu"))
        fan_in = width
    return Mlp(layers)


def _l2_rows(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.sqrt(np.einsum("ij,ij->i", Z, Z))
    safe = np.where(norms > 0, norms, 1.0)
    return np.where(norms[:, None] > 0, Z / safe[:, None], 0.0), norms


def mlp_forward(mlp: Mlp, X, return_cache: bool = False):
    """Affine/ReLU chain then row-wise L2 normalization (zero stays zero)."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    H = X[None, :] if single else X
    if H.shape[1] != mlp.input_dim:
        raise ShapeError(f"expected input width {mlp.input_dim}, got {H.shape[1]}")
    inputs, pre = [], []
    for layer in mlp.layers:
        inputs.append(H)
        Z = H @ layer.W.T + layer.b
        pre.append(Z)
        H = np.maximum(Z, 0.0) if layer.activation == "relu" else Z
    Y, norms = _l2_rows(H)
    out = Y[0] if single else Y
    if return_cache:
        return out, (inputs, pre, Y, norms)
    return out


def mlp_backward(mlp: Mlp, cache, dY: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Parameter gradients given dL/dY for the normalized outputs."""
    inputs, pre, Y, norms = cache
    dY = np.atleast_2d(dY)
    safe = np.where(norms > 0, norms, 1.0)
    dH = (dY - Y * np.einsum("ij,ij->i", Y, dY)[:, None]) / safe[:, None]
    dH[norms == 0] = 0.0
    grads = [None] * len(mlp.layers)
    for i in range(len(mlp.layers) - 1, -1, -1):
        layer = mlp.layers[i]
        dZ = dH * (pre[i] > 0) if layer.activation == "relu" else dH
        grads[i] = (dZ.T @ inputs[i], dZ.sum(axis=0))
        if i:
            dH = dZ @ layer.W
    return grads


def sgd_step(mlp: Mlp, grads, lr: float) -> None:
    for layer, (dW, db) in zip(mlp.layers, grads):
        if layer.frozen:
            continue
        layer.W -= lr * dW
        layer.b -= lr * db
