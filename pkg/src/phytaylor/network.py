"""Forward pass, backpropagation and Jacobians of a PhyTaylorModel.

All routines accept a single input vector or a batch of shape (B, n) and work
on the whole batch at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .editing import PhnLayer, PhyTaylorModel
from .errors import DimensionMismatch, NonFiniteValue
from .monomial import evaluate, jacobian_from_values


def activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z


def activate_grad(kind: str, z: np.ndarray, h: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return 1.0 - h * h
    if kind == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


@dataclass
class LayerTrace:
    x: np.ndarray  # layer input (B, in)
    z: np.ndarray  # suppressed input
    m: np.ndarray  # monomials (B, L)
    pre: np.ndarray  # (M*W) m
    h: np.ndarray  # act(pre)
    y: np.ndarray


@dataclass
class ForwardTrace:
    layers: list[LayerTrace]
    single: bool

    @property
    def output(self) -> np.ndarray:
        y = self.layers[-1].y
        return y[0] if self.single else y


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    inputs: np.ndarray


def _as_batch(model: PhyTaylorModel, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != model.input_dim:
        raise DimensionMismatch(f"input has {x.shape[-1]} entries, model expects {model.input_dim}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteValue("input contains non-finite values", layer=0)
    return x, single


def _layer_forward(layer: PhnLayer, x: np.ndarray) -> LayerTrace:
    z = layer.suppressor.apply(x)
    m = evaluate(layer.basis, z)
    pre = m @ layer.U.T
    h = activate(layer.activation, pre)
    y = m @ layer.K.T + layer.a * h
    return LayerTrace(x, z, m, pre, h, y)


def forward(model: PhyTaylorModel, x) -> tuple[np.ndarray, ForwardTrace]:
    x, single = _as_batch(model, x)
    traces = []
    for t, layer in enumerate(model.layers, start=1):
        with np.errstate(over="ignore", invalid="ignore"):
            tr = _layer_forward(layer, x)
        if not np.all(np.isfinite(tr.y)):
            raise NonFiniteValue(f"layer {t} produced non-finite output", layer=t)
        traces.append(tr)
        x = tr.y
    trace = ForwardTrace(traces, single)
    return trace.output, trace


def predict(model: PhyTaylorModel, x) -> np.ndarray:
    return forward(model, x)[0]


def backward(model: PhyTaylorModel, trace: ForwardTrace, grad_y) -> GradientSet:
    """Gradients of a scalar loss given dL/dy, summed over the batch."""
    g = np.atleast_2d(np.asarray(grad_y, dtype=float))
    expected = trace.layers[-1].y.shape
    if g.shape != expected:
        raise DimensionMismatch(f"dL/dy has shape {g.shape}, expected {expected}")
    grads = [None] * len(model.layers)
    for t in range(len(model.layers) - 1, -1, -1):
        layer, tr = model.layers[t], trace.layers[t]
        dpre = g * layer.a * activate_grad(layer.activation, tr.pre, tr.h)
        grads[t] = (dpre.T @ tr.m) * layer.M
        dm = g @ layer.K + dpre @ layer.U
        if layer.order == 1:
            dz = dm[:, 1:]  # m = [1, z]
        else:
            dz = np.einsum("bl,bli->bi", dm, jacobian_from_values(layer.basis, tr.m))
        g = dz * layer.suppressor.derivative(tr.x)
    inputs = g[0] if trace.single else g
    return GradientSet(grads, inputs)


def _layer_local_jacobian(layer: PhnLayer, tr: LayerTrace) -> np.ndarray:
    """d y / d m for one layer, shape (B, out, L)."""
    gain = layer.a * activate_grad(layer.activation, tr.pre, tr.h)
    return layer.K[None] + gain[:, :, None] * layer.U[None]


def input_jacobian(model: PhyTaylorModel, x) -> np.ndarray:
    """d y / d m(x, r1), first-layer monomials taken as independent coordinates.

    Shape (terminal_out_dim, L1), or (B, terminal_out_dim, L1) for a batch.
    """
    x, single = _as_batch(model, x)
    _, trace = forward(model, x)
    J = _layer_local_jacobian(model.layers[0], trace.layers[0])
    for layer, tr in zip(model.layers[1:], trace.layers[1:]):
        dmdz = jacobian_from_values(layer.basis, tr.m)
        chain = dmdz * layer.suppressor.derivative(tr.x)[:, None, :]
        J = _layer_local_jacobian(layer, tr) @ chain @ J
    return J[0] if single else J


def raw_input_jacobian(model: PhyTaylorModel, x) -> np.ndarray:
    """d y / d x, shape (terminal_out_dim, n) or batched."""
    x, single = _as_batch(model, x)
    J = input_jacobian(model, x)
    first = model.layers[0]
    J = J @ jacobian_from_values(first.basis, evaluate(first.basis, x))
    return J[0] if single else J


def compliance_deviation(model: PhyTaylorModel, x) -> float:
    """Largest |dy_i/dm_j - A_ij| over known (i, j); 0 when nothing is known."""
    known, values = model.known_matrix()
    if not known.any():
        return 0.0
    J = input_jacobian(model, np.atleast_2d(x))
    return float(np.max(np.abs(J[:, known] - values[known])))
