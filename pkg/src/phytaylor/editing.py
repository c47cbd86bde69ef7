"""Cascade assembly with knowledge embedding and spurious-path cutting.

The first layer takes K, M and a straight from the knowledge spec.  Every later
layer passes the first ``len(y)`` entries of its input through an identity
block of K and cuts, for those rows, every input monomial that can reach a
known first-layer coordinate of the same row.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidArgument, KnowledgeUnrepresentable, PlanInconsistent
from .knowledge import KnowledgeSpec, first_layer_masks
from .monomial import MonomialBasis, build_basis
from .suppressor import SuppressorConfig

ACTIVATIONS = ("tanh", "relu", "identity")


@dataclass(frozen=True)
class LayerPlan:
    out_dim: int
    order: int
    activation: str = "tanh"
    suppressor: SuppressorConfig | None = None

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.activation!r}")
        if self.out_dim < 1 or self.order < 1:
            raise PlanInconsistent(f"out_dim and order must be >= 1: {self}")


@dataclass(eq=False)
class PhnLayer:
    """One edited layer: y = K m + a * act((M * W) m), m = m(chi(x), order)."""

    in_dim: int
    out_dim: int
    order: int
    basis: MonomialBasis
    K: np.ndarray
    M: np.ndarray
    W: np.ndarray
    a: np.ndarray
    activation: str = "tanh"
    suppressor: SuppressorConfig = None  # type: ignore[assignment]

    def __post_init__(self):
        shape = (self.out_dim, len(self.basis))
        for name in ("K", "M", "W"):
            arr = getattr(self, name)
            if arr.shape != shape:
                raise PlanInconsistent(f"{name} has shape {arr.shape}, expected {shape}")
        if self.a.shape != (self.out_dim,):
            raise PlanInconsistent(f"a has shape {self.a.shape}, expected ({self.out_dim},)")
        if self.suppressor is None:
            self.suppressor = SuppressorConfig.inactive(self.in_dim)
        elif len(self.suppressor) != self.in_dim:
            raise PlanInconsistent(
                f"suppressor has {len(self.suppressor)} channels, layer input has {self.in_dim}"
            )

    @property
    def U(self) -> np.ndarray:
        return self.M * self.W

    @property
    def n_trainable(self) -> int:
        return int(np.count_nonzero(self.M))


@dataclass(eq=False)
class PhyTaylorModel:
    layers: list[PhnLayer]
    terminal_out_dim: int
    spec: KnowledgeSpec | None = field(default=None)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def first_order(self) -> int:
        return self.layers[0].order

    def weights(self) -> list[np.ndarray]:
        return [layer.W for layer in self.layers]

    def set_weights(self, weights: Sequence[np.ndarray]) -> None:
        if len(weights) != len(self.layers):
            raise PlanInconsistent("weight list length differs from layer count")
        for layer, W in zip(self.layers, weights):
            W = np.asarray(W, dtype=float)
            if W.shape != layer.W.shape:
                raise PlanInconsistent(f"weight shape {W.shape} != {layer.W.shape}")
            layer.W = W.copy()

    def known_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(known mask, values) over (terminal output, first-layer monomial)."""
        if self.spec is None:
            L = len(self.layers[0].basis)
            return np.zeros((self.terminal_out_dim, L), bool), np.zeros((self.terminal_out_dim, L))
        return self.spec.known, np.nan_to_num(self.spec.values)


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.1) -> np.ndarray:
    """N(0, std^2) with every draw beyond two standard deviations re-drawn."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _init_weights(rng, M, std):
    # masked weights never reach the output; zero them so W is fixed by its trainable part
    return np.where(M != 0, truncated_normal(rng, M.shape, std), 0.0)


def monomial_dependencies(basis: MonomialBasis, input_deps: np.ndarray) -> np.ndarray:
    """Boolean (len(basis), L1): which first-layer monomials each term can reach."""
    uses = basis.exponents > 0
    return (uses.astype(np.int64) @ input_deps.astype(np.int64)) > 0


def _output_dependencies(K, M, mono_deps):
    reach = (K != 0) | (M != 0)
    return (reach.astype(np.int64) @ mono_deps.astype(np.int64)) > 0


def layer_input_dependencies(model: PhyTaylorModel, t: int) -> np.ndarray:
    """Dependency sets of layer ``t``'s input entries (0-based ``t`` >= 1)."""
    if not 1 <= t <= len(model.layers):
        raise InvalidArgument(f"layer index {t} out of range")
    first = model.layers[0]
    deps = np.eye(len(first.basis), dtype=bool)
    for layer in model.layers[:t]:
        mono = deps if layer is first else monomial_dependencies(layer.basis, deps)
        deps = _output_dependencies(layer.K, layer.M, mono)
    return deps


def dependency_closure(model: PhyTaylorModel, t: int) -> np.ndarray:
    """Boolean (terminal_out_dim, len(basis_t)): True where monomial j of layer
    ``t`` (0-based, t >= 1) reaches a known first-layer coordinate of row i."""
    mono = monomial_dependencies(model.layers[t].basis, layer_input_dependencies(model, t))
    return _cut_mask(model.layers[0].M[: model.terminal_out_dim] == 0, mono)


def _cut_mask(known_first: np.ndarray, mono_deps: np.ndarray) -> np.ndarray:
    return (known_first.astype(np.int64) @ mono_deps.T.astype(np.int64)) > 0


def build_model(
    spec: KnowledgeSpec,
    layer_plan: Sequence[LayerPlan],
    seed: int | None = 0,
    rng: np.random.Generator | None = None,
    init_std: float = 0.1,
) -> PhyTaylorModel:
    if not layer_plan:
        raise PlanInconsistent("layer plan is empty")
    rng = rng if rng is not None else np.random.default_rng(seed)
    ny = spec.out_dim
    plan = list(layer_plan)
    if plan[0].order != spec.order:
        raise KnowledgeUnrepresentable(
            f"first layer order {plan[0].order} differs from knowledge order {spec.order}"
        )
    if plan[-1].out_dim != ny:
        raise PlanInconsistent(f"terminal out_dim {plan[-1].out_dim} != {ny}")
    for t, p in enumerate(plan[:-1]):
        if p.out_dim < ny:
            raise PlanInconsistent(f"layer {t + 1} has out_dim {p.out_dim} < {ny}")
    if plan[0].suppressor is not None and plan[0].suppressor.any_active:
        raise PlanInconsistent("the first layer's suppressor must stay inactive")

    first = first_layer_masks(spec)
    out0 = plan[0].out_dim
    pad = out0 - ny
    K = np.vstack([first.K, np.zeros((pad, len(spec.basis)))])
    M = np.vstack([first.M, np.ones((pad, len(spec.basis)))])
    a = np.concatenate([first.a, np.ones(pad)])
    layers = [PhnLayer(spec.input_dim, out0, spec.order, spec.basis, K, M,
                       _init_weights(rng, M, init_std), a, plan[0].activation,
                       SuppressorConfig.inactive(spec.input_dim))]

    known_first = first.M == 0
    deps = _output_dependencies(K, M, np.eye(len(spec.basis), dtype=bool))
    for t, p in enumerate(plan[1:], start=2):
        in_dim = layers[-1].out_dim
        sup = p.suppressor or SuppressorConfig.inactive(in_dim)
        if len(sup) != in_dim:
            raise PlanInconsistent(f"layer {t} suppressor has {len(sup)} channels, expected {in_dim}")
        if spec.n_known and any(sup.active[:ny]):
            raise PlanInconsistent(
                f"layer {t}: suppressing pass-through channels would break the embedded knowledge"
            )
        basis = build_basis(in_dim, p.order)
        L = len(basis)
        K = np.zeros((p.out_dim, L))
        K[np.arange(ny), 1 + np.arange(ny)] = 1.0
        mono = monomial_dependencies(basis, deps)
        M = np.ones((p.out_dim, L))
        M[:ny][_cut_mask(known_first, mono)] = 0.0
        a = np.concatenate([first.a, np.ones(p.out_dim - ny)])
        layers.append(PhnLayer(in_dim, p.out_dim, p.order, basis, K, M,
                               _init_weights(rng, M, init_std), a, p.activation, sup))
        deps = _output_dependencies(K, M, mono)
    return PhyTaylorModel(layers, ny, spec)


def parameter_counts(model: PhyTaylorModel) -> tuple[int, int]:
    trainable = sum(layer.n_trainable for layer in model.layers)
    total = sum(layer.M.size for layer in model.layers)
    return trainable, total - trainable


def dense_parameter_count(dims: Sequence[int]) -> int:
    """Weights plus biases of a fully connected stack with widths ``dims``."""
    return sum((i + 1) * o for i, o in zip(dims[:-1], dims[1:]))
