"""Taylor-monomial feature map m(x, r).

Terms are ordered the way the augmentation procedure builds them: the degree-1
block is the input itself, every later block is produced by multiplying entry
``i`` with the tail of the previous block that starts at ``i``'s running index,
and the constant 1 is finally stacked on top.  For ``n = 3, r = 2``::

    [1, x1, x2, x3, x1^2, x1x2, x1x3, x2^2, x2x3, x3^2]

Mask matrices downstream index these terms by position, so the order is part
of the contract and is tagged with ``ORDERING_ID``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidArgument

ORDERING_ID = "tail-product-v1"

# Largest count we hand out; numpy indexes with int64.
MAX_COUNT = 2**63 - 1


@dataclass(frozen=True)
class ExponentVector:
    exponents: tuple[int, ...]

    def __post_init__(self):
        if any(e < 0 for e in self.exponents):
            raise InvalidArgument(f"negative exponent in {self.exponents}")

    @property
    def degree(self) -> int:
        return sum(self.exponents)

    def label(self, names: Sequence[str] | None = None) -> str:
        if self.degree == 0:
            return "1"
        names = names or [f"x{i + 1}" for i in range(len(self.exponents))]
        parts = []
        for name, e in zip(names, self.exponents):
            if e == 1:
                parts.append(name)
            elif e > 1:
                parts.append(f"{name}^{e}")
        return "*".join(parts)


@dataclass(frozen=True)
class MonomialBasis:
    input_dim: int
    order: int
    terms: tuple[ExponentVector, ...]
    ordering_id: str = ORDERING_ID
    # derived lookup tables, filled in __post_init__
    exponents: np.ndarray = field(init=False, repr=False, compare=False)
    _deriv_index: np.ndarray = field(init=False, repr=False, compare=False)
    _blocks: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        E = np.array([t.exponents for t in self.terms], dtype=np.int64)
        E.setflags(write=False)
        object.__setattr__(self, "exponents", E)
        # _deriv_index[k, i] is the position of e_k - unit_i, or -1 when e_k[i] == 0
        position = {t.exponents: k for k, t in enumerate(self.terms)}
        D = np.full(E.shape, -1, dtype=np.int64)
        for k, t in enumerate(self.terms):
            for i, e in enumerate(t.exponents):
                if e > 0:
                    lower = list(t.exponents)
                    lower[i] -= 1
                    D[k, i] = position[tuple(lower)]
        D.setflags(write=False)
        object.__setattr__(self, "_deriv_index", D)
        # term k = term parent[k] * x[factor[k]], grouped by degree for evaluation
        blocks = []
        degree = E.sum(axis=1) if len(E) else E
        for d in range(1, self.order + 1):
            idx = np.flatnonzero(degree == d)
            factor = np.array([int(np.flatnonzero(E[k])[0]) for k in idx], dtype=np.int64)
            blocks.append((idx, D[idx, factor], factor))
        object.__setattr__(self, "_blocks", tuple(blocks))

    def __len__(self) -> int:
        return len(self.terms)

    def index_of(self, exponents: Sequence[int]) -> int:
        for k, t in enumerate(self.terms):
            if t.exponents == tuple(exponents):
                return k
        raise KeyError(tuple(exponents))

    def labels(self, names: Sequence[str] | None = None) -> list[str]:
        return [t.label(names) for t in self.terms]

    def support(self, k: int) -> tuple[int, ...]:
        """Input entries that appear in term ``k``."""
        return tuple(int(i) for i in np.flatnonzero(self.exponents[k]))


def build_basis(input_dim: int, order: int) -> MonomialBasis:
    if input_dim < 1 or order < 1:
        raise InvalidArgument(f"input_dim and order must be >= 1, got ({input_dim}, {order})")
    n = input_dim
    unit = [tuple(int(i == j) for j in range(n)) for i in range(n)]
    block = list(unit)
    terms = list(unit)
    # start[i]: where the products whose smallest factor is entry i begin in `block`
    start = list(range(n))
    for _ in range(2, order + 1):
        new_block, new_start = [], []
        for i in range(n):
            new_start.append(len(new_block))
            for e in block[start[i]:]:
                new_block.append(tuple(a + b for a, b in zip(unit[i], e)))
        block, start = new_block, new_start
        terms.extend(block)
    terms.insert(0, (0,) * n)
    return MonomialBasis(n, order, tuple(ExponentVector(t) for t in terms))


def basis_len(n: int, r: int) -> int:
    """Closed-form term count: sum_{s=1}^{r} (n+s-1)! / ((n-1)! s!) + 1."""
    if n < 1 or r < 1:
        raise InvalidArgument(f"n and r must be >= 1, got ({n}, {r})")
    count = sum(comb(n + s - 1, s) for s in range(1, r + 1)) + 1
    if count > MAX_COUNT:
        raise OverflowError(f"basis length for n={n}, r={r} exceeds int64")
    return count


def _check_x(basis: MonomialBasis, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != basis.input_dim:
        raise DimensionMismatch(
            f"input has {x.shape[-1]} entries, basis expects {basis.input_dim}"
        )
    return x


def evaluate(basis: MonomialBasis, x) -> np.ndarray:
    """Monomial vector for ``x`` of shape (n,) or a batch (B, n)."""
    x = _check_x(basis, x)
    m = np.empty(x.shape[:-1] + (len(basis),))
    m[..., 0] = 1.0
    for idx, parent, factor in basis._blocks:
        m[..., idx] = m[..., parent] * x[..., factor]
    return m


def jacobian(basis: MonomialBasis, x) -> np.ndarray:
    """d m / d x, shape (len, n), or (B, len, n) for batched input.

    Built from the lower-degree monomials already in the basis, so it stays
    exact at x_i = 0.
    """
    x = _check_x(basis, x)
    m = evaluate(basis, x)
    return jacobian_from_values(basis, m)


def jacobian_from_values(basis: MonomialBasis, m: np.ndarray) -> np.ndarray:
    D = basis._deriv_index
    gathered = np.take(m, np.where(D >= 0, D, 0), axis=-1)
    return np.where(D >= 0, basis.exponents * gathered, 0.0)


def cascade_complexity_difference(
    n: int, r: int, intermediate_dims: Sequence[int], orders: Sequence[int]
) -> int:
    """len(m(x, r)) minus the summed augmentation lengths of the cascade."""
    _check_cascade(r, intermediate_dims, orders)
    dims = [n, *intermediate_dims]
    return basis_len(n, r) - sum(basis_len(d, o) for d, o in zip(dims, orders))


def cascade_complexity_closed_form(
    n: int, r: int, intermediate_dims: Sequence[int], orders: Sequence[int]
) -> int:
    """The same difference, evaluated term by term from the closed form."""
    _check_cascade(r, intermediate_dims, orders)
    d = len(orders)
    head = sum(comb(n + s - 1, s) for s in range(orders[0] + 1, r + 1))
    tail = sum(
        comb(nv + s - 1, s)
        for nv, rv in zip(intermediate_dims, orders[1:])
        for s in range(1, rv + 1)
    )
    return head - tail + 1 - d


def _check_cascade(r, intermediate_dims, orders):
    if len(orders) != len(intermediate_dims) + 1:
        raise InvalidArgument("need exactly one more order than intermediate dims")
    if any(o < 1 for o in orders) or any(d < 1 for d in intermediate_dims):
        raise InvalidArgument("orders and intermediate dims must be >= 1")
    if int(np.prod(orders)) != r:
        raise InvalidArgument(f"product of orders {list(orders)} != r = {r}")


def cascade_weight_count(n: int, dims: Sequence[int], orders: Sequence[int]) -> int:
    """Non-constant monomial weights of a cascade with output dims ``dims``."""
    ins = [n, *dims[:-1]]
    return sum(out * (basis_len(i, o) - 1) for i, out, o in zip(ins, dims, orders))
