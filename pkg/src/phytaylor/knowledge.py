"""Partially known system matrices and the first-layer editing masks."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, ParseError
from .monomial import MonomialBasis, build_basis

log = logging.getLogger(__name__)

UNKNOWN = "*"


@dataclass(frozen=True, eq=False)
class KnowledgeSpec:
    """Matrix over the monomial basis whose entries are known reals or unknown.

    ``known[i, j]`` says whether entry (i, j) is a known parameter, ``values``
    holds its value (NaN where unknown).  A known zero is different from an
    unknown entry.
    """

    out_dim: int
    basis: MonomialBasis
    known: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        shape = (self.out_dim, len(self.basis))
        known = np.asarray(self.known, dtype=bool).copy()
        values = np.asarray(self.values, dtype=float).copy()
        if known.shape != shape or values.shape != shape:
            raise DimensionMismatch(
                f"knowledge matrix must be {shape}, got {known.shape} / {values.shape}"
            )
        if not np.all(np.isfinite(values[known])):
            raise ParseError("known entries must be finite")
        values[~known] = np.nan
        known.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "known", known)
        object.__setattr__(self, "values", values)
        if known.all():
            log.warning("every entry is known; the model has nothing to learn")

    @property
    def input_dim(self) -> int:
        return self.basis.input_dim

    @property
    def order(self) -> int:
        return self.basis.order

    @property
    def n_known(self) -> int:
        return int(self.known.sum())

    @classmethod
    def unknown(cls, out_dim: int, input_dim: int, order: int) -> "KnowledgeSpec":
        basis = build_basis(input_dim, order)
        shape = (out_dim, len(basis))
        return cls(out_dim, basis, np.zeros(shape, bool), np.full(shape, np.nan))

    @classmethod
    def from_rows(cls, rows: Sequence[Sequence], input_dim: int, order: int):
        """Build from rows of tokens: a real (known) or ``"*"`` (unknown)."""
        basis = build_basis(input_dim, order)
        L = len(basis)
        known = np.zeros((len(rows), L), bool)
        values = np.full((len(rows), L), np.nan)
        for i, row in enumerate(rows):
            if len(row) != L:
                raise ParseError(f"knowledge row {i + 1} has {len(row)} entries, expected {L}")
            for j, tok in enumerate(row):
                if isinstance(tok, str) and tok.strip() == UNKNOWN:
                    continue
                try:
                    v = float(tok)
                except (TypeError, ValueError):
                    raise ParseError(
                        f"knowledge row {i + 1}, column {j + 1}: bad token {tok!r}"
                    ) from None
                known[i, j] = True
                values[i, j] = v
        return cls(len(rows), basis, known, values)

    def to_rows(self) -> list[list[str]]:
        return [
            [repr(float(v)) if k else UNKNOWN for k, v in zip(krow, vrow)]
            for krow, vrow in zip(self.known, self.values)
        ]

    def fill(self, unknown_values: np.ndarray) -> np.ndarray:
        """A full matrix with the unknown entries taken from ``unknown_values``."""
        return np.where(self.known, np.nan_to_num(self.values), unknown_values)


@dataclass(frozen=True, eq=False)
class EditedMasks:
    K: np.ndarray
    M: np.ndarray
    a: np.ndarray


def first_layer_masks(spec: KnowledgeSpec) -> EditedMasks:
    K = np.where(spec.known, np.nan_to_num(spec.values), 0.0)
    M = (~spec.known).astype(float)
    a = (M.sum(axis=1) > 0).astype(float)
    return EditedMasks(K, M, a)


def dependency_sets(spec: KnowledgeSpec, masks: EditedMasks | None = None) -> list[frozenset[int]]:
    """Input-monomial indices each first-layer output can depend on."""
    masks = masks or first_layer_masks(spec)
    dep = (masks.K != 0) | (masks.M != 0)
    return [frozenset(int(v) for v in np.flatnonzero(row)) for row in dep]


def example1_spec() -> KnowledgeSpec:
    """Velocity / friction / safety example over x = [p, v, m], r = 2."""
    rows = [
        "* * * * * * * * * *".split(),
        "* 0 * * 0 0 0 * * *".split(),
        "* 0 * 0 0 0 0 * 0 0".split(),
    ]
    return KnowledgeSpec.from_rows(rows, input_dim=3, order=2)

