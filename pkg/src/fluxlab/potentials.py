"""Potential vectors: the coordinates of a maximal-entropy state.

A state is labelled by one real Lagrange parameter per conserved charge,
indexed by small integers (0 = particle number / ultra-local charge,
1 = momentum, 2 = energy, higher = further conserved charges). Vectors are
immutable and hashable so backends can cache solved states keyed by them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite, UnknownChargeIndex


@dataclass(frozen=True)
class PotentialVector:
    indices: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.indices) != len(self.values):
            raise DimensionMismatch(
                f"{len(self.indices)} indices vs {len(self.values)} values")
        if len(self.indices) == 0:
            raise DimensionMismatch("empty potential vector")
        if any(not isinstance(i, int) or i < 0 for i in self.indices):
            raise UnknownChargeIndex(f"charge indices must be ints >= 0: {self.indices}")
        if tuple(sorted(set(self.indices))) != self.indices:
            raise DimensionMismatch(
                f"charge indices must be strictly increasing: {self.indices}")
        if any(not math.isfinite(v) for v in self.values):
            raise NonFinite(f"non-finite potential in {self.values}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @classmethod
    def of(cls, mapping: dict[int, float]) -> "PotentialVector":
        idx = tuple(sorted(mapping))
        return cls(idx, tuple(float(mapping[i]) for i in idx))

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices, self.values))

    def __getitem__(self, i: int) -> float:
        try:
            return self.values[self.indices.index(i)]
        except ValueError:
            raise UnknownChargeIndex(f"charge {i} not in {self.indices}") from None

    def get(self, i: int, default: float = 0.0) -> float:
        return self[i] if i in self.indices else default

    def shifted(self, i: int, h: float) -> "PotentialVector":
        """Copy with beta^i displaced by h (used by stencils). A missing
        index is treated as an exact zero and inserted."""
        if i not in self.indices:
            mapping = self.as_dict()
            mapping[i] = h
            return PotentialVector.of(mapping)
        pos = self.indices.index(i)
        vals = list(self.values)
        vals[pos] += h
        return PotentialVector(self.indices, tuple(vals))

    def scaled(self, factor: float) -> "PotentialVector":
        return PotentialVector(self.indices, tuple(factor * v for v in self.values))

    def padded(self, indices) -> "PotentialVector":
        """Copy extended with exact zeros for every index in `indices` not
        already carried. Existing components are never touched."""
        mapping = self.as_dict()
        for i in indices:
            mapping.setdefault(int(i), 0.0)
        return PotentialVector.of(mapping)

    def asarray(self) -> np.ndarray:
        return np.array(self.values, dtype=float)

    def __str__(self):
        inner = ", ".join(f"b{i}={v:g}" for i, v in zip(self.indices, self.values))
        return f"({inner})"
