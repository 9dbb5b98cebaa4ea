"""Bilinear group-membership scores over appearance maps.

The score of a view pair is sum_h wh[h] * (a_h^T W b_h) where a_h, b_h are
the word columns of the two appearance maps at location h.  The full
(|z_i|*|z_j|) x |h| pairwise co-occurrence matrix is never materialized;
the two collapsed feature forms below contract it away.  A group of M
views scores as the coefficient-weighted sum over its unordered view
pairs, and the group is declared same-label iff the score is >= 0.

All contractions densify the (k x |h|) maps and accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .encoding import AppearanceMap, KernelParams, _same_grid
from .vocab import Vocabulary


@dataclass(frozen=True)
class PairWeights:
    """Word-pair weight matrix for one ordered (low, high) view pair."""

    view_pair: tuple[int, int]
    matrix: np.ndarray  # (k_i, k_j) float64

    def __post_init__(self) -> None:
        if self.view_pair[0] >= self.view_pair[1]:
            raise ValueError("view pair must be ordered (low, high)")
        if self.matrix.ndim != 2:
            raise ValueError("pair weights must be a matrix")
        if not np.isfinite(self.matrix).all():
            raise ValueError("pair weights must be finite")


@dataclass(frozen=True)
class SharedWeights:
    """Location weights shared by every view pair."""

    vector: np.ndarray  # (|h|,) float64

    def __post_init__(self) -> None:
        if self.vector.ndim != 1:
            raise ValueError("shared weights must be a vector")
        if not np.isfinite(self.vector).all():
            raise ValueError("shared weights must be finite")


@dataclass(frozen=True)
class PairCoefficients:
    """Nonnegative importance of each unordered view pair."""

    beta: Mapping[tuple[int, int], float]

    def __post_init__(self) -> None:
        for pair, b in self.beta.items():
            if pair[0] >= pair[1]:
                raise ValueError("coefficient keys must be ordered (low, high)")
            if not (b >= 0.0):
                raise ValueError(f"beta for pair {pair} must be >= 0, got {b}")

    def __getitem__(self, pair: tuple[int, int]) -> float:
        return self.beta[pair]


@dataclass(frozen=True)
class BilinearModel:
    pair_weights: Mapping[tuple[int, int], PairWeights]
    shared: SharedWeights
    coeffs: PairCoefficients
    vocabs: Mapping[int, Vocabulary] | None
    kernel: KernelParams
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for pair in self.coeffs.beta:
            if pair not in self.pair_weights:
                raise ValueError(f"coefficient without weights for pair {pair}")
        if self.vocabs is not None:
            for (i, j), pw in self.pair_weights.items():
                ki, kj = self.vocabs[i].k, self.vocabs[j].k
                if pw.matrix.shape != (ki, kj):
                    raise ValueError(
                        f"pair {(i, j)} weights {pw.matrix.shape} != vocab dims {(ki, kj)}"
                    )

    @property
    def views(self) -> list[int]:
        seen: set[int] = set()
        for i, j in self.pair_weights:
            seen.update((i, j))
        return sorted(seen)


def _check_pair(a: AppearanceMap, b: AppearanceMap, w: PairWeights) -> None:
    if not _same_grid(a, b):
        raise ValueError("appearance maps do not share a location grid")
    if w.matrix.shape != (a.k, b.k):
        raise ValueError(
            f"pair weights {w.matrix.shape} do not match map dims ({a.k}, {b.k})"
        )


def collapsed_pair_feature(
    a: AppearanceMap, b: AppearanceMap, wh: SharedWeights
) -> np.ndarray:
    """Word-pair feature v with v[(z_i, z_j)] = sum_h wh[h] a[z_i,h] b[z_j,h].

    For any flattened weight matrix w, w . v equals the pair score, which
    makes the word-pair block a plain linear problem once wh is fixed.
    """
    if a.n_locations != b.n_locations or not _same_grid(a, b):
        raise ValueError("appearance maps do not share a location grid")
    if wh.vector.shape[0] != a.n_locations:
        raise ValueError("shared weights do not match the location grid")
    ad = a.dense()
    bd = b.dense()
    return ((ad * wh.vector[None, :]) @ bd.T).ravel()


def collapsed_location_feature(
    a: AppearanceMap, b: AppearanceMap, w: PairWeights
) -> np.ndarray:
    """Location feature u with u[h] = a_h^T W b_h; wh . u is the pair score."""
    _check_pair(a, b, w)
    ad = a.dense()
    bd = b.dense()
    return np.einsum("zh,zh->h", ad, w.matrix @ bd)


def pair_score(
    a: AppearanceMap, b: AppearanceMap, w: PairWeights, wh: SharedWeights
) -> float:
    """Bilinear score of one view pair: sum_h wh[h] * (a_h^T W b_h)."""
    u = collapsed_location_feature(a, b, w)
    if wh.vector.shape[0] != u.shape[0]:
        raise ValueError("shared weights do not match the location grid")
    return float(wh.vector @ u)


def group_score(maps: Mapping[int, AppearanceMap], model: BilinearModel) -> float:
    """Coefficient-weighted sum of pair scores over the model's view pairs."""
    total = 0.0
    for (i, j), beta in model.coeffs.beta.items():
        if i not in maps or j not in maps:
            raise ValueError(f"missing appearance map for view pair {(i, j)}")
        total += beta * pair_score(maps[i], maps[j], model.pair_weights[(i, j)], model.shared)
    return total


def is_same_group(score: float) -> bool:
    """Decision rule: a group is same-label iff its score is >= 0."""
    return score >= 0.0
