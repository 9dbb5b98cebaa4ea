"""Deterministic synthetic multi-view word-grid data, plus brute-force oracles.

The generator realizes the latent-parts assumption the scoring model is
built on: each identity owns a signature of latent appearance symbols over
a fixed lattice of part anchors, each view renders symbols through its own
word permutation, and each image perturbs the result with bounded spatial
jitter and i.i.d. word corruption.  In the noiseless limit two renderings
of one identity carry identical co-occurrence structure, so positives and
negatives are exactly separable.

The oracle functions recompute appearance maps per pixel pair and group
scores by dense materialization; they are deliberately slow and guarded
to small instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .encoding import VALUE_FLOOR, AppearanceMap, KernelParams
from .scoring import BilinearModel
from .vocab import WordGrid


@dataclass(frozen=True)
class SynthSpec:
    n_views: int = 2
    n_identities: int = 20
    images_per_entity: int = 1
    grid: tuple[int, int] = (24, 12)  # (height, width) pixels
    n_parts: int = 12
    k_words: int = 20
    word_noise: float = 0.0
    jitter: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_views < 2:
            raise ValueError("need at least two views")
        if self.n_identities < 2:
            raise ValueError("need at least two identities")
        if self.images_per_entity < 1:
            raise ValueError("images_per_entity must be >= 1")
        if not (0.0 <= self.word_noise <= 1.0):
            raise ValueError("word_noise must lie in [0, 1]")
        if self.jitter < 0 or self.jitter >= min(self.grid) / 2:
            raise ValueError("jitter must satisfy 0 <= jitter < min(grid)/2")
        if self.n_parts < 1 or self.n_parts > self.grid[0] * self.grid[1]:
            raise ValueError("n_parts must lie in [1, grid area]")
        if self.k_words < 2:
            raise ValueError("k_words must be >= 2")


@dataclass(frozen=True)
class SynthDataset:
    spec: SynthSpec
    grids: Mapping[int, Mapping[str, list[WordGrid]]]  # view -> entity -> shots
    identities: Mapping[int, Mapping[str, int]]  # view -> entity -> identity

    @property
    def views(self) -> list[int]:
        return sorted(self.grids)


def _part_anchors(grid: tuple[int, int], n_parts: int) -> np.ndarray:
    """Evenly spread part anchors on the pixel lattice, deterministic."""
    h, w = grid
    n_rows = int(np.ceil(np.sqrt(n_parts * h / w)))
    n_rows = max(1, min(n_rows, n_parts))
    n_cols = int(np.ceil(n_parts / n_rows))
    rows = np.linspace(h * 0.5 / n_rows, h - 1 - h * 0.5 / n_rows, n_rows)
    cols = np.linspace(w * 0.5 / n_cols, w - 1 - w * 0.5 / n_cols, n_cols)
    anchors = [
        (int(round(r)), int(round(c))) for r in rows for c in cols
    ][:n_parts]
    return np.array(anchors, dtype=np.int64)


def generate(spec: SynthSpec) -> SynthDataset:
    """Render the labeled multi-view word-grid stacks of a SynthSpec.

    Symbol 0 is the identity-independent background; identity signatures
    draw their part symbols from 1..k-1, so cross-view co-occurrence of
    non-background words carries all of the identity signal.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.grid
    anchors = _part_anchors(spec.grid, spec.n_parts)
    signatures = rng.integers(1, spec.k_words, size=(spec.n_identities, spec.n_parts))
    view_map = {v: rng.permutation(spec.k_words) for v in range(spec.n_views)}

    grids: dict[int, dict[str, list[WordGrid]]] = {}
    identities: dict[int, dict[str, int]] = {}
    for v in range(spec.n_views):
        grids[v] = {}
        identities[v] = {}
        for ident in range(spec.n_identities):
            entity = f"id{ident:04d}"
            shots = []
            for _ in range(spec.images_per_entity):
                words = np.full((h, w), view_map[v][0], dtype=np.int64)
                for p, (r, c) in enumerate(anchors):
                    if spec.jitter:
                        r = int(np.clip(r + rng.integers(-spec.jitter, spec.jitter + 1), 0, h - 1))
                        c = int(np.clip(c + rng.integers(-spec.jitter, spec.jitter + 1), 0, w - 1))
                    words[r, c] = view_map[v][signatures[ident, p]]
                if spec.word_noise > 0:
                    corrupt = rng.random((h, w)) < spec.word_noise
                    words = np.where(
                        corrupt, rng.integers(0, spec.k_words, size=(h, w)), words
                    )
                shots.append(WordGrid(words=words, k=spec.k_words))
            grids[v][entity] = shots
            identities[v][entity] = ident
    return SynthDataset(spec=spec, grids=grids, identities=identities)


def oracle_appearance(
    stack: Sequence[WordGrid], params: KernelParams, view: int = 0
) -> np.ndarray:
    """Dense appearance map by direct evaluation over all pixel pairs.

    Returns a (k, n_locations) array: per image, the kernel of the minimum
    chessboard distance from each sampled location to each word's
    occurrences (entries below the sparse-storage floor dropped), averaged
    over the stack.
    """
    first = stack[0]
    h, w, k, s = first.height, first.width, first.k, params.stride
    rows = np.arange(0, h, s)
    cols = np.arange(0, w, s)
    locs = np.array([(r, c) for r in rows for c in cols])
    out = np.zeros((k, len(locs)))
    for grid in stack:
        dense = np.zeros((k, len(locs)))
        for z in range(k):
            occ = np.argwhere(grid.words == z)
            if occ.size == 0:
                continue
            diffs = np.abs(occ[None, :, :] - locs[:, None, :])
            d = diffs.max(axis=2).min(axis=1)
            vals = np.where(d <= params.alpha, np.exp(-d / params.sigma), 0.0)
            vals[vals < VALUE_FLOOR] = 0.0
            dense[z] = vals
        out += dense
    return out / len(stack)


def oracle_pair_score(
    a_dense: np.ndarray, b_dense: np.ndarray, w: np.ndarray, wh: np.ndarray
) -> float:
    """Pair score through explicit co-occurrence materialization."""
    ki, n_loc = a_dense.shape
    kj = b_dense.shape[0]
    phi = np.zeros((ki * kj, n_loc))
    for zi in range(ki):
        for zj in range(kj):
            phi[zi * kj + zj] = a_dense[zi] * b_dense[zj]
    return float(w.ravel() @ phi @ wh)


def oracle_group_score(
    stacks: Mapping[int, Sequence[WordGrid]], model: BilinearModel
) -> float:
    """Group score recomputed from raw word grids by direct summation.

    Guarded to desk-size instances (k <= 10, |h| <= 30, M <= 3); use the
    scoring module for anything larger.
    """
    views = sorted(stacks)
    if len(views) > 3:
        raise ValueError("oracle limited to at most 3 views")
    dense = {}
    for v in views:
        first = stacks[v][0]
        if first.k > 10:
            raise ValueError("oracle limited to k <= 10")
        d = oracle_appearance(stacks[v], model.kernel, view=v)
        if d.shape[1] > 30:
            raise ValueError("oracle limited to |h| <= 30")
        dense[v] = d
    total = 0.0
    for (i, j), beta in model.coeffs.beta.items():
        total += beta * oracle_pair_score(
            dense[i], dense[j], model.pair_weights[(i, j)].matrix, model.shared.vector
        )
    return total


def oracle_group_score_from_maps(
    maps: Mapping[int, AppearanceMap], model: BilinearModel
) -> float:
    """As `oracle_group_score` but starting from already-encoded maps."""
    total = 0.0
    for (i, j), beta in model.coeffs.beta.items():
        a, b = maps[i], maps[j]
        if a.k > 10 or b.k > 10 or a.n_locations > 30:
            raise ValueError("oracle limited to k <= 10 and |h| <= 30")
        total += beta * oracle_pair_score(
            a.dense(), b.dense(), model.pair_weights[(i, j)].matrix, model.shared.vector
        )
    return total
