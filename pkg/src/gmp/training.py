"""Alternating optimization of bilinear group-membership models.

Three trainers share the same outer loop: fix all blocks but one, solve
that block as a linear SVM over collapsed features, move on.  Blocks are
the word-pair weights, the shared location weights, and (for the pairwise
decomposition) the nonnegative pair coefficients.  A block update is
committed only if it does not increase the full regularized objective, so
the recorded objective trace is non-increasing by construction even when
an inner solve is truncated by its tolerance.

Modes:

* ``direct-two-view``  - a single word-pair weight block for exactly two
  views, trained against group labels;
* ``multi-view``       - all pairs trained jointly against group labels;
* ``double-view``      - pairs trained independently against per-pair labels.

For two views the multi-view and double-view objectives coincide term for
term, and the two trainers visit identical iterates given identical seeds.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Hashable, Mapping

import numpy as np

from .encoding import AppearanceMap, KernelParams
from .scoring import (
    BilinearModel,
    PairCoefficients,
    PairWeights,
    SharedWeights,
    collapsed_location_feature,
    collapsed_pair_feature,
)
from .solver import SvmProblem, svm_train
from .vocab import Vocabulary

MODES = ("multi-view", "double-view", "direct-two-view")


@dataclass(frozen=True)
class GroupSample:
    """One training tuple: an entity per view plus group and pair labels."""

    entities: Mapping[int, str]
    group_label: int
    pair_labels: Mapping[tuple[int, int], int]

    def __post_init__(self) -> None:
        labels = set(self.pair_labels.values()) | {self.group_label}
        if not labels <= {-1, 1}:
            raise ValueError("labels must be -1 or +1")
        all_match = all(v == 1 for v in self.pair_labels.values())
        if (self.group_label == 1) != all_match:
            raise ValueError("group label must be +1 exactly when all pairs match")


@dataclass(frozen=True)
class TrainConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    mode: str = "multi-view"
    max_outer: int = 20
    outer_tol: float = 1e-4
    n_samples: int = 30000
    pos_fraction: float = 0.5
    seed: int = 0
    svm_tol: float = 1e-5
    svm_max_pass: int = 400
    record_params: bool = False  # snapshot blocks into the trace (tests/debug)

    def __post_init__(self) -> None:
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("regularization weights must be >= 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")
        if not (0.0 < self.pos_fraction < 1.0):
            raise ValueError("pos_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class TrainingData:
    """Encoded entities per view plus the sampled training groups."""

    maps: Mapping[int, Mapping[str, AppearanceMap]]
    samples: list[GroupSample]

    @property
    def views(self) -> list[int]:
        return sorted(self.maps)

    def pair_maps(self, sample: GroupSample, pair: tuple[int, int]):
        i, j = pair
        return self.maps[i][sample.entities[i]], self.maps[j][sample.entities[j]]


@dataclass(frozen=True)
class TraceEntry:
    outer: int
    block: str
    objective: float
    wall_ms: float
    params: dict | None = None


@dataclass(frozen=True)
class TrainingRun:
    model: BilinearModel
    trace: list[TraceEntry]
    converged: bool

    @property
    def objective_trace(self) -> np.ndarray:
        return np.array([e.objective for e in self.trace])


def write_training_log(run: TrainingRun, path: str | Path) -> None:
    """Training log CSV: outer_iter, block, objective, wall_ms."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["outer_iter", "block", "objective", "wall_ms"])
        for e in run.trace:
            writer.writerow([e.outer, e.block, f"{e.objective:.17g}", f"{e.wall_ms:.3f}"])


def sample_groups(
    labels: Mapping[int, Mapping[str, Hashable]],
    n: int,
    pos_fraction: float,
    seed: int = 0,
) -> list[GroupSample]:
    """Draw n training groups, about pos_fraction of them all-same-identity.

    The positive count is exactly round(n * pos_fraction); sample order is
    shuffled.  Positives pick an identity present in every view and one of
    its entities per view; negatives redraw per-view identities until at
    least one pair mismatches.
    """
    views = sorted(labels)
    if len(views) < 2:
        raise ValueError("need at least two views")
    by_identity: dict[int, dict[Hashable, list[str]]] = {}
    for v in views:
        ids: dict[Hashable, list[str]] = {}
        for entity, ident in labels[v].items():
            ids.setdefault(ident, []).append(entity)
        if len(ids) < 2:
            raise ValueError(f"view {v} has fewer than two identities")
        by_identity[v] = {k: sorted(es) for k, es in sorted(ids.items(), key=lambda t: str(t[0]))}
    shared = set.intersection(*(set(by_identity[v]) for v in views))
    if not shared:
        raise ValueError("no identity spans all views; cannot form a positive group")
    shared = sorted(shared, key=str)
    identity_pool = {v: sorted(by_identity[v], key=str) for v in views}

    rng = np.random.default_rng(seed)
    n_pos = int(round(n * pos_fraction))
    flags = np.zeros(n, dtype=bool)
    flags[:n_pos] = True
    flags = flags[rng.permutation(n)]

    pairs = [(views[a], views[b]) for a in range(len(views)) for b in range(a + 1, len(views))]
    samples: list[GroupSample] = []
    for positive in flags:
        if positive:
            ident = shared[rng.integers(len(shared))]
            chosen = {v: ident for v in views}
        else:
            while True:
                chosen = {
                    v: identity_pool[v][rng.integers(len(identity_pool[v]))] for v in views
                }
                if len({str(chosen[v]) for v in views}) > 1:
                    break
        entities = {}
        for v in views:
            cands = by_identity[v][chosen[v]]
            entities[v] = cands[rng.integers(len(cands))]
        pair_labels = {
            (i, j): 1 if chosen[i] == chosen[j] else -1 for (i, j) in pairs
        }
        group = 1 if all(l == 1 for l in pair_labels.values()) else -1
        samples.append(GroupSample(entities=entities, group_label=group, pair_labels=pair_labels))
    return samples


def _solver_seed(base_seed: int, outer: int, block: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=base_seed, spawn_key=(outer, block, index))
    return int(ss.generate_state(1)[0])


def _hinge(margins: np.ndarray) -> float:
    return float(np.maximum(0.0, 1.0 - margins).sum())


class _PairwiseState:
    """Current blocks plus cached per-sample features for one outer sweep."""

    def __init__(self, data: TrainingData, cfg: TrainConfig):
        views = data.views
        self.pairs = [
            (views[a], views[b])
            for a in range(len(views))
            for b in range(a + 1, len(views))
        ]
        self.data = data
        self.cfg = cfg
        first = data.maps[views[0]]
        self.n_locations = next(iter(first.values())).n_locations
        self.k = {v: next(iter(data.maps[v].values())).k for v in views}
        self.w = {
            (i, j): np.ones((self.k[i], self.k[j])) for (i, j) in self.pairs
        }
        self.wh = np.ones(self.n_locations)
        self.beta = np.ones(len(self.pairs))
        self.group_y = np.array([s.group_label for s in data.samples], dtype=np.float64)
        self.pair_y = {
            p: np.array([s.pair_labels[p] for s in data.samples], dtype=np.float64)
            for p in self.pairs
        }
        # per-pair collapsed word-pair features; depend on wh only
        self.cpf: dict[tuple[int, int], np.ndarray] = {}
        # per-pair collapsed location features; depend on w only
        self.clf: dict[tuple[int, int], np.ndarray] = {}
        # per-pair scores under the current (w, wh)
        self.scores: dict[tuple[int, int], np.ndarray] = {}
        # per-block solver warm starts, carried across outer iterations
        self.warm: dict[tuple[str, int], np.ndarray] = {}
        # samples repeat entity pairs (every positive of one identity is the
        # same tuple); collapse each unique pair once and fan out by index
        self.sample_pair_idx: dict[tuple[int, int], np.ndarray] = {}
        self.unique_maps: dict[tuple[int, int], list] = {}
        for p in self.pairs:
            keys = [(s.entities[p[0]], s.entities[p[1]]) for s in data.samples]
            uniq: dict[tuple[str, str], int] = {}
            idx = np.empty(len(keys), dtype=np.int64)
            pairs_maps = []
            for n, key in enumerate(keys):
                if key not in uniq:
                    uniq[key] = len(pairs_maps)
                    pairs_maps.append(self.data.pair_maps(data.samples[n], p))
                idx[n] = uniq[key]
            self.sample_pair_idx[p] = idx
            self.unique_maps[p] = pairs_maps

    def refresh_cpf(self) -> None:
        wh = SharedWeights(self.wh)
        for p in self.pairs:
            uniq = np.asarray(
                [collapsed_pair_feature(a, b, wh) for a, b in self.unique_maps[p]]
            )
            self.cpf[p] = uniq[self.sample_pair_idx[p]]

    def refresh_clf(self) -> None:
        for p in self.pairs:
            w = PairWeights(view_pair=p, matrix=self.w[p])
            uniq = np.asarray(
                [collapsed_location_feature(a, b, w) for a, b in self.unique_maps[p]]
            )
            self.clf[p] = uniq[self.sample_pair_idx[p]]

    def scores_from_cpf(self, w: Mapping[tuple[int, int], np.ndarray]) -> dict:
        return {p: self.cpf[p] @ w[p].ravel() for p in self.pairs}

    def scores_from_clf(self, wh: np.ndarray) -> dict:
        return {p: self.clf[p] @ wh for p in self.pairs}

    def snapshot(self) -> dict | None:
        if not self.cfg.record_params:
            return None
        return {
            "w": {p: self.w[p].copy() for p in self.pairs},
            "wh": self.wh.copy(),
            "beta": self.beta.copy(),
        }

    def objective(self, w, wh, beta, scores) -> float:
        reg = 0.5 * self.cfg.lambda1 * sum(float(np.sum(m * m)) for m in w.values())
        reg += 0.5 * self.cfg.lambda2 * float(wh @ wh)
        reg += 0.5 * self.cfg.lambda3 * float(beta @ beta)
        if self.cfg.mode == "multi-view":
            total = np.zeros(len(self.data.samples))
            for b, p in zip(beta, self.pairs):
                total += b * scores[p]
            return reg + _hinge(self.group_y * total)
        loss = 0.0
        for b, p in zip(beta, self.pairs):
            loss += _hinge(self.pair_y[p] * (b * scores[p]))
        return reg + loss


def train_pairwise(data: TrainingData, cfg: TrainConfig, *,
                   kernel: KernelParams | None = None,
                   vocabs: Mapping[int, Vocabulary] | None = None) -> TrainingRun:
    """Alternating pairwise-decomposition training (multi-view or double-view).

    Per outer iteration: (1) solve all word-pair weights, (2) solve the
    shared location weights, (3) solve the nonnegative pair coefficients.
    All blocks start at ones.  Stops when the relative objective decrease
    over an outer iteration falls below outer_tol, or at max_outer.
    """
    if cfg.mode not in ("multi-view", "double-view"):
        raise ValueError(f"train_pairwise requires a pairwise mode, got {cfg.mode!r}")
    if len(data.views) < 2:
        raise ValueError("need at least two views")
    if not data.samples:
        raise ValueError("no training samples")
    st = _PairwiseState(data, cfg)
    multi = cfg.mode == "multi-view"
    start = time.perf_counter()

    st.refresh_cpf()
    st.scores = st.scores_from_cpf(st.w)
    obj = st.objective(st.w, st.wh, st.beta, st.scores)
    trace = [TraceEntry(0, "init", obj, (time.perf_counter() - start) * 1e3, st.snapshot())]
    converged = False

    for outer in range(1, cfg.max_outer + 1):
        obj_outer_start = obj

        # block 1: word-pair weights
        if multi:
            feats = np.hstack([b * st.cpf[p] for b, p in zip(st.beta, st.pairs)])
            sol = svm_train(
                SvmProblem(feats, st.group_y.astype(int), lam=cfg.lambda1),
                tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
                seed=_solver_seed(cfg.seed, outer, 0, 0),
                warm_start=st.warm.get(("w", 0)),
            )
            st.warm[("w", 0)] = sol.dual
            w_new, offset = {}, 0
            for p in st.pairs:
                size = st.k[p[0]] * st.k[p[1]]
                w_new[p] = sol.weights[offset : offset + size].reshape(st.k[p[0]], st.k[p[1]])
                offset += size
        else:
            w_new = {}
            for idx, p in enumerate(st.pairs):
                sol = svm_train(
                    SvmProblem(st.beta[idx] * st.cpf[p], st.pair_y[p].astype(int), lam=cfg.lambda1),
                    tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
                    seed=_solver_seed(cfg.seed, outer, 0, idx),
                    warm_start=st.warm.get(("w", idx)),
                )
                st.warm[("w", idx)] = sol.dual
                w_new[p] = sol.weights.reshape(st.k[p[0]], st.k[p[1]])
        scores_new = st.scores_from_cpf(w_new)
        cand = st.objective(w_new, st.wh, st.beta, scores_new)
        if cand <= obj:
            st.w, st.scores, obj = w_new, scores_new, cand
        trace.append(TraceEntry(outer, "pair_weights", obj,
                        (time.perf_counter() - start) * 1e3, st.snapshot()))

        # block 2: shared location weights
        st.refresh_clf()
        if multi:
            u = np.zeros((len(data.samples), st.n_locations))
            for b, p in zip(st.beta, st.pairs):
                u += b * st.clf[p]
            sol = svm_train(
                SvmProblem(u, st.group_y.astype(int), lam=cfg.lambda2),
                tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
                seed=_solver_seed(cfg.seed, outer, 1, 0),
                warm_start=st.warm.get(("wh", 0)),
            )
        else:
            stacked = np.vstack([b * st.clf[p] for b, p in zip(st.beta, st.pairs)])
            ys = np.concatenate([st.pair_y[p] for p in st.pairs]).astype(int)
            sol = svm_train(
                SvmProblem(stacked, ys, lam=cfg.lambda2),
                tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
                seed=_solver_seed(cfg.seed, outer, 1, 0),
                warm_start=st.warm.get(("wh", 0)),
            )
        st.warm[("wh", 0)] = sol.dual
        wh_new = sol.weights
        scores_new = st.scores_from_clf(wh_new)
        cand = st.objective(st.w, wh_new, st.beta, scores_new)
        if cand <= obj:
            st.wh, st.scores, obj = wh_new, scores_new, cand
        trace.append(TraceEntry(outer, "shared_weights", obj,
                        (time.perf_counter() - start) * 1e3, st.snapshot()))

        # block 3: nonnegative pair coefficients
        if multi:
            feats = np.stack([st.scores[p] for p in st.pairs], axis=1)
            ys = st.group_y.astype(int)
        else:
            n, np_ = len(data.samples), len(st.pairs)
            feats = np.zeros((n * np_, np_))
            for idx, p in enumerate(st.pairs):
                feats[idx * n : (idx + 1) * n, idx] = st.scores[p]
            ys = np.concatenate([st.pair_y[p] for p in st.pairs]).astype(int)
        sol = svm_train(
            SvmProblem(feats, ys, lam=cfg.lambda3, nonneg=True),
            tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
            seed=_solver_seed(cfg.seed, outer, 2, 0),
            warm_start=st.warm.get(("beta", 0)),
        )
        st.warm[("beta", 0)] = sol.dual
        beta_new = sol.weights
        cand = st.objective(st.w, st.wh, beta_new, st.scores)
        if cand <= obj:
            st.beta, obj = beta_new, cand
        trace.append(TraceEntry(outer, "pair_coefficients", obj,
                        (time.perf_counter() - start) * 1e3, st.snapshot()))

        rel_drop = (obj_outer_start - obj) / (1.0 + abs(obj_outer_start))
        if rel_drop < cfg.outer_tol:
            converged = True
            break
        st.refresh_cpf()
        st.scores = st.scores_from_cpf(st.w)

    model = _assemble_model(st, data, cfg, cfg.mode, kernel, vocabs)
    return TrainingRun(model=model, trace=trace, converged=converged)


def train_direct_two_view(data: TrainingData, cfg: TrainConfig, *,
                          kernel: KernelParams | None = None,
                          vocabs: Mapping[int, Vocabulary] | None = None) -> TrainingRun:
    """Direct bilinear training for exactly two views (no pair coefficients).

    Alternates between the word-pair block (lambda1) and the shared
    location block (lambda2), both against group labels, starting at ones.
    """
    views = data.views
    if len(views) != 2:
        raise ValueError(f"direct-two-view training needs two views, got {len(views)}")
    if not data.samples:
        raise ValueError("no training samples")
    cfg = replace(cfg, mode="multi-view")  # drives the shared objective helper
    st = _PairwiseState(data, cfg)
    st.beta = np.ones(1)
    lam3_off = replace(cfg, lambda3=0.0)
    st.cfg = lam3_off  # direct objective has no coefficient block
    start = time.perf_counter()

    st.refresh_cpf()
    st.scores = st.scores_from_cpf(st.w)
    obj = st.objective(st.w, st.wh, st.beta, st.scores)
    trace = [TraceEntry(0, "init", obj, (time.perf_counter() - start) * 1e3, st.snapshot())]
    converged = False
    pair = st.pairs[0]

    for outer in range(1, cfg.max_outer + 1):
        obj_outer_start = obj

        sol = svm_train(
            SvmProblem(st.cpf[pair], st.group_y.astype(int), lam=cfg.lambda1),
            tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
            seed=_solver_seed(cfg.seed, outer, 0, 0),
            warm_start=st.warm.get(("w", 0)),
        )
        st.warm[("w", 0)] = sol.dual
        w_new = {pair: sol.weights.reshape(st.k[pair[0]], st.k[pair[1]])}
        scores_new = st.scores_from_cpf(w_new)
        cand = st.objective(w_new, st.wh, st.beta, scores_new)
        if cand <= obj:
            st.w, st.scores, obj = w_new, scores_new, cand
        trace.append(TraceEntry(outer, "pair_weights", obj,
                        (time.perf_counter() - start) * 1e3, st.snapshot()))

        st.refresh_clf()
        sol = svm_train(
            SvmProblem(st.clf[pair], st.group_y.astype(int), lam=cfg.lambda2),
            tol=cfg.svm_tol, max_pass=cfg.svm_max_pass,
            seed=_solver_seed(cfg.seed, outer, 1, 0),
            warm_start=st.warm.get(("wh", 0)),
        )
        st.warm[("wh", 0)] = sol.dual
        wh_new = sol.weights
        scores_new = st.scores_from_clf(wh_new)
        cand = st.objective(st.w, wh_new, st.beta, scores_new)
        if cand <= obj:
            st.wh, st.scores, obj = wh_new, scores_new, cand
        trace.append(TraceEntry(outer, "shared_weights", obj,
                        (time.perf_counter() - start) * 1e3, st.snapshot()))

        rel_drop = (obj_outer_start - obj) / (1.0 + abs(obj_outer_start))
        if rel_drop < cfg.outer_tol:
            converged = True
            break
        st.refresh_cpf()
        st.scores = st.scores_from_cpf(st.w)

    model = _assemble_model(st, data, cfg, "direct-two-view", kernel, vocabs)
    return TrainingRun(model=model, trace=trace, converged=converged)


def _assemble_model(st: _PairwiseState, data: TrainingData, cfg: TrainConfig,
                    mode: str, kernel: KernelParams | None,
                    vocabs: Mapping[int, Vocabulary] | None) -> BilinearModel:
    any_map = next(iter(data.maps[data.views[0]].values()))
    if kernel is None:
        kernel = KernelParams(stride=any_map.stride)
    beta_total = float(st.beta.sum())
    meta = {
        "mode": mode,
        "lambda1": cfg.lambda1,
        "lambda2": cfg.lambda2,
        "lambda3": cfg.lambda3,
        "seed": cfg.seed,
        "n_samples": len(data.samples),
        # reporting-only normalization; scoring keeps the raw coefficients
        "beta_normalized": {
            f"{i},{j}": (float(b) / beta_total if beta_total > 0 else 0.0)
            for b, (i, j) in zip(st.beta, st.pairs)
        },
    }
    return BilinearModel(
        pair_weights={
            p: PairWeights(view_pair=p, matrix=st.w[p]) for p in st.pairs
        },
        shared=SharedWeights(st.wh),
        coeffs=PairCoefficients({p: float(b) for b, p in zip(st.beta, st.pairs)}),
        vocabs=dict(vocabs) if vocabs else None,
        kernel=kernel,
        meta=meta,
    )
