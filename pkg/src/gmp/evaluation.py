"""Ranking and verification metrics, plus the probe/gallery protocol.

Scores over candidate tuples form one tensor axis per view; pairwise match
matrices are obtained by summing or maximizing over the remaining axes.
Ranking ties are broken toward the lower gallery index so CMC curves are
deterministic.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Mapping, Sequence

import numpy as np

from .encoding import AppearanceMap
from .scoring import BilinearModel, pair_score


@dataclass(frozen=True)
class ScoreTensor:
    """Group scores over candidate tuples, one axis per view."""

    view_ids: tuple[int, ...]
    entity_ids: tuple[tuple[str, ...], ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        if len(self.view_ids) != self.values.ndim or len(self.entity_ids) != self.values.ndim:
            raise ValueError("one axis (and entity list) per view required")
        if self.values.shape != tuple(len(e) for e in self.entity_ids):
            raise ValueError("tensor shape must match entity counts")
        if not np.isfinite(self.values).all():
            raise ValueError("scores must be finite")

    def axis_of(self, view: int) -> int:
        try:
            return self.view_ids.index(view)
        except ValueError:
            raise ValueError(f"view {view} not present in tensor") from None


@dataclass(frozen=True)
class CmcCurve:
    rates: np.ndarray  # rates[r-1] = fraction of probes matched at rank <= r

    def __post_init__(self) -> None:
        r = self.rates
        if r.ndim != 1 or r.size < 1:
            raise ValueError("rates must be a nonempty vector")
        if r.min() < 0.0 or r.max() > 1.0 or (np.diff(r) < 0).any():
            raise ValueError("rates must be non-decreasing within [0, 1]")

    @property
    def ranks(self) -> np.ndarray:
        return np.arange(1, self.rates.size + 1)


def cmc(scores: np.ndarray, truth: Mapping[int, int], max_rank: int | None = None) -> CmcCurve:
    """Cumulative match characteristic of a probe x gallery score matrix.

    truth maps each probe row to its single true gallery column.  The rank
    of the true match counts strictly higher-scoring galleries plus
    equal-scoring galleries with a lower index.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be a probe x gallery matrix")
    n_probe, n_gallery = scores.shape
    max_rank = n_gallery if max_rank is None else min(max_rank, n_gallery)
    ranks = np.empty(n_probe, dtype=np.int64)
    for p in range(n_probe):
        if p not in truth:
            raise ValueError(f"probe {p} has no gallery truth entry")
        g = truth[p]
        row = scores[p]
        higher = int((row > row[g]).sum())
        tied_before = int((row[:g] == row[g]).sum())
        ranks[p] = 1 + higher + tied_before
    rates = np.array([(ranks <= r).mean() for r in range(1, max_rank + 1)])
    return CmcCurve(rates=rates)


def cmc_auc(curve: CmcCurve) -> float:
    """Discrete area under the CMC curve: the mean rate over its ranks."""
    if curve.rates.size == 0:
        raise ValueError("empty curve")
    return float(curve.rates.mean())


def verification_rate(
    scores: np.ndarray, labels: np.ndarray, threshold: float = 0.0
) -> float:
    """Fraction of pairs whose thresholded score sign matches the label.

    A score >= threshold predicts +1 (the group-membership decision rule
    with its default zero threshold).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0 or scores.shape != labels.shape:
        raise ValueError("scores and labels must be nonempty and aligned")
    predicted = np.where(scores >= threshold, 1, -1)
    return float((predicted == labels).mean())


def reduce_tensor(t: ScoreTensor, keep: tuple[int, int], op: str = "sum") -> np.ndarray:
    """Marginalize all axes but the kept (row_view, col_view) pair.

    op is "sum" or "max"; with two views and matching keep order the
    matrix is returned unchanged (reversed order transposes it).
    """
    if keep[0] == keep[1]:
        raise ValueError("keep views must be distinct")
    if op not in ("sum", "max"):
        raise ValueError(f"op must be 'sum' or 'max', got {op!r}")
    ax_row, ax_col = t.axis_of(keep[0]), t.axis_of(keep[1])
    other = tuple(a for a in range(t.values.ndim) if a not in (ax_row, ax_col))
    if other:
        reduced = t.values.sum(axis=other) if op == "sum" else t.values.max(axis=other)
    else:
        reduced = t.values
    return reduced if ax_row < ax_col else reduced.T


def score_tensor(
    model: BilinearModel,
    entities: Mapping[int, Sequence[str]],
    maps: Mapping[int, Mapping[str, AppearanceMap]],
) -> ScoreTensor:
    """Group scores of every candidate tuple.

    Each unordered view pair contributes a coefficient-weighted pair-score
    matrix; the tensor is their broadcast sum, identical to scoring every
    tuple independently.
    """
    views = sorted(entities)
    shape = tuple(len(entities[v]) for v in views)
    values = np.zeros(shape)
    wh = model.shared
    for (i, j), beta in model.coeffs.beta.items():
        if i not in entities or j not in entities:
            raise ValueError(f"missing entities for view pair {(i, j)}")
        w = model.pair_weights[(i, j)]
        mat = np.array(
            [
                [
                    pair_score(maps[i][a], maps[j][b], w, wh)
                    for b in entities[j]
                ]
                for a in entities[i]
            ]
        )
        ai, aj = views.index(i), views.index(j)
        expand = [None] * len(views)
        expand[ai] = slice(None)
        expand[aj] = slice(None)
        values = values + beta * mat[tuple(expand)]
    return ScoreTensor(
        view_ids=tuple(views),
        entity_ids=tuple(tuple(entities[v]) for v in views),
        values=values,
    )


@dataclass(frozen=True)
class PairReport:
    gallery_view: int
    probe_view: int
    curve: CmcCurve
    auc: float
    verification: float


@dataclass(frozen=True)
class EvalReport:
    pairs: dict[tuple[int, int], PairReport]
    reduce_op: str
    trials: int
    meta: dict = field(default_factory=dict)

    @property
    def mean_auc(self) -> float:
        return float(np.mean([p.auc for p in self.pairs.values()]))


def _single_shot_galleries(
    entities: Sequence[str],
    identities: Mapping[str, Hashable],
    rng: np.random.Generator,
) -> list[str]:
    """One gallery entity per identity (sampled when an identity repeats)."""
    by_id: dict[Hashable, list[str]] = {}
    for e in entities:
        by_id.setdefault(identities[e], []).append(e)
    chosen = []
    for ident in sorted(by_id, key=str):
        cands = sorted(by_id[ident])
        chosen.append(cands[rng.integers(len(cands))])
    return chosen


def evaluate_protocol(
    model: BilinearModel,
    maps: Mapping[int, Mapping[str, AppearanceMap]],
    identities: Mapping[int, Mapping[str, Hashable]],
    *,
    reduce_op: str = "sum",
    max_rank: int | None = None,
    trials: int = 1,
    seed: int = 0,
) -> EvalReport:
    """Rank/verify every view pair of an encoded probe/gallery collection.

    For each unordered pair the view with fewer entities serves as the
    gallery (ties to the lower view id).  With more than two views the
    full score tensor is reduced over the extra axes with reduce_op; pass
    "auto" to pick sum or max by higher mean AUC.  Trials re-draw one
    gallery entity per identity with seeds seed, seed+1, ... and the
    reported curves are averaged.
    """
    views = sorted(maps)
    if len(views) < 2:
        raise ValueError("need at least two views to evaluate")
    for v in views:
        if not maps[v]:
            raise ValueError(f"view {v} has no encoded entities")
    if reduce_op == "auto":
        sum_report = evaluate_protocol(
            model, maps, identities, reduce_op="sum",
            max_rank=max_rank, trials=trials, seed=seed,
        )
        max_report = evaluate_protocol(
            model, maps, identities, reduce_op="max",
            max_rank=max_rank, trials=trials, seed=seed,
        )
        return sum_report if sum_report.mean_auc >= max_report.mean_auc else max_report

    pairs = [
        (views[a], views[b])
        for a in range(len(views))
        for b in range(a + 1, len(views))
    ]
    per_pair_curves: dict[tuple[int, int], list[np.ndarray]] = {p: [] for p in pairs}
    per_pair_ver: dict[tuple[int, int], list[float]] = {p: [] for p in pairs}
    gallery_probe: dict[tuple[int, int], tuple[int, int]] = {}

    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        trial_entities = {
            v: _single_shot_galleries(sorted(maps[v]), identities[v], rng) for v in views
        }
        tensor = score_tensor(model, trial_entities, maps)
        for i, j in pairs:
            if len(trial_entities[i]) <= len(trial_entities[j]):
                gal, probe = i, j
            else:
                gal, probe = j, i
            gallery_probe[(i, j)] = (gal, probe)
            matrix = reduce_tensor(tensor, keep=(probe, gal), op=reduce_op)
            gal_ids = [identities[gal][e] for e in trial_entities[gal]]
            probe_rows, truth = [], {}
            for row, e in enumerate(trial_entities[probe]):
                ident = identities[probe][e]
                if ident in gal_ids:
                    truth[len(probe_rows)] = gal_ids.index(ident)
                    probe_rows.append(row)
            if not probe_rows:
                raise ValueError(f"no probe of pair {(i, j)} has a gallery match")
            sub = matrix[probe_rows, :]
            curve = cmc(sub, truth, max_rank=max_rank)
            per_pair_curves[(i, j)].append(curve.rates)
            labels = np.array(
                [
                    1 if identities[probe][pe] == gid else -1
                    for pe in trial_entities[probe]
                    for gid in gal_ids
                ]
            )
            per_pair_ver[(i, j)].append(verification_rate(matrix.ravel(), labels))

    reports = {}
    for p in pairs:
        rates = np.mean(per_pair_curves[p], axis=0)
        curve = CmcCurve(rates=rates)
        gal, probe = gallery_probe[p]
        reports[p] = PairReport(
            gallery_view=gal,
            probe_view=probe,
            curve=curve,
            auc=cmc_auc(curve),
            verification=float(np.mean(per_pair_ver[p])),
        )
    return EvalReport(pairs=reports, reduce_op=reduce_op, trials=trials)


def write_report_csv(report: EvalReport, out_dir: str | Path) -> None:
    """cmc.csv (rank, one rate column per pair), auc.csv, verification.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pairs = sorted(report.pairs)
    max_len = max(report.pairs[p].curve.rates.size for p in pairs)
    with open(out / "cmc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank"] + [f"view{p[0]}-view{p[1]}" for p in pairs])
        for r in range(max_len):
            row = [r + 1]
            for p in pairs:
                rates = report.pairs[p].curve.rates
                row.append(f"{rates[min(r, rates.size - 1)]:.6f}")
            writer.writerow(row)
    with open(out / "auc.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "gallery_view", "probe_view", "auc"])
        for p in pairs:
            pr = report.pairs[p]
            writer.writerow(
                [f"view{p[0]}-view{p[1]}", pr.gallery_view, pr.probe_view, f"{pr.auc:.6f}"]
            )
        writer.writerow(["mean", "", "", f"{report.mean_auc:.6f}"])
    with open(out / "verification.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair", "verification_rate"])
        for p in pairs:
            writer.writerow([f"view{p[0]}-view{p[1]}", f"{report.pairs[p].verification:.6f}"])


def write_cmc_svg(report: EvalReport, path: str | Path, size: tuple[int, int] = (640, 420)) -> None:
    """Standalone SVG line plot of the CMC curves, one polyline per pair."""
    width, height = size
    margin = 50
    plot_w, plot_h = width - 2 * margin, height - 2 * margin
    pairs = sorted(report.pairs)
    max_rank = max(report.pairs[p].curve.rates.size for p in pairs)
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]

    def x_at(rank: float) -> float:
        if max_rank == 1:
            return margin + plot_w / 2
        return margin + (rank - 1) / (max_rank - 1) * plot_w

    def y_at(rate: float) -> float:
        return margin + (1.0 - rate) * plot_h

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>',
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="13">rank</text>',
        f'<text x="14" y="{height / 2:.0f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 14 {height / 2:.0f})">matching rate</text>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = y_at(frac)
        lines.append(
            f'<line x1="{margin - 4}" y1="{y:.1f}" x2="{margin}" y2="{y:.1f}" stroke="black"/>'
        )
        lines.append(
            f'<text x="{margin - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{frac:g}</text>'
        )
    for idx, p in enumerate(pairs):
        rates = report.pairs[p].curve.rates
        pts = " ".join(
            f"{x_at(r + 1):.1f},{y_at(rate):.1f}" for r, rate in enumerate(rates)
        )
        color = colors[idx % len(colors)]
        lines.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = margin + 16 * idx + 12
        lines.append(
            f'<line x1="{width - margin - 110}" y1="{ly - 4}" x2="{width - margin - 90}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>'
        )
        lines.append(
            f'<text x="{width - margin - 84}" y="{ly}" font-size="11">'
            f"view{p[0]}-view{p[1]}</text>"
        )
    lines.append("</svg>")
    Path(path).write_text("\n".join(lines))
