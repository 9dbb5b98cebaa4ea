#!/usr/bin/env python3
"""Sweep location-grid stride against vocabulary size on synthetic data.

Prints a CSV grid of test rank-1 rates: rows are strides (coarser spatial
sampling), columns are word counts.  Denser location sampling and larger
vocabularies both trade compute for accuracy; this sweep shows where the
trade-off flattens for a given noise level.
"""

import argparse
import sys

from gmp.encoding import KernelParams, encode_entity
from gmp.evaluation import evaluate_protocol
from gmp.synthgen import SynthSpec, generate
from gmp.training import TrainConfig, TrainingData, sample_groups, train_pairwise


def rank1(n_identities, k_words, stride, noise, seed):
    spec = SynthSpec(
        n_views=2, n_identities=n_identities, images_per_entity=1,
        grid=(24, 12), n_parts=16, k_words=k_words,
        word_noise=noise, jitter=1, seed=seed,
    )
    ds = generate(spec)
    params = KernelParams(sigma=1.0, alpha=2.0, stride=stride)
    maps = {v: {e: encode_entity(st, params, view=v) for e, st in ds.grids[v].items()}
            for v in ds.views}
    n_train = n_identities // 2
    train_ids = set(range(n_train))
    train_maps = {v: {e: m for e, m in maps[v].items()
                      if ds.identities[v][e] in train_ids} for v in ds.views}
    test_maps = {v: {e: m for e, m in maps[v].items()
                     if ds.identities[v][e] not in train_ids} for v in ds.views}
    labels = {v: {e: ds.identities[v][e] for e in train_maps[v]} for v in ds.views}
    test_ids = {v: {e: ds.identities[v][e] for e in test_maps[v]} for v in ds.views}
    samples = sample_groups(labels, 600, 0.5, seed=seed + 1)
    cfg = TrainConfig(mode="multi-view", max_outer=4, seed=seed,
                      svm_tol=1e-4, svm_max_pass=50)
    run = train_pairwise(TrainingData(maps=train_maps, samples=samples), cfg)
    report = evaluate_protocol(run.model, test_maps, test_ids)
    return report.pairs[(0, 1)].curve.rates[0]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--identities", type=int, default=40)
    ap.add_argument("--strides", default="1,2,3,4,5")
    ap.add_argument("--words", default="10,20,40,80")
    ap.add_argument("--noise", type=float, default=0.15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    strides = [int(s) for s in args.strides.split(",")]
    words = [int(w) for w in args.words.split(",")]
    print("stride\\words," + ",".join(str(w) for w in words))
    for s in strides:
        row = [f"{rank1(args.identities, w, s, args.noise, args.seed):.3f}" for w in words]
        print(f"{s}," + ",".join(row))
        sys.stdout.flush()


if __name__ == "__main__":
    main()
