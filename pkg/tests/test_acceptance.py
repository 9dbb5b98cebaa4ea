"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -v -s``).

Every expected value comes from an independent oracle computed here or in
the oracle helpers: exhaustive minimization for distance transforms, dense
co-occurrence materialization for scores, explicit sorting/counting for
metrics, closed forms and grid search for the solver.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from gmp.cli import load_model, save_model
from gmp.encoding import (
    AppearanceMap,
    KernelParams,
    chessboard_dt,
    encode_entity,
    write_appearance_map,
    read_appearance_map,
)
from gmp.evaluation import (
    ScoreTensor,
    cmc,
    cmc_auc,
    evaluate_protocol,
    reduce_tensor,
    verification_rate,
)
from gmp.scoring import (
    BilinearModel,
    PairCoefficients,
    PairWeights,
    SharedWeights,
    group_score,
    pair_score,
)
from gmp.solver import SvmProblem, svm_train
from gmp.synthgen import (
    SynthSpec,
    generate,
    oracle_appearance,
    oracle_group_score_from_maps,
    oracle_pair_score,
)
from gmp.training import (
    GroupSample,
    TrainConfig,
    TrainingData,
    sample_groups,
    train_pairwise,
)
from gmp.vocab import WordGrid


def report(criterion: int, description: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[criterion {criterion:2d}] {status}: {description}{suffix}")
    assert ok, f"criterion {criterion} failed: {description}{suffix}"


def random_sparse_map(rng, k, grid_h, grid_w, view, density=0.5) -> AppearanceMap:
    dense = rng.random((k, grid_h * grid_w))
    dense[rng.random(dense.shape) > density] = 0.0
    return AppearanceMap(view=view, k=k, grid_h=grid_h, grid_w=grid_w, stride=1,
                         matrix=sp.csr_matrix(dense))


def test_criterion_1_encoding_matches_direct_evaluation():
    rng = np.random.default_rng(101)
    t0 = time.monotonic()
    worst = 0.0
    configs = [(s, a, st) for s in (1.0, 3.0) for a in (2.0, 6.0) for st in (1, 2)]
    for i in range(100):
        sigma, alpha, stride = configs[i % len(configs)]
        params = KernelParams(sigma=sigma, alpha=alpha, stride=stride)
        stack = [
            WordGrid(words=rng.integers(0, 8, size=(16, 12)), k=8)
            for _ in range(int(rng.integers(1, 3)))
        ]
        got = encode_entity(stack, params).dense()
        want = oracle_appearance(stack, params)
        worst = max(worst, float(np.abs(got - want).max()))
    elapsed = time.monotonic() - t0
    report(
        1,
        "encode_entity matches direct kernel evaluation on 100 random grids",
        worst <= 1e-12 and elapsed < 5.0,
        f"max abs err {worst:.2e}, {elapsed:.2f}s",
    )


def test_criterion_2_distance_transform_exact():
    rng = np.random.default_rng(202)
    failures = 0
    for i in range(1000):
        h, w = int(rng.integers(1, 33)), int(rng.integers(1, 33))
        if i == 0:
            mask = np.zeros((h, w), dtype=bool)  # no seeds: all infinite
        elif i == 1:
            mask = np.ones((h, w), dtype=bool)
        else:
            mask = rng.random((h, w)) < rng.uniform(0.02, 0.5)
        got = chessboard_dt(mask)
        cells = np.argwhere(np.ones((h, w), dtype=bool))
        seeds = np.argwhere(mask)
        if seeds.size == 0:
            want = np.full((h, w), np.inf)
        else:
            d = np.abs(cells[:, None, :] - seeds[None, :, :]).max(axis=2).min(axis=1)
            want = d.reshape(h, w).astype(float)
        if not np.array_equal(got, want):
            failures += 1
    report(
        2,
        "two-pass chessboard transform equals exhaustive minimum on 1000 grids",
        failures == 0,
        f"{failures} mismatches",
    )


def test_criterion_3_implicit_scoring_matches_dense():
    rng = np.random.default_rng(303)
    worst = 0.0
    for i in range(50):
        m = 2 if i % 2 == 0 else 3
        k = int(rng.integers(2, 11))
        gh, gw = int(rng.integers(2, 7)), int(rng.integers(2, 6))
        views = list(range(m))
        maps = {v: random_sparse_map(rng, k, gh, gw, v) for v in views}
        pairs = [(i1, j1) for a, i1 in enumerate(views) for j1 in views[a + 1:]]
        model = BilinearModel(
            pair_weights={p: PairWeights(p, rng.standard_normal((k, k))) for p in pairs},
            shared=SharedWeights(rng.standard_normal(gh * gw)),
            coeffs=PairCoefficients({p: float(rng.random()) for p in pairs}),
            vocabs=None,
            kernel=KernelParams(stride=1),
        )
        for p in pairs:
            got = pair_score(maps[p[0]], maps[p[1]], model.pair_weights[p], model.shared)
            want = oracle_pair_score(
                maps[p[0]].dense(), maps[p[1]].dense(),
                model.pair_weights[p].matrix, model.shared.vector,
            )
            worst = max(worst, abs(got - want) / max(1.0, abs(want)))
        got = group_score(maps, model)
        want = oracle_group_score_from_maps(maps, model)
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    report(
        3,
        "implicit pair and group scores match dense materialization",
        worst <= 1e-10,
        f"max rel err {worst:.2e}",
    )


def _monotone_training_data(seed):
    spec = SynthSpec(n_views=3, n_identities=30, images_per_entity=1,
                     grid=(12, 8), n_parts=8, k_words=8,
                     word_noise=0.1, jitter=1, seed=seed)
    ds = generate(spec)
    params = KernelParams(sigma=1.0, alpha=2.0, stride=2)
    maps = {v: {e: encode_entity(st, params, view=v) for e, st in ds.grids[v].items()}
            for v in ds.views}
    labels = {v: dict(ds.identities[v]) for v in ds.views}
    samples = sample_groups(labels, 300, 0.5, seed=seed + 1)
    return TrainingData(maps=maps, samples=samples)


def test_criterion_4_alternating_objective_monotone():
    data = _monotone_training_data(404)
    worst = -np.inf
    for mode in ("multi-view", "double-view"):
        cfg = TrainConfig(mode=mode, max_outer=20, outer_tol=0.0, seed=4,
                          svm_tol=1e-4, svm_max_pass=50)
        run = train_pairwise(data, cfg)
        t = run.objective_trace
        assert max(e.outer for e in run.trace) == 20
        rises = np.diff(t) - 1e-9 * (1.0 + np.abs(t[:-1]))
        worst = max(worst, float(rises.max()))
    report(
        4,
        "every half-step objective is non-increasing over 20 outer iterations, both modes",
        worst <= 0.0,
        f"max slack-adjusted rise {worst:.2e}",
    )


def test_criterion_5_two_view_trainers_identical():
    spec = SynthSpec(n_views=2, n_identities=20, images_per_entity=1,
                     grid=(12, 8), n_parts=8, k_words=10,
                     word_noise=0.1, jitter=1, seed=55)
    ds = generate(spec)
    params = KernelParams(sigma=1.0, alpha=2.0, stride=2)
    maps = {v: {e: encode_entity(st, params, view=v) for e, st in ds.grids[v].items()}
            for v in ds.views}
    labels = {v: dict(ds.identities[v]) for v in ds.views}
    samples = sample_groups(labels, 200, 0.5, seed=56)
    data = TrainingData(maps=maps, samples=samples)
    runs = {}
    for mode in ("multi-view", "double-view"):
        cfg = TrainConfig(mode=mode, max_outer=8, outer_tol=0.0, seed=5,
                          svm_tol=1e-5, svm_max_pass=120, record_params=True)
        runs[mode] = train_pairwise(data, cfg)
    a, b = runs["multi-view"], runs["double-view"]
    worst = 0.0
    assert len(a.trace) == len(b.trace)
    for ea, eb in zip(a.trace, b.trace):
        worst = max(worst, abs(ea.objective - eb.objective))
        for p in ea.params["w"]:
            worst = max(worst, float(np.abs(ea.params["w"][p] - eb.params["w"][p]).max()))
        worst = max(worst, float(np.abs(ea.params["wh"] - eb.params["wh"]).max()))
        worst = max(worst, float(np.abs(ea.params["beta"] - eb.params["beta"]).max()))
    report(
        5,
        "multi-view and double-view parameter traces coincide for two views",
        worst <= 1e-9,
        f"max trace deviation {worst:.2e}",
    )


def _end_to_end_rank1(noise, jitter, seed):
    spec = SynthSpec(n_views=2, n_identities=100, images_per_entity=2,
                     grid=(24, 12), n_parts=20, k_words=50,
                     word_noise=noise, jitter=jitter, seed=seed)
    ds = generate(spec)
    params = KernelParams(sigma=1.0, alpha=2.0, stride=1)
    maps = {v: {e: encode_entity(st, params, view=v) for e, st in ds.grids[v].items()}
            for v in ds.views}
    train_ids = set(range(50))
    train_maps = {v: {e: m for e, m in maps[v].items()
                      if ds.identities[v][e] in train_ids} for v in ds.views}
    test_maps = {v: {e: m for e, m in maps[v].items()
                     if ds.identities[v][e] not in train_ids} for v in ds.views}
    labels = {v: {e: ds.identities[v][e] for e in train_maps[v]} for v in ds.views}
    test_ids = {v: {e: ds.identities[v][e] for e in test_maps[v]} for v in ds.views}
    samples = sample_groups(labels, 1200, 0.5, seed=seed + 1)
    cfg = TrainConfig(mode="multi-view", max_outer=6, outer_tol=1e-5, seed=seed,
                      svm_tol=1e-4, svm_max_pass=60)
    run = train_pairwise(TrainingData(maps=train_maps, samples=samples), cfg)
    rep = evaluate_protocol(run.model, test_maps, test_ids)
    return rep.pairs[(0, 1)].curve.rates[0]


def test_criterion_6_synthetic_end_to_end():
    with threadpool_limits(1):
        t0 = time.monotonic()
        noisy = _end_to_end_rank1(noise=0.1, jitter=1, seed=606)
        clean = _end_to_end_rank1(noise=0.0, jitter=0, seed=607)
        elapsed = time.monotonic() - t0
    report(
        6,
        "synthetic two-view pipeline reaches rank-1 targets inside the time budget",
        noisy >= 0.90 and clean >= 0.99 and elapsed < 60.0,
        f"noisy rank-1 {noisy:.3f}, clean rank-1 {clean:.3f}, {elapsed:.1f}s single-threaded",
    )


def test_criterion_7_informative_pair_dominates():
    rng = np.random.default_rng(707)
    k, n_loc, n = 2, 2, 120
    maps = {0: {}, 1: {}, 2: {}}
    samples = []
    for t in range(n):
        y = 1 if t % 2 == 0 else -1
        for v, word in ((0, 0), (1, 0 if y == 1 else 1), (2, int(rng.integers(k)))):
            mat = sp.csr_matrix((np.ones(1), (np.array([word]), np.array([0]))),
                                shape=(k, n_loc))
            maps[v][f"s{t}"] = AppearanceMap(view=v, k=k, grid_h=1, grid_w=n_loc,
                                             stride=1, matrix=mat)
        samples.append(GroupSample(entities={0: f"s{t}", 1: f"s{t}", 2: f"s{t}"},
                                   group_label=y,
                                   pair_labels={(0, 1): y, (0, 2): y, (1, 2): y}))
    cfg = TrainConfig(mode="multi-view", max_outer=8, outer_tol=0.0, seed=7,
                      svm_tol=1e-7, svm_max_pass=200)
    run = train_pairwise(TrainingData(maps=maps, samples=samples), cfg)
    beta = run.model.coeffs
    ok = (
        beta[(0, 1)] > beta[(0, 2)] >= 0.0
        and beta[(0, 1)] > beta[(1, 2)] >= 0.0
    )
    report(
        7,
        "learned coefficients rank the informative pair strictly above noise pairs",
        ok,
        f"beta={{(0,1): {beta[(0, 1)]:.4f}, (0,2): {beta[(0, 2)]:.4f}, (1,2): {beta[(1, 2)]:.4f}}}",
    )


def test_criterion_8_metric_oracles():
    rng = np.random.default_rng(808)
    exact_fails = 0
    worst_mean = 0.0
    for _ in range(100):
        n_p, n_g = int(rng.integers(2, 15)), int(rng.integers(2, 20))
        scores = rng.random((n_p, n_g))
        truth = {p: int(rng.integers(n_g)) for p in range(n_p)}
        curve = cmc(scores, truth)
        rates = np.zeros(n_g)
        for p in range(n_p):
            order = sorted(range(n_g), key=lambda g: (-scores[p, g], g))
            rates[order.index(truth[p]):] += 1
        if not np.array_equal(curve.rates, rates / n_p):
            exact_fails += 1
        worst_mean = max(worst_mean, abs(cmc_auc(curve) - sum(curve.rates) / n_g))

        labels = rng.choice([-1, 1], 30)
        vs = rng.standard_normal(30)
        thr = float(rng.standard_normal())
        direct = sum(
            1 for s, l in zip(vs, labels) if (1 if s >= thr else -1) == l
        ) / 30
        if verification_rate(vs, labels, thr) != direct:
            exact_fails += 1

        shape = tuple(int(x) for x in rng.integers(2, 5, size=3))
        tensor = ScoreTensor(
            view_ids=(0, 1, 2),
            entity_ids=tuple(tuple(f"e{i}" for i in range(s)) for s in shape),
            values=rng.standard_normal(shape),
        )
        keep = [(0, 1), (0, 2), (1, 2)][int(rng.integers(3))]
        op = "sum" if rng.random() < 0.5 else "max"
        got = reduce_tensor(tensor, keep, op)
        rows, cols = shape[keep[0]], shape[keep[1]]
        want = np.empty((rows, cols))
        for a in range(rows):
            for b in range(cols):
                idx = [slice(None)] * 3
                idx[keep[0]], idx[keep[1]] = a, b
                vals = tensor.values[tuple(idx)]
                want[a, b] = vals.sum() if op == "sum" else vals.max()
        err = np.abs(got - want).max()
        if op == "max" and err != 0.0:
            exact_fails += 1
        worst_mean = max(worst_mean, float(err))
    report(
        8,
        "ranking/verification/reduction metrics match exhaustive-loop oracles",
        exact_fails == 0 and worst_mean <= 1e-12,
        f"{exact_fails} exact mismatches, worst mean-metric err {worst_mean:.2e}",
    )


def test_criterion_9_svm_matches_references():
    rng = np.random.default_rng(909)
    worst = 0.0
    closed_forms = [
        (np.array([[1.0, 0.0]]), np.array([1]), 2.0, 0.75),
        (np.array([[1.0, 0.0]]), np.array([1]), 0.5, 0.25),
        (np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([1, -1]), 1.0, 0.5),
    ]
    for X, y, lam, ref in closed_forms:
        sol = svm_train(SvmProblem(X, y, lam=lam), tol=1e-10, max_pass=2000)
        worst = max(worst, abs(sol.objective - ref) / ref)
    from scipy.optimize import minimize

    for t in range(20):
        n = 30
        direction = rng.standard_normal(2)
        direction /= np.linalg.norm(direction)
        y = rng.choice([-1.0, 1.0], n)
        X = (y[:, None] * direction[None, :] * rng.uniform(1.2, 3.0, (n, 1))
             + rng.standard_normal((n, 2)) * 0.05)
        lam = float(rng.uniform(0.3, 3.0))
        sol = svm_train(SvmProblem(X, y.astype(int), lam=lam), tol=1e-10,
                        max_pass=5000, seed=t)
        f = lambda w: 0.5 * lam * (w @ w) + np.maximum(0.0, 1.0 - y * (X @ w)).sum()
        lin = np.linspace(-4, 4, 121)
        best, best_w = np.inf, None
        for w1 in lin:
            s = X[:, 0, None] * w1 + X[:, 1, None] * lin[None, :]
            vals = 0.5 * lam * (w1**2 + lin**2) + np.maximum(0.0, 1.0 - y[:, None] * s).sum(0)
            j = int(np.argmin(vals))
            if vals[j] < best:
                best, best_w = vals[j], np.array([w1, lin[j]])
        r = minimize(f, best_w, method="Nelder-Mead",
                     options=dict(xatol=1e-12, fatol=1e-14, maxiter=5000))
        ref = min(best, float(r.fun))
        worst = max(worst, (sol.objective - ref) / max(abs(ref), 1e-12))
    report(
        9,
        "solver reaches closed-form and grid-search reference objectives",
        worst <= 1e-6,
        f"worst rel gap {worst:.2e}",
    )


def test_criterion_10_production_scale_efficiency(tmp_path):
    rng = np.random.default_rng(1010)
    grid = WordGrid(words=rng.integers(0, 300, size=(128, 48)), k=300)

    # scoring: |h| ~ 1500 locations (stride 2 on 128x48)
    score_params = KernelParams(sigma=3.0, alpha=6.0, stride=2)
    a = encode_entity([grid], score_params, view=0)
    b = encode_entity([WordGrid(words=rng.integers(0, 300, size=(128, 48)), k=300)],
                      score_params, view=1)
    w = PairWeights((0, 1), rng.standard_normal((300, 300)))
    wh = SharedWeights(rng.standard_normal(a.n_locations))
    with threadpool_limits(1):
        pair_score(a, b, w, wh)  # warm the cached dense views
        times = []
        for _ in range(10):
            t0 = time.perf_counter()
            pair_score(a, b, w, wh)
            times.append(time.perf_counter() - t0)
    best_ms = min(times) * 1e3

    # storage: stride 4 with a tight kernel radius
    store_params = KernelParams(sigma=3.0, alpha=2.0, stride=4)
    amap = encode_entity([grid], store_params, view=0)
    dest = tmp_path / "entity.gmpe"
    write_appearance_map(amap, dest)
    size_kb = dest.stat().st_size / 1024.0
    report(
        10,
        "single pair score within 10 ms and encoded entity within 300 KB",
        best_ms <= 10.0 and size_kb <= 300.0 and a.n_locations >= 1400,
        f"{best_ms:.2f} ms at |h|={a.n_locations}, file {size_kb:.1f} KB",
    )


def test_criterion_11_persistence_bit_exact(tmp_path):
    rng = np.random.default_rng(1111)
    k, gh, gw = 6, 4, 5
    model = BilinearModel(
        pair_weights={(0, 1): PairWeights((0, 1), rng.standard_normal((k, k)))},
        shared=SharedWeights(rng.standard_normal(gh * gw)),
        coeffs=PairCoefficients({(0, 1): float(rng.random())}),
        vocabs=None,
        kernel=KernelParams(stride=1),
    )
    path = tmp_path / "model.gmpm"
    save_model(model, path)
    reloaded = load_model(path)
    save_model(reloaded, tmp_path / "model2.gmpm")
    model_bits_ok = path.read_bytes() == (tmp_path / "model2.gmpm").read_bytes()

    amap = encode_entity(
        [WordGrid(words=rng.integers(0, k, (8, 6)), k=k)],
        KernelParams(sigma=1, alpha=2, stride=1), view=0,
    )
    p1, p2 = tmp_path / "e1.gmpe", tmp_path / "e2.gmpe"
    write_appearance_map(amap, p1)
    write_appearance_map(read_appearance_map(p1), p2)
    entity_bits_ok = p1.read_bytes() == p2.read_bytes()

    score_mismatches = 0
    for _ in range(1000):
        maps = {v: random_sparse_map(rng, k, gh, gw, v) for v in (0, 1)}
        if group_score(maps, model) != group_score(maps, reloaded):
            score_mismatches += 1
    report(
        11,
        "model and encoded-entity round-trips are bit-exact; reloaded scores identical",
        model_bits_ok and entity_bits_ok and score_mismatches == 0,
        f"{score_mismatches} score mismatches over 1000 inputs",
    )
