import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from gmp.encoding import AppearanceMap, KernelParams
from gmp.evaluation import (
    CmcCurve,
    ScoreTensor,
    cmc,
    cmc_auc,
    evaluate_protocol,
    reduce_tensor,
    score_tensor,
    verification_rate,
    write_cmc_svg,
    write_report_csv,
)
from gmp.scoring import (
    BilinearModel,
    PairCoefficients,
    PairWeights,
    SharedWeights,
    group_score,
)


def brute_force_cmc(scores, truth):
    """Rank by explicit stable sort on (-score, gallery index)."""
    n_probe, n_gallery = scores.shape
    rates = np.zeros(n_gallery)
    for p in range(n_probe):
        order = sorted(range(n_gallery), key=lambda g: (-scores[p, g], g))
        rank = order.index(truth[p]) + 1
        rates[rank - 1 :] += 1
    return rates / n_probe


class TestCmc:
    def test_perfect_matching(self, rng):
        scores = rng.random((6, 9))
        truth = {}
        for p in range(6):
            g = p
            scores[p, g] = 2.0  # strictly highest
            truth[p] = g
        curve = cmc(scores, truth)
        assert np.all(curve.rates == 1.0)

    def test_single_probe_step_function(self):
        scores = np.array([[0.9, 0.8, 0.5, 0.3, 0.1]])
        curve = cmc(scores, {0: 2})
        assert np.array_equal(curve.rates, [0, 0, 1, 1, 1])

    def test_matches_bruteforce_counting(self, rng):
        for _ in range(10):
            scores = rng.random((20, 50))
            truth = {p: int(rng.integers(50)) for p in range(20)}
            curve = cmc(scores, truth)
            assert np.array_equal(curve.rates, brute_force_cmc(scores, truth))

    def test_tie_broken_toward_lower_gallery_index(self):
        scores = np.array([[0.5, 0.5, 0.5]])
        assert np.array_equal(cmc(scores, {0: 0}).rates, [1, 1, 1])
        assert np.array_equal(cmc(scores, {0: 1}).rates, [0, 1, 1])

    def test_missing_truth_rejected(self, rng):
        with pytest.raises(ValueError):
            cmc(rng.random((2, 3)), {0: 1})

    @given(st.integers(0, 5_000))
    def test_invariant_under_increasing_transform(self, seed):
        r = np.random.default_rng(seed)
        scores = r.random((5, 8))
        truth = {p: int(r.integers(8)) for p in range(5)}
        base = cmc(scores, truth).rates
        transformed = cmc(np.exp(3 * scores) + 1.5, truth).rates
        assert np.array_equal(base, transformed)

    @given(st.integers(0, 5_000))
    def test_monotone_and_final_rate_one(self, seed):
        r = np.random.default_rng(seed)
        scores = r.random((6, 7))
        truth = {p: int(r.integers(7)) for p in range(6)}
        rates = cmc(scores, truth).rates
        assert (np.diff(rates) >= 0).all()
        assert rates[-1] == 1.0


class TestCmcAuc:
    def test_all_ones(self):
        assert cmc_auc(CmcCurve(rates=np.ones(7))) == 1.0

    def test_step_curve(self):
        assert cmc_auc(CmcCurve(rates=np.array([0.0, 0.0, 1.0, 1.0, 1.0]))) == 0.6

    def test_matches_independent_summation(self, rng):
        rates = np.sort(rng.random(12))
        curve = CmcCurve(rates=rates)
        want = sum(rates) / 12
        assert abs(cmc_auc(curve) - want) < 1e-12


class TestVerificationRate:
    def test_perfect_split(self):
        scores = np.array([1.0, 1.0, -1.0, -1.0])
        labels = np.array([1, 1, -1, -1])
        assert verification_rate(scores, labels) == 1.0

    def test_flipped_labels(self):
        scores = np.array([1.0, -1.0])
        labels = np.array([-1, 1])
        assert verification_rate(scores, labels) == 0.0

    def test_matches_direct_count(self, rng):
        scores = rng.standard_normal(200)
        labels = rng.choice([-1, 1], 200)
        thr = 0.3
        want = np.mean([
            1 if ((s >= thr and l == 1) or (s < thr and l == -1)) else 0
            for s, l in zip(scores, labels)
        ])
        assert verification_rate(scores, labels, thr) == want

    @given(st.integers(0, 5_000), st.floats(-5, 5))
    def test_shift_invariance(self, seed, shift):
        r = np.random.default_rng(seed)
        scores = r.standard_normal(30)
        labels = r.choice([-1, 1], 30)
        thr = float(r.standard_normal())
        assert verification_rate(scores, labels, thr) == verification_rate(
            scores + shift, labels, thr + shift
        )


def tensor_3view(rng, shape=(4, 5, 3)):
    return ScoreTensor(
        view_ids=(0, 1, 2),
        entity_ids=tuple(tuple(f"v{v}e{i}" for i in range(n)) for v, n in enumerate(shape)),
        values=rng.standard_normal(shape),
    )


class TestReduceTensor:
    def test_two_views_identity(self, rng):
        values = rng.standard_normal((4, 6))
        t = ScoreTensor(
            view_ids=(0, 1),
            entity_ids=(tuple("abcd"), tuple("uvwxyz")),
            values=values,
        )
        assert np.array_equal(reduce_tensor(t, keep=(0, 1), op="sum"), values)
        assert np.array_equal(reduce_tensor(t, keep=(0, 1), op="max"), values)
        assert np.array_equal(reduce_tensor(t, keep=(1, 0), op="sum"), values.T)

    def test_three_views_max_definition(self, rng):
        t = tensor_3view(rng)
        out = reduce_tensor(t, keep=(0, 1), op="max")
        for i in range(4):
            for j in range(5):
                assert out[i, j] == t.values[i, j, :].max()

    def test_matches_exhaustive_loops(self, rng):
        t = tensor_3view(rng)
        for keep in [(0, 1), (0, 2), (1, 2), (2, 0)]:
            for op in ("sum", "max"):
                got = reduce_tensor(t, keep=keep, op=op)
                rows = t.values.shape[t.view_ids.index(keep[0])]
                cols = t.values.shape[t.view_ids.index(keep[1])]
                want = np.zeros((rows, cols))
                for a in range(rows):
                    for b in range(cols):
                        idx = [slice(None)] * 3
                        idx[t.view_ids.index(keep[0])] = a
                        idx[t.view_ids.index(keep[1])] = b
                        vals = t.values[tuple(idx)]
                        want[a, b] = vals.sum() if op == "sum" else vals.max()
                assert np.allclose(got, want, atol=1e-12)

    def test_identical_keep_rejected(self, rng):
        with pytest.raises(ValueError):
            reduce_tensor(tensor_3view(rng), keep=(1, 1), op="sum")

    @given(st.integers(0, 2_000))
    def test_sum_linear_max_monotone(self, seed):
        r = np.random.default_rng(seed)
        a = tensor_3view(r, (3, 3, 2))
        scaled = ScoreTensor(view_ids=a.view_ids, entity_ids=a.entity_ids,
                             values=2.5 * a.values)
        assert np.allclose(
            reduce_tensor(scaled, (0, 1), "sum"),
            2.5 * reduce_tensor(a, (0, 1), "sum"),
            atol=1e-12,
        )
        bumped = ScoreTensor(view_ids=a.view_ids, entity_ids=a.entity_ids,
                             values=a.values + 1.0)
        assert np.all(reduce_tensor(bumped, (0, 1), "max") >= reduce_tensor(a, (0, 1), "max"))


def diag_model(k, n_loc, views):
    """Word-match scoring: +1 per location on matching words, -1 otherwise."""
    pairs = [(i, j) for n, i in enumerate(views) for j in views[n + 1:]]
    matrix = 2.0 * np.eye(k) - np.ones((k, k))
    return BilinearModel(
        pair_weights={p: PairWeights(view_pair=p, matrix=matrix) for p in pairs},
        shared=SharedWeights(np.ones(n_loc)),
        coeffs=PairCoefficients({p: 1.0 for p in pairs}),
        vocabs=None,
        kernel=KernelParams(stride=1),
    )


def indicator_map(word, k, n_loc, view):
    mat = sp.csr_matrix(
        (np.ones(n_loc), (np.full(n_loc, word), np.arange(n_loc))), shape=(k, n_loc)
    )
    return AppearanceMap(view=view, k=k, grid_h=1, grid_w=n_loc, stride=1, matrix=mat)


class TestScoreTensorAndProtocol:
    def test_identity_scoring_gives_perfect_rank1(self):
        k, n_loc = 5, 4
        model = diag_model(k, n_loc, [0, 1])
        maps = {
            v: {f"e{i}": indicator_map(i, k, n_loc, view=v) for i in range(k)}
            for v in (0, 1)
        }
        identities = {v: {f"e{i}": i for i in range(k)} for v in (0, 1)}
        report = evaluate_protocol(model, maps, identities)
        pr = report.pairs[(0, 1)]
        assert pr.curve.rates[0] == 1.0
        assert pr.auc == 1.0
        assert pr.verification == 1.0

    def test_tensor_equals_group_score_loops(self, rng):
        k, n_loc = 3, 4
        views = [0, 1, 2]
        model = diag_model(k, n_loc, views)
        maps = {
            v: {f"e{i}": indicator_map(int(rng.integers(k)), k, n_loc, view=v) for i in range(3)}
            for v in views
        }
        entities = {v: sorted(maps[v]) for v in views}
        tensor = score_tensor(model, entities, maps)
        for a in range(3):
            for b in range(3):
                for c in range(3):
                    tuple_maps = {
                        0: maps[0][entities[0][a]],
                        1: maps[1][entities[1][b]],
                        2: maps[2][entities[2][c]],
                    }
                    want = group_score(tuple_maps, model)
                    assert abs(tensor.values[a, b, c] - want) < 1e-10

    def test_trials_average_and_seeded(self):
        k, n_loc = 4, 3
        model = diag_model(k, n_loc, [0, 1])
        maps = {
            v: {f"e{i}": indicator_map(i, k, n_loc, view=v) for i in range(k)}
            for v in (0, 1)
        }
        identities = {v: {f"e{i}": i for i in range(k)} for v in (0, 1)}
        a = evaluate_protocol(model, maps, identities, trials=3, seed=5)
        b = evaluate_protocol(model, maps, identities, trials=3, seed=5)
        assert np.array_equal(a.pairs[(0, 1)].curve.rates, b.pairs[(0, 1)].curve.rates)

    def test_empty_view_rejected(self):
        model = diag_model(3, 2, [0, 1])
        with pytest.raises(ValueError):
            evaluate_protocol(model, {0: {}, 1: {}}, {0: {}, 1: {}})

    def test_report_files(self, tmp_path):
        k, n_loc = 4, 3
        model = diag_model(k, n_loc, [0, 1])
        maps = {
            v: {f"e{i}": indicator_map(i, k, n_loc, view=v) for i in range(k)}
            for v in (0, 1)
        }
        identities = {v: {f"e{i}": i for i in range(k)} for v in (0, 1)}
        report = evaluate_protocol(model, maps, identities)
        write_report_csv(report, tmp_path)
        write_cmc_svg(report, tmp_path / "cmc.svg")
        assert (tmp_path / "cmc.csv").exists()
        assert (tmp_path / "auc.csv").exists()
        assert (tmp_path / "verification.csv").exists()
        svg = (tmp_path / "cmc.svg").read_text()
        assert svg.startswith("<svg") and "polyline" in svg
