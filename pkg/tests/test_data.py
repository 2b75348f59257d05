from fractions import Fraction
from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fedcd.data import (
    Hierarchical,
    Hypergeometric,
    archetype_label_weights,
    build_device_shards,
    gen_synthetic_classes,
    hierarchical_specs,
    hypergeom_pmf,
    hypergeom_pmf_exact,
    hypergeometric_specs,
    largest_remainder_counts,
    load_csv_dataset,
    sample_hypergeom,
)
from fedcd.model import LabeledBatch, MlpSpec, evaluate_accuracy, init_weights, sgd_train

# C(105,10)/C(110,10) reduced by hand: 100*99*98*97*96 / (110*109*108*107*106)
PMF_110_105_10_10 = Fraction(380240, 618139)


class TestSynthetic:
    def test_counts(self):
        g = gen_synthetic_classes(10, 16, 100, 3.0, np.random.default_rng(0))
        assert g.n_classes == 10 and g.dim == 16
        assert [len(p) for p in g.pools] == [100] * 10
        assert g.offsets()[-1] == 1000

    def test_same_seed_same_data(self):
        a = gen_synthetic_classes(4, 3, 20, 2.0, np.random.default_rng(8))
        b = gen_synthetic_classes(4, 3, 20, 2.0, np.random.default_rng(8))
        assert all(np.array_equal(x, y) for x, y in zip(a.pools, b.pools))

    @pytest.mark.parametrize("args", [(1, 4, 10), (3, 1, 10), (3, 4, 0)])
    def test_preconditions(self, args):
        with pytest.raises(ValueError):
            gen_synthetic_classes(*args, 1.0, np.random.default_rng(0))

    def test_large_spread_separable(self):
        rng = np.random.default_rng(1)
        g = gen_synthetic_classes(10, 16, 300, 10.0 * np.sqrt(2.0) * 10, rng)
        X = np.vstack(g.pools)
        y = np.repeat(np.arange(10), 300)
        perm = rng.permutation(len(y))
        X, y = X[perm], y[perm]
        train = LabeledBatch(X[:2000], y[:2000])
        test = LabeledBatch(X[2000:], y[2000:])
        w = init_weights(MlpSpec((16, 32, 10)), rng)
        w = sgd_train(w, train, 5, 0.01, 32, rng)
        assert evaluate_accuracy(w, test) > 0.95

    def test_csv_import(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# x0,x1,label\n0.1,0.2,0\n1.0,1.1,1\n0.3,0.1,0\n2.0,2.0,2\n")
        g = load_csv_dataset(p)
        assert g.n_classes == 3 and g.dim == 2
        assert [len(x) for x in g.pools] == [2, 1, 1]
        assert np.allclose(g.pools[0], [[0.1, 0.2], [0.3, 0.1]])


class TestHypergeomPmf:
    def test_out_of_support(self):
        assert hypergeom_pmf(110, 5, 10, 6) == 0.0
        assert hypergeom_pmf(110, 45, 10, 11) == 0.0
        assert hypergeom_pmf(110, 45, 10, -1) == 0.0

    def test_empty_draw(self):
        assert hypergeom_pmf(110, 45, 0, 0) == 1.0

    def test_k105_all_successes(self):
        oracle = Fraction(comb(105, 10), comb(110, 10))
        assert oracle == PMF_110_105_10_10
        assert hypergeom_pmf_exact(110, 105, 10, 10) == oracle
        assert hypergeom_pmf(110, 105, 10, 10) == pytest.approx(0.6151367249113873, abs=1e-15)

    def test_matches_scipy(self):
        for K in (5, 25, 45, 65, 85, 105):
            ref = stats.hypergeom(110, K, 10)
            for k in range(11):
                assert hypergeom_pmf(110, K, 10, k) == pytest.approx(ref.pmf(k), rel=1e-9, abs=1e-300)

    @pytest.mark.parametrize("K", [0, 5, 45, 105, 110])
    def test_sums_to_one_exactly(self, K):
        assert sum(hypergeom_pmf_exact(110, K, 10, k) for k in range(11)) == 1

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 60).flatmap(lambda N: st.tuples(
        st.just(N), st.integers(0, N), st.integers(0, N), st.integers(0, N))))
    def test_symmetry(self, t):
        N, K, n, k = t
        assert hypergeom_pmf_exact(N, K, n, k) == hypergeom_pmf_exact(N, n, K, k)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 60).flatmap(lambda N: st.tuples(
        st.just(N), st.integers(0, N), st.integers(0, N))))
    def test_exact_sum_property(self, t):
        N, K, n = t
        assert sum(hypergeom_pmf_exact(N, K, n, k) for k in range(n + 1)) == 1

    def test_sampler_chi_square(self):
        draws = sample_hypergeom(110, 45, 10, 100_000, np.random.default_rng(2024))
        support = np.arange(11)
        observed = np.array([(draws == k).sum() for k in support])
        expected = np.array([hypergeom_pmf(110, 45, 10, k) for k in support]) * len(draws)
        # pool sparse tail cells so every expected count is >= 5
        keep = expected >= 5
        obs, exp = observed[keep], expected[keep]
        if not keep.all():
            obs = np.append(obs, observed[~keep].sum())
            exp = np.append(exp, expected[~keep].sum())
        _, p = stats.chisquare(obs, exp)
        assert p > 0.001


class TestLabelWeights:
    def test_hierarchical_example(self):
        w = archetype_label_weights(Hierarchical((0, 1, 2, 3, 4), 3, 0.6), 10)
        assert np.allclose(w, [0.1, 0.1, 0.1, 0.6, 0.1, 0, 0, 0, 0, 0], atol=1e-15)

    def test_hierarchical_one_hot(self):
        w = archetype_label_weights(Hierarchical((5, 6, 7, 8, 9), 7, 1.0), 10)
        assert np.array_equal(w, np.eye(10)[7])

    def test_hierarchical_zero_outside_meta(self):
        for spec in hierarchical_specs(seed=3):
            w = archetype_label_weights(spec, 10)
            outside = [c for c in range(10) if c not in spec.meta_labels]
            assert np.all(w[outside] == 0)
            assert w.sum() == pytest.approx(1.0, abs=1e-12)

    def test_hypergeometric_k5(self):
        w = archetype_label_weights(Hypergeometric(110, 5, 10), 10)
        pmf = np.array([float(hypergeom_pmf_exact(110, 5, 10, k)) for k in range(10)])
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(w, pmf / pmf.sum(), rtol=1e-12)
        assert w[0] == pytest.approx(0.6151367249113873, rel=1e-12)
        assert np.all(w[6:] == 0)

    def test_hypergeometric_fold_top_label(self):
        w = archetype_label_weights(Hypergeometric(110, 105, 10), 10)
        p9 = hypergeom_pmf_exact(110, 105, 10, 9) + PMF_110_105_10_10
        assert w[9] == pytest.approx(float(p9), rel=1e-12)

    def test_invalid_specs(self):
        with pytest.raises(ValueError):
            Hierarchical((0, 1), 3, 0.5)
        with pytest.raises(ValueError):
            Hierarchical((0, 1), 1, 1.5)
        with pytest.raises(ValueError):
            Hypergeometric(10, 11, 2)


class TestLargestRemainder:
    def test_simple(self):
        assert list(largest_remainder_counts([1, 1, 1], 10)) == [4, 3, 3]

    def test_exact_hierarchical(self):
        w = archetype_label_weights(Hierarchical((0, 1, 2, 3, 4), 3, 0.6), 10)
        assert list(largest_remainder_counts(w, 5000)) == [500, 500, 500, 3000, 500, 0, 0, 0, 0, 0]

    def test_random_weights_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            w = rng.random(int(rng.integers(1, 12)))
            total = int(rng.integers(0, 5000))
            c = largest_remainder_counts(w, total)
            assert c.sum() == total
            assert np.all(np.abs(c - w / w.sum() * total) < 1.0)


class TestShards:
    def test_hierarchical_5000(self):
        g = gen_synthetic_classes(10, 4, 3100, 3.0, np.random.default_rng(0))
        spec = Hierarchical((0, 1, 2, 3, 4), 3, 0.6)
        (s,) = build_device_shards(g, [spec], 5000, 0.2, 0.2, seed=1)
        all_labels = np.concatenate([s.train.labels, s.val.labels, s.test.labels])
        counts = np.bincount(all_labels, minlength=10)
        assert list(counts) == [500, 500, 500, 3000, 500, 0, 0, 0, 0, 0]
        # stratified: every split carries the same label proportions
        assert list(np.bincount(s.val.labels, minlength=10)[:5]) == [100, 100, 100, 600, 100]
        assert list(np.bincount(s.train.labels, minlength=10)[:5]) == [300, 300, 300, 1800, 300]

    def test_one_hot_single_label(self):
        g = gen_synthetic_classes(4, 3, 100, 3.0, np.random.default_rng(0))
        (s,) = build_device_shards(g, [Hierarchical((0, 1), 1, 1.0)], 50, 0.2, 0.2, seed=0)
        for b in (s.train, s.val, s.test):
            assert set(b.labels.tolist()) == {1}

    def test_disjoint_and_nonempty(self, shards4):
        for s in shards4:
            ids = [set(s.ids[k].tolist()) for k in ("train", "val", "test")]
            assert all(ids)
            assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])
            assert len(s.train) + len(s.val) + len(s.test) == 60

    def test_pool_shortage(self):
        g = gen_synthetic_classes(4, 3, 10, 3.0, np.random.default_rng(0))
        with pytest.raises(ValueError, match="pool"):
            build_device_shards(g, [Hierarchical((0, 1), 0, 1.0)], 50, 0.2, 0.2, seed=0)

    def test_bad_fractions(self):
        g = gen_synthetic_classes(4, 3, 100, 3.0, np.random.default_rng(0))
        with pytest.raises(ValueError):
            build_device_shards(g, [Hierarchical((0, 1), 0, 0.5)], 50, 0.6, 0.5, seed=0)

    def test_deterministic(self):
        from conftest import tiny_shards

        a = [s.digest() for s in tiny_shards(seed=4)]
        b = [s.digest() for s in tiny_shards(seed=4)]
        c = [s.digest() for s in tiny_shards(seed=5)]
        assert a == b and a != c


class TestSpecs:
    def test_hierarchical_layout(self):
        specs = hierarchical_specs(seed=0)
        assert len(specs) == 30
        assert all(0.6 <= s.bias <= 0.7 for s in specs)
        assert specs[0].meta_labels == (0, 1, 2, 3, 4)
        assert specs[-1].meta_labels == (5, 6, 7, 8, 9)
        assert [s.focus_label for s in specs[:6]] == [0, 0, 0, 1, 1, 1]

    def test_fixed_bias(self):
        assert {s.bias for s in hierarchical_specs(bias=0.2)} == {0.2}

    def test_hypergeometric_layout(self):
        specs = hypergeometric_specs()
        assert len(specs) == 30
        assert sorted({s.K for s in specs}) == [5, 25, 45, 65, 85, 105]
        assert {(s.N, s.n) for s in specs} == {(110, 10)}
