import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dranloc.errors import BadMagic, EmptyDatabase, EmptyInput, NonFiniteInput, ParseError, TooFewSamples, \
    ZeroVector
from dranloc.feature import FeatureMap
from dranloc.retrieval import (GemParams, GlobalDescriptor, descriptor_from_bytes, descriptor_to_bytes,
                               finalize_descriptor, fit_whitening, gem_pool, multiscale_descriptor,
                               rank_keyframes, top_k, whitening_from_bytes, whitening_to_bytes)

values = arrays(np.float64, (3, 4, 2), elements=st.floats(0.0, 10.0))


def fmap(v):
    return FeatureMap(np.asarray(v, dtype=np.float32).reshape(1, -1, 1) if np.ndim(v) == 1 else v, 1)


class TestGem:
    def test_hand_values(self):
        assert gem_pool(fmap([1, 2, 3, 4]), GemParams(1))[0] == pytest.approx(2.5, abs=1e-12)
        assert gem_pool(fmap([1, 2, 3, 4]), GemParams(2))[0] == pytest.approx(np.sqrt(7.5), rel=1e-12)

    def test_constant(self):
        for p in (1, 2.5, 3, 50):
            assert gem_pool(fmap([0.8] * 9), GemParams(p))[0] == pytest.approx(np.float32(0.8), rel=1e-12)

    def test_near_max_for_large_p(self, rng):
        x = rng.uniform(0.1, 10, (16, 16, 8))
        np.testing.assert_allclose(gem_pool(x, GemParams(100)), x.reshape(-1, 8).max(axis=0), rtol=0.05)

    def test_negative_clamped(self):
        assert gem_pool(fmap([-5, 0, 0, 4]), GemParams(1))[0] == pytest.approx(1.0)

    def test_per_channel_exponents(self):
        x = np.array([[[1.0, 1.0], [3.0, 3.0]]])
        out = gem_pool(x, GemParams([1.0, 2.0]))
        np.testing.assert_allclose(out, [2.0, np.sqrt(5.0)])

    def test_rejects(self):
        with pytest.raises(ValueError):
            GemParams(0.5)
        with pytest.raises(NonFiniteInput):
            gem_pool(np.array([[[np.nan]]]))

    @settings(max_examples=200, deadline=None)
    @given(values, st.floats(1.0, 8.0), st.floats(0.0, 8.0))
    def test_power_mean_monotone(self, x, p1, dp):
        a = gem_pool(x, GemParams(p1))
        b = gem_pool(x, GemParams(p1 + dp))
        assert np.all(b >= a * (1 - 1e-12) - 1e-300)

    def test_spatial_permutation_invariance(self, rng):
        x = rng.random((6, 7, 3))
        flat = x.reshape(-1, 3)
        y = flat[rng.permutation(len(flat))].reshape(7, 6, 3)
        np.testing.assert_array_equal(np.sort(flat, axis=0), np.sort(y.reshape(-1, 3), axis=0))
        np.testing.assert_array_equal(gem_pool(x), gem_pool(y))


class TestDescriptors:
    def test_normalise(self):
        np.testing.assert_allclose(finalize_descriptor([3, 4]).values, [0.6, 0.8])
        v = np.array([0.6, 0.8])
        np.testing.assert_array_equal(finalize_descriptor(v).values, v)
        with pytest.raises(ZeroVector):
            finalize_descriptor([0, 0])

    def test_multiscale(self, rng):
        m = FeatureMap(rng.random((4, 4, 6)), 16)
        single = finalize_descriptor(gem_pool(m))
        np.testing.assert_allclose(multiscale_descriptor([m, m, m]).values, single.values, atol=1e-15)
        np.testing.assert_allclose(multiscale_descriptor([m]).values, single.values, atol=1e-15)
        mixed = multiscale_descriptor([m, FeatureMap(rng.random((3, 3, 6)), 16), FeatureMap(rng.random((2, 2, 6)), 16)])
        assert np.linalg.norm(mixed.values) == pytest.approx(1.0)
        with pytest.raises(EmptyInput):
            multiscale_descriptor([])

    def test_bytes_round_trip(self, rng):
        d = GlobalDescriptor(rng.random(512).astype(np.float32))
        np.testing.assert_array_equal(descriptor_from_bytes(descriptor_to_bytes(d)).values, d.values)
        blob = descriptor_to_bytes(d)
        with pytest.raises(ParseError):
            descriptor_from_bytes(blob[:-4])
        with pytest.raises(BadMagic):
            descriptor_from_bytes(b"ABCD" + blob[4:])


class TestWhitening:
    def test_antipodal_pair(self):
        w = fit_whitening([[2.0, 0.0], [-2.0, 0.0]])
        out = w.apply([[2.0, 0.0], [-2.0, 0.0]])
        np.testing.assert_allclose(np.abs(out[:, 0]), [1.0, 1.0], rtol=1e-6)
        assert out[0, 0] == pytest.approx(-out[1, 0])

    def test_unit_covariance(self, rng):
        X = rng.normal(size=(400, 5)) @ rng.normal(size=(5, 5))
        w = fit_whitening(X)
        Y = w.apply(X)
        np.testing.assert_allclose(Y.T @ Y / len(Y), np.eye(5), atol=1e-6)

    def test_isotropic_is_scaled_orthogonal(self, rng):
        X = rng.normal(size=(20000, 4)) * 3.0
        M = fit_whitening(X).matrix
        c = np.sqrt(np.mean(np.sum(M * M, axis=1)))
        np.testing.assert_allclose(M @ M.T / c ** 2, np.eye(4), atol=0.1)

    def test_degenerate(self):
        w = fit_whitening([[1.0, 2.0]] * 5)
        assert np.all(np.abs(w.matrix) <= 1e-8 ** -0.5 + 1e-6)
        with pytest.raises(TooFewSamples):
            fit_whitening([[1.0, 2.0]])

    def test_bytes_round_trip(self, rng):
        w = fit_whitening(rng.normal(size=(10, 4)).astype(np.float32))
        r = whitening_from_bytes(whitening_to_bytes(w))
        np.testing.assert_allclose(r.matrix, w.matrix, rtol=1e-6)
        np.testing.assert_allclose(r.mean, w.mean, rtol=1e-6)


def unit_rows(rng, n, k):
    X = rng.normal(size=(n, k))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


class TestRanking:
    def test_self_first(self, rng):
        X = unit_rows(rng, 10, 8)
        db = {i: GlobalDescriptor(x) for i, x in enumerate(X)}
        r = rank_keyframes(db[4], db)
        assert r[0][0] == 4 and r[0][1] == pytest.approx(1.0, abs=1e-6)

    def test_antipodal(self, rng):
        x = unit_rows(rng, 1, 8)[0]
        r = rank_keyframes(GlobalDescriptor(x), {7: GlobalDescriptor(-x), 3: GlobalDescriptor(x)})
        assert [i for i, _ in r] == [3, 7]
        assert r[1][1] == pytest.approx(-1.0)

    def test_brute_force_and_ties(self, rng):
        X = unit_rows(rng, 100, 16)
        X[50] = X[10]
        db = {i: GlobalDescriptor(x) for i, x in enumerate(X)}
        q = GlobalDescriptor(X[10])
        r = rank_keyframes(q, db)
        sims = X @ X[10]
        expect = sorted(range(100), key=lambda i: (-sims[i], i))
        assert [i for i, _ in r] == expect
        assert [i for i, _ in r[:2]] == [10, 50]

    def test_orthogonal_invariance(self, rng):
        X = unit_rows(rng, 50, 12)
        Q = np.linalg.qr(rng.normal(size=(12, 12)))[0]
        q = unit_rows(rng, 1, 12)[0]
        a = rank_keyframes(GlobalDescriptor(q), {i: GlobalDescriptor(x) for i, x in enumerate(X)})
        b = rank_keyframes(GlobalDescriptor(Q @ q), {i: GlobalDescriptor(Q @ x) for i, x in enumerate(X)})
        assert [i for i, _ in a] == [i for i, _ in b]

    def test_top_k(self, rng):
        X = unit_rows(rng, 100, 8)
        r = rank_keyframes(GlobalDescriptor(X[0]), {i: GlobalDescriptor(x) for i, x in enumerate(X)})
        assert top_k(r, 1) == r[:1] and top_k(r, 3) == r[:3] and top_k(r, 500) == r
        with pytest.raises(ValueError):
            top_k(r, 0)

    def test_empty(self, rng):
        with pytest.raises(EmptyDatabase):
            rank_keyframes(GlobalDescriptor([1.0]), {})


def test_synthetic_retrieval_finds_neighbours(clean_bench):
    """The top retrieved keyframe is one of the three spatially nearest."""
    m = clean_bench.map
    for q in clean_bench.query_ids:
        r = rank_keyframes(clean_bench.store.descriptor(f"q_{q:04d}"), m.global_descriptors)
        assert r[0][0] in clean_bench.nearest_keyframes(q, 3)
