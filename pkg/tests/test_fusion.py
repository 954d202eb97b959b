import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carl import autodiff as ad
from carl.errors import ConfigError, ShapeError
from carl.fusion import FmHead, FusionConfig, dynamic_alpha, fm_score, fuse, loss, lr_score


def brute_fm(z, m0, m, V):
    total = m0 + m @ z
    for j, k in itertools.combinations(range(len(z)), 2):
        total += (V[j] @ V[k]) * z[j] * z[k]
    return total


def head(m0, m, V):
    return FmHead(ad.DiffArray(np.array([m0])), ad.DiffArray(np.asarray(m, float)), ad.DiffArray(np.asarray(V, float)))


def scalar(x):
    return float(np.asarray(x.data).ravel()[0])


class TestFm:
    def test_zero_input_gives_global_bias(self):
        assert scalar(fm_score(np.zeros(3), head(0.7, np.ones(3), np.ones((3, 2))))) == 0.7

    def test_worked_example(self):
        h = head(0.5, [0.1, 0.2], [[1.0, 0.0], [1.0, 1.0]])
        assert scalar(fm_score(np.array([1.0, 2.0]), h)) == pytest.approx(3.0, abs=1e-15)

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            d, v = rng.integers(1, 13), rng.integers(1, 6)
            z, m0, m, V = rng.normal(size=d), rng.normal(), rng.normal(size=d), rng.normal(size=(d, v))
            assert abs(scalar(fm_score(z, head(m0, m, V))) - brute_fm(z, m0, m, V)) < 1e-10

    def test_no_self_interaction(self):
        # a single feature has no pair, so the score is affine in it
        h = head(0.0, [1.0], [[3.0, 4.0]])
        assert scalar(fm_score(np.array([2.0]), h)) == 2.0

    def test_batched(self):
        rng = np.random.default_rng(1)
        h = head(0.1, rng.normal(size=4), rng.normal(size=(4, 3)))
        Z = rng.normal(size=(5, 4))
        batched = fm_score(Z, h).data
        np.testing.assert_allclose(batched, [scalar(fm_score(z, h)) for z in Z], atol=1e-14)

    def test_permutation_covariance(self):
        rng = np.random.default_rng(2)
        z, m, V = rng.normal(size=6), rng.normal(size=6), rng.normal(size=(6, 3))
        perm = rng.permutation(6)
        a = scalar(fm_score(z, head(0.2, m, V)))
        b = scalar(fm_score(z[perm], head(0.2, m[perm], V[perm])))
        assert a == pytest.approx(b, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            fm_score(np.ones(3), head(0.0, np.ones(2), np.ones((2, 2))))


class TestLr:
    def test_examples(self):
        assert scalar(lr_score(np.array([1.0, 2.0, 3.0]), np.zeros(3), np.array([0.4]))) == 0.4
        assert scalar(lr_score(np.array([1.0, 2.0, 3.0]), np.ones(3), np.array([0.0]))) == 6.0
        with pytest.raises(ShapeError):
            lr_score(np.ones(2), np.ones(3), np.zeros(1))


class TestFuse:
    def run(self, y_rev, y_int, b_u=0.0, b_i=0.0, cfg=None):
        pred, alpha = fuse(np.array([y_rev]), np.array([y_int]), np.array([b_u]), np.array([b_i]), cfg)
        return pred.data[0], alpha.data[0]

    def test_symmetric(self):
        assert self.run(2.0, 2.0) == (2.0, 0.5)

    def test_worked_example_exact(self):
        assert self.run(4.0, 1.0) == (3.4, 0.8)

    def test_clamp(self):
        pred, alpha = self.run(3.0, -1.0, 0.25, 0.5)
        assert alpha == 1.0 and pred == 3.75

    def test_clamp_low(self):
        pred, alpha = self.run(-1.0, 3.0)
        assert alpha == 0.0 and pred == 3.0

    def test_zero_total_guarded(self):
        pred, alpha = self.run(1.0, -1.0)
        assert np.isfinite(pred) and 0.0 <= alpha <= 1.0

    @given(st.floats(-10, 10), st.floats(-10, 10))
    @settings(max_examples=300, deadline=None)
    def test_alpha_range_and_betweenness(self, y_rev, y_int):
        pred, alpha = self.run(y_rev, y_int)
        assert 0.0 <= alpha <= 1.0
        slack = 1e-12 * max(1.0, abs(y_rev), abs(y_int))
        assert min(y_rev, y_int) - slack <= pred <= max(y_rev, y_int) + slack

    @given(st.floats(0.1, 10), st.floats(0.1, 10), st.floats(0.1, 100))
    @settings(max_examples=100, deadline=None)
    def test_scale_invariant_alpha(self, y_rev, y_int, c):
        a = dynamic_alpha(np.array([y_rev]), np.array([y_int])).data[0]
        b = dynamic_alpha(np.array([c * y_rev]), np.array([c * y_int])).data[0]
        assert a == pytest.approx(b, rel=1e-12)

    def test_static_and_single_modes(self):
        assert self.run(4.0, 1.0, cfg=FusionConfig("static", alpha=0.25)) == (1.75, 0.25)
        assert self.run(4.0, None, 1.0, cfg=FusionConfig("review")) == (5.0, 1.0)
        assert self.run(None, 1.0, cfg=FusionConfig("interaction")) == (1.0, 0.0)

    def test_gradient_through_alpha(self):
        # y = (a^2 + b^2) / (a + b); dy/da = (2a(a+b) - (a^2+b^2)) / (a+b)^2 at (4, 1)
        y_rev, y_int = ad.parameter(np.array([4.0])), ad.parameter(np.array([1.0]))
        with ad.Tape() as tape:
            pred, _ = fuse(y_rev, y_int, np.zeros(1), np.zeros(1))
            tape.backward(ad.sum_(pred))
        assert y_rev.grad[0] == pytest.approx(23 / 25, rel=1e-14)
        assert y_int.grad[0] == pytest.approx(-7 / 25, rel=1e-14)

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            FusionConfig("blend")
        with pytest.raises(ConfigError):
            FusionConfig("static", alpha=1.5)


class TestLoss:
    def test_examples(self):
        assert loss(np.array([3.0, 4.0]), np.array([3.0, 4.0])).data == 0.0
        assert loss(np.array([3.0, 4.0]), np.array([5.0, 4.0])).data == 4.0

    def test_regulariser(self):
        w = ad.parameter(np.array([1.0, 2.0]))
        assert loss(np.zeros(1), np.zeros(1), [w], 0.5).data == 2.5
        with pytest.raises(ConfigError):
            loss(np.zeros(1), np.zeros(1), [w], -1.0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            loss(np.zeros(2), np.zeros(3))


class TestGuardedFusion:
    @pytest.mark.parametrize("y", [1.775479587586883e-09, 4e-9])
    def test_tiny_equal_scores(self, y):
        pred, alpha = fuse(np.array([y]), np.array([y]), np.zeros(1), np.zeros(1))
        assert pred.data[0] == pytest.approx(y, rel=1e-12)
        assert 0.0 <= alpha.data[0] <= 1.0
