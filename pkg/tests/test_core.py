import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from yatkernel.core import (
    Family,
    KernelParams,
    as_points,
    biased_atom,
    kernel_eval,
    kernel_matrix,
    layer_atom_lipschitz,
    regularized_sq_distance,
    yat_compact_bound,
    yat_diagonal,
    yat_eval,
    yat_grad_center,
    yat_grad_center_batch,
    yat_grad_input,
    yat_grad_input_batch,
    yat_supremum_unbiased,
)

FD_STEP = 1e-5


def central_difference(f, v, h=FD_STEP):
    g = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (f(v + e) - f(v - e)) / (2 * h)
    return g


class TestKernelParams:
    def test_defaults(self):
        p = KernelParams()
        assert p.b == 0.0 and p.eps == 1.0 and p.family is Family.YAT

    def test_rejects_negative_bias_by_default(self):
        with pytest.raises(ValueError, match="allow_negative_bias"):
            KernelParams(b=-1.0)

    def test_negative_bias_behind_flag(self):
        assert KernelParams(b=-1.0, allow_negative_bias=True).b == -1.0

    @pytest.mark.parametrize("eps", [0.0, -1.0, math.inf, math.nan])
    def test_rejects_bad_eps(self, eps):
        with pytest.raises(ValueError):
            KernelParams(eps=eps)

    def test_rbf_needs_gamma(self):
        with pytest.raises(ValueError):
            KernelParams(family=Family.RBF)
        with pytest.raises(ValueError):
            KernelParams(family=Family.RBF, gamma=-1.0)
        assert KernelParams(family="rbf", gamma=2.0).family is Family.RBF

    def test_nan_inputs_rejected(self):
        with pytest.raises(ValueError):
            as_points([[0.0, math.nan]])


class TestPointwise:
    @pytest.mark.parametrize(
        "x, w, eps, expected",
        [((1.0, 2.0), (1.0, 2.0), 2.0, 2.0), ((1, 0), (0, 1), 1.0, 3.0), ((3, 4), (0, 0), 0.5, 25.5)],
    )
    def test_regularized_distance(self, x, w, eps, expected):
        assert regularized_sq_distance(x, w, eps) == expected

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            yat_eval([1.0, 0.0], [1.0, 0.0, 0.0], KernelParams())

    def test_zero_vectors(self):
        for d in (1, 3, 7):
            assert yat_eval(np.zeros(d), np.zeros(d), KernelParams()) == 0.0

    def test_diagonal(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            x = rng.normal(size=4)
            b, eps = rng.uniform(0, 3), rng.uniform(0.1, 5)
            k = yat_eval(x, x, KernelParams(b=b, eps=eps))
            assert k == pytest.approx((x @ x + b) ** 2 / eps, rel=1e-14)
            assert yat_diagonal(x, b, eps) == pytest.approx(k, rel=1e-14)

    def test_negative_bias_counterexample_entry(self):
        eps = 0.7
        p = KernelParams(b=-1.0, eps=eps, allow_negative_bias=True)
        assert yat_eval([1, 0], [0, 1], p) == pytest.approx(1 / (2 + eps), rel=1e-15)
        assert yat_eval([1, 0], [1, 0], p) == 0.0

    def test_other_families(self):
        assert kernel_eval([1, 2], [1, 2], KernelParams(eps=2.0, family=Family.IMQ)) == 0.5
        assert kernel_eval([1, 2], [1, 2], KernelParams(family=Family.RBF, gamma=3.0)) == 1.0
        assert kernel_eval([1, 0], [0, 1], KernelParams(b=1.0, family=Family.POLY2)) == 1.0

    def test_yat_eval_rejects_other_family(self):
        with pytest.raises(ValueError):
            yat_eval([1.0], [1.0], KernelParams(family=Family.IMQ))

    @pytest.mark.parametrize("family", list(Family))
    def test_symmetry_and_nonnegativity(self, family):
        p = KernelParams(b=0.4, eps=0.8, family=family, gamma=1.5 if family is Family.RBF else None)
        rng = np.random.default_rng(1)
        for _ in range(100):
            a, x = rng.normal(size=(2, 5))
            assert kernel_eval(a, x, p) == kernel_eval(x, a, p)
            assert kernel_eval(a, x, p) >= 0

    @pytest.mark.parametrize("family", list(Family))
    def test_matrix_matches_pointwise(self, family):
        p = KernelParams(b=0.3, eps=1.3, family=family, gamma=0.5 if family is Family.RBF else None)
        rng = np.random.default_rng(2)
        A, X = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
        K = kernel_matrix(A, X, p)
        for i in range(6):
            for j in range(4):
                assert K[i, j] == pytest.approx(kernel_eval(A[i], X[j], p), rel=1e-13)

    @settings(max_examples=200, deadline=None)
    @given(
        x=arrays(np.float64, 3, elements=st.floats(-1, 1)),
        w=arrays(np.float64, 3, elements=st.floats(-2, 2)),
        b=st.floats(0, 5),
        eps=st.floats(1e-3, 1e3),
    )
    def test_compact_bound(self, x, w, b, eps):
        R, W = np.linalg.norm(x), np.linalg.norm(w)
        k = yat_eval(w, x, KernelParams(b=b, eps=eps))
        assert k <= yat_compact_bound(R, W, b, eps) * (1 + 1e-12) + 1e-300


class TestSupremum:
    def test_unit_center(self):
        w = np.array([0.6, 0.8])
        val, arg = yat_supremum_unbiased(w, 1.0)
        assert val == pytest.approx(2.0, rel=1e-15)
        np.testing.assert_allclose(arg, 2 * w, rtol=1e-15)

    def test_zero_center(self):
        val, arg = yat_supremum_unbiased([0.0, 0.0], 1.0)
        assert val == 0.0 and arg is None

    def test_norm_two_eps_two(self):
        w = np.array([2.0, 0.0, 0.0])
        val, arg = yat_supremum_unbiased(w, 2.0)
        assert val == pytest.approx(12.0, rel=1e-15)
        np.testing.assert_allclose(arg, 1.5 * w, rtol=1e-15)
        # grid search along the ray agrees
        t = np.linspace(0, 5, 200001)
        vals = [yat_eval(w, s * w, KernelParams(eps=2.0)) for s in (1.49, 1.5, 1.51)]
        assert vals[1] >= max(vals[0], vals[2])
        ray = (t * 2.0) ** 2 * 4.0 / ((t - 1) ** 2 * 4.0 + 2.0)
        assert ray.max() == pytest.approx(12.0, rel=1e-9)
        assert t[np.argmax(ray)] == pytest.approx(1.5, abs=1e-4)

    def test_value_is_global_max_on_samples(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=4)
        val, _ = yat_supremum_unbiased(w, 0.3)
        X = rng.normal(size=(20000, 4)) * 3
        assert kernel_matrix(X, w[None, :], KernelParams(eps=0.3)).max() <= val


class TestGradients:
    @staticmethod
    def _draw(rng):
        d = int(rng.integers(1, 6))
        w = rng.uniform(-10, 10, size=d)
        x = rng.uniform(-10, 10, size=d)
        p = KernelParams(b=float(rng.uniform(0, 5)), eps=float(10 ** rng.uniform(-1, 1)))
        return w, x, p

    def test_center_gradient_matches_fd(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            w, x, p = self._draw(rng)
            g = yat_grad_center(w, x, p)
            fd = central_difference(lambda v: yat_eval(v, x, p), w)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-300)

    def test_input_gradient_matches_fd(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            w, x, p = self._draw(rng)
            g = yat_grad_input(w, x, p)
            fd = central_difference(lambda v: yat_eval(w, v, p), x)
            assert np.linalg.norm(g - fd) <= 1e-6 * max(np.linalg.norm(g), 1e-300)

    def test_zero_alignment_gives_zero(self):
        p = KernelParams(b=0.0)
        w, x = np.array([1.0, 0.0]), np.array([0.0, 3.0])
        assert np.all(yat_grad_center(w, x, p) == 0)
        assert np.all(yat_grad_input(w, x, p) == 0)

    def test_far_field_center_gradient(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            w = rng.normal(size=3)
            u = rng.normal(size=3)
            u /= np.linalg.norm(u)
            g = yat_grad_center(w, 1e6 * u, KernelParams(b=0.5, eps=1.0))
            assert np.linalg.norm(g - 2 * (u @ w) * u) <= 1e-4

    def test_batch_forms(self):
        rng = np.random.default_rng(7)
        W = rng.normal(size=(5, 3))
        x = rng.normal(size=3)
        p = KernelParams(b=0.2, eps=0.9)
        Gi = yat_grad_input_batch(W, x, p.b, p.eps)
        Gc = yat_grad_center_batch(W, x, p.b, p.eps)
        for j in range(5):
            np.testing.assert_allclose(Gi[j], yat_grad_input(W[j], x, p), rtol=1e-13)
            np.testing.assert_allclose(Gc[j], yat_grad_center(W[j], x, p), rtol=1e-13)

    def test_input_gradient_within_layer_constant(self):
        rng = np.random.default_rng(8)
        R, W, b, eps = 1.5, 2.0, 0.5, 0.7
        M = layer_atom_lipschitz(R, W, b, eps)
        for _ in range(2000):
            x = rng.normal(size=3)
            x *= R * rng.uniform() / np.linalg.norm(x)
            w = rng.normal(size=3)
            w *= W * rng.uniform() / np.linalg.norm(w)
            assert np.linalg.norm(yat_grad_input(w, x, KernelParams(b=b, eps=eps))) <= M

    def test_layer_constant_arithmetic(self):
        assert layer_atom_lipschitz(1.0, 1.0, 1.0, 1.0) == 20.0


def test_biased_atom_accepts_any_bias():
    assert biased_atom([1.0], [1.0], -1.0, 1.0) == 0.0
