import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hbar import tensor as T
from hbar.kernels import (BatchTooSmallError, HsicSpecs, KernelConfigError, KernelSpec, centering,
                          gram, hsic, hsic_layers)
from hbar.oracles import grad_fd, hsic_naive, relative_error
from hbar.tensor import ShapeError, Tensor

GAUSS = KernelSpec.gaussian_scaled(5.0)
LIN = KernelSpec.linear()


class TestGram:
    def test_gaussian_diagonal_is_one(self, rng):
        k = gram(Tensor(rng.normal(size=(7, 3))), GAUSS).numpy()
        assert np.all(np.diag(k) == 1.0)

    def test_gaussian_exp_minus_one(self):
        sigma = 0.7
        # ||x - x'||^2 = 2 sigma^2
        x = np.array([[0.0, 0.0], [np.sqrt(2) * sigma, 0.0]])
        k = gram(Tensor(x), KernelSpec.gaussian_fixed(sigma)).numpy()
        assert k[0, 1] == pytest.approx(0.367879, abs=1e-6)

    def test_linear_onehot(self):
        k = gram(Tensor(np.eye(2)), LIN).numpy()
        assert k.tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_batch_too_small(self):
        with pytest.raises(BatchTooSmallError):
            gram(Tensor(np.ones((1, 3))), GAUSS)

    def test_bad_sigma(self):
        with pytest.raises(KernelConfigError):
            KernelSpec.gaussian_fixed(0.0)
        with pytest.raises(KernelConfigError):
            KernelSpec.gaussian_scaled(-1.0)

    def test_sigma_rule_uses_flattened_dim(self):
        assert GAUSS.resolve_sigma(784) == pytest.approx(5 * 28)
        x = np.random.default_rng(0).normal(size=(4, 2, 3))
        a = gram(Tensor(x), GAUSS).numpy()
        b = gram(Tensor(x.reshape(4, 6)), KernelSpec.gaussian_fixed(5 * np.sqrt(6))).numpy()
        np.testing.assert_allclose(a, b, rtol=1e-14)

    @settings(max_examples=30, deadline=None)
    @given(m=st.integers(2, 12), d=st.integers(1, 6), seed=st.integers(0, 10_000),
           kind=st.sampled_from(["gaussian", "linear"]))
    def test_symmetric_psd(self, m, d, seed, kind):
        x = np.random.default_rng(seed).normal(size=(m, d))
        k = gram(Tensor(x), GAUSS if kind == "gaussian" else LIN).numpy()
        assert np.max(np.abs(k - k.T)) <= 1e-12
        assert np.linalg.eigvalsh(k).min() >= -1e-8 * max(1.0, np.abs(k).max())

    def test_single_precision_symmetric(self, rng):
        k = gram(Tensor(rng.normal(size=(9, 4)).astype(np.float32)), GAUSS).numpy()
        assert k.dtype == np.float32
        assert np.max(np.abs(k - k.T)) <= 1e-6


class TestCentering:
    def test_m2(self):
        assert centering(2).data.tolist() == [[0.5, -0.5], [-0.5, 0.5]]

    def test_annihilates_constants(self):
        np.testing.assert_allclose(centering(5).data @ np.ones(5), 0, atol=1e-15)

    def test_idempotent(self):
        h = centering(4).data
        assert np.max(np.abs(h @ h - h)) < 1e-12
        np.testing.assert_array_equal(h, h.T)


class TestHsic:
    def test_identity_grams(self):
        i = Tensor(np.eye(2))
        assert hsic(i, i).item() == pytest.approx(1.0, abs=1e-15)

    def test_constant_variable_is_zero(self, rng):
        ka = gram(Tensor(rng.normal(size=(6, 3))), GAUSS)
        assert hsic(ka, Tensor(np.ones((6, 6)))).item() == 0.0
        assert hsic(Tensor(np.ones((6, 6))), ka).item() == 0.0

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            hsic(Tensor(np.eye(3)), Tensor(np.eye(4)))

    def test_matches_trace_form(self, rng):
        ka = gram(Tensor(rng.normal(size=(8, 3))), GAUSS).numpy()
        kb = gram(Tensor(rng.normal(size=(8, 2))), GAUSS).numpy()
        h = np.eye(8) - 1 / 8
        expect = np.trace(ka @ h @ kb @ h) / 49
        assert hsic(Tensor(ka), Tensor(kb)).item() == pytest.approx(expect, rel=1e-12)

    def test_random_m8_against_oracle(self, rng):
        for _ in range(5):
            x, z = rng.normal(size=(8, 3)), rng.normal(size=(8, 4))
            ours = hsic(gram(Tensor(x), GAUSS), gram(Tensor(z), GAUSS)).item()
            ref = hsic_naive(x, z, {"kind": "gaussian", "scale": 5.0}, {"kind": "gaussian", "scale": 5.0}).value
            assert abs(ours - ref) < 1e-10

    @settings(max_examples=40, deadline=None)
    @given(m=st.integers(2, 10), seed=st.integers(0, 10_000))
    def test_symmetric_exactly_and_nonnegative(self, m, seed):
        r = np.random.default_rng(seed)
        ka = gram(Tensor(r.normal(size=(m, 3))), GAUSS)
        kb = gram(Tensor(r.normal(size=(m, 2))), LIN)
        ab, ba = hsic(ka, kb).item(), hsic(kb, ka).item()
        assert ab == ba
        assert ab >= -1e-10

    def test_permutation_property(self, rng):
        m, d = 64, 5
        self_dep, perm_dep, const_dep = [], [], []
        for _ in range(100):
            x = rng.normal(size=(m, d))
            kx = gram(Tensor(x), GAUSS)
            self_dep.append(hsic(kx, kx).item())
            unrelated = rng.normal(size=(m, d))[rng.permutation(m)]
            perm_dep.append(hsic(kx, gram(Tensor(unrelated), GAUSS)).item())
            const_dep.append(hsic(kx, gram(Tensor(np.ones((m, d))), GAUSS)).item())
        assert np.mean(perm_dep) < 0.1 * np.mean(self_dep)
        assert np.mean(self_dep) > np.mean(perm_dep) > np.mean(const_dep) - 1e-12

    def test_gradient_wrt_samples(self, rng):
        x = rng.normal(size=(6, 3))
        ky = gram(Tensor(np.eye(3)[rng.integers(0, 3, 6)]), LIN)
        spec = KernelSpec.gaussian_fixed(1.5)

        def f(t):
            return hsic(gram(t, spec), ky)
        xt = Tensor(x, requires_grad=True)
        (g,) = T.grad(f(xt), [xt])
        fd = grad_fd(lambda a: f(Tensor(a)).item(), x).value
        assert relative_error(g, fd) < 1e-5

    def test_gradient_through_both_grams(self, rng):
        a0, b0 = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
        at, bt = Tensor(a0, requires_grad=True), Tensor(b0, requires_grad=True)
        spec = KernelSpec.gaussian_fixed(1.0)
        ga, gb = T.grad(hsic(gram(at, spec), gram(bt, spec)), [at, bt])
        fa = grad_fd(lambda a: hsic(gram(Tensor(a), spec), gram(Tensor(b0), spec)).item(), a0).value
        fb = grad_fd(lambda b: hsic(gram(Tensor(a0), spec), gram(Tensor(b), spec)).item(), b0).value
        assert relative_error(ga, fa) < 1e-5
        assert relative_error(gb, fb) < 1e-5


class TestHsicLayers:
    def test_self_dependence(self, rng):
        x = rng.normal(size=(10, 4))
        y = np.eye(2)[np.arange(10) % 2]
        hx, _ = hsic_layers(x, y, [Tensor(x)])
        kx = gram(Tensor(x), GAUSS)
        assert hx[0].item() == hsic(kx, kx).item() > 0

    def test_constant_latent(self, rng):
        x = rng.normal(size=(10, 4))
        y = np.eye(2)[np.arange(10) % 2]
        hx, hy = hsic_layers(x, y, [Tensor(np.full((10, 3), 2.5))])
        assert hx[0].item() == 0.0 and hy[0].item() == 0.0

    def test_composition(self, rng):
        x = rng.normal(size=(9, 4))
        y = np.eye(3)[np.arange(9) % 3]
        z1, z2 = Tensor(rng.normal(size=(9, 6))), Tensor(rng.normal(size=(9, 2)))
        hx, hy = hsic_layers(x, y, [z1, z2])
        assert len(hx) == len(hy) == 2
        for j, z in enumerate([z1, z2]):
            sx, sy = hsic_layers(x, y, [z])
            assert hx[j].item() == sx[0].item() and hy[j].item() == sy[0].item()

    def test_empty(self, rng):
        with pytest.raises(ValueError):
            hsic_layers(np.ones((3, 2)), np.eye(3), [])

    def test_batch_mismatch(self, rng):
        with pytest.raises(ShapeError):
            hsic_layers(rng.normal(size=(4, 2)), np.eye(4), [Tensor(rng.normal(size=(5, 2)))])

    def test_quadratic_cost_scaling(self):
        r = np.random.default_rng(0)

        def clock(m):
            x = r.normal(size=(m, 784))
            y = np.eye(10)[r.integers(0, 10, m)]
            zs = [Tensor(r.normal(size=(m, w))) for w in (256, 128, 10)]
            best = np.inf
            for _ in range(9):
                t = time.perf_counter()
                hsic_layers(x, y, zs)
                best = min(best, time.perf_counter() - t)
            return best
        clock(64)  # warm-up
        ratio = clock(256) / clock(128)
        assert 2.5 <= ratio <= 8, ratio


def test_default_specs():
    s = HsicSpecs()
    assert (s.x.kind, s.y.kind, s.z.kind) == ("gaussian", "linear", "gaussian")
    assert s.x.scale == 5.0 and s.z.scale == 5.0
