import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsmm.errors import PositivityError
from nsmm.grid import build_grid, build_kernel
from nsmm.operators import (
    TensorField,
    adjoint_smooth_1d,
    generalized_kl,
    l1_distance,
    nh_component_at,
    nonlinear_smooth_1d,
    outer_product,
    product_l1_distance,
    project_multiply,
    smooth_1d,
)

GRID8 = build_grid(0.0, 1.0, 8)
GAUSS8 = build_kernel(GRID8, 0.3, "gaussian")
GAUSS16 = build_kernel(build_grid(-1.0, 2.0, 16), 0.4, "gaussian")
UNIFORM8 = build_kernel(GRID8, 0.3, "uniform")

positive_vectors = st.lists(st.floats(1e-3, 10.0), min_size=16, max_size=16).map(np.array)
seeds = st.integers(0, 2**32 - 1)


def _naive_smooth(K, f, delta, transpose=False):
    G = len(f)
    out = np.zeros(G)
    for g in range(G):
        for h in range(G):
            out[g] += (K[h, g] if transpose else K[g, h]) * f[h] * delta
    return out


class TestSmooth:
    def test_uniform_kernel_gives_constant_with_same_mass(self, rng):
        f = rng.uniform(0, 3, size=8)
        out = smooth_1d(UNIFORM8, f)
        np.testing.assert_allclose(out, f.mean(), rtol=1e-14)
        assert out.sum() * GRID8.delta == pytest.approx(f.sum() * GRID8.delta, abs=1e-14)

    def test_zero_maps_to_zero(self, gauss32):
        assert np.all(smooth_1d(gauss32, np.zeros(32)) == 0)
        assert np.all(adjoint_smooth_1d(gauss32, np.zeros(32)) == 0)

    def test_one_cell_indicator_reads_off_a_column(self, gauss32):
        f = np.zeros(32)
        f[11] = 1 / gauss32.delta
        out = smooth_1d(gauss32, f)
        np.testing.assert_allclose(out, gauss32.K[:, 11], rtol=1e-14)
        assert out.sum() * gauss32.delta == pytest.approx(1.0, abs=1e-10)

    def test_adjoint_indicator_reads_off_a_row(self, gauss32):
        f = np.zeros(32)
        f[5] = 1 / gauss32.delta
        np.testing.assert_allclose(adjoint_smooth_1d(gauss32, f), gauss32.K[5, :], rtol=1e-14)

    def test_adjoint_equals_smooth_for_symmetric_kernel(self, gauss32, rng):
        f = rng.uniform(0, 1, size=32)
        np.testing.assert_allclose(adjoint_smooth_1d(gauss32, f), smooth_1d(gauss32, f), rtol=1e-9)

    def test_adjoint_uniform(self, rng):
        f = rng.uniform(0, 3, size=8)
        np.testing.assert_allclose(adjoint_smooth_1d(UNIFORM8, f), f.mean(), rtol=1e-14)

    def test_matches_naive_loops(self, rng):
        f = rng.uniform(0, 2, size=16)
        np.testing.assert_allclose(smooth_1d(GAUSS16, f), _naive_smooth(GAUSS16.K, f, GAUSS16.delta), rtol=1e-13)
        np.testing.assert_allclose(adjoint_smooth_1d(GAUSS16, f),
                                   _naive_smooth(GAUSS16.K, f, GAUSS16.delta, transpose=True), rtol=1e-13)

    def test_grid_mismatch(self, gauss32):
        with pytest.raises(ValueError):
            smooth_1d(gauss32, np.ones(8))

    @settings(max_examples=60, deadline=None)
    @given(positive_vectors)
    def test_mass_preserved(self, f):
        d = GAUSS16.delta
        assert smooth_1d(GAUSS16, f).sum() * d == pytest.approx(f.sum() * d, abs=1e-10)
        assert adjoint_smooth_1d(GAUSS16, f).sum() * d == pytest.approx(f.sum() * d, abs=1e-10)


class TestNonlinearSmooth:
    def test_constant_is_fixed(self, gauss32):
        np.testing.assert_allclose(nonlinear_smooth_1d(gauss32, np.full(32, 2.5)), 2.5, rtol=1e-10)

    def test_uniform_kernel_gives_geometric_mean(self, rng):
        f = rng.uniform(0.1, 2.0, size=8)
        f /= f.sum() * GRID8.delta
        out = nonlinear_smooth_1d(UNIFORM8, f)
        geo = math.exp(np.log(f).mean())
        np.testing.assert_allclose(out, geo, rtol=1e-13)
        assert geo <= 1.0

    def test_two_cell_step_matches_naive(self, gauss32):
        f = np.where(np.arange(32) < 16, 0.5, 1.5)
        K, d = gauss32.K, gauss32.delta
        expected = np.array([math.exp(sum(K[h, g] * math.log(f[h]) * d for h in range(32))) for g in range(32)])
        np.testing.assert_allclose(nonlinear_smooth_1d(gauss32, f), expected, rtol=1e-13)

    @pytest.mark.parametrize("bad", [0.0, -1.0])
    def test_rejects_nonpositive_cells(self, gauss32, bad):
        f = np.ones(32)
        f[3] = bad
        with pytest.raises(PositivityError):
            nonlinear_smooth_1d(gauss32, f)

    @settings(max_examples=80, deadline=None)
    @given(positive_vectors)
    def test_jensen_domination(self, f):
        d = GAUSS16.delta
        out = nonlinear_smooth_1d(GAUSS16, f)
        assert np.all(out > 0)
        assert out.sum() * d <= adjoint_smooth_1d(GAUSS16, f).sum() * d + 1e-12


class TestNhComponentAt:
    def test_constant_one(self):
        ones = [np.ones(8), np.ones(8)]
        for cell in [(0, 0), (3, 7), (7, 2)]:
            assert nh_component_at(1.0, ones, [GAUSS8, GAUSS8], cell) == pytest.approx(1.0, abs=1e-12)

    def test_constants_scale(self):
        margs = [np.full(8, 2.0), np.full(8, 0.75)]
        assert nh_component_at(0.5, margs, [GAUSS8, GAUSS8], (4, 1)) == pytest.approx(0.75, rel=1e-12)

    def test_matches_full_tensor(self, rng):
        from nsmm.oracle import tensor_nonlinear_smooth

        margs = [rng.uniform(0.1, 2.0, size=8) for _ in range(2)]
        field = TensorField((GRID8, GRID8), 0.7 * outer_product(margs))
        full = tensor_nonlinear_smooth(field, [GAUSS8, GAUSS8]).values
        for cell in [(0, 0), (2, 5), (7, 7)]:
            assert nh_component_at(0.7, margs, [GAUSS8, GAUSS8], cell) == pytest.approx(full[cell], abs=1e-10)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nh_component_at(1.0, [np.ones(8)], [GAUSS8, GAUSS8], (0, 0))


def _naive_marginals(values, dx, dy):
    G1, G2 = values.shape
    mx = [sum(values[i, j] for j in range(G2)) * dy for i in range(G1)]
    my = [sum(values[i, j] for i in range(G1)) * dx for j in range(G2)]
    return np.array(mx), np.array(my)


class TestTensorField:
    def test_rejects_rank_four(self):
        g = build_grid(0, 1, 2)
        with pytest.raises(ValueError):
            TensorField((g,) * 4, np.ones((2, 2, 2, 2)))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            TensorField((GRID8, GRID8), -np.ones((8, 8)))

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            TensorField((GRID8, GRID8), np.ones((8, 7)))


class TestProjectMultiply:
    def test_fixes_products(self, rng):
        a, b = rng.uniform(0.1, 2, size=8), rng.uniform(0.1, 2, size=8)
        f = TensorField((GRID8, GRID8), np.multiply.outer(a, b))
        np.testing.assert_allclose(project_multiply(f).values, f.values, atol=1e-12)

    def test_density_keeps_unit_mass(self, rng):
        v = rng.uniform(0, 1, size=(8, 8))
        f = TensorField((GRID8, GRID8), v / (v.sum() * GRID8.delta ** 2))
        assert project_multiply(f).mass() == pytest.approx(1.0, abs=1e-12)

    def test_matches_naive_marginalization(self, rng):
        v = rng.uniform(0, 1, size=(8, 8))
        f = TensorField((GRID8, GRID8), v)
        mx, my = _naive_marginals(v, GRID8.delta, GRID8.delta)
        total = sum(v[i, j] for i in range(8) for j in range(8)) * GRID8.delta ** 2
        expected = np.array([[mx[i] * my[j] / total for j in range(8)] for i in range(8)])
        np.testing.assert_allclose(project_multiply(f).values, expected, rtol=1e-12)

    def test_rejects_zero_mass(self):
        with pytest.raises(ValueError):
            project_multiply(TensorField((GRID8, GRID8), np.zeros((8, 8))))

    @settings(max_examples=40, deadline=None)
    @given(seeds, st.sampled_from([2, 3]))
    def test_idempotent_and_mass_preserving(self, seed, r):
        rng = np.random.default_rng(seed)
        G = 8 if r == 2 else 4
        grid = build_grid(0.0, 2.0, G)
        f = TensorField((grid,) * r, rng.uniform(0, 1, size=(G,) * r) + 1e-3)
        once = project_multiply(f)
        assert once.mass() == pytest.approx(f.mass(), abs=1e-10)
        np.testing.assert_allclose(project_multiply(once).values, once.values, atol=1e-10)


class TestGeneralizedKL:
    def test_self_is_zero(self, rng):
        f = rng.uniform(0, 1, size=16)
        f[3] = 0.0
        assert generalized_kl(f, f, 0.1) == 0.0

    def test_doubled(self, rng):
        f = rng.uniform(0.1, 1, size=16)
        mass = f.sum() * 0.1
        assert generalized_kl(2 * f, f, 0.1) == pytest.approx((2 * math.log(2) - 1) * mass, rel=1e-13)

    def test_matches_per_cell_loop(self, rng):
        f1, f2 = rng.uniform(0.05, 2, size=16), rng.uniform(0.05, 2, size=16)
        expected = sum((a * math.log(a / b) + b - a) * 0.25 for a, b in zip(f1, f2))
        assert generalized_kl(f1, f2, 0.25) == pytest.approx(expected, rel=1e-13)

    def test_zero_cells_contribute_f2(self):
        assert generalized_kl(np.array([0.0, 1.0]), np.array([3.0, 1.0]), 0.5) == 1.5

    def test_infinity_sentinel(self):
        assert generalized_kl(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == math.inf

    def test_accepts_grid_and_tensor(self, rng):
        f1, f2 = rng.uniform(0.1, 1, size=8), rng.uniform(0.1, 1, size=8)
        assert generalized_kl(f1, f2, GRID8) == generalized_kl(f1, f2, GRID8.delta)
        t1 = TensorField((GRID8, GRID8), np.multiply.outer(f1, f2))
        t2 = TensorField((GRID8, GRID8), np.multiply.outer(f2, f1))
        assert generalized_kl(t1, t2) == pytest.approx(generalized_kl(t1.values, t2.values, GRID8.delta ** 2))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            generalized_kl(np.ones(3), np.ones(4))


class TestL1:
    def test_self_is_zero(self, rng):
        f = rng.uniform(0, 1, size=16)
        assert l1_distance(f, f, 0.1) == 0.0

    def test_against_zero_is_mass(self, rng):
        f = rng.uniform(0, 1, size=16)
        assert l1_distance(f, np.zeros(16), 0.1) == pytest.approx(f.sum() * 0.1, rel=1e-14)

    def test_symmetric(self, rng):
        f1, f2 = rng.uniform(0, 1, size=16), rng.uniform(0, 1, size=16)
        assert l1_distance(f1, f2, 0.2) == l1_distance(f2, f1, 0.2)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            l1_distance(np.ones(3), np.ones(4))

    @settings(max_examples=150, deadline=None)
    @given(positive_vectors, positive_vectors, st.floats(0.01, 1.0), st.floats(1e-3, 1.0), st.floats(1e-3, 1.0))
    def test_pinsker_quarter_bound(self, f1, f2, delta, mass1, mass2):
        # the quarter constant needs masses <= 1, as for mixture components
        f1 = f1 * mass1 / (f1.sum() * delta)
        f2 = f2 * mass2 / (f2.sum() * delta)
        assert generalized_kl(f1, f2, delta) >= 0.25 * l1_distance(f1, f2, delta) ** 2 - 1e-12

    def test_quarter_bound_needs_bounded_mass(self):
        f1, f2 = np.ones(16), np.r_[np.ones(15), 3.0]
        assert generalized_kl(f1, f2) < 0.25 * l1_distance(f1, f2) ** 2


class TestProductL1:
    @pytest.mark.parametrize("r", [1, 2, 3])
    def test_matches_brute_force(self, rng, r):
        G = 7
        deltas = list(rng.uniform(0.1, 0.5, size=r))
        for _ in range(20):
            m1 = [rng.uniform(0.01, 2, size=G) for _ in range(r)]
            m2 = [rng.uniform(0.01, 2, size=G) for _ in range(r)]
            lam1, lam2 = rng.uniform(0.1, 1, size=2)
            brute = np.abs(lam1 * outer_product(m1) - lam2 * outer_product(m2)).sum() * np.prod(deltas)
            assert product_l1_distance(lam1, m1, lam2, m2, deltas) == pytest.approx(brute, rel=1e-12, abs=1e-14)

    def test_identical_is_zero(self, rng):
        m = [rng.uniform(0.1, 1, size=9) for _ in range(3)]
        assert product_l1_distance(0.4, m, 0.4, m, [0.1] * 3) == pytest.approx(0.0, abs=1e-15)

    def test_zero_entries_fall_back(self):
        m1 = [np.array([1.0, 0.0]), np.array([0.5, 0.5])]
        m2 = [np.array([0.0, 1.0]), np.array([1.0, 0.0])]
        brute = np.abs(outer_product(m1) - outer_product(m2)).sum()
        assert product_l1_distance(1.0, m1, 1.0, m2, [1.0, 1.0]) == brute
