import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crbounds.core_model import Activation, ConfigError, ModelConfig, constants
from crbounds.stieltjes import (BlockMatrixSpec, build_block_matrix, complex_residual,
                                empirical_stieltjes, solve_complex, solve_fixed_point,
                                u_critical)

TANH = constants("tanh", 1.0)


class TestFixedPoint:
    def test_residual_and_positivity(self):
        pair = solve_fixed_point(TANH, 1.0, 1.0, math.sqrt(0.1))
        assert pair.residual <= 1e-12
        assert pair.a1 > 0 and pair.a2 > 0
        # symmetric in (a1, a2) when beta1 = 1/gamma0
        np.testing.assert_allclose(pair.a1, pair.a2, rtol=1e-11)
        np.testing.assert_allclose(pair.a1, 1.51618055, rtol=1e-8)

    def test_large_u_asymptote(self):
        u = 1e4
        pair = solve_fixed_point(TANH, 2.0, 0.5, u)
        np.testing.assert_allclose(pair.a1, 2.0 / u, rtol=1e-3)
        np.testing.assert_allclose(pair.a2, 1.0 / (0.5 * u), rtol=1e-3)

    def test_newton_fallback(self):
        slow = solve_fixed_point(TANH, 1.0, 2.0, 0.3, damping=0.002)
        ref = solve_fixed_point(TANH, 1.0, 2.0, 0.3)
        assert slow.residual <= 1e-12
        np.testing.assert_allclose([slow.a1, slow.a2], [ref.a1, ref.a2], rtol=1e-10)

    def test_invalid(self):
        with pytest.raises(ConfigError):
            solve_fixed_point(TANH, 1.0, 1.0, 0.0)
        with pytest.raises(ConfigError):
            solve_fixed_point(TANH, -1.0, 1.0, 1.0)

    @settings(max_examples=30, deadline=None)
    @given(beta1=st.floats(0.1, 5.0), gamma0=st.floats(0.1, 5.0), u=st.floats(0.05, 3.0),
           name=st.sampled_from(["linear", "sigmoid", "tanh", "relu"]))
    def test_complex_consistency(self, beta1, gamma0, u, name):
        c = constants(name, 1.0)
        pair = solve_fixed_point(c, beta1, gamma0, u)
        m1, m2 = solve_complex(c, beta1, gamma0, 1j * u)
        assert pair.residual <= 1e-12
        assert abs(m1 - 1j * pair.a1) <= 1e-10 * max(1.0, pair.a1)
        assert abs(m2 - 1j * pair.a2) <= 1e-10 * max(1.0, pair.a2)


class TestComplex:
    def test_upper_half_plane(self):
        m1, m2 = solve_complex(TANH, 1.5, 0.7, 0.4 + 0.2j)
        assert m1.imag > 0 and m2.imag > 0
        assert complex_residual([m1, m2], TANH, 1.5, 0.7, 0.4 + 0.2j) <= 1e-12

    def test_rejects_real_axis(self):
        with pytest.raises(ConfigError):
            solve_complex(TANH, 1.0, 1.0, 1.0)

    def test_shift_enters_only_when_nonzero(self):
        base = solve_complex(TANH, 1.0, 1.0, 0.5j)
        shifted = solve_complex(TANH, 1.0, 1.0, 0.5j, s1=0.1)
        assert abs(base[0] - shifted[0]) > 1e-4


class TestBlockMatrix:
    def test_structure(self):
        rng = np.random.default_rng(42)
        x1 = rng.normal(size=(4, 6))
        q = np.eye(4)
        a = build_block_matrix(BlockMatrixSpec(x1, q, s1=0.3, s2=0.5, d=9))
        assert a.shape == (10, 10)
        np.testing.assert_array_equal(a, a.T)
        np.testing.assert_allclose(a[:4, 4:], x1 / 3.0)
        np.testing.assert_allclose(a[:4, :4], 0.8 * np.eye(4))
        np.testing.assert_array_equal(a[4:, 4:], 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            BlockMatrixSpec(np.zeros((3, 5)), np.zeros((4, 4)))

    def test_empirical_stieltjes(self):
        eigs = np.array([-1.0, 0.0, 2.0])
        xi = 0.5j
        np.testing.assert_allclose(empirical_stieltjes(eigs, 3, xi),
                                   np.mean(1.0 / (eigs - xi)))
        with pytest.raises(ConfigError):
            empirical_stieltjes(eigs, 3, 1.0)

    @pytest.mark.parametrize("name", ["tanh", "linear"])
    def test_empirical_matches_theory(self, name):
        # [DERIVED] finite-d oracle: (1/d) tr (A(0) - xi)^-1 -> m1 + m2
        rng = np.random.default_rng(42)
        cfg = ModelConfig(d=200, n1=200, m=200)
        act = Activation.parse(name)
        c = constants(act, cfg.v)
        u = u_critical(cfg)
        vals = []
        for _ in range(3):
            w1 = rng.normal(size=(cfg.n1, cfg.d))
            x = rng.normal(size=(cfg.d, cfg.m))
            x1 = act(w1 @ x / math.sqrt(cfg.d))
            a = build_block_matrix(BlockMatrixSpec(x1, w1 @ w1.T / cfg.d, d=cfg.d))
            vals.append(empirical_stieltjes(np.linalg.eigvalsh(a), cfg.d, 1j * u))
        m1, m2 = solve_complex(c, cfg.beta1, cfg.gamma0, 1j * u)
        np.testing.assert_allclose(np.mean(vals), m1 + m2, rtol=0.05)
