"""Coupled Stieltjes fixed point (m1, m2) and the block matrix A(s).

Complex form, for xi in the upper half plane:

    m1 = beta1 / (-xi + s1 - (eta0-theta) m2 + (s2 - theta m2) / (1 + s2 m1 - theta m1 m2))
    m2 = (1/gamma0) / (-xi - (eta0-theta) m1 - theta m1 / (1 + s2 m1 - theta m1 m2))

On the imaginary axis xi = iu with s = 0 the solution is m_i = i a_i with
a_i > 0, and the real pair solves

    a1 = beta1 / (u + (eta0-theta) a2 + theta a2 / (1 + theta a1 a2))
    a2 = (1/gamma0) / (u + (eta0-theta) a1 + theta a1 / (1 + theta a1 a2)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_model import ConfigError, GaussConstants, ModelConfig, NumericalFailure

MAX_ITER = 10_000
TOL = 1e-12


@dataclass(frozen=True)
class StieltjesPair:
    a1: float
    a2: float
    u: float
    residual: float
    iterations: int


def u_critical(cfg: ModelConfig) -> float:
    """Evaluation point sigma_eps sqrt(alpha2 beta1) used by B2."""
    return math.sqrt(cfg.sigma_eps2 * cfg.alpha2 * cfg.beta1)


def _real_map(a, eta0, theta, beta1, gamma0, u):
    a1, a2 = a
    k = 1.0 + theta * a1 * a2
    g1 = beta1 / (u + (eta0 - theta) * a2 + theta * a2 / k)
    g2 = (1.0 / gamma0) / (u + (eta0 - theta) * a1 + theta * a1 / k)
    return np.array([g1, g2])


def _real_residual(a, *args):
    g = _real_map(a, *args)
    return float(np.max(np.abs(g - a) / np.maximum(np.abs(a), 1e-300)))


def solve_fixed_point(consts: GaussConstants, beta1: float, gamma0: float, u: float,
                      damping: float = 0.5, max_iter: int = MAX_ITER, tol: float = TOL) -> StieltjesPair:
    """Real solution (a1, a2) at u > 0; residual is relative, max over both equations.

    Damped iteration, switching to 2x2 Newton on a - G(a) when the residual
    drops by less than 10% over 50 iterations.
    """
    if not u > 0:
        raise ConfigError(f"u must be positive, got {u!r}")
    if not (beta1 > 0 and gamma0 > 0):
        raise ConfigError("beta1 and gamma0 must be positive")
    args = (consts.eta0, consts.theta11, beta1, gamma0, u)
    a = np.array([beta1 / u, 1.0 / (gamma0 * u)])
    res = _real_residual(a, *args)
    checkpoint = res
    newton = False
    for it in range(1, max_iter + 1):
        if newton:
            a = _newton_step(a, args)
        else:
            a = (1.0 - damping) * a + damping * _real_map(a, *args)
        if not np.all(np.isfinite(a)) or np.any(a <= 0):
            raise NumericalFailure(f"fixed-point iterate left the positive quadrant at iteration {it}")
        res = _real_residual(a, *args)
        if res <= tol:
            return StieltjesPair(float(a[0]), float(a[1]), float(u), res, it)
        if not newton and it % 50 == 0:
            if res > 0.9 * checkpoint:
                newton = True
            checkpoint = res
    raise NumericalFailure(f"fixed point did not converge in {max_iter} iterations (residual {res:.3e})")


def _newton_step(a, args, h=1e-7):
    f0 = a - _real_map(a, *args)
    jac = np.empty((2, 2))
    for j in range(2):
        step = np.zeros(2)
        step[j] = h * max(abs(a[j]), 1.0)
        jac[:, j] = ((a + step) - _real_map(a + step, *args) - f0) / step[j]
    delta = np.linalg.solve(jac, f0)
    new = a - delta
    # keep positivity: fall back to halving the step
    while np.any(new <= 0):
        delta *= 0.5
        new = a - delta
    return new


def _complex_map(m, eta0, theta, beta1, gamma0, xi, s1, s2):
    m1, m2 = m
    k = 1.0 + s2 * m1 - theta * m1 * m2
    g1 = beta1 / (-xi + s1 - (eta0 - theta) * m2 + (s2 - theta * m2) / k)
    g2 = (1.0 / gamma0) / (-xi - (eta0 - theta) * m1 - theta * m1 / k)
    return np.array([g1, g2], dtype=complex)


def complex_residual(m, consts: GaussConstants, beta1, gamma0, xi, s1=0.0, s2=0.0) -> float:
    m = np.asarray(m, dtype=complex)
    g = _complex_map(m, consts.eta0, consts.theta11, beta1, gamma0, xi, s1, s2)
    return float(np.max(np.abs(g - m) / np.maximum(np.abs(m), 1e-300)))


def solve_complex(consts: GaussConstants, beta1: float, gamma0: float, xi: complex,
                  s1: float = 0.0, s2: float = 0.0, damping: float = 0.5,
                  max_iter: int = MAX_ITER, tol: float = TOL):
    """Upper-half-plane solution (m1, m2) at (xi, s).

    Starts from the large-|xi| asymptote m1 = -beta1/xi, m2 = -1/(gamma0 xi).
    The s2 shift couples to alpha W1 W1^T / d (unit-variance weights).
    """
    xi = complex(xi)
    if not xi.imag > 0:
        raise ConfigError("xi must lie in the open upper half plane")
    args = (consts.eta0, consts.theta11, beta1, gamma0, xi, s1, s2)
    m = np.array([-beta1 / xi, -1.0 / (gamma0 * xi)], dtype=complex)
    res = math.inf
    for it in range(1, max_iter + 1):
        m = (1.0 - damping) * m + damping * _complex_map(m, *args)
        if not np.all(np.isfinite(m)):
            raise NumericalFailure("complex fixed-point iterate became non-finite")
        res = complex_residual(m, consts, beta1, gamma0, xi, s1, s2)
        if res <= tol:
            return complex(m[0]), complex(m[1])
    raise NumericalFailure(f"complex fixed point did not converge (residual {res:.3e})")


@dataclass(frozen=True)
class BlockMatrixSpec:
    """Inputs of A(s): x1 = sigma(W1 X / sqrt d) (N x M), q = W1 W1^T / d (N x N)."""

    x1: np.ndarray
    q: np.ndarray
    s1: float = 0.0
    s2: float = 0.0
    d: int | None = None

    def __post_init__(self):
        x1 = np.asarray(self.x1, dtype=float)
        q = np.asarray(self.q, dtype=float)
        if x1.ndim != 2 or q.shape != (x1.shape[0], x1.shape[0]):
            raise ConfigError(f"dimension mismatch: x1 {x1.shape}, q {q.shape}")
        object.__setattr__(self, "x1", x1)
        object.__setattr__(self, "q", q)


def build_block_matrix(spec: BlockMatrixSpec) -> np.ndarray:
    """A(s) = [[s1 I + s2 Q, Z], [Z^T, 0]] with Z = x1 / sqrt(d).

    The 1/sqrt(d) scaling is the one under which the empirical Stieltjes
    transform (1/d) sum (lambda - xi)^-1 tends to m1 + m2; ``spec.d=None``
    means no scaling (d taken as 1).
    """
    n, m = spec.x1.shape
    z = spec.x1 / math.sqrt(spec.d) if spec.d else spec.x1
    a = np.zeros((n + m, n + m))
    top = spec.s1 * np.eye(n) + spec.s2 * spec.q
    a[:n, :n] = np.triu(top) + np.triu(top, 1).T
    a[:n, n:] = z
    a[n:, :n] = z.T
    return a


def empirical_stieltjes(eigs, d: int, xi: complex) -> complex:
    xi = complex(xi)
    if xi.imag == 0:
        raise ConfigError("xi must have nonzero imaginary part")
    eigs = np.asarray(eigs, dtype=float)
    return complex(np.sum(1.0 / (eigs - xi)) / d)
