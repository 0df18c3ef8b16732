"""Cramer-Rao / Van Trees lower bounds and the ridge tightness oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core_model import Activation, ConfigError, GaussConstants, ModelConfig, constants
from .mp_law import MPLaw, mp_integrate
from .stieltjes import solve_complex, solve_fixed_point, u_critical

SIGMA_EPS_PREFACTOR = "two-layer-bound-omits-extra-sigma_eps2-prefactor"

BOUND_KINDS = ("unbiased", "linear_any", "b1", "b2", "two_layer_max", "ridge_error")
RANK_MODELS = ("linear_regression", "linear_two_layer", "nonlinear_two_layer")


@dataclass(frozen=True)
class BoundReport:
    kind: str
    value: float
    cfg: ModelConfig | None = None
    consts: GaussConstants | None = None
    warnings: tuple = ()
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in BOUND_KINDS:
            raise ConfigError(f"unknown bound kind {self.kind!r}")

    def as_dict(self) -> dict:
        out = {"kind": self.kind, "value": self.value, "warnings": list(self.warnings)}
        if self.cfg is not None:
            out["config"] = self.cfg.as_dict()
        if self.consts is not None:
            out["constants"] = self.consts.as_dict()
        out.update(self.extra)
        return out


def bound_unbiased(expected_rank: float, m: int, sigma_eps2: float) -> float:
    """sigma_eps^2 * rank / M for unbiased estimators."""
    if m < 1:
        raise ConfigError("m must be at least 1")
    if expected_rank < 0:
        raise ConfigError("expected rank must be nonnegative")
    return sigma_eps2 * expected_rank / m


def rank_for_model(model: str, cfg: ModelConfig) -> float:
    if model == "linear_regression" or model == "linear_two_layer":
        return float(cfg.d)
    if model == "nonlinear_two_layer":
        return float(cfg.n1 * cfg.d)
    raise ConfigError(f"unknown model {model!r}; expected one of {', '.join(RANK_MODELS)}")


def bound_linear_any(cfg: ModelConfig) -> BoundReport:
    """Bayesian bound for linear regression, any estimator.

    sigma_eps^2 sigma_x^2 int 1/(sigma_x^2 s/gamma0 + alpha sigma_eps^2) d rho_gamma0(s).
    """
    g, sx2, se2, a = cfg.gamma0, cfg.sigma_x2, cfg.sigma_eps2, cfg.alpha
    val = se2 * sx2 * mp_integrate(MPLaw(g), lambda s: 1.0 / (sx2 * s / g + a * se2))
    return BoundReport("linear_any", max(val, 0.0), cfg)


def ridge_lambda_opt(cfg: ModelConfig) -> float:
    return cfg.sigma_eps2 * cfg.alpha * cfg.gamma0


def ridge_error(cfg: ModelConfig, lam: float) -> float:
    """Asymptotic error of ridge with penalty lam on the X X^T / M scale."""
    if not lam > 0:
        raise ConfigError("ridge penalty must be positive")
    g, sx2, se2, a = cfg.gamma0, cfg.sigma_x2, cfg.sigma_eps2, cfg.alpha
    integrand = lambda s: (lam * lam / (g * a) + se2 * sx2 * s) / (sx2 * s + lam) ** 2
    return sx2 * g * mp_integrate(MPLaw(g), integrand)


def ridge_estimate(x: np.ndarray, y: np.ndarray, lam: float) -> np.ndarray:
    """theta_hat = (X X^T/M + lam I)^{-1} X y sqrt(d)/M for y = X^T theta/sqrt(d) + eps."""
    d, m = x.shape
    gram = x @ x.T / m
    gram[np.diag_indices(d)] += lam
    return np.linalg.solve(gram, x @ y) * math.sqrt(d) / m


def ridge_trial_errors(cfg: ModelConfig, lam: float, trials: int, seed: int = 0) -> np.ndarray:
    """Noise-free test error sigma_x^2 |theta_hat - theta|^2 / d over fresh problems."""
    rng = np.random.default_rng(seed)
    d, m = cfg.d, cfg.m
    out = np.empty(trials)
    for t in range(trials):
        theta = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha), d)
        x = rng.normal(0.0, math.sqrt(cfg.sigma_x2), (d, m))
        y = x.T @ theta / math.sqrt(d) + rng.normal(0.0, math.sqrt(cfg.sigma_eps2), m)
        diff = ridge_estimate(x, y, lam) - theta
        out[t] = cfg.sigma_x2 * float(diff @ diff) / d
    return out


def _consts(cfg, consts):
    if consts is None:
        raise ConfigError("GaussConstants required")
    return consts


def bound_b1(cfg: ModelConfig, consts: GaussConstants) -> BoundReport:
    """Output-layer bound; depends on gamma0 but not on n1."""
    consts = _consts(cfg, consts)
    th, se2, a2, g = consts.theta11, cfg.sigma_eps2, cfg.alpha2, cfg.gamma0
    integrand = lambda s: (1.0 + th * (1.0 - 1.0 / g) * s / (se2 * a2)) / (th * s + a2 * se2)
    val = se2 * th * mp_integrate(MPLaw(1.0 / g), integrand)
    return BoundReport("b1", max(val, 0.0), cfg, consts, consts.warnings)


def bound_b1_prelimit(cfg: ModelConfig, consts: GaussConstants) -> float:
    """Second closed form of B1, integrated against rho_gamma0.

    (theta/alpha2) (1 - theta int s / (theta s + gamma0 alpha2 sigma_eps^2) d rho_gamma0)
    """
    th, se2, a2, g = consts.theta11, cfg.sigma_eps2, cfg.alpha2, cfg.gamma0
    inner = mp_integrate(MPLaw(g), lambda s: s / (th * s + g * a2 * se2))
    return th / a2 * (1.0 - th * inner)


def b2_prefactor(cfg: ModelConfig) -> float:
    return math.sqrt(cfg.sigma_eps2 / (cfg.alpha2 * cfg.beta1))


def bound_b2(cfg: ModelConfig, consts: GaussConstants) -> BoundReport:
    """First-layer bound through the Stieltjes pair at u_c = sigma_eps sqrt(alpha2 beta1)."""
    consts = _consts(cfg, consts)
    pair = solve_fixed_point(consts, cfg.beta1, cfg.gamma0, u_critical(cfg))
    th, eta0 = consts.theta11, consts.eta0
    val = b2_prefactor(cfg) * pair.a1 * (th / (1.0 + th * pair.a1 * pair.a2) + eta0 - th)
    extra = {"a1": pair.a1, "a2": pair.a2, "u_c": pair.u, "residual": pair.residual}
    return BoundReport("b2", max(val, 0.0), cfg, consts, consts.warnings, extra)


def bound_b2_complex(cfg: ModelConfig, consts: GaussConstants) -> complex:
    """B2 evaluated on the complex path: -(pref) i m1 [theta/(1 - theta m1 m2) + eta0 - theta]."""
    xi = 1j * u_critical(cfg)
    m1, m2 = solve_complex(consts, cfg.beta1, cfg.gamma0, xi)
    th, eta0 = consts.theta11, consts.eta0
    return -b2_prefactor(cfg) * 1j * m1 * (th / (1.0 - th * m1 * m2) + eta0 - th)


def bound_two_layer(cfg: ModelConfig, act) -> BoundReport:
    """max(B1, B2), with no extra sigma_eps^2 factor in front."""
    act = Activation.parse(act)
    consts = constants(act, cfg.v)
    b1 = bound_b1(cfg, consts)
    b2 = bound_b2(cfg, consts)
    warnings = tuple(dict.fromkeys(consts.warnings + (SIGMA_EPS_PREFACTOR,)))
    extra = {"b1": b1.value, "b2": b2.value, "winner": "b1" if b1.value >= b2.value else "b2"}
    return BoundReport("two_layer_max", max(b1.value, b2.value), cfg, consts, warnings, extra)
