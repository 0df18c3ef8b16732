"""Model parameters, activations and Gaussian-expectation constants.

The data model is y = w2^T sigma(W1 x / sqrt(d)) / sqrt(N) + eps with
x ~ N(0, sigma_x^2 I), W1 entries ~ N(0, 1/alpha), w2 entries ~ N(0, 1/alpha2)
and eps ~ N(0, sigma_eps^2).  Every other module reads its parameters from a
:class:`ModelConfig` and its activation statistics from :func:`constants`.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import expit, roots_hermite, roots_legendre


class ConfigError(ValueError):
    """Invalid user input (bad config value, unknown key, usage error)."""


class NumericalFailure(RuntimeError):
    """Non-convergence, non-finite values or eigensolver failure."""


RELU_SMOOTHNESS = "relu-violates-smoothness-assumption"


@dataclass(frozen=True)
class ModelConfig:
    """Scalar parameters of the data-generating model."""

    d: int
    n1: int
    m: int
    sigma_x2: float = 1.0
    sigma_eps2: float = 0.1
    alpha: float = 1.0
    alpha2: float = 1.0

    def __post_init__(self):
        for name in ("d", "n1", "m"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val or val < 1:
                raise ConfigError(f"{name} must be a positive integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        for name in ("sigma_x2", "sigma_eps2", "alpha", "alpha2"):
            val = float(getattr(self, name))
            if not (math.isfinite(val) and val > 0):
                raise ConfigError(f"{name} must be a positive finite real, got {val!r}")
            object.__setattr__(self, name, val)

    @property
    def beta1(self) -> float:
        return self.n1 / self.d

    @property
    def gamma0(self) -> float:
        return self.d / self.m

    @property
    def v(self) -> float:
        """Pre-activation scale sigma_x / sqrt(alpha)."""
        return math.sqrt(self.sigma_x2 / self.alpha)

    @property
    def n_params(self) -> int:
        return self.n1 * self.d + self.n1

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


class Activation(str, enum.Enum):
    LINEAR = "linear"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    RELU = "relu"

    @classmethod
    def parse(cls, value) -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            names = ", ".join(a.value for a in cls)
            raise ConfigError(f"unknown activation {value!r}; expected one of {names}") from None

    @property
    def smooth(self) -> bool:
        return self is not Activation.RELU

    @property
    def code(self) -> int:
        """Integer tag used by the compiled kernels."""
        return _ACT_CODES[self]

    def value_of(self, x):
        x = np.asarray(x, dtype=float)
        if self is Activation.LINEAR:
            return x.copy()
        if self is Activation.SIGMOID:
            return expit(x)
        if self is Activation.TANH:
            return np.tanh(x)
        return np.maximum(x, 0.0)

    def deriv(self, x):
        x = np.asarray(x, dtype=float)
        if self is Activation.LINEAR:
            return np.ones_like(x)
        if self is Activation.SIGMOID:
            s = expit(x)
            return s * (1.0 - s)
        if self is Activation.TANH:
            t = np.tanh(x)
            return 1.0 - t * t
        # relu'(0) := 0
        return (x > 0).astype(float)

    def __call__(self, x):
        return self.value_of(x)


_ACT_CODES = {Activation.LINEAR: 0, Activation.SIGMOID: 1, Activation.TANH: 2, Activation.RELU: 3}


@dataclass(frozen=True)
class GaussConstants:
    """eta0 = Var sigma(vz), theta11 = (v E sigma'(vz))^2, eta1 = E sigma'(vz)^2."""

    eta0: float
    theta11: float
    eta1: float
    v: float
    activation: Activation = Activation.LINEAR
    warnings: tuple = ()

    def as_dict(self) -> dict:
        return {"eta0": self.eta0, "theta11": self.theta11, "eta1": self.eta1, "v": self.v,
                "activation": self.activation.value}


GH_NODES = 201
HALF_LINE_CUTOFF = 12.0  # standard normal mass beyond 12 is ~1e-33


@lru_cache(maxsize=8)
def _hermite_rule(n: int):
    x, w = roots_hermite(n)
    return math.sqrt(2.0) * x, w / math.sqrt(math.pi)


@lru_cache(maxsize=8)
def _half_line_rule(n: int):
    x, w = roots_legendre(n)
    z = 0.5 * HALF_LINE_CUTOFF * (x + 1.0)
    wz = 0.5 * HALF_LINE_CUTOFF * w * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, wz


def gauss_expect(f, v: float, n_nodes: int = GH_NODES, rule: str = "folded") -> float:
    """E[f(v z)] for z ~ N(0,1).

    The default ``"folded"`` rule writes the integral as
    int_0^inf phi(z) (f(vz) + f(-vz)) dz and applies Gauss-Legendre on
    [0, 12].  Plain Gauss-Hermite (``rule="hermite"``) resolves neither a kink
    at the origin nor the narrow transition of tanh(vz) at large v; both are
    handled by the folded rule, which self-converges to ~1e-14.
    """
    if not v > 0:
        raise ConfigError(f"v must be positive, got {v!r}")
    if rule == "hermite":
        z, w = _hermite_rule(n_nodes)
        vals = np.asarray(f(v * z), dtype=float)
    elif rule == "folded":
        z, w = _half_line_rule(n_nodes)
        vals = np.asarray(f(v * z), dtype=float) + np.asarray(f(-v * z), dtype=float)
    else:
        raise ConfigError(f"unknown quadrature rule {rule!r}")
    if not np.all(np.isfinite(vals)):
        raise NumericalFailure("non-finite integrand value at a quadrature node")
    return float(np.dot(w, vals))


def constants(act, v: float, n_nodes: int = GH_NODES) -> GaussConstants:
    act = Activation.parse(act)
    if act is Activation.LINEAR and math.isfinite(v) and v > 0:
        # closed form: Var(vz) = (v E 1)^2 = v^2, E 1^2 = 1
        return GaussConstants(eta0=v * v, theta11=v * v, eta1=1.0, v=v, activation=act)
    mean = gauss_expect(act.value_of, v, n_nodes)
    second = gauss_expect(lambda x: act.value_of(x) ** 2, v, n_nodes)
    dmean = gauss_expect(act.deriv, v, n_nodes)
    eta1 = gauss_expect(lambda x: act.deriv(x) ** 2, v, n_nodes)
    eta0 = max(second - mean * mean, 0.0)
    flags = () if act.smooth else (RELU_SMOOTHNESS,)
    return GaussConstants(eta0=eta0, theta11=(v * dmean) ** 2, eta1=eta1, v=v,
                          activation=act, warnings=flags)


def constants_for(cfg: ModelConfig, act) -> GaussConstants:
    return constants(act, cfg.v)


def snr_db(cfg: ModelConfig) -> float:
    return 10.0 * math.log10(cfg.sigma_x2 / (cfg.alpha * cfg.alpha2 * cfg.sigma_eps2))


def sigma_eps2_for_snr(cfg: ModelConfig, snr: float) -> float:
    """Noise variance that puts ``cfg`` at the requested SNR in dB."""
    return cfg.sigma_x2 / (cfg.alpha * cfg.alpha2 * 10.0 ** (snr / 10.0))


CONFIG_KEYS = ("d", "n1", "m", "sigma_x2", "sigma_eps2", "alpha", "alpha2", "activation", "seed")


def parse_config_text(text: str) -> dict:
    """Parse flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        sep = "=" if "=" in line else ":" if ":" in line else None
        if sep is None:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (p.strip() for p in line.split(sep, 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path, **overrides):
    """Read a config file; returns (ModelConfig, Activation, seed).

    Keyword overrides that are not None replace file values.  d, n1 and m
    are required from one of the two sources.
    """
    try:
        raw = parse_config_text(Path(path).read_text()) if path is not None else {}
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for key, val in overrides.items():
        if key not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        if val is not None:
            raw[key] = val
    return config_from_mapping(raw)


def config_from_mapping(raw: dict):
    missing = [k for k in ("d", "n1", "m") if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys: {', '.join(missing)}")
    try:
        ints = {k: _as_int(k, raw[k]) for k in ("d", "n1", "m")}
        reals = {k: float(raw[k]) for k in ("sigma_x2", "sigma_eps2", "alpha", "alpha2") if k in raw}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg = ModelConfig(**ints, **reals)
    act = Activation.parse(raw.get("activation", "tanh"))
    seed = _as_int("seed", raw.get("seed", 42))
    return cfg, act, seed


def _as_int(key, value) -> int:
    try:
        f = float(value)
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {value!r}") from None
    if not f.is_integer():
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    return int(f)
