"""Marchenko-Pastur law: density, quadrature against it, Wishart sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_model import ConfigError, NumericalFailure

MP_NODES = 2048


@dataclass(frozen=True)
class MPLaw:
    """MP law with ratio gamma: support [(1-sqrt g)^2, (1+sqrt g)^2] plus an atom at 0."""

    gamma: float

    def __post_init__(self):
        g = float(self.gamma)
        if not (math.isfinite(g) and g > 0):
            raise ConfigError(f"gamma must be positive and finite, got {self.gamma!r}")
        object.__setattr__(self, "gamma", g)

    @property
    def lambda_minus(self) -> float:
        return (1.0 - math.sqrt(self.gamma)) ** 2

    @property
    def lambda_plus(self) -> float:
        return (1.0 + math.sqrt(self.gamma)) ** 2

    @property
    def atom_mass(self) -> float:
        return max(0.0, 1.0 - 1.0 / self.gamma)


def _law(law) -> MPLaw:
    return law if isinstance(law, MPLaw) else MPLaw(law)


def mp_density(law, s):
    """Continuous part of the density; the atom at 0 is not included."""
    law = _law(law)
    s = np.asarray(s, dtype=float)
    lm, lp, g = law.lambda_minus, law.lambda_plus, law.gamma
    inside = (s > lm) & (s < lp) & (s > 0)
    safe = np.where(inside, s, 1.0)
    val = np.sqrt(np.clip((lp - safe) * (safe - lm), 0.0, None)) / (2.0 * math.pi * g * safe)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def mp_integrate(law, f, n_nodes: int = MP_NODES) -> float:
    """atom*f(0) + int f(s) rho(s) ds.

    With s = lm + (lp-lm) cos^2 t the density times ds becomes
    (lp-lm) sin^2 t (1 - lm/s) / (pi gamma) dt on [0, pi/2], a bounded weight.
    The lm/s factor is sharp when lm is small but nonzero (gamma near 1), so
    the part f(lm) * lm/s is integrated in closed form and only
    (f(s) - f(lm)) * lm/s goes through the midpoint rule.
    """
    law = _law(law)
    lm, lp, g = law.lambda_minus, law.lambda_plus, law.gamma
    width = lp - lm
    h = 0.5 * math.pi / n_nodes
    t = (np.arange(n_nodes) + 0.5) * h
    c2 = np.cos(t) ** 2
    s = lm + width * c2
    weight = width * np.sin(t) ** 2 / (math.pi * g)

    fs = _eval(f, s)
    total = h * np.dot(weight, fs)
    if lm > 0.0:
        f_lm = _eval(f, np.array([lm]))[0]
        total -= lm * h * np.dot(weight, (fs - f_lm) / s)
        # int_0^{pi/2} sin^2 t / (lm + width cos^2 t) dt
        root = math.sqrt(lm * (lm + width))
        sin_int = 0.5 * math.pi / root - 0.5 * math.pi * (1.0 - math.sqrt(lm / (lm + width))) / width
        total -= lm * f_lm * width / (math.pi * g) * sin_int
    if law.atom_mass > 0.0:
        total += law.atom_mass * _eval(f, np.array([0.0]))[0]
    return float(total)


def _eval(f, s):
    vals = np.asarray(f(s), dtype=float)
    if vals.shape != s.shape:
        vals = np.broadcast_to(vals, s.shape)
    if not np.all(np.isfinite(vals)):
        raise NumericalFailure("non-finite integrand on the MP support")
    return vals


def mp_cdf(law, x):
    """CDF of the full law (atom included) by cumulative quadrature."""
    law = _law(law)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    lm, lp = law.lambda_minus, law.lambda_plus
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        if xi < 0:
            out[i] = 0.0
        elif xi <= lm:
            out[i] = law.atom_mass
        elif xi >= lp:
            out[i] = 1.0
        else:
            out[i] = law.atom_mass + _partial_mass(law, xi)
    return out


def _partial_mass(law, x, n_nodes=MP_NODES):
    # s = lm + (x - lm) (1 - cos u)/2 concentrates nodes at the lower edge.
    lm, lp, g = law.lambda_minus, law.lambda_plus, law.gamma
    u = (np.arange(n_nodes) + 0.5) * math.pi / n_nodes
    half = 0.5 * (x - lm)
    s = lm + half * (1.0 - np.cos(u))
    ds = half * np.sin(u) * math.pi / n_nodes
    dens = np.sqrt(np.clip((lp - s) * (s - lm), 0, None)) / (2 * math.pi * g * s)
    return float(np.dot(dens, ds))


def sample_wishart_spectrum(d: int, m: int, sigma2: float = 1.0, seed: int = 0) -> np.ndarray:
    """Eigenvalues of X X^T / m for X d-by-m with iid N(0, sigma2), descending."""
    if d < 1 or m < 1:
        raise ConfigError("d and m must be positive")
    rng = np.random.default_rng(seed)
    x = rng.normal(0.0, math.sqrt(sigma2), size=(d, m))
    if d <= m:
        gram = x @ x.T / m
        n_zero = 0
    else:
        gram = x.T @ x / m
        n_zero = d - m
    try:
        eig = np.linalg.eigvalsh(gram)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from None
    eig = np.concatenate([np.clip(eig, 0.0, None), np.zeros(n_zero)])
    return np.sort(eig)[::-1]
