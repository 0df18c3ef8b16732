"""Finite-d Fisher information: gradients, Monte Carlo spectra, ranks."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core_model import Activation, ConfigError, ModelConfig, NumericalFailure

RANK_REL_TOL = 1e-6
MC_FLOOR = 10
CHUNK = 2048


@dataclass(frozen=True)
class TwoLayerParams:
    w1: np.ndarray
    w2: np.ndarray

    def __post_init__(self):
        w1 = np.asarray(self.w1, dtype=float)
        w2 = np.asarray(self.w2, dtype=float).ravel()
        if w1.ndim != 2 or w1.shape[0] != w2.shape[0]:
            raise ConfigError(f"weight shapes disagree: w1 {w1.shape}, w2 {w2.shape}")
        object.__setattr__(self, "w1", w1)
        object.__setattr__(self, "w2", w2)

    @property
    def n1(self) -> int:
        return self.w1.shape[0]

    @property
    def d(self) -> int:
        return self.w1.shape[1]

    @property
    def n_params(self) -> int:
        return self.w1.size + self.w2.size

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.w2])

    @classmethod
    def from_flat(cls, theta, n1: int, d: int) -> "TwoLayerParams":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[: n1 * d].reshape(n1, d).copy(), theta[n1 * d:].copy())

    @classmethod
    def sample(cls, cfg: ModelConfig, rng) -> "TwoLayerParams":
        w1 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha), (cfg.n1, cfg.d))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha2), cfg.n1)
        return cls(w1, w2)


def forward(params: TwoLayerParams, x, act) -> np.ndarray:
    """f(x) = w2^T sigma(W1 x / sqrt d) / sqrt N for x of shape (d,) or (d, n)."""
    act = Activation.parse(act)
    q = params.w1 @ np.asarray(x, dtype=float) / math.sqrt(params.d)
    return params.w2 @ act.value_of(q) / math.sqrt(params.n1)


def grad_two_layer(params: TwoLayerParams, x, act) -> np.ndarray:
    """Gradient of f at x: [vec_rowmajor(D w2 x^T)/sqrt(N d), sigma(q)/sqrt(N)]."""
    return grad_batch(params, np.asarray(x, dtype=float)[:, None], act)[:, 0]


def grad_batch(params: TwoLayerParams, x: np.ndarray, act) -> np.ndarray:
    """Per-sample gradients stacked as columns, shape (P, n) for x of shape (d, n)."""
    act = Activation.parse(act)
    n1, d = params.w1.shape
    q = params.w1 @ x / math.sqrt(d)
    s = act.deriv(q) * params.w2[:, None]                      # (N, n)
    g1 = (s[:, None, :] * x[None, :, :]).reshape(n1 * d, -1) / math.sqrt(n1 * d)
    g2 = act.value_of(q) / math.sqrt(n1)
    return np.vstack([g1, g2])


@dataclass(frozen=True)
class FisherSpectrum:
    eigenvalues: np.ndarray
    mc_samples: int
    rank_estimate: int
    threshold: float
    min_raw_eigenvalue: float = 0.0

    def to_csv(self, path) -> None:
        write_spectrum_csv(path, self.eigenvalues)


def numerical_rank(eigs, rel_tol: float = RANK_REL_TOL) -> int:
    eigs = np.asarray(eigs, dtype=float)
    if eigs.size == 0:
        return 0
    top = float(np.max(eigs))
    if top <= 0:
        return 0
    return int(np.count_nonzero(eigs > rel_tol * top))


def _spectrum(mat: np.ndarray, n_mc: int, rel_tol: float) -> FisherSpectrum:
    mat = 0.5 * (mat + mat.T)
    try:
        eig = np.linalg.eigvalsh(mat)[::-1]
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigensolver failed: {exc}") from None
    raw_min = float(eig[-1])
    eig = np.clip(eig, 0.0, None)
    return FisherSpectrum(eig, n_mc, numerical_rank(eig, rel_tol), rel_tol, raw_min)


def _chunk_gram(grad_fn, d, sigma_x, seq, n):
    rng = np.random.default_rng(seq)
    x = rng.normal(0.0, sigma_x, (d, n))
    j = grad_fn(x)
    return j @ j.T


def mc_gram(grad_fn, d: int, sigma_x2: float, n_mc: int, seed: int, workers: int | None = None):
    """(1/n) sum J(x_i) J(x_i)^T over x_i ~ N(0, sigma_x2 I).

    Samples come in fixed chunks, each with its own child seed, so the result
    depends only on (seed, n_mc) and the reduction order of chunk sums.
    """
    sizes = [CHUNK] * (n_mc // CHUNK) + ([n_mc % CHUNK] if n_mc % CHUNK else [])
    seqs = np.random.SeedSequence(seed).spawn(len(sizes))
    sx = math.sqrt(sigma_x2)
    workers = workers or 1
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(lambda a: _chunk_gram(grad_fn, d, sx, *a), zip(seqs, sizes)))
    else:
        parts = [_chunk_gram(grad_fn, d, sx, s, n) for s, n in zip(seqs, sizes)]
    total = parts[0].copy()
    for p in parts[1:]:
        total += p
    return total / n_mc


def fisher_mc(params: TwoLayerParams, cfg: ModelConfig, n_mc: int, seed: int = 0, act="tanh",
              rel_tol: float = RANK_REL_TOL, workers: int | None = None) -> FisherSpectrum:
    """Spectrum of A = E_x[grad f grad f^T] estimated from n_mc samples."""
    if params.w1.shape != (cfg.n1, cfg.d):
        raise ConfigError("parameter shapes do not match the config")
    p = params.n_params
    if n_mc < MC_FLOOR * p:
        raise ConfigError(f"n_mc={n_mc} below the floor {MC_FLOOR}*P={MC_FLOOR * p}")
    act = Activation.parse(act)
    gram = mc_gram(lambda x: grad_batch(params, x, act), cfg.d, cfg.sigma_x2, n_mc, seed, workers)
    return _spectrum(gram, n_mc, rel_tol)


def default_workers() -> int:
    return os.cpu_count() or 1


# deep linear networks

def _check_chain(weights, d):
    prev = d
    for i, w in enumerate(weights):
        w = np.asarray(w)
        if w.ndim != 2 or w.shape[1] != prev:
            raise ConfigError(f"layer {i + 1} has shape {w.shape}, expected (*, {prev})")
        prev = w.shape[0]
    if prev != 1:
        raise ConfigError("last layer width must be 1")


def linear_fisher_factor(weights, sigma):
    """Blockwise factor of the Fisher matrix of a deep linear network.

    For f(x) = c W_L ... W_1 x with c = prod_l N_{l-1}^{-1/2}, block l of J_L
    is B_l^T kron (A_l Sigma^{1/2}) with A_l = W_{l-1} ... W_1 and
    B_l^T = W_{l+1}^T ... W_L^T.  Returns (J_L, c^2 J_L J_L^T).
    """
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    d = sigma.shape[0]
    weights = [np.asarray(w, dtype=float) for w in weights]
    _check_chain(weights, d)
    widths = [d] + [w.shape[0] for w in weights]
    evals, evecs = np.linalg.eigh(sigma)
    root = (evecs * np.sqrt(np.clip(evals, 0, None))) @ evecs.T
    blocks = []
    for l in range(len(weights)):
        a = np.eye(d)
        for w in weights[:l]:
            a = w @ a
        bt = np.eye(widths[l + 1])
        for w in weights[l + 1:]:
            bt = bt @ w.T
        blocks.append(np.kron(bt, a @ root))
    j = np.vstack(blocks)
    c2 = 1.0 / float(np.prod(widths[:-1], dtype=float))
    return j, c2 * (j @ j.T)


def grad_deep_linear(weights, x: np.ndarray) -> np.ndarray:
    """Per-sample gradients of the normalised deep linear net by back-propagation, shape (P, n)."""
    weights = [np.asarray(w, dtype=float) for w in weights]
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] != weights[0].shape[1]:
        x = x.T
    acts = [x]
    for w in weights:
        acts.append(w @ acts[-1] / math.sqrt(w.shape[1]))
    grads = []
    back = np.ones((1, x.shape[1]))
    for l in range(len(weights) - 1, -1, -1):
        w = weights[l]
        g = back[:, None, :] * acts[l][None, :, :] / math.sqrt(w.shape[1])
        grads.append(g.reshape(w.size, -1))
        back = w.T @ back / math.sqrt(w.shape[1])
    return np.vstack(grads[::-1])


def fisher_mc_deep_linear(weights, sigma_x2: float, n_mc: int, seed: int = 0,
                          rel_tol: float = RANK_REL_TOL) -> tuple[np.ndarray, FisherSpectrum]:
    d = np.asarray(weights[0]).shape[1]
    gram = mc_gram(lambda x: grad_deep_linear(weights, x), d, sigma_x2, n_mc, seed)
    return gram, _spectrum(gram, n_mc, rel_tol)


def write_spectrum_csv(path, eigs) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("index,eigenvalue\n")
        for i, v in enumerate(np.asarray(eigs, dtype=float)):
            fh.write(f"{i},{v:.17g}\n")
