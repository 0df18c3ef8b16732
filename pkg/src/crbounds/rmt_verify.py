"""Numerical checks of the random-matrix lemmas behind the bounds."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import roots_genlaguerre, roots_legendre

from .core_model import (Activation, ConfigError, GaussConstants, ModelConfig, constants,
                         gauss_expect, _half_line_rule)
from .fisher_empirical import mc_gram

HERMITE_TERMS = 40
POWER_TOL = 1e-8
POWER_MAX_ITER = 1000


@dataclass(frozen=True)
class ConvergenceReport:
    name: str
    dims: tuple
    metric: tuple
    trials: int
    decreasing: bool
    ratios: tuple
    per_trial: tuple = field(default=(), repr=False)

    def as_dict(self) -> dict:
        return {"name": self.name, "dims": list(self.dims), "metric": list(self.metric),
                "trials": self.trials, "decreasing": self.decreasing, "ratios": list(self.ratios)}

    def to_csv(self, fh) -> None:
        fh.write("dim,metric,trials\n")
        for dim, val in zip(self.dims, self.metric):
            fh.write(f"{dim},{val:.17g},{self.trials}\n")


def _report(name, dims, per_trial):
    metric = tuple(float(np.median(t)) for t in per_trial)
    ratios = tuple(metric[i] / metric[i + 1] if metric[i + 1] > 0 else math.inf
                   for i in range(len(metric) - 1))
    decreasing = all(metric[i + 1] < metric[i] for i in range(len(metric) - 1))
    return ConvergenceReport(name, tuple(dims), metric, len(per_trial[0]), decreasing, ratios,
                             tuple(tuple(t) for t in per_trial))


def _check_dims(dims):
    dims = [int(x) for x in dims]
    if len(dims) < 2 or any(b <= a for a, b in zip(dims, dims[1:])) or dims[0] < 1:
        raise ConfigError("dims must be at least two strictly increasing positive integers")
    return dims


def op_norm(a: np.ndarray, tol: float = POWER_TOL, max_iter: int = POWER_MAX_ITER) -> float:
    """Largest |eigenvalue| of the symmetrised matrix by power iteration."""
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    vec = np.random.default_rng(0).normal(size=n)
    vec /= np.linalg.norm(vec)
    est = 0.0
    for _ in range(max_iter):
        nxt = a @ vec
        norm = float(np.linalg.norm(nxt))
        if norm == 0.0:
            return 0.0
        vec = nxt / norm
        if abs(norm - est) <= tol * norm:
            return norm
        est = norm
    return est


# population kernel

@lru_cache(maxsize=4)
def _folded_hermite_basis(n_terms: int, n_nodes: int = 401):
    """Normalised Hermite polynomials He_k/sqrt(k!) on the folded quadrature nodes (+z and -z)."""
    z, w = _half_line_rule(n_nodes)
    zz = np.concatenate([z, -z])
    ww = np.concatenate([w, w])
    h = np.empty((n_terms, zz.size))
    h[0] = 1.0
    if n_terms > 1:
        h[1] = zz
    for k in range(1, n_terms - 1):
        h[k + 1] = (zz * h[k] - math.sqrt(k) * h[k - 1]) / math.sqrt(k + 1)
    return zz, ww, h


def hermite_coefficients(act, v, n_terms: int = HERMITE_TERMS) -> np.ndarray:
    """c_k(v) = E[sigma(v z) He_k(z)] / sqrt(k!), shape (len(v), n_terms)."""
    act = Activation.parse(act)
    v = np.atleast_1d(np.asarray(v, dtype=float))
    zz, ww, h = _folded_hermite_basis(n_terms)
    vals = act.value_of(v[:, None] * zz[None, :]) * ww[None, :]
    return vals @ h.T


def sigma_population(w1: np.ndarray, act, cfg: ModelConfig, n_mc: int | None = None,
                     seed: int = 0) -> np.ndarray:
    """Sigma = E_x[sigma(q) sigma(q)^T], q = W1 x / sqrt(d).

    n_mc=None evaluates the Mehler series sum_k c_k(v_i) c_k(v_j) rho_ij^k
    (exact up to truncation at 40 terms); otherwise a Monte Carlo average.
    """
    act = Activation.parse(act)
    w1 = np.asarray(w1, dtype=float)
    n, d = w1.shape
    if n_mc is not None:
        rng = np.random.default_rng(seed)
        x = rng.normal(0.0, math.sqrt(cfg.sigma_x2), (d, n_mc))
        h = act.value_of(w1 @ x / math.sqrt(d))
        return h @ h.T / n_mc
    norms = np.linalg.norm(w1, axis=1)
    v = math.sqrt(cfg.sigma_x2 / d) * norms
    rho = (w1 @ w1.T) / np.outer(norms, norms)
    np.fill_diagonal(rho, 1.0)
    c = hermite_coefficients(act, v)
    out = np.zeros((n, n))
    power = np.ones((n, n))
    for k in range(c.shape[1]):
        out += np.outer(c[:, k], c[:, k]) * power
        power = power * rho
    diag = np.array([gauss_expect(lambda t: act.value_of(t) ** 2, vi) for vi in v])
    np.fill_diagonal(out, diag)
    return out


def sigma_tilde(w1: np.ndarray, consts: GaussConstants, cfg: ModelConfig, a: float = 0.0) -> np.ndarray:
    """(eta0 - theta) I + alpha theta W1 W1^T / d + a (11^T - I) / d."""
    w1 = np.asarray(w1, dtype=float)
    n, d = w1.shape
    out = cfg.alpha * consts.theta11 * (w1 @ w1.T) / d
    out += (consts.eta0 - consts.theta11 - a / d) * np.eye(n)
    out += a / d
    return out


def fit_a(sigma: np.ndarray, w1: np.ndarray, consts: GaussConstants, cfg: ModelConfig) -> float:
    """Least-squares a from the off-diagonal mean of Sigma - alpha theta W1 W1^T / d."""
    n, d = w1.shape
    gap = sigma - cfg.alpha * consts.theta11 * (w1 @ w1.T) / d
    off = gap[~np.eye(n, dtype=bool)]
    return float(d * off.mean())


def _project_ones(a):
    n = a.shape[0]
    p = np.eye(n) - 1.0 / n
    return p @ a @ p


def sigma_gap(w1, act, cfg, consts=None, mode="project", n_mc=None, seed=0) -> float:
    act = Activation.parse(act)
    consts = consts or constants(act, cfg.v)
    sig = sigma_population(w1, act, cfg, n_mc, seed)
    if mode == "project":
        return op_norm(_project_ones(sig - sigma_tilde(w1, consts, cfg)))
    if mode == "fit":
        return op_norm(sig - sigma_tilde(w1, consts, cfg, fit_a(sig, w1, consts, cfg)))
    raise ConfigError(f"unknown mode {mode!r}; expected 'project' or 'fit'")


def _per_trial(fn, dims, trials, seed, workers):
    seqs = np.random.SeedSequence(seed).spawn(len(dims) * trials)
    jobs = [(d, seqs[i * trials + t]) for i, d in enumerate(dims) for t in range(trials)]
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(lambda j: fn(*j), jobs))
    else:
        vals = [fn(*j) for j in jobs]
    return [vals[i * trials:(i + 1) * trials] for i in range(len(dims))]


def check_sigma_convergence(act, cfg: ModelConfig, dims, trials: int = 20, seed: int = 0,
                            mode: str = "project", n_mc: int | None = None,
                            workers: int = 1) -> ConvergenceReport:
    """Median over trials of |Sigma - Sigma~|_op at each d, with N = round(beta1 d)."""
    act = Activation.parse(act)
    dims = _check_dims(dims)
    consts = constants(act, cfg.v)

    def one(d, seq):
        rng = np.random.default_rng(seq)
        n = max(1, int(round(cfg.beta1 * d)))
        w1 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha), (n, d))
        c = cfg.replace(d=d, n1=n)
        return sigma_gap(w1, act, c, consts, mode, n_mc, int(rng.integers(2**31)))

    return _report("sigma", dims, _per_trial(one, dims, trials, seed, workers))


# Gaussian expansion

@dataclass(frozen=True)
class ExpansionReport:
    eps: tuple
    residual: tuple
    slope: float
    method: str

    def as_dict(self) -> dict:
        return {"eps": list(self.eps), "residual": list(self.residual), "slope": self.slope,
                "method": self.method}


def _pair(f):
    if isinstance(f, (Activation, str)):
        act = Activation.parse(f)
        return act.value_of, act.deriv
    fn, dfn = f
    return fn, dfn


@lru_cache(maxsize=4)
def _plane_rule(n: int = 400, half_width: float = 12.0):
    x, w = roots_legendre(n)
    z = half_width * x
    wz = half_width * w * np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return z, wz


def check_gaussian_expansion(f1, f2, v1: float, v2: float, eps_grid, n_mc: int | None = None,
                             seed: int = 0) -> ExpansionReport:
    """Residual E f1(q1) f2(q2) - E f1 E f2 - eps E f1' E f2' for Cov = [[v1^2, eps], [eps, v2^2]].

    n_mc=None uses a 400x400 Gauss-Legendre product rule on [-12, 12]^2;
    otherwise Monte Carlo with common random numbers across the eps grid.
    The slope is the least-squares log-log slope of |residual| against eps.
    """
    fn1, df1 = _pair(f1)
    fn2, df2 = _pair(f2)
    eps = np.asarray(list(eps_grid), dtype=float)
    if np.any(np.abs(eps) >= min(v1 * v1, v2 * v2)):
        raise ConfigError("every eps must satisfy |eps| < min(v1^2, v2^2)")
    base = gauss_expect(fn1, v1) * gauss_expect(fn2, v2)
    lin = gauss_expect(df1, v1) * gauss_expect(df2, v2)
    if n_mc is None:
        z, w = _plane_rule()
        z1, z2 = z[:, None], z[None, :]
        wt = np.outer(w, w)
        method = "quadrature"
    else:
        rng = np.random.default_rng(seed)
        z1, z2 = rng.normal(size=n_mc), rng.normal(size=n_mc)
        wt = np.full(n_mc, 1.0 / n_mc)
        method = "mc"
    res = []
    for e in eps:
        q1 = v1 * z1
        q2 = (e / v1) * z1 + math.sqrt(v2 * v2 - e * e / (v1 * v1)) * z2
        joint = float(np.sum(wt * fn1(q1) * fn2(q2)))
        res.append(joint - base - e * lin)
    res = np.array(res)
    slope = math.nan
    mask = (eps > 0) & (np.abs(res) > 0)
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(eps[mask]), np.log(np.abs(res[mask])), 1)[0])
    return ExpansionReport(tuple(eps), tuple(res), slope, method)


# replacement lemmas for the output-layer bound

def theta_k(act, r) -> np.ndarray:
    """(E sigma'(z r))^2 and E sigma'(z r)^2 for an array of scales r."""
    act = Activation.parse(act)
    r = np.atleast_1d(np.asarray(r, dtype=float))
    z, w = _half_line_rule(201)
    zz = np.concatenate([z, -z])
    ww = np.concatenate([w, w])
    dv = act.deriv(r[:, None] * zz[None, :])
    mean = dv @ ww
    return mean ** 2, (dv * dv) @ ww


def q_scale(act, cfg: ModelConfig, d: int, n_mc: int | None = None, seed: int = 0,
            n_nodes: int = 200) -> float:
    """h = E_x[g(|x|^2/d) |x|^2] / d with g(t) = E_z[sigma'(z sqrt(t/alpha))]^2.

    Q = (1/N) w w^T kron h I_d; the exact value integrates over |x|^2/sigma_x^2 ~ chi2_d
    with generalised Gauss-Laguerre nodes.
    """
    if n_mc is None:
        u, w = roots_genlaguerre(n_nodes, d / 2.0 - 1.0)
        w = w / w.sum()
        t = 2.0 * u                                  # chi2_d nodes
        sq = cfg.sigma_x2 * t                        # |x|^2
    else:
        rng = np.random.default_rng(seed)
        sq = cfg.sigma_x2 * rng.chisquare(d, n_mc)
        w = np.full(n_mc, 1.0 / n_mc)
    g, _ = theta_k(act, np.sqrt(sq / (d * cfg.alpha)))
    return float(np.dot(w, g * sq) / d)


def i_gap_exact(act, cfg: ModelConfig, w2, x, consts: GaussConstants) -> float:
    """|I - I~|_op with the conditional expectation over W1 done in closed form.

    I - I~ = (1/(N d)) w w^T kron sum_k (theta^(k) - theta/v^2) x_k x_k^T.
    """
    n = w2.size
    d = x.shape[0]
    r = np.linalg.norm(x, axis=0) / math.sqrt(d * cfg.alpha)
    th_k, _ = theta_k(act, r)
    delta = th_k - consts.theta11 / cfg.v ** 2
    inner = (x * delta) @ x.T / d
    return float(w2 @ w2) / n * float(np.max(np.abs(np.linalg.eigvalsh(inner))))


def i_gap_mc(act, cfg: ModelConfig, w2, x, consts: GaussConstants, n_mc: int, rng) -> float:
    """Same gap with E over W1 replaced by n_mc fresh W1 draws (shared across samples)."""
    act = Activation.parse(act)
    n = w2.size
    d, m = x.shape
    r = np.linalg.norm(x, axis=0) / math.sqrt(d * cfg.alpha)
    th_k, eta_k = theta_k(act, r)
    c_k = eta_k - th_k
    total = np.zeros((n * d, n * d))
    for k in range(m):
        q = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha), (n_mc, n, d)) @ x[:, k] / math.sqrt(d)
        s = act.deriv(q) * w2[None, :]
        ew = s.T @ s / n_mc
        tilde = consts.theta11 / cfg.v ** 2 * np.outer(w2, w2) + c_k[k] * np.diag(w2 * w2)
        total += np.kron(ew - tilde, np.outer(x[:, k], x[:, k]) / d)
    return op_norm(total / n)


def check_replacements(cfg: ModelConfig, act, dims, trials: int = 20, seed: int = 0,
                       n_mc: int | None = None, workers: int = 1):
    """Trends of |Q - Q~|_HS and |I - I~|_op over dims (N = beta1 d, M = d / gamma0).

    n_mc=None evaluates the W1-conditional expectations in closed form;
    otherwise Monte Carlo over n_mc W1 draws (and n_mc draws of x for Q).
    """
    act = Activation.parse(act)
    dims = _check_dims(dims)
    consts = constants(act, cfg.v)
    target = cfg.alpha * consts.theta11
    h_by_dim = {d: q_scale(act, cfg, d, n_mc, seed) for d in dims}

    def one(d, seq):
        rng = np.random.default_rng(seq)
        n = max(1, int(round(cfg.beta1 * d)))
        m = max(1, int(round(d / cfg.gamma0)))
        w2 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha2), n)
        x = rng.normal(0.0, math.sqrt(cfg.sigma_x2), (d, m))
        q_hs = float(w2 @ w2) / n * math.sqrt(d) * abs(h_by_dim[d] - target)
        if n_mc is None:
            i_op = i_gap_exact(act, cfg, w2, x, consts)
        else:
            i_op = i_gap_mc(act, cfg, w2, x, consts, n_mc, rng)
        return q_hs, i_op

    per = _per_trial(one, dims, trials, seed, workers)
    q_rep = _report("Q-Qtilde HS", dims, [[p[0] for p in t] for t in per])
    i_rep = _report("I-Itilde op", dims, [[p[1] for p in t] for t in per])
    return q_rep, i_rep


# A_R decomposition

@dataclass(frozen=True)
class ARReport:
    n1: int
    d: int
    frob_ar: float
    frob_after_diag: float
    residual_frob: float
    residual_ratio: float
    low_rank: int
    d2_diag: np.ndarray = field(repr=False)

    def as_dict(self) -> dict:
        return {"n1": self.n1, "d": self.d, "frob_ar": self.frob_ar,
                "frob_after_diag": self.frob_after_diag, "residual_frob": self.residual_frob,
                "residual_ratio": self.residual_ratio, "low_rank": self.low_rank,
                "d2_min": float(np.min(self.d2_diag))}


def ar_d2(w1, w2, act, cfg: ModelConfig) -> np.ndarray:
    """D2_ii = sigma_x^2 (eta_{1,i} - theta_{1,i}^2) w_i^2 with v_i^2 = sigma_x^2 |W_i|^2 / d."""
    d = w1.shape[1]
    v = np.sqrt(cfg.sigma_x2 * np.sum(w1 ** 2, axis=1) / d)
    th_sq, eta = theta_k(act, v)
    return cfg.sigma_x2 * np.clip(eta - th_sq, 0.0, None) * w2 ** 2


def check_ar_decomposition(cfg: ModelConfig, act, seed: int = 0, n_mc: int = 100_000,
                           workers: int = 1) -> ARReport:
    """Residual of A_R after removing D2 kron I and its top N+d+2 eigen-directions."""
    act = Activation.parse(act)
    n, d = cfg.n1, cfg.d
    if n > 40 or d > 40:
        raise ConfigError("check_ar_decomposition is meant for N, d <= 40")
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha), (n, d))
    w2 = rng.normal(0.0, 1.0 / math.sqrt(cfg.alpha2), n)

    def grads(x):
        s = act.deriv(w1 @ x / math.sqrt(d)) * w2[:, None]
        return (s[:, None, :] * x[None, :, :]).reshape(n * d, -1)

    a_r = mc_gram(grads, d, cfg.sigma_x2, n_mc, int(rng.integers(2**31)), workers)
    d2 = ar_d2(w1, w2, act, cfg)
    rest = a_r - np.kron(np.diag(d2), np.eye(d))
    ev = np.linalg.eigvalsh(0.5 * (rest + rest.T))
    ev = ev[np.argsort(-np.abs(ev))]
    k = n + d + 2
    resid = float(np.sqrt(np.sum(ev[k:] ** 2)))
    frob = float(np.linalg.norm(a_r))
    return ARReport(n, d, frob, float(np.linalg.norm(rest)), resid,
                    resid / frob if frob > 0 else 0.0, k, d2)
