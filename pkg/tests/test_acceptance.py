"""Acceptance criteria at full tolerance; each test records one PASS/FAIL line."""

import math

import numpy as np
import pytest

from crbounds.bounds import (bound_b1, bound_b1_prelimit, bound_b2, bound_b2_complex,
                             bound_linear_any, ridge_lambda_opt, ridge_trial_errors)
from crbounds.core_model import ModelConfig, constants, sigma_eps2_for_snr
from crbounds.experiments import SGDConfig, run_experiment
from crbounds.fisher_empirical import (TwoLayerParams, fisher_mc, fisher_mc_deep_linear, forward,
                                       grad_two_layer, linear_fisher_factor)
from crbounds.mp_law import MPLaw, mp_integrate, sample_wishart_spectrum
from crbounds.rmt_verify import (check_gaussian_expansion, check_replacements,
                                 check_sigma_convergence)
from crbounds.stieltjes import (BlockMatrixSpec, build_block_matrix, empirical_stieltjes,
                                solve_complex, solve_fixed_point, u_critical)

GAMMAS = (0.1, 0.5, 1.0, 2.0, 5.0)


def test_01_ridge_tightness(criterion):
    cfg = ModelConfig(d=100, n1=1, m=200, alpha=1.0, sigma_x2=1.0, sigma_eps2=0.1)
    lam = ridge_lambda_opt(cfg)
    assert lam == pytest.approx(0.1 * 1.0 * 0.5)
    emp = ridge_trial_errors(cfg, lam, 2000, seed=42).mean()
    ref = bound_linear_any(cfg).value
    rel = abs(emp - ref) / ref
    assert criterion(1, "ridge tightness", rel <= 0.03,
                     f"empirical {emp:.6f} vs bound {ref:.6f}, rel {rel:.4f} (tol 0.03)")


def test_02_mp_quadrature(criterion):
    mass = max(abs(mp_integrate(MPLaw(g), lambda s: np.ones_like(s)) - 1.0) for g in GAMMAS)
    mean = max(abs(mp_integrate(MPLaw(g), lambda s: s) - 1.0) for g in GAMMAS)
    # Wishart-trace oracle: E tr(XX^T/M)/d = 1 at every aspect ratio
    rng = np.random.default_rng(42)
    trace = max(abs(np.mean([sample_wishart_spectrum(int(400 * g) if g < 1 else 400,
                                                     400 if g < 1 else int(400 / g), 1.0,
                                                     int(rng.integers(2**31))).mean()
                             for _ in range(5)]) - 1.0) for g in GAMMAS)
    atom = MPLaw(2.0).atom_mass
    ok = mass <= 1e-10 and mean <= 1e-6 and atom == 0.5 and trace <= 0.01
    assert criterion(2, "MP quadrature", ok,
                     f"mass err {mass:.1e}, first-moment err {mean:.1e}, Wishart trace err "
                     f"{trace:.1e}, atom(2) {atom}")


def test_03_stieltjes(criterion):
    cfg = ModelConfig(d=300, n1=300, m=300, sigma_eps2=0.1)
    c = constants("tanh", cfg.v)
    u = u_critical(cfg)
    pair = solve_fixed_point(c, cfg.beta1, cfg.gamma0, u)
    m1, m2 = solve_complex(c, cfg.beta1, cfg.gamma0, 1j * u)
    consistency = max(abs(m1 - 1j * pair.a1), abs(m2 - 1j * pair.a2))
    rng = np.random.default_rng(42)
    vals = []
    for _ in range(2):
        w1 = rng.normal(size=(cfg.n1, cfg.d))
        x = rng.normal(size=(cfg.d, cfg.m))
        x1 = np.tanh(w1 @ x / math.sqrt(cfg.d))
        a = build_block_matrix(BlockMatrixSpec(x1, w1 @ w1.T / cfg.d, d=cfg.d))
        vals.append(empirical_stieltjes(np.linalg.eigvalsh(a), cfg.d, 1j * u))
    emp, theory = np.mean(vals), m1 + m2
    rel = abs(emp - theory) / abs(theory)
    ok = pair.residual <= 1e-12 and consistency <= 1e-10 and rel <= 0.05
    assert criterion(3, "Stieltjes solver", ok,
                     f"residual {pair.residual:.1e}, consistency {consistency:.1e}, empirical "
                     f"{emp.imag:.4f}i vs {theory.imag:.4f}i, rel {rel:.4f}")


def test_04_b1_identities(criterion):
    c = constants("tanh", 1.0)
    gap = 0.0
    for g in (0.25, 0.5, 2.0, 4.0):
        cfg = ModelConfig(d=100, n1=100, m=int(round(100 / g)), sigma_eps2=0.1)
        gap = max(gap, abs(bound_b1(cfg, c).value - bound_b1_prelimit(cfg, c)))
    vals = [bound_b1(ModelConfig(d=100, n1=n, m=100), c).value for n in (1, 10, 100, 1000)]
    spread = max(vals) - min(vals)
    assert criterion(4, "B1 identities", gap <= 1e-6 and spread <= 1e-12,
                     f"form gap {gap:.1e} (tol 1e-6), n1 spread {spread:.1e} (tol 1e-12)")


def test_05_b2_positive_real(criterion):
    worst, imag = math.inf, 0.0
    for name in ("sigmoid", "tanh", "relu"):
        for g in (0.25, 1.0, 4.0):
            for snr in (-10.0, 5.0, 20.0):
                cfg = ModelConfig(d=100, n1=100, m=int(round(100 / g)))
                cfg = cfg.replace(sigma_eps2=sigma_eps2_for_snr(cfg, snr))
                c = constants(name, cfg.v)
                worst = min(worst, bound_b2(cfg, c).value)
                imag = max(imag, abs(bound_b2_complex(cfg, c).imag))
    assert criterion(5, "B2 positivity and realness", worst > 0 and imag <= 1e-10,
                     f"min B2 {worst:.3e}, max |Im| {imag:.1e}")


def test_06_fisher_rank_separation(criterion):
    cfg = ModelConfig(d=24, n1=24, m=1)
    p = TwoLayerParams.sample(cfg, np.random.default_rng(42))
    lin = fisher_mc(p, cfg, 12000, seed=1, act="linear", rel_tol=1e-6).rank_estimate
    tanh = fisher_mc(p, cfg, 12000, seed=1, act="tanh", rel_tol=1e-6).rank_estimate
    ok = lin == 24 and tanh >= 0.85 * 576
    assert criterion(6, "Fisher rank separation", ok,
                     f"linear rank {lin} (want 24), tanh rank {tanh} (want >= {0.85 * 576:.1f})")


def test_07_linear_fisher_factor(criterion):
    rng = np.random.default_rng(42)
    ws = [rng.normal(size=(8, 8)), rng.normal(size=(6, 8)), rng.normal(size=(1, 6))]
    _, fisher = linear_fisher_factor(ws, np.eye(8))
    gram, spec = fisher_mc_deep_linear(ws, 1.0, 200_000, seed=3)
    rel = np.linalg.norm(gram - fisher) / np.linalg.norm(fisher)
    rank = np.linalg.matrix_rank(fisher, tol=1e-10 * np.abs(fisher).max())
    ok = rel <= 0.02 and rank == 8 and spec.rank_estimate == 8
    assert criterion(7, "linear Fisher factorization", ok,
                     f"rel Frobenius {rel:.4f} (tol 0.02), rank {rank}/{spec.rank_estimate} (want 8)")


@pytest.mark.slow
def test_08_sgd_dominance(criterion):
    margins = []
    for name in ("tanh", "sigmoid"):
        for g in (0.25, 0.5, 1.0, 2.0):
            cfg = ModelConfig(d=30, n1=30, m=int(round(30 / g)), sigma_eps2=0.2)
            res = run_experiment(cfg, name, SGDConfig(seed=42), workers=1)
            c = constants(name, cfg.v)
            bound = max(bound_b1(cfg, c).value, bound_b2(cfg, c).value)
            margins.append(res.gen_error + 2 * res.stderr - bound)
    assert criterion(8, "SGD dominance", min(margins) >= 0,
                     f"min (gen_error + 2 stderr - bound) over 8 points {min(margins):.4f}")


def test_09_lemma_suite(criterion):
    sig = check_sigma_convergence("tanh", ModelConfig(d=100, n1=100, m=100), [100, 200, 400],
                                  trials=20, seed=42)
    exp = check_gaussian_expansion("tanh", "tanh", 1.0, 1.0, [0.05, 0.1, 0.2])
    q, i = check_replacements(ModelConfig(d=20, n1=20, m=20), "tanh", [20, 40], trials=20, seed=42)
    slope_ok = abs(exp.slope - 2.0) <= 0.3
    ok = sig.decreasing and slope_ok and q.decreasing and i.decreasing
    metrics = ", ".join(f"{m:.4f}" for m in sig.metric)
    assert criterion(9, "lemma suite", ok,
                     f"sigma [{metrics}] decreasing={sig.decreasing}; tanh expansion slope "
                     f"{exp.slope:.3f} (want 2.0 +- 0.3); Q decreasing={q.decreasing}, "
                     f"I decreasing={i.decreasing}")


def test_10_gradient(criterion):
    rng = np.random.default_rng(42)
    worst = 0.0
    h = 1e-6
    for name in ("linear", "sigmoid", "tanh"):
        for _ in range(100):
            n1, d = (int(v) for v in rng.integers(1, 9, 2))
            p = TwoLayerParams(rng.normal(size=(n1, d)), rng.normal(size=n1))
            x = rng.normal(size=d)
            theta = p.flat()
            fd = np.empty_like(theta)
            for k in range(theta.size):
                e = np.zeros_like(theta)
                e[k] = h
                fp = forward(TwoLayerParams.from_flat(theta + e, n1, d), x, name)
                fm = forward(TwoLayerParams.from_flat(theta - e, n1, d), x, name)
                fd[k] = (fp - fm) / (2 * h)
            g = grad_two_layer(p, x, name)
            worst = max(worst, np.linalg.norm(g - fd) / np.linalg.norm(g))
    assert criterion(10, "gradient correctness", worst <= 1e-6,
                     f"max relative error {worst:.1e} over 300 instances (tol 1e-6)")
