"""Teacher-student data, SGD training, bias/variance estimates and sweeps."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .bounds import bound_b1, bound_b2
from .core_model import (Activation, ConfigError, ModelConfig, NumericalFailure, constants,
                         sigma_eps2_for_snr)
from .fisher_empirical import TwoLayerParams, forward

LR_CONSTANTS = {Activation.SIGMOID: 0.5, Activation.TANH: 0.03, Activation.RELU: 0.03,
                Activation.LINEAR: 0.03}
DIVERGENCE_FACTOR = 1e6
SWEEP_KINDS = ("snr", "gamma0", "beta1")
SWEEP_COLUMNS = ("sweep_param", "value", "b1", "b2", "bound_max", "sgd_gen_error", "sgd_stderr",
                 "sgd_bias2", "status")


@dataclass(frozen=True)
class SGDConfig:
    """SGD schedule; the learning rate is lr_constant / M.

    lr_constant=None picks 0.5 for sigmoid and 0.03 for tanh and relu.
    """

    epochs: int = 100
    batch_size: int = 1
    lr_constant: float | None = None
    n_theta: int = 10
    n_datasets: int = 10
    n_test: int = 2000
    seed: int = 42

    def __post_init__(self):
        for name in ("epochs", "batch_size", "n_theta", "n_datasets", "n_test"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_constant is not None and not self.lr_constant >= 0:
            raise ConfigError("lr_constant must be nonnegative")

    def learning_rate(self, act, m: int) -> float:
        c = LR_CONSTANTS[Activation.parse(act)] if self.lr_constant is None else self.lr_constant
        return c / m


@dataclass(frozen=True)
class ExperimentResult:
    """gen_error includes label noise; excess_error is the noise-free part."""

    gen_error: float
    excess_error: float
    bias2: float
    variance: float
    n_runs: int
    stderr: float
    excess_stderr: float
    per_run: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)

    def as_dict(self) -> dict:
        return {"gen_error": self.gen_error, "excess_error": self.excess_error,
                "bias2": self.bias2, "variance": self.variance, "n_runs": self.n_runs,
                "stderr": self.stderr, "excess_stderr": self.excess_stderr}


def _rng(seed):
    return np.random.default_rng(seed)


def generate_teacher(cfg: ModelConfig, seed) -> TwoLayerParams:
    return TwoLayerParams.sample(cfg, _rng(seed))


def generate_dataset(teacher: TwoLayerParams, cfg: ModelConfig, m: int, seed, act):
    """X of shape (d, m) with N(0, sigma_x2) entries and y = f(x) + noise."""
    if m < 1:
        raise ConfigError("m must be >= 1")
    rng = _rng(seed)
    x = rng.normal(0.0, math.sqrt(cfg.sigma_x2), (cfg.d, m))
    y = forward(teacher, x, act) + rng.normal(0.0, math.sqrt(cfg.sigma_eps2), m)
    return x, y


def train_sgd(init: TwoLayerParams, data, sgd: SGDConfig, act, seed=None,
              backend: str | None = None, return_history: bool = False):
    """Squared-loss SGD from ``init``; the sample order is reshuffled every epoch.

    Raises NumericalFailure when an epoch's running loss exceeds 1e6 times the
    initial training loss.
    """
    act = Activation.parse(act)
    x, y = data
    x = np.asarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    m = x.shape[1]
    rng = _rng(sgd.seed if seed is None else seed)
    orders = np.stack([rng.permutation(m) for _ in range(sgd.epochs)]).astype(np.int64)
    w1 = np.array(init.w1, dtype=float, order="C")
    w2 = np.array(init.w2, dtype=float)
    initial = float(np.mean((forward(init, x, act) - y) ** 2))
    lr = sgd.learning_rate(act, m)
    abort = DIVERGENCE_FACTOR * initial if initial > 0 else math.inf
    done, losses = kernels.sgd_epochs(w1, w2, np.ascontiguousarray(x.T), y, orders, lr,
                                      act.code, sgd.batch_size, abort, backend=backend)
    if done < sgd.epochs or not np.all(np.isfinite(losses)):
        raise NumericalFailure(f"SGD diverged in epoch {done}: loss {losses[-1]:.3e} "
                               f"vs initial {initial:.3e}")
    out = TwoLayerParams(w1, w2)
    return (out, np.asarray(losses)) if return_history else out


def evaluate(teacher: TwoLayerParams, students, cfg: ModelConfig, n_test: int, seed, act
             ) -> ExperimentResult:
    """Test error and squared bias of a set of students trained at one teacher."""
    students = list(students)
    if not students:
        raise ConfigError("need at least one student")
    rng = _rng(seed)
    x = rng.normal(0.0, math.sqrt(cfg.sigma_x2), (cfg.d, n_test))
    noise = rng.normal(0.0, math.sqrt(cfg.sigma_eps2), n_test)
    f = forward(teacher, x, act)
    preds = np.stack([forward(s, x, act) for s in students])
    return _summarise(f, noise, preds, cfg.sigma_eps2)


def _summarise(f, noise, preds, sigma_eps2, per_run=None):
    err = np.mean((f + noise - preds) ** 2, axis=1)
    excess = np.mean((f - preds) ** 2, axis=1)
    bias2 = float(np.mean((f - preds.mean(axis=0)) ** 2))
    n = len(err)
    return ExperimentResult(
        gen_error=float(err.mean()), excess_error=float(excess.mean()), bias2=bias2,
        variance=float(err.mean()) - bias2 - sigma_eps2, n_runs=n,
        stderr=float(err.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        excess_stderr=float(excess.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        per_run=np.stack([err, excess], axis=1) if per_run is None else per_run)


def _one_run(cfg, act, sgd, teacher, seq, backend):
    data_seq, init_seq, order_seq = seq.spawn(3)
    data = generate_dataset(teacher, cfg, cfg.m, data_seq, act)
    init = TwoLayerParams.sample(cfg, _rng(init_seq))
    return train_sgd(init, data, sgd, act, seed=order_seq, backend=backend)


def run_experiment(cfg: ModelConfig, act, sgd: SGDConfig, workers: int = 1,
                   backend: str | None = None) -> ExperimentResult:
    """n_theta teachers x n_datasets students; RNG keyed by (seed, teacher, dataset)."""
    act = Activation.parse(act)
    teacher_seqs = np.random.SeedSequence(sgd.seed).spawn(sgd.n_theta)
    plans = []
    for ts in teacher_seqs:
        kids = ts.spawn(sgd.n_datasets + 2)
        plans.append((generate_teacher(cfg, kids[0]), kids[1], kids[2:]))
    jobs = [(t, k) for t in range(sgd.n_theta) for k in range(sgd.n_datasets)]

    def job(tk):
        t, k = tk
        teacher, _, run_seqs = plans[t]
        return _one_run(cfg, act, sgd, teacher, run_seqs[k], backend)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            students = list(pool.map(job, jobs))
    else:
        students = [job(tk) for tk in jobs]

    errs, excess, bias = [], [], []
    for t, (teacher, test_seq, _) in enumerate(plans):
        chunk = students[t * sgd.n_datasets:(t + 1) * sgd.n_datasets]
        res = evaluate(teacher, chunk, cfg, sgd.n_test, test_seq, act)
        errs.append(res.per_run[:, 0])
        excess.append(res.per_run[:, 1])
        bias.append(res.bias2)
    errs = np.concatenate(errs)
    excess = np.concatenate(excess)
    n = errs.size
    gen = float(errs.mean())
    b2 = float(np.mean(bias))
    return ExperimentResult(
        gen_error=gen, excess_error=float(excess.mean()), bias2=b2,
        variance=gen - b2 - cfg.sigma_eps2, n_runs=n,
        stderr=float(errs.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        excess_stderr=float(excess.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan,
        per_run=np.stack([errs, excess], axis=1))


@dataclass
class SweepRow:
    sweep_param: str
    value: float
    b1: float | None = None
    b2: float | None = None
    bound_max: float | None = None
    sgd_gen_error: float | None = None
    sgd_stderr: float | None = None
    sgd_bias2: float | None = None
    status: str = "ok"
    cfg: ModelConfig | None = None
    sgd_result: ExperimentResult | None = None

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in SWEEP_COLUMNS}


def config_at(kind: str, value: float, cfg: ModelConfig) -> tuple[ModelConfig, float]:
    """Config for one sweep point and the value actually realised (integer rounding)."""
    if kind == "snr":
        return cfg.replace(sigma_eps2=sigma_eps2_for_snr(cfg, value)), float(value)
    if not value > 0:
        raise ConfigError(f"{kind} grid values must be positive")
    if kind == "gamma0":
        new = cfg.replace(m=max(1, int(round(cfg.d / value))))
        return new, new.gamma0
    if kind == "beta1":
        new = cfg.replace(n1=max(1, int(round(value * cfg.d))))
        return new, new.beta1
    raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {', '.join(SWEEP_KINDS)}")


def sweep(kind: str, grid, cfg: ModelConfig, act, sgd: SGDConfig | None = None,
          workers: int = 1, backend: str | None = None) -> list[SweepRow]:
    """One row per grid point; a failing point is recorded and the sweep continues."""
    grid = list(grid)
    if not grid:
        raise ConfigError("sweep grid is empty")
    if kind not in SWEEP_KINDS:
        raise ConfigError(f"unknown sweep kind {kind!r}; expected one of {', '.join(SWEEP_KINDS)}")
    act = Activation.parse(act)
    consts = constants(act, cfg.v)
    rows = []
    for value in grid:
        point, realised = config_at(kind, float(value), cfg)
        row = SweepRow(kind, realised, cfg=point)
        try:
            row.b1 = bound_b1(point, consts).value
            row.b2 = bound_b2(point, consts).value
            row.bound_max = max(row.b1, row.b2)
        except NumericalFailure as exc:
            row.status = f"bound-failed: {exc}"
            rows.append(row)
            continue
        if sgd is not None:
            try:
                res = run_experiment(point, act, sgd, workers, backend)
            except NumericalFailure as exc:
                row.status = f"sgd-failed: {exc}"
            else:
                row.sgd_result = res
                row.sgd_gen_error, row.sgd_stderr, row.sgd_bias2 = res.gen_error, res.stderr, res.bias2
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return f"{v:.17g}"


def write_sweep_csv(rows, fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(getattr(row, c)) for c in SWEEP_COLUMNS])
