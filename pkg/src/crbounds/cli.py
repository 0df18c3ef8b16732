"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Output goes to standard output or, with --out, to a file written only after
the command has succeeded.
"""

from __future__ import annotations

import argparse
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bounds, experiments, fisher_empirical, mp_law, rmt_verify, stieltjes
from .core_model import (Activation, ConfigError, ModelConfig, NumericalFailure, constants,
                         load_config, parse_config_text)

DEFAULT_SEED = 42
MODEL_FLAGS = (("d", int), ("n1", int), ("m", int), ("sigma_x2", float), ("sigma_eps2", float),
               ("alpha", float), ("alpha2", float))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    if isinstance(obj, (Activation,)):
        return obj.value
    return obj


def _emit_record(args, record: dict, out) -> None:
    if args.json:
        json.dump(_jsonable(record), out, indent=2, sort_keys=False)
        out.write("\n")
    else:
        out.write(" ".join(f"{k}={_fmt(v)}" for k, v in record.items()
                           if not isinstance(v, (dict, list, tuple))) + "\n")


def _emit_table(args, columns, rows, out, meta=None) -> None:
    if args.json:
        payload = {"columns": list(columns), "rows": [dict(zip(columns, r)) for r in rows]}
        if meta:
            payload.update(meta)
        json.dump(_jsonable(payload), out, indent=2)
        out.write("\n")
        return
    out.write(",".join(columns) + "\n")
    for r in rows:
        out.write(",".join("" if v is None else _fmt(v) for v in r) + "\n")


# argument groups

def _common(p):
    g = p.add_argument_group("output and execution")
    g.add_argument("--json", action="store_true", help="JSON output instead of text/CSV")
    g.add_argument("--out", type=Path, default=None, help="write results here instead of stdout")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED, help="master seed (default: %(default)s)")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for Monte Carlo (default: %(default)s)")


def _model(p, activation=True):
    g = p.add_argument_group("model (override --config values)")
    g.add_argument("--config", type=Path, default=None, help="flat 'key = value' config file")
    for name, typ in MODEL_FLAGS:
        fallback = ModelConfig.__dataclass_fields__[name].default
        note = "" if typ is int else f", else {fallback:g}"
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None,
                       help=f"default: config value{note}")
    if activation:
        g.add_argument("--activation", default=None, choices=[a.value for a in Activation],
                       help="activation (default: config value, else tanh)")


def _cfg(args, defaults=None):
    """ModelConfig from --config plus flags; ``defaults`` fills keys the command does not need."""
    overrides = {name: getattr(args, name) for name, _ in MODEL_FLAGS}
    overrides["activation"] = getattr(args, "activation", None)
    raw = {}
    if args.config is not None:
        try:
            raw = parse_config_text(args.config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    for key, val in (defaults or {}).items():
        if key not in raw and overrides.get(key) is None:
            overrides[key] = val(raw, overrides) if callable(val) else val
    cfg, act, _ = load_config(args.config, **overrides)
    return cfg, act


def _d_default(raw, over):
    return over.get("d") if over.get("d") is not None else raw.get("d", 1)


# commands

def cmd_constants(args, out):
    sx2 = 1.0 if args.sigma_x2 is None else args.sigma_x2
    alpha = 1.0 if args.alpha is None else args.alpha
    ModelConfig(d=1, n1=1, m=1, sigma_x2=sx2, alpha=alpha)
    act = Activation.parse(args.activation or "tanh")
    c = constants(act, math.sqrt(sx2 / alpha))
    rec = {"eta0": c.eta0, "theta11": c.theta11, "eta1": c.eta1, "v": c.v,
           "activation": act.value}
    if c.warnings:
        rec["warnings"] = ";".join(c.warnings)
    _emit_record(args, rec, out)


def cmd_bound(args, out):
    if args.kind == "unbiased":
        cfg, act = _cfg(args, {"n1": _d_default})
        rank = args.rank if args.rank is not None else bounds.rank_for_model(args.model, cfg)
        rec = {"kind": "unbiased", "value": bounds.bound_unbiased(rank, cfg.m, cfg.sigma_eps2),
               "rank": rank, "m": cfg.m, "sigma_eps2": cfg.sigma_eps2}
    elif args.kind == "linear":
        cfg, _ = _cfg(args, {"n1": _d_default})
        rep = bounds.bound_linear_any(cfg)
        rec = {"kind": "linear", "value": rep.value, "gamma0": cfg.gamma0,
               "ridge_lambda_opt": bounds.ridge_lambda_opt(cfg)}
    else:
        cfg, act = _cfg(args)
        rep = bounds.bound_two_layer(cfg, act)
        rec = {"kind": "two-layer", "value": rep.value, "b1": rep.extra["b1"],
               "b2": rep.extra["b2"], "winner": rep.extra["winner"], "activation": act.value,
               "warnings": ";".join(rep.warnings)}
    _emit_record(args, rec, out)


def _sgd_config(args):
    return experiments.SGDConfig(epochs=args.epochs, batch_size=args.batch_size,
                                 lr_constant=args.lr_constant, n_theta=args.n_theta,
                                 n_datasets=args.n_datasets, n_test=args.n_test, seed=args.seed)


def _grid(args):
    if args.points < 1:
        raise ConfigError("--points must be >= 1")
    lo, hi = args.lo, args.hi
    if args.points == 1:
        return [lo]
    if args.spacing == "log":
        if lo <= 0 or hi <= 0:
            raise ConfigError("log spacing needs positive endpoints")
        return list(np.geomspace(lo, hi, args.points))
    return list(np.linspace(lo, hi, args.points))


def cmd_sweep(args, out):
    cfg, act = _cfg(args)
    grid = _grid(args)
    sgd = _sgd_config(args) if args.sgd else None
    rows = experiments.sweep(args.kind, grid, cfg, act, sgd, workers=args.threads)
    if args.json:
        _emit_table(args, experiments.SWEEP_COLUMNS,
                    [[getattr(r, c) for c in experiments.SWEEP_COLUMNS] for r in rows], out)
    else:
        experiments.write_sweep_csv(rows, out)


def cmd_sgd(args, out):
    cfg, act = _cfg(args)
    res = experiments.run_experiment(cfg, act, _sgd_config(args), workers=args.threads)
    rep = bounds.bound_two_layer(cfg, act)
    rec = dict(res.as_dict())
    rec.update({"bound_max": rep.value, "b1": rep.extra["b1"], "b2": rep.extra["b2"],
                "activation": act.value})
    _emit_record(args, rec, out)


def cmd_fisher_rank(args, out):
    cfg, act = _cfg(args, {"n1": _d_default, "m": _d_default})
    params = fisher_empirical.TwoLayerParams.sample(cfg, np.random.default_rng(args.seed))
    n_mc = args.n_mc if args.n_mc is not None else 10 * cfg.n_params
    spec = fisher_empirical.fisher_mc(params, cfg, n_mc, args.seed, act, args.rel_tol, args.threads)
    if args.spectrum is not None:
        _atomic_write(args.spectrum, lambda fh: _spectrum_csv(spec.eigenvalues, fh))
    _emit_record(args, {"rank": spec.rank_estimate, "n_params": cfg.n_params,
                        "n_mc": spec.mc_samples, "threshold": spec.threshold,
                        "max_eigenvalue": float(spec.eigenvalues[0]),
                        "activation": act.value}, out)


def _spectrum_csv(eigs, fh):
    fh.write("index,eigenvalue\n")
    for i, e in enumerate(eigs):
        fh.write(f"{i},{float(e):.17g}\n")


def _dims(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"--dims must be comma-separated integers, got {text!r}") from None


def _floats(text, flag):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"{flag} must be comma-separated numbers, got {text!r}") from None


def _report_out(args, reports, out):
    if args.json:
        json.dump(_jsonable([r.as_dict() for r in reports]), out, indent=2)
        out.write("\n")
        return
    out.write("report,dim,metric,trials\n")
    for r in reports:
        for dim, val in zip(r.dims, r.metric):
            out.write(f"{r.name},{dim},{val:.17g},{r.trials}\n")


def cmd_verify(args, out):
    kind = args.kind
    if kind == "expansion":
        eps = _floats(args.eps, "--eps")
        act = Activation.parse(args.activation or "tanh")
        rep = rmt_verify.check_gaussian_expansion(act, act, args.v1, args.v2, eps,
                                                  args.n_mc, args.seed)
        _emit_table(args, ("eps", "residual", "slope"),
                    [(e, r, rep.slope) for e, r in zip(rep.eps, rep.residual)], out,
                    {"slope": rep.slope, "method": rep.method})
        return
    if kind == "sigma":
        cfg, act = _cfg(args, {"d": 100, "n1": _d_default, "m": _d_default})
        rep = rmt_verify.check_sigma_convergence(act, cfg, _dims(args.dims), args.trials,
                                                 args.seed, args.mode, args.n_mc, args.threads)
        _report_out(args, [rep], out)
    elif kind == "replacements":
        cfg, act = _cfg(args, {"d": 20, "n1": _d_default, "m": _d_default})
        reps = rmt_verify.check_replacements(cfg, act, _dims(args.dims), args.trials, args.seed,
                                             args.n_mc, args.threads)
        _report_out(args, reps, out)
    elif kind == "ar":
        cfg, act = _cfg(args, {"d": 24, "n1": _d_default, "m": _d_default})
        n_mc = args.n_mc if args.n_mc is not None else 100_000
        rep = rmt_verify.check_ar_decomposition(cfg, act, args.seed, n_mc, args.threads)
        _emit_record(args, rep.as_dict(), out)
    else:
        cfg, act = _cfg(args)
        c = constants(act, cfg.v)
        u = stieltjes.u_critical(cfg)
        pair = stieltjes.solve_fixed_point(c, cfg.beta1, cfg.gamma0, u)
        m1, m2 = stieltjes.solve_complex(c, cfg.beta1, cfg.gamma0, 1j * u)
        rec = {"a1": pair.a1, "a2": pair.a2, "u_c": u, "residual": pair.residual,
               "iterations": pair.iterations,
               "complex_consistency": max(abs(m1 - 1j * pair.a1), abs(m2 - 1j * pair.a2))}
        _emit_record(args, rec, out)


def cmd_mp(args, out):
    law = mp_law.MPLaw(args.gamma)
    if args.kind == "density":
        lo = law.lambda_minus if args.lo is None else args.lo
        hi = law.lambda_plus if args.hi is None else args.hi
        if args.points < 2 or not hi > lo:
            raise ConfigError("need --points >= 2 and --to > --from")
        s = np.linspace(lo, hi, args.points)
        dens = mp_law.mp_density(law, s)
        _emit_table(args, ("s", "density"), list(zip(s, dens)), out,
                    {"gamma": args.gamma, "atom_mass": law.atom_mass})
        return
    k, z = args.moment, args.resolvent
    if (k is None) == (z is None):
        raise ConfigError("give exactly one of --moment or --resolvent")
    if k is not None:
        val = mp_law.mp_integrate(law, lambda s: s ** k)
        what = f"s^{k}"
    else:
        if not z > 0:
            raise ConfigError("--resolvent shift must be positive")
        val = mp_law.mp_integrate(law, lambda s: 1.0 / (s + z))
        what = f"1/(s+{_fmt(z)})"
    _emit_record(args, {"gamma": args.gamma, "integrand": what, "value": val,
                        "atom_mass": law.atom_mass}, out)


# parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crbounds", description=__doc__.splitlines()[0],
                formatter_class=_HelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _HelpFormatter

    c = sub.add_parser("constants", help="activation constants eta0, theta11, eta1",
                       formatter_class=fmt)
    c.add_argument("--activation", default="tanh", choices=[a.value for a in Activation])
    c.add_argument("--alpha", type=float, default=1.0)
    c.add_argument("--sigma-x2", dest="sigma_x2", type=float, default=1.0)
    _common(c)
    c.set_defaults(func=cmd_constants)

    b = sub.add_parser("bound", help="lower bounds", formatter_class=fmt)
    bsub = b.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    bu = bsub.add_parser("unbiased", help="sigma_eps^2 rank / M", formatter_class=fmt)
    bu.add_argument("--model", default="nonlinear_two_layer", choices=bounds.RANK_MODELS)
    bu.add_argument("--rank", type=float, default=None, help="explicit expected rank")
    for name, help_ in (("linear", "Bayesian bound for linear regression"),
                        ("two-layer", "max(B1, B2) for the two-layer network")):
        sp = bsub.add_parser(name, help=help_, formatter_class=fmt)
        _model(sp, activation=name == "two-layer")
        _common(sp)
        sp.set_defaults(func=cmd_bound, kind=name)
    _model(bu)
    _common(bu)
    bu.set_defaults(func=cmd_bound, kind="unbiased")

    def sgd_flags(sp):
        g = sp.add_argument_group("SGD")
        g.add_argument("--epochs", type=int, default=100)
        g.add_argument("--batch-size", type=int, default=1)
        g.add_argument("--lr-constant", type=float, default=None,
                       help="learning rate times M (default: 0.5 sigmoid, 0.03 otherwise)")
        g.add_argument("--n-theta", type=int, default=10, help="teachers")
        g.add_argument("--n-datasets", type=int, default=10, help="datasets per teacher")
        g.add_argument("--n-test", type=int, default=2000, help="test samples per teacher")

    s = sub.add_parser("sweep", help="bounds (and optionally SGD) over a grid", formatter_class=fmt)
    s.add_argument("kind", choices=experiments.SWEEP_KINDS)
    s.add_argument("--from", dest="lo", type=float, required=True)
    s.add_argument("--to", dest="hi", type=float, required=True)
    s.add_argument("--points", type=int, default=9)
    s.add_argument("--spacing", choices=("linear", "log"), default="linear")
    s.add_argument("--sgd", action="store_true", help="also run the SGD experiment per point")
    sgd_flags(s)
    _model(s)
    _common(s)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("sgd", help="teacher-student SGD experiment", formatter_class=fmt)
    sgd_flags(g)
    _model(g)
    _common(g)
    g.set_defaults(func=cmd_sgd)

    f = sub.add_parser("fisher-rank", help="Monte Carlo Fisher spectrum and numerical rank",
                       formatter_class=fmt)
    f.add_argument("--n-mc", type=int, default=None, help="samples (default: 10 x parameters)")
    f.add_argument("--rel-tol", type=float, default=fisher_empirical.RANK_REL_TOL)
    f.add_argument("--spectrum", type=Path, default=None, help="also write eigenvalues CSV here")
    _model(f)
    _common(f)
    f.set_defaults(func=cmd_fisher_rank)

    v = sub.add_parser("verify", help="random-matrix lemma checks", formatter_class=fmt)
    vsub = v.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    for name, dims in (("sigma", "100,200,400"), ("replacements", "20,40")):
        sp = vsub.add_parser(name, formatter_class=fmt)
        sp.add_argument("--dims", default=dims)
        sp.add_argument("--trials", type=int, default=20)
        sp.add_argument("--n-mc", type=int, default=None,
                        help="Monte Carlo samples (default: exact quadrature)")
        if name == "sigma":
            sp.add_argument("--mode", choices=("project", "fit"), default="project")
        _model(sp)
        _common(sp)
        sp.set_defaults(func=cmd_verify, kind=name)
    ve = vsub.add_parser("expansion", formatter_class=fmt)
    ve.add_argument("--activation", default="tanh", choices=[a.value for a in Activation])
    ve.add_argument("--v1", type=float, default=1.0)
    ve.add_argument("--v2", type=float, default=1.0)
    ve.add_argument("--eps", default="0.05,0.1,0.2")
    ve.add_argument("--n-mc", type=int, default=None,
                    help="Monte Carlo samples (default: 2-D quadrature)")
    _common(ve)
    ve.set_defaults(func=cmd_verify, kind="expansion")
    va = vsub.add_parser("ar", formatter_class=fmt)
    va.add_argument("--n-mc", type=int, default=None, help="samples (default: 100000)")
    _model(va)
    _common(va)
    va.set_defaults(func=cmd_verify, kind="ar")
    vs = vsub.add_parser("stieltjes", formatter_class=fmt)
    _model(vs)
    _common(vs)
    vs.set_defaults(func=cmd_verify, kind="stieltjes")

    mp = sub.add_parser("mp", help="Marchenko-Pastur law", formatter_class=fmt)
    msub = mp.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    md = msub.add_parser("density", formatter_class=fmt)
    md.add_argument("--gamma", type=float, required=True)
    md.add_argument("--from", dest="lo", type=float, default=None, help="default: lambda_minus")
    md.add_argument("--to", dest="hi", type=float, default=None, help="default: lambda_plus")
    md.add_argument("--points", type=int, default=101)
    _common(md)
    md.set_defaults(func=cmd_mp, kind="density")
    mi = msub.add_parser("integrate", formatter_class=fmt)
    mi.add_argument("--gamma", type=float, required=True)
    mi.add_argument("--moment", type=int, default=None, help="integrate s^k")
    mi.add_argument("--resolvent", type=float, default=None, help="integrate 1/(s+z)")
    _common(mi)
    mi.set_defaults(func=cmd_mp, kind="integrate")
    _document_defaults(p)
    return p


def _document_defaults(parser) -> None:
    """Give help text to options that lack it, so --help lists every default."""
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                _document_defaults(sp)
        elif action.help is None and action.option_strings and action.default is not None:
            action.help = "(default: %(default)s)"


def _atomic_write(path: Path, write) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent if str(path.parent) else ".", prefix=".tmp-",
                               suffix=path.suffix)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def run(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if args.out is not None and not args.out.parent.exists():
            raise ConfigError(f"output directory does not exist: {args.out.parent}")
        buf = io.StringIO()
        args.func(args, buf)
        if args.out is None:
            stdout.write(buf.getvalue())
        else:
            _atomic_write(args.out, lambda fh: fh.write(buf.getvalue()))
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=stderr)
        return 1
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=stderr)
        return 2
    except np.linalg.LinAlgError as exc:
        print(f"numerical failure: eigensolver: {exc}", file=stderr)
        return 2


def main() -> None:
    sys.exit(run())
