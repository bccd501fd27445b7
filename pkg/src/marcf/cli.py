"""Command-line front end: simulate, select, fit, forecast, eval, gradcheck.

Exit codes: 0 success, 1 numerical failure, 2 usage error.  The MARCF_SEED
environment variable overrides --seed when set.  Config precedence is
flags > --config file > defaults.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .core import MatrixSeries, RngHandle
from .estimation import DivergenceError, FitConfig, fit, initialize
from .forecast import forecast_one, persistence_forecaster, rolling_eval
from .model import StructuralDims, assemble
from .objective import Hyperparams, fd_gradient, full_gradient
from .selection import run_pipeline, select_common_dims, select_ranks
from .simulate import DgpSpec, DmfmTruth, generate


class UsageError(Exception):
    """Invalid arguments or inconsistent inputs; exits with code 2."""


_CONFIG_FIELDS = ("lambda1", "lambda2", "b", "eta", "max_iter", "rel_tol",
                  "backoff_factor", "max_backoffs", "gradient_route", "init_ridge")


def _load_config(args) -> FitConfig:
    """Merge defaults, an optional JSON config file, and explicit flags."""
    merged: dict = {}
    if getattr(args, "config", None):
        try:
            merged.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file: {exc}") from exc
        unknown = set(merged) - set(_CONFIG_FIELDS)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for name in _CONFIG_FIELDS:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            merged[name] = value
    hp = Hyperparams(
        lambda1=merged.get("lambda1", 1.0),
        lambda2=merged.get("lambda2", 1.0),
        b=merged.get("b", 1.0),
    )
    return FitConfig(
        hp=hp,
        eta=merged.get("eta", 0.001),
        max_iter=int(merged.get("max_iter", 1000)),
        rel_tol=merged.get("rel_tol", 1e-8),
        backoff_factor=merged.get("backoff_factor", 0.1),
        max_backoffs=int(merged.get("max_backoffs", 2)),
        gradient_route=merged.get("gradient_route", "auto"),
        init_ridge=merged.get("init_ridge", 1e-4),
    )


def _resolve_seed(args) -> int:
    env = os.environ.get("MARCF_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"MARCF_SEED must be an integer, got {env!r}") from exc
    return args.seed


def _read_series(args) -> MatrixSeries:
    path = Path(args.data)
    if not path.exists():
        raise UsageError(f"series file not found: {path}")
    meta = None
    meta_path = path.with_name("meta.json")
    if meta_path.exists():
        meta = dataio.read_meta(meta_path)
    series = dataio.read_series(path, meta)
    return series


def _maybe_standardize(args, series):
    if getattr(args, "standardize", False):
        return dataio.standardize_series(series)
    return series, None


def _add_fit_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with solver/penalty settings")
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--max-iter", dest="max_iter", type=int, default=None)
    p.add_argument("--rel-tol", dest="rel_tol", type=float, default=None)
    p.add_argument("--backoff-factor", dest="backoff_factor", type=float, default=None)
    p.add_argument("--max-backoffs", dest="max_backoffs", type=int, default=None)
    p.add_argument("--gradient-route", dest="gradient_route",
                   choices=("auto", "gram", "contract"), default=None)
    p.add_argument("--init-ridge", dest="init_ridge", type=float, default=None)


def cmd_simulate(args) -> int:
    if args.d1 > args.r1:
        raise UsageError("d1 exceeds r1")
    if args.d2 > args.r2:
        raise UsageError("d2 exceeds r2")
    try:
        dims = StructuralDims(args.p1, args.p2, args.r1, args.r2, args.d1, args.d2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    spec = DgpSpec(
        dims=dims,
        T=args.T,
        kind=args.kind,
        sin_theta_min=args.sin_theta_min,
        max_rejects=args.max_rejects,
        seed=_resolve_seed(args),
        burn_in=args.burn_in,
    )
    truth, series = generate(spec, RngHandle(spec.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.write_series(out / "series.csv", series)
    dataio.write_meta(out / "meta.json", series)
    if isinstance(truth, DmfmTruth):
        payload = {
            "kind": "dynamic-mfm",
            "lam1": truth.lam1.tolist(), "lam2": truth.lam2.tolist(),
            "B1": truth.B1.tolist(), "B2": truth.B2.tolist(),
        }
    else:
        payload = {"kind": "marcf", **dataio.params_to_dict(truth)}
    (out / "truth.json").write_text(json.dumps(payload, indent=2) + "\n")
    print(f"wrote {out / 'series.csv'} ({len(series)} observations) and {out / 'truth.json'}")
    return 0


def cmd_select(args) -> int:
    series = _read_series(args)
    series, transform = _maybe_standardize(args, series)
    cfg = _load_config(args)
    report, final = run_pipeline(series, args.rbar1, args.rbar2, cfg, n_jobs=args.jobs)
    payload = dataio.selection_report_to_dict(report)
    if transform is not None:
        payload["standardize"] = transform
    out = Path(args.out)
    out.write_text(json.dumps(payload, indent=2) + "\n")
    if args.bic_csv:
        dataio.write_bic_csv(args.bic_csv, report.bic_surface)
    if args.model_out:
        dataio.write_params(args.model_out, final.theta_hat)
    print(f"r_hat={report.r_hat} d_hat={report.d_hat} -> {out}")
    return 0


def cmd_fit(args) -> int:
    series = _read_series(args)
    series, transform = _maybe_standardize(args, series)
    cfg = _load_config(args)
    if args.selection:
        sel = json.loads(Path(args.selection).read_text())
        r1, r2 = sel["r_hat"]
        d1, d2 = sel["d_hat"]
    elif None not in (args.r1, args.r2, args.d1, args.d2):
        r1, r2, d1, d2 = args.r1, args.r2, args.d1, args.d2
    else:
        raise UsageError("provide --r1/--r2/--d1/--d2 or --selection selection.json")
    try:
        dims = StructuralDims(series.p1, series.p2, r1, r2, d1, d2)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    theta0 = initialize(series, dims, cfg)
    report = fit(theta0, series, cfg)
    dataio.write_params(args.out, report.theta_hat)
    if args.report:
        payload = dataio.fit_report_to_dict(report)
        if transform is not None:
            payload["standardize"] = transform
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    print(
        f"fit dims=({r1},{r2},{d1},{d2}) iterations={report.iterations_run} "
        f"converged={report.converged} objective={report.objective_trace[-1]:.6g}"
    )
    return 0


def cmd_forecast(args) -> int:
    series = _read_series(args)
    theta = dataio.read_params(args.model)
    pred = forecast_one(theta, series.data[-1])
    if args.transform:
        transform = json.loads(Path(args.transform).read_text())
        pred = dataio.unstandardize_matrix(pred, transform)
    out = Path(args.out)
    forecast_series = MatrixSeries(pred[None, :, :])
    dataio.write_series(out, forecast_series)
    print(f"wrote one-step forecast to {out}")
    return 0


def cmd_eval(args) -> int:
    series = _read_series(args)
    series, _ = _maybe_standardize(args, series)
    cfg = _load_config(args)
    forecaster = persistence_forecaster if args.model == "persistence" else None
    model = args.model if args.model != "persistence" else "marcf"
    dims = None
    if None not in (args.r1, args.r2):
        dims = StructuralDims(series.p1, series.p2, args.r1, args.r2,
                              args.d1 or 0, args.d2 or 0)
    report = rolling_eval(
        series, args.window, args.windows, model=model, cfg=cfg,
        dims=dims, forecaster=forecaster,
    )
    dataio.write_eval_csv(args.out, report.model, report.sse)
    summary = {"model": report.model, "mean": report.mean, "median": report.median,
               "window": report.window, "n_windows": len(report.sse)}
    if report.dims is not None:
        d = report.dims
        summary["dims"] = {"r1": d.r1, "r2": d.r2, "d1": d.d1, "d2": d.d2}
    Path(args.summary).write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{report.model}: mean={report.mean:.6g} median={report.median:.6g}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = RngHandle(_resolve_seed(args))
    worst = 0.0
    for trial in range(args.trials):
        gen = rng.derive(trial).generator
        p1, p2 = int(gen.integers(3, 7)), int(gen.integers(3, 7))
        r1, r2 = int(gen.integers(1, 4)), int(gen.integers(1, 4))
        d1, d2 = int(gen.integers(0, r1 + 1)), int(gen.integers(0, r2 + 1))
        lam1, lam2 = float(gen.integers(0, 2)), float(gen.integers(0, 2))
        dims = StructuralDims(p1, p2, r1, r2, d1, d2)
        spec = DgpSpec(dims=dims, T=12, seed=0, sin_theta_min=0.0, burn_in=20)
        theta, series = generate(spec, gen)
        hp = Hyperparams(lambda1=lam1, lambda2=lam2, b=1.0)
        probe = _perturbed(theta, gen, 0.1)
        analytic = full_gradient(probe, series, hp)
        numeric = fd_gradient(probe, series, hp, h=1e-5)
        for ga, gn in zip(analytic.blocks(), numeric.blocks()):
            if gn.size == 0:
                continue
            denom = max(np.linalg.norm(gn), 1e-10)
            worst = max(worst, float(np.linalg.norm(ga - gn) / denom))
    print(f"max relative gradient error over {args.trials} trials: {worst:.3e}")
    return 0 if worst < 1e-6 else 1


def _perturbed(theta, gen, scale):
    from dataclasses import replace

    blocks = {name: getattr(theta, name) + scale * gen.standard_normal(getattr(theta, name).shape)
              for name in ("C1", "R1", "P1", "D1", "C2", "R2", "P2", "D2")}
    return replace(theta, **blocks)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marcf",
        description="Matrix autoregression with common factors: simulate, select, fit, forecast.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset and its truth file")
    p.add_argument("--kind", choices=("marcf", "dynamic-mfm"), default="marcf")
    p.add_argument("--p1", type=int, required=True)
    p.add_argument("--p2", type=int, required=True)
    p.add_argument("--r1", type=int, required=True)
    p.add_argument("--r2", type=int, required=True)
    p.add_argument("--d1", type=int, default=0)
    p.add_argument("--d2", type=int, default=0)
    p.add_argument("--T", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sin-theta-min", dest="sin_theta_min", type=float, default=0.8)
    p.add_argument("--max-rejects", dest="max_rejects", type=int, default=1000)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=200)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("select", help="select ranks and common dimensions")
    p.add_argument("--data", required=True, help="series.csv path")
    p.add_argument("--rbar1", type=int, default=None)
    p.add_argument("--rbar2", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default="selection.json")
    p.add_argument("--bic-csv", dest="bic_csv", default=None)
    p.add_argument("--model-out", dest="model_out", default=None)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("fit", help="fit at fixed structural dimensions")
    p.add_argument("--data", required=True)
    p.add_argument("--r1", type=int, default=None)
    p.add_argument("--r2", type=int, default=None)
    p.add_argument("--d1", type=int, default=None)
    p.add_argument("--d2", type=int, default=None)
    p.add_argument("--selection", default=None, help="selection.json with r_hat/d_hat")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", default="model.json")
    p.add_argument("--report", default=None)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("forecast", help="one-step forecast from a fitted model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="model.json path")
    p.add_argument("--transform", default=None, help="standardization record to invert")
    p.add_argument("--out", default="forecast.csv")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("eval", help="rolling one-step out-of-sample evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, required=True)
    p.add_argument("--windows", type=int, required=True)
    p.add_argument("--model", choices=("marcf", "rrmar", "persistence"), default="marcf")
    p.add_argument("--r1", type=int, default=None)
    p.add_argument("--r2", type=int, default=None)
    p.add_argument("--d1", type=int, default=None)
    p.add_argument("--d2", type=int, default=None)
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--out", default="eval.csv")
    p.add_argument("--summary", default="eval_summary.json")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
