"""Command-line interface.

Subcommands: ``fit``, ``select``, ``df``, ``cv``, ``simulate``,
``benchmark``, ``placebo``, ``whitetest``.  Every command writes a JSON
report (to ``--output`` or stdout) and optionally plot-ready CSV tables.
Exit codes: 0 on success, 1 on a computation failure (with a structured
error report), 2 on a usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import diagnostics, io as pio, selection, simulation
from .dof import df_hat, divergence, divergence_fd_oracle
from .errors import ConfigurationError, SynthselError
from .panel import PanelDataset
from .solvers import (
    COVARIATE,
    MASC,
    PENALIZED,
    PLAIN,
    ScFit,
    default_v_grid,
    solve_masc,
    solve_penalized_sc,
    solve_sc,
    solve_sc_cov,
    solve_sc_cov_inner,
)


def parse_grid(spec: str) -> np.ndarray:
    """Grid notations: ``a:b:count`` (uniform), ``log:a:b:count``
    (log-spaced), or a comma-separated list of values."""
    spec = spec.strip()
    try:
        if spec.startswith("log:"):
            a, b, count = spec[4:].split(":")
            return np.geomspace(float(a), float(b), int(count))
        if ":" in spec:
            a, b, count = spec.split(":")
            return np.linspace(float(a), float(b), int(count))
        return np.asarray([float(tok) for tok in spec.split(",") if tok.strip() != ""])
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse grid spec {spec!r}: {exc}")


def parse_int_grid(spec: str) -> list[int]:
    spec = spec.strip()
    if ":" in spec:
        a, b = spec.split(":")
        return list(range(int(a), int(b) + 1))
    return [int(tok) for tok in spec.split(",") if tok.strip() != ""]


def _load(args) -> pio.LoadedPanel:
    loaded = pio.load_panel(
        args.input,
        treated=args.treated,
        treatment_period=args.treatment_period,
        covariates_path=getattr(args, "covariates", None),
    )
    return pio.preprocess_loaded(loaded, ma_window=args.ma_window, demean=args.demean)


def _fit_one(args, panel: PanelDataset) -> ScFit:
    kind = args.estimator
    lam = args.lam
    if kind == PLAIN:
        return solve_sc(panel.y, panel.x)
    if kind == PENALIZED:
        return solve_penalized_sc(panel.y, panel.x, lam)
    if kind == MASC:
        return solve_masc(panel.y, panel.x, lam, args.m)
    if kind == COVARIATE:
        if not panel.has_covariates:
            raise ConfigurationError("covariate estimator requires --covariates")
        if args.v:
            v = np.asarray([float(tok) for tok in args.v.split(",")])
            return solve_sc_cov_inner(panel.y, panel.x, panel.z, panel.d, v, lam=lam)
        return solve_sc_cov(
            panel.y, panel.x, panel.z, panel.d, default_v_grid(panel.n_cov), lam=lam
        )
    raise ConfigurationError(f"unknown estimator {kind!r}")


def _fit_report(fit: ScFit, loaded: pio.LoadedPanel, panel: PanelDataset) -> dict:
    s2 = selection.sigma2_hat(panel.y, panel.x)
    report = df_hat(fit)
    results = {
        "estimator": fit.kind,
        "lambda": fit.lam,
        "m": fit.m,
        "weights": {
            loaded.donor_names[i]: float(w)
            for i, w in enumerate(fit.beta)
            if w > fit.weights.active_tol
        },
        "active_set": [loaded.donor_names[i] for i in fit.sets.a],
        "rss": fit.rss,
        "sigma2_hat": s2,
        "df_hat": report.df_hat,
        "df_case": report.case,
        "rank_xa": report.rank_xa,
        "ic": selection.ic_value(fit.rss, s2, report.df_hat),
        "penalty_distance": diagnostics.penalty_distance(fit),
        "kkt": {
            "stationarity_residual": fit.kkt.stationarity_residual,
            "complementarity_gap": fit.kkt.complementarity_gap,
            "degenerate": fit.kkt.degenerate,
        },
    }
    if panel.has_post:
        path = diagnostics.effect_path(fit, panel.post_y, panel.post_x)
        results["effect"] = {
            "tau": path.tau,
            "tau_avg_1": path.tau_avg[1],
            "tau_avg_12": path.tau_avg[12],
        }
    return results


def _selection_results(res: selection.SelectionResult) -> dict:
    return {
        "method": res.method,
        "sigma2_hat": res.sigma2_hat,
        "grid": [
            {"lambda": pt.lam, "m": pt.m, "v": list(pt.v) if pt.v else None}
            for pt in res.grid
        ],
        "scores": res.scores,
        "chosen_index": res.chosen,
        "chosen": {
            "lambda": res.chosen_point.lam,
            "m": res.chosen_point.m,
            "v": list(res.chosen_point.v) if res.chosen_point.v else None,
        },
        "chosen_score": res.chosen_score,
    }


def _curve_csv(path: str, res: selection.SelectionResult) -> None:
    pio.write_csv(
        path,
        ["lambda", "m", "score"],
        [[pt.lam, pt.m if pt.m is not None else "", float(s)] for pt, s in zip(res.grid, res.scores)],
    )


# ---------------------------------------------------------------------------
# subcommand runners
# ---------------------------------------------------------------------------


def _cmd_fit(args) -> dict:
    loaded = _load(args)
    panel = loaded.dataset
    fit = _fit_one(args, panel)
    results = _fit_report(fit, loaded, panel)
    if args.fitted_csv:
        pio.write_csv(
            args.fitted_csv,
            ["time", "observed", "fitted"],
            [
                [loaded.pre_times[i], float(panel.y[i]), float(fit.fitted[i])]
                for i in range(panel.n)
            ],
        )
    return results


def _cmd_select(args) -> dict:
    loaded = _load(args)
    panel = loaded.dataset
    grid = parse_grid(args.grid) if args.grid else None
    m_grid = parse_int_grid(args.m_grid) if args.m_grid else None
    method = args.method
    if method == "sure":
        if args.estimator == COVARIATE:
            res = selection.select_v_ic(panel, default_v_grid(panel.n_cov), grid)
        else:
            res = selection.select_lambda_ic(panel, args.estimator, grid, m_grid=m_grid)
    elif method == "cv-holdout":
        res = selection.cv_holdout(panel, args.estimator, grid, args.split, m_grid=m_grid)
    elif method == "cv-loo":
        res = selection.cv_loo_untreated(panel, args.estimator, grid, m_grid=m_grid)
    elif method == "cv-rolling":
        res = selection.cv_rolling(
            panel, args.estimator, grid, args.window, args.horizon, m_grid=m_grid
        )
    else:
        raise ConfigurationError(f"unknown selection method {method!r}")
    if args.curve_csv:
        _curve_csv(args.curve_csv, res)
    return _selection_results(res)


def _cmd_cv(args) -> dict:
    args.method = {"holdout": "cv-holdout", "loo-untreated": "cv-loo", "rolling": "cv-rolling"}[
        args.cv_method
    ]
    return _cmd_select(args)


def _cmd_df(args) -> dict:
    loaded = _load(args)
    panel = loaded.dataset
    fit = _fit_one(args, panel)
    report = df_hat(fit)
    div = divergence(fit, panel.x, panel.d)
    results = {
        "estimator": fit.kind,
        "lambda": fit.lam,
        "df_hat": report.df_hat,
        "case": report.case,
        "rank_xa": report.rank_xa,
        "n_active": report.n_active,
        "n_m_and_e": report.n_me,
        "n_e_minus_m": report.n_em,
        "divergence_trace": div.trace,
    }
    if args.fd_check:
        def resolve(y):
            return _fit_one(args, PanelDataset(y=y, x=panel.x, z=panel.z, d=panel.d))

        fd = divergence_fd_oracle(resolve, panel.y)
        results["fd_check"] = {
            "max_abs_deviation": float(np.max(np.abs(div.matrix - fd.matrix))),
            "active_set_changed": fd.active_set_changed,
            "step": fd.step,
        }
    return results


def _cmd_simulate(args) -> dict:
    if args.fit_from:
        loaded = pio.load_panel(args.fit_from, args.treated, args.treatment_period)
        loaded = pio.preprocess_loaded(loaded, ma_window=args.ma_window, demean=args.demean)
        spec = simulation.fit_factor_model(loaded.dataset, r=args.factors)
        periods = args.periods or loaded.dataset.n
    else:
        if args.design == "empirical":
            raise ConfigurationError("the empirical design needs --fit-from for a residual pool")
        periods = args.periods or 48
        spec = simulation.synthetic_factor_spec(
            args.units, periods, r=args.factors, seed=args.seed
        )
    if args.design == "gaussian":
        draw = simulation.draw_factor_gaussian(spec, periods, args.seed)
    else:
        base = simulation.draw_factor_gaussian(spec, loaded.dataset.n, simulation.spawn_rng(args.seed, 1))
        pool = loaded.dataset.y - simulation.conditional_mean_path(
            spec,
            simulation.FactorPanelDraw(
                y=loaded.dataset.y,
                x=loaded.dataset.x,
                y_systematic=base.y_systematic,
                x_systematic=base.x_systematic,
                delta=spec.delta[: loaded.dataset.n],
            ),
        )
        draw = simulation.draw_factor_empirical(spec, pool, periods, args.seed)
    if args.output_panel:
        names = tuple(f"donor_{j + 1}" for j in range(draw.x.shape[1]))
        loaded_out = pio.LoadedPanel(
            dataset=PanelDataset(y=draw.y, x=draw.x),
            treated="treated",
            donor_names=names,
            pre_times=tuple(f"t{idx + 1}" for idx in range(draw.y.shape[0])),
            post_times=(),
        )
        pio.write_panel_csv(args.output_panel, loaded_out)
    return {
        "design": args.design,
        "periods": periods,
        "units": spec.n_units,
        "factors": spec.n_factors,
        "seed": args.seed,
        "conditional_variance": spec.conditional_variance(),
        "sigma": spec.sigma,
        "panel_csv": args.output_panel,
    }


def _cmd_benchmark(args) -> dict:
    methods = [tok.strip() for tok in args.methods.split(",") if tok.strip()]
    grid = parse_grid(args.grid) if args.grid else None
    report = simulation.run_selection_benchmark(
        args.design,
        methods,
        args.reps,
        args.seed,
        n_donors=args.donors,
        n_pre=args.pre,
        n_post=args.post,
        lambda_grid=grid,
    )
    if args.csv:
        with open(args.csv, "w", encoding="utf-8", newline="") as handle:
            handle.write(pio.benchmark_csv_text(report))
    return {
        "design": report.design,
        "replications": report.replications,
        "seed": report.seed,
        "n_pre": report.n_pre,
        "n_post": report.n_post,
        "lambda_grid": report.lambda_grid,
        "methods": [
            {
                "method": row.method,
                "mse_tau1": row.mse_tau1,
                "mse_tau12": row.mse_tau12,
                "mse_lambda": row.mse_lambda,
                "mse_risk_raw": row.mse_risk_raw,
                "mse_risk_per_n": row.mse_risk_per_n,
                "mean_rank_corr": row.mean_rank_corr,
            }
            for row in report.methods
        ],
    }


def _cmd_placebo(args) -> dict:
    args.treated = args.target
    loaded = _load(args)
    panel = loaded.dataset
    if args.exclude:
        drop = {name.strip() for name in args.exclude.split(",")}
        keep = [i for i, name in enumerate(loaded.donor_names) if name not in drop]
        if not keep:
            raise ConfigurationError("every donor was excluded")
        panel = PanelDataset(
            y=panel.y,
            x=panel.x[:, keep],
            post_y=panel.post_y,
            post_x=panel.post_x[:, keep] if panel.post_x is not None else None,
        )
    fit = _fit_one(args, panel)
    placebo = diagnostics.placebo_forecast(fit, panel, horizon=args.horizon)
    return {
        "target": args.target,
        "estimator": fit.kind,
        "lambda": fit.lam,
        "horizon": placebo.horizon,
        "mean_squared_forecast_error": placebo.mse,
        "tau": placebo.path.tau,
    }


def _cmd_whitetest(args) -> dict:
    loaded = _load(args)
    panel = loaded.dataset
    fit = _fit_one(args, panel)
    report = diagnostics.white_test(fit, panel.x)
    return {
        "estimator": fit.kind,
        "lambda": fit.lam,
        "r_squared": report.r_squared,
        "statistic": report.statistic,
        "p_value": report.p_value,
        "regressor_count": report.regressor_count,
        "dropped_collinear": report.dropped_collinear,
    }


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_panel_args(sub, treated_flag=True):
    sub.add_argument("--input", required=True, help="outcome panel CSV")
    if treated_flag:
        sub.add_argument("--treated", required=True, help="treated unit column name")
    sub.add_argument("--treatment-period", required=True, dest="treatment_period")
    sub.add_argument("--covariates", default=None, help="optional covariate CSV")
    sub.add_argument("--ma-window", type=int, default=1, dest="ma_window")
    sub.add_argument("--demean", action="store_true")


def _add_estimator_args(sub):
    sub.add_argument(
        "--estimator",
        default=PLAIN,
        choices=[PLAIN, PENALIZED, MASC, COVARIATE],
    )
    sub.add_argument("--lambda", type=float, default=0.0, dest="lam")
    sub.add_argument("--m", type=int, default=1)
    sub.add_argument("--v", default=None, help="fixed diagonal weights, comma separated")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="synthsel",
        description="synthetic control estimation, degrees of freedom and model selection",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", default=None, help="JSON report path (default stdout)")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=argparse.ArgumentParser)

    def add_parser(name, help_text):
        return subs.add_parser(name, help=help_text, parents=[common])

    fit = add_parser("fit", "fit one estimator and report weights and df")
    _add_panel_args(fit)
    _add_estimator_args(fit)
    fit.add_argument("--fitted-csv", default=None, dest="fitted_csv")
    fit.set_defaults(run=_cmd_fit)

    sel = add_parser("select", "select tuning parameters")
    _add_panel_args(sel)
    _add_estimator_args(sel)
    sel.add_argument("--method", default="sure", choices=["sure", "cv-holdout", "cv-loo", "cv-rolling"])
    sel.add_argument("--grid", default=None, help="a:b:count, log:a:b:count, or v1,v2,...")
    sel.add_argument("--m-grid", default=None, dest="m_grid", help="a:b or m1,m2,...")
    sel.add_argument("--split", type=float, default=0.5)
    sel.add_argument("--window", type=int, default=None)
    sel.add_argument("--horizon", type=int, default=1)
    sel.add_argument("--curve-csv", default=None, dest="curve_csv")
    sel.set_defaults(run=_cmd_select)

    dfp = add_parser("df", "degrees of freedom and divergence of one fit")
    _add_panel_args(dfp)
    _add_estimator_args(dfp)
    dfp.add_argument("--fd-check", action="store_true", dest="fd_check")
    dfp.set_defaults(run=_cmd_df)

    cvp = add_parser("cv", "cross-validation scoring")
    _add_panel_args(cvp)
    _add_estimator_args(cvp)
    cvp.add_argument("--cv-method", default="holdout", dest="cv_method",
                     choices=["holdout", "loo-untreated", "rolling"])
    cvp.add_argument("--grid", default=None)
    cvp.add_argument("--m-grid", default=None, dest="m_grid")
    cvp.add_argument("--split", type=float, default=0.5)
    cvp.add_argument("--window", type=int, default=None)
    cvp.add_argument("--horizon", type=int, default=1)
    cvp.add_argument("--curve-csv", default=None, dest="curve_csv")
    cvp.set_defaults(run=_cmd_cv)

    sim = add_parser("simulate", "draw a synthetic panel from the factor design")
    sim.add_argument("--design", default="gaussian", choices=["gaussian", "empirical"])
    sim.add_argument("--fit-from", default=None, dest="fit_from", help="panel CSV to calibrate from")
    sim.add_argument("--treated", default=None)
    sim.add_argument("--treatment-period", default=None, dest="treatment_period")
    sim.add_argument("--ma-window", type=int, default=1, dest="ma_window")
    sim.add_argument("--demean", action="store_true")
    sim.add_argument("--units", type=int, default=11, help="unit count for synthetic specs")
    sim.add_argument("--periods", type=int, default=None)
    sim.add_argument("--factors", type=int, default=3)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--output-panel", default=None, dest="output_panel")
    sim.set_defaults(run=_cmd_simulate)

    ben = add_parser("benchmark", "race the selection methods on a known design")
    ben.add_argument("--design", default="gaussian", choices=list(simulation.DESIGNS))
    ben.add_argument("--reps", type=int, default=200)
    ben.add_argument("--seed", type=int, default=0)
    ben.add_argument("--methods", default="risk,sure,cv_holdout")
    ben.add_argument("--donors", type=int, default=40)
    ben.add_argument("--pre", type=int, default=36)
    ben.add_argument("--post", type=int, default=12)
    ben.add_argument("--grid", default=None)
    ben.add_argument("--csv", default=None)
    ben.set_defaults(run=_cmd_benchmark)

    pla = add_parser("placebo", "forecast a known-untreated unit")
    pla.add_argument("--input", required=True)
    pla.add_argument("--target", required=True, help="untreated unit to forecast")
    pla.add_argument("--treatment-period", required=True, dest="treatment_period")
    pla.add_argument("--covariates", default=None)
    pla.add_argument("--ma-window", type=int, default=1, dest="ma_window")
    pla.add_argument("--demean", action="store_true")
    pla.add_argument("--exclude", default=None, help="donors to exclude, comma separated")
    pla.add_argument("--horizon", type=int, default=12)
    _add_estimator_args(pla)
    pla.set_defaults(run=_cmd_placebo)

    whi = add_parser("whitetest", "heteroskedasticity diagnostic")
    _add_panel_args(whi)
    _add_estimator_args(whi)
    whi.set_defaults(run=_cmd_whitetest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _run_config(args)
        results = args.run(args)
    except (SynthselError, ValueError) as exc:
        error_payload = {
            "schema_version": pio.SCHEMA_VERSION,
            "command": args.command,
            "error": {"type": type(exc).__name__, "message": str(exc)},
        }
        sys.stdout.write(json.dumps(error_payload, indent=2, sort_keys=True) + "\n")
        return 1
    text = pio.write_report(args.output, args.command, _config_echo(args, config), results)
    if not args.output:
        sys.stdout.write(text)
    return 0


def _run_config(args) -> pio.RunConfig:
    known = {f.name for f in dataclasses.fields(pio.RunConfig)}
    fields = {k: v for k, v in vars(args).items() if k in known}
    return pio.RunConfig(**fields)


def _config_echo(args, config: pio.RunConfig) -> dict:
    skip = {"run", "command", "output"}
    echo = {k: v for k, v in vars(args).items() if k not in skip and v is not None}
    echo.update(config.as_dict())
    return echo


if __name__ == "__main__":
    sys.exit(main())
