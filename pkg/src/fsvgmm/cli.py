"""Command-line entry point: simulate, estimate, moments, montecarlo, filter.

Exit codes: 0 success, 1 usage error, 2 data error, 3 estimation did not
converge, 4 numerical failure.  Results go to files or stdout, diagnostics
to stderr.  Every run that writes files also writes a JSON manifest.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import sys
import warnings
from pathlib import Path


from . import __version__
from .data_io import DataError, filter_outliers, format_float, load_series, write_json, write_series
from .estimator import PARAM_NAMES, GmmConfig, HacConfig, NumericalError, fit_gmm
from .iv_moments import DEFAULT_LAGS, MomentSpec, model_moment_vector
from .measurement import CorrectionMode
from .model_core import CovKernel, FsvParams, QuadratureError
from .montecarlo import PANELS, FitTarget, MonteCarloConfig, default_jobs, run_montecarlo
from .simulate import SimConfig, simulate_fsv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NOCONV, EXIT_NUMERIC = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(args, config: dict, started: str, inputs=(), seeds=()) -> dict:
    return {
        "subcommand": args.command,
        "argv": list(args.argv),
        "config": config,
        "seeds": list(seeds),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "inputs": {str(p): _sha256(p) for p in inputs},
    }


def _parse_lags(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise UsageError(f"lags must be comma-separated integers, got {text!r}") from None


def _add_params(p: argparse.ArgumentParser):
    g = p.add_argument_group("model parameters (a panel, a JSON file, or explicit flags)")
    g.add_argument("--panel", choices=sorted(PANELS), help="preset parameter row")
    g.add_argument("--params", type=Path, help="JSON file with xi, lambda, nu, hurst")
    g.add_argument("--xi", type=float)
    g.add_argument("--lam", "--lambda", dest="lam", type=float)
    g.add_argument("--nu", type=float)
    g.add_argument("--hurst", type=float)


def _params_from_args(args) -> FsvParams:
    base = {}
    if args.panel:
        base = PANELS[args.panel].to_dict()
    if args.params:
        try:
            base.update(json.loads(Path(args.params).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read parameter file {args.params}: {exc}") from exc
    for key, attr in (("xi", "xi"), ("lambda", "lam"), ("nu", "nu"), ("hurst", "hurst")):
        val = getattr(args, attr)
        if val is not None:
            base[key] = val
    missing = [k for k in ("xi", "lambda", "nu", "hurst") if k not in base]
    if missing:
        raise UsageError(f"missing model parameters: {', '.join(missing)}")
    try:
        return FsvParams(base["xi"], base["lambda"], base["nu"], base["hurst"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _spec(args) -> MomentSpec:
    corr = CorrectionMode.parse(args.correction)
    n = args.n if corr is not CorrectionMode.NONE else None
    try:
        return MomentSpec(_parse_lags(args.lags), corr, n)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    started = _now()
    params = _params_from_args(args)
    try:
        cfg = SimConfig(params, args.days, args.steps, args.n, args.seed, emit_price=args.emit_price)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sim = simulate_fsv(cfg)
    write_series(out / "iv.csv", sim.iv)
    write_series(out / "rv.csv", sim.rv)
    write_series(out / "bv.csv", sim.bv)
    if sim.price is not None:
        buf = io.StringIO()
        buf.write("step,log_price\n")
        for i, x in enumerate(sim.price):
            buf.write(f"{i},{format_float(x)}\n")
        (out / "price.csv").write_text(buf.getvalue())
    write_json(out / "manifest.json", _manifest(args, cfg.to_dict(), started, seeds=[args.seed]))
    return EXIT_OK


def _print_fit(fit, file=None):
    file = sys.stdout if file is None else file
    print("parameter,estimate,se", file=file)
    for name, val, se in zip(PARAM_NAMES, fit.theta.as_array(), fit.se):
        print(f"{name},{format_float(val)},{format_float(se)}", file=file)
    if fit.se[3] > 0:
        lo, hi = fit.hurst_ci(0.90)
        print(f"hurst_ci90_log,{format_float(lo)},{format_float(hi)}", file=file)
    print(f"j_stat,{format_float(fit.j_stat)},dof={fit.j_dof},pvalue={format_float(fit.j_pvalue)}", file=file)
    print(f"converged,{str(fit.converged).lower()}", file=file)


def cmd_estimate(args) -> int:
    started = _now()
    spec = _spec(args)
    series = load_series(args.input, date_col=args.date_col, value_col=args.value_col, delimiter=args.delimiter)
    report = None
    if not args.no_filter:
        series, report = filter_outliers(series)
    if len(series) <= spec.lags[-1]:
        raise DataError(f"series shorter than maximum lag ({len(series)} <= {spec.lags[-1]})")
    bandwidth = "andrews" if args.bandwidth is None else args.bandwidth
    config = GmmConfig(spec=spec, max_iterations=args.max_iter, hac=HacConfig(args.kernel, bandwidth), seed=args.seed)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_gmm(series, config)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    fit.provenance = {"input": str(args.input), "input_sha256": _sha256(args.input)}
    if report is not None:
        fit.provenance["filter"] = report.to_dict()
    _print_fit(fit)
    if args.out:
        write_json(args.out, fit.to_dict())
        write_json(
            Path(str(args.out) + ".manifest.json"),
            _manifest(args, config.to_dict(), started, inputs=[args.input], seeds=[args.seed]),
        )
    if not fit.converged:
        print(f"estimation did not converge: {fit.message}", file=sys.stderr)
        return EXIT_NOCONV
    return EXIT_OK


def cmd_moments(args) -> int:
    started = _now()
    params = _params_from_args(args)
    spec = _spec(args)
    vec = model_moment_vector(CovKernel.fsv(params), params.xi, spec)
    print("moment,value")
    for label, val in zip(spec.labels, vec.values):
        print(f"{label},{format_float(val)}")
    if args.manifest:
        cfg = {"params": params.to_dict(), "spec": spec.to_dict()}
        write_json(args.manifest, _manifest(args, cfg, started))
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    started = _now()
    target = FitTarget(args.input_kind, args.correction)
    lags = _parse_lags(args.lags)
    try:
        cfg = MonteCarloConfig(
            panel=args.panel, reps=args.reps, days=args.days, steps_per_day=args.steps,
            intraday_n=args.n, seed=args.seed, targets=(target,), lags=lags, jobs=args.jobs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    def progress(i, n):
        if args.verbose:
            print(f"replication {i}/{n}", file=sys.stderr)

    result = run_montecarlo(cfg, progress)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rep", *PARAM_NAMES, *(f"se_{n}" for n in PARAM_NAMES), *(f"init_{n}" for n in PARAM_NAMES),
                "j_stat", "converged", "error"])
    for rec in result.records:
        f = rec["fits"][target.key]
        if f.get("error"):
            w.writerow([rec["rep"], *[""] * 14, "false", f["error"]])
            continue
        w.writerow([rec["rep"], *map(format_float, f["theta"]), *map(format_float, f["se"]),
                    *map(format_float, f["initial"]), format_float(f["j_stat"]), str(f["converged"]).lower(), ""])
    (out / "replications.csv").write_text(buf.getvalue())
    summary = result.summary()
    write_json(out / "summary.json", summary)
    write_json(out / "manifest.json", _manifest(args, cfg.to_dict(), started, seeds=[args.seed]))
    s = summary["targets"][target.key]
    print("parameter,true,mean,sd")
    for name, true in zip(PARAM_NAMES, cfg.params.as_array()):
        if s.get("n_fits"):
            print(f"{name},{format_float(true)},{format_float(s['estimate_mean'][name])},{format_float(s['estimate_sd'][name])}")
    return EXIT_OK


def cmd_filter(args) -> int:
    started = _now()
    series = load_series(args.input, date_col=args.date_col, value_col=args.value_col, delimiter=args.delimiter)
    cleaned, report = filter_outliers(series, window=args.window, mad_mult=args.mad_mult)
    write_series(args.out, cleaned)
    if args.report:
        write_json(args.report, report.to_dict())
    cfg = {"window": args.window, "mad_mult": args.mad_mult}
    write_json(Path(str(args.out) + ".manifest.json"), _manifest(args, cfg, started, inputs=[args.input]))
    print(f"removed {report.removed_zero} zeros and {report.removed_mad} outliers; kept {report.kept}", file=sys.stderr)
    return EXIT_OK


def _add_input(p):
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--date-col", default="date")
    p.add_argument("--value-col", default=None, help="defaults to the last column")
    p.add_argument("--delimiter", default=",")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fsvgmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    corr_choices = [m.value for m in CorrectionMode]
    lags_default = ",".join(map(str, DEFAULT_LAGS))

    p = sub.add_parser("simulate", help="simulate daily IV, RV and BV")
    _add_params(p)
    p.add_argument("--days", type=int, required=True)
    p.add_argument("--steps", type=int, default=23400, help="steps per day")
    p.add_argument("--n", type=int, default=78, help="intraday returns per day")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--emit-price", action="store_true")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit the fSV model by iterated GMM")
    _add_input(p)
    p.add_argument("--correction", choices=corr_choices, default="none")
    p.add_argument("--n", type=int, default=78)
    p.add_argument("--lags", default=lags_default)
    p.add_argument("--max-iter", type=int, default=3)
    p.add_argument("--kernel", choices=["parzen", "bartlett"], default="parzen")
    p.add_argument("--bandwidth", type=float, default=None, help="fixed HAC bandwidth (default: Andrews)")
    p.add_argument("--seed", type=int, default=0, help="seed for optimizer restarts")
    p.add_argument("--no-filter", action="store_true")
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("moments", help="print the model moment vector")
    _add_params(p)
    p.add_argument("--lags", default=lags_default)
    p.add_argument("--correction", choices=corr_choices, default="none")
    p.add_argument("--n", type=int, default=78)
    p.add_argument("--manifest", type=Path)
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("montecarlo", help="replicate a simulation panel")
    p.add_argument("--panel", choices=sorted(PANELS), required=True)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--input-kind", choices=["iv", "rv", "bv"], default="iv")
    p.add_argument("--correction", choices=corr_choices, default="none")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--days", type=int, default=4000)
    p.add_argument("--steps", type=int, default=4680)
    p.add_argument("--n", type=int, default=78)
    p.add_argument("--lags", default=lags_default)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("filter", help="remove zeros and rolling-MAD outliers")
    _add_input(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path)
    p.add_argument("--window", type=int, default=50)
    p.add_argument("--mad-mult", type=float, default=30.0)
    p.set_defaults(func=cmd_filter)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args.argv = argv
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (QuadratureError, NumericalError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
