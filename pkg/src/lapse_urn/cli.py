"""Command-line front end.

Subcommands: ``simulate``, ``exact``, ``limits``, ``verify
(lln|clt|fclt|lapses|calibrate)``, ``phase``.  Every run is a pure function
of its flags and seed; rerunning writes byte-identical files.  ``--config``
reads ``key=value`` defaults (flags win on conflict), ``LAPSE_URN_SEED``
supplies the default seed, and ``--plot`` renders a PNG companion next to
each delimited output.

Exit codes: 0 ok, 2 validation error, 3 regime error, 4 statistical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import limits as lim
from . import montecarlo as mc
from . import oracle
from .model import ModelParams, Trajectory, ValidationError, simulate, validate_model
from .spectral import RegimeError, critical_p, eigen, regime

VERIFY_CHECKS = ("lln", "clt", "fclt", "lapses", "calibrate")

DEFAULT_CALIBRATION_POINTS = ((0.3, 0.0), (0.7, 0.0), (0.3, 0.5), (0.7, 0.25), (0.6, 0.6))


def _env_seed() -> int:
    return int(os.environ.get("LAPSE_URN_SEED", "0"))


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _number(text: str, rational: bool):
    if rational:
        return Fraction(text)
    return float(text)


def _parse_pairs(text: str) -> list[tuple[float, float]]:
    pairs = []
    for part in text.split(","):
        s, t = part.split(":")
        pairs.append((float(s), float(t)))
    return pairs


def _parse_points(text: str, rational: bool) -> list[tuple]:
    pts = []
    for part in text.split(";"):
        p, th = part.split(":")
        pts.append((_number(p, rational), _number(th, rational)))
    return pts


def _load_config(path: str) -> dict:
    values = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _add_model_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--preset", choices=lim.PRESET_NAMES, default=None,
                    help="named replacement matrix (pure requires --K)")
    sp.add_argument("--K", type=int, default=None, help="balance constant for --preset pure")
    sp.add_argument("--a", type=int, default=None)
    sp.add_argument("--b", type=int, default=None)
    sp.add_argument("--c", type=int, default=None)
    sp.add_argument("--d", type=int, default=None)
    sp.add_argument("--p", default=None, help="color-preference probability in [0,1]")
    sp.add_argument("--theta", default=None, help="history-aware player probability in [0,1]")
    sp.add_argument("--R0", type=int, default=None, help="initial red count (default 1)")
    sp.add_argument("--B0", type=int, default=None, help="initial blue count (default 1)")
    sp.add_argument("--rational", action="store_true",
                    help="parse --p/--theta as exact fractions (e.g. 7/8)")


def _add_common_args(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--seed", type=int, default=None,
                    help="master seed (default: $LAPSE_URN_SEED or 0)")
    sp.add_argument("--out", default=None, help="output path")
    sp.add_argument("--format", choices=("json", "csv"), default=None)
    sp.add_argument("--config", default=None, help="key=value defaults file; flags win")
    sp.add_argument("--plot", action="store_true", help="render a PNG next to the output")


def _apply_config(args: argparse.Namespace, parser_defaults: dict) -> None:
    """Fill unset values from --config, then from built-in defaults."""
    cfg = _load_config(args.config) if args.config else {}
    for key, raw in cfg.items():
        if getattr(args, key, None) is None and hasattr(args, key):
            args.__dict__[key] = raw
    for key, default in parser_defaults.items():
        if getattr(args, key, None) is None:
            args.__dict__[key] = default


def _model_from_args(args: argparse.Namespace) -> ModelParams:
    explicit = [args.a, args.b, args.c, args.d]
    if args.preset is not None and any(v is not None for v in explicit):
        raise ValidationError(["give either --preset or an explicit matrix, not both"])
    if args.preset is not None:
        matrix = lim.preset(args.preset, K=args.K)
    elif all(v is not None for v in explicit):
        from .model import ReplacementMatrix
        matrix = ReplacementMatrix(args.a, args.b, args.c, args.d)
    else:
        raise ValidationError(["a model needs --preset or all of --a --b --c --d"])
    if args.p is None or args.theta is None:
        raise ValidationError(["--p and --theta are required"])
    rational = bool(args.rational)
    params = ModelParams(
        matrix=matrix,
        p=_number(str(args.p), rational),
        theta=_number(str(args.theta), rational),
        R0=int(args.R0 if args.R0 is not None else 1),
        B0=int(args.B0 if args.B0 is not None else 1),
    )
    res = validate_model(params)
    if not res.ok:
        raise ValidationError(res.violations)
    return params


def cmd_simulate(args) -> int:
    _apply_config(args, {"n": 1000, "seed": _env_seed(), "out": "trajectory.csv"})
    params = _model_from_args(args)
    traj: Trajectory = simulate(params, int(args.n), int(args.seed))
    out = Path(args.out)
    traj.to_csv(out)
    print(f"wrote {out}")
    if args.plot:
        from .plots import plot_trajectory
        png = out.with_suffix(".png")
        plot_trajectory([(s.R, s.B) for s in traj.states], png,
                        title=f"n={traj.n} seed={args.seed}")
        print(f"wrote {png}")
    return 0


def cmd_exact(args) -> int:
    _apply_config(args, {"n": 100, "seed": _env_seed(), "out": None,
                         "format": "csv"})
    params = _model_from_args(args)
    n = int(args.n)
    dist = oracle.exact_distribution(params, n, rational=bool(args.rational))
    out = Path(args.out or f"exact.{args.format}")
    if args.format == "json":
        _write_json(out, dist.to_json_dict())
    else:
        dist.to_csv(out)
    print(f"wrote {out}")
    if args.moments:
        mean, cov = oracle.exact_moments(params, n)
        mout = out.with_name(out.stem + "_moments.json")
        _write_json(mout, {"n": n, "mean": mean.tolist(), "cov": cov.tolist()})
        print(f"wrote {mout}")
    if args.plot:
        from .plots import plot_exact_distribution
        png = out.with_suffix(".png")
        plot_exact_distribution(list(dist.support), [float(p) for p in dist.probs],
                                png, title=f"exact law of R at n={n}")
        print(f"wrote {png}")
    return 0


def cmd_limits(args) -> int:
    _apply_config(args, {"out": "limits.json"})
    params = _model_from_args(args)
    report = lim.limit_report(params)
    out = Path(args.out)
    _write_json(out, report.to_json_dict())
    print(f"wrote {out}")
    if args.spectral:
        try:
            sd = eigen(params)
            sout = out.with_name(out.stem + "_spectral.json")
            _write_json(sout, sd.to_json_dict())
            print(f"wrote {sout}")
        except RegimeError as exc:
            print(f"spectral data unavailable: {exc}", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    _apply_config(args, {"n": 1000, "replicates": 1000, "seed": _env_seed(),
                         "workers": 1, "out": f"verify_{args.check}.json"})
    if args.family is not None:
        args.preset = args.family
    if args.check == "calibrate":
        # the calibration points carry p and theta; the model flags only
        # pick the matrix
        args.p = args.p if args.p is not None else "0"
        args.theta = args.theta if args.theta is not None else "0"
    params = _model_from_args(args)
    n, reps = int(args.n), int(args.replicates)
    seed, workers = int(args.seed), int(args.workers)
    out = Path(args.out)

    if args.check == "calibrate":
        pts = (_parse_points(args.points, bool(args.rational)) if args.points
               else list(DEFAULT_CALIBRATION_POINTS))
        family = [ModelParams(matrix=params.matrix, p=p, theta=th,
                              R0=params.R0, B0=params.B0) for p, th in pts]
        cal = mc.calibrate_kappa(family, n=n, replicates=reps, seed=seed,
                                 workers=workers)
        _write_json(out, cal.to_json_dict())
        print(f"wrote {out}")
        print(f"kappa family estimate {cal.family_kappa:.4f} "
              f"(hypothesis K = {cal.kappa_hypothesis:g}, "
              f"{cal.hypothesis_contained}/{len(cal.points)} intervals contain K)")
        return 0 if not cal.hypothesis_rejected else 4

    report = lim.limit_report(params)
    checkpoints = ([int(x) for x in str(args.checkpoints).split(",")]
                   if args.checkpoints else None)
    pairs = _parse_pairs(args.st_pairs) if args.st_pairs else None
    if args.check == "fclt" and not pairs:
        pairs = [(0.5, 1.0)]
    stats = mc.run_ensemble(params, n=n, replicates=reps, seed=seed,
                            checkpoints=checkpoints, st_pairs=pairs,
                            workers=workers,
                            paper_centering=bool(args.paper_centering),
                            collect_lapses=(args.check == "lapses"),
                            collect_samples=bool(args.dump_samples) or bool(args.ks))
    rel_tol = float(args.rel_tol) if args.rel_tol else None
    if args.check == "lln":
        ver = mc.verify_lln(stats, report, se_multiple=float(args.se_multiple))
    elif args.check == "clt":
        ver = mc.verify_clt(stats, report,
                            kappa=float(args.kappa) if args.kappa else None,
                            rel_tol=rel_tol, ks=bool(args.ks))
    elif args.check == "fclt":
        ver = mc.verify_fclt(stats, report,
                             kappa=float(args.kappa) if args.kappa else None,
                             rel_tol=rel_tol if rel_tol is not None else 0.10)
    else:
        lap = mc.lapse_statistics(stats, p_threshold=float(args.p_threshold))
        ver = mc.VerificationReport(kind="lapses", passed=lap.passed,
                                    details=lap.to_json_dict())
    payload = {"limit_report": report.to_json_dict(),
               "ensemble": stats.to_json_dict(),
               "verification": ver.to_json_dict()}
    _write_json(out, payload)
    print(f"wrote {out}")
    if args.dump_samples:
        sout = out.with_name(out.stem + "_samples.csv")
        stats.samples_csv(sout)
        print(f"wrote {sout}")
    if args.plot and stats.samples:
        from .plots import plot_fluctuation_histogram
        png = out.with_suffix(".png")
        m = stats.final_checkpoint.m
        target = (report.sigma_calibrated[0][0]
                  if report.sigma_calibrated is not None
                  else stats.final_checkpoint.fluct_scaled_var)
        plot_fluctuation_histogram(stats.samples[m], target, png,
                                   title=f"{args.check} fluctuations at n={m}")
        print(f"wrote {png}")
    print(f"{args.check}: {'PASS' if ver.passed else 'FAIL'}")
    return ver.exit_code


def cmd_phase(args) -> int:
    _apply_config(args, {"grid": 101, "out": "phase.csv"})
    params = _model_from_args(args)
    matrix = params.matrix
    g = int(args.grid)
    vals = np.linspace(0.0, 1.0, g)
    rows = []
    for th in vals:
        for p in vals:
            point = ModelParams(matrix=matrix, p=float(p), theta=float(th),
                                R0=params.R0, B0=params.B0)
            reg = regime(point)
            rows.append({"p": float(p), "theta": float(th),
                         "regime": reg.tag.value, "lambda_ratio": reg.lambda_ratio})
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("p,theta,regime,lambda_ratio\n")
        for row in rows:
            fh.write(f"{row['p']!r},{row['theta']!r},{row['regime']},{row['lambda_ratio']!r}\n")
    print(f"wrote {out}")

    curve = []
    for th in vals:
        if th == 0:
            continue
        pc = critical_p(matrix, float(th))
        if pc is not None:
            curve.append({"theta": float(th), "p_c": float(pc)})
    curve_path = out.with_name(out.stem + "_critical_curve.csv")
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("theta,p_c\n")
        for row in curve:
            fh.write(f"{row['theta']!r},{row['p_c']!r}\n")
    print(f"wrote {curve_path} ({len(curve)} points)")
    if args.plot:
        from .plots import plot_phase
        png = out.with_suffix(".png")
        plot_phase(rows, curve, png,
                   title=f"a={matrix.a} b={matrix.b} c={matrix.c} d={matrix.d}")
        print(f"wrote {png}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="lapse-urn",
        description="Simulation and verification toolkit for the two-player urn "
                    "with memory lapses.")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="simulate one trajectory to CSV")
    _add_model_args(sp)
    _add_common_args(sp)
    sp.add_argument("--n", type=int, default=None, help="number of steps (default 1000)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("exact", help="exact finite-n law of the red count")
    _add_model_args(sp)
    _add_common_args(sp)
    sp.add_argument("--n", type=int, default=None, help="number of steps (default 100)")
    sp.add_argument("--moments", action="store_true", help="also write exact moments JSON")
    sp.set_defaults(func=cmd_exact)

    sp = sub.add_parser("limits", help="closed-form limit report as JSON")
    _add_model_args(sp)
    _add_common_args(sp)
    sp.add_argument("--spectral", action="store_true",
                    help="also write the spectral data JSON")
    sp.set_defaults(func=cmd_limits)

    sp = sub.add_parser("verify", help="Monte Carlo verification checks")
    sp.add_argument("check", choices=VERIFY_CHECKS)
    _add_model_args(sp)
    _add_common_args(sp)
    sp.add_argument("--family", choices=lim.PRESET_NAMES, default=None,
                    help="preset family for calibrate (alias of --preset)")
    sp.add_argument("--n", type=int, default=None)
    sp.add_argument("--replicates", type=int, default=None)
    sp.add_argument("--workers", type=int, default=None,
                    help="thread count; never affects results")
    sp.add_argument("--checkpoints", default=None, help="comma-separated steps")
    sp.add_argument("--st-pairs", dest="st_pairs", default=None,
                    help="time pairs s:t, comma separated (fclt)")
    sp.add_argument("--kappa", default=None,
                    help="override the covariance scale (default: hypothesis K)")
    sp.add_argument("--rel-tol", dest="rel_tol", default=None,
                    help="override the relative variance/kernel tolerance")
    sp.add_argument("--se-multiple", dest="se_multiple", default="4.0",
                    help="standard-error multiple for the lln check (default 4)")
    sp.add_argument("--p-threshold", dest="p_threshold", default="0.01",
                    help="chi-square p-value threshold for lapses (default 0.01)")
    sp.add_argument("--ks", action="store_true",
                    help="also run a Kolmogorov-Smirnov normality test (clt)")
    sp.add_argument("--paper-centering", dest="paper_centering", action="store_true",
                    help="center fluctuations at n*rho instead of T_n*rho")
    sp.add_argument("--points", default=None,
                    help="calibration points p:theta;p:theta;... (calibrate)")
    sp.add_argument("--dump-samples", dest="dump_samples", action="store_true",
                    help="write scaled fluctuation samples CSV")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("phase", help="regime grid and critical curve CSV")
    _add_model_args(sp)
    _add_common_args(sp)
    sp.add_argument("--grid", type=int, default=None, help="grid points per axis (default 101)")
    sp.set_defaults(func=cmd_phase)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except RegimeError as exc:
        print(f"regime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
