"""Command-line driver: `rmt-dynamics <subcommand> [--config FILE] [overrides]`."""

from __future__ import annotations

import argparse
import csv
import json
import math
from pathlib import Path
import sys
import warnings

import numpy as np

from . import contour, data, sim, theory
from .config import (
    SCHEMA, ExperimentConfig, apply_values, convert_value, errors_of, load_config, parse_floats, validate,
)
from .errors import ConfigError, ContourError, DomainError, QuadratureError
from .mp import ModelParams, mp_density, spike_location

SUBCOMMANDS = {
    "theory": "fig1-curves",
    "simulate": "fig1-curves",
    "spectrum": "fig2-spectrum",
    "sweep-sigma": "fig3-sigma-sweep",
    "stopping": "stopping",
    "min-n": "min-n",
    "mnist-prep": "mnist",
    "check": "check",
}

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _json_ready(obj):
    if isinstance(obj, dict):
        return {str(k): _json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_ready(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(f"{v:.9g}") if math.isfinite(v) else str(v)
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_json_ready(payload), indent=2, sort_keys=True) + "\n")


# --- experiment runners -----------------------------------------------------


def _spectrum_summary(params):
    spec = spike_location(params)
    return {
        "lambda_minus": spec.lambda_minus,
        "lambda_plus": spec.lambda_plus,
        "lambda_s": spec.lambda_s,
        "has_detached_spike": spec.has_detached_spike,
    }


def _ls_summary(params):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", theory.SingularityWarning)
        ratio, err = theory.least_squares_limit(params)
    return {"ratio": ratio, "error": err, "singular": bool(caught)}


def _contour_residuals(params, times, kind):
    worst = 0.0
    picks = np.unique(times[np.linspace(0, times.size - 1, min(times.size, 5)).astype(int)])
    for t in picks:
        c = contour.contour_functionals(params, t, contour.default_contour(params, t, kind=kind))
        r = theory.functionals(params, [t])[:, 0]
        worst = max(worst, float(np.max(np.abs(c.as_array() - r))))
    return {"max_abs_residual": worst, "times": picks.tolist()}


def _base_summary(cfg, params):
    t_opt, err = theory.optimal_stopping(params, cfg.horizon())
    summary = {
        "kind": cfg.kind,
        "params": {"c": params.c, "mu_norm_sq": params.mu_norm_sq, "sigma_sq": params.sigma_sq,
                   "alpha": params.alpha, "c1": params.c1, "c2": params.c2},
        "spectrum": _spectrum_summary(params),
        "t_opt": t_opt,
        "gen_error_at_t_opt": err,
        "optimal_bound": theory.optimal_bound(params),
        "least_squares_limit": _ls_summary(params),
    }
    if cfg.contour_check:
        summary["contour_check"] = _contour_residuals(params, cfg.time_grid(), cfg.contour_kind)
    return summary


def _curves(cfg, params, ens):
    times = cfg.time_grid()
    curve = theory.error_curve(params, times)
    rows = []
    for i, t in enumerate(times):
        sim_cols = [None] * 4 if ens is None else [ens.gen_mean[i], ens.gen_std[i], ens.train_mean[i], ens.train_std[i]]
        rows.append([t, curve.gen_error[i], curve.train_error[i], *sim_cols])
    header = ["t", "theory_gen", "theory_train", "sim_gen_mean", "sim_gen_std", "sim_train_mean", "sim_train_std"]
    write_csv(Path(cfg.out) / "curves.csv", header, rows)
    return curve


def run_curves(cfg: ExperimentConfig) -> dict:
    params = cfg.model_params()
    ens = None
    if cfg.simulate:
        mu = sim.spike_mean(cfg.p, params.mu_norm_sq)
        ens = sim.simulate_ensemble(cfg.p, cfg.n1, cfg.n2, mu, params.sigma_sq, params.alpha, cfg.time_grid(),
                                    cfg.seed_list(), antithetic=cfg.antithetic, workers=cfg.workers)
    curve = _curves(cfg, params, ens)
    summary = _base_summary(cfg, params)
    summary["theory_min_gen_error"] = float(curve.gen_error.min())
    summary["theory_argmin_t"] = float(curve.times[curve.gen_error.argmin()])
    if ens is not None:
        summary["runs"] = len(ens.seeds)
        summary["max_abs_sim_minus_theory"] = float(np.max(np.abs(ens.gen_mean - curve.gen_error)))
    if cfg.kind == "fig4-approx":
        tay = theory.taylor_curve(params, cfg.time_grid())
        write_csv(Path(cfg.out) / "taylor.csv", ["t", "E_tilde", "V_tilde", "approx_gen"],
                  zip(tay.times, tay.E_tilde, tay.V_tilde, tay.approx_gen_error))
        i = int(np.argmin(tay.approx_gen_error))
        summary["taylor_min"] = {"t": tay.times[i], "gen_error": tay.approx_gen_error[i]}
    return summary


def run_spectrum(cfg: ExperimentConfig) -> dict:
    params = cfg.model_params()
    ds = sim.sample_dataset(cfg.p, cfg.n1, cfg.n2, sim.spike_mean(cfg.p, params.mu_norm_sq), cfg.spectrum_seed)
    spec = sim.empirical_spectrum(ds, bins=cfg.bins)
    centers = 0.5 * (spec.edges[:-1] + spec.edges[1:])
    rows = zip(spec.edges[:-1], spec.edges[1:], spec.mass, mp_density(centers, params.c))
    write_csv(Path(cfg.out) / "spectrum.csv", ["bin_left", "bin_right", "empirical_mass", "mp_density_at_center"], rows)
    summary = {"kind": cfg.kind, "spectrum": _spectrum_summary(params), "top_eigenvalue": spec.top_eigenvalue,
               "p": cfg.p, "n": cfg.n1 + cfg.n2, "seed": cfg.spectrum_seed}
    return summary


def run_sweep(cfg: ExperimentConfig) -> dict:
    params = cfg.model_params()
    sigmas = np.logspace(np.log10(cfg.sigma_min), np.log10(cfg.sigma_max), cfg.sigma_points)
    rows = []
    for s2 in sigmas:
        t_opt, err = theory.optimal_stopping(params.replace(sigma_sq=float(s2)), cfg.horizon())
        rows.append([s2, t_opt, err])
    write_csv(Path(cfg.out) / "sweep.csv", ["sigma_sq", "t_opt", "optimal_error"], rows)
    return {"kind": cfg.kind, "optimal_bound": theory.optimal_bound(params),
            "sweep": [{"sigma_sq": r[0], "t_opt": r[1], "optimal_error": r[2]} for r in rows]}


def run_stopping(cfg: ExperimentConfig) -> dict:
    return _base_summary(cfg, cfg.model_params())


def run_min_n(cfg: ExperimentConfig) -> dict:
    m2 = float(cfg.model.get("mu_norm_sq", 4.0))
    c_max = theory.minimum_sample_ratio(m2, cfg.target)
    summary = {"kind": cfg.kind, "mu_norm_sq": m2, "target_error": cfg.target, "max_ratio_c": c_max}
    if cfg.p:
        summary["p"] = cfg.p
        summary["min_n"] = math.ceil(cfg.p / c_max) if c_max > 0 else None
    return summary


def run_check(cfg: ExperimentConfig) -> dict:
    base = cfg.model_params()
    rows, worst = [], 0.0
    for c in parse_floats(cfg.check_c):
        for m2 in parse_floats(cfg.check_mu):
            params = base.replace(c=c, mu_norm_sq=m2, c1=0.5, c2=0.5)
            for t in parse_floats(cfg.check_t):
                path = contour.default_contour(params, t, kind=cfg.contour_kind)
                cres = contour.contour_functionals(params, t, path)
                real = theory.functionals(params, [t])[:, 0]
                diff = np.abs(cres.as_array() - real)
                worst = max(worst, float(diff.max()))
                rows.append([c, m2, t, *real, *diff, float(cres.imag.max())])
    header = ["c", "mu_norm_sq", "t", "E", "V", "E_star", "V_star",
              "dE", "dV", "dE_star", "dV_star", "max_imag"]
    write_csv(Path(cfg.out) / "check.csv", header, rows)
    summary = {"kind": cfg.kind, "max_abs_residual": worst, "tolerance": cfg.contour_tol, "cases": len(rows)}
    if worst > cfg.contour_tol:
        raise ContourError(f"contour and real-integral engines differ by {worst:.3e} > {cfg.contour_tol:g}")
    return summary


def _load_corpus(cfg: ExperimentConfig):
    m = cfg.mnist
    classes = tuple(int(x) for x in m.get("classes", "1,7").split(","))
    if "images" in m:
        return data.load_idx(m["images"], m["labels"], classes)
    if "csv" in m:
        return data.load_csv(m["csv"], classes)
    return data.synthetic_corpus(int(m.get("synthetic_p", 100)), int(m.get("synthetic_per_class", 4000)),
                                 float(m.get("synthetic_mu_norm_sq", 4.0)), seed=cfg.spectrum_seed,
                                 classes=classes)


def run_mnist(cfg: ExperimentConfig) -> dict:
    m = cfg.mnist
    raw = _load_corpus(cfg)
    if raw.empty:
        raise DomainError("corpus is empty after class filtering")
    wc = data.whiten_and_center(raw, eig_floor=m.get("eig_floor", 1e-6),
                                mu_before_whitening=m.get("mu_before_whitening", False))
    seeds = cfg.seed_list()
    wc = data.add_noise(wc, m.get("snr_db", math.inf), seeds[0] if seeds else 0)
    p = wc.p
    n1 = cfg.n1 or p // 2
    n2 = cfg.n2 or p - p // 2
    mu2 = float(wc.mu_hat @ wc.mu_hat)
    model = {k: v for k, v in cfg.model.items() if k in ("sigma_sq", "alpha")}
    params = ModelParams.from_finite(p, n1, n2, mu2, **model)
    ens = None
    if cfg.simulate:
        ens = sim.ensemble(lambda s: data.draw_dataset(wc, n1, n2, s), params.sigma_sq, params.alpha,
                           cfg.time_grid(), seeds, antithetic=cfg.antithetic, workers=cfg.workers)
    curve = _curves(cfg, params, ens)
    summary = _base_summary(cfg, params)
    summary.update({
        "p": p, "n1": n1, "n2": n2, "mu_hat_norm_sq": mu2, "noise_db": wc.noise_db,
        "class_counts": {str(k): v["n"] for k, v in wc.class_stats.items()},
        "whitening_deviation": {str(k): v["whitening_deviation"] for k, v in wc.class_stats.items()},
        "floored_eigenvalues": {str(k): v["floored"] for k, v in wc.class_stats.items()},
        "theory_min_gen_error": float(curve.gen_error.min()),
    })
    if ens is not None:
        summary["sim_finite"] = bool(np.all(np.isfinite(ens.gen_mean)) and np.all(np.isfinite(ens.train_mean)))
        summary["max_abs_sim_minus_theory"] = float(np.max(np.abs(ens.gen_mean - curve.gen_error)))
    return summary


RUNNERS = {
    "fig1-curves": run_curves,
    "fig4-approx": run_curves,
    "fig5-c1": run_curves,
    "fig2-spectrum": run_spectrum,
    "fig3-sigma-sweep": run_sweep,
    "stopping": run_stopping,
    "min-n": run_min_n,
    "check": run_check,
    "mnist": run_mnist,
}


def run(cfg: ExperimentConfig) -> dict:
    """Execute a validated config, writing artifacts under cfg.out and summary.json."""
    problems = errors_of(validate(cfg))
    if problems:
        raise ConfigError("; ".join(str(d) for d in problems))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = RUNNERS[cfg.kind](cfg)
    write_json(out / "summary.json", summary)
    return summary


# --- argument handling --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmt-dynamics", description="Gradient-flow classification experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="INI experiment file")
        sp.add_argument("--kind", help="override [experiment] kind")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="first seed")
        sp.add_argument("--runs", type=int, help="number of seeds")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config field; repeatable")
        sp.add_argument("--validate-only", action="store_true", help="print diagnostics and exit")
        if name == "min-n":
            sp.add_argument("--mu-norm-sq", type=float)
            sp.add_argument("--target", type=float)
            sp.add_argument("--p", type=int)
        if name == "mnist-prep":
            sp.add_argument("--images")
            sp.add_argument("--labels")
            sp.add_argument("--csv")
            sp.add_argument("--synthetic", action="store_true")
            sp.add_argument("--classes")
            sp.add_argument("--snr-db", type=float)
            sp.add_argument("--eig-floor", type=float)
            sp.add_argument("--mu-before-whitening", action="store_true")
    return parser


def _overrides(args) -> dict:
    values = {}
    for item in args.set:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.rsplit(".", 1)
        kind = SCHEMA.get(section, {}).get(key)
        if kind is None:
            raise ConfigError(f"--set: unknown field {lhs!r}")
        try:
            values[(section, key)] = convert_value(kind, raw)
        except ValueError as exc:
            raise ConfigError(f"--set {lhs}: {exc}") from exc
    named = {
        ("model", "mu_norm_sq"): getattr(args, "mu_norm_sq", None),
        ("min-n", "target"): getattr(args, "target", None),
        ("finite", "p"): getattr(args, "p", None),
        ("mnist", "images"): getattr(args, "images", None),
        ("mnist", "labels"): getattr(args, "labels", None),
        ("mnist", "csv"): getattr(args, "csv", None),
        ("mnist", "classes"): getattr(args, "classes", None),
        ("mnist", "snr_db"): getattr(args, "snr_db", None),
        ("mnist", "eig_floor"): getattr(args, "eig_floor", None),
        ("mnist", "synthetic"): getattr(args, "synthetic", None) or None,
        ("mnist", "mu_before_whitening"): getattr(args, "mu_before_whitening", None) or None,
        ("experiment", "out"): args.out,
        ("experiment", "kind"): args.kind,
    }
    values.update({k: v for k, v in named.items() if v is not None})
    return values


def configure(args) -> tuple[ExperimentConfig, list]:
    if args.config:
        cfg, diags = load_config(args.config)
        if "kind" not in {k for (s, k) in cfg.lines if s == "experiment"}:
            cfg.kind = SUBCOMMANDS[args.command]
    else:
        cfg, diags = ExperimentConfig(kind=SUBCOMMANDS[args.command]), []
    apply_values(cfg, _overrides(args))
    if args.command == "theory":
        cfg.simulate = False
    if args.seed is not None or args.runs is not None:
        current = cfg.seed_list() or [0]
        first = args.seed if args.seed is not None else current[0]
        count = args.runs if args.runs is not None else len(current)
        cfg.seeds = ",".join(str(s) for s in range(first, first + count))
    return cfg, diags + validate(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, diags = configure(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for d in diags:
        print(d, file=sys.stderr)
    if errors_of(diags):
        return EXIT_CONFIG
    if args.validate_only:
        return EXIT_OK
    try:
        summary = run(cfg)
    except (QuadratureError, ContourError, DomainError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    print(json.dumps(_json_ready(summary), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
