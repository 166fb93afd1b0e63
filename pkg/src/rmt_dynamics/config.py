"""INI experiment configuration with line-aware diagnostics.

Example::

    [experiment]
    kind = fig1-curves
    out = runs/fig1

    [model]
    mu_norm_sq = 4
    sigma_sq = 0.1
    alpha = 0.01

    [finite]
    p = 256
    n1 = 256
    n2 = 256

    [grid]
    times = 0:294:6

    [sim]
    seeds = 0-49
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
import math
from pathlib import Path
import re

import numpy as np

from .errors import ConfigError, DomainError
from .mp import ModelParams

KINDS = (
    "fig1-curves", "fig2-spectrum", "fig3-sigma-sweep", "fig4-approx",
    "fig5-c1", "mnist", "stopping", "min-n", "check",
)
SIM_KINDS = ("fig1-curves", "fig4-approx", "fig5-c1", "mnist")

SCHEMA = {
    "experiment": {"kind": str, "out": str, "simulate": bool},
    "model": {"c": float, "mu_norm_sq": float, "sigma_sq": float, "alpha": float, "c1": float},
    "finite": {"p": int, "n1": int, "n2": int},
    "grid": {"times": str, "t_max": float},
    "sim": {"seeds": str, "antithetic": bool, "workers": int},
    "contour": {"check": bool, "kind": str, "tol": float, "c_values": str, "mu_values": str, "t_values": str},
    "spectrum": {"bins": int, "seed": int},
    "sweep": {"sigma_min": float, "sigma_max": float, "points": int},
    "min-n": {"target": float},
    "mnist": {
        "images": str, "labels": str, "csv": str, "classes": str, "snr_db": float,
        "eig_floor": float, "mu_before_whitening": bool, "synthetic": bool,
        "synthetic_p": int, "synthetic_per_class": int, "synthetic_mu_norm_sq": float,
    },
}


@dataclass
class Diagnostic:
    severity: str  # "error" or "warning"
    field: str
    message: str
    line: int | None = None
    source: str = "<config>"

    def __str__(self):
        where = f"{self.source}:{self.line}" if self.line else self.source
        return f"{where}: {self.severity}: [{self.field}] {self.message}"


@dataclass
class ExperimentConfig:
    kind: str = "fig1-curves"
    out: str = "out"
    simulate: bool = True
    model: dict = field(default_factory=lambda: {"mu_norm_sq": 4.0, "sigma_sq": 0.1, "alpha": 0.01})
    p: int | None = None
    n1: int | None = None
    n2: int | None = None
    times: str = "0:294:6"
    t_max: float | None = None
    seeds: str = "0-49"
    antithetic: bool = True
    workers: int = 1
    contour_check: bool = True
    contour_kind: str = "rectangle"
    contour_tol: float = 1e-6
    check_c: str = "0.1,0.5,1,2,4"
    check_mu: str = "0.25,0.5,1,2,4"
    check_t: str = "0,100,1000"
    bins: int = 60
    spectrum_seed: int = 0
    sigma_min: float = 0.01
    sigma_max: float = 1.0
    sigma_points: int = 9
    target: float = 0.05
    mnist: dict = field(default_factory=dict)
    source: str = "<config>"
    lines: dict = field(default_factory=dict)  # (section, key) -> line number

    # --- derived views ---------------------------------------------------

    def time_grid(self) -> np.ndarray:
        return parse_times(self.times)

    def seed_list(self) -> list:
        return parse_seeds(self.seeds)

    def horizon(self) -> float:
        return self.t_max if self.t_max is not None else float(self.time_grid()[-1])

    def model_params(self) -> ModelParams:
        kw = dict(self.model)
        if self.p and self.n1 and self.n2:
            return ModelParams.from_finite(self.p, self.n1, self.n2, kw.pop("mu_norm_sq", 4.0),
                                           **{k: v for k, v in kw.items() if k in ("sigma_sq", "alpha")})
        kw.setdefault("c", 0.5)
        if "c1" in kw:
            kw["c2"] = 1.0 - kw["c1"]
        return ModelParams(**kw)


def parse_times(text: str) -> np.ndarray:
    """`start:stop:step` (stop included) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        parts = [float(x) for x in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError("range form is start:stop:step with step > 0")
        start, stop, step = parts
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(max(count, 0))
    return np.array([float(x) for x in text.split(",") if x.strip()])


def parse_seeds(text: str) -> list:
    """`a-b` (inclusive) or a comma-separated list."""
    text = text.strip()
    if not text:
        return []
    m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", text)
    if m:
        return list(range(int(m.group(1)), int(m.group(2)) + 1))
    return [int(x) for x in text.split(",") if x.strip()]


def parse_floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _line_map(text: str) -> dict:
    lines, section = {}, None
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.strip()
        if not s or s[0] in "#;":
            continue
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
            lines[(section, None)] = no
        elif section and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            lines[(section, key)] = no
    return lines


_BOOL = {"1": True, "yes": True, "true": True, "on": True, "0": False, "no": False, "false": False, "off": False}


def convert_value(kind, raw: str):
    if kind is bool:
        v = _BOOL.get(raw.strip().lower())
        if v is None:
            raise ValueError(f"expected a boolean, got {raw!r}")
        return v
    return kind(raw.strip())


def parse_config(text: str, source: str = "<config>") -> tuple[ExperimentConfig, list]:
    """Parse INI text; returns the config and any parse diagnostics."""
    lines = _line_map(text)
    cfg = ExperimentConfig(source=source, lines=lines)
    diags: list = []
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        return cfg, [Diagnostic("error", "syntax", str(exc).splitlines()[0], line, source)]

    values: dict = {}
    for section in parser.sections():
        if section not in SCHEMA:
            diags.append(Diagnostic("error", section, "unknown section", lines.get((section, None)), source))
            continue
        for key, raw in parser.items(section):
            where = lines.get((section, key))
            kind = SCHEMA[section].get(key)
            if kind is None:
                diags.append(Diagnostic("error", f"{section}.{key}", "unknown key", where, source))
                continue
            try:
                values[(section, key)] = convert_value(kind, raw)
            except ValueError as exc:
                diags.append(Diagnostic("error", f"{section}.{key}", f"bad value: {exc}", where, source))
    apply_values(cfg, values)
    return cfg, diags


def apply_values(cfg: ExperimentConfig, values: dict) -> None:
    """Store parsed (section, key) -> value pairs onto `cfg`."""
    flat = {
        ("experiment", "kind"): "kind", ("experiment", "out"): "out", ("experiment", "simulate"): "simulate",
        ("finite", "p"): "p", ("finite", "n1"): "n1", ("finite", "n2"): "n2",
        ("grid", "times"): "times", ("grid", "t_max"): "t_max",
        ("sim", "seeds"): "seeds", ("sim", "antithetic"): "antithetic", ("sim", "workers"): "workers",
        ("contour", "check"): "contour_check", ("contour", "kind"): "contour_kind", ("contour", "tol"): "contour_tol",
        ("contour", "c_values"): "check_c", ("contour", "mu_values"): "check_mu", ("contour", "t_values"): "check_t",
        ("spectrum", "bins"): "bins", ("spectrum", "seed"): "spectrum_seed",
        ("sweep", "sigma_min"): "sigma_min", ("sweep", "sigma_max"): "sigma_max", ("sweep", "points"): "sigma_points",
        ("min-n", "target"): "target",
    }
    for (section, key), value in values.items():
        if section == "model":
            cfg.model[key] = value
        elif section == "mnist":
            cfg.mnist[key] = value
        else:
            setattr(cfg, flat[(section, key)], value)


def load_config(path) -> tuple[ExperimentConfig, list]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text, source=str(path))


def validate(cfg: ExperimentConfig) -> list:
    """Schema and cross-field checks; returns diagnostics and never touches files."""
    out: list = []

    def diag(severity, section, key, message):
        line = cfg.lines.get((section, key)) or cfg.lines.get((section, None))
        out.append(Diagnostic(severity, f"{section}.{key}", message, line, cfg.source))

    if cfg.kind not in KINDS:
        diag("error", "experiment", "kind", f"unknown kind {cfg.kind!r}; expected one of {', '.join(KINDS)}")

    try:
        times = cfg.time_grid()
    except ValueError as exc:
        diag("error", "grid", "times", str(exc))
        times = None
    if times is not None:
        if times.size == 0:
            diag("error", "grid", "times", "time grid is empty")
        elif np.any(times < 0):
            diag("error", "grid", "times", "time grid has negative entries")
        elif np.any(np.diff(times) <= 0):
            diag("error", "grid", "times", "time grid must be strictly increasing")
    if cfg.t_max is not None and not cfg.t_max > 0:
        diag("error", "grid", "t_max", "t_max must be > 0")

    try:
        seeds = cfg.seed_list()
    except ValueError as exc:
        diag("error", "sim", "seeds", str(exc))
        seeds = None
    needs_sim = cfg.kind in SIM_KINDS and cfg.simulate
    if seeds is not None and not seeds and needs_sim:
        diag("error", "sim", "seeds", "seed list is empty but this experiment simulates")
    if seeds and len(set(seeds)) != len(seeds):
        diag("error", "sim", "seeds", "seed list has duplicates")
    if cfg.workers < 1:
        diag("error", "sim", "workers", "workers must be >= 1")

    finite = [cfg.p, cfg.n1, cfg.n2]
    # min-n only needs p; the image pipeline takes p from the corpus
    partial_ok = (cfg.kind == "min-n" and cfg.n1 is None and cfg.n2 is None) or \
        (cfg.kind == "mnist" and cfg.p is None and (cfg.n1 is None) == (cfg.n2 is None))
    if partial_ok:
        for name, v in (("p", cfg.p), ("n1", cfg.n1), ("n2", cfg.n2)):
            if v is not None and v < 1:
                diag("error", "finite", name, f"{name} must be >= 1")
    elif any(v is not None for v in finite) and not all(v is not None for v in finite):
        diag("error", "finite", "p", "p, n1 and n2 must be given together")
    elif all(v is not None for v in finite):
        if min(finite) < 1:
            diag("error", "finite", "p", "p, n1 and n2 must be >= 1")
        elif "c" in cfg.model and abs(cfg.p / (cfg.n1 + cfg.n2) - cfg.model["c"]) > 1e-9:
            diag("warning", "model", "c",
                 f"declared c = {cfg.model['c']} differs from p/n = {cfg.p / (cfg.n1 + cfg.n2):.9g}; p/n is used")
    elif needs_sim and cfg.kind != "mnist":
        diag("error", "finite", "p", "simulation needs p, n1 and n2")
    if cfg.kind == "fig2-spectrum" and None in finite:
        diag("error", "finite", "p", "spectrum needs p, n1 and n2")

    try:
        cfg.model_params()
    except (DomainError, TypeError) as exc:
        diag("error", "model", "mu_norm_sq", str(exc))

    if cfg.contour_kind not in ("rectangle", "circle"):
        diag("error", "contour", "kind", f"unknown contour kind {cfg.contour_kind!r}")
    for key, attr in (("c_values", "check_c"), ("mu_values", "check_mu"), ("t_values", "check_t")):
        try:
            vals = parse_floats(getattr(cfg, attr))
            if not vals:
                diag("error", "contour", key, "list is empty")
        except ValueError as exc:
            diag("error", "contour", key, str(exc))
    if cfg.bins < 1:
        diag("error", "spectrum", "bins", "bins must be >= 1")
    if not 0 < cfg.sigma_min <= cfg.sigma_max:
        diag("error", "sweep", "sigma_min", "need 0 < sigma_min <= sigma_max")
    if cfg.sigma_points < 1:
        diag("error", "sweep", "points", "points must be >= 1")
    if not 0 < cfg.target < 0.5:
        diag("error", "min-n", "target", "target must lie in (0, 0.5)")

    if cfg.kind == "mnist":
        m = cfg.mnist
        has_idx = "images" in m and "labels" in m
        if not (has_idx or "csv" in m or m.get("synthetic")):
            diag("error", "mnist", "images", "give images + labels, csv, or synthetic = true")
        if ("images" in m) != ("labels" in m):
            diag("error", "mnist", "labels", "images and labels go together")
        if "classes" in m:
            try:
                if len([int(x) for x in m["classes"].split(",")]) != 2:
                    diag("error", "mnist", "classes", "exactly two classes are needed")
            except ValueError:
                diag("error", "mnist", "classes", "classes must be integers, e.g. 1,7")
        if m.get("eig_floor", 1e-6) < 0:
            diag("error", "mnist", "eig_floor", "eig_floor must be >= 0")
    return out


def errors_of(diags) -> list:
    return [d for d in diags if d.severity == "error"]
