"""Flat ``section.key = value`` experiment configuration.

Every key has a declared type and default; unknown keys are rejected.  Floats
are written with ``repr`` so that ``parse(dump(cfg)) == cfg`` holds exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from . import models as mdl
from .errors import ConfigError

# (type, default); list types are comma separated
SCHEMA: dict[str, tuple[str, object]] = {
    "model.family": ("str", "damped_wave"),
    "model.alpha": ("float", 0.4),
    "model.rho": ("float", 1.5),
    "model.gamma": ("float", 0.1),
    "model.sigma": ("float", 0.15),
    "model.theta": ("float", 0.9),
    "model.xi": ("float", 0.0),
    "model.m": ("int", 1),
    "model.n_max": ("int", 64),
    "model.law": ("str", "lattice"),
    "model.c": ("float", 1.0),
    "model.delta": ("optfloat", None),
    "model.eps_res": ("float", 1e-9),
    "model.noise_scale": ("float", 1.0),
    "drift.kind": ("str", "mode_coefficients"),
    "drift.theta": ("float", 0.9),
    "drift.amplitude": ("float", 1.0),
    "drift.decay": ("float", 1.0),
    "drift.profile": ("str", "hoelder"),
    "drift.component": ("int", -1),
    "run.T": ("float", 0.5),
    "run.steps": ("int", 50),
    "run.trajectories": ("int", 2000),
    "run.seed": ("int", 12345),
    "run.noise": ("str", "ou"),
    "run.workers": ("int", 1),
    "run.x0_scale": ("float", 0.5),
    "hypcheck.eta_grid": ("floats", [0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9]),
    "hypcheck.t": ("float", 1.0),
    "hypcheck.theta_prime": ("optfloat", None),     # auto: theta / 2
    "hypcheck.levels": ("int", 16),
    "control.t_grid": ("floats", [2.0 ** -k for k in range(2, 8)]),
    "control.variants": ("strs", ["state", "G_a"]),
    "control.modes": ("int", 48),
    "control.n": ("int", 16),
    "control.steps": ("int", 64),
    "control.tolerance": ("float", 0.15),
    "convergence.n_list": ("ints", [8, 16, 32, 64]),
    "convergence.n_ref": ("int", 256),
    "convergence.max_ratio": ("float", 0.7),
    "lipschitz.gaps": ("floats", [0.01, 0.1, 1.0]),
    "lipschitz.n_list": ("ints", [32, 64, 128]),
    "lipschitz.factor": ("float", 3.0),
    "kolmogorov.T_list": ("floats", [0.2, 0.1, 0.05, 0.025]),
    "kolmogorov.points": ("int", 41),
    "kolmogorov.steps": ("int", 20),
    "kolmogorov.half_width": ("float", 3.0),
    "kolmogorov.tol": ("float", 1e-8),
    "kolmogorov.max_residual": ("float", 1e-6),
    "counterexample.n_tau": ("int", 512),
    "counterexample.n_xi": ("int", 512),
    "counterexample.tol": ("float", 1e-10),
    "output.dir": ("str", "out"),
}


def _parse_value(key: str, kind: str, text: str):
    text = text.strip()
    try:
        if kind == "str":
            if not text:
                raise ValueError("empty string")
            return text
        if kind == "int":
            return int(text)
        if kind == "float":
            v = float(text)
            if not math.isfinite(v):
                raise ValueError("non-finite")
            return v
        if kind == "optfloat":
            return None if text.lower() in ("", "none", "auto") else float(text)
        items = [s.strip() for s in text.split(",") if s.strip()]
        if not items:
            raise ValueError("empty list")
        if kind == "floats":
            return [float(s) for s in items]
        if kind == "ints":
            return [int(s) for s in items]
        if kind == "strs":
            return items
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind} ({exc})") from None
    raise ConfigError(f"{key}: unknown type {kind}")


def _format_value(kind: str, v) -> str:
    if kind == "optfloat":
        return "auto" if v is None else repr(float(v))
    if kind == "float":
        return repr(float(v))
    if kind in ("floats",):
        return ", ".join(repr(float(x)) for x in v)
    if kind in ("ints", "strs"):
        return ", ".join(str(x) for x in v)
    return str(v)


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=lambda: {k: _copy(d) for k, (_, d) in SCHEMA.items()})

    def __getitem__(self, key: str):
        return self.values[key]

    def section(self, name: str) -> dict:
        p = name + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def set(self, key: str, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r}")
        self.values[key] = value

    # -- derived objects -------------------------------------------------------

    def model(self) -> mdl.SpectralModel:
        s = self.section("model")
        try:
            return mdl.SpectralModel(**s)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"model section invalid: {exc}") from None
        except mdl.UnsupportedFamily as exc:
            raise ConfigError(str(exc)) from None

    def drift(self) -> mdl.DriftSpec:
        s = self.section("drift")
        try:
            return mdl.DriftSpec(**s)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"drift section invalid: {exc}") from None


def _copy(v):
    return list(v) if isinstance(v, list) else v


def parse(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    seen = set()
    for no, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'section.key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {no}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {no}: duplicate key {key!r}")
        seen.add(key)
        cfg.values[key] = _parse_value(key, SCHEMA[key][0], val)
    return cfg


def load(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror or exc}") from None
    return parse(text)


def dump(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format_value(SCHEMA[k][0], cfg.values[k])}\n" for k in SCHEMA)
