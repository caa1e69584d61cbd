"""Scenario files: INI text with sections grid, model, initial, time, monitors,
detector and an optional sweep section.

Every key is listed in ``KEYS`` with its default; ``describe_keys`` renders
that table for ``--help``. Parsing rejects unknown or duplicate keys and
reports the offending line.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .model_specs import ModelSpec, spec_from_kv, spec_to_kv
from .simulator import Grid, Profile


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TimeConfig:
    t_end: float = 1.0
    dt_init: float = 1e-4
    dt_max: float = 1e-2
    growth: float = 1.2
    theta: float = 0.5
    cfl: float = 0.9
    limiter: str = "minmod"


@dataclass(frozen=True)
class MonitorConfig:
    every: float = 0.1
    lp: tuple = (2.0,)
    w1s: tuple = (1.5,)
    grad_q: tuple = (2.0,)
    certificate: str = "auto"


@dataclass(frozen=True)
class DetectorConfig:
    u_blow_factor: float = 1e6
    dt_min: float = 1e-12
    max_steps: int = 0


@dataclass(frozen=True)
class SweepConfig:
    mode: str = "all"


@dataclass(frozen=True)
class Scenario:
    grid: Grid
    model: ModelSpec
    u0: Profile = Profile("constant", value=1.0)
    v0: Profile = Profile("constant", value=0.0)
    time: TimeConfig = TimeConfig()
    monitors: MonitorConfig = MonitorConfig()
    detector: DetectorConfig = DetectorConfig()
    sweep: SweepConfig | None = None

    @property
    def n(self) -> int:
        return self.grid.dim

    def with_alpha(self, alpha: float) -> "Scenario":
        return replace(self, model=replace(self.model, alpha=float(alpha)))

    def with_u_mass(self, mass: float) -> "Scenario":
        if self.u0.kind != "gaussian":
            raise ScenarioError("mass replicates need a gaussian u profile")
        return replace(self, u0=replace(self.u0, mass=float(mass)))


_PROFILE_KEYS = {
    "kind": ("str", "constant", "constant | cosine | gaussian | tabulated"),
    "value": ("float", 0.0, "constant level"),
    "base": ("float", 1.0, "cosine: base + amplitude * prod cos(pi x_i / L_i)"),
    "amplitude": ("float", 1.0, "cosine amplitude"),
    "mass": ("float", 1.0, "gaussian: total mass after discrete renormalization"),
    "width": ("float", 0.1, "gaussian standard deviation"),
    "center": ("floats", None, "gaussian centre (default: domain centre)"),
    "background": ("float", 0.0, "gaussian: uniform level included in the mass"),
    "values": ("floats", None, "tabulated: row-major cell values"),
}

KEYS = {
    "grid": {
        "extents": ("floats", None, "side lengths, 1 or 2 values (required)"),
        "cells": ("ints", None, "cells per axis (required)"),
    },
    "model": {
        "kind": ("str", None, "power_law | volume_filling | classical | tabulated (required)"),
        "m": ("float", 1.0, "diffusion growth exponent"),
        "M_upper": ("float", 1.0, "upper diffusion exponent"),
        "K0": ("float", 1.0, "diffusion lower constant"),
        "K1": ("float", 1.0, "diffusion upper constant"),
        "K": ("float", 1.0, "sensitivity constant"),
        "alpha": ("float", 1.0, "sensitivity exponent"),
        "Q.*": ("str", None, "volume-filling / tabulated parameters (form, u_bar, gamma, u, D, S)"),
    },
    "initial": dict(
        {f"u.{k}": v for k, v in _PROFILE_KEYS.items()},
        **{f"v.{k}": v for k, v in _PROFILE_KEYS.items()},
    ),
    "time": {
        "t_end": ("float", TimeConfig.t_end, "final time"),
        "dt_init": ("float", TimeConfig.dt_init, "first trial step"),
        "dt_max": ("float", TimeConfig.dt_max, "largest step"),
        "growth": ("float", TimeConfig.growth, "step growth factor after success"),
        "theta": ("float", TimeConfig.theta, "diffusion theta (0.5 = Crank-Nicolson, 1 = implicit)"),
        "cfl": ("float", TimeConfig.cfl, "fraction of the chemotaxis positivity bound"),
        "limiter": ("str", TimeConfig.limiter, "minmod | none"),
    },
    "monitors": {
        "every": ("float", MonitorConfig.every, "record cadence in model time"),
        "lp": ("floats", MonitorConfig.lp, "exponents p for ||u||_p (inf allowed)"),
        "w1s": ("floats", MonitorConfig.w1s, "exponents s for ||v||_{W^{1,s}}"),
        "grad_q": ("floats", MonitorConfig.grad_q, "q values for ||grad v||_{2q}"),
        "certificate": ("str", MonitorConfig.certificate, "auto | none (energy monitor)"),
    },
    "detector": {
        "u_blow_factor": ("float", DetectorConfig.u_blow_factor, "blow-up if max u > factor * initial max"),
        "dt_min": ("float", DetectorConfig.dt_min, "blow-up if dt falls below this"),
        "max_steps": ("int", DetectorConfig.max_steps, "step budget, 0 = unlimited"),
    },
    "sweep": {
        "mode": ("str", SweepConfig.mode, "all | subcritical-only"),
    },
}

REQUIRED_SECTIONS = ("grid", "model")


def describe_keys() -> str:
    lines = []
    for sec, keys in KEYS.items():
        lines.append(f"[{sec}]")
        for k, (typ, dflt, doc) in keys.items():
            d = "" if dflt is None else f" (default {_fmt(dflt)})"
            lines.append(f"  {k:<16} {typ:<6} {doc}{d}")
    return "\n".join(lines)


def _fmt(val) -> str:
    if isinstance(val, (tuple, list, np.ndarray)):
        return ", ".join(_fmt(x) for x in val)
    if isinstance(val, (float, np.floating)):
        return repr(float(val))
    if isinstance(val, np.integer):
        return str(int(val))
    return str(val)


def _convert(typ, raw, where):
    try:
        if typ == "float":
            return float(raw)
        if typ == "int":
            return int(raw)
        if typ == "floats":
            return tuple(float(x) for x in raw.split(",") if x.strip())
        if typ == "ints":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        return raw.strip()
    except ValueError as exc:
        raise ScenarioError(f"{where}: cannot read {raw!r} as {typ}") from exc


def _key_lines(text):
    """Map (section, key) -> line number for diagnostics."""
    out, sec = {}, None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            sec = m.group(1).strip()
        elif s and not s.startswith(("#", ";")) and "=" in s and sec:
            out.setdefault((sec, s.split("=", 1)[0].strip()), i)
    return out


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(interpolation=None, strict=True,
                                   delimiters=("=",), comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"line {exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from exc
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"line {exc.lineno}: duplicate section [{exc.section}]") from exc
    except configparser.Error as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    lines = _key_lines(text)

    def where(sec, key):
        ln = lines.get((sec, key))
        return f"line {ln}: [{sec}] {key}" if ln else f"[{sec}] {key}"

    for sec in cp.sections():
        if sec not in KEYS:
            raise ScenarioError(f"unknown section [{sec}]")
        for key in cp[sec]:
            known = key in KEYS[sec] or (sec == "model" and key.startswith("Q."))
            if not known:
                raise ScenarioError(f"{where(sec, key)}: unknown key")
    for sec in REQUIRED_SECTIONS:
        if not cp.has_section(sec):
            raise ScenarioError(f"missing required section [{sec}]")

    def get(sec, key):
        typ, dflt, _ = KEYS[sec][key]
        if cp.has_section(sec) and key in cp[sec]:
            return _convert(typ, cp[sec][key], where(sec, key))
        if dflt is None and sec == "grid":
            raise ScenarioError(f"[{sec}] {key} is required")
        return dflt

    try:
        grid = Grid(get("grid", "extents"), get("grid", "cells"))
    except ValueError as exc:
        raise ScenarioError(f"[grid]: {exc}") from exc
    try:
        model = spec_from_kv(dict(cp["model"]))
    except KeyError as exc:
        raise ScenarioError(f"[model]: missing or unknown key {exc}") from exc
    except ValueError as exc:
        raise ScenarioError(f"[model]: {exc}") from exc

    profiles = {}
    for fld in ("u", "v"):
        kw = {k: get("initial", f"{fld}.{k}") for k in _PROFILE_KEYS}
        if kw["values"] is not None:
            kw["values"] = np.asarray(kw["values"], dtype=float)
            if kw["values"].size != int(np.prod(grid.cells)):
                raise ScenarioError(f"[initial] {fld}.values: need {int(np.prod(grid.cells))} values")
        if fld == "v" and not (cp.has_section("initial") and "v.kind" in cp["initial"]):
            kw["kind"] = "constant"
        if fld == "u" and not (cp.has_section("initial") and "u.kind" in cp["initial"]):
            kw["kind"], kw["value"] = "constant", 1.0
        profiles[fld] = Profile(**kw)

    tc = TimeConfig(**{k: get("time", k) for k in KEYS["time"]})
    mc = MonitorConfig(**{k: get("monitors", k) for k in KEYS["monitors"]})
    dc = DetectorConfig(**{k: get("detector", k) for k in KEYS["detector"]})
    sc = SweepConfig(**{k: get("sweep", k) for k in KEYS["sweep"]}) if cp.has_section("sweep") else None
    scen = Scenario(grid, model, profiles["u"], profiles["v"], tc, mc, dc, sc)
    validate(scen)
    return scen


def validate(scen: Scenario) -> None:
    t, m, d = scen.time, scen.monitors, scen.detector
    if not t.t_end > 0:
        raise ScenarioError("[time] t_end must be positive")
    if not 0 < t.dt_init <= t.dt_max:
        raise ScenarioError("[time] need 0 < dt_init <= dt_max")
    if not t.growth >= 1:
        raise ScenarioError("[time] growth must be >= 1")
    if not 0.5 <= t.theta <= 1:
        raise ScenarioError("[time] theta must lie in [0.5, 1]")
    if not 0 < t.cfl <= 1:
        raise ScenarioError("[time] cfl must lie in (0, 1]")
    if t.limiter not in ("minmod", "none"):
        raise ScenarioError("[time] limiter must be minmod or none")
    if not m.every > 0:
        raise ScenarioError("[monitors] every must be positive")
    if any(p < 1 for p in m.lp) or any(s < 1 for s in m.w1s) or any(q < 1 for q in m.grad_q):
        raise ScenarioError("[monitors] exponents must be >= 1")
    if m.certificate not in ("auto", "none"):
        raise ScenarioError("[monitors] certificate must be auto or none")
    if not d.u_blow_factor > 1 or not d.dt_min > 0 or d.max_steps < 0:
        raise ScenarioError("[detector] need u_blow_factor > 1, dt_min > 0, max_steps >= 0")
    for fld, prof in (("u", scen.u0), ("v", scen.v0)):
        if prof.kind not in ("constant", "cosine", "gaussian", "tabulated"):
            raise ScenarioError(f"[initial] {fld}.kind: unknown profile {prof.kind!r}")
        if prof.kind == "gaussian" and not prof.width > 0:
            raise ScenarioError(f"[initial] {fld}.width must be positive")
        if prof.kind == "tabulated" and prof.values is None:
            raise ScenarioError(f"[initial] {fld}.values required for tabulated profiles")
        if prof.center is not None and len(prof.center) != scen.n:
            raise ScenarioError(f"[initial] {fld}.center needs {scen.n} coordinates")
    if scen.sweep is not None:
        if scen.sweep.mode not in ("all", "subcritical-only"):
            raise ScenarioError("[sweep] mode must be all or subcritical-only")
        if scen.sweep.mode == "subcritical-only" and scen.model.alpha >= 2.0 / scen.n:
            raise ScenarioError(
                f"[sweep] subcritical-only: alpha = {scen.model.alpha} >= 2/n = {2.0 / scen.n}")


def render_scenario(scen: Scenario) -> str:
    out = ["[grid]",
           f"extents = {_fmt(scen.grid.extents)}",
           f"cells = {_fmt(scen.grid.cells)}",
           "", "[model]"]
    out += [f"{k} = {v}" for k, v in spec_to_kv(scen.model).items()]
    out += ["", "[initial]"]
    for fld, prof in (("u", scen.u0), ("v", scen.v0)):
        for k in _PROFILE_KEYS:
            val = getattr(prof, k)
            if val is None:
                continue
            if k == "values":
                val = np.asarray(val).ravel().tolist()
            out.append(f"{fld}.{k} = {_fmt(val)}")
    for sec, obj in (("time", scen.time), ("monitors", scen.monitors),
                     ("detector", scen.detector), ("sweep", scen.sweep)):
        if obj is None:
            continue
        out += ["", f"[{sec}]"]
        out += [f"{k} = {_fmt(getattr(obj, k))}" for k in KEYS[sec]]
    return "\n".join(out) + "\n"


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
