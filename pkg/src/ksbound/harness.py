"""Run persistence, post-run reports and alpha/mass sweeps.

A run directory holds:
    scenario.ini        the scenario as rendered after parsing
    monitors.csv        one row per recorded time
    run.txt             termination flag, counters and the certificate used
    u_final.txt         final u (first line: dims, then row-major values)
    v_final.txt         final v
"""
from __future__ import annotations

import configparser
import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .certificate import Certificate, CertificateError, CriticalityError, ProblemParams, find_certificate
from .scenario import Scenario, ScenarioError, parse_scenario, render_scenario
from .simulator import MonitorRecord, RunRecord, SimState, run

TERMINATIONS = ("completed", "blow_up_candidate", "step_limit")


class RecordError(RuntimeError):
    """Missing, unreadable or inconsistent run directory."""


# ------------------------------------------------------------ persistence

def _num(x) -> str:
    return f"{float(x):g}"


def monitor_columns(rec: MonitorRecord) -> list:
    cols = ["t", "mass_u", "mass_v", "linf_u"]
    cols += [f"lp_u[{_num(p)}]" for p in rec.lp_u]
    cols += [f"grad_v_2q[{_num(q)}]" for q in rec.grad_v_2q]
    cols += [f"w1s_v[{_num(s)}]" for s in rec.w1s_v]
    cols.append("energy_y")
    return cols


def _row(rec: MonitorRecord) -> list:
    vals = [rec.t, rec.mass_u, rec.mass_v, rec.linf_u]
    vals += list(rec.lp_u.values()) + list(rec.grad_v_2q.values()) + list(rec.w1s_v.values())
    vals.append(rec.energy_y)
    return ["" if v is None else repr(float(v)) for v in vals]


def _write_field(path, arr):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(" ".join(str(d) for d in arr.shape) + "\n")
        for v in arr.ravel():
            fh.write(repr(float(v)) + "\n")


def _read_field(path):
    with open(path, encoding="utf-8") as fh:
        dims = tuple(int(x) for x in fh.readline().split())
        vals = np.array([float(line) for line in fh if line.strip()])
    if not dims or vals.size != math.prod(dims):
        raise RecordError(f"{path}: header dims {dims} do not match {vals.size} values")
    return vals.reshape(dims)


def _cert_text(cert) -> str:
    if cert is None:
        return "none"
    return ", ".join(f"{k}={getattr(cert, k)!r}" for k in ("p", "q", "s", "theta", "mu"))


def _cert_parse(text):
    if text.strip().startswith("none"):
        return None
    kv = dict(part.split("=") for part in text.replace(" ", "").split(","))
    return Certificate(**{k: float(v) for k, v in kv.items()})


def save_run(rec: RunRecord, run_dir) -> Path:
    d = Path(run_dir)
    d.mkdir(parents=True, exist_ok=True)
    (d / "scenario.ini").write_text(render_scenario(rec.scenario), encoding="utf-8")
    with open(d / "monitors.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(monitor_columns(rec.records[0]))
        for r in rec.records:
            w.writerow(_row(r))
    meta = {
        "termination": rec.termination,
        "reason": rec.reason,
        "wall_time": repr(float(rec.wall_time)),
        "steps": str(rec.steps),
        "rejected": str(rec.rejected),
        "dt_last": repr(float(rec.dt_last)),
        "sup_linf_u": repr(float(rec.sup_linf_u)),
        "initial_max": repr(float(rec.initial_max)),
        "t_final": repr(float(rec.records[-1].t)),
        "certificate": _cert_text(rec.certificate),
    }
    (d / "run.txt").write_text("".join(f"{k} = {v}\n" for k, v in meta.items()), encoding="utf-8")
    if rec.final_state is not None:
        _write_field(d / "u_final.txt", rec.final_state.u)
        _write_field(d / "v_final.txt", rec.final_state.v)
    return d


def _parse_monitor_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise RecordError(f"{path}: no monitor rows")
    header, body = rows[0], rows[1:]
    if header[:4] != ["t", "mass_u", "mass_v", "linf_u"] or header[-1] != "energy_y":
        raise RecordError(f"{path}: unexpected header {header}")
    recs = []
    for i, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise RecordError(f"{path}:{i}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [None if x == "" else float(x) for x in row]
        except ValueError as exc:
            raise RecordError(f"{path}:{i}: non-numeric entry") from exc
        rec = MonitorRecord(t=vals[0], mass_u=vals[1], mass_v=vals[2], linf_u=vals[3],
                            energy_y=vals[-1])
        for name, v in zip(header[4:-1], vals[4:-1]):
            base, arg = name.rstrip("]").split("[")
            getattr(rec, base)[float(arg)] = v
        recs.append(rec)
    return header, recs


def check_integrity(rec: RunRecord) -> None:
    ts = [r.t for r in rec.records]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise RecordError("monitor series is not strictly increasing in t")
    core = [r.mass_u for r in rec.records] + [r.linf_u for r in rec.records]
    if rec.termination == "completed" and not all(math.isfinite(x) for x in core):
        raise RecordError("completed run with non-finite monitors")
    if rec.termination not in TERMINATIONS:
        raise RecordError(f"unknown termination flag {rec.termination!r}")
    t_end = rec.scenario.time.t_end
    if rec.termination == "completed" and abs(ts[-1] - t_end) > 1e-9 * max(1.0, t_end):
        raise RecordError("completed run does not end at t_end")
    if rec.termination == "blow_up_candidate":
        det = rec.scenario.detector
        fired = (rec.sup_linf_u > det.u_blow_factor * rec.initial_max
                 or rec.dt_last < det.dt_min or "dt collapse" in rec.reason)
        if not fired:
            raise RecordError("blow-up flag without a detector condition")
    elif rec.sup_linf_u > rec.scenario.detector.u_blow_factor * rec.initial_max:
        raise RecordError("linf_u above the blow-up threshold but run not flagged")
    if max(r.linf_u for r in rec.records) > rec.sup_linf_u * (1 + 1e-12):
        raise RecordError("recorded linf_u exceeds stored supremum")


def load_run(run_dir) -> RunRecord:
    d = Path(run_dir)
    for name in ("scenario.ini", "monitors.csv", "run.txt"):
        if not (d / name).is_file():
            raise RecordError(f"{d}: missing {name}")
    try:
        scen = parse_scenario((d / "scenario.ini").read_text(encoding="utf-8"))
    except ScenarioError as exc:
        raise RecordError(f"{d}/scenario.ini: {exc}") from exc
    _, recs = _parse_monitor_csv(d / "monitors.csv")
    meta = {}
    for line in (d / "run.txt").read_text(encoding="utf-8").splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    try:
        state = None
        if (d / "u_final.txt").is_file() and (d / "v_final.txt").is_file():
            state = SimState(scen.grid, _read_field(d / "u_final.txt"),
                             _read_field(d / "v_final.txt"), float(meta["t_final"]),
                             int(meta["steps"]), float(meta["dt_last"]))
        rec = RunRecord(scen, recs, meta["termination"], meta["reason"],
                        float(meta["wall_time"]), int(meta["steps"]), int(meta["rejected"]),
                        float(meta["dt_last"]), float(meta["sup_linf_u"]),
                        float(meta["initial_max"]), _cert_parse(meta["certificate"]), state)
    except (KeyError, ValueError, TypeError) as exc:
        raise RecordError(f"{d}/run.txt: corrupt metadata ({exc})") from exc
    check_integrity(rec)
    return rec


# ----------------------------------------------------------------- report

@dataclass
class Report:
    text: str
    files: list


def report(run_dir) -> Report:
    """Max-over-time summary plus one two-column plot file per monitor."""
    d = Path(run_dir)
    rec = load_run(d)
    header, recs = _parse_monitor_csv(d / "monitors.csv")
    data = np.array([[np.nan if x is None else x for x in _row_values(r)] for r in recs])
    t = data[:, 0]
    lines = []
    if rec.termination == "completed":
        lines.append(f"bounded over [0, {_num(rec.scenario.time.t_end)}]")
    elif rec.termination == "blow_up_candidate":
        lines.append(f"blow-up candidate at t={rec.records[-1].t:.6g} ({rec.reason})")
    else:
        lines.append(f"stopped at t={rec.records[-1].t:.6g} ({rec.reason})")
    lines.append(f"sup linf_u (all steps) = {rec.sup_linf_u:.6g}; initial max = {rec.initial_max:.6g}")
    lines.append(f"steps = {rec.steps}, rejected = {rec.rejected}, certificate: {_cert_text(rec.certificate)}")
    files = []
    for j, name in enumerate(header[1:], start=1):
        col = data[:, j]
        if np.all(np.isnan(col)):
            continue
        lines.append(f"sup {name} = {np.nanmax(col):.6g}")
        fname = "plot_" + name.replace("[", "_").replace("]", "").replace(".", "p") + ".dat"
        np.savetxt(d / fname, np.column_stack([t, col]), header=f"t {name}", fmt="%.17g")
        files.append(d / fname)
    text = "\n".join(lines) + "\n"
    (d / "summary.txt").write_text(text, encoding="utf-8")
    return Report(text, files)


def _row_values(r: MonitorRecord):
    return ([r.t, r.mass_u, r.mass_v, r.linf_u] + list(r.lp_u.values())
            + list(r.grad_v_2q.values()) + list(r.w1s_v.values()) + [r.energy_y])


# ------------------------------------------------------------------ sweep

class PlanError(ValueError):
    pass


@dataclass
class SweepPlan:
    base_scenario: Scenario
    alpha_values: list
    n: int
    masses: list = field(default_factory=list)
    output_root: Path = Path("sweep_out")
    workers: int = 1

    def __post_init__(self):
        self.alpha_values = [float(a) for a in self.alpha_values]
        self.masses = [float(m) for m in self.masses]
        self.output_root = Path(self.output_root)
        if not self.alpha_values:
            raise PlanError("alpha_values must be nonempty")
        if any(not a > 0 for a in self.alpha_values):
            raise PlanError("alpha_values must be positive")
        if any(not m > 0 for m in self.masses):
            raise PlanError("masses must be positive")
        if self.n != self.base_scenario.grid.dim:
            raise PlanError(f"n = {self.n} differs from the scenario dimension "
                            f"{self.base_scenario.grid.dim}")
        if self.masses and self.base_scenario.u0.kind != "gaussian":
            raise PlanError("mass replicates need a gaussian u profile")
        sw = self.base_scenario.sweep
        if sw is not None and sw.mode == "subcritical-only":
            bad = [a for a in self.alpha_values if a >= self.critical_alpha]
            if bad:
                raise PlanError(f"subcritical-only sweep has alpha >= 2/n: {bad}")

    @property
    def critical_alpha(self) -> float:
        return 2.0 / self.n


PLAN_KEYS = {
    "scenario": "path to the base scenario (relative to the plan file)",
    "alphas": "comma-separated sensitivity exponents",
    "masses": "comma-separated gaussian masses (default: the scenario's)",
    "n": "dimension; must match the scenario grid (default: grid dimension)",
    "output": "output root directory (relative to the plan file)",
    "workers": "parallel processes (default 1)",
}


def parse_plan(text: str, base_dir=".") -> SweepPlan:
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise PlanError(f"malformed plan: {exc}") from exc
    if cp.sections() != ["plan"]:
        raise PlanError("plan file must contain exactly one [plan] section")
    sec = cp["plan"]
    for key in sec:
        if key not in PLAN_KEYS:
            raise PlanError(f"[plan] {key}: unknown key")
    base_dir = Path(base_dir)
    if "scenario" not in sec or "alphas" not in sec:
        raise PlanError("[plan] needs scenario and alphas")
    scen = parse_scenario((base_dir / sec["scenario"]).read_text(encoding="utf-8"))
    try:
        alphas = [float(x) for x in sec["alphas"].split(",") if x.strip()]
        masses = [float(x) for x in sec.get("masses", "").split(",") if x.strip()]
        n = int(sec.get("n", scen.grid.dim))
        workers = int(sec.get("workers", "1"))
    except ValueError as exc:
        raise PlanError(f"[plan]: {exc}") from exc
    out = base_dir / sec.get("output", "sweep_out")
    return SweepPlan(scen, alphas, n, masses, out, workers)


@dataclass
class SummaryRow:
    alpha: float
    mass: float
    sup_linf_u: float
    termination: str
    certificate: str
    run_dir: str


SUMMARY_COLUMNS = ("alpha", "mass", "sup_linf_u", "termination", "certificate", "run_dir")


def certificate_cell(n: int, m: float, alpha: float) -> tuple:
    """(Certificate or None, table text) for one sweep cell."""
    if alpha >= 2.0 / n:
        return None, "none: supercritical"
    try:
        cert = find_certificate(ProblemParams(n=n, m=m, alpha=alpha))
    except CriticalityError:
        return None, "none: supercritical"
    except CertificateError as exc:
        return None, f"none: {exc}"
    return cert, _cert_text(cert)


def _run_cell(args):
    scen, run_dir = args
    try:
        rec = run(scen)
        save_run(rec, run_dir)
        return rec.sup_linf_u, rec.termination
    except Exception as exc:  # noqa: BLE001 - a failed cell must not stop the sweep
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
        return float("nan"), f"error: {type(exc).__name__}"


def sweep(plan: SweepPlan) -> list:
    """Run every (alpha, mass) cell and write summary.csv under output_root."""
    base = plan.base_scenario
    masses = plan.masses or [base.u0.mass if base.u0.kind == "gaussian" else float("nan")]
    cells = []
    for i, a in enumerate(plan.alpha_values):
        for j, mass in enumerate(masses):
            scen = base.with_alpha(a)
            if plan.masses:
                scen = scen.with_u_mass(mass)
            cells.append((a, mass, scen, plan.output_root / f"alpha{i:02d}_mass{j:02d}"))
    jobs = [(scen, str(d)) for _, _, scen, d in cells]
    if plan.workers > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as ex:
            results = list(ex.map(_run_cell, jobs))
    else:
        results = [_run_cell(j) for j in jobs]
    rows = []
    for (a, mass, scen, d), (sup, term) in zip(cells, results):
        _, ctext = certificate_cell(plan.n, scen.model.m, a)
        rows.append(SummaryRow(a, mass, sup, term, ctext, d.name))
    plan.output_root.mkdir(parents=True, exist_ok=True)
    with open(plan.output_root / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r.alpha)), repr(float(r.mass)), repr(float(r.sup_linf_u)), r.termination,
                        r.certificate, r.run_dir])
    (plan.output_root / "critical_alpha.txt").write_text(f"2/n = {plan.critical_alpha!r}\n",
                                                         encoding="utf-8")
    return rows


def run_to_dir(scen: Scenario, run_dir, progress=None) -> RunRecord:
    rec = run(scen, progress=progress)
    save_run(rec, run_dir)
    return rec


__all__ = [
    "RecordError", "PlanError", "SweepPlan", "SummaryRow", "Report", "save_run", "load_run",
    "check_integrity", "report", "parse_plan", "sweep", "certificate_cell", "run_to_dir",
    "monitor_columns", "PLAN_KEYS", "TERMINATIONS",
]
