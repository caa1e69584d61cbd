"""Conservative finite-volume integrator for the quasilinear Keller-Segel system

    u_t = div(D(u) grad u) - div(S(u) grad v),   v_t = lap v - v + u

on intervals and rectangles with homogeneous Neumann conditions.

One step advances v implicitly (backward Euler), then u with a theta-scheme
for diffusion (face-averaged D frozen at the old state) and an explicit,
upwinded chemotactic flux S(u) grad v built from minmod-limited face values
of u. Boundary faces carry zero flux, so the cell sums of u telescope. The
linear systems are symmetric positive definite and solved by conjugate
gradients started from a guess with the exact discrete mass; every Krylov
direction then has zero sum and the solve cannot leak mass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .model_specs import ModelSpec, eval_D, eval_S, phi_values

CG_RTOL = 1e-12
POSITIVITY_RTOL = 1e-12


class SimulationError(RuntimeError):
    pass


class StepRejected(SimulationError):
    """The proposed dt cannot be accepted; retry with ``suggested_dt``."""

    def __init__(self, msg, suggested_dt):
        super().__init__(msg)
        self.suggested_dt = suggested_dt


class PositivityError(StepRejected):
    pass


class CFLViolation(StepRejected):
    pass


class LinearSolverError(SimulationError):
    pass


@dataclass(frozen=True)
class Grid:
    extents: tuple
    cells: tuple

    def __post_init__(self):
        ext = tuple(float(e) for e in self.extents)
        cel = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "cells", cel)
        if len(ext) not in (1, 2) or len(cel) != len(ext):
            raise ValueError("grid must be 1-d or 2-d with matching extents and cells")
        if any(e <= 0 for e in ext):
            raise ValueError("extents must be positive")
        if any(c < 4 for c in cel):
            raise ValueError("need at least 4 cells per axis")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def h(self) -> tuple:
        return tuple(e / c for e, c in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return math.prod(self.h)

    @property
    def measure(self) -> float:
        return math.prod(self.extents)

    def centers(self):
        """Cell-centre coordinate arrays, one per axis, broadcast to field shape."""
        axes = [(np.arange(c) + 0.5) * h for c, h in zip(self.cells, self.h)]
        return np.meshgrid(*axes, indexing="ij")


@dataclass
class SimState:
    grid: Grid
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0
    step_count: int = 0
    dt_last: float = 0.0

    def copy(self) -> "SimState":
        return SimState(self.grid, self.u.copy(), self.v.copy(), self.t,
                        self.step_count, self.dt_last)


# ----------------------------------------------------------- discrete ops

def _face_diff(f, axis, h):
    return np.diff(f, axis=axis) / h


def _div(flux, axis, h):
    """Divergence of interior-face fluxes; boundary faces carry zero flux."""
    pad = [(0, 0)] * flux.ndim
    pad[axis] = (1, 1)
    return np.diff(np.pad(flux, pad), axis=axis) / h


def _face_mean(f, axis):
    n = f.shape[axis]
    lo = np.take(f, np.arange(n - 1), axis=axis)
    hi = np.take(f, np.arange(1, n), axis=axis)
    return 0.5 * (lo + hi)


def diffusion_apply(x, coef, grid):
    """sum over axes of div(coef_a * grad_a x); coef_a lives on interior faces."""
    out = np.zeros_like(x)
    for a, h in enumerate(grid.h):
        out += _div(coef[a] * _face_diff(x, a, h), a, h)
    return out


def cell_gradient(f, grid):
    """Cell-centred gradient components averaged from face differences."""
    comps = []
    for a, h in enumerate(grid.h):
        d = _face_diff(f, a, h)
        pad = [(0, 0)] * f.ndim
        pad[a] = (1, 1)
        dp = np.pad(d, pad)
        n = f.shape[a]
        comps.append(0.5 * (np.take(dp, np.arange(n), axis=a)
                            + np.take(dp, np.arange(1, n + 1), axis=a)))
    return comps


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def face_values(u, axis, limiter="minmod"):
    """(left-of-face, right-of-face) reconstructions on interior faces."""
    n = u.shape[axis]
    if limiter == "none":
        lo = np.take(u, np.arange(n - 1), axis=axis)
        hi = np.take(u, np.arange(1, n), axis=axis)
        return lo, hi
    d = np.diff(u, axis=axis)
    pad = [(0, 0)] * u.ndim
    pad[axis] = (1, 1)
    dp = np.pad(d, pad)  # zero jumps across the walls (mirror ghosts)
    slope = _minmod(np.take(dp, np.arange(n), axis=axis),
                    np.take(dp, np.arange(1, n + 1), axis=axis))
    east = u + 0.5 * slope
    west = u - 0.5 * slope
    return (np.take(east, np.arange(n - 1), axis=axis),
            np.take(west, np.arange(1, n), axis=axis))


def _s_over_u(spec, x):
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = eval_S(spec, x[pos]) / x[pos]
    return out


def chemotactic_fluxes(u, v, spec, grid, limiter="minmod"):
    """Upwinded S(u) dv/dx_a on interior faces, plus the positivity dt bound."""
    fluxes = []
    dt_bound = np.inf
    for a, h in enumerate(grid.h):
        w = _face_diff(v, a, h)
        lo, hi = face_values(u, a, limiter)
        lo = np.maximum(lo, 0.0)
        hi = np.maximum(hi, 0.0)
        wp, wm = np.maximum(w, 0.0), np.minimum(w, 0.0)
        fluxes.append(eval_S(spec, lo) * wp + eval_S(spec, hi) * wm)
        rate = np.maximum(_s_over_u(spec, lo) * wp, -_s_over_u(spec, hi) * wm) / h
        r = float(rate.max(initial=0.0))
        if r > 0:
            # each cell is the mean of its 2*dim face values
            dt_bound = min(dt_bound, 1.0 / (2.0 * grid.dim * r))
    return fluxes, dt_bound


def chemotaxis_dt_bound(state: SimState, spec: ModelSpec, limiter="minmod") -> float:
    return chemotactic_fluxes(state.u, state.v, spec, state.grid, limiter)[1]


def _solve(apply, b, x0, rtol=CG_RTOL, what="system"):
    shape = b.shape
    n = b.size
    op = LinearOperator((n, n), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=float)
    x, info = cg(op, b.ravel(), x0=x0.ravel(), rtol=rtol, atol=0.0, maxiter=10 * n)
    if info != 0:
        raise LinearSolverError(f"CG did not converge for the {what} (info={info})")
    return x.reshape(shape)


def solve_v(v, u, dt, grid, source=None, rtol=CG_RTOL):
    """Backward Euler for v_t = lap v - v + u (+ source)."""
    ones = [np.ones(tuple(c - (1 if i == a else 0) for i, c in enumerate(grid.cells)))
            for a in range(grid.dim)]
    b = v + dt * u
    if source is not None:
        b = b + dt * source
    # guess with the exact discrete mean: (1+dt) mean(v_new) = mean(b)
    x0 = v + (b.mean() / (1.0 + dt) - v.mean())

    def apply(x):
        return (1.0 + dt) * x - dt * diffusion_apply(x, ones, grid)

    return _solve(apply, b, x0, rtol, "v equation")


def step(state: SimState, spec: ModelSpec, dt: float, *, theta: float = 0.5,
         limiter: str = "minmod", cfl: float = 0.9, source=None,
         rtol: float = CG_RTOL, fallback: bool = True) -> SimState:
    """Advance one time step and return the new state.

    ``source(t)`` optionally returns forcing arrays (f_u, f_v) evaluated at the
    new time level. A theta < 1 step that produces negative u is retried with
    theta = 1, whose right-hand side is nonnegative under the CFL bound.
    Raises CFLViolation or PositivityError when dt must shrink.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    grid = state.grid
    u, v = state.u, state.v
    t_new = state.t + dt
    f_u = f_v = None
    if source is not None:
        f_u, f_v = source(t_new)

    v_new = solve_v(v, u, dt, grid, f_v, rtol)

    fluxes, dt_cfl = chemotactic_fluxes(u, v_new, spec, grid, limiter)
    if dt > cfl * dt_cfl:
        raise CFLViolation(f"dt = {dt:.3e} exceeds chemotaxis bound {dt_cfl:.3e}",
                           cfl * dt_cfl)
    div_chem = sum(_div(F, a, h) for a, (F, h) in enumerate(zip(fluxes, grid.h)))
    coef = [_face_mean(eval_D(spec, u), a) for a in range(grid.dim)]

    def advance(th):
        b = u - dt * div_chem
        if th < 1.0:
            b = b + (1.0 - th) * dt * diffusion_apply(u, coef, grid)
        if f_u is not None:
            b = b + dt * f_u
        return _solve(lambda x: x - th * dt * diffusion_apply(x, coef, grid),
                      b, u, rtol, "u equation")

    u_new = advance(theta)
    floor = -POSITIVITY_RTOL * max(float(np.abs(u).max()), 1.0)
    if u_new.min() < floor and theta < 1.0 and fallback:
        u_new = advance(1.0)
    if u_new.min() < floor:
        raise PositivityError(f"u < 0 after step (min {u_new.min():.3e})", dt / 2.0)
    if v_new.min() < -POSITIVITY_RTOL * max(float(np.abs(v).max()), 1.0):
        raise PositivityError(f"v < 0 after step (min {v_new.min():.3e})", dt / 2.0)
    # roundoff-level negatives only
    np.maximum(u_new, 0.0, out=u_new)
    np.maximum(v_new, 0.0, out=v_new)
    return SimState(grid, u_new, v_new, t_new, state.step_count + 1, dt)


# --------------------------------------------------------------- profiles

@dataclass(frozen=True)
class Profile:
    """Initial datum. kinds: constant, cosine, gaussian, tabulated."""
    kind: str = "constant"
    value: float = 0.0
    base: float = 1.0
    amplitude: float = 1.0
    mass: float = 1.0
    width: float = 0.1
    center: tuple | None = None
    background: float = 0.0
    values: np.ndarray | None = field(default=None, compare=False)


class ProfileError(ValueError):
    pass


def sample_profile(prof: Profile, grid: Grid) -> np.ndarray:
    """Cell values sampled at centres (second-order cell averages)."""
    X = grid.centers()
    if prof.kind == "constant":
        out = np.full(grid.cells, float(prof.value))
    elif prof.kind == "cosine":
        prod = np.ones(grid.cells)
        for x, L in zip(X, grid.extents):
            prod = prod * np.cos(np.pi * x / L)
        out = prof.base + prof.amplitude * prod
    elif prof.kind == "gaussian":
        c = prof.center or tuple(L / 2.0 for L in grid.extents)
        if len(c) != grid.dim:
            raise ProfileError("gaussian centre must have one coordinate per axis")
        r2 = sum((x - ci) ** 2 for x, ci in zip(X, c))
        bump = np.exp(-r2 / (2.0 * prof.width ** 2))
        bump_mass = prof.mass - prof.background * grid.measure
        if bump_mass < 0:
            raise ProfileError("background alone exceeds the requested mass")
        out = prof.background + bump * (bump_mass / (bump.sum() * grid.cell_volume))
    elif prof.kind == "tabulated":
        if prof.values is None:
            raise ProfileError("tabulated profile needs values")
        out = np.asarray(prof.values, dtype=float).reshape(grid.cells).copy()
    else:
        raise ProfileError(f"unknown profile kind {prof.kind!r}")
    if np.any(out < 0) or not np.all(np.isfinite(out)):
        raise ProfileError(f"{prof.kind} profile is negative or not finite")
    return out


def init(grid: Grid, spec: ModelSpec, u0: Profile, v0: Profile) -> SimState:
    u = sample_profile(u0, grid)
    v = sample_profile(v0, grid)
    # touch the nonlinearities once so invalid specs fail before time stepping
    eval_D(spec, u)
    eval_S(spec, u)
    return SimState(grid, u, v)


# --------------------------------------------------------------- monitors

@dataclass
class MonitorRecord:
    t: float
    mass_u: float
    mass_v: float
    linf_u: float
    lp_u: dict = field(default_factory=dict)
    w1s_v: dict = field(default_factory=dict)
    grad_v_2q: dict = field(default_factory=dict)
    energy_y: float | None = None


def lp_norm(f, grid, p) -> float:
    """Discrete L^p norm computed in log form so huge p cannot overflow."""
    fa = np.abs(f)
    top = float(fa.max())
    if top == 0.0:
        return 0.0
    if math.isinf(p):
        return top
    s = float(np.sum((fa / top) ** p)) * grid.cell_volume
    return top * math.exp(math.log(s) / p)


def grad_magnitude(v, grid) -> np.ndarray:
    return np.sqrt(sum(g * g for g in cell_gradient(v, grid)))


def monitors(state: SimState, spec: ModelSpec, cert=None, *, lp=(2.0,), w1s=(1.5,),
             grad_q=(2.0,)) -> MonitorRecord:
    """Mass, L^p, W^{1,s} and grad-v norms; with a certificate also the energy y."""
    grid = state.grid
    u, v = state.u, state.v
    dV = grid.cell_volume
    gv = grad_magnitude(v, grid)
    rec = MonitorRecord(
        t=state.t,
        mass_u=float(u.sum() * dV),
        mass_v=float(v.sum() * dV),
        linf_u=float(u.max()),
    )
    for p in lp:
        rec.lp_u[float(p)] = lp_norm(u, grid, p)
    for s in w1s:
        rec.w1s_v[float(s)] = float((np.sum(np.abs(v) ** s + gv ** s) * dV) ** (1.0 / s))
    for q in grad_q:
        rec.grad_v_2q[float(q)] = lp_norm(gv, grid, 2.0 * q)
    if cert is not None:
        rec.energy_y = energy(state, spec, cert.p, cert.q)
    return rec


def energy(state: SimState, spec: ModelSpec, p: float, q: float) -> float:
    """y = int phi(u) + (1/q) int |grad v|^(2q)."""
    grid = state.grid
    gv = grad_magnitude(state.v, grid)
    return float((np.sum(phi_values(spec, p, state.u)) + np.sum(gv ** (2.0 * q)) / q)
                 * grid.cell_volume)


# ------------------------------------------------------------- MMS check

@dataclass
class OrderReport:
    resolutions: list
    errors: list
    orders: list
    monotone: bool

    @property
    def observed(self) -> float:
        return self.orders[-1]


def _manufactured(spec, L, A=0.5, B=0.4):
    k = np.pi / L

    def exact(x, t):
        c = np.cos(k * x)
        return 1.0 + A * c * np.exp(-t), 1.0 + B * c * np.exp(-t / 2.0)

    def source(x, t):
        from .model_specs import eval_dD, eval_dS
        c, sn = np.cos(k * x), np.sin(k * x)
        eu, ev = np.exp(-t), np.exp(-t / 2.0)
        u, v = 1.0 + A * c * eu, 1.0 + B * c * ev
        u_t, u_x, u_xx = -A * c * eu, -A * k * sn * eu, -A * k * k * c * eu
        v_t, v_x, v_xx = -0.5 * B * c * ev, -B * k * sn * ev, -B * k * k * c * ev
        f_u = (u_t - (eval_dD(spec, u) * u_x ** 2 + eval_D(spec, u) * u_xx)
               + eval_dS(spec, u) * u_x * v_x + eval_S(spec, u) * v_xx)
        f_v = v_t - v_xx + v - u
        return f_u, f_v

    return exact, source


def manufactured_convergence(spec: ModelSpec, resolutions=(32, 64, 128), *, length=1.0,
                             t_end=0.1, dt_factor=0.1, forcing=True, theta=0.5,
                             limiter="minmod") -> OrderReport:
    """Observed spatial order of the scheme against a smooth forced solution.

    dt = dt_factor * h^2 keeps the time error a small fraction of the
    spatial error. With ``forcing=False`` the exact solution is the constant
    (1, 1) and the errors should sit at roundoff.
    """
    res = list(resolutions)
    if len(res) < 3 or any(b != 2 * a for a, b in zip(res, res[1:])):
        raise ValueError("need >= 3 resolutions, each double the previous")
    exact, src = _manufactured(spec, length)
    errors = []
    for N in res:
        grid = Grid((length,), (N,))
        (x,) = grid.centers()
        if forcing:
            u0, v0 = exact(x, 0.0)
            source = lambda t, x=x: src(x, t)
        else:
            u0, v0 = np.ones(N), np.ones(N)
            source = None
        state = SimState(grid, u0.copy(), v0.copy())
        h = grid.h[0]
        nsteps = max(1, int(math.ceil(t_end / (dt_factor * h * h))))
        dt = t_end / nsteps
        for _ in range(nsteps):
            state = step(state, spec, dt, theta=theta, limiter=limiter, source=source)
        ue = exact(x, state.t)[0] if forcing else np.ones(N)
        errors.append(float(np.abs(state.u - ue).max()))
    orders = [math.log2(e0 / e1) if e1 > 0 and e0 > 0 else float("nan")
              for e0, e1 in zip(errors, errors[1:])]
    monotone = all(e1 <= e0 for e0, e1 in zip(errors, errors[1:]))
    return OrderReport(res, errors, orders, monotone)


# ------------------------------------------------------------------ runs

@dataclass
class RunRecord:
    scenario: object
    records: list
    termination: str
    reason: str
    wall_time: float
    steps: int
    rejected: int
    dt_last: float
    sup_linf_u: float
    initial_max: float
    certificate: object = None
    final_state: SimState | None = None


def scenario_certificate(scenario):
    """Certificate for the energy monitor, or None when unavailable."""
    from .certificate import CertificateError, ProblemParams, find_certificate
    if scenario.monitors.certificate == "none":
        return None
    spec = scenario.model
    n = scenario.grid.dim
    try:
        return find_certificate(ProblemParams(n=n, m=spec.m, alpha=spec.alpha))
    except (CertificateError, ValueError):
        return None


def _record(state, spec, cert, mc):
    from .model_specs import DomainError
    rec = monitors(state, spec, None, lp=mc.lp, w1s=mc.w1s, grad_q=mc.grad_q)
    if cert is not None:
        try:
            rec.energy_y = energy(state, spec, cert.p, cert.q)
        except DomainError:
            rec.energy_y = float("nan")
    return rec


def run(scenario, *, progress=None) -> RunRecord:
    """Adaptive integration of ``scenario`` up to t_end or a detector event.

    dt halves on positivity failure, jumps to the suggested bound on a CFL
    violation, and otherwise grows by ``growth`` up to dt_max. Records are
    taken on the monitor cadence (steps land on cadence times) and at the end.
    """
    import time as _time
    wall0 = _time.perf_counter()
    spec = scenario.model
    tc, mc, dc = scenario.time, scenario.monitors, scenario.detector
    state = init(scenario.grid, spec, scenario.u0, scenario.v0)
    cert = scenario_certificate(scenario)
    initial_max = float(state.u.max())
    u_blow = dc.u_blow_factor * max(initial_max, np.finfo(float).tiny)
    records = [_record(state, spec, cert, mc)]
    sup = initial_max
    t_end = tc.t_end
    gap_tol = 1e-12 * max(1.0, t_end)
    next_mon = min(mc.every, t_end)
    dt_try = min(tc.dt_init, tc.dt_max)
    rejected = 0
    termination, reason = "completed", f"reached t_end = {t_end!r}"
    while t_end - state.t > gap_tol:
        if dc.max_steps and state.step_count >= dc.max_steps:
            termination, reason = "step_limit", f"step budget {dc.max_steps} exhausted"
            break
        if dt_try < dc.dt_min:
            termination = "blow_up_candidate"
            reason = f"dt collapse below {dc.dt_min!r} at t={state.t!r}"
            break
        dt_try = min(dt_try, tc.cfl * chemotaxis_dt_bound(state, spec, tc.limiter))
        dt = min(dt_try, next_mon - state.t)
        try:
            new = step(state, spec, dt, theta=tc.theta, limiter=tc.limiter, cfl=tc.cfl)
        except CFLViolation as exc:
            rejected += 1
            dt_try = min(dt_try, exc.suggested_dt)
            continue
        except PositivityError:
            rejected += 1
            dt_try = 0.5 * dt
            continue
        if dt != dt_try:
            new.t = next_mon  # landed on a cadence time; drop roundoff
        state = new
        if dt == dt_try:
            dt_try = min(dt_try * tc.growth, tc.dt_max)
        linf = float(state.u.max())
        sup = max(sup, linf)
        if next_mon - state.t <= gap_tol:
            records.append(_record(state, spec, cert, mc))
            if progress is not None:
                progress(records[-1])
            next_mon = min(next_mon + mc.every, t_end)
            if next_mon - state.t <= gap_tol:
                next_mon = t_end
        if not np.isfinite(linf) or linf > u_blow:
            termination = "blow_up_candidate"
            reason = f"max u = {linf:.6g} exceeded {u_blow:.6g} at t={state.t!r}"
            break
    if records[-1].t != state.t:
        records.append(_record(state, spec, cert, mc))
    return RunRecord(scenario, records, termination, reason,
                     _time.perf_counter() - wall0, state.step_count, rejected,
                     state.dt_last, sup, initial_max, cert, state)
