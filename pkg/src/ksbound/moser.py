"""Moser-Alikakos iteration: hypotheses, exponent schedule and bound tracker.

The problem class is a nonnegative subsolution of
``u_t <= div(D(x,t,u) grad u) + div f + g`` with ``D >= delta s^(m-1)`` for
``s >= s0``, ``f`` bounded in L^q1 and ``g`` in L^q2, and an a priori bound
on ``u`` in L^p0. Only scalar norm bounds of f, g, u enter here.

Pipeline::

    prob = MoserProblem(n=3, m=-1, p0=20, q1=7, q2=3)
    report = check_hypotheses(prob)
    r, s, lam = select_r_s_lambda(prob)
    sched = build_schedule(prob, r, s, k_max=60)
    est = bound_recursion(sched, M0=10, c16=2)
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

HALVING_CAP = 60
K_MAX = 60
TAIL_TOL = 1e-6


class MoserError(ValueError):
    pass


class SearchExhausted(MoserError):
    pass


class ScheduleInvariantError(MoserError):
    def __init__(self, msg, k=None):
        super().__init__(msg)
        self.k = k


class InsufficientData(MoserError):
    pass


@dataclass(frozen=True)
class MoserProblem:
    n: int
    m: float
    p0: float
    q1: float
    q2: float
    delta: float = 1.0
    s0: float = 0.0
    norm_f: float = 0.0
    norm_g: float = 0.0
    norm_u_p0: float = 0.0
    norm_u0_inf: float = 0.0

    def normalized(self) -> "MoserProblem":
        """Replace m > 0 by 0 (a weaker diffusion bound once s0 >= 1)."""
        if self.m <= 0:
            return self
        return replace(self, m=0.0, s0=max(self.s0, 1.0))


@dataclass
class HypothesisReport:
    margins: dict
    ok: bool
    bounds: dict = field(default_factory=dict)


def p0_lower_bounds(n: int, m: float, q1: float, q2: float) -> dict:
    """Right-hand sides of the three lower bounds imposed on p0."""
    out = {"p0_vs_dim": n * (1.0 - m) / 2.0}
    out["p0_vs_q1"] = 1.0 - m * ((n + 1.0) * q1 - (n + 2.0)) / (q1 - (n + 2.0)) \
        if q1 != n + 2 else float("nan")
    den = 1.0 - n / (n + 2.0) * q2 / (q2 - 1.0) if q2 != 1 else float("nan")
    if den == 0:
        # q2 = (n+2)/2: the bound degenerates to 1 - m/0
        out["p0_vs_q2"] = float("nan") if m == 0 else float("inf") if m < 0 else float("-inf")
    else:
        out["p0_vs_q2"] = 1.0 - m / den
    return out


def check_hypotheses(prob: MoserProblem) -> HypothesisReport:
    n = prob.n
    bounds = p0_lower_bounds(n, prob.m, prob.q1, prob.q2)
    margins = {
        "q1>n+2": prob.q1 - (n + 2.0),
        "q2>(n+2)/2": prob.q2 - (n + 2.0) / 2.0,
        "p0>=1": prob.p0 - 1.0,
        "p0_vs_q1": prob.p0 - bounds["p0_vs_q1"],
        "p0_vs_q2": prob.p0 - bounds["p0_vs_q2"],
        "p0_vs_dim": prob.p0 - bounds["p0_vs_dim"],
    }
    ok = all(
        (v >= 0 if k == "p0>=1" else v > 0) and not np.isnan(v)
        for k, v in margins.items()
    )
    return HypothesisReport(margins=margins, ok=bool(ok), bounds=bounds)


# ------------------------------------------------------------- selection

def theta_of(rho, m, p):
    return rho / 2.0 * (m + p - 1.0) / (-m + p - 1.0)


def mu_of(rho, m, p):
    return rho / 2.0 * (m + p - 1.0) / (p - 1.0)


def gn_ratio(n, r, s, q1):
    return (n * r / s - n) / (2.0 * q1 / (q1 - 2.0) * (1.0 - n / 2.0 + n / s))


def gn_exponent(n, r, s):
    return (n / s - n / r) / (1.0 - n / 2.0 + n / s)


@dataclass
class Selection:
    r: float
    s: float
    lam: float
    margins: dict
    m_used: float
    normalized: bool

    def __iter__(self):
        return iter((self.r, self.s, self.lam))


def select_r_s_lambda(prob: MoserProblem) -> Selection:
    """Deterministic admissible (r, s, lambda).

    r halves its gap to 2(n+2)/n, s halves its gap to 2; the first value
    meeting every requirement wins. m > 0 is normalized to 0 first.
    """
    rep = check_hypotheses(prob)
    if not rep.ok:
        raise MoserError(f"hypotheses fail: {[k for k, v in rep.margins.items() if not v > 0]}")
    norm = prob.normalized()
    if not check_hypotheses(norm).ok:
        raise MoserError("hypotheses fail after normalizing m to 0 (need p0 > 1)")
    n, m, p0, q1, q2 = norm.n, norm.m, norm.p0, norm.q1, norm.q2
    r_max = 2.0 * (n + 2.0) / n
    th_need, mu_need = q1 / (q1 - 2.0), q2 / (q2 - 1.0)

    r = None
    for j in range(1, HALVING_CAP + 1):
        cand = r_max - (r_max - 2.0) * 0.5 ** j
        if theta_of(cand, m, p0) >= th_need and mu_of(cand, m, p0) >= mu_need:
            r = cand
            break
    if r is None:
        raise SearchExhausted("no admissible r found within the halving cap")

    s = None
    for j in range(1, HALVING_CAP + 1):
        cand = 2.0 - 2.0 * 0.5 ** j
        if r < 2.0 * (n + cand) / n and gn_ratio(n, r, cand, q1) < 1.0:
            s = cand
            break
    if s is None:
        raise SearchExhausted("no admissible s found within the halving cap")

    p1 = 2.0 / s * p0 + 1.0 - m
    lam = 2.0 * p1 / (m + p1 - 1.0)
    lam_hi = 2.0 * n / (n - 2.0) if n > 2 else float("inf")
    margins = {
        "r>2": r - 2.0,
        "r<2(n+2)/n": r_max - r,
        "theta(r)>=q1/(q1-2)": theta_of(r, m, p0) - th_need,
        "mu(r)>=q2/(q2-1)": mu_of(r, m, p0) - mu_need,
        "r<2(n+s)/n": 2.0 * (n + s) / n - r,
        "interpolation ratio<1": 1.0 - gn_ratio(n, r, s, q1),
        "lambda>2": lam - 2.0,
        "lambda<2n/(n-2)": lam_hi - lam,
    }
    if not (margins["lambda>2"] > 0 and margins["lambda<2n/(n-2)"] > 0):
        raise MoserError(f"no admissible lambda: need {lam}")
    return Selection(r=r, s=s, lam=lam, margins=margins, m_used=m,
                     normalized=norm is not prob)


# -------------------------------------------------------------- schedule

def exponent_sequence(p0: float, s: float, m: float, k_max: int) -> np.ndarray:
    """p_k = (2/s) p_{k-1} + 1 - m, k = 0..k_max."""
    p = np.empty(k_max + 1)
    p[0] = p0
    for k in range(1, k_max + 1):
        p[k] = 2.0 / s * p[k - 1] + 1.0 - m
    return p


@dataclass
class MoserSchedule:
    n: int
    m: float
    r: float
    s: float
    lam: float
    a: float
    q1: float
    q2: float
    p_seq: np.ndarray
    theta_seq: np.ndarray
    mu_seq: np.ndarray
    theta_conj: np.ndarray
    mu_conj: np.ndarray
    kappa_seq: np.ndarray
    eps_seq: np.ndarray
    b_tilde: float
    b: float
    c1: float
    c2: float
    eps_const: float
    violations: list = field(default_factory=list)

    @property
    def k_max(self) -> int:
        return len(self.p_seq) - 1

    def rows(self):
        for k in range(self.k_max + 1):
            yield (k, self.p_seq[k], self.theta_seq[k], self.mu_seq[k],
                   self.kappa_seq[k], self.eps_seq[k])


def build_schedule(prob: MoserProblem, r: float, s: float, k_max: int = K_MAX,
                   lam: float | None = None, strict: bool = True) -> MoserSchedule:
    """Populate p_k, theta_k, mu_k, kappa_k, eps_k for k = 0..k_max.

    ``prob.m`` is used as given; pass ``prob.normalized()`` for m > 0.
    Invariant violations raise ScheduleInvariantError when ``strict``,
    otherwise they are collected in ``violations``.
    """
    if k_max < 2:
        raise ValueError("k_max must be >= 2")
    n, m, q1, q2 = prob.n, prob.m, prob.q1, prob.q2
    p = exponent_sequence(prob.p0, s, m, k_max)
    # non-strict callers may hit -m + p - 1 = 0; the violation list reports it
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = theta_of(r, m, p)
        mu = mu_of(r, m, p)
        theta_c = theta / (theta - 1.0)
        mu_c = mu / (mu - 1.0)
        a = gn_exponent(n, r, s)
        kappa = 2.0 * r * (1.0 - a) / (s * (2.0 * theta - r * a)) * p / (m + p - 1.0)
        eps = s / 2.0 * kappa - 1.0
        b_tilde = float((2.0 / s) ** (4.0 * theta[0] / (2.0 * theta[0] - r * a)))
        b = float(b_tilde ** (prob.p0 / (m + prob.p0 - 1.0)))
        witness = p * (s / 2.0) ** np.arange(k_max + 1)
        eps_const = float(np.max(eps[1:] * p[1:]))
    if lam is None:
        lam = float(2.0 * p[1] / (m + p[1] - 1.0))

    sched = MoserSchedule(
        n=n, m=m, r=r, s=s, lam=lam, a=a, q1=q1, q2=q2, p_seq=p, theta_seq=theta,
        mu_seq=mu, theta_conj=theta_c, mu_conj=mu_c, kappa_seq=kappa, eps_seq=eps,
        b_tilde=b_tilde, b=b, c1=float(witness.min()), c2=float(witness.max()),
        eps_const=eps_const)
    sched.violations = schedule_violations(sched)
    if strict and sched.violations:
        name, k = sched.violations[0]
        raise ScheduleInvariantError(f"schedule invariant {name} fails at k = {k}", k)
    return sched


def schedule_violations(sched: MoserSchedule, rtol: float = 1e-12) -> list:
    """List of (invariant, k) pairs that fail; empty for a valid schedule."""
    out = []
    p, th, mu = sched.p_seq, sched.theta_seq, sched.mu_seq
    K = sched.k_max

    def first_bad(mask, name, offset=0):
        idx = np.flatnonzero(~mask)
        if idx.size:
            out.append((name, int(idx[0]) + offset))

    first_bad(np.diff(p) > 0, "p_k increasing", 1)
    first_bad(np.isclose(p[1:], 2.0 / sched.s * p[:-1] + 1.0 - sched.m, rtol=rtol, atol=0),
              "p_k recursion", 1)
    first_bad(np.diff(th) >= -rtol * np.abs(th[1:]), "theta_k nondecreasing", 1)
    first_bad(np.diff(mu) >= -rtol * np.abs(mu[1:]), "mu_k nondecreasing", 1)
    if not th[0] >= sched.q1 / (sched.q1 - 2.0) * (1 - rtol):
        out.append(("theta_0 >= q1/(q1-2)", 0))
    if not mu[0] >= sched.q2 / (sched.q2 - 1.0) * (1 - rtol):
        out.append(("mu_0 >= q2/(q2-1)", 0))
    first_bad((sched.theta_conj > 1) & (sched.theta_conj <= sched.q1 / 2.0 * (1 + rtol)), "theta_conj in (1, q1/2]")
    first_bad((sched.mu_conj > 1) & (sched.mu_conj <= sched.q2 * (1 + rtol)), "mu_conj in (1, q2]")
    first_bad(sched.eps_seq >= -rtol, "eps_k >= 0")
    first_bad(sched.eps_seq[1:] * p[1:] <= sched.eps_const * (1 + rtol), "eps_k <= C/p_k", 1)
    if not 0.0 < sched.a < 1.0:
        out.append(("a in (0,1)", 0))
    if not sched.r < 2.0 * (sched.n + sched.s) / sched.n:
        out.append(("r < 2(n+s)/n", 0))
    if not gn_ratio(sched.n, sched.r, sched.s, sched.q1) < 1.0:
        out.append(("interpolation ratio < 1", 0))
    witness = p * (sched.s / 2.0) ** np.arange(K + 1)
    first_bad(np.diff(witness) >= -rtol * witness[1:], "p_k (s/2)^k nonincreasing", 1)
    return out


def ratio_to_one(sched: MoserSchedule) -> np.ndarray:
    """|p_k / (kappa_k p_{k-1}) - 1| for k = 1..k_max (index 0 is nan)."""
    out = np.full(sched.k_max + 1, np.nan)
    p, kap = sched.p_seq, sched.kappa_seq
    out[1:] = np.abs(p[1:] / (kap[1:] * p[:-1]) - 1.0)
    return out


# ------------------------------------------------------------ recursion

@dataclass
class BoundEstimate:
    L: np.ndarray
    ratio: np.ndarray
    bound: float
    converged: bool
    tail_increment: float
    k_converged: int | None
    branch: list


def bound_recursion(sched: MoserSchedule, M0: float, c16: float,
                    u0_mass=None, k_max: int | None = None, *,
                    b: float | None = None, kappa=None, omega: float = 1.0,
                    tail_tol: float = TAIL_TOL) -> BoundEstimate:
    """Iterate M_k <= max{ int u0^p_k, c16 b^k M_{k-1}^kappa_k } in log form.

    ``u0_mass`` is either a sequence of int u0^{p_k} values or a scalar cap
    on ||u0||_inf, in which case int u0^{p_k} <= omega cap^{p_k}. ``b`` and
    ``kappa`` default to the schedule's own values.
    """
    if M0 <= 0 or c16 <= 0:
        raise ValueError("M0 and c16 must be positive")
    K = sched.k_max if k_max is None else min(k_max, sched.k_max)
    p = sched.p_seq[: K + 1]
    kap = sched.kappa_seq if kappa is None else np.broadcast_to(np.asarray(kappa, float), (sched.k_max + 1,))
    log_b = np.log(sched.b if b is None else b)
    log_c = np.log(c16)

    init_log = None
    if u0_mass is not None:
        if np.ndim(u0_mass) == 0:
            init_log = np.log(omega) + p * np.log(float(u0_mass))
        else:
            init_log = np.log(np.asarray(u0_mass, dtype=float)[: K + 1])

    L = np.empty(K + 1)
    L[0] = np.log(M0)
    branch = ["M0"]
    for k in range(1, K + 1):
        rec = log_c + k * log_b + kap[k] * L[k - 1]
        if init_log is not None and init_log[k] > rec:
            L[k] = init_log[k]
            branch.append("initial")
        else:
            L[k] = rec
            branch.append("recursion")
    ratio = L / p
    inc = np.abs(np.diff(ratio))
    below = np.flatnonzero(inc < tail_tol)
    k_conv = None
    # first k after which every increment stays below the tolerance
    for k in below:
        if np.all(inc[k:] < tail_tol):
            k_conv = int(k) + 1
            break
    return BoundEstimate(L=L, ratio=ratio, bound=float(np.exp(ratio[-1])),
                         converged=k_conv is not None, tail_increment=float(inc[-1]),
                         k_converged=k_conv, branch=branch)


@dataclass
class FitReport:
    log_c16: float
    log_b: float
    residuals: np.ndarray
    roots: np.ndarray
    bounded: bool
    predicted_bound: float
    converged: bool = False

    @property
    def c16(self):
        return float(np.exp(self.log_c16))

    @property
    def b(self):
        return float(np.exp(self.log_b))


def moser_consistency(lp_norms, sched: MoserSchedule, *, log_M=None,
                      tail_tol: float = TAIL_TOL) -> FitReport:
    """Fit log c16 and log b so that M_k = c16 b^k M_{k-1}^kappa_k best matches data.

    ``lp_norms[k]`` is the measured sup-in-time L^{p_k} norm, so that
    log M_k = p_k log ||u||_{p_k}. Alternatively pass ``log_M`` directly.
    """
    if log_M is None:
        norms = np.asarray(lp_norms, dtype=float)
        K = norms.size - 1
        log_M = sched.p_seq[: K + 1] * np.log(norms)
    else:
        log_M = np.asarray(log_M, dtype=float)
        K = log_M.size - 1
    if K < 2:
        raise InsufficientData("need at least three entries k = 0, 1, 2")
    if K > sched.k_max:
        raise InsufficientData("series longer than the schedule")
    ks = np.arange(1, K + 1)
    y = log_M[1:] - sched.kappa_seq[1: K + 1] * log_M[:-1]
    A = np.column_stack([np.ones(K), ks])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    roots = np.exp(log_M / sched.p_seq[: K + 1])
    # extend the fitted recursion to the schedule's end and test convergence
    est = bound_recursion(sched, M0=float(np.exp(log_M[0])), c16=float(np.exp(coef[0])),
                          b=float(np.exp(coef[1])), tail_tol=tail_tol)
    # bounded: the extended ratio sequence is finite with shrinking increments
    # (a summable tail), even if it has not yet met the convergence tolerance
    inc = np.abs(np.diff(est.ratio))[-10:]
    shrinking = bool(np.all(np.diff(inc) <= 0))
    bounded = bool(np.all(np.isfinite(roots)) and np.isfinite(est.bound)
                   and (est.converged or shrinking))
    return FitReport(log_c16=float(coef[0]), log_b=float(coef[1]), residuals=resid,
                     roots=roots, bounded=bounded, predicted_bound=est.bound,
                     converged=est.converged)


def plan(prob: MoserProblem, k_max: int = K_MAX) -> tuple:
    """check -> select -> build on the normalized problem."""
    sel = select_r_s_lambda(prob)
    sched = build_schedule(prob.normalized(), sel.r, sel.s, k_max=k_max, lam=sel.lam)
    return sel, sched
