"""Parameter certificates for the subcritical boundedness argument.

Given the dimension n, the diffusion exponent m and a sensitivity exponent
alpha < 2/n, a certificate is a tuple (p, q, s, theta, mu) satisfying a
system of seven strict inequalities. :func:`find_certificate` constructs one
deterministically, following the order of choices of the existence proof
(theta and mu first, then a large p, then q just below q0(p), then s just
below n/(n-1)); :func:`check_certificate` re-evaluates every inequality
independently and reports signed margins.

:func:`interpolation_exponents` derives the Gagliardo-Nirenberg exponents used in
the a priori estimates and recombines them into the two Young exponent sums.
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

ZERO_TOL = 1e-12
MARGIN_MIN = 1e-6
MAX_DOUBLINGS = 200
MAX_BISECTIONS = 200


class CertificateError(ValueError):
    pass


class CriticalityError(CertificateError):
    """alpha >= 2/n: no certificate exists."""


class SearchExhausted(CertificateError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class DegenerateDenominator(ArithmeticError):
    pass


@dataclass(frozen=True)
class ProblemParams:
    n: int
    m: float
    alpha: float
    p_bar: float = 1.0
    q_bar: float = 2.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"n must be an integer >= 2, got {self.n}")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.p_bar < 1:
            raise ValueError("p_bar must be >= 1")
        if self.q_bar < 2:
            raise ValueError("q_bar must be >= 2")

    @property
    def critical_alpha(self) -> float:
        return 2.0 / self.n


@dataclass(frozen=True)
class Certificate:
    p: float
    q: float
    s: float
    theta: float
    mu: float

    @property
    def theta_conj(self) -> float:
        return self.theta / (self.theta - 1.0)

    @property
    def mu_conj(self) -> float:
        return self.mu / (self.mu - 1.0)


@dataclass
class CheckReport:
    margins: dict
    passed: dict
    ok: bool

    @property
    def min_margin(self) -> float:
        return min(self.margins.values())

    def failures(self) -> list:
        return [k for k, v in self.passed.items() if not v]


@dataclass(frozen=True)
class ExponentTable:
    a: float
    b: float
    c: float
    d: float
    kappa1: float
    kappa2: float
    beta1_gamma1: float
    beta2_gamma2: float
    f_val: float
    g_val: float
    parts: dict = field(default_factory=dict)


# ------------------------------------------------------------- primitives

def q0(params: ProblemParams, p: float) -> float:
    n, m = params.n, params.m
    return n * (m + p - 1.0) / (2.0 * (n - 1.0))


def _den_p(params, p):
    n = params.n
    den = 1.0 - n / 2.0 + n * (params.m + p - 1.0) / 2.0
    if not den > 0:
        raise DegenerateDenominator(f"1 - n/2 + n(m+p-1)/2 = {den} <= 0 (p too small)")
    return den


def _den_q(params, q, s):
    n = params.n
    den = 1.0 - n / 2.0 + n * q / s
    if not den > 0:
        raise DegenerateDenominator(f"1 - n/2 + nq/s = {den} <= 0")
    return den


def eval_f(params: ProblemParams, p: float, theta: float, q: float, s: float) -> float:
    n, m, al = params.n, params.m, params.alpha
    first = (m + p + 2.0 * al - 3.0 - 1.0 / theta) / _den_p(params, p)
    second = (2.0 / s - 1.0 + 1.0 / theta) / _den_q(params, q, s)
    return first + second


def eval_g(params: ProblemParams, p: float, mu: float, q: float, s: float) -> float:
    first = (2.0 - 1.0 / mu) / _den_p(params, p)
    second = (2.0 * (q - 1.0) / s - 1.0 + 1.0 / mu) / _den_q(params, q, s)
    return first + second


# ------------------------------------------------------------------ check

STRICT = ("p_large", "theta_vs_p", "mu_vs_p", "theta_vs_q", "mu_vs_q", "f<2/n", "g<2/n",
          "s<n/(n-1)", "theta>1", "mu>1")
NONSTRICT = ("p>=p_bar", "q>=q_bar", "s>=1")


def condition_margins(params: ProblemParams, cert: Certificate) -> dict:
    """Signed margins (lhs - rhs, positive when satisfied) of every condition."""
    n, m, al = params.n, params.m, params.alpha
    p, q, s, th, mu = cert.p, cert.q, cert.s, cert.theta, cert.mu
    k = (n - 2.0) / n
    out = {
        "p_large": p - max(4.0 - m, n * (1.0 - m) / 2.0),
        "theta_vs_p": 1.0 / th - k * (m + p + 2.0 * al - 3.0) / (m + p - 1.0),
        "mu_vs_p": 1.0 / mu - k * 2.0 / (m + p - 1.0),
        "theta_vs_q": 1.0 - k / q - 1.0 / th,
        "mu_vs_q": 2.0 / n + k / q - 1.0 / mu,
    }
    try:
        out["f<2/n"] = 2.0 / n - eval_f(params, p, th, q, s)
        out["g<2/n"] = 2.0 / n - eval_g(params, p, mu, q, s)
    except DegenerateDenominator:
        out["f<2/n"] = out["g<2/n"] = float("-inf")
    out["p>=p_bar"] = p - params.p_bar
    out["q>=q_bar"] = q - params.q_bar
    out["s>=1"] = s - 1.0
    out["s<n/(n-1)"] = n / (n - 1.0) - s
    out["theta>1"] = th - 1.0
    out["mu>1"] = mu - 1.0
    return out


def check_certificate(params: ProblemParams, cert: Certificate) -> CheckReport:
    """Evaluate all conditions; strict ones need a margin above 1e-12."""
    margins = condition_margins(params, cert)
    passed = {}
    for key, val in margins.items():
        passed[key] = bool(val > ZERO_TOL) if key in STRICT else bool(val >= 0.0)
    return CheckReport(margins=margins, passed=passed, ok=all(passed.values()))


# ----------------------------------------------------------------- search

def default_theta(n: int) -> float:
    return 2.0 if n == 2 else (1.0 + n / (n - 2.0)) / 2.0


def default_mu(n: int) -> float:
    return (n + 2.0) / 2.0


def _p_stage_margins(params, p, theta, mu):
    n, m, al = params.n, params.m, params.alpha
    k = (n - 2.0) / n
    q_0 = q0(params, p)
    sc = n / (n - 1.0)
    return {
        "p>=p_bar": p - params.p_bar,
        "p_large": p - max(4.0 - m, n * (1.0 - m) / 2.0),
        "theta_vs_p": 1.0 / theta - k * (m + p + 2.0 * al - 3.0) / (m + p - 1.0),
        "mu_vs_p": 1.0 / mu - k * 2.0 / (m + p - 1.0),
        "theta_vs_q0": 1.0 - k / q_0 - 1.0 / theta,
        "mu_vs_q0": 2.0 / n + k / q_0 - 1.0 / mu,
        "q0>q_bar+1": q_0 - params.q_bar - 1.0,
        "f(q0,n/(n-1))": 2.0 / n - eval_f(params, p, theta, q_0, sc),
    }


def find_certificate(params: ProblemParams, margin: float = MARGIN_MIN) -> Certificate:
    """Construct a certificate whose every margin is at least ``margin``.

    p doubles from max(p_bar, 5-m, n(1-m)/2 + 1); q bisects down from q0(p)
    toward max(q_bar, 2); s bisects up from 1 toward n/(n-1). The p and q
    stages demand 4x and 2x the final margin so the later continuity steps
    keep room.
    """
    n = params.n
    if params.alpha >= 2.0 / n:
        raise CriticalityError(
            f"alpha = {params.alpha:g} >= 2/n = {2.0 / n:g}: no certificate exists")
    theta, mu = default_theta(n), default_mu(n)
    sc = n / (n - 1.0)

    p = max(params.p_bar, 5.0 - params.m, n * (1.0 - params.m) / 2.0 + 1.0)
    last = {}
    for _ in range(MAX_DOUBLINGS):
        try:
            last = _p_stage_margins(params, p, theta, mu)
            if all(v >= 4.0 * margin for v in last.values()):
                break
        except DegenerateDenominator:
            pass
        p *= 2.0
    else:
        raise SearchExhausted("p doubling cap reached", {"p": p, "margins": last})

    q_hi = q0(params, p)
    q_lo = max(params.q_bar, 2.0)
    q = None
    for j in range(1, MAX_BISECTIONS + 1):
        cand = q_hi - (q_hi - q_lo) * 0.5 ** j
        mg = condition_margins(params, Certificate(p, cand, sc, theta, mu))
        keys = ("theta_vs_q", "mu_vs_q", "f<2/n", "g<2/n", "q>=q_bar")
        if all(mg[k] >= 2.0 * margin for k in keys):
            q = cand
            break
    if q is None:
        raise SearchExhausted("q bisection cap reached", {"p": p, "q0": q_hi, "margins": mg})

    cert = None
    for j in range(1, MAX_BISECTIONS + 1):
        s = sc - (sc - 1.0) * 0.5 ** j
        trial = Certificate(p, q, s, theta, mu)
        mg = condition_margins(params, trial)
        if all(v >= margin for v in mg.values()):
            cert = trial
            break
        if mg["s<n/(n-1)"] < margin:
            break
    if cert is None:
        raise SearchExhausted("s bisection exhausted", {"p": p, "q": q, "margins": mg})
    return cert


# --------------------------------------------------------------- exponents

class ExponentInvariantError(CertificateError):
    pass


def interpolation_exponents(params: ProblemParams, cert: Certificate,
                      tol: float = 1e-12) -> ExponentTable:
    """Gagliardo-Nirenberg exponents and the two Young exponent sums.

    The sums are assembled from a, b, c, d (the route through the
    interpolation inequalities) and compared against n/2 * f and n/2 * g.
    """
    n, m, al = params.n, params.m, params.alpha
    p, q, s, th, mu = cert.p, cert.q, cert.s, cert.theta, cert.mu
    thc, muc = cert.theta_conj, cert.mu_conj
    dp = _den_p(params, p)
    dq = _den_q(params, q, s)
    half_n_mp = n * (m + p - 1.0) / 2.0

    a = half_n_mp * (1.0 - 1.0 / ((m + p + 2.0 * al - 3.0) * th)) / dp
    b = half_n_mp * (1.0 - 1.0 / (2.0 * mu)) / dp
    c = n * q * (1.0 / s - 1.0 / (2.0 * thc)) / dq
    d = n * q * (1.0 / s - 1.0 / (2.0 * (q - 1.0) * muc)) / dq
    kappa1 = half_n_mp * (1.0 - 1.0 / p) / dp
    kappa2 = (n * q / s - n / 2.0) / dq

    beta1 = (m + p + 2.0 * al - 3.0) / (m + p - 1.0) * a
    gamma1 = c / q
    beta2 = 2.0 / (m + p - 1.0) * b
    gamma2 = (q - 1.0) / q * d
    f_val = eval_f(params, p, th, q, s)
    g_val = eval_g(params, p, mu, q, s)

    table = ExponentTable(a=a, b=b, c=c, d=d, kappa1=kappa1, kappa2=kappa2,
                          beta1_gamma1=beta1 + gamma1, beta2_gamma2=beta2 + gamma2,
                          f_val=f_val, g_val=g_val,
                          parts={"beta1": beta1, "gamma1": gamma1,
                                 "beta2": beta2, "gamma2": gamma2})
    bad = [k for k in ("a", "b", "c", "d", "kappa1", "kappa2")
           if not 0.0 < getattr(table, k) < 1.0]
    if not table.beta1_gamma1 < 1.0:
        bad.append("beta1+gamma1")
    if not table.beta2_gamma2 < 1.0:
        bad.append("beta2+gamma2")
    if abs(table.beta1_gamma1 - n / 2.0 * f_val) > tol:
        bad.append("beta1+gamma1 != n/2 f")
    if abs(table.beta2_gamma2 - n / 2.0 * g_val) > tol:
        bad.append("beta2+gamma2 != n/2 g")
    if bad:
        raise ExponentInvariantError(f"exponent invariants violated: {', '.join(bad)}")
    return table


def certificate_dict(cert: Certificate) -> dict:
    return asdict(cert)
