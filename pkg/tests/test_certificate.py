from fractions import Fraction as Fr

import pytest
from hypothesis import given, settings, strategies as st

from ksbound.certificate import (
    Certificate, CriticalityError, DegenerateDenominator, ExponentInvariantError, ProblemParams,
    check_certificate, condition_margins, eval_f, eval_g, find_certificate,
    interpolation_exponents, q0,
)


# Exact-rational oracle written directly from the displayed formulas.

def f_exact(n, m, al, p, th, q, s):
    return ((m + p + 2 * al - 3 - 1 / th) / (1 - Fr(n, 2) + Fr(n) * (m + p - 1) / 2)
            + (2 / s - 1 + 1 / th) / (1 - Fr(n, 2) + n * q / s))


def g_exact(n, m, p, mu, q, s):
    return ((2 - 1 / mu) / (1 - Fr(n, 2) + Fr(n) * (m + p - 1) / 2)
            + (2 * (q - 1) / s - 1 + 1 / mu) / (1 - Fr(n, 2) + n * q / s))


def conditions_exact(n, m, al, p, q, s, th, mu):
    k = Fr(n - 2, n)
    return {
        "p_large": p - max(4 - m, Fr(n) * (1 - m) / 2),
        "theta_vs_p": 1 / th - k * (m + p + 2 * al - 3) / (m + p - 1),
        "mu_vs_p": 1 / mu - k * 2 / (m + p - 1),
        "theta_vs_q": 1 - k / q - 1 / th,
        "mu_vs_q": Fr(2, n) + k / q - 1 / mu,
        "f<2/n": Fr(2, n) - f_exact(n, m, al, p, th, q, s),
        "g<2/n": Fr(2, n) - g_exact(n, m, p, mu, q, s),
    }


def exponents_exact(n, m, al, p, q, s, th, mu):
    thc, muc = th / (th - 1), mu / (mu - 1)
    dp = 1 - Fr(n, 2) + Fr(n) * (m + p - 1) / 2
    dq = 1 - Fr(n, 2) + n * q / s
    a = Fr(n) * (m + p - 1) / 2 * (1 - 1 / ((m + p + 2 * al - 3) * th)) / dp
    b = Fr(n) * (m + p - 1) / 2 * (1 - 1 / (2 * mu)) / dp
    c = n * q * (1 / s - 1 / (2 * thc)) / dq
    d = n * q * (1 / s - 1 / (2 * (q - 1) * muc)) / dq
    k1 = Fr(n) * (m + p - 1) / 2 * (1 - 1 / p) / dp
    k2 = (n * q / s - Fr(n, 2)) / dq
    return dict(a=a, b=b, c=c, d=d, kappa1=k1, kappa2=k2)


# --------------------------------------------------------------- primitives

@pytest.mark.parametrize("n,m,p,expected", [(2, 1, 4, 4.0), (3, 0, 7, 4.5), (2, 1, 3, 3.0)])
def test_q0(n, m, p, expected):
    assert q0(ProblemParams(n=n, m=m, alpha=0.1), p) == expected


def test_f_examples():
    P = ProblemParams(n=2, m=1, alpha=0.5)
    assert eval_f(P, 4, 2, 3, 1.9) == pytest.approx(0.8, abs=1e-14)
    assert eval_f(P, 4, 2, 4, 2) == pytest.approx(0.75, abs=1e-14)
    assert float(f_exact(2, 1, Fr(1, 2), 4, 2, 3, Fr(19, 10))) == pytest.approx(0.8, abs=1e-15)


def test_g_examples():
    assert eval_g(ProblemParams(n=2, m=1, alpha=0.5), 4, 2, 4, 2) == pytest.approx(1.0, abs=1e-14)
    assert eval_g(ProblemParams(n=2, m=1, alpha=0.5), 4, 2, 3, 1.9) == pytest.approx(0.8833333333, abs=1e-9)
    assert eval_g(ProblemParams(n=3, m=1, alpha=0.5), 10, 2, 7.5, 1.5) == pytest.approx(2 / 3, abs=1e-14)


def test_f_equals_critical_value_at_critical_alpha():
    for n in (2, 3, 5):
        P = ProblemParams(n=n, m=0.5, alpha=2 / n)
        p = 9.0
        assert eval_f(P, p, 1.7, q0(P, p), n / (n - 1)) == pytest.approx(2 / n, abs=1e-13)


def test_degenerate_denominator():
    with pytest.raises(DegenerateDenominator):
        eval_f(ProblemParams(n=4, m=0, alpha=0.1), 0.5, 2.0, 3.0, 1.2)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 6), m=st.sampled_from([-1.0, 0.0, 1.0, 2.5]),
       p=st.floats(3.0, 200.0), mu=st.floats(1.01, 10.0))
def test_g_identity_at_q0(n, m, p, mu):
    P = ProblemParams(n=n, m=m, alpha=0.3)
    if m + p - 1 <= 0:
        return
    assert abs(eval_g(P, p, mu, q0(P, p), n / (n - 1)) - 2 / n) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(n=st.integers(2, 6), m=st.sampled_from([-1.0, 0.0, 1.0]), p=st.floats(6.0, 50.0),
       q=st.floats(2.05, 40.0), mu=st.floats(1.1, 5.0))
def test_g_increasing_in_q(n, m, p, q, mu):
    P = ProblemParams(n=n, m=m, alpha=0.3)
    s = n / (n - 1)
    h = 1e-6 * q
    assert eval_g(P, p, mu, q + h, s) - eval_g(P, p, mu, q - h, s) > 0


@settings(max_examples=150, deadline=None)
@given(n=st.integers(2, 6), m=st.sampled_from([-1.0, 0.0, 1.0, 2.5]), p=st.floats(5.0, 60.0),
       theta=st.sampled_from([1.5, 2.0]), frac=st.sampled_from([0.5, 1.5]))
def test_criticality_sign(n, m, p, theta, frac):
    alpha = frac * 2 / n
    P = ProblemParams(n=n, m=m, alpha=alpha)
    diff = eval_f(P, p, theta, q0(P, p), n / (n - 1)) - 2 / n
    assert (diff > 0) == (alpha > 2 / n)


# ------------------------------------------------------------------- check

def test_check_reference_certificate_margins():
    P = ProblemParams(n=2, m=1, alpha=0.5)
    rep = check_certificate(P, Certificate(4, 3, 1.9, 2, 2))
    assert rep.ok
    assert rep.margins["f<2/n"] == pytest.approx(0.2, abs=1e-12)
    assert rep.margins["g<2/n"] == pytest.approx(0.1166666667, abs=1e-9)
    exact = conditions_exact(2, 1, Fr(1, 2), 4, 3, Fr(19, 10), 2, 2)
    for k, v in exact.items():
        assert rep.margins[k] == pytest.approx(float(v), abs=1e-13)


def test_check_supercritical_alpha_fails_f():
    rep = check_certificate(ProblemParams(n=2, m=1, alpha=1.2), Certificate(4, 3, 1.9, 2, 2))
    assert not rep.ok
    assert rep.margins["f<2/n"] < 0
    assert "f<2/n" in rep.failures()


def test_check_s_at_upper_endpoint_fails():
    rep = check_certificate(ProblemParams(n=2, m=1, alpha=0.5), Certificate(4, 3, 2.0, 2, 2))
    assert not rep.passed["s<n/(n-1)"]


def test_check_is_pure():
    P = ProblemParams(n=3, m=0, alpha=0.4)
    c = Certificate(10, 4, 1.4, 2, 2.5)
    assert check_certificate(P, c) == check_certificate(P, c)


def test_tiny_margins_count_as_ties():
    P = ProblemParams(n=2, m=1, alpha=0.5)
    c = Certificate(4, 3, 1.9, 2, 2)
    mg = condition_margins(P, c)
    p_tie = Certificate(4 - mg["p_large"] + 1e-13, 3, 1.9, 2, 2)
    assert not check_certificate(P, p_tie).passed["p_large"]


# -------------------------------------------------------------------- find

def test_golden_certificate():
    cert = find_certificate(ProblemParams(n=2, m=1, alpha=0.5))
    assert cert == Certificate(p=4.0, q=3.0, s=1.5, theta=2.0, mu=2.0)


def test_find_n3_theta_bound():
    P = ProblemParams(n=3, m=0, alpha=0.6, p_bar=2, q_bar=2)
    cert = find_certificate(P)
    assert cert.theta < 3
    assert check_certificate(P, cert).ok


@pytest.mark.parametrize("alpha", [1.0, 1.1, 3.0])
def test_find_rejects_critical_and_supercritical(alpha):
    with pytest.raises(CriticalityError):
        find_certificate(ProblemParams(n=2, m=1, alpha=alpha))


def test_find_is_deterministic():
    P = ProblemParams(n=4, m=-1, alpha=0.3, p_bar=5, q_bar=4)
    assert find_certificate(P) == find_certificate(P)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 5), m=st.floats(-2.0, 3.0), frac=st.floats(0.05, 0.95),
       p_bar=st.sampled_from([1.0, 5.0, 20.0]), q_bar=st.sampled_from([2.0, 4.0, 9.0]))
def test_find_is_sound(n, m, frac, p_bar, q_bar):
    P = ProblemParams(n=n, m=m, alpha=frac * 2 / n, p_bar=p_bar, q_bar=q_bar)
    cert = find_certificate(P)
    rep = check_certificate(P, cert)
    assert rep.ok and rep.min_margin >= 1e-6
    # independent rational re-evaluation of the seven conditions
    ex = conditions_exact(n, Fr(m), Fr(P.alpha), Fr(cert.p), Fr(cert.q), Fr(cert.s),
                          Fr(cert.theta), Fr(cert.mu))
    assert all(v > 0 for v in ex.values())


# --------------------------------------------------------------- exponents

def test_exponents_reference():
    P = ProblemParams(n=2, m=1, alpha=0.5)
    tab = interpolation_exponents(P, Certificate(4, 3, 1.9, 2, 2))
    assert tab.a == pytest.approx(5 / 6, abs=1e-14)
    assert tab.kappa2 == pytest.approx((6 / 1.9 - 1) / (6 / 1.9), abs=1e-14)
    assert tab.kappa2 == pytest.approx(0.68333, abs=1e-5)
    assert tab.beta1_gamma1 == pytest.approx(0.8, abs=1e-14)
    assert tab.beta2_gamma2 == pytest.approx(0.8833333333, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 5), m=st.floats(-1.0, 2.0), frac=st.floats(0.1, 0.9))
def test_exponents_match_rational_oracle(n, m, frac):
    P = ProblemParams(n=n, m=m, alpha=frac * 2 / n)
    cert = find_certificate(P)
    tab = interpolation_exponents(P, cert)
    ex = exponents_exact(n, Fr(m), Fr(P.alpha), Fr(cert.p), Fr(cert.q), Fr(cert.s),
                         Fr(cert.theta), Fr(cert.mu))
    for k, v in ex.items():
        assert getattr(tab, k) == pytest.approx(float(v), rel=1e-12, abs=1e-14)
        assert 0 < v < 1
    assert abs(tab.beta1_gamma1 - n / 2 * tab.f_val) <= 1e-12
    assert abs(tab.beta2_gamma2 - n / 2 * tab.g_val) <= 1e-12


def test_exponents_reject_bad_certificate():
    with pytest.raises(ExponentInvariantError):
        interpolation_exponents(ProblemParams(n=2, m=1, alpha=1.2), Certificate(4, 3, 1.9, 2, 2))


def test_params_validation():
    with pytest.raises(ValueError):
        ProblemParams(n=1, m=0, alpha=0.5)
    with pytest.raises(ValueError):
        ProblemParams(n=2, m=0, alpha=0.5, q_bar=1.0)
