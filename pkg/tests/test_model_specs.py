import mpmath as mp
import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from ksbound.model_specs import (
    DomainError, ModelSpec, check_growth_bounds, classical, eval_D, eval_dD, eval_dS,
    eval_phi, eval_Q, eval_S, phi_values, power_law, pure_diffusion, spec_from_kv,
    spec_to_kv, volume_filling,
)


def phi_oracle(D, m, p, r, dps=30):
    """Nested double integral with mpmath, independent of the library's reduction."""
    mp.mp.dps = dps
    inner = lambda rho: mp.quad(lambda s: (s + 1) ** (m + p - 3) / D(s), [0, rho])
    return float(mp.quad(inner, [0, r]))


# ------------------------------------------------------------ evaluators

def test_classical_values():
    assert eval_D(classical(), 7.0) == 1.0
    assert eval_S(classical(), 5.0) == 5.0


def test_volume_filling_D_matches_symbolic_derivative():
    u = sp.symbols("u", positive=True)
    Q = 1 - u
    D_sym = sp.simplify(Q - u * sp.diff(Q, u))
    spec = volume_filling(u_bar=1.0)
    for x in (0.0, 0.25, 0.5, 0.9):
        assert eval_D(spec, x) == pytest.approx(float(D_sym.subs(u, x)), abs=1e-15)
    assert eval_D(spec, 0.5) == 1.0


def test_volume_filling_algebraic_matches_symbolic():
    u = sp.symbols("u", positive=True)
    g = sp.Rational(3, 2)
    Q = (1 + u) ** (-g)
    D_sym, S_sym = Q - u * sp.diff(Q, u), u * Q
    spec = ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": 1.5})
    for x in (0.0, 0.3, 2.0, 17.0):
        assert eval_D(spec, x) == pytest.approx(float(D_sym.subs(u, x)), rel=1e-13)
        assert eval_S(spec, x) == pytest.approx(float(S_sym.subs(u, x)), rel=1e-13)
        assert eval_dD(spec, x) == pytest.approx(float(sp.diff(D_sym, u).subs(u, x)), rel=1e-12, abs=1e-14)
        assert eval_dS(spec, x) == pytest.approx(float(sp.diff(S_sym, u).subs(u, x)), rel=1e-12, abs=1e-14)


def test_volume_filling_S_vanishes_when_packed():
    assert eval_S(volume_filling(u_bar=1.0), 2.0) == 0.0


def test_power_law_unit_exponent():
    assert eval_D(power_law(1.0, 0.5), 3.0) == 1.0


@pytest.mark.parametrize("spec", [classical(), power_law(2.0, 0.75), power_law(-1.0, 1.5),
                                  volume_filling(), pure_diffusion(),
                                  ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": 2.0})])
def test_S_vanishes_at_zero(spec):
    assert eval_S(spec, 0.0) == 0.0


@pytest.mark.parametrize("spec", [power_law(2.0, 0.75), power_law(0.5, 1.5, K=3.0, K0=2.0)])
def test_power_law_derivatives_match_sympy(spec):
    u = sp.symbols("u", nonnegative=True)
    D_sym = spec.K0 * (u + 1) ** (spec.m - 1)
    S_sym = spec.K * spec.K0 * u * (u + 1) ** (spec.m + spec.alpha - 2)
    for x in (0.0, 0.7, 9.0):
        assert eval_dD(spec, x) == pytest.approx(float(sp.diff(D_sym, u).subs(u, x)), rel=1e-13)
        assert eval_dS(spec, x) == pytest.approx(float(sp.diff(S_sym, u).subs(u, x)), rel=1e-13)


def test_vectorized_and_scalar_agree():
    spec = power_law(2.0, 0.75)
    xs = np.array([0.0, 1.0, 4.5])
    np.testing.assert_array_equal(eval_D(spec, xs), [eval_D(spec, x) for x in xs])
    assert isinstance(eval_S(spec, 1.0), float)


def test_eval_Q_only_for_volume_filling():
    assert eval_Q(volume_filling(u_bar=2.0), 1.0) == 0.5
    with pytest.raises(ValueError):
        eval_Q(classical(), 1.0)


def test_invalid_specs_rejected():
    with pytest.raises(ValueError):
        ModelSpec("exotic")
    with pytest.raises(ValueError):
        ModelSpec("power_law", K=0.0)
    with pytest.raises(ValueError):
        ModelSpec("tabulated", Q_params={"u": (0, 1), "D": (1, 1), "S": (0.5, 0)})


# -------------------------------------------------------- growth bounds

def test_growth_bounds_classical_pass():
    assert check_growth_bounds(classical(), 1e3).ok


def test_growth_bounds_wrong_claim_reports_violation():
    rep = check_growth_bounds(power_law(2.0, 0.5), 1e3, m=3.0)
    assert not rep.lower_ok
    assert rep.violations and rep.violations[0][0] == "m"
    assert rep.lower_ratio_argmin > 10.0


def test_growth_bounds_volume_filling_sensitivity():
    # S/D = u(1-u) <= 1/4 on [0, 1] and 0 beyond, so K = 1 passes with alpha = 0.1
    spec = ModelSpec("volume_filling", alpha=0.1, K=1.0, Q_params={"form": "compact", "u_bar": 1.0})
    rep = check_growth_bounds(spec, 10.0)
    assert rep.alpha_ok
    u = np.linspace(0.0, 1.0, 100001)
    assert rep.alpha_ratio_max <= np.max(u * (1 - u)) + 1e-12


@settings(max_examples=60, deadline=None)
@given(m=st.floats(-1.5, 3.0), alpha=st.floats(0.05, 2.5), K=st.floats(0.1, 5.0),
       u=st.floats(0.0, 1e6))
def test_power_law_sensitivity_hypothesis(m, alpha, K, u):
    spec = power_law(m, alpha, K=K)
    lhs = eval_S(spec, u)
    rhs = K * eval_D(spec, u) * (u + 1.0) ** alpha
    assert lhs <= rhs * (1 + 1e-12)


@settings(max_examples=40, deadline=None)
@given(gamma=st.floats(0.0, 4.0), u=st.floats(1e-6, 1e4))
def test_volume_filling_S_over_u_is_Q(gamma, u):
    spec = ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": gamma})
    assert eval_S(spec, u) / u == pytest.approx(eval_Q(spec, u), rel=1e-12)


# ------------------------------------------------------------------ phi

def test_phi_zero_at_origin():
    for spec in (classical(), volume_filling(), power_law(2.0, 0.5)):
        assert eval_phi(spec, 2.0, 0.0) == 0.0


def test_phi_p2_is_half_square():
    assert eval_phi(power_law(3.0, 0.5), 2.0, 1.0) == pytest.approx(0.5, rel=1e-14)
    assert phi_oracle(lambda s: (s + 1) ** 2, 3.0, 2.0, 1.0) == pytest.approx(0.5, rel=1e-12)


def test_phi_p3_closed_form():
    val = eval_phi(power_law(1.0, 0.5), 3.0, 1.0)
    assert val == pytest.approx(4.0 / 6.0, rel=1e-14)
    assert abs(val - phi_oracle(lambda s: 1, 1.0, 3.0, 1.0)) <= 1e-10


@pytest.mark.parametrize("p", [2.0, 3.0, 5.5])
@pytest.mark.parametrize("r", [0.1, 1.0, 50.0])
@pytest.mark.parametrize("m", [-0.5, 1.0, 2.0])
def test_phi_closed_form_matches_nested_quadrature(p, r, m):
    spec = power_law(m, 0.5)
    ref = phi_oracle(lambda s: (s + 1) ** (m - 1), m, p, r)
    assert eval_phi(spec, p, r) == pytest.approx(ref, rel=1e-9)


@pytest.mark.parametrize("r", [0.2, 0.7, 0.95])
def test_phi_quadrature_volume_filling(r):
    spec = volume_filling(u_bar=1.0)
    ref = phi_oracle(lambda s: 1, 1.0, 3.0, r)  # D = 1 below the packing threshold
    assert eval_phi(spec, 3.0, r) == pytest.approx(ref, rel=1e-9)


def test_phi_quadrature_algebraic_and_tabulated():
    spec = ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": 1.0})
    D = lambda s: (1 + s) ** -2 * (1 + 2 * s)
    assert eval_phi(spec, 2.5, 3.0) == pytest.approx(phi_oracle(D, 1.0, 2.5, 3.0), rel=1e-9)
    tab = ModelSpec("tabulated", m=1.0, Q_params={"u": (0, 1, 3), "D": (1, 2, 0.5), "S": (0, 1, 1)})
    Dt = lambda s: mp.mpf(1) + s if s <= 1 else 2 - 0.75 * (s - 1)
    mp.mp.dps = 30
    inner = lambda rho: mp.quad(lambda s: (s + 1) / Dt(s), [0, min(rho, 1), rho] if rho > 1 else [0, rho])
    ref = float(mp.quad(inner, [0, 1, 2.5]))
    assert eval_phi(tab, 3.0, 2.5) == pytest.approx(ref, rel=1e-9)


def test_phi_beyond_packing_is_domain_error():
    with pytest.raises(DomainError):
        eval_phi(volume_filling(u_bar=1.0), 2.0, 1.5)
    with pytest.raises(ValueError):
        eval_phi(classical(), 1.0, 1.0)


def test_phi_values_matches_pointwise():
    spec = ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": 0.5})
    r = np.array([[0.0, 0.3], [2.0, 0.3]])
    vals = phi_values(spec, 3.0, r)
    for idx in np.ndindex(r.shape):
        assert vals[idx] == pytest.approx(eval_phi(spec, 3.0, r[idx]), rel=1e-9, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(m=st.floats(-1.0, 3.0), p=st.floats(1.2, 8.0))
def test_phi_nonnegative_monotone_convex(m, p):
    spec = power_law(m, 0.5)
    r = np.linspace(0.0, 20.0, 401)
    phi = phi_values(spec, p, r)
    scale = max(1.0, float(np.abs(phi).max()))
    assert np.all(phi >= -1e-12 * scale)
    assert np.all(np.diff(phi) >= -1e-12 * scale)
    assert np.all(np.diff(phi, 2) >= -1e-8 * scale)


# -------------------------------------------------------- serialization

@pytest.mark.parametrize("spec", [classical(), power_law(-0.5, 0.3, K=2.0), volume_filling(2.0, 0.2),
                                  pure_diffusion(),
                                  ModelSpec("volume_filling", Q_params={"form": "algebraic", "gamma": 0.25})])
def test_kv_roundtrip(spec):
    assert spec_from_kv(spec_to_kv(spec)) == spec


def test_kv_unknown_key():
    with pytest.raises(KeyError, match="beta"):
        spec_from_kv({"kind": "classical", "beta": "1"})
