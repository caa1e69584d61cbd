"""Diffusivity D(u), sensitivity S(u) and the test-function primitive phi.

Four kinds of nonlinearity are supported:

``classical``
    D = 1, S = u.
``power_law``
    D = K0 (u+1)^(m-1) and S = K D(u) u (u+1)^(alpha-1), so that
    S/D = K u (u+1)^(alpha-1) <= K (u+1)^alpha with asymptotic equality.
``volume_filling``
    D = Q - u Q', S = u Q for a squeezing probability Q. ``Q.form`` is
    ``compact`` for Q = (1 - u/u_bar)_+ or ``algebraic`` for Q = (1+u)^(-gamma).
``tabulated``
    Piecewise-linear interpolation of user tables ``Q.u``, ``Q.D``, ``Q.S``.

All evaluators accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import integrate

KINDS = ("power_law", "volume_filling", "classical", "tabulated")

PHI_RTOL = 1e-10
PHI_ATOL = 1e-14


class DomainError(ValueError):
    """A nonlinearity was evaluated where it is not admissible."""


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    m: float = 1.0
    M_upper: float = 1.0
    K0: float = 1.0
    K1: float = 1.0
    K: float = 1.0
    alpha: float = 1.0
    Q_params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {KINDS}")
        for name in ("K0", "K1", "K", "alpha"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        qp = dict(self.Q_params)
        if self.kind == "volume_filling":
            form = qp.setdefault("form", "compact")
            if form == "compact":
                ub = float(qp.setdefault("u_bar", 1.0))
                if ub <= 0:
                    raise ValueError("Q.u_bar must be positive")
            elif form == "algebraic":
                if float(qp.setdefault("gamma", 1.0)) < 0:
                    raise ValueError("Q.gamma must be nonnegative")
            else:
                raise ValueError(f"unknown Q.form {form!r}")
        elif self.kind == "tabulated":
            try:
                tu, tD, tS = (np.asarray(qp[k], dtype=float) for k in ("u", "D", "S"))
            except KeyError as exc:
                raise ValueError(f"tabulated spec needs Q.{exc.args[0]}") from None
            if not (tu.ndim == 1 and tu.shape == tD.shape == tS.shape and tu.size >= 2):
                raise ValueError("tabulated Q.u, Q.D, Q.S must be 1-d of equal length >= 2")
            if tu[0] != 0.0 or np.any(np.diff(tu) <= 0):
                raise ValueError("tabulated Q.u must start at 0 and increase strictly")
            if tS[0] != 0.0:
                raise ValueError("tabulated S must vanish at u = 0")
            if np.any(tD < 0) or np.any(tS < 0):
                raise ValueError("tabulated D and S must be nonnegative")
            qp["u"], qp["D"], qp["S"] = tuple(tu), tuple(tD), tuple(tS)
        object.__setattr__(self, "Q_params", qp)

    @property
    def support_edge(self) -> float | None:
        """Packing threshold beyond which D vanishes (compact volume filling only)."""
        if self.kind == "volume_filling" and self.Q_params["form"] == "compact":
            return float(self.Q_params["u_bar"])
        return None


# ---------------------------------------------------------------- presets

def classical() -> ModelSpec:
    return ModelSpec("classical", m=1.0, M_upper=1.0, K0=1.0, K1=1.0, K=1.0, alpha=1.0)


def power_law(m: float, alpha: float, K: float = 1.0, K0: float = 1.0) -> ModelSpec:
    return ModelSpec("power_law", m=m, M_upper=m, K0=K0, K1=K0, K=K, alpha=alpha)


def volume_filling(u_bar: float = 1.0, alpha: float = 0.1) -> ModelSpec:
    """Compactly supported Q = (1 - u/u_bar)_+; S/D <= u_bar/4 on [0, u_bar]."""
    return ModelSpec("volume_filling", m=1.0, M_upper=1.0, K0=1.0, K1=1.0,
                     K=max(u_bar / 4.0, 1e-300), alpha=alpha,
                     Q_params={"form": "compact", "u_bar": u_bar})


def pure_diffusion() -> ModelSpec:
    """D = 1 and S = 0, i.e. the heat equation for u."""
    return ModelSpec("tabulated", Q_params={"u": (0.0, 1.0), "D": (1.0, 1.0), "S": (0.0, 0.0)})


# ------------------------------------------------------------- evaluators

def _q(spec: ModelSpec, u):
    qp = spec.Q_params
    if qp["form"] == "compact":
        return np.maximum(1.0 - u / qp["u_bar"], 0.0)
    return (1.0 + u) ** (-qp["gamma"])


def _as_nonneg(u):
    arr = np.asarray(u, dtype=float)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise DomainError("nonlinearities are only defined for u >= 0")
    return arr


def _out(arr, like):
    return float(arr) if np.ndim(like) == 0 else arr


def eval_D(spec: ModelSpec, u, strict: bool = False):
    """Diffusivity D(u). With ``strict`` a nonpositive value raises DomainError."""
    x = _as_nonneg(u)
    if spec.kind == "classical":
        d = np.ones_like(x)
    elif spec.kind == "power_law":
        d = spec.K0 * (x + 1.0) ** (spec.m - 1.0)
    elif spec.kind == "volume_filling":
        qp = spec.Q_params
        if qp["form"] == "compact":
            # Q' taken from the left at u = u_bar
            d = np.where(x <= qp["u_bar"], 1.0, 0.0)
        else:
            g = qp["gamma"]
            d = (1.0 + x) ** (-g - 1.0) * (1.0 + (1.0 + g) * x)
    else:
        d = np.interp(x, spec.Q_params["u"], spec.Q_params["D"])
    if strict and np.any(d <= 0):
        bad = np.atleast_1d(x)[np.atleast_1d(d) <= 0][0]
        raise DomainError(f"D(u) <= 0 at u = {bad:g} ({spec.kind})")
    return _out(d, u)


def eval_S(spec: ModelSpec, u):
    """Chemotactic sensitivity S(u); S(0) = 0 for every kind."""
    x = _as_nonneg(u)
    if spec.kind == "classical":
        s = x.copy()
    elif spec.kind == "power_law":
        s = spec.K * spec.K0 * x * (x + 1.0) ** (spec.m + spec.alpha - 2.0)
    elif spec.kind == "volume_filling":
        s = x * _q(spec, x)
    else:
        s = np.interp(x, spec.Q_params["u"], spec.Q_params["S"])
    return _out(s, u)


def eval_Q(spec: ModelSpec, u):
    if spec.kind != "volume_filling":
        raise ValueError("Q is only defined for volume_filling specs")
    x = _as_nonneg(u)
    return _out(_q(spec, x), u)


def _table_slope(spec, x, key):
    tu = np.asarray(spec.Q_params["u"])
    tv = np.asarray(spec.Q_params[key])
    slopes = np.append(np.diff(tv) / np.diff(tu), 0.0)
    idx = np.clip(np.searchsorted(tu, x, side="right") - 1, 0, tu.size - 1)
    return slopes[idx]


def eval_dD(spec: ModelSpec, u):
    """Derivative D'(u) (one-sided at kinks)."""
    x = _as_nonneg(u)
    if spec.kind == "classical":
        d = np.zeros_like(x)
    elif spec.kind == "power_law":
        d = spec.K0 * (spec.m - 1.0) * (x + 1.0) ** (spec.m - 2.0)
    elif spec.kind == "volume_filling":
        if spec.Q_params["form"] == "compact":
            d = np.zeros_like(x)
        else:
            g = spec.Q_params["gamma"]
            d = -g * (1.0 + g) * x * (1.0 + x) ** (-g - 2.0)
    else:
        d = _table_slope(spec, x, "D")
    return _out(d, u)


def eval_dS(spec: ModelSpec, u):
    """Derivative S'(u) (one-sided at kinks)."""
    x = _as_nonneg(u)
    if spec.kind == "classical":
        d = np.ones_like(x)
    elif spec.kind == "power_law":
        e = spec.m + spec.alpha - 2.0
        d = spec.K * spec.K0 * ((x + 1.0) ** e + e * x * (x + 1.0) ** (e - 1.0))
    elif spec.kind == "volume_filling":
        if spec.Q_params["form"] == "compact":
            ub = spec.Q_params["u_bar"]
            d = np.where(x < ub, 1.0 - 2.0 * x / ub, 0.0)
        else:
            g = spec.Q_params["gamma"]
            d = (1.0 + x) ** (-g) - g * x * (1.0 + x) ** (-g - 1.0)
    else:
        d = _table_slope(spec, x, "S")
    return _out(d, u)


# ----------------------------------------------------------- growth report

@dataclass
class BoundReport:
    u: np.ndarray
    alpha_ratio_max: float
    alpha_ratio_argmax: float
    lower_ratio_min: float
    lower_ratio_argmin: float
    upper_ratio_max: float
    upper_ratio_argmax: float
    alpha_ok: bool
    lower_ok: bool
    upper_ok: bool
    violations: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.alpha_ok and self.lower_ok and self.upper_ok


def check_growth_bounds(spec: ModelSpec, u_max: float, samples: int = 2001, *,
                        m=None, M_upper=None, K=None, K0=None, K1=None, alpha=None,
                        rtol: float = 1e-12) -> BoundReport:
    """Sample the hypotheses on S/D, the lower and the upper bound of D.

    The grid is log-spaced in u+1 and always contains 0 and ``u_max``.
    Keyword overrides test a spec against claimed constants other than its own.
    Violations are reported, never raised.
    """
    if not u_max > 0 or samples < 2:
        raise ValueError("need u_max > 0 and samples >= 2")
    m = spec.m if m is None else m
    M_upper = spec.M_upper if M_upper is None else M_upper
    K = spec.K if K is None else K
    K0 = spec.K0 if K0 is None else K0
    K1 = spec.K1 if K1 is None else K1
    alpha = spec.alpha if alpha is None else alpha

    u = np.expm1(np.linspace(0.0, np.log1p(u_max), samples))
    u[-1] = u_max
    d = eval_D(spec, u)
    s = eval_S(spec, u)
    w = u + 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d > 0, s / d, np.where(s > 0, np.inf, 0.0)) / w ** alpha
    lower = d / w ** (m - 1.0)
    upper = d / w ** (M_upper - 1.0)

    ia, il, iu = int(np.argmax(ratio)), int(np.argmin(lower)), int(np.argmax(upper))
    rep = BoundReport(
        u=u,
        alpha_ratio_max=float(ratio[ia]), alpha_ratio_argmax=float(u[ia]),
        lower_ratio_min=float(lower[il]), lower_ratio_argmin=float(u[il]),
        upper_ratio_max=float(upper[iu]), upper_ratio_argmax=float(u[iu]),
        alpha_ok=bool(ratio[ia] <= K * (1 + rtol)),
        lower_ok=bool(lower[il] >= K0 * (1 - rtol)),
        upper_ok=bool(upper[iu] <= K1 * (1 + rtol)),
    )
    if not rep.alpha_ok:
        rep.violations.append(("alpha", rep.alpha_ratio_argmax))
    if not rep.lower_ok:
        rep.violations.append(("m", rep.lower_ratio_argmin))
    if not rep.upper_ok:
        rep.violations.append(("M", rep.upper_ratio_argmax))
    return rep


# --------------------------------------------------------------------- phi

def _power_exponent(spec: ModelSpec, p: float):
    """Return (e, scale) when (s+1)^(m+p-3)/D(s) == scale * (s+1)^e exactly."""
    if spec.kind == "power_law":
        return p - 2.0, 1.0 / spec.K0
    if spec.kind == "classical":
        return spec.m + p - 3.0, 1.0
    return None


def _phi_closed(e: float, scale: float, r):
    r = np.asarray(r, dtype=float)
    lr = np.log1p(r)
    if e == -1.0:
        val = (r + 1.0) * lr - r
    elif e == -2.0:
        val = r - lr
    else:
        k = e + 2.0
        val = (np.expm1(k * lr) - k * r) / ((e + 1.0) * k)
    return scale * val


def _breakpoints(spec: ModelSpec, r: float):
    if spec.kind == "tabulated":
        return [x for x in spec.Q_params["u"][1:] if x < r]
    return []


def _phi_quad(spec: ModelSpec, p: float, r: float) -> float:
    if r == 0.0:
        return 0.0
    edge = spec.support_edge
    if edge is not None and r > edge:
        raise DomainError(f"D vanishes beyond u = {edge:g}; phi undefined at r = {r:g}")
    expo = spec.m + p - 3.0

    def integrand(sig):
        d = eval_D(spec, sig)
        if d <= 0:
            raise DomainError(f"D(u) <= 0 at u = {sig:g}")
        return (r - sig) * (sig + 1.0) ** expo / d

    pts = _breakpoints(spec, r)
    val, err, info = integrate.quad(integrand, 0.0, r, epsabs=PHI_ATOL, epsrel=PHI_RTOL,
                                    limit=200, points=pts or None, full_output=1)[:3]
    if err > max(PHI_ATOL, PHI_RTOL * abs(val)) * 10:
        raise QuadratureError(f"phi quadrature did not converge at r = {r:g} (err {err:.2e})")
    return float(val)


def eval_phi(spec: ModelSpec, p: float, r: float) -> float:
    """phi(r) = int_0^r int_0^rho (s+1)^(m+p-3) / D(s) ds drho.

    Exact powers use the closed form; everything else is reduced to the single
    integral int_0^r (r - s) (s+1)^(m+p-3) / D(s) ds and integrated adaptively.
    """
    if not p > 1:
        raise ValueError("phi needs p > 1")
    if r < 0:
        raise DomainError("phi is defined for r >= 0")
    pe = _power_exponent(spec, p)
    if pe is not None:
        return float(_phi_closed(pe[0], pe[1], r))
    return _phi_quad(spec, p, float(r))


def phi_values(spec: ModelSpec, p: float, r) -> np.ndarray:
    """Vectorised phi for field arrays (used by the energy monitor)."""
    r = np.asarray(r, dtype=float)
    pe = _power_exponent(spec, p)
    if pe is not None:
        return _phi_closed(pe[0], pe[1], r)
    flat = r.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    # phi(r) = r A(r) - B(r) with A = int h, B = int s h accumulated over sorted nodes
    expo = spec.m + p - 3.0

    def h(sig, weight_s):
        d = eval_D(spec, sig)
        if d <= 0:
            raise DomainError(f"D(u) <= 0 at u = {sig:g}")
        return (sig if weight_s else 1.0) * (sig + 1.0) ** expo / d

    edge = spec.support_edge
    if edge is not None and uniq.size and uniq[-1] > edge:
        raise DomainError(f"D vanishes beyond u = {edge:g}")
    out = np.empty_like(uniq)
    A = B = 0.0
    prev = 0.0
    for i, x in enumerate(uniq):
        if x > prev:
            A += integrate.quad(h, prev, x, args=(False,), epsabs=PHI_ATOL, epsrel=PHI_RTOL)[0]
            B += integrate.quad(h, prev, x, args=(True,), epsabs=PHI_ATOL, epsrel=PHI_RTOL)[0]
            prev = x
        out[i] = x * A - B
    return out[inv].reshape(r.shape)


# ---------------------------------------------------------- serialization

_SCALARS = ("m", "M_upper", "K0", "K1", "K", "alpha")


def spec_to_kv(spec: ModelSpec) -> dict:
    kv = {"kind": spec.kind}
    for name in _SCALARS:
        kv[name] = repr(float(getattr(spec, name)))
    for key, val in spec.Q_params.items():
        if isinstance(val, (tuple, list)):
            kv[f"Q.{key}"] = ", ".join(repr(float(x)) for x in val)
        elif isinstance(val, str):
            kv[f"Q.{key}"] = val
        else:
            kv[f"Q.{key}"] = repr(float(val))
    return kv


def spec_from_kv(kv: Mapping[str, str]) -> ModelSpec:
    """Inverse of :func:`spec_to_kv`. Unknown keys raise KeyError naming the key."""
    if "kind" not in kv:
        raise KeyError("kind")
    args = {"kind": kv["kind"].strip()}
    qp = {}
    for key, raw in kv.items():
        if key == "kind":
            continue
        if key in _SCALARS:
            args[key] = float(raw)
        elif key.startswith("Q."):
            name = key[2:]
            if name == "form":
                qp[name] = raw.strip()
            elif name in ("u", "D", "S"):
                qp[name] = tuple(float(x) for x in raw.split(","))
            else:
                qp[name] = float(raw)
        else:
            raise KeyError(key)
    return ModelSpec(Q_params=qp, **args)
