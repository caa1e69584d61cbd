"""Command-line front end.

Exit codes: 0 ok, 1 internal error, 2 validation or check failure,
3 criticality (alpha >= 2/n).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import certificate as C
from . import moser as Mo
from .harness import PLAN_KEYS, PlanError, RecordError, parse_plan, report, run_to_dir, sweep
from .scenario import ScenarioError, describe_keys, load_scenario

EXIT_OK, EXIT_INTERNAL, EXIT_INVALID, EXIT_CRITICAL = 0, 1, 2, 3


def _params(a):
    return C.ProblemParams(n=a.n, m=a.m, alpha=a.alpha, p_bar=a.p_bar, q_bar=a.q_bar)


def _print_margins(margins, passed=None):
    for k, v in margins.items():
        flag = "" if passed is None else ("  ok" if passed[k] else "  FAIL")
        print(f"  {k:<22} {v: .6e}{flag}")
    # machine-readable block
    print("[margins]")
    for k, v in margins.items():
        print(f"{k} = {v!r}")


def cmd_cert_find(a):
    params = _params(a)
    cert = C.find_certificate(params, margin=a.margin)
    rep = C.check_certificate(params, cert)
    print(f"certificate p={cert.p!r} q={cert.q!r} s={cert.s!r} theta={cert.theta!r} mu={cert.mu!r}")
    _print_margins(rep.margins, rep.passed)
    if a.exponents:
        tab = C.interpolation_exponents(params, cert)
        for k in ("a", "b", "c", "d", "kappa1", "kappa2", "beta1_gamma1", "beta2_gamma2"):
            print(f"  {k:<12} {getattr(tab, k)!r}")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_cert_check(a):
    params = _params(a)
    cert = C.Certificate(p=a.p, q=a.q, s=a.s, theta=a.theta, mu=a.mu)
    rep = C.check_certificate(params, cert)
    _print_margins(rep.margins, rep.passed)
    print("ok" if rep.ok else f"failed: {', '.join(rep.failures())}")
    return EXIT_OK if rep.ok else EXIT_INVALID


def _moser_problem(a):
    return Mo.MoserProblem(n=a.n, m=a.m, p0=a.p0, q1=a.q1, q2=a.q2)


def _schedule(a):
    prob = _moser_problem(a)
    if a.r is not None and a.s is not None:
        return None, Mo.build_schedule(prob, a.r, a.s, k_max=a.k_max, strict=False)
    return Mo.plan(prob, k_max=a.k_max)


def read_series(path):
    """'k value' pairs, one per line; k must run 0, 1, 2, ... without gaps."""
    pairs = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path}:{ln}: expected 'k value'")
        pairs.append((int(parts[0]), float(parts[1])))
    ks = [k for k, _ in pairs]
    if ks != list(range(len(ks))) or len(ks) < 2:
        raise ValueError(f"{path}: k must run 0, 1, 2, ... with at least two entries")
    return [v for _, v in pairs]


def cmd_moser_schedule(a):
    sel, sched = _schedule(a)
    if sel is not None:
        print(f"r={sel.r!r} s={sel.s!r} lambda={sel.lam!r} (m used: {sel.m_used!r})")
    print(f"a={sched.a!r} b_tilde={sched.b_tilde!r} b={sched.b!r}")
    print("k,p_k,theta_k,mu_k,kappa_k,eps_k")
    for row in sched.rows():
        print(",".join([str(row[0])] + [repr(float(x)) for x in row[1:]]))
    if sched.violations:
        print(f"violations: {sched.violations}")
        return EXIT_INVALID
    return EXIT_OK


def cmd_moser_bound(a):
    _, sched = _schedule(a)
    u0 = a.u0_inf
    if a.series:
        u0 = read_series(a.series)
    est = Mo.bound_recursion(sched, M0=a.M0, c16=a.c16, b=a.b, u0_mass=u0,
                             k_max=min(a.k_max, len(u0) - 1) if a.series else None)
    print("k,L_k,L_k/p_k,branch")
    for k, (L, r, br) in enumerate(zip(est.L, est.ratio, est.branch)):
        print(f"{k},{float(L)!r},{float(r)!r},{br}")
    print(f"bound={est.bound!r} converged={est.converged} k_converged={est.k_converged} "
          f"tail_increment={est.tail_increment!r}")
    return EXIT_OK if est.converged else EXIT_INVALID


def cmd_sim_run(a):
    scen = load_scenario(a.scenario)
    out = Path(a.out) if a.out else Path(a.scenario).with_suffix("")
    prog = None
    if a.verbose:
        def prog(rec):
            print(f"t={rec.t:.6g} linf_u={rec.linf_u:.6g} mass_u={rec.mass_u:.15g}", flush=True)
    rec = run_to_dir(scen, out, progress=prog)
    print(f"{rec.termination}: {rec.reason}")
    print(f"steps={rec.steps} rejected={rec.rejected} sup_linf_u={rec.sup_linf_u:.6g} "
          f"wall_time={rec.wall_time:.2f}s -> {out}")
    return EXIT_OK


def cmd_sweep(a):
    path = Path(a.plan)
    plan = parse_plan(path.read_text(encoding="utf-8"), base_dir=path.parent)
    if a.out:
        plan.output_root = Path(a.out)
    rows = sweep(plan)
    print(f"2/n = {plan.critical_alpha!r}")
    print("alpha,mass,sup_linf_u,termination,certificate")
    for r in rows:
        print(f"{r.alpha!r},{r.mass!r},{r.sup_linf_u:.6g},{r.termination},{r.certificate}")
    return EXIT_OK


def cmd_report(a):
    rep = report(a.run_dir)
    sys.stdout.write(rep.text)
    for f in rep.files:
        print(f"wrote {f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ksbound", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    cert = sub.add_parser("cert", help="exponent certificates").add_subparsers(dest="action", required=True)
    for name, fn in (("find", cmd_cert_find), ("check", cmd_cert_check)):
        p = cert.add_parser(name, help=f"{name} a certificate")
        p.add_argument("--n", type=int, required=True, help="space dimension (>= 2)")
        p.add_argument("--m", type=float, required=True, help="diffusion exponent")
        p.add_argument("--alpha", type=float, required=True, help="sensitivity exponent")
        p.add_argument("--p-bar", type=float, default=1.0, help="lower bound for p (default 1)")
        p.add_argument("--q-bar", type=float, default=2.0, help="lower bound for q (default 2)")
        if name == "find":
            p.add_argument("--margin", type=float, default=C.MARGIN_MIN, help="required margin")
            p.add_argument("--exponents", action="store_true", help="print interpolation exponents")
        else:
            for k in ("p", "q", "s", "theta", "mu"):
                p.add_argument(f"--{k}", type=float, required=True)
        p.set_defaults(func=fn)

    mo = sub.add_parser("moser", help="L^p to L^inf iteration").add_subparsers(dest="action", required=True)
    for name, fn in (("schedule", cmd_moser_schedule), ("bound", cmd_moser_bound)):
        p = mo.add_parser(name, help=f"moser {name}")
        p.add_argument("--n", type=int, required=True)
        p.add_argument("--m", type=float, required=True)
        p.add_argument("--p0", type=float, required=True)
        p.add_argument("--q1", type=float, required=True)
        p.add_argument("--q2", type=float, required=True)
        p.add_argument("--k-max", "--kmax", dest="k_max", type=int, default=Mo.K_MAX)
        p.add_argument("--r", type=float, default=None, help="override r (with --s)")
        p.add_argument("--s", type=float, default=None, help="override s (with --r)")
        if name == "bound":
            p.add_argument("--M0", type=float, required=True, help="initial M_0")
            p.add_argument("--c16", type=float, required=True, help="recursion constant")
            p.add_argument("--b", type=float, default=None, help="override b")
            src = p.add_mutually_exclusive_group()
            src.add_argument("--u0-inf", type=float, default=None, help="cap on ||u0||_inf")
            src.add_argument("--series", default=None,
                             help="file of 'k value' lines giving int u0^{p_k} for k = 0..K")
        p.set_defaults(func=fn)

    sim = sub.add_parser("sim", help="simulation").add_subparsers(dest="action", required=True)
    p = sim.add_parser("run", help="run a scenario file",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="scenario keys:\n" + describe_keys())
    p.add_argument("scenario")
    p.add_argument("--out", default=None, help="run directory (default: scenario name)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("sweep", help="alpha/mass sweep from a plan file",
                       formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog="[plan] keys:\n" + "\n".join(f"  {k:<10} {v}" for k, v in PLAN_KEYS.items()))
    p.add_argument("plan")
    p.add_argument("--out", default=None, help="override the output root")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except C.CriticalityError as exc:
        print(f"criticality: {exc}", file=sys.stderr)
        return EXIT_CRITICAL
    except (C.CertificateError, Mo.MoserError, ScenarioError, PlanError, RecordError,
            ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
