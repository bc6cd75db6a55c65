"""Command line runner: ``fbmax run`` and ``fbmax sweep``.

Exit codes: 0 every check passed, 1 a verification failed, 2 the scenario or
the command line is invalid.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .barrier import (
    BarrierError,
    ConfigurationError,
    CutoffProfile,
    build_barrier,
    compute_q_forms,
    lemma33_from_forms,
    lemma34_max,
    test_field,
)
from .expr import ExprError
from .foliation import FoliationError, boundary_tangency, build_foliation, frame_identity_residuals, psi
from .geometry import GeometryError
from .scenario import Scenario, ScenarioError, load, resolve
from .surfaces import NumericalError, check_orthogonality, strong_m_convexity
from .varifold import first_variation, is_tangential

REPORT_VERSION = 1
CHECKS = (
    "orthogonality",
    "strong_m_convexity",
    "foliation",
    "barrier",
    "lemma33",
    "lemma34",
    "first_variation",
)
DEPENDS = {
    "foliation": ("orthogonality",),
    "barrier": ("foliation",),
    "lemma33": ("barrier",),
    "lemma34": ("barrier",),
    "first_variation": ("strong_m_convexity", "barrier", "lemma33"),
}
EPS_COLUMNS = ("epsilon", "K", "theta_star", "F_star", "worst_trace", "verdict", "first_variation", "tangential_residual")
FD_COLUMNS = ("fd_step", "frame_identity_median", "frame_identity_max", "psi_boundary_deviation")
REFINE_COLUMNS = ("refine", "first_variation", "richardson", "mass")


def _clean(obj):
    """JSON-safe copy: numpy to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


@dataclass
class CheckResult:
    name: str
    verdict: str  # pass | fail | skipped
    residuals: dict = field(default_factory=dict)
    witness: object = None
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"name": self.name, "verdict": self.verdict, "residuals": self.residuals, "witness": self.witness, "details": self.details}


class Context:
    """Lazily built objects shared between checks of one run."""

    def __init__(self, sc: Scenario, threads: int = 1):
        self.sc = sc
        self.threads = threads
        self._cache = {}

    def _memo(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    @property
    def domain(self):
        return self._memo("domain", lambda: self.sc.domain)

    def face_foliation(self):
        sc = self.sc
        return self._memo("face_fol", lambda: build_foliation(self.domain, sc.surface, sc.p, sc.delta, sc.tolerances.tau_orth, sc.foliation_fd_step))

    def barrier(self, eps):
        return self._memo(("barrier", eps), lambda: build_barrier(self.domain, eps))

    def barrier_foliation(self, eps):
        sc = self.sc
        B, _ = self.barrier(eps)
        return self._memo(("bfol", eps), lambda: build_foliation(self.domain, B.graph, sc.p, sc.delta, sc.tolerances.tau_orth, sc.foliation_fd_step))

    def lemma33_points(self, eps):
        """Samples ``(y, u(y) + s)`` in N with ``s`` below ``0.9 eps``."""

        def build():
            sc = self.sc
            B, _ = self.barrier(eps)
            S = sc.surface
            n = S.n
            rng = sc.rng(f"lemma33/{eps!r}")
            k = sc.sampling.lemma33_samples
            r = sc.sampling.lemma33_radius
            v = rng.standard_normal((k, n))
            v /= np.linalg.norm(v, axis=1)[:, None]
            v *= r * rng.random((k, 1)) ** (1 / n)
            v[:, 0] = np.abs(v[:, 0])
            lo = np.maximum(0.0, S.orientation * (S.f_values(v) - B.u(v)))
            hi = 0.9 * eps
            if np.any(lo >= hi):
                raise ConfigurationError("lemma33 sampling radius too large: face leaves the support of X")
            s = lo + rng.random(k) * (hi - lo)
            return B.graph.embed(v, S.orientation * s)

        return self._memo(("pts", eps), build)

    def forms(self, eps):
        return self._memo(
            ("forms", eps),
            lambda: compute_q_forms(self.barrier_foliation(eps), CutoffProfile(eps), self.lemma33_points(eps), self.threads),
        )

    def K(self, eps):
        return self._memo(("K", eps), lambda: k_from_forms(self.forms(eps)))


def k_from_forms(forms) -> dict:
    AS = max(float(np.linalg.norm(f.AS, 2)) for f in forms)
    AT = max(float(np.linalg.norm(f.AT, 2)) for f in forms)
    nn = max(float(np.linalg.norm(f.nabla_nu_nu)) for f in forms)
    ps = min(f.psi for f in forms)
    if ps < 0.5:
        raise FoliationError(f"psi drops to {ps:.3f} < 1/2 on the sample region")
    return {"K": max(AS, AT, nn), "A_S": AS, "A_T": AT, "nabla_nu_nu": nn, "psi_min": ps}


# -- checks ---------------------------------------------------------------------


def check_orthogonality_(ctx: Context) -> CheckResult:
    r = check_orthogonality(ctx.domain)
    ok = r <= ctx.sc.tolerances.tau_orth
    return CheckResult("orthogonality", "pass" if ok else "fail", {"max_abs_inner": r}, None if ok else r)


def check_convexity(ctx: Context) -> CheckResult:
    sc = ctx.sc
    per_m = {}
    ok = True
    witness = None
    for m in sc.m:
        rep = strong_m_convexity(sc.surface, sc.surface.base(sc.p), m, sc.tolerances.tau_conv)
        per_m[str(m)] = {"margin": rep.margin, "curvatures": rep.curvatures, "verdict": rep.verdict}
        if not rep.verdict and ok:
            ok = False
            witness = {"m": m, "point": sc.p, "margin": rep.margin}
    return CheckResult("strong_m_convexity", "pass" if ok else "fail", {}, witness, {"at_p": per_m})


def check_foliation(ctx: Context) -> CheckResult:
    sc = ctx.sc
    F = ctx.face_foliation()
    S = sc.surface
    n = S.n
    rng = sc.rng("foliation")
    k = sc.sampling.foliation_samples
    v = rng.standard_normal((k, n))
    v /= np.linalg.norm(v, axis=1)[:, None]
    v *= 0.5 * S.r0 * rng.random((k, 1)) ** (1 / n)
    v[:, 0] = np.abs(v[:, 0])
    s = rng.random(k) * 0.5 * F.delta
    q = S.embed(v, S.orientation * s)
    res = {}
    ok = True
    witness = None
    good = np.ones(k, dtype=bool)
    if n >= 2:
        fi = frame_identity_residuals(F, q).max(axis=1)
        good &= fi < 1e-3
        res["frame_identity_max"] = float(fi.max())
        res["frame_identity_median"] = float(np.median(fi))
        if fi.max() >= 1e-3:
            ok, witness = False, {"point": q[int(np.argmax(fi))], "residual": float(fi.max())}
    ps = psi(F, q, max_residual=np.inf)
    good &= ps.value > 0
    res["psi_min"] = float(ps.value.min())
    res["grad_s_residual_max"] = float(ps.residual.max())
    if ps.value.min() <= 0 and ok:
        ok, witness = False, {"point": q[int(np.argmin(ps.value))], "psi": float(ps.value.min())}
    yb = np.zeros((sc.sampling.boundary_samples, n))
    if n > 1:
        yb[:, 1] = np.linspace(-0.5 * S.r0, 0.5 * S.r0, len(yb))
    sb = np.linspace(0, 0.5 * F.delta, len(yb))
    bq = S.embed(yb, S.orientation * sb)
    bt = boundary_tangency(F, bq)
    res["boundary_tangency_max"] = float(bt.max())
    if bt.max() > sc.tolerances.tau_orth and ok:
        ok, witness = False, {"boundary_tangency": float(bt.max())}
    # largest delta on the halving ladder whose leaves fit the chart and whose samples pass
    best = None
    for j in range(4):
        d = F.delta / 2**j
        fits = True
        try:
            build_foliation(ctx.domain, S, sc.p, d, sc.tolerances.tau_orth, F.fd_step)
        except FoliationError:
            fits = False
        if fits and np.all(good[s <= 0.5 * d]) and np.all(bt[sb <= 0.5 * d] <= sc.tolerances.tau_orth):
            best = d
            break
    res["delta_max_passing"] = best
    return CheckResult("foliation", "pass" if ok else "fail", res, witness, {"delta": F.delta, "fd_step": F.fd_step})


def _boundary_points(ctx: Context, eps):
    sc = ctx.sc
    B, _ = ctx.barrier(eps)
    S = sc.surface
    nb = sc.sampling.boundary_samples
    yb = np.zeros((nb, S.n))
    if S.n > 1:
        yb[:, 1] = np.linspace(-sc.sampling.lemma33_radius, sc.sampling.lemma33_radius, nb)
    return B.graph.embed(yb, S.orientation * np.linspace(0, 0.9 * eps, nb))


def check_barrier(ctx: Context) -> CheckResult:
    sc = ctx.sc
    per = {}
    ok = True
    witness = None
    tol = sc.tolerances.tau_orth
    for eps in sc.epsilon:
        try:
            B, rep = ctx.barrier(eps)
        except BarrierError as exc:
            per[repr(eps)] = {"error": str(exc)}
            ok, witness = False, {"epsilon": eps, "error": str(exc)}
            continue
        F = ctx.barrier_foliation(eps)
        bq = _boundary_points(ctx, eps)
        ps = psi(F, bq, max_residual=np.inf)
        dev = float(np.max(np.abs(ps.value - 1)))
        tang = float(is_tangential(F.chart, lambda x: test_field(F, CutoffProfile(eps), x), bq))
        per[repr(eps)] = {
            "a2": B.a2,
            "a3": B.a3,
            "u": B.source,
            "min_gap": rep.min_gap,
            "argmin": rep.argmin,
            "boundary_min_gap": rep.boundary_min,
            "zero_set_radius": rep.zero_set_radius,
            "tangential_hessian_of_f": rep.tangential_hessian,
            "psi_boundary_deviation": dev,
            "grad_s_residual_max": float(ps.residual.max()),
            "field_tangency_max": tang,
        }
        bad = None
        if not rep.ok:
            bad = {"epsilon": eps, "zero_set_radius": rep.zero_set_radius}
        elif dev > tol or ps.residual.max() > tol:
            bad = {"epsilon": eps, "point": bq[int(np.argmax(np.abs(ps.value - 1)))], "psi_deviation": dev}
        elif tang > tol:
            bad = {"epsilon": eps, "field_tangency": tang}
        if bad and ok:
            ok, witness = False, bad
    return CheckResult("barrier", "pass" if ok else "fail", {}, witness, {"per_epsilon": per})


def check_lemma33(ctx: Context) -> CheckResult:
    sc = ctx.sc
    rows = []
    ok = True
    witness = None
    worst = -math.inf
    for eps in sc.epsilon:
        forms = ctx.forms(eps)
        K = ctx.K(eps)["K"]
        mism = max(f.mismatch for f in forms)
        for m in sc.m:
            rep = lemma33_from_forms(forms, m, eps, K)
            d = rep.summary()
            d["q_mismatch_max"] = mism
            rows.append(d)
            worst = max(worst, rep.worst_trace)
            if not rep.verdict and ok:
                ok, witness = False, {"epsilon": eps, "m": m, "point": rep.worst_point, "max_trace": rep.worst_trace}
    return CheckResult("lemma33", "pass" if ok else "fail", {"worst_trace": worst}, witness, {"runs": rows})


def check_lemma34(ctx: Context) -> CheckResult:
    sc = ctx.sc
    n = sc.surface.n
    rows = []
    ok = True
    witness = None
    for eps in sc.epsilon:
        Kd = ctx.K(eps)
        K = Kd["K"]
        thr = 1 / math.sqrt(2 * K) if K > 0 else math.inf
        row = {"epsilon": eps, **Kd, "threshold": thr}
        if eps < thr:
            th, Fs = lemma34_max(K, n, eps)
            row.update(theta_star=th, F_star=Fs)
        else:
            row.update(theta_star=None, F_star=None)
            if ok:
                ok, witness = False, {"epsilon": eps, "threshold": thr}
        rows.append(row)
    return CheckResult("lemma34", "pass" if ok else "fail", {}, witness, {"n": n, "runs": rows})


def check_first_variation(ctx: Context) -> CheckResult:
    sc = ctx.sc
    eps = sc.epsilon[0]
    F = ctx.barrier_foliation(eps)
    c = CutoffProfile(eps)

    def X(x):
        return test_field(F, c, x)

    tang = float(is_tangential(F.chart, X, _boundary_points(ctx, eps)))
    sup_phi = math.exp(-1 / eps)
    rows = []
    ok = tang < sc.tolerances.tau_orth
    witness = None if ok else {"field_tangency": tang}
    for m in sc.m:
        for name, V in sc.varifolds(m):
            rep = first_variation(V, X)
            mass = V.mass()
            tau = sc.tolerances.tau_neg * mass * sup_phi
            dist = float(np.min(np.linalg.norm(V.vertices() - sc.p, axis=1)))
            neg = rep.total < -tau
            rows.append(
                {"m": m, "varifold": name, "first_variation": rep.total, "richardson": rep.richardson,
                 "reliable": rep.reliable, "mass": mass, "tau_neg": tau, "negative": neg, "distance_to_p": dist}
            )
            if not (neg and dist <= 1e-3) and ok:
                ok, witness = False, {"varifold": name, "first_variation": rep.total, "tau_neg": tau}
    if not rows and ok:
        ok, witness = False, {"error": "no touching varifolds configured"}
    return CheckResult("first_variation", "pass" if ok else "fail", {"tangential_residual": tang}, witness,
                       {"epsilon": eps, "varifolds": rows})


RUNNERS = {
    "orthogonality": check_orthogonality_,
    "strong_m_convexity": check_convexity,
    "foliation": check_foliation,
    "barrier": check_barrier,
    "lemma33": check_lemma33,
    "lemma34": check_lemma34,
    "first_variation": check_first_variation,
}


def run_checks(sc: Scenario, checks=CHECKS, threads: int = 1):
    """Run checks in dependency order; returns (results, timings)."""
    unknown = set(checks) - set(CHECKS)
    if unknown:
        raise ScenarioError(f"unknown checks: {sorted(unknown)}")
    ctx = Context(sc, threads)
    results: dict[str, CheckResult] = {}
    timings = {}
    for name in CHECKS:
        if name not in checks:
            continue
        blocked = [d for d in DEPENDS.get(name, ()) if d in results and results[d].verdict != "pass"]
        if blocked:
            results[name] = CheckResult(name, "skipped", details={"blocked_by": blocked})
            continue
        t0 = time.perf_counter()
        try:
            results[name] = RUNNERS[name](ctx)
        except (FoliationError, BarrierError, NumericalError) as exc:
            results[name] = CheckResult(name, "fail", witness={"error": str(exc)})
        timings[name] = time.perf_counter() - t0
    return [results[n] for n in CHECKS if n in results], timings


def build_report(sc: Scenario, results, timings, total) -> dict:
    failed = [r.name for r in results if r.verdict == "fail"]
    return _clean(
        {
            "schema_version": REPORT_VERSION,
            "scenario": sc.name,
            "seed": sc.seed,
            "summary": {r.name: r.verdict for r in results},
            "failed_gate": failed[0] if failed else None,
            "checks": [r.as_dict() for r in results],
            "environment": {
                "fbmax": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
            },
            "timing": {"total_seconds": total, "checks": timings},
        }
    )


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def canonical(report: dict) -> str:
    """Serialized report without the timing block (the determinism canon)."""
    return dumps({k: v for k, v in report.items() if k != "timing"})


def run(scenario_file, checks=None, out_dir=".", seed=None, threads=1, stream=sys.stdout) -> int:
    try:
        sc = load(resolve(str(scenario_file)))
        if seed is not None:
            sc = sc.with_overrides(seed=seed)
        t0 = time.perf_counter()
        results, timings = run_checks(sc, tuple(checks) if checks else CHECKS, threads)
    except (ScenarioError, ExprError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report = build_report(sc, results, timings, time.perf_counter() - t0)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report))
    for r in results:
        print(f"{r.name:20s} {r.verdict}", file=stream)
    if report["failed_gate"]:
        print(f"failed gate: {report['failed_gate']}", file=stream)
        return 1
    return 0


# -- sweeps -----------------------------------------------------------------------


def sweep_rows(sc: Scenario, param: str, values, threads: int = 1) -> tuple[tuple, list]:
    rows = []
    if param == "epsilon":
        for eps in values:
            s2 = sc.with_overrides(epsilon=[eps])
            ctx = Context(s2, threads)
            forms = ctx.forms(eps)
            K = ctx.K(eps)["K"]
            worst = max(lemma33_from_forms(forms, m, eps, K).worst_trace for m in s2.m)
            th = Fs = math.nan
            if K == 0 or eps < 1 / math.sqrt(2 * K):
                th, Fs = lemma34_max(K, s2.surface.n, eps)
            fv = check_first_variation(ctx)
            dv = max(r["first_variation"] for r in fv.details["varifolds"])
            rows.append((eps, K, th, Fs, worst, worst < 0, dv, fv.residuals["tangential_residual"]))
        return EPS_COLUMNS, rows
    if param == "fd_step":
        for h in values:
            s2 = sc.with_overrides(foliation_fd_step=h)
            ctx = Context(s2, threads)
            fol = check_foliation(ctx)
            eps = s2.epsilon[0]
            F = ctx.barrier_foliation(eps)
            dev = float(np.max(np.abs(psi(F, _boundary_points(ctx, eps), max_residual=np.inf).value - 1)))
            rows.append((h, fol.residuals.get("frame_identity_median", math.nan), fol.residuals.get("frame_identity_max", math.nan), dev))
        return FD_COLUMNS, rows
    if param == "refine":
        for v in values:
            if float(v) != int(v):
                raise ScenarioError("refine values must be integers")
            s2 = sc.with_overrides(resolution=int(v))
            fv = check_first_variation(Context(s2, threads))
            var = fv.details["varifolds"]
            rows.append((int(v), max(r["first_variation"] for r in var), max(r["richardson"] for r in var), math.fsum(r["mass"] for r in var)))
        return REFINE_COLUMNS, rows
    raise ScenarioError(f"unknown sweep parameter '{param}'")


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float) and not math.isfinite(v):
        return "nan"
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def sweep(scenario_file, param, values, out_csv, seed=None, threads=1) -> int:
    try:
        if not values:
            raise ScenarioError("empty value list")
        if any(not (v > 0) for v in values):
            raise ScenarioError("sweep values must be positive")
        sc = load(resolve(str(scenario_file)))
        if seed is not None:
            sc = sc.with_overrides(seed=seed)
        cols, rows = sweep_rows(sc, param, values, threads)
    except (ScenarioError, ExprError, ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FoliationError, BarrierError, NumericalError, GeometryError) as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 1
    out = Path(out_csv)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return 0


def _values(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad value list: {text}") from exc


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="fbmax", description="Free boundary maximum principle checks.")
    ap.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    ap.add_argument("--threads", type=int, default=1)
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run checks on a scenario file or bundled scenario name")
    r.add_argument("scenario")
    r.add_argument("--checks", default=None, help="comma separated subset of: " + ",".join(CHECKS))
    r.add_argument("--out", default=".")
    s = sub.add_parser("sweep", help="sweep one parameter and write a CSV")
    s.add_argument("scenario")
    s.add_argument("--param", required=True, choices=("epsilon", "fd_step", "refine"))
    s.add_argument("--values", required=True, type=_values)
    s.add_argument("--out", required=True)
    for p in (r, s):
        p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
        p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    if args.cmd == "run":
        checks = [c.strip() for c in args.checks.split(",")] if args.checks else None
        if checks and set(checks) - set(CHECKS):
            print(f"error: unknown checks {sorted(set(checks) - set(CHECKS))}", file=sys.stderr)
            return 2
        return run(args.scenario, checks, args.out, args.seed, args.threads)
    return sweep(args.scenario, args.param, args.values, args.out, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
