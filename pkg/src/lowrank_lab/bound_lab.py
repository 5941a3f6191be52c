"""Experiment orchestration: build a problem, run the iteration, measure the
decay of the limit tensor, evaluate every bound curve and certify dominance.

Each ``run_*`` function takes an :class:`~lowrank_lab.config.ExperimentConfig`
and returns a :class:`DecayReport`. Reports serialize to one JSON document
plus flat CSV files and are reproducible from the config alone, apart from
the ``environment.timestamp`` field.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import (
    ExperimentConfig,
    build_operator,
    build_rhs,
    build_tensor,
    resolve_splittings,
)
from .eigen import (
    bound_thm41,
    bound_thm42,
    eigen_rank_factor,
    leading_rank_one,
    make_setup,
    pi1_upper_bounds,
    random_admissible_start,
    rank_one_start,
    shifted_richardson_run,
    theta_bound_thm42,
    overlap_exponent,
    two_step_rank_probe,
)
from .errors import ConfigError, ShapeError
from .kron_operator import (
    DENSE_GUARD,
    KronSumOperator,
    apply,
    build_model,
    laplace_nn_bounds,
    operator_t_rank,
    reshuffled_rank,
    spectral_interval,
)
from .richardson import (
    Q_ZERO,
    IterationTrace,
    SpectralData,
    _fmt,
    bound_simplified,
    bound_thm21_full,
    bound_thm31,
    commuting_rank_bound,
    contraction_rate,
    decay_exponent,
    dense_solve,
    richardson_rank_factor,
    richardson_run,
    sv_bound_eq27,
)
from .tensor_core import (
    Splitting,
    Tensor,
    overlap_theta,
    singular_spectrum,
    t_rank,
    von_neumann_entropy,
)

DOMINANCE_RTOL = 1e-9
# bounds that are exactly zero (q = 0, rank-one limits) are compared with an
# absolute allowance of this many units of |u|
ROUNDOFF_ATOL = 1e-12
SLOPE_SLACK = 0.05
OVERLAP_TOL = 1e-10
DEFAULT_OUT = "lowrank_lab_out"
OUT_ENV = "LOWRANK_LAB_OUT"

TAU_BOUNDS = ("bound_thm21_full", "bound_simplified", "bound_main")
CURVE_COLUMNS = ("r", "measured") + TAU_BOUNDS + ("bound_eq27", "verdict", "sigma_sq")


# -- dominance ---------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    """Outcome of a dominance check.

    ``per_r[i]`` is True/False, or None where the bound is absent.
    ``worst_margin`` is the smallest ``bound - measured`` over checked
    entries and ``worst_index`` its position.
    """

    passed: bool
    per_r: list
    worst_margin: Optional[float]
    worst_index: Optional[int]

    def as_dict(self) -> dict:
        return {"passed": self.passed, "worst_margin": self.worst_margin,
                "worst_index": self.worst_index}


def certify_dominance(measured: Sequence, bound: Sequence, rtol: float = DOMINANCE_RTOL,
                      atol: float = 0.0) -> Verdict:
    """PASS iff ``measured[i] <= bound[i] (1 + rtol) + atol`` wherever a bound exists."""
    if len(measured) != len(bound):
        raise ShapeError(f"{len(measured)} measured values against {len(bound)} bound values")
    per_r, worst, worst_i = [], None, None
    for i, (m, b) in enumerate(zip(measured, bound)):
        if b is None or (isinstance(b, float) and math.isnan(b)):
            per_r.append(None)
            continue
        per_r.append(bool(m <= b * (1.0 + rtol) + atol))
        margin = float(b) - float(m)
        if worst is None or margin < worst:
            worst, worst_i = margin, i
    return Verdict(all(p is not False for p in per_r), per_r, worst, worst_i)


# -- report ------------------------------------------------------------------


@dataclass
class DecayReport:
    """Everything one experiment measured and certified."""

    name: str
    mode: str
    config: dict
    seed: Optional[int]
    spectral: dict = field(default_factory=dict)
    splittings: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    trace: Optional[IterationTrace] = None
    timestamp: str = ""

    def check(self, name: str, passed: Optional[bool], **detail):
        self.checks[name] = {"passed": None if passed is None else bool(passed), **detail}

    @property
    def passed(self) -> bool:
        checks_ok = all(c["passed"] is not False for c in self.checks.values())
        curves_ok = all(
            v["passed"] is not False
            for entry in self.splittings
            for v in entry.get("verdicts", {}).values()
        )
        return checks_ok and curves_ok

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def failures(self) -> list:
        out = [k for k, c in self.checks.items() if c["passed"] is False]
        for entry in self.splittings:
            out += [f"{entry['splitting']}:{k}" for k, v in entry.get("verdicts", {}).items()
                    if v["passed"] is False]
        return out

    def as_dict(self) -> dict:
        doc = {
            "name": self.name,
            "mode": self.mode,
            "verdict": self.verdict,
            "environment": {"seed": self.seed, "version": __version__,
                            "timestamp": self.timestamp},
            "tolerance": {"rtol": DOMINANCE_RTOL, "atol_per_norm": ROUNDOFF_ATOL,
                          "eps_rank": self.config.get("eps_rank")},
            "config": self.config,
            "spectral": self.spectral,
            "checks": self.checks,
            "splittings": self.splittings,
            "tables": self.tables,
            "notes": self.notes,
        }
        if self.trace is not None:
            doc["trace"] = {
                "errors": self.trace.errors,
                "residuals": self.trace.residuals,
                "ranks": self.trace.ranks,
                "rank_bounds": self.trace.rank_bounds,
                "rank_factors": self.trace.rank_factors,
            }
        return _jsonable(doc)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, allow_nan=False) + "\n"

    def write(self, out_dir) -> list:
        """Write the JSON document and every CSV; returns the written paths."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{self.name}.json"]
        paths[0].write_text(self.to_json())
        for entry in self.splittings:
            if "curve" in entry:
                p = out / f"{self.name}_curve_{entry['splitting']}.csv"
                p.write_text(curve_csv(entry["curve"]))
                paths.append(p)
        if self.trace is not None:
            p = out / f"{self.name}_trace.csv"
            self.trace.to_csv(p)
            paths.append(p)
        for tname, table in self.tables.items():
            p = out / f"{self.name}_{tname}.csv"
            p.write_text(_table_csv(table["columns"], table["rows"]))
            paths.append(p)
        return paths


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def _cell(x) -> str:
    if isinstance(x, bool):
        return "PASS" if x else "FAIL"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _fmt(x) if math.isfinite(x) else ""
    return "" if x is None else str(x)


def _table_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def curve_csv(curve: dict) -> str:
    """Flat CSV of a curve dict (column name to list of values)."""
    columns = list(curve)
    rows = zip(*(curve[c] for c in columns))
    return _table_csv(columns, rows)


# -- curve assembly ----------------------------------------------------------


def _spectrum_entry(u: Tensor, t: Splitting, eps_rank: float) -> tuple:
    spec = singular_spectrum(u, t)
    ent = von_neumann_entropy(u, t)
    norm = u.norm()
    entry = {
        "splitting": t.label,
        "t": list(t.t),
        "D": spec.D,
        "norm": norm,
        "rank": spec.rank(eps_rank),
        "sigma": spec.values,
        "tau": spec.tails(),
        "entropy": {"sum_p_log_p": ent.sum_p_log_p, "conventional": ent.conventional},
        "theta": overlap_theta(u, t) if norm > 0 else None,
    }
    return spec, entry


def _build_curve(spec, curves: dict, extras: Optional[dict] = None, atol: float = 0.0):
    """Curve columns over ``r = 1..D`` plus dominance verdicts.

    ``curves`` maps the tau-bound names (and ``bound_eq27``) to lists
    indexed by ``r - 1``; missing entries are None. ``extras`` are further
    tau-bound curves certified the same way.
    """
    D = spec.D
    rs = list(range(1, D + 1))
    tau = [spec.tail(r) for r in rs]
    sig2 = [float(spec.values[r - 1]) ** 2 for r in rs]
    curve = {"r": rs, "measured": tau}
    verdicts = {}
    tau_curves = {name: curves.get(name) or [None] * D for name in TAU_BOUNDS}
    tau_curves.update(extras or {})
    for name, values in tau_curves.items():
        if name in TAU_BOUNDS:
            curve[name] = values
        if any(v is not None for v in values):
            verdicts[name] = certify_dominance(tau, values, atol=atol)
    eq27 = curves.get("bound_eq27") or [None] * D
    curve["bound_eq27"] = eq27
    if any(v is not None for v in eq27):
        verdicts["bound_eq27"] = certify_dominance(sig2, eq27, atol=atol * atol)
    per_row = []
    for i in range(D):
        flags = [v.per_r[i] for v in verdicts.values()]
        per_row.append(None if all(f is None for f in flags) else all(f is not False for f in flags))
    curve["verdict"] = ["" if f is None else ("PASS" if f else "FAIL") for f in per_row]
    curve["sigma_sq"] = sig2
    for name, values in (extras or {}).items():
        curve[name] = values
    return curve, {k: v.as_dict() for k, v in verdicts.items()}


def _tau_curves(D: int, q: float, R, c: float, pi1: float, main=None) -> dict:
    """Tau-bound curves plus the singular-value curve; ``main`` defaults to simplified."""
    rs = range(1, D + 1)
    if q < Q_ZERO:
        full = [bound_thm21_full(r, 0.0, R, c, pi1) for r in rs]
        return {"bound_thm21_full": full, "bound_simplified": None,
                "bound_main": full if main is None else main, "bound_eq27": None}
    simp = [bound_simplified(r, q, R, c, pi1) for r in rs]
    return {
        "bound_thm21_full": [bound_thm21_full(r, q, R, c, pi1) for r in rs],
        "bound_simplified": simp,
        "bound_main": simp if main is None else main,
        "bound_eq27": [None] + [sv_bound_eq27(r, q, R, c, pi1) for r in range(2, D + 1)],
    }


def _anchor_exact(q: float, R: int, pi1: float, D: int) -> bool:
    """The full bound equals ``pi1 q^n`` exactly at every ``r = R^n <= D``."""
    n, r = 0, 1
    ok = True
    while r <= max(D, R):
        ok &= bound_thm21_full(r, q, R, 1.0, pi1) == pi1 * q**n
        n, r = n + 1, r * R
    return bool(ok)


def _new_report(cfg: ExperimentConfig) -> DecayReport:
    return DecayReport(
        name=cfg.name,
        mode=cfg.mode,
        config=cfg.as_dict(),
        seed=cfg.seed,
        timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


def _start(cfg: ExperimentConfig, dims, u_star: Optional[Tensor] = None):
    kind = cfg.start.get("kind", "zero")
    if kind == "zero":
        return Tensor.zeros(dims)
    if kind == "random":
        seed = cfg.sub_seed(cfg.start, 2)
        if seed is None:
            raise ConfigError("random start without a seed", reason="seed_missing")
        rng = np.random.default_rng(seed)
        if u_star is not None and cfg.mode == "eigen":
            return random_admissible_start(u_star, rng)
        return Tensor.rank_one([rng.standard_normal(n) for n in dims])
    raise ConfigError(f"unknown start kind {kind!r} for mode {cfg.mode}", reason="unknown_start_kind")


# -- linear systems ------------------------------------------------------------


def run_linear_experiment(cfg: ExperimentConfig) -> DecayReport:
    """Richardson run and tail-bound certification for ``A u = b``."""
    report = _new_report(cfg)
    A = build_operator(cfg)
    rhs = build_rhs(cfg, A)
    splittings = resolve_splittings(cfg, A.order)
    spectral = SpectralData.of(A)
    u_star = dense_solve(A, rhs.b)
    norm = u_star.norm()
    rel_res = (apply(A, u_star) - rhs.b).norm() / max(rhs.b.norm(), np.finfo(float).tiny)
    report.spectral = {**spectral.as_dict(), "solve_residual": rel_res, "norm_u": norm}
    report.check("solve_residual", rel_res <= 1e-12, value=rel_res)

    u0 = _start(cfg, A.dims)
    trace = richardson_run(A, rhs.b, u0, cfg.n_steps, splittings, spectral=spectral,
                           u_star=u_star, eps_rank=cfg.eps_rank)
    report.trace = trace
    report.check("contraction", trace.contraction_holds(), max_ratio=max(trace.contraction_ratios(), default=0.0))
    report.check("rank_law", trace.rank_law_holds() and trace.stepwise_rank_law_holds())

    q = spectral.q
    if q < Q_ZERO:
        report.notes.append("kappa = 1: the iteration converges in one step (q = 0); "
                            "the 1/q bounds are replaced by the q = 0 limit of the full bound")
    atol = ROUNDOFF_ATOL * norm
    anchors = []
    for t in splittings:
        spec, entry = _spectrum_entry(u_star, t, cfg.eps_rank)
        rf = richardson_rank_factor(A, t, cfg.eps_rank)
        r_b = t_rank(rhs.b, t, cfg.eps_rank)
        entry.update(r_A=rf.r_A, R=rf.R, identity_refined=rf.refined, r_b=r_b, c=1.0, pi1=norm)
        D = spec.D
        curves = None
        if r_b > rf.r_A:
            chunks = rhs.chunks or ()
            if chunks and all(t_rank(c, t, cfg.eps_rank) <= rf.r_A for c in chunks) and q >= Q_ZERO:
                parts = [dense_solve(A, c).norm() for c in chunks]
                m = len(parts)
                main = [norm if r < m else sum(bound_thm31(r // m, q, rf.R, p) for p in parts)
                        for r in range(1, D + 1)]
                curves = {"bound_main": main}
                entry["chunks"] = m
                report.notes.append(f"{t.label}: r_b = {r_b} > r_A = {rf.r_A}; "
                                    f"superposition bound over {m} chunks")
            else:
                entry["precondition"] = "unmet"
                report.notes.append(f"{t.label}: r_b = {r_b} exceeds r_A = {rf.r_A} and no "
                                    "admissible chunking is configured; bounds skipped")
        else:
            curves = _tau_curves(D, q, rf.R, 1.0, norm)
            if q >= Q_ZERO:
                curves["bound_main"] = [bound_thm31(r, q, rf.R, norm) for r in range(1, D + 1)]
                anchors.append(_anchor_exact(q, rf.R, norm, D))
        if curves is not None:
            entry["curve"], entry["verdicts"] = _build_curve(spec, curves, atol=atol)
        report.splittings.append(entry)
    if anchors:
        report.check("anchor_exact", all(anchors))
    return report


# -- commuting (pure Kronecker sum) -------------------------------------------


def is_commuting_sum(A: KronSumOperator) -> bool:
    """True when every term has at most one non-identity factor."""
    return all(sum(not f for f in term.identity_flags) <= 1 for term in A.terms)


def run_commuting_experiment(cfg: ExperimentConfig) -> DecayReport:
    """Additive rank growth and geometric tail decay for a pure Kronecker sum."""
    report = _new_report(cfg)
    A = build_operator(cfg)
    if not is_commuting_sum(A):
        raise ConfigError("the commuting experiment needs a pure Kronecker sum (V = 0)",
                          reason="not_commuting")
    rhs = build_rhs(cfg, A)
    splittings = resolve_splittings(cfg, A.order)
    spectral = SpectralData.of(A)
    u_star = dense_solve(A, rhs.b)
    norm = u_star.norm()
    report.spectral = {**spectral.as_dict(), "norm_u": norm}
    u0 = _start(cfg, A.dims)
    trace = richardson_run(A, rhs.b, u0, cfg.n_steps, splittings, spectral=spectral,
                           u_star=u_star, eps_rank=cfg.eps_rank)
    report.trace = trace
    report.check("contraction", trace.contraction_holds())

    q = spectral.q
    e0 = (u0 - u_star).norm()
    atol = ROUNDOFF_ATOL * norm
    additive_ok = True
    slope_ok = []
    anchor_rows = []
    for t in splittings:
        lab = t.label
        r0 = t_rank(u0, t, cfg.eps_rank)
        rb = t_rank(rhs.b, t, cfg.eps_rank)
        bounds = [commuting_rank_bound(n, r0, rb) for n in range(trace.n_steps + 1)]
        trace.rank_bounds[lab] = bounds
        additive_ok &= all(r <= b for r, b in zip(trace.ranks[lab], bounds))

        spec, entry = _spectrum_entry(u_star, t, cfg.eps_rank)
        rf = richardson_rank_factor(A, t, cfg.eps_rank)
        entry.update(r_A=rf.r_A, R=rf.R, identity_refined=rf.refined, r0=r0, r_b=rb)
        D = spec.D

        # tau_{rank(u_n)}(u) <= |u_n - u| <= q^n |u0 - u|: invert the rank law in r
        def main_bound(r):
            n = -1
            while commuting_rank_bound(n + 1, r0, rb) <= r and n + 1 <= 10 * D + 10:
                n += 1
            return norm if n < 0 else min(norm, q**n * e0)

        curves = _tau_curves(D, q, rf.R, 1.0, norm, main=[main_bound(r) for r in range(1, D + 1)])
        entry["curve"], entry["verdicts"] = _build_curve(spec, curves, atol=atol)

        ns, logs = [], []
        for n in range(1, trace.n_steps + 1):
            k = trace.ranks[lab][n]
            if k >= D:
                break
            a = spec.tail(k)
            if a <= 1e-12 * norm:
                break
            anchor_rows.append([lab, n, k, a, trace.errors[n], q**n * e0])
            ns.append(n)
            logs.append(math.log(a))
        if len(ns) >= 2 and q >= Q_ZERO:
            slope = float(np.polyfit(ns, logs, 1)[0])
            entry["anchor_slope"] = slope
            entry["verdicts"]["anchor_slope"] = {
                "passed": bool(slope <= math.log(q) + SLOPE_SLACK),
                "worst_margin": math.log(q) + SLOPE_SLACK - slope, "worst_index": None,
            }
            slope_ok.append(slope <= math.log(q) + SLOPE_SLACK)
        else:
            entry["anchor_slope"] = None
            report.notes.append(f"{lab}: fewer than two anchors above round-off; slope not fitted")
        report.splittings.append(entry)

    report.check("additive_rank_law", additive_ok)
    report.check("anchor_dominance", all(row[3] <= row[4] * (1 + DOMINANCE_RTOL) + atol
                                         for row in anchor_rows))
    report.check("anchor_slope", all(slope_ok) if slope_ok else None)
    report.tables["anchors"] = {
        "columns": ["splitting", "step", "rank", "tau_anchor", "error", "q_power_bound"],
        "rows": anchor_rows,
    }
    return report


# -- eigenvectors --------------------------------------------------------------


def run_eigen_experiment(cfg: ExperimentConfig) -> DecayReport:
    """Shifted iteration and tail-bound certification for the smallest eigenvector."""
    report = _new_report(cfg)
    A = build_operator(cfg)
    splittings = resolve_splittings(cfg, A.order)
    setup = make_setup(A)
    u_star = setup.u_star
    norm = u_star.norm()
    eig_res = (apply(A, u_star) - setup.lambda1 * u_star).norm()
    report.spectral = {**setup.as_dict(), "eigen_residual": eig_res}
    report.check("eigen_residual", eig_res <= 1e-10, value=eig_res)
    q = setup.q

    kind = cfg.start.get("kind", "leading_pair")
    if kind == "leading_pair":
        t0 = splittings[0]
        u0 = rank_one_start(u_star, leading_rank_one(u_star, t0), t0)
    else:
        u0 = _start(cfg, A.dims, u_star)
    trace = shifted_richardson_run(setup, A, u0, cfg.n_steps, splittings, eps_rank=cfg.eps_rank)
    report.trace = trace
    ov = trace.extra["overlap"]
    drift = max(abs(b - a) for a, b in zip(ov[:-1], ov[1:])) if len(ov) > 1 else 0.0
    report.check("overlap_conservation", drift <= OVERLAP_TOL, max_step_drift=drift)
    report.check("contraction", trace.contraction_holds())
    report.check("rank_law", trace.rank_law_holds() and trace.stepwise_rank_law_holds())

    atol = ROUNDOFF_ATOL * norm
    theta_checks, order_checks = [], []
    for t in splittings:
        spec, entry = _spectrum_entry(u_star, t, cfg.eps_rank)
        rf = eigen_rank_factor(A, t, cfg.eps_rank)
        pi = pi1_upper_bounds(u_star, t)
        entry.update(r_A=rf.r_A, R=rf.R, identity_refined=rf.refined, c=1.0,
                     pi1={"via_theta": pi.via_theta, "naive": pi.naive,
                          "constructive": pi.constructive})
        slack = 1e-12 * pi.naive
        ordered = pi.constructive <= pi.via_theta + slack and pi.via_theta <= pi.naive + slack
        order_checks.append(ordered)
        D = spec.D
        rs = range(1, D + 1)
        if rf.R <= 1:
            entry["hypothesis"] = "R = 1: the iteration preserves t-rank one"
            curves = {"bound_main": [0.0] * D}
            extras = {}
        elif q < Q_ZERO:
            report.notes.append(f"{t.label}: q = 0, the shifted step is exact after one step")
            curves = _tau_curves(D, 0.0, rf.R, 1.0, pi.via_theta)
            extras = {}
        else:
            curves = _tau_curves(D, q, rf.R, 1.0, pi.via_theta,
                                 main=[bound_thm41(r, q, rf.R, pi.via_theta) for r in rs])
            extras = {
                "bound_thm41_naive": [bound_thm41(r, q, rf.R, pi.naive) for r in rs],
                "bound_thm41_constructive": [bound_thm41(r, q, rf.R, pi.constructive) for r in rs],
            }
            q2R = q * q * rf.R
            entry["q2R"] = q2R
            if q2R < 1.0:
                tb = theta_bound_thm42(q, rf.R)
                entry.update(overlap_exponent=overlap_exponent(q, rf.R), theta_bound=tb)
                extras["bound_thm42"] = [bound_thm42(r, q, rf.R, norm) for r in rs]
                ok = entry["theta"] ** 2 >= tb**2 * (1 - DOMINANCE_RTOL)
                theta_checks.append(ok)
            else:
                entry["hypothesis"] = "unmet"
                report.notes.append(f"{t.label}: q^2 R = {q2R:.6g} >= 1, theta-bound checks skipped")
        entry["curve"], entry["verdicts"] = _build_curve(spec, curves, extras, atol=atol)
        report.splittings.append(entry)

    report.check("pi1_ordering", all(order_checks))
    report.check("theta_consistency", all(theta_checks) if theta_checks else None,
                 instances=len(theta_checks))
    return report


# -- two-step rank growth--------------------------------------------------------


def run_two_step_experiment(cfg: ExperimentConfig) -> DecayReport:
    """Measured one- and two-step rank growth over seeded random instances."""
    report = _new_report(cfg)
    instances = int(cfg.two_step.get("instances", 50))
    samples = int(cfg.two_step.get("samples", 1))
    base = cfg.sub_seed(cfg.problem, 0)
    if base is None:
        raise ConfigError("two_step needs a seed", reason="seed_missing")
    rng = np.random.default_rng(cfg.sub_seed(cfg.two_step, 2))
    rows = []
    max_one = max_two = 0.0
    for k in range(instances):
        A = build_operator(cfg, seed=base + k)
        setup = make_setup(A)
        t = Splitting((1,), A.order)
        probe = two_step_rank_probe(A, setup, t, samples, rng, cfg.eps_rank)
        max_one = max(max_one, probe.max_one_step)
        max_two = max(max_two, probe.max_two_step)
        rows.append([k, base + k, setup.lambda1, setup.Delta, probe.max_one_step, probe.max_two_step])
    report.spectral = {"instances": instances, "samples": samples}
    report.check("one_step_cap", max_one <= 3, measured=max_one, cap=3)
    report.check("two_step_cap", max_two <= 6, measured=max_two, cap=6, naive_cap=9)
    report.tables["two_step"] = {
        "columns": ["instance", "seed", "lambda1", "Delta", "one_step_factor", "two_step_factor"],
        "rows": rows,
    }
    return report


# -- spectrum utility ------------------------------------------------------------


def run_spectrum(cfg: ExperimentConfig) -> DecayReport:
    """Singular spectra of a tensor with the quantities derived from them.

    The tensor is ``cfg.tensor`` when given, else the solution of the
    configured linear system.
    """
    report = _new_report(cfg)
    if cfg.tensor:
        u = build_tensor(cfg)
    else:
        A = build_operator(cfg)
        u = dense_solve(A, build_rhs(cfg, A).b)
    splittings = resolve_splittings(cfg, u.order)
    parseval = []
    for t in splittings:
        spec, entry = _spectrum_entry(u, t, cfg.eps_rank)
        err = abs(float(np.sum(spec.values**2)) - u.norm() ** 2)
        parseval.append(err <= 1e-10 * max(u.norm() ** 2, np.finfo(float).tiny))
        entry["curve"], entry["verdicts"] = _build_curve(spec, {})
        report.splittings.append(entry)
    report.spectral = {"dims": list(u.dims), "norm": u.norm()}
    report.check("parseval", all(parseval))
    return report


# -- d sweep ---------------------------------------------------------------------


_SWEEP_KEYS = ("gamma_A", "Gamma_A", "Gamma_B", "Gamma_C")


def run_d_sweep(cfg: ExperimentConfig, d_list: Optional[Sequence[int]] = None) -> DecayReport:
    """Condition number and decay exponent of the Laplace-plus-neighbour
    family across orders ``d``, with structural checks where the dense guard allows."""
    report = _new_report(cfg)
    sweep = cfg.sweep
    d_list = [int(d) for d in (d_list if d_list is not None else sweep.get("d_list", range(2, 9)))]
    if not d_list or min(d_list) < 2:
        raise ConfigError("d_list must contain orders d >= 2", reason="config_bad_type")
    consts = {}
    for key in _SWEEP_KEYS:
        if key in sweep:
            consts[key] = float(sweep[key])
        elif key in cfg.problem:
            consts[key] = float(cfg.problem[key])
        else:
            raise ConfigError(f"sweep needs '{key}'", reason="config_missing_key")
    n = int(sweep.get("n", cfg.problem.get("n", 2)))
    dense_limit = int(sweep.get("dense_limit", DENSE_GUARD))
    base = cfg.sub_seed(cfg.problem, 0)
    gA, GA, GB, GC = (consts[k] for k in _SWEEP_KEYS)
    kappa_limit = (GA + GB * GC) / gA
    q_limit = contraction_rate(kappa_limit)
    exp_floor = abs(math.log(q_limit)) / math.log(5) if q_limit > 0 else None

    rows = []
    kappa_ok = exponent_ok = cert_ok = rank_ok = reshuffle_ok = tau_ok = True
    for d in d_list:
        gamma, Gamma = laplace_nn_bounds(d, gA, GA, GB, GC)
        kappa = Gamma / gamma
        q = contraction_rate(kappa)
        e5 = decay_exponent(q, 5) if q > 0 else None
        e4 = decay_exponent(q, 4) if q > 0 else None
        kappa_ok &= kappa <= kappa_limit * (1 + 1e-12)
        if exp_floor is not None and e5 is not None:
            exponent_ok &= e5 >= exp_floor * (1 - 1e-12)
        row = {"d": d, "kappa": kappa, "kappa_limit": kappa_limit, "q": q,
               "exponent_R5": e5, "exponent_R4": e4, "kappa_certified": None,
               "r_A_max": None, "median_splitting": None, "R_median": None,
               "tau_1": None, "tau_dominance": None}
        if n**d <= dense_limit:
            if base is None:
                raise ConfigError("the structural sweep checks need a seed", reason="seed_missing")
            A = build_model("laplace_plus_nn", {"d": d, "n": n, "seed": base + d, **consts})
            g, G = spectral_interval(A)
            kc = G / g
            row["kappa_certified"] = kc
            cert_ok &= kc <= kappa + 1e-8
            tt = Splitting.tt_family(d)
            ranks = [operator_t_rank(A, t, cfg.eps_rank) for t in tt]
            row["r_A_max"] = max(ranks)
            rank_ok &= max(ranks) <= 3
            if A.size <= int(sweep.get("reshuffle_limit", 256)):
                reshuffle_ok &= all(reshuffled_rank(A, t, cfg.eps_rank) == r for t, r in zip(tt, ranks))
            t_med = tt[d // 2 - 1]
            rf = richardson_rank_factor(A, t_med, cfg.eps_rank)
            b = Tensor.rank_one([np.ones(n) / math.sqrt(n) for _ in range(d)])
            u = dense_solve(A, b)
            spec = singular_spectrum(u, t_med)
            row.update(median_splitting=t_med.label, R_median=rf.R, tau_1=spec.tail(1))
            if q > 0:
                rs = range(1, spec.D + 1)
                v = certify_dominance([spec.tail(r) for r in rs],
                                      [bound_thm31(r, q, rf.R, u.norm()) for r in rs],
                                      atol=ROUNDOFF_ATOL * u.norm())
                row["tau_dominance"] = v.passed
                tau_ok &= v.passed
        rows.append(row)

    report.spectral = {"kappa_limit": kappa_limit, "q_limit": q_limit,
                       "exponent_floor_R5": exp_floor, "n": n, **consts}
    if exp_floor is None:
        report.notes.append("kappa(infinity) = 1: q = 0 and the exponent is unbounded")
    report.check("kappa_bounded", kappa_ok)
    report.check("exponent_bounded_below", exponent_ok if exp_floor is not None else None)
    report.check("kappa_certified", cert_ok)
    report.check("operator_t_rank_le_3", rank_ok)
    report.check("reshuffle_agreement", reshuffle_ok)
    report.check("median_tau_dominance", tau_ok)
    columns = list(rows[0]) if rows else []
    report.tables["d_sweep"] = {"columns": columns, "rows": [[r[c] for c in columns] for r in rows]}
    return report


# -- dispatch ------------------------------------------------------------------------


RUNNERS = {
    "linear": run_linear_experiment,
    "eigen": run_eigen_experiment,
    "commuting": run_commuting_experiment,
    "d_sweep": run_d_sweep,
    "two_step": run_two_step_experiment,
    "spectrum": run_spectrum,
}


def run_experiment(cfg: ExperimentConfig) -> DecayReport:
    return RUNNERS[cfg.mode](cfg)


def output_dir(cfg: ExperimentConfig, override=None) -> Path:
    """``override`` (the --out flag), then $LOWRANK_LAB_OUT, then the config, then a default."""
    for candidate in (override, os.environ.get(OUT_ENV), cfg.output_dir):
        if candidate:
            return Path(candidate)
    return Path(DEFAULT_OUT)


@dataclass(frozen=True)
class CellResult:
    name: str
    verdict: str
    failures: tuple
    paths: tuple
    notes: tuple


def run_cell(cfg: ExperimentConfig, out=None) -> CellResult:
    """Run one config cell and write its report."""
    report = run_experiment(cfg)
    paths = report.write(output_dir(cfg, out))
    return CellResult(report.name, report.verdict, tuple(report.failures()),
                      tuple(str(p) for p in paths), tuple(report.notes))


def run_cells(cfgs: Sequence[ExperimentConfig], out=None, jobs: int = 1) -> list:
    """Run cells, in a process pool when ``jobs > 1``; results keep config order."""
    if jobs <= 1 or len(cfgs) <= 1:
        return [run_cell(c, out) for c in cfgs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(run_cell, cfgs, [out] * len(cfgs)))
