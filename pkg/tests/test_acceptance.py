"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run ``pytest tests/test_acceptance.py -v`` to see the lines next to the test
names. Every criterion also has a wall-clock budget that counts toward its
verdict.
"""

import math
import re
import time

import numpy as np
import pytest

from lowrank_lab.bound_lab import run_commuting_experiment, run_d_sweep, run_experiment, run_two_step_experiment
from lowrank_lab.config import ExperimentConfig, build_operator, build_rhs, load_configs
from lowrank_lab.eigen import (
    bound_thm41,
    bound_thm42,
    eigen_rank_factor,
    make_setup,
    pi1_upper_bounds,
    random_admissible_start,
    shifted_richardson_run,
    theta_bound_thm42,
    overlap_exponent,
)
from lowrank_lab.kron_operator import build_model, laplace_nn_bounds, operator_t_rank, reshuffled_rank
from lowrank_lab.richardson import SpectralData, bound_thm21_full, bound_thm31, dense_solve, richardson_run, sv_bound_eq27
from lowrank_lab.tensor_core import Splitting, Tensor, overlap_theta, singular_spectrum

from conftest import LNN_CONSTS, FIXTURES
from oracles import jacobi_singular_values, unfold_loop

RTOL = 1e-9
TIMESTAMP = re.compile(r'"timestamp": "[^"]*"')


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, started, budget, detail=""):
        elapsed = time.perf_counter() - started
        ok = bool(ok) and elapsed < budget
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({elapsed:.2f} s of {budget} s) {detail}")
        return ok

    return emit


def fixture_problem(name):
    (cfg,) = load_configs(FIXTURES / name)
    A = build_operator(cfg)
    return cfg, A, build_rhs(cfg, A).b


def test_criterion_1_parseval_and_svd_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_sv = worst_parseval = 0.0
    for _ in range(100):
        d = int(rng.integers(2, 5))
        dims = tuple(int(n) for n in rng.integers(1, 6, size=d))
        u = Tensor.random(dims, rng)
        size = int(rng.integers(1, d))
        t = Splitting(tuple(sorted(int(m) for m in rng.choice(np.arange(1, d + 1), size, replace=False))), d)
        spec = singular_spectrum(u, t)
        ref = jacobi_singular_values(unfold_loop(u.data, t.t))
        scale = max(ref[0], 1e-300)
        worst_sv = max(worst_sv, float(np.max(np.abs(spec.values - ref[: spec.values.size]))) / scale)
        norm_sq = float(np.sum(u.data**2))
        worst_parseval = max(worst_parseval, abs(float(np.sum(spec.values**2)) - norm_sq) / norm_sq)
    ok = worst_sv <= 1e-10 and worst_parseval <= 1e-10
    assert verdict(1, ok, start, 10, f"max sv dev {worst_sv:.1e}, max Parseval dev {worst_parseval:.1e}")


FIXTURE_PAIR = ("lyapunov.json", "laplace_nn.json")


def test_criterion_2_contraction_and_rank_law(verdict):
    start = time.perf_counter()
    ok = True
    details = []
    for name in FIXTURE_PAIR:
        cfg, A, b = fixture_problem(name)
        spectral = SpectralData.of(A)
        tr = richardson_run(A, b, None, 12, spectral=spectral)
        ok &= all(e1 <= (spectral.q + 1e-10) * e0 for e0, e1 in zip(tr.errors, tr.errors[1:]))
        ok &= all(
            r <= tr.rank_factors[t.label] ** n for t in tr.splittings for n, r in enumerate(tr.ranks[t.label])
        )
        details.append(f"{name}: q = {spectral.q:.4f}, R = {sorted(set(tr.rank_factors.values()))}")
    assert verdict(2, ok, start, 30, "; ".join(details))


def test_criterion_3_bound_dominance(verdict):
    start = time.perf_counter()
    ok = True
    details = []
    for name in FIXTURE_PAIR:
        cfg, A, b = fixture_problem(name)
        spectral = SpectralData.of(A)
        u = dense_solve(A, b)
        norm = u.norm()
        q = spectral.q
        worst = -math.inf
        for t in Splitting.tt_family(A.order):
            R = richardson_run(A, b, None, 0, [t], spectral=spectral, u_star=u).rank_factors[t.label]
            spec = singular_spectrum(u, t)
            for r in range(1, spec.D + 1):
                tau, bound = spec.tail(r), bound_thm31(r, q, R, norm)
                ok &= tau <= bound * (1 + RTOL)
                worst = max(worst, tau / bound)
            for r in range(2, spec.D + 1):
                ok &= spec.values[r - 1] ** 2 <= sv_bound_eq27(r, q, R, 1.0, norm) * (1 + RTOL)
            # integer-log anchor: exactly pi1 q^n at r = R^n
            ok &= all(bound_thm21_full(R**n, q, R, 1.0, norm) == norm * q**n for n in range(8))
        details.append(f"{name}: max tau/bound = {worst:.3e}")
    assert verdict(3, ok, start, 30, "; ".join(details))


def test_criterion_4_laplace_nn_structure(verdict):
    start = time.perf_counter()
    ok = True
    for d in (3, 4, 5):
        A = build_model("laplace_plus_nn", {"d": d, "n": 2, "seed": d, **LNN_CONSTS})
        for t in Splitting.tt_family(d):
            rank = operator_t_rank(A, t)
            ok &= rank <= 3 and rank == reshuffled_rank(A, t)
    cfg = ExperimentConfig.from_dict({"mode": "d_sweep", "seed": 1,
                                      "sweep": {"d_list": list(range(2, 9)), **LNN_CONSTS}})
    table = run_d_sweep(cfg).tables["d_sweep"]
    col = {c: i for i, c in enumerate(table["columns"])}
    cap = (LNN_CONSTS["Gamma_A"] + LNN_CONSTS["Gamma_B"] * LNN_CONSTS["Gamma_C"]) / LNN_CONSTS["gamma_A"]
    worst = 0.0
    for row in table["rows"]:
        d, kappa = row[col["d"]], row[col["kappa"]]
        gamma, Gamma = laplace_nn_bounds(d, **LNN_CONSTS)
        ok &= kappa == Gamma / gamma and kappa <= cap
        worst = max(worst, abs(kappa - (3 - 1 / d)))
    ok &= worst <= 1e-12
    assert verdict(4, ok, start, 60, f"max |kappa - (3 - 1/d)| = {worst:.1e}")


def test_criterion_5_commuting(verdict):
    start = time.perf_counter()
    ok = True
    details = []
    for d, n in ((3, 6), (4, 4)):
        cfg = ExperimentConfig.from_dict({
            "mode": "commuting", "seed": 4, "n_steps": 12, "rhs": {"kind": "ones"},
            "problem": {"kind": "laplace_like", "d": d, "n": n, "gamma_A": 1, "Gamma_A": 2}})
        rep = run_commuting_experiment(cfg)
        slopes = [e["anchor_slope"] for e in rep.splittings]
        log_q = math.log(rep.spectral["q"])
        ok &= rep.checks["additive_rank_law"]["passed"] and rep.checks["anchor_slope"]["passed"]
        ok &= all(s is not None and s <= log_q + 0.05 for s in slopes)
        details.append(f"d = {d}: ln q = {log_q:.3f}, max slope = {max(slopes):.3f}")
    assert verdict(5, ok, start, 30, "; ".join(details))


def test_criterion_6_eigen_iteration(verdict):
    start = time.perf_counter()
    A = build_model("laplace_plus_nn", {"d": 2, "n": 5, "seed": 21, **LNN_CONSTS})
    s = make_setup(A)
    u0 = random_admissible_start(s.u_star, np.random.default_rng(21))
    tr = shifted_richardson_run(s, A, u0, 12, target=s.u_star)
    overlaps = [x.inner(s.u_star) for x in tr.iterates]
    ok = max(abs(b - a) for a, b in zip(overlaps, overlaps[1:])) <= 1e-10
    ok &= all(e1 <= (s.q + 1e-10) * e0 for e0, e1 in zip(tr.errors, tr.errors[1:]))
    t = Splitting((1,), 2)
    R = eigen_rank_factor(A, t).R
    norm = s.u_star.norm()
    pi1 = norm / overlap_theta(s.u_star, t)
    spec = singular_spectrum(s.u_star, t)
    ok &= all(spec.tail(r) <= bound_thm41(r, s.q, R, pi1) * (1 + RTOL) for r in range(1, spec.D + 1))
    ok &= pi1 == pytest.approx(pi1_upper_bounds(s.u_star, t).via_theta, rel=1e-12)
    assert verdict(6, ok, start, 20, f"q = {s.q:.4f}, R = {R}")


def test_criterion_7_theta_bound(verdict):
    start = time.perf_counter()
    ok = overlap_exponent(0.3, 3) == 1 and theta_bound_thm42(0.3, 3) ** 2 == pytest.approx(1 / 6, rel=1e-15)
    (cfg,) = load_configs(FIXTURES / "eigen_thm42.json")
    A = build_operator(cfg)
    s = make_setup(A)
    norm = s.u_star.norm()
    checked = 0
    for t in Splitting.tt_family(A.order):
        R = eigen_rank_factor(A, t).R
        if s.q**2 * R >= 1:
            ok = False
            continue
        checked += 1
        ok &= overlap_theta(s.u_star, t) ** 2 >= theta_bound_thm42(s.q, R) ** 2
        spec = singular_spectrum(s.u_star, t)
        ok &= all(spec.tail(r) <= bound_thm42(r, s.q, R, norm) * (1 + RTOL) for r in range(1, spec.D + 1))
    ok &= checked > 0
    assert verdict(7, ok, start, 20, f"q^2 R checked on {checked} splittings, q = {s.q:.4f}")


def test_criterion_8_two_step(verdict):
    start = time.perf_counter()
    (cfg,) = load_configs(FIXTURES / "two_step.json")
    rep = run_two_step_experiment(cfg.with_overrides(eps_rank=1e-10))
    table = rep.tables["two_step"]
    col = {c: i for i, c in enumerate(table["columns"])}
    one = max(row[col["one_step_factor"]] for row in table["rows"])
    two = max(row[col["two_step_factor"]] for row in table["rows"])
    ok = len(table["rows"]) == 50 and one <= 3 and two <= 6
    assert verdict(8, ok, start, 30, f"max one-step {one}, max two-step {two}")


def test_criterion_9_determinism(verdict, tmp_path):
    start = time.perf_counter()
    ok = True
    names = sorted(p.name for p in FIXTURES.glob("*.json")
                   if p.name not in ("degenerate.json", "full_splitting.json"))
    for name in names:
        files = {}
        for sub in ("a", "b"):
            for cfg in load_configs(FIXTURES / name):
                run_experiment(cfg).write(tmp_path / sub / name)
            files[sub] = {p.name: p.read_text() for p in sorted((tmp_path / sub / name).iterdir())}
        ok &= files["a"].keys() == files["b"].keys()
        for fname, text in files["a"].items():
            other = files["b"][fname]
            ok &= TIMESTAMP.sub("", text) == TIMESTAMP.sub("", other)
    assert verdict(9, ok, start, 120, f"{len(names)} fixtures compared")
