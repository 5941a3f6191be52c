import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_lab.errors import CapacityError, DomainError, NotSPDError
from lowrank_lab.kron_operator import (
    ElementaryOp,
    KronSumOperator,
    apply,
    assemble_dense,
    build_model,
    identity_operator,
)
from lowrank_lab.richardson import (
    SpectralData,
    bound_simplified,
    bound_thm21_full,
    bound_thm31,
    commuting_rank_bound,
    contraction_rate,
    decay_exponent,
    dense_solve,
    floor_log,
    richardson_rank_factor,
    richardson_run,
    sv_bound_eq27,
)
from lowrank_lab.tensor_core import Splitting, Tensor, singular_spectrum

from conftest import LNN_CONSTS, LYAP_ERRORS, LYAP_NORM, LYAP_TAILS
from oracles import lyapunov_solve, richardson_errors


# -- spectral data and contraction rate ------------------------------------------------


@pytest.mark.parametrize("kappa, q", [(1.0, 0.0), (3.0, 0.5)])
def test_contraction_rate_examples(kappa, q):
    assert contraction_rate(kappa) == q


def test_contraction_rate_laplace_nn():
    gamma, Gamma = 4 * 1.0, 4 * 2.0 + 3 * 1.0 * 1.0
    assert Gamma / gamma == 2.75
    assert contraction_rate(Gamma / gamma) == pytest.approx(1.75 / 3.75, rel=1e-15)


def test_contraction_rate_domain():
    with pytest.raises(DomainError):
        contraction_rate(0.5)


def test_spectral_data_fields():
    s = SpectralData(2.0, 8.0)
    assert (s.kappa, s.alpha, s.q) == (4.0, 0.2, 0.6)


@pytest.mark.parametrize("gamma", [0.0, -1.0])
def test_spectral_data_rejects_indefinite(gamma):
    with pytest.raises(NotSPDError):
        SpectralData(gamma, 1.0)


# -- closed-form bounds ----------------------------------------------------------------------


@pytest.mark.parametrize("r, R, n", [(1, 2, 0), (2, 2, 1), (7, 2, 2), (8, 2, 3), (26, 3, 2), (27, 3, 3),
                                     (10**6, 10, 6), (10**6 - 1, 10, 5)])
def test_floor_log_integer(r, R, n):
    assert floor_log(r, R) == n


@pytest.mark.parametrize("R", [2, 3, 4, 5, 7])
@pytest.mark.parametrize("q", [0.1, 0.5, 0.9])
def test_full_bound_anchor_exact(R, q):
    for n in range(8):
        assert bound_thm21_full(R**n, q, R, 1.0, 1.0) == q**n


def test_full_bound_examples():
    assert bound_thm21_full(1, 0.7, 3, 2.0, 1.5) == 3.0
    assert bound_thm21_full(5, 0.5, 3, 1.0, 1.0) == pytest.approx(0.5 * math.sqrt(0.75), rel=1e-15)


def test_simplified_examples():
    assert bound_simplified(1, 0.4, 3, 2.0, 1.5) == pytest.approx(3.0 / 0.4, rel=1e-15)
    for r in range(1, 20):
        assert bound_simplified(r, 0.5, 2, 1.0, 1.0) == pytest.approx(2.0 / r, rel=1e-14)
    assert bound_simplified(9, 0.5, 3, 1.0, 1.0) == pytest.approx(2 * 9 ** (-math.log(2) / math.log(3)), rel=1e-14)
    assert bound_thm21_full(9, 0.5, 3, 1.0, 1.0) == 0.25


@settings(max_examples=200, deadline=None)
@given(r=st.integers(1, 5000), q=st.floats(0.01, 0.99), R=st.integers(2, 9))
def test_full_bound_below_simplified(r, q, R):
    assert bound_thm21_full(r, q, R, 1.0, 1.0) <= bound_simplified(r, q, R, 1.0, 1.0) * (1 + 1e-12)


def test_uniform_bound_examples():
    assert bound_thm31(1, 0.25, 4, 2.0) == 8.0
    for r in range(1, 50):
        assert bound_thm31(r, 0.4, 4, 1.0) <= bound_thm31(r, 0.4, 5, 1.0)


def test_sv_bound_examples():
    assert sv_bound_eq27(3, 0.5, 2, 1.0, 1.0) == pytest.approx(4.0, rel=1e-15)
    vals = [sv_bound_eq27(r, 0.6, 3, 1.0, 1.0) for r in range(2, 40)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert sv_bound_eq27(3, 0.5, 2, 2.0, 1.0, as_printed=False) == pytest.approx(16.0, rel=1e-15)


def test_sv_bound_domain():
    with pytest.raises(DomainError):
        sv_bound_eq27(1, 0.5, 2, 1.0, 1.0)


@pytest.mark.parametrize("q, R", [(0.0, 2), (1.0, 2), (0.5, 1)])
def test_decay_exponent_domain(q, R):
    with pytest.raises(DomainError):
        decay_exponent(q, R)


@pytest.mark.parametrize("n, r0, rb, out", [(0, 3, 7, 3), (2, 1, 1, 5), (4, 0, 1, 4)])
def test_commuting_rank_bound(n, r0, rb, out):
    assert commuting_rank_bound(n, r0, rb) == out


# -- dense solve -----------------------------------------------------------------------------


def test_dense_solve_identity(rng):
    b = Tensor.random((3, 4), rng)
    assert np.allclose(dense_solve(identity_operator((3, 4)), b).data, b.data, rtol=1e-15)


def test_dense_solve_diagonal(rng):
    A = build_model("diagonal_test", {"diags": [[1, 2, 3], [1, 5]]})
    b = Tensor.random((3, 2), rng)
    ref = b.data / (np.array([1, 2, 3])[:, None] + np.array([1, 5])[None, :])
    assert np.allclose(dense_solve(A, b).data, ref, rtol=1e-14)


def test_dense_solve_lyapunov(lyapunov):
    A, b = lyapunov
    u = dense_solve(A, b)
    assert (apply(A, u) - b).norm() <= 1e-12 * b.norm()
    X = lyapunov_solve(np.diag([1.0, 2, 3, 4]), b.data)
    assert np.allclose(u.data, X, rtol=1e-13, atol=1e-15)
    assert u.norm() == pytest.approx(LYAP_NORM, rel=1e-13)
    assert np.allclose(singular_spectrum(u, 1).tails(), LYAP_TAILS, rtol=1e-9, atol=1e-15)


def test_dense_solve_cg_above_guard(rng):
    A = build_model("laplace_like", {"d": 2, "n": 70, "seed": 3, "gamma_A": 1, "Gamma_A": 4})
    b = Tensor.rank_one([np.ones(70) / math.sqrt(70)] * 2)
    u = dense_solve(A, b)
    assert (apply(A, u) - b).norm() <= 1e-12 * b.norm()


def test_dense_solve_rejects_indefinite():
    A = build_model("diagonal_test", {"diags": [[-1, 1], [0, 0.5]]})
    with pytest.raises(NotSPDError):
        dense_solve(A, Tensor(np.ones((2, 2))))


# -- runs -------------------------------------------------------------------------------------


def test_run_from_solution_is_stationary(lyapunov):
    A, b = lyapunov
    u = dense_solve(A, b)
    tr = richardson_run(A, b, u, 5, u_star=u)
    assert max(tr.errors) <= 1e-16
    assert max(tr.residuals) <= 1e-15


def test_run_kappa_one_converges_in_one_step(rng):
    A = KronSumOperator((3, 3), (ElementaryOp((2.0 * np.eye(3), np.eye(3))),))
    b = Tensor.rank_one([rng.standard_normal(3), rng.standard_normal(3)])
    tr = richardson_run(A, b, None, 3)
    assert tr.q == 0.0
    assert tr.errors[1] <= 1e-15 * tr.errors[0]


def test_run_matches_eigenbasis_propagation(lyapunov):
    A, b = lyapunov
    tr = richardson_run(A, b, None, 12, ["t=1"])
    M = assemble_dense(A)
    ref = richardson_errors(M, b.vector(), np.zeros(16), 0.2, 12)
    assert np.allclose(tr.errors, ref, rtol=1e-10)
    assert np.allclose(tr.errors, LYAP_ERRORS, rtol=1e-10)
    assert tr.contraction_holds()
    assert tr.ranks["t=1"][:5] == [0, 1, 2, 3, 4]


def test_rank_factors_lyapunov_and_laplace_nn(lyapunov, laplace_nn):
    A, _ = lyapunov
    rf = richardson_rank_factor(A, 1)
    assert (rf.r_A, rf.refined, rf.R) == (2, True, 3)
    B, _ = laplace_nn
    for t in Splitting.tt_family(4):
        rf = richardson_rank_factor(B, t)
        assert (rf.r_A, rf.refined, rf.R) == (3, True, 4)


def test_unrefined_factor_when_no_identity():
    C = np.diag([1.0, 2.0])
    A = KronSumOperator((2, 2), (ElementaryOp((C, C)),))
    rf = richardson_rank_factor(A, 1)
    assert (rf.r_A, rf.refined, rf.R) == (1, False, 3)


def test_laplace_nn_run_laws(laplace_nn):
    A, b = laplace_nn
    tr = richardson_run(A, b, None, 12)
    assert tr.contraction_holds()
    assert tr.rank_law_holds() and tr.stepwise_rank_law_holds()
    for t in tr.splittings:
        assert all(r <= 4**n for n, r in enumerate(tr.ranks[t.label]))


def test_commuting_additive_ranks():
    A = build_model("laplace_like", {"d": 4, "n": 3, "seed": 2, "gamma_A": 1, "Gamma_A": 2})
    b = Tensor.rank_one([np.ones(3)] * 4)
    tr = richardson_run(A, b, None, 6)
    for t in tr.splittings:
        assert all(r <= commuting_rank_bound(n, 0, 1) for n, r in enumerate(tr.ranks[t.label]))
    assert tr.ranks["t=1"][1] == 1


def test_trace_csv_layout(lyapunov):
    A, b = lyapunov
    text = richardson_run(A, b, None, 2, ["t=1"]).to_csv()
    lines = text.splitlines()
    assert lines[0] == "step,error,residual,rank_t=1,rank_bound_t=1"
    assert len(lines) == 4
    assert lines[1].startswith("0,")


def test_capacity_guard():
    A = identity_operator((100, 100, 100))
    with pytest.raises(CapacityError):
        richardson_run(A, Tensor(np.ones((100, 100, 100))), None, 12)


def test_truncated_variant_stays_close(laplace_nn):
    A, b = laplace_nn
    exact = richardson_run(A, b, None, 8)
    trunc = richardson_run(A, b, None, 8, truncate_tol=1e-8)
    assert abs(trunc.errors[-1] - exact.errors[-1]) <= 1e-6


def test_rank_law_with_high_rank_rhs(rng):
    A = build_model("lyapunov", {"A": [1, 2, 3, 4, 5]})
    b = Tensor.random((5, 5), rng)
    tr = richardson_run(A, b, None, 6, ["t=1"])
    assert tr.rhs_ranks["t=1"] == 5
    assert tr.ranks["t=1"][1] == 5
    assert tr.rank_law_holds() and tr.stepwise_rank_law_holds()
