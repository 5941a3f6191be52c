"""Richardson iteration for ``A u = b`` with t-rank bookkeeping, and the
closed-form tail and singular-value bounds that it certifies.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import CapacityError, DomainError, NotSPDError, ShapeError
from .kron_operator import (
    DENSE_GUARD,
    KronSumOperator,
    apply,
    assemble_dense,
    spectral_interval,
    split_rank,
)
from .tensor_core import (
    DEFAULT_EPS_RANK,
    Splitting,
    Tensor,
    as_tensor,
    t_rank,
    tt_round,
)

log = logging.getLogger(__name__)

ITERATE_GUARD = 10**7
DEFAULT_STEPS = 12
# q below this is treated as exact one-step convergence
Q_ZERO = 1e-14


@dataclass(frozen=True)
class SpectralData:
    gamma: float
    Gamma: float

    def __post_init__(self):
        if not self.gamma > 0.0:
            raise NotSPDError(f"operator is not positive definite (gamma = {self.gamma:.6g})")
        if self.Gamma < self.gamma:
            raise DomainError(f"Gamma = {self.Gamma} is below gamma = {self.gamma}")

    @classmethod
    def of(cls, A: KronSumOperator) -> SpectralData:
        return cls(*spectral_interval(A))

    @property
    def kappa(self) -> float:
        return self.Gamma / self.gamma

    @property
    def alpha(self) -> float:
        return 2.0 / (self.gamma + self.Gamma)

    @property
    def q(self) -> float:
        return (self.Gamma - self.gamma) / (self.Gamma + self.gamma)

    def as_dict(self) -> dict:
        return {"gamma": self.gamma, "Gamma": self.Gamma, "kappa": self.kappa,
                "alpha": self.alpha, "q": self.q}


def contraction_rate(kappa: float) -> float:
    if kappa < 1.0:
        raise DomainError(f"condition number must be >= 1, got {kappa}")
    return (kappa - 1.0) / (kappa + 1.0)


def floor_log(r: int, R) -> int:
    """Largest ``n`` with ``R**n <= r``, by repeated multiplication."""
    if r < 1:
        raise DomainError("r must be a positive integer")
    if R <= 1:
        raise DomainError("rank growth factor must exceed 1")
    n, power = 0, R
    while power <= r:
        n += 1
        power *= R
    return n


def decay_exponent(q: float, R) -> float:
    """``|ln q / ln R|``, the algebraic decay rate of the tail bounds."""
    _check_qR(q, R)
    return abs(math.log(q) / math.log(R))


def _check_qR(q, R):
    if not 0.0 < q < 1.0:
        raise DomainError(f"contraction factor must lie in (0, 1), got {q}")
    if R <= 1:
        raise DomainError(f"rank growth factor must exceed 1, got {R}")


def bound_thm21_full(r: int, q: float, R, c: float, pi1: float) -> float:
    """Tail bound with the interpolating square-root factor.

    With ``r = R**n + s``, ``0 <= s < R**(n+1) - R**n``::

        c * pi1 * sqrt(1 - (1 - q^2) s / ((R - 1) R^n)) * q^n

    ``q = 0`` is accepted and gives the limiting values.
    """
    if not 0.0 <= q < 1.0:
        raise DomainError(f"contraction factor must lie in [0, 1), got {q}")
    n = floor_log(int(r), R)
    Rn = R**n
    s = int(r) - Rn
    factor = 1.0 - (1.0 - q * q) * s / ((R - 1) * Rn)
    return c * pi1 * math.sqrt(max(factor, 0.0)) * q**n


def bound_simplified(r: int, q: float, R, c: float, pi1: float) -> float:
    """``c pi1 q^-1 r^-|ln q / ln R|``."""
    if r < 1:
        raise DomainError("r must be a positive integer")
    return c * pi1 / q * float(r) ** (-decay_exponent(q, R))


def bound_thm31(r: int, q: float, R, norm_u: float) -> float:
    """Tail bound for the solution of a linear system (``c = 1``, ``pi1 = |u|``)."""
    return bound_simplified(r, q, R, 1.0, norm_u)


def sv_bound_eq27(r: int, q: float, R, c: float, pi1: float, as_printed: bool = True) -> float:
    """Bound on ``sigma_r^2`` derived from the simplified tail bound.

    The default evaluates ``c pi1 q^-2 (2/(r-1))^(2|ln q/ln R|)`` with the
    prefactor to the first power. ``as_printed=False`` squares it,
    ``(c pi1)^2``, which is the scale-consistent form.
    """
    if r < 2:
        raise DomainError("the singular-value bound needs r >= 2")
    pref = c * pi1 if as_printed else (c * pi1) ** 2
    return pref / q**2 * (2.0 / (r - 1)) ** (2.0 * decay_exponent(q, R))


def commuting_rank_bound(n: int, r0: int, rb: int) -> int:
    """Additive rank growth when the operator is a pure Kronecker sum."""
    if min(n, r0, rb) < 0:
        raise DomainError("arguments must be nonnegative")
    return (n + 1) * r0 + n * rb


@dataclass(frozen=True)
class RankFactor:
    R: int
    r_A: int
    refined: bool


def richardson_rank_factor(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> RankFactor:
    """Per-step t-rank growth factor: ``r_A + 2``, or ``r_A + 1`` with an identity factor."""
    info = split_rank(A, t, eps_rank)
    refined = info.identity_refinable
    return RankFactor(info.rank + (1 if refined else 2), info.rank, refined)


def dense_solve(A: KronSumOperator, b) -> Tensor:
    """Reference solution of ``A u = b`` for SPD ``A``.

    Cholesky on the dense assembly under the size guard, conjugate
    gradients on :func:`apply` above it.
    """
    b = as_tensor(b)
    if b.dims != A.dims:
        raise ShapeError(f"right-hand side dims {b.dims} do not match operator dims {A.dims}")
    bvec = b.vector()
    if A.size <= DENSE_GUARD:
        M = assemble_dense(A)
        M = 0.5 * (M + M.T)
        try:
            factor = scipy.linalg.cho_factor(M)
        except np.linalg.LinAlgError as exc:
            raise NotSPDError(f"Cholesky factorization failed: {exc}") from exc
        x = scipy.linalg.cho_solve(factor, bvec)
        x += scipy.linalg.cho_solve(factor, bvec - M @ x)
        return Tensor.from_vector(A.dims, x)

    gamma, _ = spectral_interval(A)
    if gamma <= 0.0:
        raise NotSPDError(f"operator is not positive definite (gamma = {gamma:.6g})")
    op = scipy.sparse.linalg.LinearOperator(
        (A.size, A.size), matvec=lambda v: apply(A, Tensor.from_vector(A.dims, v)).vector()
    )
    x, info = scipy.sparse.linalg.cg(op, bvec, rtol=1e-14, atol=0.0, maxiter=20 * A.size)
    if info != 0:
        log.warning("conjugate gradients stopped with info=%d", info)
    return Tensor.from_vector(A.dims, x)


@dataclass
class IterationTrace:
    """Per-step record of a fixed-point run.

    ``ranks[label][n]`` is the measured t-rank of iterate ``n``;
    ``rank_bounds[label][n]`` the predicted bound for it. ``rhs_ranks``
    holds the t-ranks of the right-hand side; while they stay within
    ``R - 1`` the bound is ``R`` times the previous one, otherwise the
    step ``u <- (I - alpha A) u + alpha b`` is bounded by
    ``(R - 1) rank(u) + rank(b)``.
    """

    splittings: list
    iterates: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    ranks: dict = field(default_factory=dict)
    rank_bounds: dict = field(default_factory=dict)
    rank_factors: dict = field(default_factory=dict)
    rhs_ranks: dict = field(default_factory=dict)
    q: float = float("nan")
    target: Optional[Tensor] = None
    extra: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return len(self.iterates) - 1

    def contraction_ratios(self) -> list:
        return [
            (e1 / e0 if e0 > 0 else 0.0)
            for e0, e1 in zip(self.errors[:-1], self.errors[1:])
        ]

    def contraction_holds(self, slack: float = 1e-10) -> bool:
        """``e_{n+1} <= (q + slack) e_n`` for every step, up to round-off."""
        floor = 64 * np.finfo(float).eps * (self.target.norm() if self.target is not None else 1.0)
        return all(
            e1 <= (self.q + slack) * e0 + floor
            for e0, e1 in zip(self.errors[:-1], self.errors[1:])
        )

    def rank_law_holds(self) -> bool:
        """Measured ranks never exceed the predicted bounds."""
        return all(
            all(r <= b for r, b in zip(self.ranks[lab], self.rank_bounds[lab]))
            for lab in self.ranks
        )

    def stepwise_rank_law_holds(self) -> bool:
        """``rank(u_{n+1}) <= R * max(1, rank(u_n))`` for every step."""
        for lab, ranks in self.ranks.items():
            if any(r1 > self.step_rank_bound(lab, max(1, r0)) for r0, r1 in zip(ranks[:-1], ranks[1:])):
                return False
        return True

    def step_rank_bound(self, label, rank) -> int:
        """Rank bound for one step taken from an iterate of the given rank."""
        R = self.rank_factors[label]
        return max(R * rank, (R - 1) * rank + self.rhs_ranks.get(label, 0))

    def columns(self) -> list:
        cols = ["step", "error", "residual"]
        for t in self.splittings:
            cols += [f"rank_{t.label}", f"rank_bound_{t.label}"]
        cols += list(self.extra)
        return cols

    def rows(self):
        for n in range(len(self.iterates)):
            row = [n, _fmt(self.errors[n]), _fmt(self.residuals[n])]
            for t in self.splittings:
                row += [self.ranks[t.label][n], self.rank_bounds[t.label][n]]
            row += [_fmt(self.extra[k][n]) for k in self.extra]
            yield row

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns())
        writer.writerows(self.rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(float(x))


def _resolve_splittings(splittings, d) -> list:
    if splittings is None:
        return Splitting.tt_family(d)
    return [s if isinstance(s, Splitting) else Splitting.parse(s, d) for s in splittings]


def _check_capacity(size, n_steps):
    if (n_steps + 1) * size > ITERATE_GUARD:
        raise CapacityError(
            f"{n_steps + 1} dense iterates of size {size} exceed the guard of {ITERATE_GUARD} entries"
        )


def richardson_run(
    A: KronSumOperator,
    b,
    u0=None,
    n_steps: int = DEFAULT_STEPS,
    splittings: Optional[Sequence] = None,
    *,
    spectral: Optional[SpectralData] = None,
    u_star=None,
    eps_rank: float = DEFAULT_EPS_RANK,
    truncate_tol: Optional[float] = None,
) -> IterationTrace:
    """Run ``u <- u - alpha (A u - b)`` with ``alpha = 2/(gamma + Gamma)``.

    Iterates are exact (untruncated). ``truncate_tol`` switches on TT
    rounding after every step; that variant is outside the analysed
    iteration and its rank bounds need not hold.
    """
    b = as_tensor(b)
    if b.dims != A.dims:
        raise ShapeError(f"right-hand side dims {b.dims} do not match operator dims {A.dims}")
    u = Tensor.zeros(A.dims) if u0 is None else as_tensor(u0)
    if u.dims != A.dims:
        raise ShapeError(f"start dims {u.dims} do not match operator dims {A.dims}")
    _check_capacity(A.size, n_steps)
    spectral = spectral or SpectralData.of(A)
    u_star = dense_solve(A, b) if u_star is None else as_tensor(u_star)
    splittings = _resolve_splittings(splittings, A.order)

    trace = IterationTrace(splittings=splittings, q=spectral.q, target=u_star)
    for t in splittings:
        trace.rank_factors[t.label] = richardson_rank_factor(A, t, eps_rank).R
        trace.rhs_ranks[t.label] = t_rank(b, t, eps_rank)
        trace.ranks[t.label] = []
        trace.rank_bounds[t.label] = []

    alpha = spectral.alpha
    for n in range(n_steps + 1):
        if n > 0:
            u = u - alpha * (apply(A, u) - b)
            if truncate_tol is not None:
                u = tt_round(u, truncate_tol)
        _record(trace, u, (apply(A, u) - b).norm(), eps_rank)
    return trace


def _record(trace, u, residual, eps_rank):
    n = len(trace.iterates)
    trace.iterates.append(u)
    trace.errors.append((u - trace.target).norm())
    trace.residuals.append(residual)
    for t in trace.splittings:
        rank = t_rank(u, t, eps_rank)
        trace.ranks[t.label].append(rank)
        if n == 0:
            bound = max(1, rank)
        else:
            bound = trace.step_rank_bound(t.label, trace.rank_bounds[t.label][-1])
        trace.rank_bounds[t.label].append(bound)
