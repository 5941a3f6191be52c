"""Shifted Richardson iteration for the smallest eigenvector and the
associated tail and overlap bounds.

The iteration is ``u <- (1 + beta lambda_1) u - beta A u`` with
``beta = 2 / (delta + Gamma - lambda_1)``; it needs the exact smallest
eigenvalue, which is taken from a dense eigensolver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    CapacityError,
    DegeneracyError,
    DomainError,
    HypothesisError,
    OrthogonalityError,
    ProjectionError,
    ShapeError,
)
from .kron_operator import DENSE_GUARD, KronSumOperator, apply, assemble_dense, split_rank
from .richardson import (
    DEFAULT_STEPS,
    IterationTrace,
    RankFactor,
    _check_capacity,
    _resolve_splittings,
    bound_simplified,
    decay_exponent,
)
from .tensor_core import (
    DEFAULT_EPS_RANK,
    Splitting,
    Tensor,
    as_tensor,
    overlap_theta,
    t_rank,
    truncate,
)

ADMISSIBLE_TOL = 1e-10
NEAR_ORTHOGONAL = 1e-6


@dataclass(frozen=True, eq=False)
class EigenSetup:
    lambda1: float
    lambda2: float
    Gamma: float
    u_star: Tensor

    def __post_init__(self):
        if not self.lambda1 < self.lambda2 <= self.Gamma:
            raise DegeneracyError(
                f"need lambda1 < lambda2 <= Gamma, got {self.lambda1}, {self.lambda2}, {self.Gamma}"
            )

    @property
    def delta(self) -> float:
        return self.lambda2 - self.lambda1

    @property
    def Delta(self) -> float:
        return self.delta / (self.Gamma - self.lambda1)

    @property
    def beta(self) -> float:
        return 2.0 / (self.delta + self.Gamma - self.lambda1)

    @property
    def q(self) -> float:
        return (1.0 - self.Delta) / (1.0 + self.Delta)

    def as_dict(self) -> dict:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "Gamma": self.Gamma,
                "delta": self.delta, "Delta": self.Delta, "beta": self.beta, "q": self.q}


def smallest_pair(A: KronSumOperator):
    """``(lambda1, lambda2, Gamma, u_star)`` from a dense symmetric eigensolver.

    ``u_star`` has unit norm, with its largest-magnitude entry positive.
    """
    if A.size > DENSE_GUARD:
        raise CapacityError(f"eigen experiments need total dimension <= {DENSE_GUARD}")
    M = assemble_dense(A)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    if len(w) < 2:
        raise DegeneracyError("a one-dimensional space has no spectral gap")
    lam1, lam2, Gamma = float(w[0]), float(w[1]), float(w[-1])
    if lam2 - lam1 <= 1e-8 * max(1.0, abs(lam1)):
        raise DegeneracyError(f"smallest eigenvalue {lam1:.12g} is not simple")
    v = V[:, 0]
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return lam1, lam2, Gamma, Tensor.from_vector(A.dims, v)


def make_setup(A: KronSumOperator) -> EigenSetup:
    return EigenSetup(*smallest_pair(A))


def eigen_rank_factor(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> RankFactor:
    """Per-step growth of the shifted iteration: ``r_A + 1``, or ``r_A`` with an identity factor."""
    info = split_rank(A, t, eps_rank)
    refined = info.identity_refinable
    return RankFactor(info.rank + (0 if refined else 1), info.rank, refined)


def rank_one_start(u_star, u_hat0, t) -> Tensor:
    """Rescale a t-rank-one ``u_hat0`` onto the affine slice ``u + <u>^perp``."""
    u_star = as_tensor(u_star)
    u_hat0 = as_tensor(u_hat0)
    if t_rank(u_hat0, t) != 1:
        raise DomainError("the starting direction must have t-rank one")
    ip = u_star.inner(u_hat0)
    if abs(ip) <= 1e-12 * u_hat0.norm():
        raise OrthogonalityError("starting direction is orthogonal to the eigenvector")
    return (u_star.norm() ** 2 / ip) * u_hat0


def leading_rank_one(u, t) -> Tensor:
    """The leading singular pair ``sigma_1 u_1 ⊗ v_1`` of the t-unfolding."""
    return truncate(u, t, 1)


def random_admissible_start(u_star, rng: np.random.Generator, max_draws: int = 1000) -> Tensor:
    """Random elementary tensor, rescaled onto the affine slice.

    Draws with ``|<u_star, u_hat>| <= 1e-6 |u_star| |u_hat|`` are rejected.
    """
    u_star = as_tensor(u_star)
    for _ in range(max_draws):
        u_hat = Tensor.rank_one([rng.standard_normal(n) for n in u_star.dims])
        ip = u_star.inner(u_hat)
        if abs(ip) > NEAR_ORTHOGONAL * u_star.norm() * u_hat.norm():
            return (u_star.norm() ** 2 / ip) * u_hat
    raise OrthogonalityError(f"no admissible draw in {max_draws} attempts")


def shifted_richardson_run(
    setup: EigenSetup,
    A: KronSumOperator,
    u0,
    n_steps: int = DEFAULT_STEPS,
    splittings: Optional[Sequence] = None,
    *,
    target=None,
    eps_rank: float = DEFAULT_EPS_RANK,
) -> IterationTrace:
    """Shifted Richardson run from ``u0``.

    The limit is the component of ``u0`` along ``u_star``. If ``target`` is
    given, ``u0`` must lie in ``target + <u_star>^perp``; a violation raises
    :class:`ProjectionError` carrying the measured inner-product defect.
    """
    u = as_tensor(u0)
    if u.dims != A.dims:
        raise ShapeError(f"start dims {u.dims} do not match operator dims {A.dims}")
    _check_capacity(A.size, n_steps)
    u_star = setup.u_star
    ns2 = u_star.norm() ** 2
    if target is None:
        target = (u.inner(u_star) / ns2) * u_star
    else:
        target = as_tensor(target)
        violation = abs((u - target).inner(u_star))
        if violation > ADMISSIBLE_TOL * max(1.0, u.norm()) * u_star.norm():
            raise ProjectionError(
                f"start violates the affine constraint by {violation:.3e}", violation=violation
            )
    splittings = _resolve_splittings(splittings, A.order)

    trace = IterationTrace(splittings=splittings, q=setup.q, target=target)
    trace.extra = {"overlap": [], "q_step": []}
    for t in splittings:
        trace.rank_factors[t.label] = eigen_rank_factor(A, t, eps_rank).R
        trace.ranks[t.label] = []
        trace.rank_bounds[t.label] = []

    shift = 1.0 + setup.beta * setup.lambda1
    for n in range(n_steps + 1):
        Au = apply(A, u)
        if n > 0:
            u = shift * u - setup.beta * Au
            Au = apply(A, u)
        trace.iterates.append(u)
        err = (u - target).norm()
        trace.extra["q_step"].append(
            err / trace.errors[-1] if n > 0 and trace.errors[-1] > 0 else None
        )
        trace.errors.append(err)
        trace.residuals.append((Au - setup.lambda1 * u).norm())
        trace.extra["overlap"].append(u.inner(u_star))
        for t in splittings:
            rank = t_rank(u, t, eps_rank)
            trace.ranks[t.label].append(rank)
            prev = trace.rank_bounds[t.label]
            prev.append(max(1, rank) if n == 0 else trace.rank_factors[t.label] * prev[-1])
    return trace


class Pi1Bounds(NamedTuple):
    via_theta: float
    naive: float
    constructive: float


def pi1_upper_bounds(u_star, t) -> Pi1Bounds:
    """Three upper estimates of the distance to the nearest admissible t-rank-one start."""
    u_star = as_tensor(u_star)
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, u_star.order)
    norm = u_star.norm()
    if norm == 0.0:
        raise DomainError("pi1 of the zero tensor is undefined")
    theta = overlap_theta(u_star, t)
    start = rank_one_start(u_star, leading_rank_one(u_star, t), t)
    return Pi1Bounds(
        via_theta=norm / theta,
        naive=math.sqrt(t.D(u_star.dims)) * norm,
        constructive=(start - u_star).norm(),
    )


def overlap_exponent(q: float, R) -> int:
    """``ceil(-ln 2 / ln(q^2 R))``, at least 1; needs ``q^2 R < 1``."""
    if not 0.0 <= q < 1.0:
        raise DomainError(f"contraction factor must lie in [0, 1), got {q}")
    if q * q * R >= 1.0:
        raise HypothesisError(f"q^2 R = {q * q * R:.6g} is not below 1")
    if q == 0.0:
        return 1
    x = -math.log(2.0) / math.log(q * q * R)
    # guard against a spurious flip past an integer from rounding in x
    return max(1, math.ceil(x - 1e-12 * max(1.0, x)))


def theta_bound_thm42(q: float, R) -> float:
    """Lower bound on the rank-one overlap ``theta`` (not its square)."""
    m = overlap_exponent(q, R)
    return math.sqrt(0.5 / R**m)


def bound_thm41(r: int, q: float, R, pi1: float) -> float:
    """``(pi1 / q) r^-|ln q / ln R|``."""
    return bound_simplified(r, q, R, 1.0, pi1)


def bound_thm42(r: int, q: float, R, norm_u: float, with_q_factor: bool = False) -> float:
    """``sqrt(2) R^(m/2) |u| r^-|ln q / ln R|`` with ``m`` from :func:`overlap_exponent`.

    ``with_q_factor=True`` divides by ``q``, which is exactly the tail bound
    with ``pi1 = |u| / theta_bound`` substituted.
    """
    if r < 1:
        raise DomainError("r must be a positive integer")
    m = overlap_exponent(q, R)
    value = math.sqrt(2.0) * R ** (0.5 * m) * norm_u * float(r) ** (-decay_exponent(q, R))
    return value / q if with_q_factor else value


@dataclass(frozen=True)
class TwoStepProbe:
    one_step: list
    two_step: list
    claimed_cap: int = 6
    naive_cap: int = 9

    @property
    def max_one_step(self) -> float:
        return max(self.one_step)

    @property
    def max_two_step(self) -> float:
        return max(self.two_step)


def _check_two_step_shape(A: KronSumOperator):
    if A.order != 2 or len(A.terms) != 3:
        raise ShapeError("two-step probe needs A1⊗I + I⊗A2 + B⊗C with d = 2")
    flags = [term.identity_flags for term in A.terms]
    if not any(f[1] and not f[0] for f in flags) or not any(f[0] and not f[1] for f in flags):
        raise ShapeError("two-step probe needs one A1⊗I and one I⊗A2 term")


def two_step_rank_probe(
    A: KronSumOperator,
    setup: EigenSetup,
    t,
    samples: int,
    rng: np.random.Generator,
    eps_rank: float = DEFAULT_EPS_RANK,
) -> TwoStepProbe:
    """Measured t-rank growth over one and two shifted steps from random rank-one starts."""
    _check_two_step_shape(A)
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, A.order)
    shift = 1.0 + setup.beta * setup.lambda1
    one, two = [], []
    for _ in range(samples):
        u0 = random_admissible_start(setup.u_star, rng)
        u1 = shift * u0 - setup.beta * apply(A, u0)
        u2 = shift * u1 - setup.beta * apply(A, u1)
        r0 = max(1, t_rank(u0, t, eps_rank))
        one.append(t_rank(u1, t, eps_rank) / r0)
        two.append(t_rank(u2, t, eps_rank) / r0)
    return TwoStepProbe(one, two)
