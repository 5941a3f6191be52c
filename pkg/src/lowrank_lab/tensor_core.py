"""Dense order-d tensors and their t-splitting diagnostics.

A tensor is stored as a C-ordered numpy array, so its canonical
linearization is row-major over the modes. Mode indices of a
:class:`Splitting` are 1-based, i.e. ``t`` is a subset of ``{1, ..., d}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .errors import DomainError, NumericalError, ShapeError, SplittingError

DEFAULT_EPS_RANK = 1e-10


@dataclass(frozen=True, eq=False)
class Tensor:
    """Real dense tensor; immutable after construction."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64, order="C", copy=True)
        if arr.ndim < 1:
            raise ShapeError("a tensor needs at least one mode")
        if any(n < 1 for n in arr.shape):
            raise ShapeError(f"every mode size must be positive, got {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_vector(cls, dims: Sequence[int], vec) -> Tensor:
        vec = np.asarray(vec, dtype=np.float64)
        dims = tuple(int(n) for n in dims)
        if vec.size != math.prod(dims):
            raise ShapeError(f"data length {vec.size} does not match dims {dims}")
        return cls(vec.reshape(dims))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> Tensor:
        return cls(np.zeros(tuple(dims)))

    @classmethod
    def rank_one(cls, vectors: Sequence) -> Tensor:
        """Elementary tensor ``v_1 ⊗ ... ⊗ v_d``."""
        out = np.asarray(vectors[0], dtype=np.float64)
        for v in vectors[1:]:
            out = np.multiply.outer(out, np.asarray(v, dtype=np.float64))
        return cls(out)

    @classmethod
    def random(cls, dims: Sequence[int], rng: np.random.Generator) -> Tensor:
        return cls(rng.standard_normal(tuple(dims)))

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data.reshape(-1)))

    def inner(self, other: Tensor) -> float:
        _check_same_dims(self, other)
        return float(np.dot(self.data.reshape(-1), other.data.reshape(-1)))

    def __add__(self, other):
        _check_same_dims(self, other)
        return Tensor(self.data + other.data)

    def __sub__(self, other):
        _check_same_dims(self, other)
        return Tensor(self.data - other.data)

    def __neg__(self):
        return Tensor(-self.data)

    def __mul__(self, scalar):
        return Tensor(float(scalar) * self.data)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return Tensor(self.data / float(scalar))

    def __repr__(self):
        return f"Tensor(dims={self.dims}, norm={self.norm():.6g})"


def as_tensor(u) -> Tensor:
    return u if isinstance(u, Tensor) else Tensor(u)


def _check_same_dims(u, v):
    if not isinstance(v, Tensor):
        raise TypeError(f"expected Tensor, got {type(v).__name__}")
    if u.dims != v.dims:
        raise ShapeError(f"dims differ: {u.dims} vs {v.dims}")


@dataclass(frozen=True)
class Splitting:
    """A proper, nonempty subset ``t`` of the modes ``{1, ..., d}``."""

    t: tuple[int, ...]
    d: int

    def __post_init__(self):
        t = tuple(sorted({int(m) for m in self.t}))
        d = int(self.d)
        if d < 2:
            raise SplittingError(f"no valid splitting exists for order d={d}")
        if not t:
            raise SplittingError("splitting is empty", reason="splitting_empty")
        if t[0] < 1 or t[-1] > d:
            raise SplittingError(
                f"modes {t} outside 1..{d}", reason="splitting_out_of_range"
            )
        if len(t) == d:
            raise SplittingError(
                f"splitting {t} contains every mode", reason="splitting_full"
            )
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "d", d)

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(m for m in range(1, self.d + 1) if m not in self.t)

    @property
    def row_axes(self) -> tuple[int, ...]:
        return tuple(m - 1 for m in self.t)

    @property
    def col_axes(self) -> tuple[int, ...]:
        return tuple(m - 1 for m in self.complement)

    @property
    def label(self) -> str:
        return "t=" + "-".join(str(m) for m in self.t)

    @classmethod
    def parse(cls, spec, d: int) -> Splitting:
        """Accept ``"t=1-2"``, ``"1-2"``, an int or a sequence of ints."""
        if isinstance(spec, str):
            body = spec.strip()
            if body.startswith("t="):
                body = body[2:]
            try:
                modes = [int(s) for s in body.split("-") if s.strip()]
            except ValueError:
                raise SplittingError(f"cannot parse splitting {spec!r}") from None
            return cls(tuple(modes), d)
        if isinstance(spec, (int, np.integer)):
            return cls((int(spec),), d)
        return cls(tuple(spec), d)

    @classmethod
    def tt_family(cls, d: int) -> list[Splitting]:
        """The nested splittings ``{1..mu}``, ``mu = 1..d-1``."""
        return [cls(tuple(range(1, mu + 1)), d) for mu in range(1, d)]

    def shape(self, dims: Sequence[int]) -> tuple[int, int]:
        if len(dims) != self.d:
            raise SplittingError(
                f"splitting is for order {self.d}, tensor has order {len(dims)}"
            )
        rows = math.prod(dims[a] for a in self.row_axes)
        cols = math.prod(dims[a] for a in self.col_axes)
        return rows, cols

    def D(self, dims: Sequence[int]) -> int:
        """Number of singular values of the unfolding."""
        return min(self.shape(dims))


def _resolve(u, t) -> tuple[Tensor, Splitting]:
    u = as_tensor(u)
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, u.order)
    elif t.d != u.order:
        raise SplittingError(f"splitting is for order {t.d}, tensor has order {u.order}")
    return u, t


def unfold(u, t) -> np.ndarray:
    """Matricization with the modes of ``t`` merged into the row index."""
    u, t = _resolve(u, t)
    rows, cols = t.shape(u.dims)
    return np.transpose(u.data, t.row_axes + t.col_axes).reshape(rows, cols)


def fold(matrix, dims: Sequence[int], t) -> Tensor:
    """Inverse of :func:`unfold`."""
    dims = tuple(int(n) for n in dims)
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, len(dims))
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.shape != t.shape(dims):
        raise ShapeError(f"matrix shape {matrix.shape} != {t.shape(dims)}")
    perm = t.row_axes + t.col_axes
    permuted = matrix.reshape([dims[a] for a in perm])
    return Tensor(np.transpose(permuted, np.argsort(perm)))


def _svd(matrix, compute_uv):
    try:
        return np.linalg.svd(matrix, full_matrices=False, compute_uv=compute_uv)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc


@dataclass(frozen=True, eq=False)
class SingularSpectrum:
    values: np.ndarray
    splitting: Splitting
    norm: float

    @property
    def D(self) -> int:
        return len(self.values)

    def tails(self) -> np.ndarray:
        """``tau_r`` for ``r = 0, ..., D``; the last entry is zero."""
        sq = self.values**2
        tail_sq = np.append(np.cumsum(sq[::-1])[::-1], 0.0)
        return np.sqrt(tail_sq)

    def tail(self, r: int) -> float:
        if r < 0:
            raise DomainError("rank must be nonnegative")
        if r >= self.D:
            return 0.0
        return float(self.tails()[r])

    def rank(self, eps_rank: float = DEFAULT_EPS_RANK) -> int:
        if self.D == 0 or self.values[0] == 0.0:
            return 0
        return int(np.count_nonzero(self.values > eps_rank * self.values[0]))


def singular_spectrum(u, t) -> SingularSpectrum:
    u, t = _resolve(u, t)
    s = _svd(unfold(u, t), compute_uv=False)
    s = np.sort(np.abs(s))[::-1]
    s.setflags(write=False)
    return SingularSpectrum(values=s, splitting=t, norm=u.norm())


def t_rank(u, t, eps_rank: float = DEFAULT_EPS_RANK) -> int:
    """Numerical t-rank: singular values above ``eps_rank * sigma_1``."""
    if not 0.0 < eps_rank < 1.0:
        raise DomainError(f"eps_rank must lie in (0, 1), got {eps_rank}")
    return singular_spectrum(u, t).rank(eps_rank)


def tail_error(u, t, r: int) -> float:
    """Best approximation error by tensors of t-rank at most ``r``."""
    return singular_spectrum(u, t).tail(r)


def truncate(u, t, r: int) -> Tensor:
    """Best t-rank-``r`` approximation via truncated SVD."""
    u, t = _resolve(u, t)
    if r < 1:
        raise DomainError("truncation rank must be positive")
    M = unfold(u, t)
    if r >= min(M.shape):
        return u
    U, s, Vt = _svd(M, compute_uv=True)
    return fold((U[:, :r] * s[:r]) @ Vt[:r], u.dims, t)


class Entropy(NamedTuple):
    sum_p_log_p: float
    conventional: float


def entropy_from_values(values) -> Entropy:
    values = np.asarray(values, dtype=np.float64)
    total = float(np.sum(values**2))
    if total == 0.0:
        raise DomainError("entropy of the zero tensor is undefined")
    p = values**2 / total
    p = p[p > 0.0]
    signed = float(np.sum(p * np.log(p)))
    return Entropy(signed, -signed)


def von_neumann_entropy(u, t) -> Entropy:
    """Entropy of the normalized squared t-singular values (natural log).

    ``sum_p_log_p`` is ``sum p log p`` (nonpositive); ``conventional`` is
    its negation.
    """
    return entropy_from_values(singular_spectrum(u, t).values)


def overlap_theta(u, t) -> float:
    """Largest overlap of ``u/|u|`` with a unit tensor of t-rank one."""
    spec = singular_spectrum(u, t)
    if spec.norm == 0.0:
        raise DomainError("overlap of the zero tensor is undefined")
    return float(min(1.0, spec.values[0] / spec.norm))


def tt_aggregate_error(u, ranks: Sequence[int]) -> float:
    """Quasi-optimal tensor-train error bound from the nested tails."""
    u = as_tensor(u)
    d = u.order
    if d < 2:
        raise DomainError("tensor-train splittings need d >= 2")
    if len(ranks) != d - 1:
        raise ShapeError(f"need {d - 1} ranks, got {len(ranks)}")
    if any(int(r) < 1 for r in ranks):
        raise DomainError("tensor-train ranks must be positive")
    total = sum(tail_error(u, t, int(r)) ** 2 for t, r in zip(Splitting.tt_family(d), ranks))
    return math.sqrt(total)


def tt_round(u, rel_tol: float) -> Tensor:
    """TT-SVD rounding of a dense tensor, returned densely.

    The error is at most ``rel_tol * |u|``.
    """
    u = as_tensor(u)
    d = u.order
    if d < 2 or rel_tol <= 0.0:
        return u
    delta = rel_tol * u.norm() / math.sqrt(d - 1)
    cores = []
    rank = 1
    C = u.data
    for mu in range(d - 1):
        C = C.reshape(rank * u.dims[mu], -1)
        U, s, Vt = _svd(C, compute_uv=True)
        tails = np.sqrt(np.append(np.cumsum((s**2)[::-1])[::-1], 0.0))
        keep = max(1, int(np.argmax(tails <= delta)))
        cores.append(U[:, :keep].reshape(rank, u.dims[mu], keep))
        C = s[:keep, None] * Vt[:keep]
        rank = keep
    out = cores[0].reshape(u.dims[0], -1)
    for core in cores[1:]:
        out = (out @ core.reshape(core.shape[0], -1)).reshape(-1, core.shape[2])
    out = out @ C
    return Tensor(out.reshape(u.dims))
