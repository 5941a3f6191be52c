"""Sums of elementary Kronecker-product operators.

An operator is stored fully factored, one square matrix per mode and term::

    A = sum_i  A_i^(1) ⊗ A_i^(2) ⊗ ... ⊗ A_i^(d)

Any t-split form ``sum_i A_i^(t) ⊗ A_i^(t^c)`` is derived on demand.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    CapacityError,
    ConstructionError,
    InconsistentBoundsError,
    ShapeError,
)
from .tensor_core import DEFAULT_EPS_RANK, Splitting, Tensor, as_tensor

log = logging.getLogger(__name__)

DENSE_GUARD = 4096
GRAM_TERM_LIMIT = 64
# cap on the coefficient-space size of one side in operator_t_rank
_COEFF_GUARD = 1 << 20
_BOUNDS_RTOL = 1e-6


@dataclass(frozen=True, eq=False)
class ElementaryOp:
    """One term ``F_1 ⊗ ... ⊗ F_d``.

    ``identity_flags[mu]`` marks factors that are exactly the identity;
    those modes are skipped when the term is applied. Flags are detected
    automatically when not given.
    """

    factors: tuple
    identity_flags: tuple = None

    def __post_init__(self):
        factors = []
        for F in self.factors:
            F = np.array(F, dtype=np.float64, copy=True)
            if F.ndim != 2 or F.shape[0] != F.shape[1]:
                raise ShapeError(f"factors must be square matrices, got shape {F.shape}")
            F.setflags(write=False)
            factors.append(F)
        if not factors:
            raise ShapeError("a term needs at least one factor")
        detected = tuple(_is_identity(F) for F in factors)
        flags = self.identity_flags
        if flags is None:
            flags = detected
        else:
            flags = tuple(bool(f) for f in flags)
            if len(flags) != len(factors):
                raise ShapeError("one identity flag per factor is required")
            for mu, (flag, exact) in enumerate(zip(flags, detected)):
                if flag and not exact:
                    raise ConstructionError(f"factor {mu + 1} is flagged identity but is not")
        object.__setattr__(self, "factors", tuple(factors))
        object.__setattr__(self, "identity_flags", flags)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(F.shape[0] for F in self.factors)

    def dense(self) -> np.ndarray:
        out = self.factors[0]
        for F in self.factors[1:]:
            out = np.kron(out, F)
        return out


def _is_identity(F) -> bool:
    return bool(np.array_equal(F, np.eye(F.shape[0])))


@dataclass(frozen=True, eq=False)
class KronSumOperator:
    dims: tuple
    terms: tuple
    symmetry_declared: bool = True
    analytic_bounds: Optional[tuple] = None
    provenance: str = ""
    factor_info: dict = field(default_factory=dict)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        terms = tuple(self.terms)
        for term in terms:
            if term.dims != dims:
                raise ShapeError(f"term dims {term.dims} differ from operator dims {dims}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "terms", terms)
        if self.analytic_bounds is not None:
            lo, hi = (float(x) for x in self.analytic_bounds)
            object.__setattr__(self, "analytic_bounds", (lo, hi))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    def __matmul__(self, u):
        return apply(self, u)

    def check_symmetry(self, samples: int = 20, seed: int = 0, rtol: float = 1e-10) -> bool:
        """Sample ``<Av, w> == <v, Aw>`` on random pairs."""
        rng = np.random.default_rng(seed)
        for _ in range(samples):
            v = Tensor.random(self.dims, rng)
            w = Tensor.random(self.dims, rng)
            lhs = apply(self, v).inner(w)
            rhs = v.inner(apply(self, w))
            scale = apply(self, v).norm() * w.norm() + v.norm() * apply(self, w).norm()
            if abs(lhs - rhs) > rtol * max(scale, 1e-300):
                return False
        return True


def identity_operator(dims: Sequence[int]) -> KronSumOperator:
    term = ElementaryOp(tuple(np.eye(n) for n in dims))
    return KronSumOperator(tuple(dims), (term,), analytic_bounds=(1.0, 1.0), provenance="identity")


def apply(A: KronSumOperator, u) -> Tensor:
    """Apply ``A`` mode by mode; the full matrix is never formed."""
    u = as_tensor(u)
    if u.dims != A.dims:
        raise ShapeError(f"operator dims {A.dims} do not match tensor dims {u.dims}")
    out = np.zeros(A.dims)
    for term in A.terms:
        x = u.data
        for mu, (F, is_id) in enumerate(zip(term.factors, term.identity_flags)):
            if is_id:
                continue
            x = np.moveaxis(np.tensordot(F, x, axes=([1], [mu])), 0, mu)
        out += x
    return Tensor(out)


def assemble_dense(A: KronSumOperator) -> np.ndarray:
    """Dense matrix of ``A`` under the row-major linearization."""
    if A.size > DENSE_GUARD:
        raise CapacityError(f"dense assembly needs total dimension <= {DENSE_GUARD}, got {A.size}")
    M = np.zeros((A.size, A.size))
    for term in A.terms:
        M += term.dense()
    return M


# -- t-rank of the operator -------------------------------------------------


def _mode_coordinates(A, mu, tol=1e-13):
    """Orthonormal basis of span{vec F_i^mu} and coordinates of every factor."""
    n = A.dims[mu]
    stack = np.stack([term.factors[mu].reshape(-1) for term in A.terms], axis=1)
    U, s, _ = np.linalg.svd(stack, full_matrices=False)
    keep = int(np.count_nonzero(s > tol * s[0])) if s.size and s[0] > 0 else 0
    basis = U[:, :keep]
    return basis, basis.T @ stack, n


def _side(A, modes):
    """Coefficient matrix (one column per term) and the side's identity coordinates.

    Because each per-mode basis is orthonormal, the Kronecker products of
    coordinates are isometric images of the vectorized t-side factors.
    """
    size = 1
    cols = np.ones((1, len(A.terms)))
    ident = np.ones(1)
    ident_in_span = True
    for m in modes:
        basis, coords, n = _mode_coordinates(A, m - 1)
        size *= max(coords.shape[0], 1)
        if size > _COEFF_GUARD:
            raise CapacityError("coefficient space too large for the factored t-rank method")
        cols = np.einsum("ai,bi->abi", cols, coords).reshape(-1, len(A.terms))
        eye = np.eye(n).reshape(-1)
        c = basis.T @ eye
        if np.linalg.norm(eye - basis @ c) > 1e-10 * math.sqrt(n):
            ident_in_span = False
        ident = np.kron(ident, c)
    return cols, (ident if ident_in_span else None)


@dataclass(frozen=True)
class OperatorSplitRank:
    rank: int
    singular_values: np.ndarray
    identity_on_t: bool
    identity_on_tc: bool

    @property
    def identity_refinable(self) -> bool:
        return self.identity_on_t or self.identity_on_tc


def _in_span(vec, basis, tol=1e-8):
    if vec is None or basis.shape[1] == 0:
        return False
    resid = vec - basis @ (basis.T @ vec)
    return bool(np.linalg.norm(resid) <= tol * np.linalg.norm(vec))


def split_rank(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> OperatorSplitRank:
    """Minimal t-split rank of ``A`` plus identity-membership diagnostics.

    The reshuffled operator ``sum_i vec(A_i^(t)) vec(A_i^(t^c))^T`` is
    never formed: both sides are QR-compressed in coefficient space, so
    only a (terms x terms) SVD is needed.
    """
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, A.order)
    if len(A.terms) > GRAM_TERM_LIMIT:
        raise CapacityError(f"factored t-rank method supports at most {GRAM_TERM_LIMIT} terms")
    P, id_t = _side(A, t.t)
    Q, id_tc = _side(A, t.complement)
    if P.size == 0 or Q.size == 0:
        return OperatorSplitRank(0, np.zeros(0), False, False)
    Q1, R1 = np.linalg.qr(P)
    Q2, R2 = np.linalg.qr(Q)
    U, s, Vt = np.linalg.svd(R1 @ R2.T)
    rank = int(np.count_nonzero(s > eps_rank * s[0])) if s[0] > 0 else 0
    col_basis = Q1 @ U[:, :rank]
    row_basis = Q2 @ Vt[:rank].T
    return OperatorSplitRank(
        rank=rank,
        singular_values=s,
        identity_on_t=_in_span(id_t, col_basis),
        identity_on_tc=_in_span(id_tc, row_basis),
    )


def reshuffled_rank(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> int:
    """t-rank from an SVD of the reshuffled dense assembly (small sizes only)."""
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, A.order)
    M = assemble_dense(A)
    d = A.order
    T = M.reshape(A.dims + A.dims)
    rows = [a for m in t.t for a in (m - 1, d + m - 1)]
    cols = [a for m in t.complement for a in (m - 1, d + m - 1)]
    n_rows = math.prod(A.dims[m - 1] ** 2 for m in t.t)
    R = np.transpose(T, rows + cols).reshape(n_rows, -1)
    s = np.linalg.svd(R, compute_uv=False)
    return int(np.count_nonzero(s > eps_rank * s[0])) if s[0] > 0 else 0


def operator_t_rank(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> int:
    """Minimal number of terms in a representation ``sum A_i^(t) ⊗ A_i^(t^c)``."""
    if len(A.terms) <= GRAM_TERM_LIMIT:
        return split_rank(A, t, eps_rank).rank
    if A.size <= DENSE_GUARD:
        return reshuffled_rank(A, t, eps_rank)
    raise CapacityError("operator too large for both t-rank methods")


def identity_refinable(A: KronSumOperator, t, eps_rank: float = DEFAULT_EPS_RANK) -> bool:
    """Whether some minimal t-split representation has an identity factor."""
    return split_rank(A, t, eps_rank).identity_refinable


def has_identity_flagged_term(A: KronSumOperator, t) -> bool:
    """Flag-based check: some term is the identity on all of t or all of t^c."""
    if not isinstance(t, Splitting):
        t = Splitting.parse(t, A.order)
    for term in A.terms:
        if all(term.identity_flags[m - 1] for m in t.t):
            return True
        if all(term.identity_flags[m - 1] for m in t.complement):
            return True
    return False


# -- spectrum ---------------------------------------------------------------


def _power_iteration(matvec, dims, rng, rtol=1e-8, maxiter=20000):
    x = rng.standard_normal(dims)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(maxiter):
        y = matvec(x)
        lam_new = float(np.vdot(x, y))
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    log.warning("power iteration hit %d iterations without reaching rtol=%g", maxiter, rtol)
    return lam


def spectral_interval(A: KronSumOperator, seed: int = 0) -> tuple[float, float]:
    """Extreme eigenvalues ``(gamma, Gamma)`` of a symmetric operator.

    Exact dense eigenvalues are returned under the dense guard. Above it,
    power iteration estimates are computed; when analytic bounds exist they
    are returned instead, since power estimates are not certified. A
    nonpositive ``gamma`` is returned as is; solvers reject it.
    """
    if A.size <= DENSE_GUARD:
        M = assemble_dense(A)
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        gamma, Gamma = float(ev[0]), float(ev[-1])
        _check_against_analytic(A, gamma, Gamma)
        return gamma, Gamma
    rng = np.random.default_rng(seed)
    Gamma_est = _power_iteration(lambda x: apply(A, Tensor(x)).data, A.dims, rng)
    shifted = _power_iteration(lambda x: Gamma_est * x - apply(A, Tensor(x)).data, A.dims, rng)
    gamma_est = Gamma_est - shifted
    if A.analytic_bounds is None:
        return gamma_est, Gamma_est
    _check_against_analytic(A, gamma_est, Gamma_est)
    return A.analytic_bounds


def _check_against_analytic(A, gamma, Gamma):
    if A.analytic_bounds is None:
        return
    lo, hi = A.analytic_bounds
    scale = max(abs(lo), abs(hi), 1.0)
    if gamma < lo - _BOUNDS_RTOL * scale or Gamma > hi + _BOUNDS_RTOL * scale:
        raise InconsistentBoundsError(
            f"computed spectrum [{gamma:.12g}, {Gamma:.12g}] leaves the analytic "
            f"interval [{lo:.12g}, {hi:.12g}] ({A.provenance})"
        )


# -- model problems ---------------------------------------------------------

MODEL_KINDS = (
    "laplace_like",
    "nn_interaction",
    "laplace_plus_nn",
    "lyapunov",
    "generalized_lyapunov",
    "diagonal_test",
)


def random_symmetric(n: int, lo: float, hi: float, rng: np.random.Generator) -> np.ndarray:
    """Random symmetric matrix with spectrum in ``[lo, hi]``, endpoints included."""
    if n == 1:
        eig = np.array([lo])
    else:
        eig = np.concatenate([[lo, hi], rng.uniform(lo, hi, n - 2)])
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    M = (Q * eig) @ Q.T
    return 0.5 * (M + M.T)


def load_matrix(spec, base_dir=None) -> np.ndarray:
    """Matrix from nested lists or ``{"csv": path}`` (row-major, no header)."""
    if isinstance(spec, dict):
        if "csv" in spec:
            path = Path(spec["csv"])
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            return np.loadtxt(path, delimiter=",", ndmin=2)
        if "diag" in spec:
            return np.diag(np.asarray(spec["diag"], dtype=np.float64))
        raise ConstructionError(f"unknown matrix source keys {sorted(spec)}")
    M = np.asarray(spec, dtype=np.float64)
    if M.ndim == 1:
        M = np.diag(M)
    return M


def _require_symmetric(name, M):
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ConstructionError(f"{name} must be square, got shape {M.shape}")
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * scale:
        raise ConstructionError(f"{name} is not symmetric", reason="factor_not_symmetric")


def _eig_range(M):
    ev = np.linalg.eigvalsh(M)
    return float(ev[0]), float(ev[-1])


def _dims_from(params, d_default=None):
    if "dims" in params:
        return tuple(int(n) for n in params["dims"])
    d = int(params.get("d", d_default if d_default is not None else 0))
    if d < 1 or "n" not in params:
        raise ConstructionError("params need 'dims' or both 'd' and 'n'")
    return (int(params["n"]),) * d


def _factor_list(params, key, count, base_dir):
    mats = params[key]
    if len(mats) != count:
        raise ConstructionError(f"'{key}' needs {count} matrices, got {len(mats)}")
    return [load_matrix(m, base_dir) for m in mats]


def _laplace_terms(dims, A_list):
    terms = []
    for mu, Amu in enumerate(A_list):
        factors = [np.eye(n) for n in dims]
        factors[mu] = Amu
        terms.append(ElementaryOp(tuple(factors)))
    return terms


def _nn_terms(dims, B_list, C_list):
    terms = []
    for mu in range(len(dims) - 1):
        factors = [np.eye(n) for n in dims]
        factors[mu] = B_list[mu]
        factors[mu + 1] = C_list[mu]
        terms.append(ElementaryOp(tuple(factors)))
    return terms


def build_model(kind: str, params: dict, base_dir=None) -> KronSumOperator:
    """Construct one of the model operators.

    Parameters
    ----------
    kind
        One of ``laplace_like``, ``nn_interaction``, ``laplace_plus_nn``,
        ``lyapunov``, ``generalized_lyapunov``, ``diagonal_test``.
    params
        Either explicit factors (``A``, ``B``, ``C``, ``diags``; matrices
        as nested lists, diagonals as flat lists or ``{"csv": path}``) or a
        ``seed`` with the spectral constants ``gamma_A``, ``Gamma_A``,
        ``Gamma_B``, ``Gamma_C``. For the nearest-neighbour part, ``B[mu]``
        acts on mode ``mu`` and ``C[mu]`` on mode ``mu + 1``.

    Returns
    -------
    KronSumOperator
        With identity flags set and, for the Laplace family, analytic
        spectral bounds ``gamma = d gamma_A`` and
        ``Gamma = d Gamma_A + (d - 1) Gamma_B Gamma_C``.
    """
    if kind not in MODEL_KINDS:
        raise ConstructionError(f"unknown model kind {kind!r}", reason="unknown_model_kind")
    params = dict(params)
    rng = np.random.default_rng(params.get("seed"))

    if kind in ("lyapunov", "generalized_lyapunov"):
        if "A" in params:
            A1 = load_matrix(params["A"], base_dir)
        else:
            n = int(params["n"])
            A1 = random_symmetric(n, float(params["gamma_A"]), float(params["Gamma_A"]), rng)
        _require_symmetric("A", A1)
        n = A1.shape[0]
        dims = (n, n)
        terms = _laplace_terms(dims, [A1, A1])
        lo_a, hi_a = _eig_range(A1)
        lo, hi = 2 * lo_a, 2 * hi_a
        info = {"gamma_A": lo_a, "Gamma_A": hi_a}
        if kind == "generalized_lyapunov":
            if "C" in params:
                C = load_matrix(params["C"], base_dir)
            else:
                C = random_symmetric(n, 0.0, float(params["Gamma_C"]), rng)
            _require_symmetric("C", C)
            terms.append(ElementaryOp((C, C)))
            c = np.linalg.eigvalsh(C)
            prods = np.outer(c, c)
            lo += float(prods.min())
            hi += float(prods.max())
            info["C_eigen_products"] = (float(prods.min()), float(prods.max()))
        return KronSumOperator(dims, tuple(terms), True, (lo, hi), f"{kind}: eigenvalue sums", info)

    if kind == "diagonal_test":
        diags = [np.asarray(load_matrix(v, base_dir)) for v in params["diags"]]
        dims = tuple(D.shape[0] for D in diags)
        terms = _laplace_terms(dims, diags)
        lo = sum(float(np.min(np.diag(D))) for D in diags)
        hi = sum(float(np.max(np.diag(D))) for D in diags)
        return KronSumOperator(dims, tuple(terms), True, (lo, hi), "diagonal_test: eigenvalue sums")

    with_laplace = kind in ("laplace_like", "laplace_plus_nn")
    with_nn = kind in ("nn_interaction", "laplace_plus_nn")
    if "dims" in params or "n" in params:
        dims = _dims_from(params, len(params["A"]) if "A" in params else None)
    elif with_laplace and "A" in params:
        dims = tuple(load_matrix(m, base_dir).shape[0] for m in params["A"])
    elif with_nn and "B" in params and "C" in params:
        B0 = [load_matrix(m, base_dir).shape[0] for m in params["B"]]
        dims = tuple(B0) + (load_matrix(params["C"][-1], base_dir).shape[0],)
    else:
        raise ConstructionError("params need 'dims', 'd' and 'n', or explicit factors")
    d = len(dims)
    if with_nn and d < 2:
        raise ConstructionError("nearest-neighbour terms need d >= 2")

    terms = []
    info = {}
    if with_laplace:
        if "A" in params:
            A_list = _factor_list(params, "A", d, base_dir)
            for mu, M in enumerate(A_list):
                _require_symmetric(f"A[{mu + 1}]", M)
            info["gamma_A"] = min(_eig_range(M)[0] for M in A_list)
            info["Gamma_A"] = max(_eig_range(M)[1] for M in A_list)
        else:
            info["gamma_A"] = float(params["gamma_A"])
            info["Gamma_A"] = float(params["Gamma_A"])
            A_list = [random_symmetric(n, info["gamma_A"], info["Gamma_A"], rng) for n in dims]
        terms += _laplace_terms(dims, A_list)
    if with_nn:
        if "B" in params:
            B_list = _factor_list(params, "B", d - 1, base_dir)
            C_list = _factor_list(params, "C", d - 1, base_dir)
        else:
            B_list = [random_symmetric(dims[mu], 0.0, float(params["Gamma_B"]), rng) for mu in range(d - 1)]
            C_list = [random_symmetric(dims[mu + 1], 0.0, float(params["Gamma_C"]), rng) for mu in range(d - 1)]
        for mu in range(d - 1):
            _require_symmetric(f"B[{mu + 1}]", B_list[mu])
            _require_symmetric(f"C[{mu + 2}]", C_list[mu])
        terms += _nn_terms(dims, B_list, C_list)
        b_rng = [_eig_range(M) for M in B_list]
        c_rng = [_eig_range(M) for M in C_list]
        psd = all(lo >= -1e-12 for lo, _ in b_rng + c_rng)
        info["nn_psd"] = psd
        if "B" in params:
            info["Gamma_B"] = max(hi for _, hi in b_rng)
            info["Gamma_C"] = max(hi for _, hi in c_rng)
        else:
            info["Gamma_B"] = float(params["Gamma_B"])
            info["Gamma_C"] = float(params["Gamma_C"])

    bounds = None
    provenance = kind
    if kind == "laplace_like":
        bounds = (d * info["gamma_A"], d * info["Gamma_A"])
        provenance = "laplace_like: d*gamma_A, d*Gamma_A"
    elif kind == "laplace_plus_nn" and info.get("nn_psd", False):
        bounds = (
            d * info["gamma_A"],
            d * info["Gamma_A"] + (d - 1) * info["Gamma_B"] * info["Gamma_C"],
        )
        provenance = "laplace_plus_nn: d*gamma_A, d*Gamma_A + (d-1)*Gamma_B*Gamma_C"
    elif kind == "nn_interaction" and info.get("nn_psd", False):
        bounds = (0.0, (d - 1) * info["Gamma_B"] * info["Gamma_C"])
        provenance = "nn_interaction: 0, (d-1)*Gamma_B*Gamma_C"
    return KronSumOperator(dims, tuple(terms), True, bounds, provenance, info)


def laplace_nn_bounds(d: int, gamma_A: float, Gamma_A: float, Gamma_B: float, Gamma_C: float):
    """Analytic ``(gamma, Gamma)`` of the Laplace-plus-neighbour family at order ``d``."""
    return d * gamma_A, d * Gamma_A + (d - 1) * Gamma_B * Gamma_C


@dataclass(frozen=True, eq=False)
class RhsTensor:
    """Right-hand side, optionally with its rank-one terms and a chunking.

    ``chunks`` realizes a superposition ``b = b_1 + ... + b_m``; each chunk
    is solved separately when the t-rank of ``b`` exceeds that of ``A``.
    """

    b: Tensor
    terms: Optional[tuple] = None
    chunks: Optional[tuple] = None
    declared_ranks: Optional[dict] = None

    def check_dims(self, A: KronSumOperator):
        if self.b.dims != A.dims:
            raise ShapeError(f"right-hand side dims {self.b.dims} do not match operator dims {A.dims}")
