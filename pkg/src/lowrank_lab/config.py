"""JSON experiment configuration.

A config is one JSON object (or ``{"experiments": [...]}`` for several
cells). Keys::

    name         str, stem of the output files (default: config file stem)
    mode         linear | eigen | commuting | d_sweep | two_step | spectrum
    seed         int, base seed; sub-seeds default to seed, seed+1, seed+2
    problem      {"kind": <model kind>, ...build_model params}
    rhs          {"kind": ones | random | e1 | terms | csv, "rank": k,
                  "seed": s, "normalize": true, "chunks": m}
    start        {"kind": zero | leading_pair | random, "seed": s}
    splittings   "tt" (default) or a list like ["t=1", "t=1-2"]
    n_steps      int, default 12
    eps_rank     float, default 1e-10
    output_dir   str
    sweep        {"d_list": [2, ..., 8], "n": 2}
    two_step     {"instances": 50, "samples": 1}
    tensor       {"dims": [...], "csv": path} or {"dims": [...], "seed": s}

Relative paths (factor CSVs, output_dir) are resolved against the working
directory.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CapacityError, ConfigError
from .kron_operator import DENSE_GUARD, KronSumOperator, RhsTensor, build_model, load_matrix
from .tensor_core import DEFAULT_EPS_RANK, Splitting, Tensor

MODES = ("linear", "eigen", "commuting", "d_sweep", "two_step", "spectrum")

_GENERATOR_KEYS = ("gamma_A", "Gamma_A", "Gamma_B", "Gamma_C")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    name: str = "experiment"
    seed: Optional[int] = None
    problem: dict = field(default_factory=dict)
    rhs: dict = field(default_factory=lambda: {"kind": "ones"})
    start: dict = field(default_factory=dict)
    splittings: object = "tt"
    n_steps: int = 12
    eps_rank: float = DEFAULT_EPS_RANK
    output_dir: Optional[str] = None
    sweep: dict = field(default_factory=dict)
    two_step: dict = field(default_factory=dict)
    tensor: dict = field(default_factory=dict)
    base_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict, base_dir=None, name=None) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object", reason="config_malformed")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys {unknown}", reason="config_unknown_key")
        kwargs = dict(data)
        if name is not None and "name" not in kwargs:
            kwargs["name"] = name
        if base_dir is not None:
            kwargs["base_dir"] = str(base_dir)
        if "mode" not in kwargs:
            raise ConfigError("config needs a 'mode'", reason="config_missing_key")
        try:
            cfg = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc), reason="config_malformed") from exc
        cfg.check_types()
        return cfg

    def check_types(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", reason="unknown_mode")
        if self.seed is not None and not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer", reason="config_bad_type")
        if not isinstance(self.n_steps, int) or self.n_steps < 0:
            raise ConfigError("n_steps must be a nonnegative integer", reason="config_bad_type")
        if not isinstance(self.eps_rank, (int, float)) or not 0.0 < self.eps_rank < 1.0:
            raise ConfigError("eps_rank must lie in (0, 1)", reason="config_bad_type")
        for key in ("problem", "rhs", "start", "sweep", "two_step", "tensor"):
            if not isinstance(getattr(self, key), dict):
                raise ConfigError(f"'{key}' must be an object", reason="config_bad_type")

    def with_overrides(self, **overrides) -> ExperimentConfig:
        changes = {k: v for k, v in overrides.items() if v is not None}
        cfg = dataclasses.replace(self, **changes)
        cfg.check_types()
        return cfg

    def sub_seed(self, section: dict, offset: int) -> Optional[int]:
        if "seed" in section:
            return int(section["seed"])
        return None if self.seed is None else self.seed + offset

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out.pop("base_dir")
        return out


def load_configs(path) -> list:
    """Read a config file; returns one :class:`ExperimentConfig` per cell."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found", reason="config_not_found")
    try:
        data = json.loads(path.read_text())
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}", reason="config_parse") from exc
    if isinstance(data, dict) and "experiments" in data:
        cells = data["experiments"]
        if not isinstance(cells, list) or not cells:
            raise ConfigError("'experiments' must be a nonempty list", reason="config_malformed")
        return [
            ExperimentConfig.from_dict(cell, name=f"{path.stem}_{i}")
            for i, cell in enumerate(cells)
        ]
    return [ExperimentConfig.from_dict(data, name=path.stem)]


# -- building problem objects ----------------------------------------------


def _needs_seed(problem: dict) -> bool:
    return any(k in problem for k in _GENERATOR_KEYS) and not any(
        k in problem for k in ("A", "B", "C", "diags")
    )


def build_operator(cfg: ExperimentConfig, problem: Optional[dict] = None, **extra) -> KronSumOperator:
    problem = dict(cfg.problem if problem is None else problem)
    problem.update(extra)
    kind = problem.pop("kind", None)
    if kind is None:
        raise ConfigError("problem needs a 'kind'", reason="config_missing_key")
    if _needs_seed(problem) and "seed" not in problem:
        if cfg.seed is None:
            raise ConfigError("random generator without a seed", reason="seed_missing")
        problem["seed"] = cfg.seed
    try:
        return build_model(kind, problem, base_dir=cfg.base_dir)
    except KeyError as exc:
        raise ConfigError(f"problem parameter {exc} missing", reason="config_missing_key") from exc


def build_rhs(cfg: ExperimentConfig, A: KronSumOperator) -> RhsTensor:
    spec = dict(cfg.rhs)
    kind = spec.get("kind", "ones")
    dims = A.dims
    terms = None
    if kind == "ones":
        terms = [[np.ones(n) / math.sqrt(n) for n in dims]]
    elif kind == "e1":
        terms = [[np.eye(n)[0] for n in dims]]
    elif kind == "random":
        seed = cfg.sub_seed(spec, 1)
        if seed is None:
            raise ConfigError("random right-hand side without a seed", reason="seed_missing")
        rng = np.random.default_rng(seed)
        terms = [[rng.standard_normal(n) for n in dims] for _ in range(int(spec.get("rank", 1)))]
    elif kind == "terms":
        terms = [[np.asarray(v, dtype=np.float64) for v in term] for term in spec["factors"]]
    elif kind == "csv":
        path = Path(spec["path"])
        if cfg.base_dir is not None and not path.is_absolute():
            path = Path(cfg.base_dir) / path
        data = np.loadtxt(path, delimiter=",").reshape(-1)
        b = Tensor.from_vector(dims, data)
        rhs = RhsTensor(b / b.norm() if spec.get("normalize", True) else b)
        rhs.check_dims(A)
        return rhs
    else:
        raise ConfigError(f"unknown rhs kind {kind!r}", reason="unknown_rhs_kind")

    tensors = [Tensor.rank_one(term) for term in terms]
    for t in tensors:
        if t.dims != dims:
            raise ConfigError(f"rhs term dims {t.dims} do not match operator dims {dims}",
                              reason="shape_mismatch")
    b = tensors[0]
    for t in tensors[1:]:
        b = b + t
    scale = 1.0 / b.norm() if spec.get("normalize", True) and b.norm() > 0 else 1.0
    chunks = None
    m = int(spec.get("chunks", 0))
    if m > 1:
        groups = np.array_split(np.arange(len(tensors)), m)
        chunks = []
        for g in groups:
            if len(g) == 0:
                continue
            c = tensors[g[0]]
            for k in g[1:]:
                c = c + tensors[k]
            chunks.append(scale * c)
        chunks = tuple(chunks)
    return RhsTensor(scale * b, tuple(scale * t for t in tensors), chunks)


def resolve_splittings(cfg: ExperimentConfig, d: int) -> list:
    spec = cfg.splittings
    if spec is None or spec == "tt":
        return Splitting.tt_family(d)
    if spec == "all_single":
        return [Splitting((m,), d) for m in range(1, d)]
    if not isinstance(spec, list) or not spec:
        raise ConfigError("splittings must be 'tt' or a nonempty list", reason="config_bad_type")
    return [Splitting.parse(s, d) for s in spec]


def build_tensor(cfg: ExperimentConfig) -> Tensor:
    spec = cfg.tensor
    if "dims" not in spec:
        raise ConfigError("tensor needs 'dims'", reason="config_missing_key")
    dims = tuple(int(n) for n in spec["dims"])
    if "csv" in spec:
        data = load_matrix({"csv": spec["csv"]}, cfg.base_dir).reshape(-1)
        return Tensor.from_vector(dims, data)
    seed = cfg.sub_seed(spec, 0)
    if seed is None:
        raise ConfigError("random tensor without a seed", reason="seed_missing")
    return Tensor.random(dims, np.random.default_rng(seed))


def validate(cfg: ExperimentConfig) -> list:
    """Build every object the experiment needs without running it.

    Returns a list of informational notes; raises a subclass of
    :class:`~lowrank_lab.errors.LabError` (with reason code) on any problem.
    """
    notes = []
    if cfg.mode == "spectrum" and cfg.tensor:
        u = build_tensor(cfg)
        resolve_splittings(cfg, u.order)
        notes.append(f"tensor dims {u.dims}")
        return notes
    if cfg.mode == "d_sweep":
        d_list = cfg.sweep.get("d_list")
        if not d_list or any(int(d) < 2 for d in d_list):
            raise ConfigError("sweep needs 'd_list' with every d >= 2", reason="config_bad_type")
        for key in _GENERATOR_KEYS:
            if key not in cfg.problem and key not in cfg.sweep:
                raise ConfigError(f"sweep needs '{key}'", reason="config_missing_key")
        return notes
    A = build_operator(cfg)
    splittings = resolve_splittings(cfg, A.order)
    notes.append(f"operator dims {A.dims}, {len(A.terms)} terms")
    notes.append("splittings " + ", ".join(t.label for t in splittings))
    if cfg.mode in ("eigen", "two_step") and A.size > DENSE_GUARD:
        raise CapacityError(f"eigen mode needs total dimension <= {DENSE_GUARD}")
    if cfg.mode in ("linear", "commuting", "spectrum"):
        build_rhs(cfg, A)
    return notes
