"""Experiment configuration, solver orchestration and result tables.

A configuration is a YAML mapping with optional sections::

    problem:  {dimension, n, alpha, kernel_sigma, sigma_units, regularization, boundary}
    train:    {L, batch_size, rollout_cap, epochs, lr, level_lr, lr_halving, seed,
               curriculum, loss, channels, layers}
    solver:   {method: nmg|mg|cg, L, Lp, tol, max_cycles, nu1, nu2, omega,
               checkpoint, strict_checkpoint}
    bench:    {methods, ns, alphas, num_rhs, rhs_seed, timing}
    output_dir: path

``solver.checkpoint`` may contain ``{alpha}`` and ``{n}`` placeholders so one
template covers a whole benchmark grid.  Every key can be overridden with
``section.key=value`` strings (values parsed as YAML).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import yaml

from .checkpoint import load_checkpoint
from .classical import SolveReport, cg_solve, jacobi_reduction_factor, mg_solve
from .nmg import NeuralHierarchy, nmg_solve
from .numerics import eig_sym
from .problems import ProblemError, ProblemSpec, build_problem
from .training import TrainConfig, TrainingError
from .transfer import build_hierarchy

METHODS = ("nmg", "mg", "cg")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    method: str = "nmg"
    L: int = 4
    Lp: Optional[int] = None
    tol: float = 1e-6
    max_cycles: int = 30000
    nu1: int = 5
    nu2: int = 0
    omega: float = 0.5
    checkpoint: Optional[str] = None
    strict_checkpoint: bool = True


@dataclass(frozen=True)
class BenchConfig:
    methods: tuple = ("mg",)
    ns: tuple = (256,)
    alphas: tuple = (1e-4,)
    num_rhs: int = 10
    rhs_seed: int = 0
    timing: bool = True     # False writes 0.0 seconds so output files are reproducible bit for bit


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    output_dir: str = "."


_SECTIONS = {"problem": ProblemSpec, "train": TrainConfig, "solver": SolverConfig, "bench": BenchConfig}
_TUPLES = {("bench", "methods"), ("bench", "ns"), ("bench", "alphas"), ("train", "curriculum"),
           ("train", "level_lr")}
_FLOATS = {("problem", "alpha"), ("problem", "kernel_sigma"), ("train", "lr"), ("solver", "tol"),
           ("solver", "omega")}


def _check_type(path: str, value, expected):
    # YAML 1.1 reads "1e-4" (no dot) as a string
    if expected is float and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if expected is int and isinstance(value, bool):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if not isinstance(value, expected):
        raise ConfigError(f"{path}: expected {expected.__name__}, got {type(value).__name__} {value!r}")
    return value


def _coerce(section: str, key: str, value, default):
    path = f"{section}.{key}"
    if value is None:
        return None
    if (section, key) in _TUPLES:
        if not isinstance(value, (list, tuple)):
            value = [value]
        kind = float if key in ("alphas", "curriculum", "level_lr") else (int if key == "ns" else str)
        return tuple(_check_type(f"{path}[{i}]", v, kind) for i, v in enumerate(value))
    if (section, key) in _FLOATS:
        return _check_type(path, value, float)
    if isinstance(default, bool):
        return _check_type(path, value, bool)
    if isinstance(default, int):
        return _check_type(path, value, int)
    if isinstance(default, str):
        return _check_type(path, value, str)
    if key in ("Lp",):
        return _check_type(path, value, int)
    if key in ("checkpoint",):
        return _check_type(path, value, str)
    return value


def _build_section(section: str, raw) -> object:
    cls = _SECTIONS[section]
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{section}: expected a mapping")
    known = {f.name: f for f in fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        kwargs[key] = _coerce(section, key, value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except (ProblemError, TrainingError, TypeError, ValueError) as exc:
        raise ConfigError(f"{section}: {exc}") from None


def _validate(cfg: ExperimentConfig) -> ExperimentConfig:
    s, b = cfg.solver, cfg.bench
    if s.method not in METHODS:
        raise ConfigError(f"solver.method: must be one of {METHODS}, got {s.method!r}")
    if s.L < 2:
        raise ConfigError("solver.L: must be >= 2")
    if s.Lp is not None and not 2 <= s.Lp <= s.L:
        raise ConfigError(f"solver.Lp: must lie in 2..{s.L}")
    if not s.tol > 0:
        raise ConfigError("solver.tol: must be positive")
    if s.max_cycles < 1:
        raise ConfigError("solver.max_cycles: must be >= 1")
    if b.num_rhs < 1:
        raise ConfigError("bench.num_rhs: must be >= 1")
    for m in b.methods:
        if m not in METHODS:
            raise ConfigError(f"bench.methods: unknown method {m!r}")
    for n in b.ns:
        try:
            replace(cfg.problem, n=n)
        except ProblemError as exc:
            raise ConfigError(f"bench.ns: {exc}") from None
    for a in b.alphas:
        if not a > 0:
            raise ConfigError(f"bench.alphas: alpha must be positive, got {a}")
    return cfg


def _set_path(raw: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    if len(parts) == 1:
        if parts[0] != "output_dir":
            raise ConfigError(f"{dotted}: unknown field")
        raw["output_dir"] = value
        return
    if len(parts) != 2 or parts[0] not in _SECTIONS:
        raise ConfigError(f"{dotted}: unknown field")
    sec = raw.setdefault(parts[0], {})
    if sec is None:
        sec = raw[parts[0]] = {}
    sec[parts[1]] = value


def parse_override(text: str):
    if "=" not in text:
        raise ConfigError(f"override {text!r}: expected key=value")
    key, _, value = text.partition("=")
    try:
        return key.strip(), yaml.safe_load(value)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{key}: cannot parse value {value!r}: {exc}") from None


def config_from_dict(raw: Optional[dict], overrides: Sequence = ()) -> ExperimentConfig:
    raw = {} if raw is None else json.loads(json.dumps(raw))
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        _set_path(raw, key, value)
    for key in raw:
        if key not in _SECTIONS and key != "output_dir":
            raise ConfigError(f"{key}: unknown section")
    parts = {sec: _build_section(sec, raw.get(sec)) for sec in _SECTIONS}
    out = raw.get("output_dir", ".")
    if not isinstance(out, str):
        raise ConfigError("output_dir: expected a path string")
    return _validate(ExperimentConfig(output_dir=out, **parts))


def load_config(path=None, overrides: Sequence = ()) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: invalid YAML: {str(exc).splitlines()[0]}") from None
    return config_from_dict(raw, overrides)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    d = {"problem": cfg.problem.to_dict(), "train": cfg.train.to_dict(),
         "solver": asdict(cfg.solver), "bench": asdict(cfg.bench), "output_dir": cfg.output_dir}
    d["bench"] = {k: list(v) if isinstance(v, tuple) else v for k, v in d["bench"].items()}
    return d


# --- solving -----------------------------------------------------------------

def make_rhs(op, seed: int) -> np.ndarray:
    """Test right-hand side ``y = A x`` with ``x`` standard normal."""
    x = np.random.default_rng(seed).standard_normal(op.shape)
    return op(x)


def checkpoint_path(template: Optional[str], spec: ProblemSpec) -> Path:
    if template is None:
        raise ConfigError("solver.checkpoint: the nmg solver needs a trained checkpoint")
    try:
        path = Path(template.format(alpha=spec.alpha, n=spec.n))
    except (KeyError, IndexError, ValueError) as exc:
        raise ConfigError(f"solver.checkpoint: bad placeholder in {template!r}: {exc}") from None
    if not path.is_file():
        raise ConfigError(f"solver.checkpoint: file not found: {path}")
    return path


class Solver:
    """A ready-to-use solver for one system; hierarchy and checkpoint are set up once."""

    def __init__(self, spec: ProblemSpec, solver: SolverConfig, method: Optional[str] = None, nh=None):
        self.spec = spec
        self.cfg = solver
        self.method = method or solver.method
        self.op = build_problem(spec)
        self.hier = None
        self.nh = nh
        if self.method == "mg":
            self.hier = build_hierarchy(self.op, solver.L)
        elif self.method == "nmg" and nh is None:
            ckpt = load_checkpoint(checkpoint_path(solver.checkpoint, spec), expected_digest=spec.digest(),
                                   strict=solver.strict_checkpoint)
            self.nh = NeuralHierarchy(build_hierarchy(self.op, ckpt.L), ckpt.smoothers, filtered=ckpt.extra.get(
                "filtered", True))

    def solve(self, y) -> SolveReport:
        c = self.cfg
        if self.method == "cg":
            return cg_solve(self.op, y, tol=c.tol, max_iter=c.max_cycles)
        if self.method == "mg":
            return mg_solve(self.hier, y, nu1=c.nu1, nu2=c.nu2, tol=c.tol, max_cycles=c.max_cycles,
                            omega=c.omega, coarsest=c.Lp)
        return nmg_solve(self.nh, y, Lp=c.Lp, tol=c.tol, max_cycles=c.max_cycles)


@dataclass
class BenchResult:
    method: str
    n: int
    alpha: float
    Lp: int
    cycles: List[int]
    seconds: List[float]
    converged: List[bool] = field(default_factory=list)

    def row(self) -> dict:
        cyc = np.asarray(self.cycles, dtype=float)
        std = float(np.std(cyc, ddof=1)) if len(cyc) > 1 else 0.0
        return {"method": self.method, "n": self.n, "alpha": self.alpha, "L'": self.Lp,
                "mean_cycles": float(cyc.mean()), "std_cycles": std,
                "mean_seconds": float(np.mean(self.seconds))}


def run_rhs_set(solver: Solver, num_rhs: int, rhs_seed: int, timing: bool = True) -> BenchResult:
    cycles, secs, conv = [], [], []
    for i in range(num_rhs):
        rep = solver.solve(make_rhs(solver.op, rhs_seed + i))
        cycles.append(rep.iterations)
        secs.append(rep.wall_time if timing else 0.0)
        conv.append(rep.converged)
    Lp = solver.cfg.Lp
    if Lp is None:
        Lp = solver.nh.L if solver.nh is not None else (solver.cfg.L if solver.method == "mg" else 0)
    return BenchResult(solver.method, solver.spec.n, solver.spec.alpha, int(Lp), cycles, secs, conv)


def run_bench(cfg: ExperimentConfig) -> List[BenchResult]:
    results = []
    for method in cfg.bench.methods:
        for n in cfg.bench.ns:
            for alpha in cfg.bench.alphas:
                spec = replace(cfg.problem, n=n, alpha=alpha)
                solver = Solver(spec, cfg.solver, method)
                results.append(run_rhs_set(solver, cfg.bench.num_rhs, cfg.bench.rhs_seed, cfg.bench.timing))
    return results


TABLE_COLUMNS = ("method", "n", "alpha", "L'", "mean_cycles", "std_cycles", "mean_seconds")


def _sorted_rows(results) -> List[dict]:
    rows = [r.row() if isinstance(r, BenchResult) else dict(r) for r in results]
    if not rows:
        raise ValueError("emit_table needs at least one result")
    return sorted(rows, key=lambda r: (r["method"], r["n"], -r["alpha"], r["L'"]))


def table_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for r in _sorted_rows(results):
        w.writerow([r["method"], r["n"], repr(float(r["alpha"])), r["L'"], repr(float(r["mean_cycles"])),
                    repr(float(r["std_cycles"])), repr(float(r["mean_seconds"]))])
    return buf.getvalue()


def parse_table_csv(text: str) -> List[dict]:
    rows = []
    reader = csv.DictReader(io.StringIO(text))
    for rec in reader:
        rows.append({"method": rec["method"], "n": int(rec["n"]), "alpha": float(rec["alpha"]),
                     "L'": int(rec["L'"]), "mean_cycles": float(rec["mean_cycles"]),
                     "std_cycles": float(rec["std_cycles"]), "mean_seconds": float(rec["mean_seconds"])})
    return rows


def emit_table(results, out_dir=None, stem: str = "bench"):
    """Write ``<stem>.csv`` and ``<stem>.json``; returns the sorted rows."""
    rows = _sorted_rows(results)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(table_csv(rows), encoding="utf-8")
        full = [r.row() | {"cycles": r.cycles, "seconds": r.seconds} for r in results
                if isinstance(r, BenchResult)]
        payload = {"rows": rows, "runs": full} if full else {"rows": rows}
        (out / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    return rows


# --- diagnostics -------------------------------------------------------------

def smoothing_factor_samples(alpha: float, omega: float = 0.5, num: int = 257):
    """``(phi, 1 - mu_phi)`` on an even grid over ``[-pi, pi]``."""
    if num < 2:
        raise ConfigError("num: need at least 2 samples")
    phi = np.linspace(-np.pi, np.pi, num)
    return phi, jacobi_reduction_factor(phi, alpha, omega)


def extreme_eigenpairs(spec: ProblemSpec, count: int = 2):
    """Smallest and largest ``count`` eigenpairs of the densified system."""
    op = build_problem(spec)
    w, V = eig_sym(op.densify())
    count = min(count, len(w))
    idx = list(range(count)) + list(range(len(w) - count, len(w)))
    return w[idx], V[:, idx]
