"""Level-wise training of neural smoothers.

Every epoch draws a fresh batch ``x_i ~ N(0, I)``, ``y_i = A x_i``, pushes
each pair through ``k_i`` frozen cycles (``x <- x - cycle(0, A x)``), runs one
traced filtered cycle and takes one Adam step per level on

    loss_l = (1/N) sum_i || m_l * DFT(e_{l-1,i} - I_l^1 h_{l,i}) ||^2,
    e_0 = x,  e_l = e_{l-1} - I_l^1 F'_l(h_l),

where ``m_l`` is the fine-variant mask.  Only the level-``l`` smoother
receives gradient from ``loss_l``.  The alternative ``combined`` loss
``(1/N) sum_i ||x_i - cycle(0, y_i)||^2`` (unfiltered cycle) backpropagates
through the whole cycle into all levels at once.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Union

import numpy as np

from .filters import make_mask
from .fno import AdamState, FnoSmoother, adam_step, desk_config
from .nmg import CycleTrace, NeuralHierarchy, _cycle
from .problems import LinearSystemOp, ProblemSpec, build_problem
from .transfer import LevelHierarchy, build_hierarchy


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    L: int = 4
    batch_size: int = 20
    rollout_cap: int = 10
    epochs: int = 500                 # per curriculum stage
    lr: float = 1e-3
    level_lr: Optional[tuple] = None  # overrides lr per level 1..L-1
    lr_halving: int = 500
    seed: int = 0
    distribution: str = "normal"
    curriculum: tuple = ()            # strictly decreasing alphas; empty -> problem alpha only
    loss: str = "levelwise"
    channels: int = 16
    layers: int = 3

    def __post_init__(self):
        object.__setattr__(self, "curriculum", tuple(float(a) for a in self.curriculum))
        if self.level_lr is not None:
            object.__setattr__(self, "level_lr", tuple(float(a) for a in self.level_lr))
            if len(self.level_lr) != self.L - 1:
                raise TrainingError(f"level_lr needs {self.L - 1} entries, got {len(self.level_lr)}")
        if self.L < 2:
            raise TrainingError("L must be >= 2")
        if self.batch_size < 1 or self.rollout_cap < 1 or self.epochs < 0:
            raise TrainingError("batch_size and rollout_cap must be >= 1, epochs >= 0")
        if self.lr_halving < 1:
            raise TrainingError("lr_halving must be >= 1")
        if any(b >= a for a, b in zip(self.curriculum, self.curriculum[1:])):
            raise TrainingError("curriculum alphas must be strictly decreasing")
        if any(a <= 0 for a in self.curriculum):
            raise TrainingError("curriculum alphas must be positive")
        if self.loss not in ("levelwise", "combined"):
            raise TrainingError(f"unknown loss {self.loss!r}")
        if self.distribution != "normal":
            raise TrainingError(f"unknown data distribution {self.distribution!r}")

    def lr_at(self, level: int, epoch: int) -> float:
        base = self.level_lr[level - 1] if self.level_lr is not None else self.lr
        return base * 0.5 ** (epoch // self.lr_halving)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["curriculum"] = list(self.curriculum)
        d["level_lr"] = None if self.level_lr is None else list(self.level_lr)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["curriculum"] = tuple(d.get("curriculum", ()))
        if d.get("level_lr") is not None:
            d["level_lr"] = tuple(d["level_lr"])
        return cls(**d)


@dataclass
class Batch:
    x: np.ndarray
    y: np.ndarray
    steps: np.ndarray   # rollout steps applied to each pair

    @property
    def count(self) -> int:
        return self.x.shape[0]


def generate_batch(op: LinearSystemOp, nh: NeuralHierarchy, batch_size: int, rollout_cap: int,
                   rng: np.random.Generator, Lp: Optional[int] = None) -> Batch:
    """Random pairs ``(x, A x)`` each pushed through ``k ~ U{1..K}`` frozen cycles."""
    x = rng.standard_normal((batch_size,) + op.shape)
    steps = rng.integers(1, rollout_cap + 1, size=batch_size)
    y = op(x)
    Lp = nh.L if Lp is None else Lp
    for s in range(1, int(steps.max()) + 1):
        active = steps >= s
        xa, ya = x[active], y[active]
        xa = xa - _cycle(nh, np.zeros_like(xa), ya, 1, Lp, None)
        x[active] = xa
        y[active] = op(xa)
    return Batch(x, y, steps)


@dataclass
class LossResult:
    loss: float
    grads: Dict[str, np.ndarray]
    per_bin: Optional[np.ndarray] = None   # F_j: per-sample mean |DFT(z)_j|^2, natural order
    mask_sq: Optional[np.ndarray] = None   # m_l^2, natural order


def _fine_masks(nh: NeuralHierarchy) -> Dict[int, np.ndarray]:
    shape = nh.base.shape(1)
    return {l: make_mask(l, nh.L, shape, "fine").natural ** 2 for l in range(1, nh.L)}


def _dft(v, nd):
    return np.fft.fftn(v, axes=tuple(range(-nd, 0)))


def _idft(v, nd):
    return np.fft.ifftn(v, axes=tuple(range(-nd, 0)))


def levelwise_loss(level: int, e_prev: np.ndarray, rec, nh: NeuralHierarchy, mask_sq: np.ndarray,
                   grads: bool = True) -> LossResult:
    """Masked spectral loss for one level given the error ``e_prev`` left by levels ``< level``.

    ``rec`` is the level's :class:`~nmgkit.nmg.LevelTrace`.  Gradients cover
    the level's own parameters only.
    """
    if not 1 <= level < nh.L:
        raise TrainingError(f"no level-wise loss for level {level} (L={nh.L})")
    nd = nh.ndim
    N = e_prev.shape[0]
    z = e_prev - nh.base.interpolate_to_fine(rec.h, level)
    Z = _dft(z, nd)
    power = Z.real**2 + Z.imag**2
    per_bin = power.mean(axis=0)
    loss = float(np.sum(mask_sq * per_bin))
    if not grads:
        return LossResult(loss, {}, per_bin, mask_sq)
    n_total = int(np.prod(z.shape[1:]))
    gz = (2.0 / N) * n_total * np.real(_idft(mask_sq * Z, nd))
    gh = -nh.base.interpolate_to_fine_adjoint(gz, level)
    return LossResult(loss, _smoother_grads(nh, rec, gh)[0], per_bin, mask_sq)


def _smoother_grads(nh: NeuralHierarchy, rec, gh):
    """Push ``dLoss/dh`` through ``h = N(b/|b|) |b|``; returns (param grads, dLoss/db)."""
    nd = nh.ndim
    live = rec.scale > 0
    gh = np.where(live, gh, 0.0)
    g_out = gh * rec.scale
    sm = nh.smoothers[rec.level]
    pgrads, g_u = sm.backward(rec.cache, g_out)
    g_scale = np.sum(rec.out * gh, axis=tuple(range(-nd, 0)), keepdims=True)
    u = rec.u
    safe = np.where(live, rec.scale, 1.0)
    u_dot = np.sum(u * g_u, axis=tuple(range(-nd, 0)), keepdims=True)
    g_b = np.where(live, (g_u - u * u_dot) / safe + u * g_scale, 0.0)
    return pgrads, g_b


def traced_cycle(nh: NeuralHierarchy, y: np.ndarray, Lp: Optional[int] = None, keep_cache: bool = True):
    trace = CycleTrace(keep_cache=keep_cache)
    Lp = nh.L if Lp is None else Lp
    out = _cycle(nh, np.zeros_like(y), y, 1, Lp, trace)
    return out, trace


def levelwise_losses(batch: Batch, nh: NeuralHierarchy, masks: Dict[int, np.ndarray],
                     grads: bool = True) -> Dict[int, LossResult]:
    _, trace = traced_cycle(nh, batch.y, keep_cache=grads)
    results = {}
    e = batch.x
    for rec in trace.levels:
        results[rec.level] = levelwise_loss(rec.level, e, rec, nh, masks[rec.level], grads)
        e = e - nh.base.interpolate_to_fine(rec.hf, rec.level)
    return results


def combined_loss(batch: Batch, nh: NeuralHierarchy, grads: bool = True):
    """``(1/N) sum ||x_i - cycle(0, y_i)||^2`` and gradients for every level."""
    N = batch.count
    out, trace = traced_cycle(nh, batch.y, keep_cache=grads)
    diff = batch.x - out
    loss = float(np.sum(diff * diff) / N)
    if not grads:
        return loss, {}
    g = -2.0 * diff / N
    all_grads: Dict[int, Dict[str, np.ndarray]] = {}
    _cycle_backward(nh, trace, 0, g, all_grads)
    return loss, all_grads


def _cycle_backward(nh: NeuralHierarchy, trace: CycleTrace, idx: int, g_x2, all_grads):
    """Gradient w.r.t. the right-hand side of the traced (sub)cycle starting at ``trace.levels[idx]``.

    Every traced level started from ``x = 0``.  Operators must be symmetric.
    """
    base = nh.base
    if idx == len(trace.levels):
        return base.solve(trace.coarse_level, g_x2)
    rec = trace.levels[idx]
    level = rec.level
    op = base.op(level)
    if not op.symmetric:
        raise TrainingError("combined-loss gradients need a symmetric operator")
    tp = base.transfer(level)
    g_yc = _cycle_backward(nh, trace, idx + 1, tp.interpolate_adjoint(g_x2), all_grads)
    g_r2 = tp.restrict_adjoint(g_yc)
    g_hf = g_x2 - op(g_r2)
    g_h = nh.smooth_filter(g_hf, level)
    pgrads, g_b = _smoother_grads(nh, rec, g_h)
    all_grads[level] = pgrads
    return g_r2 + g_b


@dataclass
class TrainLog:
    records: List[dict] = field(default_factory=list)

    def append(self, rec: dict) -> None:
        self.records.append(rec)

    def write_jsonl(self, path) -> Path:
        path = Path(path)
        with path.open("w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        return path

    @classmethod
    def read_jsonl(cls, path) -> "TrainLog":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def losses(self, level: int, alpha: Optional[float] = None) -> List[float]:
        return [r["loss"][str(level)] for r in self.records if alpha is None or r["alpha"] == alpha]


@dataclass
class TrainResult:
    nh: NeuralHierarchy
    log: TrainLog
    stages: Dict[float, Dict[int, FnoSmoother]]   # alpha -> smoothers at the end of that stage
    config: TrainConfig


def init_smoothers(base: LevelHierarchy, cfg: TrainConfig, rng: np.random.Generator) -> Dict[int, FnoSmoother]:
    out = {}
    for l in range(1, base.L):
        fcfg = desk_config(base.shape(l), channels=cfg.channels, layers=cfg.layers)
        out[l] = FnoSmoother.initialize(fcfg, rng)
    return out


def _snapshot(smoothers: Dict[int, FnoSmoother]) -> Dict[int, FnoSmoother]:
    return {l: s.copy() for l, s in smoothers.items()}


def train(problem: Union[ProblemSpec, LinearSystemOp], cfg: TrainConfig,
          smoothers: Optional[Dict[int, FnoSmoother]] = None,
          callback: Optional[Callable] = None, log_path=None) -> TrainResult:
    """Train smoothers for ``problem``, walking the curriculum when ``problem`` is a spec.

    ``callback(record, losses)`` runs after every epoch with the log record
    and the per-level :class:`LossResult` (or the combined loss value).
    """
    if isinstance(problem, ProblemSpec):
        alphas = cfg.curriculum or (problem.alpha,)
        systems = [(a, build_problem(replace(problem, alpha=a))) for a in alphas]
    else:
        if cfg.curriculum:
            raise TrainingError("a curriculum needs a ProblemSpec, not a fixed operator")
        systems = [(problem.meta.get("alpha"), problem)]
    filtered = cfg.loss == "levelwise"
    master = np.random.default_rng(cfg.seed)
    first_base = build_hierarchy(systems[0][1], cfg.L)
    if smoothers is None:
        smoothers = init_smoothers(first_base, cfg, master)
    else:
        smoothers = _snapshot(smoothers)
    log = TrainLog()
    stages: Dict[float, Dict[int, FnoSmoother]] = {}
    fh = open(log_path, "w", encoding="utf-8") if log_path is not None else None
    try:
        for stage, (alpha, op) in enumerate(systems):
            base = first_base if stage == 0 else build_hierarchy(op, cfg.L)
            nh = NeuralHierarchy(base, smoothers, filtered=filtered)
            masks = _fine_masks(nh)
            adams = {l: AdamState.zeros(s.params) for l, s in smoothers.items()}
            for epoch in range(cfg.epochs):
                batch_seed = int(master.integers(0, 2**63 - 1))
                rng = np.random.default_rng(batch_seed)
                frozen = nh.with_smoothers(_snapshot(smoothers))
                batch = generate_batch(op, frozen, cfg.batch_size, cfg.rollout_cap, rng)
                lrs = {l: cfg.lr_at(l, epoch) for l in smoothers}
                if cfg.loss == "levelwise":
                    results = levelwise_losses(batch, nh, masks)
                    losses = {l: r.loss for l, r in results.items()}
                    grads = {l: r.grads for l, r in results.items()}
                    bound = {str(l): float(np.max(r.mask_sq * r.per_bin) / r.loss) if r.loss > 0 else 0.0
                             for l, r in results.items()}
                else:
                    value, grads = combined_loss(batch, nh)
                    losses = {0: value}
                    results = value
                    bound = None
                for lvl, value in losses.items():
                    if not np.isfinite(value):
                        raise TrainingError(f"non-finite loss at alpha={alpha} epoch {epoch} level {lvl}")
                for l, g in grads.items():
                    adam_step(adams[l], smoothers[l].params, g, lrs[l])
                rec = {"alpha": alpha, "stage": stage, "epoch": epoch, "batch_seed": batch_seed,
                       "loss": {str(l): v for l, v in losses.items()},
                       "lr": {str(l): v for l, v in lrs.items()}}
                if bound is not None:
                    rec["bound_ratio"] = bound
                log.append(rec)
                if fh is not None:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")
                if callback is not None:
                    callback(rec, results)
            stages[alpha] = _snapshot(smoothers)
    finally:
        if fh is not None:
            fh.close()
    return TrainResult(nh, log, stages, cfg)
