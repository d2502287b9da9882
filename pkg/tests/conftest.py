"""Shared desk-scale training runs.

The desk recipe (n=256, L=4, c=16, 500 epochs per alpha stage, seed 0)
takes minutes on one CPU, so results are cached in the pytest cache
directory keyed by the recipe and a hash of the package sources.  Set
``NMGKIT_RETRAIN=1`` to ignore the cache.
"""
import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List

import numpy as np
import pytest

import nmgkit
from nmgkit.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from nmgkit.problems import ProblemSpec
from nmgkit.training import TrainConfig, TrainLog, train

DESK_PROBLEM = ProblemSpec(n=256)
DESK_RECIPES = {
    "levelwise": TrainConfig(L=4, epochs=500, seed=0, curriculum=(1e-3, 1e-4, 1e-5), loss="levelwise"),
    # identical budget for the alpha values it is compared on
    "combined": TrainConfig(L=4, epochs=500, seed=0, curriculum=(1e-3, 1e-4), loss="combined"),
}
BOUND_SLACK = 1e-10
MASK_FLOOR = 1e-6


@dataclass
class DeskRun:
    name: str
    config: TrainConfig
    stages: Dict[float, dict]
    log: TrainLog
    seconds: float
    bound_violation: List[float]   # per epoch: max_j (m_j^2 F_j - L_l) over bins with m_j > floor, levelwise only
    cached: bool


def _source_digest() -> str:
    h = hashlib.sha256()
    for path in sorted(Path(nmgkit.__file__).parent.glob("*.py")):
        h.update(path.name.encode())
        h.update(path.read_bytes())
    return h.hexdigest()[:16]


def _bound_violation(results) -> float:
    worst = -np.inf
    for r in results.values():
        keep = r.mask_sq > MASK_FLOOR**2
        # F_j <= L / m_j^2  <=>  F_j - L / m_j^2 <= 0
        gap = r.per_bin[keep] - r.loss / r.mask_sq[keep]
        worst = max(worst, float(gap.max()))
    return worst


def _train(name: str, cfg: TrainConfig, out: Path) -> DeskRun:
    violations = []

    def watch(rec, results):
        if cfg.loss == "levelwise":
            violations.append(_bound_violation(results))

    t0 = time.perf_counter()
    res = train(DESK_PROBLEM, cfg, callback=watch)
    seconds = time.perf_counter() - t0
    out.mkdir(parents=True, exist_ok=True)
    for alpha, smoothers in res.stages.items():
        spec = ProblemSpec(n=DESK_PROBLEM.n, alpha=alpha)
        save_checkpoint(out / f"{alpha!r}.ckpt", Checkpoint(smoothers, cfg.L, spec.digest(), cfg.seed,
                                                            {"filtered": cfg.loss == "levelwise"}))
    res.log.write_jsonl(out / "log.jsonl")
    (out / "meta.json").write_text(json.dumps({"seconds": seconds, "bound_violation": violations}))
    return DeskRun(name, cfg, res.stages, res.log, seconds, violations, cached=False)


def _load(name: str, cfg: TrainConfig, out: Path) -> DeskRun:
    meta = json.loads((out / "meta.json").read_text())
    stages = {}
    for alpha in cfg.curriculum:
        spec = ProblemSpec(n=DESK_PROBLEM.n, alpha=alpha)
        stages[alpha] = load_checkpoint(out / f"{alpha!r}.ckpt", expected_digest=spec.digest()).smoothers
    return DeskRun(name, cfg, stages, TrainLog.read_jsonl(out / "log.jsonl"), meta["seconds"],
                   meta["bound_violation"], cached=True)


def desk_run(request, name: str) -> DeskRun:
    cfg = DESK_RECIPES[name]
    key = hashlib.sha256(json.dumps([name, cfg.to_dict(), DESK_PROBLEM.to_dict(), _source_digest()],
                                    sort_keys=True).encode()).hexdigest()[:16]
    out = Path(request.config.cache.mkdir("nmgkit-desk")) / f"{name}-{key}"
    if (out / "meta.json").is_file() and not os.environ.get("NMGKIT_RETRAIN"):
        return _load(name, cfg, out)
    return _train(name, cfg, out)


@pytest.fixture(scope="session")
def desk_levelwise(request) -> DeskRun:
    return desk_run(request, "levelwise")


@pytest.fixture(scope="session")
def desk_combined(request) -> DeskRun:
    return desk_run(request, "combined")


# --- acceptance summary -----------------------------------------------------------

_CRITERIA: Dict[int, tuple] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    _CRITERIA[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
