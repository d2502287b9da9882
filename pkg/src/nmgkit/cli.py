"""Command-line front end (``nmgkit <subcommand>``).

Exit codes: 0 success, 2 configuration/input error, 3 numerical failure.
Errors are reported as one line on stderr: ``nmgkit: error: <kind>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .bench import (
    ConfigError,
    Solver,
    config_to_dict,
    emit_table,
    extreme_eigenpairs,
    load_config,
    make_rhs,
    run_bench,
    smoothing_factor_samples,
)
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint
from .classical import SolverError
from .filters import MaskError, write_masks_csv
from .fno import FnoError
from .nmg import CycleError, error_spectra, write_spectra_csv
from .numerics import NumericsError
from .problems import ProblemError
from .training import TrainingError, train
from .transfer import TransferError

CHECKPOINT_TEMPLATE = "smoothers_n{n}_alpha{alpha}.ckpt"

CONFIG_ERRORS = (ConfigError, ProblemError, TransferError, MaskError, CheckpointError, FileNotFoundError)
NUMERIC_ERRORS = (SolverError, NumericsError, TrainingError, CycleError, FnoError, FloatingPointError)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"arguments: {message}")


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="YAML experiment configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. --set problem.alpha=1e-5")
        p.add_argument("--output-dir", help="directory for output files")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nmgkit", description="Neural multigrid experiments")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train level-wise smoothers, write checkpoints and a JSON-lines log")
    _common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("solve", help="solve one system and print a JSON report")
    _common(p)
    p.add_argument("--method", choices=("nmg", "mg", "cg"))
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--Lp", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--rhs-index", type=int, default=0)
    p.add_argument("--out", help="also write the report to this file")

    p = sub.add_parser("bench", help="cycle-count table over the (n, alpha) grid")
    _common(p)

    p = sub.add_parser("spectra", help="error spectra of one neural cycle (CSV)")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--Lp", type=int)
    p.add_argument("--out", required=True)

    p = sub.add_parser("smoothing-factor", help="Jacobi reduction factor over a phi grid (CSV)")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--omega", type=float, default=0.5)
    p.add_argument("--num", type=int, default=257)
    p.add_argument("--out")

    p = sub.add_parser("eigs", help="extreme eigenvectors of a small densified system (CSV)")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--count", type=int, default=2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("masks", help="frequency mask values (CSV)")
    p.add_argument("--L", type=int, default=4)
    p.add_argument("--n", type=int, default=256)
    p.add_argument("--dim", type=int, choices=(1, 2), default=1)
    p.add_argument("--variant", choices=("fine", "level"), default="fine")
    p.add_argument("--out", required=True)
    return parser


def _config(args, extra=()):
    overrides = list(args.set) + list(extra)
    if getattr(args, "output_dir", None):
        overrides.append(("output_dir", args.output_dir))
    return load_config(args.config, overrides)


def _outdir(cfg) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"output_dir: cannot create {out}: {exc.strerror}") from None
    return out


def _cmd_train(args) -> int:
    extra = []
    if args.epochs is not None:
        extra.append(("train.epochs", args.epochs))
    if args.seed is not None:
        extra.append(("train.seed", args.seed))
    cfg = _config(args, extra)
    out = _outdir(cfg)
    result = train(cfg.problem, cfg.train, log_path=out / "trainlog.jsonl")
    written = []
    for alpha, smoothers in result.stages.items():
        spec = replace(cfg.problem, alpha=alpha)
        path = out / CHECKPOINT_TEMPLATE.format(n=spec.n, alpha=spec.alpha)
        ckpt = Checkpoint(smoothers, cfg.train.L, spec.digest(), cfg.train.seed,
                          {"alpha": alpha, "filtered": cfg.train.loss == "levelwise",
                           "problem": spec.to_dict(), "train": cfg.train.to_dict()})
        save_checkpoint(path, ckpt)
        written.append(str(path))
    print(json.dumps({"checkpoints": written, "log": str(out / "trainlog.jsonl"),
                      "epochs": len(result.log.records)}))
    return 0


def _solver_overrides(args):
    extra = []
    for flag, key in (("method", "solver.method"), ("n", "problem.n"), ("alpha", "problem.alpha"),
                      ("tol", "solver.tol"), ("Lp", "solver.Lp"), ("checkpoint", "solver.checkpoint")):
        value = getattr(args, flag, None)
        if value is not None:
            extra.append((key, value))
    return extra


def _cmd_solve(args) -> int:
    cfg = _config(args, _solver_overrides(args))
    solver = Solver(cfg.problem, cfg.solver)
    report = solver.solve(make_rhs(solver.op, cfg.bench.rhs_seed + args.rhs_index))
    text = report.to_json(sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_bench(args) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    rows = emit_table(run_bench(cfg), out)
    (out / "bench_config.json").write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True),
                                           encoding="utf-8")
    print(json.dumps({"rows": len(rows), "csv": str(out / "bench.csv"), "json": str(out / "bench.json")}))
    return 0


def _cmd_spectra(args) -> int:
    extra = [("solver.method", "nmg")]
    if args.checkpoint:
        extra.append(("solver.checkpoint", args.checkpoint))
    if args.Lp is not None:
        extra.append(("solver.Lp", args.Lp))
    cfg = _config(args, extra)
    solver = Solver(cfg.problem, cfg.solver)
    x_true = np.random.default_rng(args.seed).standard_normal(solver.op.shape)
    spectra = error_spectra(solver.nh, x_true, Lp=cfg.solver.Lp)
    write_spectra_csv(args.out, spectra)
    print(json.dumps({"csv": args.out, "levels": len(spectra.spectra)}))
    return 0


def _cmd_smoothing(args) -> int:
    if not args.alpha > 0:
        raise ConfigError("alpha: must be positive")
    phi, red = smoothing_factor_samples(args.alpha, args.omega, args.num)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["phi", "reduction"])
        for p, r in zip(phi, red):
            w.writerow([repr(float(p)), repr(float(r))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def _cmd_eigs(args) -> int:
    extra = []
    if args.n is not None:
        extra.append(("problem.n", args.n))
    if args.alpha is not None:
        extra.append(("problem.alpha", args.alpha))
    cfg = _config(args, extra)
    w, V = extreme_eigenpairs(cfg.problem, args.count)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["node"] + [f"v{k}" for k in range(len(w))])
        for i in range(V.shape[0]):
            wr.writerow([i] + [repr(float(v)) for v in V[i]])
    print(json.dumps({"csv": args.out, "eigenvalues": [float(x) for x in w]}))
    return 0


def _cmd_masks(args) -> int:
    shape = (args.n,) if args.dim == 1 else (args.n, args.n)
    if args.L < 2:
        raise ConfigError("L: must be >= 2")
    write_masks_csv(args.out, args.L, shape, args.variant)
    print(json.dumps({"csv": args.out}))
    return 0


COMMANDS = {"train": _cmd_train, "solve": _cmd_solve, "bench": _cmd_bench, "spectra": _cmd_spectra,
            "smoothing-factor": _cmd_smoothing, "eigs": _cmd_eigs, "masks": _cmd_masks}


def _fail(code: int, kind: str, exc: BaseException) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    print(f"nmgkit: error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError("arguments: a subcommand is required")
        return COMMANDS[args.command](args)
    except CONFIG_ERRORS as exc:
        return _fail(2, "config", exc)
    except NUMERIC_ERRORS as exc:
        return _fail(3, "numerical", exc)
    except OSError as exc:
        return _fail(2, "config", exc)


if __name__ == "__main__":
    sys.exit(main())
