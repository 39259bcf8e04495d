"""Command line entry point: ``zubov-lbf {oracle,train,verify,export-grid,simulate}``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import net as nn
from .config import ConfigError, RunConfig, load_config
from .expr import ExprError
from .oracle import Dataset, generate_dataset, grid_points, label_points, read_dataset_csv, simulate, \
    write_dataset_csv
from .system import NotHurwitz, SystemSpecError, h_max, linearize
from .train import TrainingDiverged, train
from .verify import ReportStatus, bisect_levels

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_TRAIN_ABORT = 2
EXIT_RESOURCES = 3
EXIT_CONFIG = 4


class _Abort(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, argv, outputs, started: float, extra=None):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": {"zubov_lbf": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "outputs": {name: _sha256(out / name) for name in outputs},
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    if extra:
        manifest.update(extra)
    (out / f"manifest-{command}.json").write_text(json.dumps(manifest, indent=2) + "\n")


def _prepare(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    out = Path(args.out if args.out is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _histogram(ds: Dataset) -> str:
    width = max(len(k) for k in ds.counts)
    return "\n".join(f"{k:<{width}}  {v}" for k, v in ds.counts.items())


def cmd_oracle(args) -> int:
    started = time.perf_counter()
    cfg, out = _prepare(args)
    count = args.count if args.count is not None else cfg.dataset.count
    strategy = args.strategy or cfg.dataset.strategy
    ds = generate_dataset(cfg.system, count, strategy, cfg.seed, cfg.integrator, workers=args.threads)
    write_dataset_csv(out / "dataset.csv", ds)
    print(_histogram(ds))
    _write_manifest(out, "oracle", cfg, sys.argv, ["dataset.csv"], started,
                    {"counts": ds.counts})
    return EXIT_OK


def _dataset_for_training(cfg: RunConfig, args, out: Path) -> Dataset | None:
    tc = cfg.train_config
    if tc.c_data <= 0:
        return None
    if args.dataset:
        path = Path(args.dataset)
        if not path.is_file():
            raise ConfigError("--dataset", f"no such file: {path}")
        return read_dataset_csv(path)
    ds = generate_dataset(cfg.system, cfg.dataset.count, cfg.dataset.strategy, cfg.seed,
                          cfg.integrator, workers=args.threads)
    write_dataset_csv(out / "dataset.csv", ds)
    return ds


def cmd_train(args) -> int:
    started = time.perf_counter()
    cfg, out = _prepare(args)
    tc = cfg.train_config
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    ds = _dataset_for_training(cfg, args, out)
    p0 = nn.init_params(tc.widths_for(cfg.system.n), cfg.seed)
    progress = None
    if args.progress:
        def progress(epoch, row):
            if epoch % args.progress == 0:
                print(f"epoch {epoch:6d}  total {row['total']:.3e}", file=sys.stderr, flush=True)
    try:
        p, history = train(p0, cfg.system, tc, ds, callback=progress)
    except TrainingDiverged as err:
        raise _Abort(EXIT_TRAIN_ABORT, f"training aborted: {err}") from None
    nn.save(p, out / "checkpoint.json")
    history.write_csv(out / "train_log.csv")
    outputs = ["checkpoint.json", "train_log.csv"] + (["dataset.csv"] if (out / "dataset.csv").exists() else [])
    final = history.final
    if final:
        print("final loss: " + "  ".join(f"{k}={final[k]:.6e}" for k in ("total", "res", "bc", "zero", "data")))
    else:
        print("final loss: no epochs run")
    _write_manifest(out, "train", cfg, sys.argv, outputs, started)
    return EXIT_OK


def _load_checkpoint(path, n):
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--checkpoint", f"no such file: {path}")
    try:
        return nn.load(path, n)
    except nn.CheckpointError as err:
        raise ConfigError("--checkpoint", str(err)) from None


def cmd_verify(args) -> int:
    started = time.perf_counter()
    cfg, out = _prepare(args)
    p = _load_checkpoint(args.checkpoint, cfg.system.n)
    try:
        lin = linearize(cfg.system)
    except NotHurwitz as err:
        raise ConfigError("system", str(err)) from None
    report = bisect_levels(p, cfg.system, lin, cfg.verify_config)
    (out / "report.json").write_text(report.to_json())
    print(f"status {report.status.value}  c1={report.c1:.6g}  c2={report.c2:.6g}  "
          f"rho_quad={report.rho_quad:.6g}  rho_q={report.rho_q}")
    _write_manifest(out, "verify", cfg, sys.argv, ["report.json"], started,
                    {"checkpoint_sha256": _sha256(Path(args.checkpoint))})
    return {ReportStatus.Certified: EXIT_OK, ReportStatus.Failed: EXIT_FAILED,
            ReportStatus.ResourceExhausted: EXIT_RESOURCES}[report.status]


def cmd_export_grid(args) -> int:
    started = time.perf_counter()
    cfg, out = _prepare(args)
    if args.resolution <= 0:
        raise ConfigError("--resolution", "must be a positive integer")
    s = cfg.system
    X = grid_points(s.roi, args.resolution)
    if args.checkpoint:
        W = nn.forward(_load_checkpoint(args.checkpoint, s.n), X)
    else:
        W = label_points(s, X, cfg.integrator, args.threads)[1]
    safe = (np.asarray(h_max(s, X)) < 1.0).astype(int)
    with open(out / "grid.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(s.n)] + ["W", "safe"])
        for x, wv, sv in zip(X, W, safe):
            w.writerow([repr(float(v)) for v in x] + [repr(float(wv)), int(sv)])
    print(f"wrote {len(X)} rows")
    _write_manifest(out, "export-grid", cfg, sys.argv, ["grid.csv"], started)
    return EXIT_OK


def read_points(path, n: int) -> np.ndarray:
    """Initial states from a CSV file; a non-numeric first row is taken as a header."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--points", f"no such file: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if rows:
        try:
            [float(c) for c in rows[0]]
        except ValueError:
            rows = rows[1:]
    pts = []
    for i, r in enumerate(rows):
        try:
            vals = [float(c) for c in r]
        except ValueError:
            raise ConfigError("--points", f"row {i + 1}: not numeric: {r}") from None
        if len(vals) != n:
            raise ConfigError("--points", f"row {i + 1}: expected {n} values, got {len(vals)}")
        pts.append(vals)
    return np.array(pts, dtype=float).reshape(-1, n)


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg, out = _prepare(args)
    s = cfg.system
    X0 = read_points(args.points, s.n)
    res = simulate(s, X0, args.T, cfg.integrator, goal_radius=args.goal_radius)
    with open(out / "trajectories.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x0_{i + 1}" for i in range(s.n)] + [f"xT_{i + 1}" for i in range(s.n)]
                   + ["t_final", "final_norm", "min_clearance", "status"])
        for k in range(len(X0)):
            w.writerow([repr(float(v)) for v in X0[k]] + [repr(float(v)) for v in res.x_final[k]]
                       + [repr(float(res.t_final[k])), repr(float(res.final_norm[k])),
                          repr(float(res.min_clearance[k])), res.status[k]])
    unsafe = int(np.sum(res.min_clearance <= 0))
    print(f"simulated {len(X0)} points; {unsafe} entered an obstacle")
    _write_manifest(out, "simulate", cfg, sys.argv, ["trajectories.csv"], started)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # usage mistakes share the config-error exit code instead of argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zubov-lbf",
                                     description="Lyapunov-barrier functions from the Zubov equation")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="config JSON file or preset name")
    common.add_argument("--out", help="output directory (default: output_dir from the config)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--threads", type=int, default=1, help="worker processes for the oracle")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("oracle", parents=[common], help="label states with the trajectory oracle")
    p.add_argument("--count", type=int)
    p.add_argument("--strategy", choices=["uniform-roi", "grid"])
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("train", parents=[common], help="train the network")
    p.add_argument("--dataset", help="labelled CSV from 'oracle' (generated when omitted)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--progress", type=int, default=0, metavar="K", help="print the loss every K epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", parents=[common], help="certify level sets of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("export-grid", parents=[common], help="tabulate W on a uniform grid")
    p.add_argument("--checkpoint", help="network checkpoint (oracle values when omitted)")
    p.add_argument("--resolution", type=int, default=101)
    p.set_defaults(func=cmd_export_grid)

    p = sub.add_parser("simulate", parents=[common], help="integrate the original field")
    p.add_argument("--points", required=True, help="CSV of initial states")
    p.add_argument("--T", type=float, default=200.0)
    p.add_argument("--goal-radius", type=float, default=None)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, SystemSpecError, ExprError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _Abort as err:
        print(str(err), file=sys.stderr)
        return err.code


if __name__ == "__main__":
    sys.exit(main())
