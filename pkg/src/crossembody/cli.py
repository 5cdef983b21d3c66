"""Command-line entry point.

Every command reads ``--config PATH`` (plus ``--set key=value`` overrides)
and writes its outputs under ``paths.out_dir``. Exit codes: 0 ok, 2 config,
3 io, 4 numeric.
"""

from __future__ import annotations

import argparse
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import pipeline
from .actionspace import ACTION_DIM, eef_pos_slice, joints_slice
from .config import ENV_THREADS, ExperimentConfig, load_config
from .dataset import compute_norm_stats, read_dataset, write_dataset, write_manifest
from .dataset.demos import make_robot_demo
from .errors import (
    BadMagic,
    ConfigError,
    EmptyTrajectory,
    NonFinite,
    NonFiniteLoss,
    NotConverged,
    ShapeMismatch,
    TaskUnreachable,
    TruncatedFile,
    VersionMismatch,
)
from .evaluation import OracleSource, PolicySource, eval_goals, evaluate
from .plotting import plot_chunk, plot_norm_stats, plot_rollouts, plot_training_curves
from .policy.checkpoint import load_checkpoint, save_checkpoint
from .policy.sampling import Observation, sample_batch
from .policy.train import format_metrics
from .selftest import run_selftest

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

DATASET = "dataset.bin"
HELDOUT = "heldout.bin"
MANIFEST = "manifest.tsv"
CHECKPOINT = "checkpoint.ckpt"


class CommandFailed(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _read_demos(path: Path):
    demos = read_dataset(path)
    if not demos:
        raise CommandFailed(f"{path}: dataset holds no demonstrations", EXIT_IO)
    return demos


def _out(cfg: ExperimentConfig) -> Path:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return cfg.out_dir


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_retarget(cfg: ExperimentConfig, args) -> int:
    src = Path(args.input)
    demos = _read_demos(src)
    converted, rows = [], []
    for d in demos:
        new, report = pipeline.retarget_demo(d, cfg.retarget, args.direction)
        converted.append(new)
        if report is not None:
            rows.append((d.id, report))
    out = Path(args.output) if args.output else _out(cfg) / f"retarget_{args.direction}.bin"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(converted, out, cfg.horizon)
    report_path = Path(args.report) if args.report else out.with_suffix(".csv")
    _write(report_path, pipeline.report_rows_csv(rows))
    failures = sum(len(r.failures()) for _, r in rows)
    print(f"retargeted {len(converted)} demos ({args.direction}); ik failures: {failures}")
    print(f"wrote {out.name} and {report_path.name}")
    return EXIT_OK


def cmd_build_dataset(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    train_demos, heldout, reports = pipeline.build_demos(cfg)
    write_dataset(train_demos, out / DATASET, cfg.horizon)
    write_dataset(heldout, out / HELDOUT, cfg.horizon)
    names = {t.instruction_id: t.name for t in cfg.tasks}
    write_manifest(train_demos, out / MANIFEST, names)
    _write(out / "retarget_report.csv", pipeline.report_rows_csv(reports))
    data, _ = pipeline.policy_data(cfg, train_demos)
    print(f"{'task':<16}{'robot':>7}{'human':>7}{'steps':>8}")
    for t in cfg.tasks:
        mine = [d for d in train_demos if d.instruction_id == t.instruction_id]
        n_r = sum(d.embodiment == "robot" for d in mine)
        print(f"{t.name:<16}{n_r:>7}{len(mine) - n_r:>7}{sum(len(d) for d in mine):>8}")
    failures = sum(len(r.failures()) for _, r in reports)
    print(f"training samples (H={cfg.horizon}, stride={cfg.dataset.stride}): {len(data)}")
    print(f"held-out demos: {len(heldout)}")
    print(f"ik failures during augmentation: {failures}")
    return EXIT_OK


def cmd_stats(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    demos = _read_demos(out / DATASET)
    _write(out / "stats.csv", pipeline.stats_csv(demos))
    stats = compute_norm_stats(demos)
    counts = pipeline.label_counts(demos)
    plot_norm_stats(stats, counts, out / "stats.png")
    print(f"{'block':<8}{'labelled_dims':>15}{'mean_std':>12}")
    for name, lo, hi in (("human", 0, 48), ("robot", 48, 62), ("eef", 62, ACTION_DIM)):
        sel = counts[lo:hi] > 0
        mean_std = float(np.mean(stats.std[lo:hi][sel])) if sel.any() else float("nan")
        print(f"{name:<8}{int(sel.sum()):>15}{mean_std:>12.5f}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    demos = _read_demos(out / DATASET)
    data, _ = pipeline.policy_data(cfg, demos)
    ckpt = out / CHECKPOINT
    state = None
    if args.resume:
        if not ckpt.exists():
            raise CommandFailed(f"--resume given but {ckpt.name} does not exist", EXIT_IO)
        policy, state, stored, _ = load_checkpoint(ckpt, pipeline.untrained_policy(cfg, data).params.config)
        if stored is not None and (stored.batch_size, stored.seed, stored.optim, stored.use_r2h, stored.use_h2r) != (
                cfg.train.batch_size, cfg.train.seed, cfg.train.optim, cfg.train.use_r2h, cfg.train.use_h2r):
            raise CommandFailed("checkpoint was trained with different train settings", EXIT_CONFIG)
    policy, state = pipeline.train_policy(cfg, data, state=state, stop_at=args.stop_at)
    save_checkpoint(ckpt, policy, state, cfg.train)
    _write(out / "metrics.csv", format_metrics(state.metrics))
    if state.metrics:
        plot_training_curves(state.metrics, out / "training.png")
        last = state.metrics[-1]
        print(f"step {state.step}/{cfg.train.steps}: l_r2h={last['l_r2h']:.6f} l_h2r={last['l_h2r']:.6f} "
              f"total={last['total']:.6f}")
    else:
        print(f"step {state.step}/{cfg.train.steps}: no updates")
    print(f"wrote {ckpt.name} and metrics.csv")
    return EXIT_OK


def _load_policy(cfg: ExperimentConfig, args, data):
    expected = pipeline.untrained_policy(cfg, data)
    if getattr(args, "policy", "trained") == "untrained":
        return expected
    path = Path(args.checkpoint) if args.checkpoint else cfg.out_dir / CHECKPOINT
    policy, _, _, _ = load_checkpoint(path, expected.params.config)
    return policy


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    demos = _read_demos(out / DATASET)
    heldout = read_dataset(out / HELDOUT) if (out / HELDOUT).exists() else None
    data, held = pipeline.policy_data(cfg, demos, heldout)
    ecfg = cfg.eval
    if args.policy == "oracle":
        report = evaluate(lambda task, goals: OracleSource(task, cfg.retarget, goals, cfg.horizon),
                          cfg.tasks, cfg.retarget, ecfg)
    else:
        policy = _load_policy(cfg, args, data)
        report = evaluate(lambda task, goals: PolicySource(policy, ecfg.flow_steps, ecfg.seed), cfg.tasks,
                          cfg.retarget, ecfg, heldout=held, params=policy.params)
    tag = args.policy
    _write(out / f"eval_{tag}.csv", report.to_csv())
    _write(out / f"eval_{tag}.txt", report.to_table())
    for r in report.tasks:
        plot_rollouts(r, out / f"rollouts_{tag}_{r.task}.png")
    print(report.to_table(), end="")
    return EXIT_OK


def cmd_sample(cfg: ExperimentConfig, args) -> int:
    out = _out(cfg)
    demos = _read_demos(out / DATASET)
    data, _ = pipeline.policy_data(cfg, demos)
    policy = _load_policy(cfg, args, data)
    task = next((t for t in cfg.tasks if t.name == args.task), None) if args.task else cfg.tasks[0]
    if task is None:
        raise CommandFailed(f"unknown task {args.task}", EXIT_CONFIG)
    if args.goal:
        goal = np.array([float(x) for x in args.goal.split(",")])
        if goal.shape != (6,):
            raise CommandFailed("--goal takes six comma-separated numbers: x,y,z,rx,ry,rz", EXIT_CONFIG)
    else:
        goal = eval_goals(task, cfg.retarget, 1, cfg.eval.seed)[0]
    start = make_robot_demo(task, cfg.retarget, goal, "sample")
    obs = Observation(task.instruction_id, goal, start.proprio[0], start.proprio_mask[0])
    chunk = sample_batch(policy, [obs], args.steps or cfg.eval.flow_steps, seed=cfg.seed)[0]
    lines = ["row," + ",".join(f"a{i}" for i in range(ACTION_DIM))]
    for r, row in enumerate(chunk):
        lines.append(f"{r}," + ",".join(repr(float(v)) for v in row))
    _write(out / "sample.csv", "\n".join(lines) + "\n")
    js = joints_slice(task.side)
    ps = eef_pos_slice(task.side)
    dims = list(range(js.start, js.stop)) + list(range(ps.start, ps.stop))
    labels = [f"q{i}" for i in range(6)] + ["x", "y", "z"]
    plot_chunk(chunk, out / "sample.png", dims, labels)
    print(f"sampled a {chunk.shape[0]}x{ACTION_DIM} chunk for task {task.name}; final eef "
          + ", ".join(f"{v:.4f}" for v in chunk[-1, ps]))
    return EXIT_OK


def cmd_selftest(cfg: ExperimentConfig, args) -> int:
    results = run_selftest(cfg, break_tensor=args.break_gradient)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(r.name for r in failed)}")
        return EXIT_NUMERIC
    print("all checks passed")
    return EXIT_OK


COMMANDS = {
    "retarget": cmd_retarget,
    "build-dataset": cmd_build_dataset,
    "stats": cmd_stats,
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "selftest": cmd_selftest,
    "gradcheck": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossembody", description="Cross-embodiment retargeting and policy toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
        return p

    p = add("retarget", "convert demos between embodiments")
    p.add_argument("--input", required=True)
    p.add_argument("--direction", choices=("h2r", "r2h"), required=True)
    p.add_argument("--output")
    p.add_argument("--report")
    add("build-dataset", "generate, augment and write the training dataset")
    add("stats", "normalization statistics of the dataset")
    p = add("train", "train the policy")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in out_dir")
    p.add_argument("--stop-at", type=int, default=None, help="stop after this many total steps")
    for name in ("eval", "sample"):
        p = add(name, "closed-loop evaluation" if name == "eval" else "sample one action chunk")
        p.add_argument("--checkpoint")
        p.add_argument("--policy", choices=("trained", "untrained", "oracle") if name == "eval"
                       else ("trained", "untrained"), default="trained")
        if name == "sample":
            p.add_argument("--task")
            p.add_argument("--goal", help="x,y,z,rx,ry,rz")
            p.add_argument("--steps", type=int)
    for name in ("selftest", "gradcheck"):
        p = add(name, "gradient and invariant checks")
        p.add_argument("--break-gradient", metavar="TENSOR", help=argparse.SUPPRESS)
    return parser


def _thread_limit():
    value = os.environ.get(ENV_THREADS)
    if not value:
        return nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS} must be an integer") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        with _thread_limit():
            return COMMANDS[args.command](cfg, args)
    except CommandFailed as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, TaskUnreachable, ShapeMismatch, pipeline.WrongEmbodiment) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BadMagic, VersionMismatch, TruncatedFile, EmptyTrajectory, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteLoss, NonFinite, NotConverged, FloatingPointError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
