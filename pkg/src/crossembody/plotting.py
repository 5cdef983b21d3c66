"""Report figures, rendered off-screen to PNG files.

Figures carry no software or timestamp metadata, so identical inputs give
byte-identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.0, 3.6),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)


def plot_training_curves(rows, path) -> None:
    """Loss terms and gradient norm against step."""
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2)
        steps = np.array([r["step"] for r in rows])
        for key, label in (("l_r2h", "l_r2h"), ("l_h2r", "l_h2r"), ("total", "total")):
            vals = np.array([r[key] for r in rows])
            ax.plot(steps, np.maximum(vals, 1e-12), label=label, lw=0.8)
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("loss")
        ax.legend()
        ax2.plot(steps, [r["grad_norm"] for r in rows], lw=0.6, color="0.3")
        ax2.set_xlabel("step")
        ax2.set_ylabel("gradient norm")
        _save(fig, path)


def plot_rollouts(task_result, path, max_paths: int = 20) -> None:
    """Top-down EEF paths and the distribution of final errors for one task."""
    with plt.rc_context(STYLE):
        fig, (ax, ax2) = plt.subplots(1, 2)
        for traj, ok in list(zip(task_result.trajectories, task_result.successes))[:max_paths]:
            ax.plot(traj[:, 0], traj[:, 1], lw=0.7, color="tab:green" if ok else "tab:red", alpha=0.8)
            ax.plot(traj[-1, 0], traj[-1, 1], "o", ms=2, color="k")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_title(task_result.task)
        ax.set_aspect("equal", adjustable="datalim")
        ax2.hist(task_result.final_errors, bins=20, color="0.4")
        ax2.set_xlabel("final position error (m)")
        ax2.set_ylabel("rollouts")
        _save(fig, path)


def plot_norm_stats(stats, counts, path) -> None:
    """Per-dim mean and std of the unified action labels."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        dims = np.arange(len(stats.mean))
        labelled = np.asarray(counts) > 0
        ax.errorbar(dims[labelled], stats.mean[labelled], yerr=stats.std[labelled], fmt=".", ms=3, lw=0.6)
        for edge in (48, 62):
            ax.axvline(edge - 0.5, color="0.6", lw=0.6)
        ax.set_xlabel("unified action dim")
        ax.set_ylabel("mean +/- std")
        _save(fig, path)


def plot_chunk(values, path, dims, labels) -> None:
    """Selected dims of one sampled chunk against the chunk row."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for d, name in zip(dims, labels):
            ax.plot(values[:, d], lw=0.9, label=name)
        ax.set_xlabel("chunk row")
        ax.legend(ncol=2)
        _save(fig, path)
