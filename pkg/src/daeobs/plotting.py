"""Figure rendering for the CLI report paths (PNG alongside the CSV/JSON)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_trajectory(traj, model, path):
    """States over time, one panel for differential and one for algebraic."""
    n_panels = 2 if model.n_w else 1
    fig, axes = plt.subplots(n_panels, 1, figsize=(7, 3 * n_panels),
                             sharex=True, squeeze=False)
    ax = axes[0, 0]
    for i, name in enumerate(model.diff_states):
        ax.plot(traj.times, traj.x_samples[:, i], label=name)
    ax.set_ylabel("differential states")
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)
    if model.n_w:
        ax = axes[1, 0]
        for i, name in enumerate(model.alg_states):
            ax.plot(traj.times, traj.w_samples[:, i], label=name)
        ax.set_ylabel("algebraic states")
        ax.legend(loc="best")
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(model.name)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_observability(report, path):
    """Singular-value spectra of the rank-test matrices per direction."""
    fig, ax = plt.subplots(figsize=(7, 4))
    width = 0.8 / max(1, len(report.directions))
    for j, d in enumerate(report.directions):
        sv = np.asarray(d.singular_values, dtype=float)
        label = (d.direction if isinstance(d.direction, str)
                 else "d=" + ",".join(f"{x:g}" for x in d.direction))
        ax.bar(np.arange(len(sv)) + j * width, np.maximum(sv, 1e-300),
               width=width, label=f"{label} (rank {d.rank})")
    ax.set_yscale("log")
    ax.set_xlabel("singular value index")
    ax.set_ylabel("singular value")
    ax.set_title(f"{report.model_name}: sensitivity rank test")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_filter(run, model, path, truth=None, prediction=None):
    """Estimated states vs (optional) truth and open-loop prediction."""
    names = list(model.diff_states) + list(model.alg_states)
    n = len(names)
    fig, axes = plt.subplots(n, 1, figsize=(7, 2.6 * n), sharex=True,
                             squeeze=False)
    t_est = np.array([s.t for s in run.steps])
    for i, name in enumerate(names):
        ax = axes[i, 0]
        if i < model.n_x:
            est = np.array([s.x_post[i] for s in run.steps])
            col = i
            pick = lambda tr: tr.x_samples[:, col]  # noqa: E731
        else:
            est = np.array([s.w_post[i - model.n_x] for s in run.steps])
            col = i - model.n_x
            pick = lambda tr: tr.w_samples[:, col]  # noqa: E731
        if truth is not None:
            ax.plot(truth.times, pick(truth), color="tab:blue", lw=1,
                    label="true")
        if prediction is not None:
            ax.plot(prediction.times, pick(prediction), color="tab:green",
                    lw=1, label="predicted")
        ax.plot(t_est, est, "k.-", ms=3, lw=1, label="estimated")
        ax.set_ylabel(name)
        ax.grid(True, alpha=0.3)
        if i == 0:
            ax.legend(loc="best", fontsize=8)
    axes[-1, 0].set_xlabel("t")
    fig.suptitle(f"{model.name}: state estimation")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
