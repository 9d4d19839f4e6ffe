"""Matplotlib figures written as deterministic SVG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .driving import Course  # noqa: E402

STYLE = {
    "svg.hashsalt": "subgoal-discovery",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}


def save_svg(fig, path) -> Path:
    """Save without timestamps and with fixed element ids, then close the figure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def loss_trace_figure(trace, path) -> Path:
    rows = np.array([lb.as_row() for lb in trace])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        it = np.arange(len(rows))
        for k, name in enumerate(["reconstruction", "r_bin", "r_1", "r_sim", "total"]):
            y = rows[:, k]
            if np.any(y > 0):
                ax.plot(it, np.where(y > 0, y, np.nan), lw=1.5 if name == "total" else 1, label=name)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend(frameon=False, fontsize=7)
    return save_svg(fig, path)


def dominance_figure(G, true_boundaries, path, title: str = "") -> Path:
    """Stacked per-factor weights over one trajectory with the true boundaries marked."""
    G = np.asarray(G)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 2.2))
        t = np.arange(G.shape[1])
        ax.stackplot(t, G, labels=[f"subtask {j}" for j in range(G.shape[0])], alpha=0.85)
        for b in true_boundaries:
            ax.axvline(b, color="k", lw=0.8, ls="--")
        ax.set_xlim(0, max(G.shape[1] - 1, 1))
        ax.set_ylim(0, 1)
        ax.set_xlabel("step")
        ax.set_ylabel("dominance")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, fontsize=6, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return save_svg(fig, path)


def factorization_figure(O, H, Xhat, path, cols=None) -> Path:
    """H on top, the patterns on the left and the reconstruction in the middle."""
    O, H, Xhat = np.asarray(O), np.asarray(H), np.asarray(Xhat)
    if cols is not None:
        H, Xhat = H[:, cols], Xhat[:, cols]
    D, J, L = O.shape
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=(7, 3.5))
        gs = fig.add_gridspec(2, 2, width_ratios=[max(J * L, 4), max(H.shape[1], 4) / 4],
                              height_ratios=[1, 2], wspace=0.05, hspace=0.08)
        ax_h = fig.add_subplot(gs[0, 1])
        for j in range(J):
            ax_h.plot(H[j] + j * 1.2, lw=0.8)
        ax_h.set_yticks([])
        ax_h.set_xticks([])
        ax_h.set_title("H")
        ax_o = fig.add_subplot(gs[1, 0])
        ax_o.imshow(O.transpose(0, 1, 2).reshape(D, J * L), aspect="auto", cmap="magma", interpolation="nearest")
        for j in range(1, J):
            ax_o.axvline(j * L - 0.5, color="w", lw=0.8)
        ax_o.set_xlabel("factor x lag")
        ax_o.set_ylabel("row")
        ax_o.set_title("O", loc="left")
        ax_x = fig.add_subplot(gs[1, 1])
        ax_x.imshow(Xhat, aspect="auto", cmap="magma", interpolation="nearest")
        ax_x.set_yticks([])
        ax_x.set_xlabel("column")
    return save_svg(fig, path)


def course_figure(course: Course, rollouts, path, demos=None) -> Path:
    """Reference paths, optional demonstrations and rolled-out trajectories."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3))
        xs = np.linspace(0, course.width, 400)
        for task, color in ((0, "goldenrod"), (1, "steelblue")):
            ax.plot(xs, course.path_y(task, xs), color=color, lw=2, alpha=0.4, label=f"task {task} reference")
        for states in demos or []:
            ax.plot(states[:, 0], states[:, 1], color="0.7", lw=0.5)
        for k, ro in enumerate(rollouts):
            ax.plot(ro.states[:, 0], ro.states[:, 1], lw=1.2, label=f"rollout {k}")
            switch = np.flatnonzero(np.diff(ro.subgoals)) + 1
            ax.scatter(ro.states[switch, 0], ro.states[switch, 1], s=10, color="k", zorder=3)
        for c in course.crossings:
            ax.axvline(c, color="0.5", lw=0.6, ls=":")
        ax.axvline(course.width, color="k", lw=0.8)
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.legend(frameon=False, fontsize=6, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    return save_svg(fig, path)


def histogram_figure(counts, path, xlabel: str) -> Path:
    counts = np.asarray(counts, dtype=int)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.5))
        values = np.bincount(counts) if counts.size else np.zeros(1, int)
        ax.bar(np.arange(len(values)), values, color="steelblue")
        ax.set_xlabel(xlabel)
        ax.set_ylabel("trajectories")
    return save_svg(fig, path)
