"""Figures for simulation results, rendered off-screen to PNG files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _phase_edges(result):
    return [float(p.traj.t[0]) for p in result.phases[1:]]


def plot_value_functions(result, path) -> Path:
    """``b(x(t))``, ``lambda(t)`` and ``B`` over time, one line per phase."""
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for k, ph in enumerate(result.phases):
        tr = ph.traj
        lab = k == 0
        ax.plot(tr.t, tr.b, color="tab:blue", label="b(x)" if lab else None)
        ax.plot(tr.t, tr.lam, color="tab:orange", ls="--", label="lambda(t)" if lab else None)
        ax.plot(tr.t, tr.B, color="tab:green", label="B(t, x)" if lab else None)
    for t in _phase_edges(result):
        ax.axvline(t, color="0.7", lw=0.8)
    ax.axhline(0.0, color="k", lw=0.6)
    ax.set_xlabel("t [s]")
    ax.set_title(f"{result.name}: value functions")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_states(result, path, planar: bool = False) -> Path:
    """State components over time; with ``planar`` also the ``(x1, x2)`` path."""
    tr = result.combined()
    if planar:
        fig, (ax, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    else:
        fig, ax = plt.subplots(figsize=(7, 3.5))
    for i in range(tr.n):
        ax.plot(tr.t, tr.x[:, i], label=f"x{i + 1}")
    for t in _phase_edges(result):
        ax.axvline(t, color="0.7", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{result.name}: states")
    if planar:
        ax2.plot(tr.x[:, 0], tr.x[:, 1])
        ax2.plot(tr.x[0, 0], tr.x[0, 1], "o", color="k")
        ax2.set_aspect("equal", adjustable="datalim")
        ax2.set_xlabel("x1")
        ax2.set_ylabel("x2")
        ax2.set_title("path")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_inputs(result, path, bound: float | None = None) -> Path:
    tr = result.combined()
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for j in range(tr.m):
        ax.plot(tr.t, tr.u[:, j], lw=0.9, label=f"u{j + 1}")
    if bound is not None and np.isfinite(bound):
        ax.axhline(bound, color="k", ls="--", lw=0.8)
        ax.axhline(-bound, color="k", ls="--", lw=0.8)
    ax.set_xlabel("t [s]")
    ax.legend(loc="best", fontsize=8)
    ax.set_title(f"{result.name}: inputs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_all(result, out_dir, bound: float | None = None, planar: bool = False) -> list:
    out_dir = Path(out_dir)
    return [
        plot_value_functions(result, out_dir / "value_functions.png"),
        plot_states(result, out_dir / "states.png", planar),
        plot_inputs(result, out_dir / "inputs.png", bound),
    ]
