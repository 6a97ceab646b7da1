"""Static PNG summaries of run traces."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from quadsim.experiment import read_trace
from quadsim.morphology import LEG_ORDER
from quadsim.simworld import quat_to_euler


def plot_trace(trace_path, output=None):
    """Base height, attitude, knee currents, temperatures and contacts vs time."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    header, data = read_trace(trace_path)
    col = {name: i for i, name in enumerate(header)}
    t = data[:, col["time"]]
    quats = data[:, [col["qw"], col["qx"], col["qy"], col["qz"]]]
    rpy = np.degrees(np.array([quat_to_euler(q) for q in quats])).reshape(-1, 3)

    fig, axes = plt.subplots(5, 1, figsize=(9, 11), sharex=True)
    axes[0].plot(t, data[:, col["pz"]])
    axes[0].set_ylabel("base z (m)")
    axes[1].plot(t, rpy[:, 0], label="roll")
    axes[1].plot(t, rpy[:, 1], label="pitch")
    axes[1].set_ylabel("deg")
    axes[1].legend(loc="upper right")
    for leg in LEG_ORDER:
        axes[2].plot(t, data[:, col[f"i_{leg}_knee"]], label=leg)
        axes[3].plot(t, data[:, col[f"temp_{leg}_knee"]], label=leg)
    axes[2].set_ylabel("knee current (A)")
    axes[3].set_ylabel("knee driver (C)")
    axes[2].legend(loc="upper right", ncol=4)
    for i, leg in enumerate(LEG_ORDER):
        axes[4].fill_between(t, i, i + 0.8 * data[:, col[f"contact_{leg}"]], step="post")
    axes[4].set_yticks(np.arange(4) + 0.4, LEG_ORDER)
    axes[4].set_xlabel("time (s)")
    fig.tight_layout()

    output = Path(output) if output else Path(trace_path).with_suffix(".png")
    fig.savefig(output, dpi=100)
    plt.close(fig)
    return output
