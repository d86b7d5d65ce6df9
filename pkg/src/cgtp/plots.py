"""Static scenario figures: lane graph, observed histories, ground-truth
futures, and the top-scored predicted pair, rendered to SVG files."""

from __future__ import annotations

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import scene

AGENT_COLORS = {"A": "#1f77b4", "B": "#d62728"}


def render_scenario(scenario: scene.Scenario, prediction: dict | None,
                    path) -> None:
    """One figure per scenario; prediction (submission-format dict) adds the
    highest-score mode as dotted overlays."""
    fig, ax = plt.subplots(figsize=(7.5, 5.0))
    for lane in scenario.lanes.values():
        ax.plot(lane.centerline[:, 0], lane.centerline[:, 1],
                color="0.8", lw=3.0, zorder=0)
    for track in scenario.context:
        hist = scenario.history(track)
        ax.plot(hist[:, 1], hist[:, 2], color="0.55", lw=1.0, zorder=1)
    for role in ("A", "B"):
        track = scenario.agent(role)
        color = AGENT_COLORS[role]
        hist, fut = scenario.history(track), scenario.future(track)
        ax.plot(hist[:, 1], hist[:, 2], color=color, lw=1.8,
                label=f"{role} history")
        ax.plot(fut[:, 1], fut[:, 2], color=color, lw=1.4, ls="--",
                label=f"{role} future")
        ax.plot(hist[-1, 1], hist[-1, 2], "o", color=color, ms=5)
    if prediction is not None and prediction["modes"]:
        best = max(range(len(prediction["modes"])),
                   key=lambda i: prediction["modes"][i]["score"])
        mode = prediction["modes"][best]
        for role, key in (("A", "traj_A"), ("B", "traj_B")):
            pts = np.asarray(mode[key])
            ax.plot(pts[:, 0], pts[:, 1], color=AGENT_COLORS[role], lw=1.2,
                    ls=":", marker=".", ms=3, label=f"{role} predicted")
            ax.plot(pts[-1, 0], pts[-1, 1], "*", color=AGENT_COLORS[role], ms=9)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(scenario.scenario_id)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
