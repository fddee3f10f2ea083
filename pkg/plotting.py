"""
Ternary trajectory plots.

Strategies 1, 2, 3 sit at (0, 0), (1, 0) and (0.5, sqrt(3)/2); a state x maps to
x2 (1, 0) + x3 (0.5, sqrt(3)/2). Starts are red squares, ends black circles.
"""

import logging
import os

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from errors import DimensionMismatch

logger = logging.getLogger(__name__)


# ============== CONFIGURATION ==============
SVG_HASH_SALT = "evodyn"      # fixed element ids -> byte-identical files
FIGURE_SIZE = (6.0, 5.4)
TRIANGLE = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3.0) / 2.0], [0.0, 0.0]])
LABEL_OFFSETS = ((-0.04, -0.05), (0.02, -0.05), (-0.01, 0.03))
# ===========================================


def ternary_projection(states):
    """m x 3 simplex points -> m x 2 plane points."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[1] != 3:
        raise DimensionMismatch(f"Ternary plots need 3 strategies, got {states.shape[1]}")
    return np.column_stack([states[:, 1] + 0.5 * states[:, 2], np.sqrt(3.0) / 2.0 * states[:, 2]])


def write_ternary_svg(records, path, title="", labels=("1", "2", "3"), equilibria=None):
    """
    Draw trajectories on the triangle and save them as SVG.

    Args:
        records: TrajectoryRecords of 3-strategy runs
        path: output file
        title: figure title
        labels: vertex labels
        equilibria: optional m x 3 array of points to mark

    Returns:
        str: path
    """
    matplotlib.rcParams["svg.hashsalt"] = SVG_HASH_SALT
    fig = Figure(figsize=FIGURE_SIZE)
    ax = fig.add_subplot()
    ax.plot(TRIANGLE[:, 0], TRIANGLE[:, 1], color="0.3", linewidth=1.0)
    for (vx, vy), label, (dx, dy) in zip(TRIANGLE[:3], labels, LABEL_OFFSETS):
        ax.annotate(label, (vx + dx, vy + dy))

    for record in records:
        plane = ternary_projection(record.states)
        ax.plot(plane[:, 0], plane[:, 1], linewidth=1.0)
        ax.plot(plane[0, 0], plane[0, 1], marker="s", color="red", markersize=6, linestyle="none")
        ax.plot(plane[-1, 0], plane[-1, 1], marker="o", color="black", markersize=5, linestyle="none")

    if equilibria is not None and len(equilibria):
        marks = ternary_projection(equilibria)
        ax.plot(marks[:, 0], marks[:, 1], marker="x", color="0.4", markersize=7, linestyle="none")

    ax.set_aspect("equal")
    ax.set_xlim(-0.08, 1.08)
    ax.set_ylim(-0.1, 0.95)
    ax.axis("off")
    if title:
        ax.set_title(title)

    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    logger.debug("Wrote %d trajectories to %s", len(records), path)
    return path
