"""SVG figures for chamber diagrams, curve snapshots and v-curves."""

from __future__ import annotations

import io
import typing
from fractions import Fraction

import matplotlib

matplotlib.use("Agg")

from matplotlib.figure import Figure  # noqa: E402

from ._csf import OdeTrajectory, PdeTrajectory  # noqa: E402
from ._lattice import WeightGrading  # noqa: E402

_STYLE = {
    "svg.hashsalt": "iterlog",
    "svg.fonttype": "none",
    "font.size": 9.0,
}


def _to_svg(fig: Figure) -> str:
    buf = io.StringIO()
    with matplotlib.rc_context(_STYLE):
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": "iterlog"})
    return buf.getvalue()


def _label(value: Fraction) -> str:
    return str(value) if value.denominator != 1 else str(value.numerator)


def chamber_diagram(panels: typing.Sequence[tuple[str, WeightGrading]]) -> str:
    """One panel per grading; vertices sit at their weight.

    Tight arrows (gap exactly 1) are solid, the others dashed.
    """
    fig = Figure(figsize=(3.2 * len(panels), 3.6))
    axes = fig.subplots(1, len(panels), squeeze=False)[0]
    for ax, (title, grading) in zip(axes, panels):
        order = sorted(grading.weights, key=str)
        xs = {v: i for i, v in enumerate(order)}
        for (s, t), gap in sorted(grading.gaps.items(), key=str):
            ax.annotate(
                "",
                xy=(xs[t], float(grading.weights[t])),
                xytext=(xs[s], float(grading.weights[s])),
                arrowprops={
                    "arrowstyle": "->",
                    "linestyle": "-" if gap == 1 else "--",
                    "color": "black" if gap == 1 else "grey",
                    "shrinkA": 6,
                    "shrinkB": 6,
                },
            )
        for v in order:
            y = float(grading.weights[v])
            ax.plot([xs[v]], [y], "o", color="tab:blue")
            ax.annotate(
                f"{v}: {_label(grading.weights[v])}",
                (xs[v], y),
                textcoords="offset points",
                xytext=(6, 4),
            )
        ax.set_title(title)
        ax.set_xticks([])
        ax.set_ylabel("weight")
        ax.margins(0.25)
    fig.tight_layout()
    return _to_svg(fig)


def curve_snapshots(traj: PdeTrajectory, indices: typing.Sequence[int] | None = None) -> str:
    """f(x, t) at a handful of sample times, punctures marked."""
    if indices is None:
        count = len(traj.times)
        indices = sorted({0, count // 4, count // 2, (3 * count) // 4, count - 1})
    fig = Figure(figsize=(7.0, 3.6))
    ax = fig.subplots()
    x = traj.grid.nodes
    for i in indices:
        ax.plot(x, traj.values[i], label=f"t = {traj.times[i]:.3g}", linewidth=1.0)
    for p in traj.grid.punctures:
        ax.axvline(x[p], color="grey", linewidth=0.5, linestyle=":")
    ax.axhline(0.0, color="black", linewidth=0.5)
    ax.set_xlabel("x")
    ax.set_ylabel("f")
    ax.legend(loc="upper right")
    fig.tight_layout()
    return _to_svg(fig)


def v_curves(traj: OdeTrajectory) -> str:
    """v_k(s) for every reduced variable."""
    fig = Figure(figsize=(7.0, 3.6))
    ax = fig.subplots()
    for k in range(traj.v.shape[1]):
        ax.plot(traj.s, traj.v[:, k], label=f"v{k + 1}", linewidth=1.0)
    ax.set_xlabel("s = log t")
    ax.set_ylabel("v = log(t y)")
    ax.legend(loc="lower left")
    fig.tight_layout()
    return _to_svg(fig)
