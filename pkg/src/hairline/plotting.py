"""Matplotlib settings shared by every figure.

Figures are built on a bare ``Figure`` with the SVG canvas (no pyplot state)
and saved with a fixed hash salt, no date stamp, and text kept as ``<text>``
so the same input always yields the same bytes.
"""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

from matplotlib.backends.backend_svg import FigureCanvasSVG  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

GROUP_COLORS = {"CSCS": "#1f77b4", "CSFH": "#d62728", "FHFH": "#2ca02c"}
KIND_STYLE = {"genuine": "-", "impostor": "--"}
PROTOCOL_STYLE = {"across": "-", "within": "--"}

RC = {
    "svg.hashsalt": "hairline",
    "svg.fonttype": "none",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "path.simplify": False,
}


def new_figure(nrows: int, ncols: int, panel=(3.2, 2.6)):
    with matplotlib.rc_context(RC):
        fig = Figure(figsize=(panel[0] * ncols, panel[1] * nrows))
        FigureCanvasSVG(fig)
        axes = fig.subplots(nrows, ncols, squeeze=False)
    return fig, axes


def svg_bytes(fig) -> bytes:
    buf = io.BytesIO()
    with matplotlib.rc_context(RC):
        fig.savefig(buf, format="svg", metadata={"Date": None})
    return buf.getvalue()


def save_svg(fig, path) -> bytes:
    data = svg_bytes(fig)
    Path(path).write_bytes(data)
    return data
