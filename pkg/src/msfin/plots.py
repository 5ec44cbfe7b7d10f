"""Minimal SVG emission for probability curves.

Output is built with ElementTree, so every file is well-formed XML by
construction: one ``<polyline>`` per curve, a dashed horizontal rule at the
warning threshold, and an optional vertical rule at the accident frame.
"""
from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from .errors import ContractError

WIDTH, HEIGHT = 640, 320
MARGIN = 40


def _x(frame: float, t_len: int) -> float:
    if t_len == 1:
        return WIDTH / 2
    return MARGIN + (frame - 1) * (WIDTH - 2 * MARGIN) / (t_len - 1)


def _y(p: float) -> float:
    return HEIGHT - MARGIN - p * (HEIGHT - 2 * MARGIN)


def probability_curve_svg(
    curves: dict[str, np.ndarray],
    threshold: float = 0.5,
    t_ao: int | None = None,
) -> str:
    """Render named probability series (values in [0, 1]) to an SVG string."""
    if not curves:
        raise ContractError("need at least one curve to plot")
    t_len = None
    for name, values in curves.items():
        values = np.asarray(values)
        if values.ndim != 1 or values.size == 0:
            raise ContractError(f"curve {name!r} must be a non-empty vector")
        if t_len is None:
            t_len = values.size
        elif values.size != t_len:
            raise ContractError("all curves must cover the same number of frames")

    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(WIDTH),
        height=str(HEIGHT),
        viewBox=f"0 0 {WIDTH} {HEIGHT}",
    )
    axis = {"stroke": "#333", "stroke-width": "1"}
    ET.SubElement(
        svg, "line",
        x1=str(MARGIN), y1=str(_y(0.0)), x2=str(WIDTH - MARGIN), y2=str(_y(0.0)), **axis,
    )
    ET.SubElement(
        svg, "line",
        x1=str(MARGIN), y1=str(_y(0.0)), x2=str(MARGIN), y2=str(_y(1.0)), **axis,
    )
    ET.SubElement(
        svg, "line",
        x1=str(MARGIN), y1=str(_y(threshold)),
        x2=str(WIDTH - MARGIN), y2=str(_y(threshold)),
        stroke="#c33", **{"stroke-width": "1", "stroke-dasharray": "6,4"},
    )
    label = ET.SubElement(
        svg, "text", x=str(WIDTH - MARGIN + 4), y=str(_y(threshold) + 4),
        **{"font-size": "12", "fill": "#c33"},
    )
    label.text = f"tau={threshold:g}"
    if t_ao is not None:
        ET.SubElement(
            svg, "line",
            x1=str(_x(t_ao, t_len)), y1=str(_y(0.0)),
            x2=str(_x(t_ao, t_len)), y2=str(_y(1.0)),
            stroke="#777", **{"stroke-width": "1", "stroke-dasharray": "2,3"},
        )

    palette = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    for i, (name, values) in enumerate(curves.items()):
        pts = " ".join(
            f"{_x(t, t_len):.2f},{_y(float(np.clip(v, 0.0, 1.0))):.2f}"
            for t, v in enumerate(np.asarray(values, dtype=np.float64), start=1)
        )
        ET.SubElement(
            svg, "polyline", points=pts, fill="none",
            stroke=palette[i % len(palette)], **{"stroke-width": "1.5"},
        )
        tag = ET.SubElement(
            svg, "text", x=str(MARGIN), y=str(MARGIN - 8 + 14 * i),
            **{"font-size": "12", "fill": palette[i % len(palette)]},
        )
        tag.text = name
    return ET.tostring(svg, encoding="unicode")


def write_probability_curve_svg(path, curves, threshold=0.5, t_ao=None) -> None:
    with open(path, "w") as fh:
        fh.write(probability_curve_svg(curves, threshold=threshold, t_ao=t_ao))
