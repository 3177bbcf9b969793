"""SVG line charts from metrics and trajectory CSV files."""

import csv
import math
import xml.etree.ElementTree as ET
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .errors import CSVFormatError

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 70
MARGIN_RIGHT = 150
MARGIN_TOP = 40
MARGIN_BOTTOM = 50
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf")

ACCURACY_SERIES = ("acc_l10", "acc_l100", "acc_l1000")
ENERGY_SERIES = ("kinetic", "potential")
X_CANDIDATES = ("epoch", "step")

Points = List[Tuple[float, float]]


def read_series(
    path: Union[str, Path], columns: Optional[Sequence[str]] = None
) -> Tuple[str, Dict[str, Points]]:
    """Load ``(x, y)`` points per column from a CSV file.

    The x column is ``epoch`` or ``step`` when present, else the first column.
    Without ``columns`` the accuracy columns are used when the file has them,
    then ``kinetic`` and ``potential``, then every other column. Empty cells
    are skipped.

    Returns:
        Tuple of (x column name, mapping of column to points)

    Raises:
        CSVFormatError: On a missing header, a ragged row, a non-numeric cell
            or an unknown column
    """
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or not rows[0]:
        raise CSVFormatError(f"{path}: missing header")
    header = [name.strip() for name in rows[0]]
    x_name = next((name for name in X_CANDIDATES if name in header), header[0])

    if columns:
        unknown = [name for name in columns if name not in header]
        if unknown:
            raise CSVFormatError(f"{path}: unknown columns {', '.join(unknown)}")
        chosen = list(columns)
    elif any(name in header for name in ACCURACY_SERIES):
        chosen = [name for name in ACCURACY_SERIES if name in header]
    elif all(name in header for name in ENERGY_SERIES):
        chosen = list(ENERGY_SERIES)
    else:
        chosen = [name for name in header if name != x_name]

    index = {name: i for i, name in enumerate(header)}
    series: Dict[str, Points] = {name: [] for name in chosen}
    for line_number, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CSVFormatError(
                f"{path}: line {line_number} has {len(row)} fields, expected {len(header)}"
            )
        x = _number(row[index[x_name]], path, line_number)
        for name in chosen:
            cell = row[index[name]].strip()
            if cell:
                series[name].append((x, _number(cell, path, line_number)))
    return x_name, series


def _number(text: str, path, line_number: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise CSVFormatError(f"{path}: line {line_number}: '{text}' is not a number") from None
    if not math.isfinite(value):
        raise CSVFormatError(f"{path}: line {line_number}: non-finite value '{text}'")
    return value


def _bounds(values: List[float]) -> Tuple[float, float]:
    if not values:
        return 0.0, 1.0
    low, high = min(values), max(values)
    if low == high:
        pad = abs(low) * 0.5 or 0.5
        return low - pad, high + pad
    return low, high


def _label(value: float) -> str:
    return f"{value:.4g}"


def line_chart_svg(series: Dict[str, Points], x_label: str = "x", title: str = "") -> str:
    """Render series as an SVG document with axes, extreme-value ticks and a legend.

    Series with no points still get a legend entry; with no points at all
    only the axes are drawn.
    """
    xs = [x for points in series.values() for x, _ in points]
    ys = [y for points in series.values() for _, y in points]
    x_low, x_high = _bounds(xs)
    y_low, y_high = _bounds(ys)
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x: float) -> float:
        return MARGIN_LEFT + (x - x_low) / (x_high - x_low) * plot_w

    def py(y: float) -> float:
        return MARGIN_TOP + plot_h - (y - y_low) / (y_high - y_low) * plot_h

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": str(WIDTH),
            "height": str(HEIGHT),
            "viewBox": f"0 0 {WIDTH} {HEIGHT}",
        },
    )
    ET.SubElement(svg, "rect", {"width": str(WIDTH), "height": str(HEIGHT), "fill": "white"})
    if title:
        heading = {"x": str(WIDTH // 2), "y": "24", "text-anchor": "middle"}
        ET.SubElement(svg, "text", heading).text = title

    axes = ET.SubElement(svg, "g", {"id": "axes", "stroke": "black", "stroke-width": "1"})
    bottom = MARGIN_TOP + plot_h
    ET.SubElement(axes, "line", _line(MARGIN_LEFT, bottom, MARGIN_LEFT + plot_w, bottom))
    ET.SubElement(axes, "line", _line(MARGIN_LEFT, MARGIN_TOP, MARGIN_LEFT, bottom))

    font = {"font-size": "11", "font-family": "sans-serif"}
    labels = ET.SubElement(svg, "g", {"id": "labels", **font})
    for value, anchor in ((x_low, "start"), (x_high, "end")):
        ET.SubElement(
            labels, "text", {"x": f"{px(value):.2f}", "y": str(bottom + 16), "text-anchor": anchor}
        ).text = _label(value)
    for value in (y_low, y_high):
        tick = {"x": str(MARGIN_LEFT - 6), "y": f"{py(value) + 4:.2f}", "text-anchor": "end"}
        ET.SubElement(labels, "text", tick).text = _label(value)
    caption = {"x": str(MARGIN_LEFT + plot_w // 2), "y": str(HEIGHT - 12), "text-anchor": "middle"}
    ET.SubElement(labels, "text", caption).text = x_label

    lines = ET.SubElement(svg, "g", {"id": "series", "fill": "none", "stroke-width": "1.5"})
    legend = ET.SubElement(svg, "g", {"id": "legend", **font})
    for i, (name, points) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        if points:
            ET.SubElement(
                lines,
                "polyline",
                {
                    "stroke": color,
                    "data-series": name,
                    "points": " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points),
                },
            )
        y = MARGIN_TOP + 14 * i + 6
        key_x = WIDTH - MARGIN_RIGHT + 12
        ET.SubElement(legend, "line", {**_line(key_x, y, key_x + 20, y), "stroke": color})
        ET.SubElement(legend, "text", {"x": str(key_x + 26), "y": str(y + 4)}).text = name

    return '<?xml version="1.0" encoding="UTF-8"?>\n' + ET.tostring(svg, encoding="unicode") + "\n"


def _line(x1: float, y1: float, x2: float, y2: float) -> Dict[str, str]:
    return {"x1": f"{x1:.2f}", "y1": f"{y1:.2f}", "x2": f"{x2:.2f}", "y2": f"{y2:.2f}"}


def write_svg(path: Union[str, Path], document: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(document)
    return path


def plot_csv(
    csv_path: Union[str, Path], output: Union[str, Path], columns: Optional[Sequence[str]] = None
) -> Path:
    """Chart a metrics or trajectory CSV into an SVG file."""
    x_name, series = read_series(csv_path, columns)
    return write_svg(output, line_chart_svg(series, x_label=x_name, title=Path(csv_path).name))
