"""Static SVG plots of sweep and grid results."""
import math
from pathlib import Path
from typing import List, Sequence, Tuple

from reportlab.graphics import renderSVG
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, Line, String
from reportlab.graphics.widgets.markers import makeMarker
from reportlab.lib import colors

Series = Tuple[str, Sequence[Tuple[float, float]]]

PALETTE = [
    colors.HexColor('#2C3E50'),
    colors.HexColor('#C0392B'),
    colors.HexColor('#27AE60'),
    colors.HexColor('#8E44AD'),
    colors.HexColor('#D35400'),
    colors.HexColor('#16A085'),
]


def _padded_range(values: List[float]) -> Tuple[float, float]:
    low, high = min(values), max(values)
    if high - low <= 1e-12 * max(1.0, abs(low)):
        pad = max(0.5, abs(low) * 0.1)
        return low - pad, high + pad
    return low, high


class PlotGenerator:
    """Render labelled (x, y) series as a line plot."""

    def __init__(self, width: int = 480, height: int = 320):
        self.width = width
        self.height = height

    def _prepare(self, series: Sequence[Series], log_y: bool) -> List[Tuple[str, List[Tuple[float, float]]]]:
        if not series:
            raise ValueError("Cannot plot an empty series list")
        prepared = []
        for label, points in series:
            kept = []
            for x, y in points:
                x, y = float(x), float(y)
                if log_y:
                    if y <= 0.0:
                        continue
                    y = math.log10(y)
                if math.isfinite(x) and math.isfinite(y):
                    kept.append((x, y))
            if kept:
                prepared.append((str(label), kept))
        if not prepared:
            raise ValueError("No plottable points (log scale needs positive values)")
        return prepared

    def build_drawing(self, series: Sequence[Series], log_y: bool = False, title: str = '',
                      x_label: str = 'x', y_label: str = 'y') -> Drawing:
        prepared = self._prepare(series, log_y)
        drawing = Drawing(self.width, self.height)

        plot = LinePlot()
        plot.x, plot.y = 60, 50
        plot.width = self.width - 90
        plot.height = self.height - 100
        plot.data = [points for _, points in prepared]
        plot.joinedLines = 1

        xs = [x for _, points in prepared for x, _ in points]
        ys = [y for _, points in prepared for _, y in points]
        plot.xValueAxis.valueMin, plot.xValueAxis.valueMax = _padded_range(xs)
        plot.yValueAxis.valueMin, plot.yValueAxis.valueMax = _padded_range(ys)
        plot.xValueAxis.labelTextFormat = '%.3g'
        plot.yValueAxis.labelTextFormat = '%.3g'

        for i in range(len(prepared)):
            color = PALETTE[i % len(PALETTE)]
            plot.lines[i].strokeColor = color
            plot.lines[i].strokeWidth = 1.2
            plot.lines[i].symbol = makeMarker('Circle', size=3, fillColor=color, strokeColor=color)
        drawing.add(plot)

        if title:
            drawing.add(String(self.width / 2, self.height - 20, title, fontSize=12, textAnchor='middle'))
        drawing.add(String(plot.x + plot.width / 2, 12, x_label, fontSize=9, textAnchor='middle'))
        drawing.add(String(8, plot.y + plot.height + 8, f"log10 {y_label}" if log_y else y_label, fontSize=9))

        # legend, top right
        for i, (label, _) in enumerate(prepared):
            y = self.height - 38 - 12 * i
            x = self.width - 140
            color = PALETTE[i % len(PALETTE)]
            drawing.add(Line(x, y + 3, x + 14, y + 3, strokeColor=color, strokeWidth=1.5))
            drawing.add(String(x + 18, y, label, fontSize=8))
        return drawing

    def render(self, series: Sequence[Series], log_y: bool = False, title: str = '',
               x_label: str = 'x', y_label: str = 'y') -> str:
        """SVG document as a string; identical inputs give identical bytes."""
        svg = renderSVG.drawToString(self.build_drawing(series, log_y, title, x_label, y_label))
        return svg.decode('utf-8') if isinstance(svg, bytes) else svg

    def emit_plot(self, series: Sequence[Series], path, log_y: bool = False, title: str = '',
                  x_label: str = 'x', y_label: str = 'y') -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        svg = self.render(series, log_y, title, x_label, y_label)
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(svg)
        return path
