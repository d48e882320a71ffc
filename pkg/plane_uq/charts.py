"""
Static SVG charts: reliability diagram and risk-coverage curve.

Output is a pure function of the inputs; coordinates are printed with fixed
precision so reruns are byte-identical.
"""

from html import escape as html_escape
from typing import List, Optional, Sequence

from uqlib.metrics import ReliabilityBins
from uqlib.selective import RiskCoverageCurve, SelectivePolicy

COLORS = {
    "before": "#6c757d",
    "after": "#0d6efd",
    "diagonal": "#adb5bd",
    "curve": "#0d6efd",
    "policy": "#dc3545",
    "bg": "#ffffff",
    "grid": "#e9ecef",
    "text": "#212529",
    "muted": "#6c757d",
}

FONT = "system-ui, -apple-system, 'Segoe UI', sans-serif"
WIDTH, HEIGHT = 480, 420
MARGIN = {"top": 50, "right": 30, "bottom": 60, "left": 70}
TICKS = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]


def _f(v: float) -> str:
    return f"{v:.2f}"


def _svg_header(title: str) -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" '
        f'width="{WIDTH}" height="{HEIGHT}" style="font-family: {FONT}; background: {COLORS["bg"]}">\n',
        f"<title>{html_escape(title)}</title>\n",
        f'<text x="{WIDTH / 2}" y="28" text-anchor="middle" font-size="15" font-weight="600" '
        f'fill="{COLORS["text"]}">{html_escape(title)}</text>\n',
    ]


class _Frame:
    """Unit-square plot area with gridlines and axis labels."""

    def __init__(self, x_label: str, y_label: str, y_max: float = 1.0):
        self.plot_w = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.plot_h = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        self.y_max = y_max
        self.x_label = x_label
        self.y_label = y_label

    def x(self, v: float) -> float:
        return MARGIN["left"] + self.plot_w * v

    def y(self, v: float) -> float:
        return MARGIN["top"] + self.plot_h * (1.0 - v / self.y_max)

    def axes(self) -> List[str]:
        parts = []
        for t in TICKS:
            yv = t * self.y_max
            parts.append(
                f'<line x1="{_f(self.x(0))}" y1="{_f(self.y(yv))}" x2="{_f(self.x(1))}" '
                f'y2="{_f(self.y(yv))}" stroke="{COLORS["grid"]}" stroke-width="1"/>\n'
            )
            parts.append(
                f'<text x="{_f(self.x(0) - 8)}" y="{_f(self.y(yv) + 4)}" text-anchor="end" '
                f'font-size="11" fill="{COLORS["muted"]}">{yv:.2f}</text>\n'
            )
            parts.append(
                f'<text x="{_f(self.x(t))}" y="{_f(self.y(0) + 18)}" text-anchor="middle" '
                f'font-size="11" fill="{COLORS["muted"]}">{t:.1f}</text>\n'
            )
        parts.append(
            f'<text x="{_f(self.x(0.5))}" y="{HEIGHT - 15}" text-anchor="middle" font-size="12" '
            f'fill="{COLORS["text"]}">{html_escape(self.x_label)}</text>\n'
        )
        yl_y = MARGIN["top"] + self.plot_h / 2
        parts.append(
            f'<text x="18" y="{_f(yl_y)}" text-anchor="middle" font-size="12" '
            f'fill="{COLORS["text"]}" transform="rotate(-90 18 {_f(yl_y)})">'
            f"{html_escape(self.y_label)}</text>\n"
        )
        return parts


def _legend(entries: Sequence[tuple]) -> List[str]:
    parts = []
    for i, (name, color) in enumerate(entries):
        y = MARGIN["top"] + 8 + 16 * i
        x = MARGIN["left"] + 10
        parts.append(f'<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/>\n')
        parts.append(
            f'<text x="{x + 16}" y="{y + 9}" font-size="11" fill="{COLORS["text"]}">'
            f"{html_escape(name)}</text>\n"
        )
    return parts


def reliability_svg(
    before: ReliabilityBins,
    after: Optional[ReliabilityBins] = None,
    title: str = "Reliability diagram",
) -> str:
    """Accuracy bars per confidence bin against the diagonal; empty bins are left blank."""
    frame = _Frame("confidence", "accuracy")
    parts = _svg_header(title) + frame.axes()
    parts.append(
        f'<line x1="{_f(frame.x(0))}" y1="{_f(frame.y(0))}" x2="{_f(frame.x(1))}" '
        f'y2="{_f(frame.y(1))}" stroke="{COLORS["diagonal"]}" stroke-dasharray="4 3"/>\n'
    )
    series = [("uncalibrated" if after is not None else "model", before, COLORS["before"])]
    if after is not None:
        series.append(("temperature scaled", after, COLORS["after"]))
    slot = 1.0 / len(series)
    for si, (name, bins, color) in enumerate(series):
        for b in range(bins.num_bins):
            acc = bins.accuracy[b]
            if bins.count[b] == 0:
                continue
            lo, hi = bins.edges[b], bins.edges[b + 1]
            left = lo + (hi - lo) * slot * si
            width = (hi - lo) * slot
            parts.append(
                f'<rect x="{_f(frame.x(left))}" y="{_f(frame.y(acc))}" '
                f'width="{_f(frame.plot_w * width)}" height="{_f(frame.y(0) - frame.y(acc))}" '
                f'fill="{color}" fill-opacity="0.8">'
                f"<title>{html_escape(name)}: n={int(bins.count[b])}, "
                f"conf={bins.mean_confidence[b]:.3f}, acc={acc:.3f}</title></rect>\n"
            )
    parts += _legend([(name, color) for name, _, color in series])
    parts.append("</svg>\n")
    return "".join(parts)


def risk_coverage_svg(
    curve: RiskCoverageCurve,
    policy: Optional[SelectivePolicy] = None,
    title: str = "Risk-coverage curve",
) -> str:
    """Selective risk polyline over coverage, with the operating point marked."""
    y_max = max(0.05, max(pt.risk for pt in curve))
    y_max = min(1.0, 1.25 * y_max)
    frame = _Frame("coverage", "selective risk", y_max=y_max)
    parts = _svg_header(f"{title} (AURC {curve.aurc:.4f})") + frame.axes()
    points = " ".join(f"{_f(frame.x(pt.coverage))},{_f(frame.y(pt.risk))}" for pt in curve)
    parts.append(
        f'<polyline points="{points}" fill="none" stroke="{COLORS["curve"]}" stroke-width="2"/>\n'
    )
    legend = [("risk", COLORS["curve"])]
    if policy is not None and not policy.abstain_all and policy.achieved_risk is not None:
        parts.append(
            f'<circle cx="{_f(frame.x(policy.coverage))}" cy="{_f(frame.y(policy.achieved_risk))}" '
            f'r="5" fill="{COLORS["policy"]}"><title>threshold {policy.threshold:.4f}</title></circle>\n'
        )
        legend.append(("operating point", COLORS["policy"]))
    parts += _legend(legend)
    parts.append("</svg>\n")
    return "".join(parts)
