"""Forward-pass timing with operation accounting.

Protocol: square zero image, batch 1, a fixed number of untimed warmup
passes, then exactly ``runs`` timed forward passes whose mean becomes the
throughput number.  Decode and suppression never run inside the harness;
the call counters exist so tests can prove that.  Multiply-accumulate
counts come from one extra instrumented pass outside the timed section.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .counters import OpCounter, record_call
from .nn import Tensor, no_grad


@dataclass
class TimingResult:
    name: str
    imgsz: int
    runs_ms: List[float]
    warmup: int
    macs: int
    params: int

    @property
    def mean_ms(self) -> float:
        return float(np.mean(self.runs_ms))

    @property
    def fps(self) -> float:
        return 1000.0 / self.mean_ms

    @property
    def flops(self) -> int:
        return 2 * self.macs

    def row(self) -> dict:
        return {
            "name": self.name,
            "imgsz": self.imgsz,
            "mean_ms": round(self.mean_ms, 3),
            "fps": round(self.fps, 3),
            "macs": self.macs,
            "flops": self.flops,
            "params": self.params,
        }


def bench(model, imgsz: int = 256, runs: int = 3, warmup: int = 10,
          dtype=np.float32) -> TimingResult:
    """Time ``runs`` forward passes at batch 1 on a zero image."""
    x = Tensor(np.zeros((1, 3, imgsz, imgsz), dtype=dtype))
    with no_grad():
        for _ in range(warmup):
            record_call("forward")
            model(x)
        times = []
        for _ in range(runs):
            record_call("forward")
            t0 = time.perf_counter()
            model(x)
            times.append((time.perf_counter() - t0) * 1000.0)
        with OpCounter() as c:
            record_call("forward")
            model(x)
    return TimingResult(name=getattr(model.cfg, "name", "model"), imgsz=imgsz,
                        runs_ms=times, warmup=warmup, macs=c.macs,
                        params=model.param_count())


def results_csv(results: Sequence[TimingResult]) -> str:
    cols = ["name", "imgsz", "mean_ms", "fps", "macs", "flops", "params"]
    lines = [",".join(cols)]
    for r in results:
        row = r.row()
        lines.append(",".join(str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"


def spearman(a: Sequence[float], b: Sequence[float]) -> float:
    """Rank correlation; exact 1.0 when orderings agree with no ties."""
    from scipy.stats import rankdata

    ra, rb = rankdata(list(a)), rankdata(list(b))
    return float(np.corrcoef(ra, rb)[0, 1])


# ----------------------------------------------------------------------
# plotting (deterministic, dependency-free SVG)
# ----------------------------------------------------------------------
def scatter_svg(xs: Sequence[float], ys: Sequence[float], labels: Sequence[str],
                x_label: str, y_label: str, title: str = "",
                width: int = 640, height: int = 440) -> str:
    """A scatter plot as a standalone SVG string.

    Output depends only on the inputs, so identical data gives identical
    bytes.
    """
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    xmin, xmax = min(xs), max(xs)
    ymin, ymax = min(ys), max(ys)
    xpad = (xmax - xmin) * 0.08 or max(abs(xmax), 1.0) * 0.08
    ypad = (ymax - ymin) * 0.08 or max(abs(ymax), 1.0) * 0.08
    xmin, xmax = xmin - xpad, xmax + xpad
    ymin, ymax = ymin - ypad, ymax + ypad

    def sx(v):
        return ml + (v - xmin) / (xmax - xmin) * pw

    def sy(v):
        return mt + ph - (v - ymin) / (ymax - ymin) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#888" stroke-width="1"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{title}</text>')
    for i in range(5):
        fx = xmin + (xmax - xmin) * i / 4
        fy = ymin + (ymax - ymin) * i / 4
        parts.append(f'<line x1="{sx(fx):.1f}" y1="{mt + ph}" x2="{sx(fx):.1f}" '
                     f'y2="{mt + ph + 5}" stroke="#555"/>')
        parts.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>')
        parts.append(f'<line x1="{ml - 5}" y1="{sy(fy):.1f}" x2="{ml}" '
                     f'y2="{sy(fy):.1f}" stroke="#555"/>')
        parts.append(f'<text x="{ml - 8}" y="{sy(fy) + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">{x_label}</text>')
    parts.append(f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{y_label}</text>')
    for x, y, lab in zip(xs, ys, labels):
        parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="4" '
                     'fill="#2b6cb0"/>')
        parts.append(f'<text x="{sx(x) + 7:.2f}" y="{sy(y) - 6:.2f}" '
                     f'font-family="sans-serif" font-size="10">{lab}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def line_svg(ys: Sequence[float], y_label: str, title: str = "",
             width: int = 640, height: int = 440) -> str:
    """Index-vs-value line plot as a standalone SVG string."""
    xs = list(range(len(ys)))
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb
    ys = [float(v) for v in ys]
    ymin, ymax = min(ys), max(ys)
    ypad = (ymax - ymin) * 0.08 or max(abs(ymax), 1.0) * 0.08
    ymin, ymax = ymin - ypad, ymax + ypad
    xmax = max(len(xs) - 1, 1)

    def sx(v):
        return ml + v / xmax * pw

    def sy(v):
        return mt + ph - (v - ymin) / (ymax - ymin) * ph

    pts = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" '
        'stroke="#888" stroke-width="1"/>',
        f'<polyline points="{pts}" fill="none" stroke="#2b6cb0" stroke-width="1.5"/>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{title}</text>')
    for i in range(5):
        fy = ymin + (ymax - ymin) * i / 4
        fx = xmax * i / 4
        parts.append(f'<text x="{ml - 8}" y="{sy(fy) + 3:.1f}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="10">{_fmt(fy)}</text>')
        parts.append(f'<text x="{sx(fx):.1f}" y="{mt + ph + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{int(fx)}</text>')
    parts.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12">step</text>')
    parts.append(f'<text x="18" y="{mt + ph / 2:.1f}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="12" '
                 f'transform="rotate(-90 18 {mt + ph / 2:.1f})">{y_label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _fmt(v: float) -> str:
    if abs(v) >= 1e6:
        return f"{v / 1e6:.1f}M"
    if abs(v) >= 1e3:
        return f"{v / 1e3:.1f}k"
    if abs(v) >= 10:
        return f"{v:.0f}"
    return f"{v:.2f}"
