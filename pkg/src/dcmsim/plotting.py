"""Dependency-free SVG figures: preference scatters and accuracy curves."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .language import PRESETS, LanguageSpec
from .report import accuracy_curve, agent_deltas

EVAL_REQUIRED = ("language", "pair_id", "agent_id", "phase", "ambiguity_class", "p_sov", "p_marked")
ACC_REQUIRED = ("pair_id", "turn", "acc_all", "acc_amb", "acc_notamb")

PANEL = 260
MARGIN = 44
COLORS = {"PostSL": "#e377c2", "PostRL": "#7b3fa0", "acc_all": "#ff7f0e",
          "acc_notamb": "#2ca02c", "acc_amb": "#1f77b4", "delta": "#7b3fa0"}


class SchemaError(ValueError):
    pass


def check_columns(rows: Sequence[dict], required: Sequence[str], what: str) -> None:
    if not rows:
        raise SchemaError(f"{what}: no rows")
    missing = [c for c in required if c not in rows[0]]
    if missing:
        raise SchemaError(f"{what}: missing columns {missing}; have {sorted(rows[0])}")


class Panel:
    """Maps data coordinates into one square panel at (ox, oy)."""

    def __init__(self, ox, oy, xlim=(0.0, 1.0), ylim=(0.0, 1.0)):
        self.ox, self.oy = ox, oy
        self.xlim, self.ylim = xlim, ylim
        self.parts: list[str] = []

    def x(self, v):
        lo, hi = self.xlim
        return self.ox + MARGIN + (v - lo) / (hi - lo) * (PANEL - 2 * MARGIN)

    def y(self, v):
        lo, hi = self.ylim
        return self.oy + PANEL - MARGIN - (v - lo) / (hi - lo) * (PANEL - 2 * MARGIN)

    def frame(self, title, xlabel, ylabel, ticks=5):
        x0, x1 = self.x(self.xlim[0]), self.x(self.xlim[1])
        y0, y1 = self.y(self.ylim[0]), self.y(self.ylim[1])
        p = self.parts
        p.append(f'<rect x="{x0:.2f}" y="{y1:.2f}" width="{x1 - x0:.2f}" height="{y0 - y1:.2f}" '
                 f'fill="none" stroke="#444"/>')
        for i in range(ticks + 1):
            fx = self.xlim[0] + i * (self.xlim[1] - self.xlim[0]) / ticks
            fy = self.ylim[0] + i * (self.ylim[1] - self.ylim[0]) / ticks
            p.append(f'<text x="{self.x(fx):.2f}" y="{y0 + 14:.2f}" font-size="9" text-anchor="middle">{fx:g}</text>')
            p.append(f'<text x="{x0 - 4:.2f}" y="{self.y(fy) + 3:.2f}" font-size="9" text-anchor="end">{fy:g}</text>')
        p.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{self.oy + 16:.2f}" font-size="12" '
                 f'text-anchor="middle">{escape(title)}</text>')
        p.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{y0 + 30:.2f}" font-size="10" '
                 f'text-anchor="middle">{escape(xlabel)}</text>')
        p.append(f'<text x="{self.ox + 12:.2f}" y="{(y0 + y1) / 2:.2f}" font-size="10" text-anchor="middle" '
                 f'transform="rotate(-90 {self.ox + 12:.2f} {(y0 + y1) / 2:.2f})">{escape(ylabel)}</text>')

    def circle(self, vx, vy, color, filled=False, r=3.5):
        fill = color if filled else "none"
        self.parts.append(f'<circle cx="{self.x(vx):.2f}" cy="{self.y(vy):.2f}" r="{r}" '
                          f'fill="{fill}" stroke="{color}"/>')

    def diamond(self, vx, vy, color="#000", r=6):
        cx, cy = self.x(vx), self.y(vy)
        pts = f"{cx:.2f},{cy - r:.2f} {cx + r:.2f},{cy:.2f} {cx:.2f},{cy + r:.2f} {cx - r:.2f},{cy:.2f}"
        self.parts.append(f'<polygon class="initial" points="{pts}" fill="{color}"/>')

    def errorbars(self, mx, my, sx, sy, color):
        p = self.parts
        p.append(f'<line x1="{self.x(mx - sx):.2f}" y1="{self.y(my):.2f}" x2="{self.x(mx + sx):.2f}" '
                 f'y2="{self.y(my):.2f}" stroke="{color}"/>')
        p.append(f'<line x1="{self.x(mx):.2f}" y1="{self.y(my - sy):.2f}" x2="{self.x(mx):.2f}" '
                 f'y2="{self.y(my + sy):.2f}" stroke="{color}"/>')

    def polyline(self, xs, ys, color):
        pts = " ".join(f"{self.x(a):.2f},{self.y(b):.2f}" for a, b in zip(xs, ys))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    def legend(self, entries):
        for i, (label, color) in enumerate(entries):
            yy = self.oy + PANEL - MARGIN - 8 - 12 * i
            xx = self.x(self.xlim[1]) - 70
            self.parts.append(f'<rect x="{xx:.2f}" y="{yy - 7:.2f}" width="8" height="8" fill="{color}"/>')
            self.parts.append(f'<text x="{xx + 11:.2f}" y="{yy:.2f}" font-size="9">{escape(label)}</text>')


def svg_document(panels: Sequence[Panel], width: int, height: int) -> str:
    body = "\n".join(part for p in panels for part in p.parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">\n<rect width="100%" height="100%" fill="white"/>\n'
            f"{body}\n</svg>\n")


def _scatter(panel: Panel, pts: list[tuple[float, float]], color: str):
    pts = [(a, b) for a, b in pts if not (math.isnan(a) or math.isnan(b))]
    for a, b in pts:
        panel.circle(a, b, color)
    if pts:
        arr = np.array(pts)
        m = arr.mean(axis=0)
        s = arr.std(axis=0, ddof=1) if len(arr) > 1 else np.zeros(2)
        panel.errorbars(m[0], m[1], s[0], s[1], color)
        panel.circle(m[0], m[1], color, filled=True, r=5)


def preference_figure(rows: Sequence[dict], language: str, spec: LanguageSpec | None = None) -> str:
    """Panels for NotAmb, Amb and All (p_sov vs p_marked, SL and RL) plus the RL Δ panel."""
    spec = spec or PRESETS.get(language)
    rows = [r for r in rows if r["language"] == language]
    panels = []
    for i, cls in enumerate(("NotAmb", "Amb", "All")):
        panel = Panel(i * PANEL, 0)
        panel.frame(f"{language}: {cls}", "p(SOV)", "p(marked)")
        if spec is not None:
            panel.diamond(spec.p_sov, spec.p_marked)
        for phase in ("PostSL", "PostRL"):
            pts = [(float(r["p_sov"]), float(r["p_marked"])) for r in rows
                   if r["ambiguity_class"] == cls and r["phase"] == phase]
            _scatter(panel, pts, COLORS[phase])
        panel.legend([("after SL", COLORS["PostSL"]), ("after RL", COLORS["PostRL"])])
        panels.append(panel)
    delta = Panel(3 * PANEL, 0, (-1.0, 1.0), (-1.0, 1.0))
    delta.frame(f"{language}: Amb - NotAmb (RL)", "Δ p(SOV)", "Δ p(marked)", ticks=4)
    delta.polyline([-1, 1], [0, 0], "#bbb")
    delta.polyline([0, 0], [-1, 1], "#bbb")
    d = agent_deltas(rows, "PostRL").get(language, {})
    _scatter(delta, [(ds, dm) for dm, ds in d.values()], COLORS["delta"])
    panels.append(delta)
    return svg_document(panels, 4 * PANEL, PANEL)


def accuracy_figure(acc_rows: Sequence[dict], title: str = "meaning reconstruction accuracy") -> str:
    curves = accuracy_curve(acc_rows)
    turns = [t for t, _, _ in curves["acc_all"]]
    panel = Panel(0, 0, (min(turns), max(max(turns), min(turns) + 1)), (0.0, 1.0))
    panel.frame(title, "turn", "accuracy")
    labels = {"acc_all": "all", "acc_notamb": "NotAmb", "acc_amb": "Amb"}
    for col in ("acc_all", "acc_notamb", "acc_amb"):
        c = curves[col]
        panel.polyline([t for t, _, _ in c], [m for _, m, _ in c], COLORS[col])
    panel.legend([(labels[k], COLORS[k]) for k in ("acc_all", "acc_notamb", "acc_amb")])
    return svg_document([panel], PANEL, PANEL)


def plot_preferences(eval_rows: Sequence[dict], out_dir, spec: LanguageSpec | None = None,
                     acc_rows: Iterable[dict] | None = None) -> list[Path]:
    check_columns(eval_rows, EVAL_REQUIRED, "eval CSV")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for lang in sorted({r["language"] for r in eval_rows}):
        path = out_dir / f"preferences_{lang}.svg"
        path.write_text(preference_figure(eval_rows, lang, spec if spec and spec.name == lang else None))
        written.append(path)
    if acc_rows is not None:
        acc_rows = list(acc_rows)
        check_columns(acc_rows, ACC_REQUIRED, "accuracy CSV")
        path = out_dir / "accuracy.svg"
        path.write_text(accuracy_figure(acc_rows))
        written.append(path)
    return written
