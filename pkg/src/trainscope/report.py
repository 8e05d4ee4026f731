"""Deterministic SVG charts and report bundles.

Charts are hand-emitted SVG 1.1 with a fixed 960x540 viewbox and all
numbers formatted to 6 significant digits, so identical inputs yield
byte-identical files (the property golden tests pin).  Stage intervals
render as background bands colored by a fixed 8-color palette assigned
in stage order; series strokes use the same palette.  Legends use rect
swatches, so each polyline in the file is a data series.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .container import Role
from .errors import EmptyInputError, RoleAbsentError
from .frechet import DistanceSeries
from .monitor import MetricSeries, StageBoundary
from .weightstats import TrajectorySet

#: Stage band / series stroke palette, assigned by stage (series) order.
PALETTE = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2",
    "#59a14f", "#edc948", "#b07aa1", "#9c755f",
)

_VIEW_W = 960
_VIEW_H = 540
_PLOT = (70.0, 50.0, 930.0, 490.0)   # x0, y0, x1, y1


def _fmt(x: float) -> str:
    out = format(float(x), ".6g")
    return "0" if out == "-0" else out


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


@dataclass
class ChartStyle:
    palette: tuple[str, ...] = PALETTE
    band_opacity: float = 0.18
    stroke_width: float = 1.5


def _as_xy(series) -> tuple[str, list[tuple[float, float]]]:
    if isinstance(series, MetricSeries):
        return series.name, list(series.points)
    if isinstance(series, DistanceSeries):
        return series.role.value, [(pt.midpoint_b, pt.normalized) for pt in series.points]
    label, points = series
    return str(label), [(float(x), float(y)) for x, y in points]


def _ticks(lo: float, hi: float, preferred: list[float] | None = None) -> list[float]:
    if preferred is not None and 2 <= len(preferred) <= 8:
        return preferred
    return [lo + k * (hi - lo) / 4.0 for k in range(5)]


def _range(values: list[float], pad_frac: float = 0.05) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if lo == hi:
        pad = max(abs(lo) * 0.1, 1e-6)
    else:
        pad = (hi - lo) * pad_frac
    return lo - pad, hi + pad


def _render(
    labeled: list[tuple[str, list[tuple[float, float]]]],
    boundaries: list[StageBoundary],
    style: ChartStyle,
    title: str,
    x_label: str,
    y_label: str,
    x_tick_candidates: list[float] | None = None,
) -> bytes:
    x0, y0, x1, y1 = _PLOT
    xs = [x for _, pts in labeled for x, _ in pts]
    ys = [y for _, pts in labeled for _, y in pts]
    xmin, xmax = _range(xs, 0.0 if x_tick_candidates else 0.02)
    ymin, ymax = _range(ys)

    def sx(x: float) -> float:
        return x0 + (x - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(y: float) -> float:
        return y1 - (y - ymin) / (ymax - ymin) * (y1 - y0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {_VIEW_W} {_VIEW_H}" '
        f'font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{_VIEW_W}" height="{_VIEW_H}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="{_fmt(_VIEW_W / 2)}" y="28" text-anchor="middle" '
            f'font-size="16">{_esc(title)}</text>'
        )

    starts = [b.start_tokens_b for b in boundaries]
    for i, b in enumerate(boundaries):
        left = max(b.start_tokens_b, xmin)
        right = starts[i + 1] if i + 1 < len(starts) else xmax
        right = min(right, xmax)
        if right <= left:
            continue
        color = style.palette[i % len(style.palette)]
        parts.append(
            f'<rect x="{_fmt(sx(left))}" y="{_fmt(y0)}" '
            f'width="{_fmt(sx(right) - sx(left))}" height="{_fmt(y1 - y0)}" '
            f'fill="{color}" fill-opacity="{_fmt(style.band_opacity)}"/>'
        )
        parts.append(
            f'<text x="{_fmt(sx(left) + 4)}" y="{_fmt(y0 + 14)}" '
            f'fill="{color}">{_esc(b.stage)}</text>'
        )

    parts.append(
        f'<line x1="{_fmt(x0)}" y1="{_fmt(y1)}" x2="{_fmt(x1)}" y2="{_fmt(y1)}" stroke="#333333"/>'
    )
    parts.append(
        f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x0)}" y2="{_fmt(y1)}" stroke="#333333"/>'
    )
    for tx in _ticks(xmin, xmax, x_tick_candidates):
        parts.append(
            f'<line x1="{_fmt(sx(tx))}" y1="{_fmt(y1)}" x2="{_fmt(sx(tx))}" y2="{_fmt(y1 + 5)}" '
            f'stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{_fmt(sx(tx))}" y="{_fmt(y1 + 20)}" text-anchor="middle">{_fmt(tx)}</text>'
        )
    for ty in _ticks(ymin, ymax):
        parts.append(
            f'<line x1="{_fmt(x0 - 5)}" y1="{_fmt(sy(ty))}" x2="{_fmt(x0)}" y2="{_fmt(sy(ty))}" '
            f'stroke="#333333"/>'
        )
        parts.append(
            f'<text x="{_fmt(x0 - 8)}" y="{_fmt(sy(ty) + 4)}" text-anchor="end">{_fmt(ty)}</text>'
        )
    parts.append(
        f'<text x="{_fmt((x0 + x1) / 2)}" y="{_fmt(y1 + 40)}" text-anchor="middle">'
        f"{_esc(x_label)}</text>"
    )
    if y_label:
        parts.append(
            f'<text x="18" y="{_fmt((y0 + y1) / 2)}" text-anchor="middle" '
            f'transform="rotate(-90 18 {_fmt((y0 + y1) / 2)})">{_esc(y_label)}</text>'
        )

    for i, (label, pts) in enumerate(labeled):
        color = style.palette[i % len(style.palette)]
        coords = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(style.stroke_width)}"/>'
        )
    for i, (label, _pts) in enumerate(labeled):
        color = style.palette[i % len(style.palette)]
        ly = y0 + 10 + 16 * i
        parts.append(
            f'<rect x="{_fmt(x1 - 140)}" y="{_fmt(ly - 8)}" width="12" height="8" fill="{color}"/>'
        )
        parts.append(f'<text x="{_fmt(x1 - 124)}" y="{_fmt(ly)}">{_esc(label)}</text>')
    parts.append("</svg>")
    return ("\n".join(parts) + "\n").encode("utf-8")


def render_line_chart(
    series: list,
    boundaries: list[StageBoundary] | None = None,
    style: ChartStyle | None = None,
    *,
    title: str = "",
    x_label: str = "tokens (B)",
    y_label: str = "",
) -> bytes:
    """Render metric or distance series as polylines over stage bands."""
    labeled = [_as_xy(s) for s in series]
    labeled = [(label, pts) for label, pts in labeled if pts]
    if not labeled:
        raise EmptyInputError("no non-empty series to draw")
    return _render(
        labeled, list(boundaries or ()), style or ChartStyle(), title, x_label, y_label
    )


def render_layer_curves(
    tset: TrajectorySet,
    role: Role | str,
    checkpoints: list[str] | None = None,
    style: ChartStyle | None = None,
    *,
    title: str = "",
) -> bytes:
    """One polyline per selected checkpoint: x = layer index, y = metric.

    Legend entries are token counts in billions, in checkpoint order.
    """
    role = Role(role)
    if role not in tset.roles():
        raise RoleAbsentError(f"role {role.value} absent from the trajectory set")
    selected = [
        cs
        for cs in tset.checkpoints
        if (checkpoints is None or cs.checkpoint_id in set(checkpoints))
        and tset.has(cs.checkpoint_id, role)
    ]
    if not selected:
        raise EmptyInputError("selection matches no checkpoint")
    labeled = []
    layer_values: set[float] = set()
    for cs in selected:
        traj = tset.trajectory(cs.checkpoint_id, role)
        pts = [(float(layer), value) for layer, value in traj.points]
        layer_values.update(x for x, _ in pts)
        labeled.append((f"{cs.tokens_b:g} B", pts))
    ticks = sorted(layer_values)
    return _render(
        labeled,
        [],
        style or ChartStyle(),
        title or f"{role.value} ({tset.metric}) by layer",
        "layer",
        tset.metric,
        x_tick_candidates=ticks if len(ticks) <= 8 else None,
    )


@dataclass
class ReportBundle:
    title: str
    charts: list[tuple[str, bytes]] = field(default_factory=list)      # (label, svg bytes)
    tables: list[tuple[str, list[str], list[list[str]]]] = field(default_factory=list)
    provenance: dict[str, str] = field(default_factory=dict)           # input name -> sha256

    def add_chart(self, label: str, svg: bytes) -> None:
        self.charts.append((label, svg))

    def add_table(self, label: str, header: list[str], rows: list[list[str]]) -> None:
        self.tables.append((label, header, rows))


def _slug(label: str) -> str:
    slug = re.sub(r"[^a-z0-9]+", "-", label.lower()).strip("-")
    return slug or "item"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_report_bundle(bundle: ReportBundle, out_dir: str | Path) -> dict:
    """Write index.json plus one .svg per chart and one .csv per table.

    File names derive from content labels; name collisions get a numeric
    suffix.  Returns the index manifest.  I/O failures surface as OSError.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[dict] = []
    taken: set[str] = set()

    def claim(label: str, ext: str) -> str:
        base = _slug(label)
        name = f"{base}{ext}"
        k = 2
        while name in taken:
            name = f"{base}-{k}{ext}"
            k += 1
        taken.add(name)
        return name

    for label, svg in bundle.charts:
        name = claim(label, ".svg")
        (out_dir / name).write_bytes(svg)
        files.append({"kind": "chart", "path": name, "sha256": sha256_bytes(svg)})
    for label, header, rows in bundle.tables:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        data = buf.getvalue().encode("utf-8")
        name = claim(label, ".csv")
        (out_dir / name).write_bytes(data)
        files.append({"kind": "table", "path": name, "sha256": sha256_bytes(data)})

    manifest = {"title": bundle.title, "files": files, "provenance": dict(bundle.provenance)}
    (out_dir / "index.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest
