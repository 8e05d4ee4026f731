"""Training metric series: ingestion, spike and plateau detection, stages.

Spike scoring is robust: each point is compared against the median of
the preceding window, scaled by 1.4826 times the median absolute
deviation (floored so constant windows stay scorable).  Only deviations
in the adverse direction count, so a sudden drop in loss is never a
"spike".  Plateau detection slides a token-width window and fits an
ordinary least-squares slope per anchor; runs of flat anchors merge into
maximal events.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    EmptySeriesError,
    MissingColumnError,
    ParseError,
    SpanTooShortError,
    UnsortedBoundariesError,
    WindowTooLargeError,
)

_DIRECTIONS = ("lower_better", "higher_better")

MAD_SCALE = 1.4826   # makes the MAD a consistent sigma estimate under normality


@dataclass
class MetricSeries:
    name: str
    points: list[tuple[float, float]]          # (tokens_b, value), tokens non-decreasing
    direction: str = "lower_better"

    def __post_init__(self) -> None:
        if self.direction not in _DIRECTIONS:
            raise ValueError(f"direction must be one of {_DIRECTIONS}")

    def tokens(self) -> np.ndarray:
        return np.asarray([t for t, _ in self.points], dtype=np.float64)

    def values(self) -> np.ndarray:
        return np.asarray([v for _, v in self.points], dtype=np.float64)


@dataclass(frozen=True)
class ColumnSchema:
    tokens: str = "tokens_b"
    value: str = "value"
    direction: str = "lower_better"


def _parse_pair(row: dict, schema: ColumnSchema, line_no: int) -> tuple[float, float]:
    for col in (schema.tokens, schema.value):
        if col not in row or row[col] is None or row[col] == "":
            raise MissingColumnError(f"line {line_no}: missing column {col!r}")
    try:
        t = float(row[schema.tokens])
        v = float(row[schema.value])
    except (TypeError, ValueError):
        raise ParseError(f"line {line_no}: cannot parse numeric pair from {row!r}") from None
    if not (math.isfinite(t) and math.isfinite(v)):
        raise ParseError(f"line {line_no}: non-finite value")
    return t, v


def ingest_series(path: str | Path, schema: ColumnSchema | None = None) -> MetricSeries:
    """Read a JSONL or CSV metric file into a sorted, deduplicated series.

    Format is chosen by extension (.jsonl/.json vs .csv), falling back to
    sniffing the first byte.  Rows are sorted by token count and exact
    duplicate (tokens, value) rows collapse to one.  Line numbers in
    errors are 1-based physical lines (the CSV header is line 1).
    """
    path = Path(path)
    schema = schema or ColumnSchema()
    text = path.read_text(encoding="utf-8")
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json"):
        is_jsonl = True
    elif suffix == ".csv":
        is_jsonl = False
    else:
        stripped = text.lstrip()
        is_jsonl = stripped.startswith("{")

    pairs: list[tuple[float, float]] = []
    if is_jsonl:
        for line_no, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError:
                raise ParseError(f"line {line_no}: invalid JSON") from None
            if not isinstance(row, dict):
                raise ParseError(f"line {line_no}: expected a JSON object")
            pairs.append(_parse_pair(row, schema, line_no))
    else:
        reader = csv.DictReader(text.splitlines())
        if reader.fieldnames is None:
            raise EmptySeriesError(f"{path}: no header row")
        for col in (schema.tokens, schema.value):
            if col not in reader.fieldnames:
                raise MissingColumnError(f"{path}: header lacks column {col!r}")
        for line_no, row in enumerate(reader, start=2):
            pairs.append(_parse_pair(row, schema, line_no))

    if not pairs:
        raise EmptySeriesError(f"{path}: no data rows")
    pairs.sort(key=lambda pv: pv[0])
    deduped: list[tuple[float, float]] = []
    for pair in pairs:
        if not deduped or pair != deduped[-1]:
            deduped.append(pair)
    return MetricSeries(name=schema.value, points=deduped, direction=schema.direction)


@dataclass(frozen=True)
class SpikeEvent:
    tokens_b: float
    value: float
    baseline: float     # rolling median the point was scored against
    score: float        # robust z-score in the adverse direction

    def to_dict(self) -> dict:
        return {
            "tokens_b": self.tokens_b,
            "value": self.value,
            "baseline": self.baseline,
            "score": self.score,
        }


def detect_spikes(
    series: MetricSeries,
    window: int = 50,
    threshold: float = 6.0,
    mad_floor: float = 1e-6,
) -> list[SpikeEvent]:
    """Flag points whose adverse deviation from the rolling median exceeds
    ``threshold`` robust sigmas.  The first ``window`` points have no full
    history and are never flagged."""
    if window < 5:
        raise ValueError("window must be >= 5")
    if threshold <= 0 or mad_floor <= 0:
        raise ValueError("threshold and mad_floor must be positive")
    n = len(series.points)
    if window >= n:
        raise WindowTooLargeError(f"window {window} >= series length {n}")
    sign = 1.0 if series.direction == "lower_better" else -1.0
    tokens = series.tokens()
    values = series.values()
    events: list[SpikeEvent] = []
    for i in range(window, n):
        prev = values[i - window : i]
        baseline = float(np.median(prev))
        mad = float(np.median(np.abs(prev - baseline)))
        scale = MAD_SCALE * max(mad, mad_floor)
        score = sign * (values[i] - baseline) / scale
        if score > threshold:
            events.append(
                SpikeEvent(
                    tokens_b=float(tokens[i]),
                    value=float(values[i]),
                    baseline=baseline,
                    score=score,
                )
            )
    return events


@dataclass(frozen=True)
class PlateauEvent:
    window_start_b: float
    window_end_b: float
    slope_per_b: float   # mean OLS slope of the member windows

    def to_dict(self) -> dict:
        return {
            "window_start_b": self.window_start_b,
            "window_end_b": self.window_end_b,
            "slope_per_b": self.slope_per_b,
        }


def _ols_slope(t: np.ndarray, v: np.ndarray) -> float | None:
    tm = t.mean()
    var = float(np.square(t - tm).sum())
    if var == 0.0:
        return None
    return float(((t - tm) * (v - v.mean())).sum() / var)


def detect_plateaus(
    series: MetricSeries, window_b: float, slope_eps: float
) -> list[PlateauEvent]:
    """Find maximal token spans where the windowed OLS slope stays within
    ``slope_eps`` in magnitude.

    A window is anchored at every point and covers points within
    ``window_b`` billion tokens; trailing windows are truncated at the
    end of the series.  Consecutive flat anchors merge into one event
    whose end is the last token its final window covers.
    """
    if window_b <= 0 or slope_eps <= 0:
        raise ValueError("window_b and slope_eps must be positive")
    tokens = series.tokens()
    values = series.values()
    n = len(tokens)
    if n < 2 or tokens[-1] - tokens[0] < window_b:
        raise SpanTooShortError(
            f"series spans {0.0 if n == 0 else tokens[-1] - tokens[0]:g} B, "
            f"needs at least {window_b:g} B"
        )
    flat: list[tuple[int, float, float]] = []   # (anchor index, slope, window end token)
    for i in range(n):
        j = int(np.searchsorted(tokens, tokens[i] + window_b, side="right"))
        if j - i < 2:
            continue
        slope = _ols_slope(tokens[i:j], values[i:j])
        if slope is not None and abs(slope) < slope_eps:
            flat.append((i, slope, float(tokens[j - 1])))
    events: list[PlateauEvent] = []
    run: list[tuple[int, float, float]] = []
    for entry in flat:
        if run and entry[0] != run[-1][0] + 1:
            events.append(_merge_run(tokens, run))
            run = []
        run.append(entry)
    if run:
        events.append(_merge_run(tokens, run))
    return events


def _merge_run(tokens: np.ndarray, run: list[tuple[int, float, float]]) -> PlateauEvent:
    return PlateauEvent(
        window_start_b=float(tokens[run[0][0]]),
        window_end_b=run[-1][2],
        slope_per_b=float(np.mean([slope for _, slope, _ in run])),
    )


@dataclass(frozen=True)
class StageBoundary:
    stage: str
    start_tokens_b: float


def load_boundaries(path: str | Path) -> list[StageBoundary]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: boundaries file must be a JSON list")
    return [StageBoundary(stage=str(b["stage"]), start_tokens_b=float(b["start_tokens_b"])) for b in data]


@dataclass
class StageSummary:
    count: int
    mean: float
    min: float
    last: float

    def to_dict(self) -> dict:
        return {"count": self.count, "mean": self.mean, "min": self.min, "last": self.last}


@dataclass
class AnnotatedSeries:
    name: str
    direction: str
    points: list[tuple[float, float, str]]      # (tokens_b, value, stage)
    summaries: dict[str, StageSummary]          # insertion order = boundary order


def annotate_stages(
    series: MetricSeries, boundaries: list[StageBoundary]
) -> AnnotatedSeries:
    """Attach a stage label to every point; stage intervals are half-open
    [start, next start).  Boundaries must rise strictly from zero so the
    stages partition the token axis."""
    if not boundaries:
        raise UnsortedBoundariesError("need at least one stage boundary")
    starts = [b.start_tokens_b for b in boundaries]
    if starts[0] != 0.0:
        raise UnsortedBoundariesError("first stage must start at 0 tokens")
    if any(b <= a for a, b in zip(starts, starts[1:])):
        raise UnsortedBoundariesError("stage starts must be strictly increasing")
    labeled: list[tuple[float, float, str]] = []
    grouped: dict[str, list[float]] = {}
    for t, v in series.points:
        idx = bisect.bisect_right(starts, t) - 1
        stage = boundaries[idx].stage
        labeled.append((t, v, stage))
        grouped.setdefault(stage, []).append(v)
    summaries = {
        b.stage: StageSummary(
            count=len(vals), mean=float(np.mean(vals)), min=float(np.min(vals)), last=vals[-1]
        )
        for b in boundaries
        if (vals := grouped.get(b.stage))
    }
    return AnnotatedSeries(
        name=series.name, direction=series.direction, points=labeled, summaries=summaries
    )


def events_to_json(spikes: list[SpikeEvent], plateaus: list[PlateauEvent]) -> dict:
    return {
        "spikes": [e.to_dict() for e in spikes],
        "plateaus": [e.to_dict() for e in plateaus],
    }


def events_to_csv(spikes: list[SpikeEvent], plateaus: list[PlateauEvent]) -> str:
    """One flat CSV; the kind column separates spike and plateau rows."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kind", "start_b", "end_b", "value", "baseline", "score_or_slope"])
    for e in spikes:
        writer.writerow(
            ["spike", format(e.tokens_b, ".12g"), format(e.tokens_b, ".12g"),
             format(e.value, ".12g"), format(e.baseline, ".12g"), format(e.score, ".12g")]
        )
    for e in plateaus:
        writer.writerow(
            ["plateau", format(e.window_start_b, ".12g"), format(e.window_end_b, ".12g"),
             "", "", format(e.slope_per_b, ".12g")]
        )
    return buf.getvalue()
