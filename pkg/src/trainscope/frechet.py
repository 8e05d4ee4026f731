"""Discrete Frechet distances between checkpoint layer curves.

The discrete Frechet distance of curves P and Q is the minimum over all
monotone couplings of the maximum pointwise distance, computed by the
standard dynamic program

    c(i, j) = max(d(P_i, Q_j), min(c(i-1, j), c(i-1, j-1), c(i, j-1)))

evaluated with a rolling row.  Two pointwise metrics are supported:
``value_only`` compares metric values alone (the default reading of
curves that share a layer axis), and ``planar`` embeds points as
(layer_axis_scale * layer, value) in the plane.

Distances between consecutive checkpoints are normalized by the token
gap in billions, making runs with different checkpoint cadences
comparable.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .container import Role
from .errors import (
    EmptyCurveError,
    IndexOutOfRangeError,
    NonMonotonicTokensError,
    TooFewCheckpointsError,
)
from .weightstats import Trajectory, TrajectorySet

_MODES = ("value_only", "planar")


@dataclass(frozen=True)
class FrechetMode:
    mode: str = "value_only"
    layer_axis_scale: float = 1.0   # planar only

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}")
        if not self.layer_axis_scale >= 0.0:
            raise ValueError("layer_axis_scale must be >= 0")


VALUE_ONLY = FrechetMode()


def _as_curve(obj) -> tuple[np.ndarray, np.ndarray]:
    """Normalize input to (layers, values) float64 arrays.

    Accepts a Trajectory, a 1-D value sequence (layer axis = position),
    or an (n, 2) array of (layer, value) rows.
    """
    if isinstance(obj, Trajectory):
        if not obj.points:
            raise EmptyCurveError(f"trajectory {obj.checkpoint_id}/{obj.role.value} is empty")
        pts = np.asarray(obj.points, dtype=np.float64)
        return pts[:, 0], pts[:, 1]
    arr = np.asarray(obj, dtype=np.float64)
    if arr.size == 0:
        raise EmptyCurveError("cannot measure an empty curve")
    if arr.ndim == 1:
        return np.arange(arr.size, dtype=np.float64), arr
    if arr.ndim == 2 and arr.shape[1] == 2:
        return arr[:, 0], arr[:, 1]
    raise ValueError("curve must be 1-D values or an (n, 2) array of (layer, value)")


def discrete_frechet(p, q, mode: FrechetMode = VALUE_ONLY) -> float:
    lp, vp = _as_curve(p)
    lq, vq = _as_curve(q)
    if mode.mode == "value_only":
        cost = np.abs(vp[:, None] - vq[None, :])
    else:
        cost = np.hypot(
            mode.layer_axis_scale * (lp[:, None] - lq[None, :]),
            vp[:, None] - vq[None, :],
        )
    rows = cost.tolist()
    prev: list[float] = []
    for i, row in enumerate(rows):
        cur = [0.0] * len(row)
        for j, d in enumerate(row):
            if i == 0 and j == 0:
                reach = d
            elif i == 0:
                reach = max(cur[j - 1], d)
            elif j == 0:
                reach = max(prev[0], d)
            else:
                reach = max(min(prev[j], prev[j - 1], cur[j - 1]), d)
            cur[j] = reach
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class DistancePoint:
    """Frechet distance between one consecutive checkpoint pair."""

    role: Role
    from_id: str
    to_id: str
    from_tokens_b: float
    to_tokens_b: float
    raw: float
    normalized: float    # raw / token gap, per billion tokens
    stage: str           # stage of the destination checkpoint

    @property
    def token_gap_b(self) -> float:
        return self.to_tokens_b - self.from_tokens_b

    @property
    def midpoint_b(self) -> float:
        return (self.from_tokens_b + self.to_tokens_b) / 2.0


def normalized_distance(
    tset: TrajectorySet, role: Role, i: int, mode: FrechetMode = VALUE_ONLY
) -> DistancePoint:
    """Distance between checkpoints i and i+1 for one role."""
    ckpts = tset.checkpoints
    if not 0 <= i < len(ckpts) - 1:
        raise IndexOutOfRangeError(
            f"pair index {i} outside run of {len(ckpts)} checkpoints"
        )
    a, b = ckpts[i], ckpts[i + 1]
    gap = b.tokens_b - a.tokens_b
    if gap <= 0:
        raise NonMonotonicTokensError(
            f"tokens_b does not increase from {a.checkpoint_id!r} to {b.checkpoint_id!r}"
        )
    raw = discrete_frechet(
        tset.trajectory(a.checkpoint_id, role), tset.trajectory(b.checkpoint_id, role), mode
    )
    return DistancePoint(
        role=role,
        from_id=a.checkpoint_id,
        to_id=b.checkpoint_id,
        from_tokens_b=a.tokens_b,
        to_tokens_b=b.tokens_b,
        raw=raw,
        normalized=raw / gap,
        stage=b.stage,
    )


@dataclass
class DistanceSeries:
    role: Role
    points: list[DistancePoint]


def distance_series(
    tset: TrajectorySet, mode: FrechetMode = VALUE_ONLY
) -> list[DistanceSeries]:
    """Per-role series of normalized distances over consecutive pairs.

    Pairs where either checkpoint lacks the role's trajectory are
    skipped; a full grid yields exactly M-1 points per role.
    """
    if len(tset.checkpoints) < 2:
        raise TooFewCheckpointsError("distance series needs at least two checkpoints")
    out: list[DistanceSeries] = []
    for role in tset.roles():
        points = [
            normalized_distance(tset, role, i, mode)
            for i, (a, b) in enumerate(zip(tset.checkpoints, tset.checkpoints[1:]))
            if tset.has(a.checkpoint_id, role) and tset.has(b.checkpoint_id, role)
        ]
        out.append(DistanceSeries(role=role, points=points))
    return out


@dataclass
class ConvergenceSummary:
    """Per-role verdicts plus stage-mean normalized distances."""

    epsilon: float
    window: int
    verdicts: dict[str, str]                    # role value -> converged|active|insufficient data
    stage_means: dict[str, float]               # across all roles
    role_stage_means: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "window": self.window,
            "verdicts": dict(self.verdicts),
            "stage_means": dict(self.stage_means),
            "role_stage_means": {r: dict(m) for r, m in self.role_stage_means.items()},
        }


def convergence_summary(
    series_list: list[DistanceSeries], epsilon: float, window: int
) -> ConvergenceSummary:
    """Verdict per role: converged when the last ``window`` normalized
    distances all sit below ``epsilon``; roles with fewer points than the
    window report "insufficient data"."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if window < 1:
        raise ValueError("window must be >= 1")
    verdicts: dict[str, str] = {}
    totals: dict[str, list[float]] = {}
    per_role: dict[str, dict[str, list[float]]] = {}
    for series in series_list:
        role = series.role.value
        values = [pt.normalized for pt in series.points]
        if len(values) < window:
            verdicts[role] = "insufficient data"
        elif all(v < epsilon for v in values[-window:]):
            verdicts[role] = "converged"
        else:
            verdicts[role] = "active"
        for pt in series.points:
            totals.setdefault(pt.stage, []).append(pt.normalized)
            per_role.setdefault(role, {}).setdefault(pt.stage, []).append(pt.normalized)
    return ConvergenceSummary(
        epsilon=epsilon,
        window=window,
        verdicts=verdicts,
        stage_means={s: float(np.mean(v)) for s, v in totals.items()},
        role_stage_means={
            r: {s: float(np.mean(v)) for s, v in stages.items()}
            for r, stages in per_role.items()
        },
    )


def series_to_csv(series_list: list[DistanceSeries]) -> str:
    """CSV serialization: role, from_tokens_b, to_tokens_b, raw, normalized."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["role", "from_tokens_b", "to_tokens_b", "raw", "normalized"])
    for series in series_list:
        for pt in series.points:
            writer.writerow(
                [
                    pt.role.value,
                    format(pt.from_tokens_b, ".12g"),
                    format(pt.to_tokens_b, ".12g"),
                    format(pt.raw, ".12g"),
                    format(pt.normalized, ".12g"),
                ]
            )
    return buf.getvalue()


def series_to_dict(series_list: list[DistanceSeries]) -> dict:
    return {
        series.role.value: [
            {
                "from_id": pt.from_id,
                "to_id": pt.to_id,
                "from_tokens_b": pt.from_tokens_b,
                "to_tokens_b": pt.to_tokens_b,
                "midpoint_b": pt.midpoint_b,
                "raw": pt.raw,
                "normalized": pt.normalized,
                "stage": pt.stage,
            }
            for pt in series.points
        ]
        for series in series_list
    }
