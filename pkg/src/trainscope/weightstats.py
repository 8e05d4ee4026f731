"""Per-tensor statistics and per-role value-vs-layer curves for checkpoints.

Statistics are accumulated in float64 in a single pass over fixed-size
chunks in storage order, merging partial moments with Chan's update, so
results are deterministic for identical container bytes and stable under
large means.  ``std`` is the population standard deviation (the mean is
subtracted); ``rms`` is the root of the raw second moment, so
``rms**2 == std**2 + mean**2`` holds by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import (
    MONITORED_ROLES,
    ROLE_ORDER,
    ContainerIndex,
    MappingConfig,
    Role,
    map_parameter,
    read_tensor_values,
)
from .errors import (
    DuplicateTokenCountError,
    EmptyTensorError,
    GridMismatchError,
    MissingRoleError,
)

_CHUNK = 1 << 16

METRICS = ("std", "rms")


@dataclass(frozen=True)
class Stats:
    count: int
    mean: float
    std: float
    rms: float
    min: float
    max: float


def tensor_stats(values) -> Stats:
    """Single-pass statistics over a tensor's values in storage order."""
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptyTensorError("cannot compute statistics of an empty tensor")
    count = 0
    mean = 0.0
    m2 = 0.0
    lo = math.inf
    hi = -math.inf
    for start in range(0, arr.size, _CHUNK):
        chunk = arr[start : start + _CHUNK]
        n = chunk.size
        chunk_mean = float(chunk.mean())
        chunk_m2 = float(np.square(chunk - chunk_mean).sum())
        delta = chunk_mean - mean
        total = count + n
        mean += delta * (n / total)
        m2 += chunk_m2 + delta * delta * (count * (n / total))
        count = total
        lo = min(lo, float(chunk.min()))
        hi = max(hi, float(chunk.max()))
    var = max(m2 / count, 0.0)
    return Stats(
        count=count,
        mean=mean,
        std=math.sqrt(var),
        rms=math.sqrt(var + mean * mean),
        min=lo,
        max=hi,
    )


@dataclass
class CheckpointStats:
    """All per-(layer, role) statistics of one checkpoint."""

    checkpoint_id: str
    tokens_b: float
    stage: str
    per_layer: dict[tuple[int, Role], Stats]
    warnings: list[str] = field(default_factory=list)

    def layers(self) -> list[int]:
        return sorted({layer for layer, _ in self.per_layer})

    def to_dict(self) -> dict:
        order = {role: i for i, role in enumerate(ROLE_ORDER)}
        entries = [
            {
                "layer": layer,
                "role": role.value,
                "count": st.count,
                "mean": st.mean,
                "std": st.std,
                "rms": st.rms,
                "min": st.min,
                "max": st.max,
            }
            for (layer, role), st in sorted(
                self.per_layer.items(), key=lambda kv: (kv[0][0], order[kv[0][1]])
            )
        ]
        return {
            "checkpoint_id": self.checkpoint_id,
            "tokens_b": self.tokens_b,
            "stage": self.stage,
            "entries": entries,
            "warnings": list(self.warnings),
        }


def load_checkpoint_meta(path: str | Path) -> dict:
    """Read a checkpoint sidecar: checkpoint_id, tokens_b, optional stage."""
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "checkpoint_id" not in data or "tokens_b" not in data:
        raise ValueError(f"{path}: sidecar needs checkpoint_id and tokens_b")
    tokens_b = float(data["tokens_b"])
    if not math.isfinite(tokens_b) or tokens_b < 0:
        raise ValueError(f"{path}: tokens_b must be a finite non-negative number")
    return {
        "checkpoint_id": str(data["checkpoint_id"]),
        "tokens_b": tokens_b,
        "stage": str(data.get("stage", "")),
    }


def _reachable_monitored(cfg: MappingConfig) -> tuple[Role, ...]:
    """Monitored roles this config can actually produce."""
    produced = {rule.role for rule in cfg.rules}
    if Role.QKV_FUSED in produced and cfg.fused_split is not None:
        produced |= {Role.ATTN_Q, Role.ATTN_K, Role.ATTN_V}
    return tuple(role for role in MONITORED_ROLES if role in produced)


def checkpoint_stats(
    index: ContainerIndex,
    cfg: MappingConfig,
    *,
    checkpoint_id: str,
    tokens_b: float,
    stage: str = "",
) -> CheckpointStats:
    """Statistics for every mapped tensor of one checkpoint.

    Tensors are visited in container order.  Unmapped names are skipped
    (strict mode raises inside map_parameter instead).  In lenient mode a
    missing monitored role becomes a warning; strict mode raises
    :class:`MissingRoleError` and also requires layers 0..N-1 with no gap.
    """
    per_layer: dict[tuple[int, Role], Stats] = {}
    warnings: list[str] = []

    def add(layer: int, role: Role, name: str, values: np.ndarray) -> None:
        key = (layer, role)
        if key in per_layer:
            warnings.append(
                f"{name}: duplicate mapping for layer {layer} role {role.value}, keeping first"
            )
            return
        per_layer[key] = tensor_stats(values)

    for rec in index.tensors:
        mapped = map_parameter(rec.name, cfg)
        if mapped is None:
            continue
        layer, role = mapped
        values = read_tensor_values(index, rec.name, strict_nan=cfg.strict)
        dropped = rec.element_count - values.size
        if dropped:
            warnings.append(f"{rec.name}: dropped {dropped} non-finite value(s)")
        if values.size == 0:
            warnings.append(f"{rec.name}: no finite values, skipped")
            continue
        if role is Role.QKV_FUSED and cfg.fused_split is not None:
            if dropped or len(rec.shape) < 2:
                warnings.append(f"{rec.name}: cannot split fused projection, keeping fused")
                add(layer, role, rec.name, values)
                continue
            q_rows, k_rows, v_rows = cfg.fused_split
            if q_rows + k_rows + v_rows != rec.shape[0]:
                warnings.append(
                    f"{rec.name}: fused_split rows {q_rows}+{k_rows}+{v_rows} != {rec.shape[0]}, keeping fused"
                )
                add(layer, role, rec.name, values)
                continue
            grid = values.reshape(rec.shape)
            add(layer, Role.ATTN_Q, rec.name, grid[:q_rows].reshape(-1))
            add(layer, Role.ATTN_K, rec.name, grid[q_rows : q_rows + k_rows].reshape(-1))
            add(layer, Role.ATTN_V, rec.name, grid[q_rows + k_rows :].reshape(-1))
        else:
            add(layer, role, rec.name, values)

    expected_roles = _reachable_monitored(cfg)
    layers = sorted({layer for layer, _ in per_layer if layer >= 0})
    if cfg.strict and layers:
        layers = list(range(0, max(layers) + 1))
    for layer in layers:
        for role in expected_roles:
            if (layer, role) not in per_layer:
                if cfg.strict:
                    raise MissingRoleError(
                        f"{index.path}: layer {layer} lacks role {role.value}"
                    )
                warnings.append(f"layer {layer}: missing role {role.value}")

    return CheckpointStats(
        checkpoint_id=checkpoint_id,
        tokens_b=tokens_b,
        stage=stage,
        per_layer=per_layer,
        warnings=warnings,
    )


@dataclass(frozen=True)
class Trajectory:
    """One checkpoint's metric-vs-layer curve for one role."""

    checkpoint_id: str
    role: Role
    points: tuple[tuple[int, float], ...]   # (layer, value), layer ascending


@dataclass
class TrajectorySet:
    """Trajectories of one run, checkpoints ordered by tokens_b."""

    checkpoints: list[CheckpointStats]
    trajectories: dict[tuple[str, Role], Trajectory]
    metric: str

    def roles(self) -> tuple[Role, ...]:
        present = {role for _, role in self.trajectories}
        return tuple(role for role in ROLE_ORDER if role in present)

    def trajectory(self, checkpoint_id: str, role: Role) -> Trajectory:
        return self.trajectories[(checkpoint_id, role)]

    def has(self, checkpoint_id: str, role: Role) -> bool:
        return (checkpoint_id, role) in self.trajectories


def build_trajectory_set(
    stats_list: list[CheckpointStats],
    metric: str = "std",
    *,
    roles: tuple[Role, ...] | None = None,
    strict: bool = False,
) -> TrajectorySet:
    """Order checkpoints by tokens_b and extract per-role layer curves.

    Checkpoints with equal token counts are rejected.  In strict mode all
    checkpoints must expose the identical (layer, role) grid.
    """
    if not stats_list:
        raise ValueError("need at least one checkpoint")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    ordered = sorted(stats_list, key=lambda cs: cs.tokens_b)
    for a, b in zip(ordered, ordered[1:]):
        if a.tokens_b == b.tokens_b:
            raise DuplicateTokenCountError(
                f"checkpoints {a.checkpoint_id!r} and {b.checkpoint_id!r} "
                f"both report tokens_b={a.tokens_b}"
            )
    if strict:
        grid = set(ordered[0].per_layer)
        for cs in ordered[1:]:
            if set(cs.per_layer) != grid:
                raise GridMismatchError(
                    f"checkpoint {cs.checkpoint_id!r} grid differs from "
                    f"{ordered[0].checkpoint_id!r}"
                )
    if roles is None:
        present = {role for cs in ordered for _, role in cs.per_layer}
        roles = tuple(role for role in MONITORED_ROLES if role in present)
    trajectories: dict[tuple[str, Role], Trajectory] = {}
    for cs in ordered:
        for role in roles:
            points = tuple(
                sorted(
                    (layer, getattr(st, metric))
                    for (layer, r), st in cs.per_layer.items()
                    if r == role
                )
            )
            if points:
                trajectories[(cs.checkpoint_id, role)] = Trajectory(
                    cs.checkpoint_id, role, points
                )
    return TrajectorySet(checkpoints=ordered, trajectories=trajectories, metric=metric)
