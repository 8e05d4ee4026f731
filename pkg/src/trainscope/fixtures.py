"""Synthetic runs with known ground truth, for tests and demos.

Two generator families:

* :func:`gen_converging_run` writes a directory of checkpoint containers
  whose per-layer weight stds follow a geometric approach to a limit, so
  trajectory distances are known to shrink checkpoint over checkpoint.
* :func:`gen_loss_curve` writes a metric series file plus a truth sidecar
  naming the injected spikes or the flat span, so detector output can be
  scored against ground truth.

Everything is driven by explicit seeds; byte-identical outputs for
identical specs are part of the contract.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import MONITORED_ROLES, Dtype, Role
from .errors import BadSpecError

#: Tensor name emitted for each role, per-projection naming.
ROLE_TENSOR_NAMES: dict[Role, str] = {
    Role.ATTN_Q: "model.layers.{layer}.self_attn.q_proj.weight",
    Role.ATTN_K: "model.layers.{layer}.self_attn.k_proj.weight",
    Role.ATTN_V: "model.layers.{layer}.self_attn.v_proj.weight",
    Role.ATTN_O: "model.layers.{layer}.self_attn.o_proj.weight",
    Role.MLP_GATE: "model.layers.{layer}.mlp.gate_proj.weight",
    Role.MLP_UP: "model.layers.{layer}.mlp.up_proj.weight",
    Role.MLP_DOWN: "model.layers.{layer}.mlp.down_proj.weight",
    Role.NORM_INPUT: "model.layers.{layer}.input_layernorm.weight",
    Role.NORM_POST: "model.layers.{layer}.post_attention_layernorm.weight",
}

_ARRAY_DTYPES = {Dtype.F64: "<f8", Dtype.F32: "<f4", Dtype.F16: "<f2"}


def write_container(
    path: str | Path,
    tensors: list[tuple[str, object]],
    metadata: dict[str, str] | None = None,
) -> Path:
    """Write tensors to a container file in the given order.

    Each entry is ``(name, payload)`` where payload is either a numpy
    array (dtype F64/F32/F16 inferred from the array) or an explicit
    ``(dtype, shape, raw_bytes)`` triple; the triple form is the only way
    to write BF16 payloads.
    """
    path = Path(path)
    header: dict[str, object] = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    blobs: list[bytes] = []
    offset = 0
    for name, payload in tensors:
        if isinstance(payload, np.ndarray):
            kind = {8: Dtype.F64, 4: Dtype.F32, 2: Dtype.F16}.get(payload.dtype.itemsize)
            if kind is None or payload.dtype.kind != "f":
                raise ValueError(f"{name}: unsupported array dtype {payload.dtype}")
            shape = payload.shape
            data = np.ascontiguousarray(payload, dtype=_ARRAY_DTYPES[kind]).tobytes()
        else:
            kind, shape, data = payload
            kind = Dtype(kind)
            shape = tuple(int(d) for d in shape)
            if len(data) != math.prod(shape) * kind.width:
                raise ValueError(f"{name}: raw payload length does not match shape")
        if name in header:
            raise ValueError(f"duplicate tensor name {name!r}")
        header[name] = {
            "dtype": kind.value,
            "shape": list(shape),
            "data_offsets": [offset, offset + len(data)],
        }
        blobs.append(data)
        offset += len(data)
    raw = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with path.open("wb") as fh:
        fh.write(struct.pack("<Q", len(raw)))
        fh.write(raw)
        for blob in blobs:
            fh.write(blob)
    return path


@dataclass
class RunSpec:
    """Geometry and schedule of a synthetic converging run.

    Per layer k, checkpoint i stores tensors with population std exactly
    ``std_limit[k] + (std_start[k] - std_limit[k]) * contraction**i`` (to
    float64 round-off).  The first role (attn_q) carries that target
    itself; each later role scales it by ``1 + 0.06 * role_index`` so
    the nine trajectories stay distinct on a chart while converging at
    the same geometric rate.
    """

    layers: int = 4
    tokens_schedule_b: tuple[float, ...] = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0)
    std_start: tuple[float, ...] = ()
    std_limit: tuple[float, ...] = ()
    contraction: float = 0.5
    tensor_elems: int = 4096
    seed: int = 7
    dtype: Dtype = Dtype.F64
    stages: tuple[str, ...] = ()
    include_extras: bool = True   # unmapped embedding/head tensors

    def __post_init__(self) -> None:
        if not self.std_start:
            self.std_start = tuple(0.06 + 0.004 * k for k in range(self.layers))
        if not self.std_limit:
            self.std_limit = tuple(0.02 + 0.002 * k for k in range(self.layers))
        if not self.stages:
            self.stages = tuple("K6" for _ in self.tokens_schedule_b)

    def validate(self) -> None:
        if self.layers < 1:
            raise BadSpecError("layers must be >= 1")
        if not self.tokens_schedule_b:
            raise BadSpecError("tokens_schedule_b must name at least one checkpoint")
        if any(b <= a for a, b in zip(self.tokens_schedule_b, self.tokens_schedule_b[1:])):
            raise BadSpecError("tokens_schedule_b must be strictly increasing")
        if not 0.0 < self.contraction < 1.0:
            raise BadSpecError("contraction must lie in (0, 1)")
        if len(self.std_start) != self.layers or len(self.std_limit) != self.layers:
            raise BadSpecError("std_start/std_limit must list one value per layer")
        if any(v <= 0 for v in self.std_start) or any(v <= 0 for v in self.std_limit):
            raise BadSpecError("std targets must be positive")
        if self.tensor_elems < 2:
            raise BadSpecError("tensor_elems must be >= 2 to carry a nonzero std")
        if len(self.stages) != len(self.tokens_schedule_b):
            raise BadSpecError("stages must label every checkpoint")
        if Dtype(self.dtype) not in (Dtype.F64, Dtype.F32):
            raise BadSpecError("generated runs store F64 or F32 tensors")

    @classmethod
    def from_dict(cls, data: dict) -> "RunSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise BadSpecError(f"unknown RunSpec fields: {sorted(unknown)}")
        data = dict(data)
        for key in ("tokens_schedule_b", "std_start", "std_limit", "stages"):
            if key in data:
                data[key] = tuple(data[key])
        if "dtype" in data:
            data["dtype"] = Dtype(data["dtype"])
        return cls(**data)


def _unit_std_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    """Zero-mean sample with population std exactly 1 (to round-off)."""
    x = rng.standard_normal(n)
    x -= x.mean()
    s = math.sqrt(float(np.mean(np.square(x))))
    if s == 0.0:
        raise BadSpecError("degenerate base sample; choose a different seed")
    return x / s


def gen_converging_run(spec: RunSpec, out_dir: str | Path) -> list[tuple[Path, Path]]:
    """Write one container + metadata sidecar per checkpoint.

    Returns (container_path, sidecar_path) pairs in checkpoint order.
    The base sample per (layer, role) is fixed across checkpoints; only
    its scale changes, so curve shapes evolve smoothly.
    """
    spec.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    bases: dict[tuple[int, int], np.ndarray] = {}
    for layer in range(spec.layers):
        for ri, _role in enumerate(MONITORED_ROLES):
            rng = np.random.default_rng([spec.seed, layer, ri])
            bases[(layer, ri)] = _unit_std_sample(rng, spec.tensor_elems)
    extra_rng = np.random.default_rng([spec.seed, 10_000])
    embed = _unit_std_sample(extra_rng, spec.tensor_elems) * 0.02
    head = _unit_std_sample(extra_rng, spec.tensor_elems) * 0.02

    side = max(2, int(math.isqrt(spec.tensor_elems)))
    shape = (side, spec.tensor_elems // side) if spec.tensor_elems % side == 0 else (spec.tensor_elems,)

    array_dtype = _ARRAY_DTYPES[Dtype(spec.dtype)]
    paths: list[tuple[Path, Path]] = []
    for i, tokens_b in enumerate(spec.tokens_schedule_b):
        ckpt_id = f"ckpt{i:03d}"
        tensors: list[tuple[str, object]] = [
            ("model.embed_tokens.weight", embed.astype(array_dtype))
            ] if spec.include_extras else []
        for layer in range(spec.layers):
            for ri, role in enumerate(MONITORED_ROLES):
                sigma = expected_role_std(spec, layer, ri, i)
                name = ROLE_TENSOR_NAMES[role].format(layer=layer)
                values = (bases[(layer, ri)] * sigma).reshape(shape).astype(array_dtype)
                tensors.append((name, values))
        if spec.include_extras:
            tensors.append(("lm_head.weight", head.astype(array_dtype)))
        container = out_dir / f"{ckpt_id}.safetensors"
        write_container(container, tensors, metadata={"checkpoint_id": ckpt_id})
        sidecar = out_dir / f"{ckpt_id}.meta.json"
        meta = {"checkpoint_id": ckpt_id, "tokens_b": tokens_b, "stage": spec.stages[i]}
        sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        paths.append((container, sidecar))
    return paths


#: Per-role multiplier step on the layer std target; role 0 is unscaled.
ROLE_STD_STEP = 0.06


def expected_std(spec: RunSpec, layer: int, checkpoint: int) -> float:
    """The generator's exact std target for one layer at one checkpoint."""
    return (
        spec.std_limit[layer]
        + (spec.std_start[layer] - spec.std_limit[layer]) * spec.contraction**checkpoint
    )


def expected_role_std(spec: RunSpec, layer: int, role_index: int, checkpoint: int) -> float:
    """Layer target scaled by the role separation factor."""
    return expected_std(spec, layer, checkpoint) * (1.0 + ROLE_STD_STEP * role_index)


# -- loss curves --------------------------------------------------------------

_CURVE_DEFAULTS: dict[str, dict] = {
    "smooth_decay": {
        "n_points": 500, "t_end_b": 100.0, "start": 4.0, "end": 2.0,
    },
    # gentle carrier decay: the early spike must clear the rolling-median
    # baseline even where the trend contributes most of the window MAD
    "with_spikes": {
        "n_points": 500, "t_end_b": 100.0, "start": 2.3, "end": 2.0,
        "noise_sigma": 0.01, "positions": (120, 340), "spike_sigma_mult": 30.0,
    },
    "plateau_then_drop": {
        "n_points": 500, "t_end_b": 100.0, "start": 4.0,
        "t1_b": 40.0, "t2_b": 70.0, "slope1": -0.02, "slope3": -0.08,
    },
}


@dataclass
class CurveTruth:
    """What the generator actually injected, for scoring detectors."""

    kind: str
    spikes: list[dict] = field(default_factory=list)
    plateaus: list[dict] = field(default_factory=list)


def gen_loss_curve(
    kind: str,
    out_path: str | Path,
    *,
    params: dict | None = None,
    seed: int = 0,
    sidecar_path: str | Path | None = None,
) -> tuple[Path, Path]:
    """Write a JSONL metric series plus a truth sidecar.

    Kinds: ``smooth_decay`` (noise-free exponential, zero events),
    ``with_spikes`` (exponential + Gaussian noise + isolated upward
    spikes at the given indices), ``plateau_then_drop`` (noise-free
    piecewise-linear decline, flat span, steeper decline).
    """
    if kind not in _CURVE_DEFAULTS:
        raise BadSpecError(f"unknown curve kind {kind!r}")
    cfg = dict(_CURVE_DEFAULTS[kind])
    extra = set(params or ()) - set(cfg)
    if extra:
        raise BadSpecError(f"unknown {kind} params: {sorted(extra)}")
    cfg.update(params or {})

    n = int(cfg["n_points"])
    if n < 2:
        raise BadSpecError("n_points must be >= 2")
    t = np.linspace(0.0, float(cfg["t_end_b"]), n)
    truth = CurveTruth(kind=kind)

    if kind in ("smooth_decay", "with_spikes"):
        start, end = float(cfg["start"]), float(cfg["end"])
        values = end + (start - end) * np.exp(-3.0 * t / t[-1])
        if kind == "with_spikes":
            sigma = float(cfg["noise_sigma"])
            if sigma <= 0:
                raise BadSpecError("noise_sigma must be positive")
            rng = np.random.default_rng(seed)
            values = values + rng.normal(0.0, sigma, n)
            amp = float(cfg["spike_sigma_mult"]) * sigma
            for pos in cfg["positions"]:
                pos = int(pos)
                if not 0 <= pos < n:
                    raise BadSpecError(f"spike position {pos} outside the series")
                values[pos] += amp
                truth.spikes.append({"index": pos, "tokens_b": float(t[pos])})
    else:
        start = float(cfg["start"])
        t1, t2 = float(cfg["t1_b"]), float(cfg["t2_b"])
        s1, s3 = float(cfg["slope1"]), float(cfg["slope3"])
        if not 0.0 < t1 < t2 < float(cfg["t_end_b"]):
            raise BadSpecError("need 0 < t1_b < t2_b < t_end_b")
        if s1 >= 0 or s3 >= 0:
            raise BadSpecError("decline slopes must be negative")
        v1 = start + s1 * t1
        values = np.where(
            t <= t1, start + s1 * t, np.where(t <= t2, v1, v1 + s3 * (t - t2))
        )
        truth.plateaus.append({"start_b": t1, "end_b": t2})

    out_path = Path(out_path)
    with out_path.open("w", encoding="utf-8") as fh:
        for ti, vi in zip(t, values):
            fh.write(json.dumps({"tokens_b": float(ti), "value": float(vi)}) + "\n")
    if sidecar_path is None:
        sidecar_path = out_path.with_suffix(".truth.json")
    sidecar_path = Path(sidecar_path)
    doc = {
        "kind": kind, "seed": seed, "params": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
        "spikes": truth.spikes, "plateaus": truth.plateaus,
    }
    sidecar_path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return out_path, sidecar_path
