"""Reading checkpoint tensor containers and mapping tensor names to roles.

The on-disk layout is the de-facto open-weights container: an unsigned
64-bit little-endian header length, a UTF-8 JSON header mapping tensor
names to ``{"dtype", "shape", "data_offsets"}`` entries (plus an optional
``"__metadata__"`` table of strings), then the raw little-endian tensor
bytes.  ``data_offsets`` are ``[begin, end)`` relative to the start of the
data region, which begins immediately after the header.

Opening a container parses and validates the header only; tensor bytes
are read lazily per tensor.
"""

from __future__ import annotations

import json
import math
import re
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    MalformedHeaderError,
    NameNotFoundError,
    NaNPolicyError,
    OverlappingRangesError,
    StrictUnmappedError,
    TruncatedDataError,
    UnknownDtypeError,
)


class Dtype(str, Enum):
    F64 = "F64"
    F32 = "F32"
    F16 = "F16"
    BF16 = "BF16"

    @property
    def width(self) -> int:
        """Bytes per element."""
        return _WIDTHS[self]


_WIDTHS = {Dtype.F64: 8, Dtype.F32: 4, Dtype.F16: 2, Dtype.BF16: 2}


class Role(str, Enum):
    """Parameter roles tracked per transformer layer."""

    ATTN_Q = "attn_q"
    ATTN_K = "attn_k"
    ATTN_V = "attn_v"
    ATTN_O = "attn_o"
    MLP_GATE = "mlp_gate"
    MLP_UP = "mlp_up"
    MLP_DOWN = "mlp_down"
    NORM_INPUT = "norm_input"
    NORM_POST = "norm_post"
    QKV_FUSED = "qkv_fused"
    OTHER = "other"


#: The nine per-layer weights monitored by default.  qkv_fused is tracked
#: but excluded here; it only feeds these roles through a declared split.
MONITORED_ROLES: tuple[Role, ...] = (
    Role.ATTN_Q,
    Role.ATTN_K,
    Role.ATTN_V,
    Role.ATTN_O,
    Role.MLP_GATE,
    Role.MLP_UP,
    Role.MLP_DOWN,
    Role.NORM_INPUT,
    Role.NORM_POST,
)

ROLE_ORDER: tuple[Role, ...] = MONITORED_ROLES + (Role.QKV_FUSED, Role.OTHER)

#: Roles whose mapping rule must capture a layer index.
_LAYER_SCOPED = frozenset(ROLE_ORDER) - {Role.OTHER}


@dataclass(frozen=True)
class TensorRecord:
    name: str
    dtype: Dtype
    shape: tuple[int, ...]
    offset: int          # begin, relative to the data region
    nbytes: int

    @property
    def element_count(self) -> int:
        return math.prod(self.shape)


@dataclass
class ContainerIndex:
    """Parsed container header: ordered records plus verbatim metadata."""

    path: Path
    header_size: int
    tensors: list[TensorRecord]
    metadata: dict[str, str] = field(default_factory=dict)

    def names(self) -> list[str]:
        return [rec.name for rec in self.tensors]

    def find(self, name: str) -> TensorRecord:
        for rec in self.tensors:
            if rec.name == name:
                return rec
        raise NameNotFoundError(f"{self.path}: no tensor named {name!r}")


def open_container(path: str | Path) -> ContainerIndex:
    """Parse and validate a container header without touching tensor data."""
    path = Path(path)
    size = path.stat().st_size
    if size < 8:
        raise MalformedHeaderError(f"{path}: file too small for a header length field")
    with path.open("rb") as fh:
        (header_size,) = struct.unpack("<Q", fh.read(8))
        if header_size == 0 or header_size > size - 8:
            raise MalformedHeaderError(
                f"{path}: header length {header_size} exceeds file size {size}"
            )
        raw = fh.read(header_size)
    if len(raw) != header_size:
        raise MalformedHeaderError(f"{path}: truncated header")
    try:
        header = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(header, dict):
        raise MalformedHeaderError(f"{path}: header must be a JSON object")

    data_size = size - 8 - header_size
    metadata: dict[str, str] = {}
    records: list[TensorRecord] = []
    for name, entry in header.items():
        if name == "__metadata__":
            if not isinstance(entry, dict) or not all(
                isinstance(k, str) and isinstance(v, str) for k, v in entry.items()
            ):
                raise MalformedHeaderError(f"{path}: __metadata__ must map strings to strings")
            metadata = dict(entry)
            continue
        if not isinstance(entry, dict):
            raise MalformedHeaderError(f"{path}: record {name!r} is not an object")
        try:
            dtype_name = entry["dtype"]
            shape = entry["shape"]
            begin, end = entry["data_offsets"]
        except (KeyError, TypeError, ValueError):
            raise MalformedHeaderError(
                f"{path}: record {name!r} lacks dtype/shape/data_offsets"
            ) from None
        try:
            dtype = Dtype(dtype_name)
        except ValueError:
            raise UnknownDtypeError(f"{path}: record {name!r} has dtype {dtype_name!r}") from None
        if not isinstance(shape, list) or not all(
            isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape
        ):
            raise MalformedHeaderError(f"{path}: record {name!r} has invalid shape {shape!r}")
        if not (isinstance(begin, int) and isinstance(end, int) and 0 <= begin <= end <= data_size):
            raise MalformedHeaderError(
                f"{path}: record {name!r} offsets [{begin}, {end}) do not fit the "
                f"{data_size}-byte data region"
            )
        nbytes = end - begin
        expected = math.prod(shape) * dtype.width
        if nbytes != expected:
            raise MalformedHeaderError(
                f"{path}: record {name!r} holds {nbytes} bytes but shape {shape} "
                f"with dtype {dtype.value} needs {expected}"
            )
        records.append(TensorRecord(name, dtype, tuple(shape), begin, nbytes))

    prev_name, prev_end = None, 0
    for rec in sorted(records, key=lambda r: (r.offset, r.offset + r.nbytes)):
        if rec.nbytes and rec.offset < prev_end:
            raise OverlappingRangesError(
                f"{path}: tensors {prev_name!r} and {rec.name!r} overlap"
            )
        if rec.nbytes:
            prev_name, prev_end = rec.name, rec.offset + rec.nbytes
    return ContainerIndex(path=path, header_size=header_size, tensors=records, metadata=metadata)


# -- dtype decoding ----------------------------------------------------------

def decode_f16_bits(bits: np.ndarray) -> np.ndarray:
    """IEEE 754 binary16 bit patterns (uint16) to float64 values."""
    with np.errstate(invalid="ignore"):   # NaN patterns are data, not errors
        return np.asarray(bits, dtype="<u2").view(np.float16).astype(np.float64)


def decode_bf16_bits(bits: np.ndarray) -> np.ndarray:
    """bfloat16 bit patterns (uint16) to float64 values.

    The decoded value is the IEEE 754 binary32 number whose upper 16 bits
    are the stored pattern and whose lower 16 bits are zero.
    """
    widened = np.asarray(bits, dtype="<u2").astype("<u4") << np.uint32(16)
    with np.errstate(invalid="ignore"):
        return widened.view("<f4").astype(np.float64)


def _decode(buf: bytes, dtype: Dtype) -> np.ndarray:
    if dtype is Dtype.F64:
        return np.frombuffer(buf, dtype="<f8").astype(np.float64)
    if dtype is Dtype.F32:
        return np.frombuffer(buf, dtype="<f4").astype(np.float64)
    if dtype is Dtype.F16:
        return decode_f16_bits(np.frombuffer(buf, dtype="<u2"))
    return decode_bf16_bits(np.frombuffer(buf, dtype="<u2"))


def read_tensor_values(
    index: ContainerIndex, name: str, *, strict_nan: bool = True
) -> np.ndarray:
    """Read one tensor as a flat float64 array in stored row-major order.

    Non-finite elements raise :class:`NaNPolicyError` when ``strict_nan``
    and are silently dropped otherwise (the caller can compare sizes
    against the record's element count to learn how many).
    """
    rec = index.find(name)
    with Path(index.path).open("rb") as fh:
        fh.seek(8 + index.header_size + rec.offset)
        buf = fh.read(rec.nbytes)
    if len(buf) != rec.nbytes:
        raise TruncatedDataError(
            f"{index.path}: tensor {name!r} needs {rec.nbytes} bytes, got {len(buf)}"
        )
    values = _decode(buf, rec.dtype)
    finite = np.isfinite(values)
    if not finite.all():
        if strict_nan:
            n_bad = int(values.size - finite.sum())
            raise NaNPolicyError(f"{name}: {n_bad} non-finite value(s)")
        values = values[finite]
    return values


# -- parameter-name mapping --------------------------------------------------

@dataclass(frozen=True)
class MappingRule:
    pattern: re.Pattern
    role: Role


@dataclass
class MappingConfig:
    """Ordered regex rules resolving tensor names to (layer, role).

    Rules are tried in order and the first match wins; the rule's first
    capture group is the layer index.  ``fused_split`` declares the row
    counts of the q, k and v blocks inside a fused QKV projection so its
    statistics can be attributed per role.
    """

    rules: list[MappingRule]
    strict: bool = False
    fused_split: tuple[int, int, int] | None = None

    @classmethod
    def from_rules(
        cls,
        rules: list[tuple[str, str | Role]],
        *,
        strict: bool = False,
        fused_split: tuple[int, int, int] | None = None,
    ) -> "MappingConfig":
        compiled = []
        for pattern, role in rules:
            role = Role(role)
            rx = re.compile(pattern)
            if role in _LAYER_SCOPED and rx.groups < 1:
                raise ValueError(
                    f"rule {pattern!r} maps to layer-scoped role {role.value} "
                    "but captures no layer index"
                )
            compiled.append(MappingRule(rx, role))
        if fused_split is not None:
            q, k, v = fused_split
            if min(q, k, v) <= 0:
                raise ValueError("fused_split row counts must be positive")
            fused_split = (int(q), int(k), int(v))
        return cls(rules=compiled, strict=strict, fused_split=fused_split)


#: Per-projection naming, the common unfused layout.
PER_PROJECTION_RULES: list[tuple[str, Role]] = [
    (r"layers\.(\d+)\.self_attn\.q_proj\.weight$", Role.ATTN_Q),
    (r"layers\.(\d+)\.self_attn\.k_proj\.weight$", Role.ATTN_K),
    (r"layers\.(\d+)\.self_attn\.v_proj\.weight$", Role.ATTN_V),
    (r"layers\.(\d+)\.self_attn\.o_proj\.weight$", Role.ATTN_O),
    (r"layers\.(\d+)\.mlp\.gate_proj\.weight$", Role.MLP_GATE),
    (r"layers\.(\d+)\.mlp\.up_proj\.weight$", Role.MLP_UP),
    (r"layers\.(\d+)\.mlp\.down_proj\.weight$", Role.MLP_DOWN),
    (r"layers\.(\d+)\.input_layernorm\.weight$", Role.NORM_INPUT),
    (r"layers\.(\d+)\.post_attention_layernorm\.weight$", Role.NORM_POST),
]

#: Fused-QKV naming as used by GPT-NeoX style checkpoints.
FUSED_QKV_RULES: list[tuple[str, Role]] = [
    (r"h\.(\d+)\.attention\.query_key_value\.weight$", Role.QKV_FUSED),
    (r"h\.(\d+)\.attention\.dense\.weight$", Role.ATTN_O),
    (r"h\.(\d+)\.mlp\.dense_h_to_4h\.weight$", Role.MLP_UP),
    (r"h\.(\d+)\.mlp\.dense_4h_to_h\.weight$", Role.MLP_DOWN),
    (r"h\.(\d+)\.input_layernorm\.weight$", Role.NORM_INPUT),
    (r"h\.(\d+)\.post_attention_layernorm\.weight$", Role.NORM_POST),
]

_PRESETS = {
    "per_projection": PER_PROJECTION_RULES,
    "fused_qkv": FUSED_QKV_RULES,
}


def default_mapping(*, strict: bool = False) -> MappingConfig:
    return MappingConfig.from_rules(PER_PROJECTION_RULES, strict=strict)


def fused_mapping(
    *, strict: bool = False, fused_split: tuple[int, int, int] | None = None
) -> MappingConfig:
    return MappingConfig.from_rules(FUSED_QKV_RULES, strict=strict, fused_split=fused_split)


def mapping_from_dict(data: dict) -> MappingConfig:
    """Build a mapping config from a JSON-shaped dict.

    Accepts ``{"preset": "per_projection" | "fused_qkv"}`` or an explicit
    ``{"rules": [{"pattern": ..., "role": ...}, ...]}``, plus optional
    ``"strict"`` and ``"fused_split": {"q_rows", "k_rows", "v_rows"}``.
    """
    if "preset" in data:
        preset = data["preset"]
        if preset not in _PRESETS:
            raise ValueError(f"unknown mapping preset {preset!r}")
        rules = list(_PRESETS[preset])
    else:
        rules = [(r["pattern"], r["role"]) for r in data.get("rules", [])]
        if not rules:
            raise ValueError("mapping config needs a preset or a non-empty rule list")
    split = None
    if data.get("fused_split") is not None:
        fs = data["fused_split"]
        split = (fs["q_rows"], fs["k_rows"], fs["v_rows"])
    return MappingConfig.from_rules(rules, strict=bool(data.get("strict", False)), fused_split=split)


def load_mapping_config(path: str | Path) -> MappingConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return mapping_from_dict(json.load(fh))


def map_parameter(name: str, cfg: MappingConfig) -> tuple[int, Role] | None:
    """Resolve a tensor name to (layer, role); first matching rule wins.

    Returns None for unmapped names in lenient mode and raises
    :class:`StrictUnmappedError` in strict mode.  Rules for the
    non-layer role ``other`` may omit a capture group; such matches
    report layer -1.
    """
    for rule in cfg.rules:
        m = rule.pattern.search(name)
        if m is not None:
            layer = int(m.group(1)) if m.groups() and m.group(1) is not None else -1
            return layer, rule.role
    if cfg.strict:
        raise StrictUnmappedError(f"no mapping rule matches tensor {name!r}")
    return None
