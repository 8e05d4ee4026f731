"""Staged data-mixture planning and training schedules.

A training plan is a sequence of stages.  Each stage carries domain
proportions over a fixed six-domain vocabulary and a token budget; stage
ops (new batches, filtering, resampling, new datasets) transform the
source inventory before the stage is planned.  Planning splits each
domain's budget across its sources by quality tier (higher tier first,
proportionally to availability within a tier, capped at ``epoch_cap``
passes over a source before spilling to the next tier), unless an
explicit resample distribution overrides the split.

Schedules are the usual pair: linear token warmup into a cosine decay
for the learning rate, and an equal-width staircase over samples for the
batch size.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import (
    BadParamError,
    BadRampError,
    EmptyDomainError,
    OutOfRangeError,
    ProportionSumError,
    UnknownSourceError,
)

DOMAINS = ("Web", "Wiki", "Paper", "Textbook", "Code", "Knowledge")
LANGUAGES = ("zh", "en", "code", "other")

OP_KINDS = ("NewBatch", "Filter", "Resample", "NewDataset")

PROPORTION_SUM_TOL = 1e-9
DEFAULT_EPOCH_CAP = 3.0

#: Recommended zh:en token-ratio band, inclusive.
ZH_EN_BAND = (1.0 / 3.0, 1.0 / 2.0)


@dataclass
class DataSource:
    name: str
    domain: str
    language: str
    available_tokens_b: float
    batch: int = 1
    quality_tier: int = 1   # larger = higher quality, consumed first

    def __post_init__(self) -> None:
        if self.domain not in DOMAINS:
            raise ValueError(f"{self.name}: unknown domain {self.domain!r}")
        if self.language not in LANGUAGES:
            raise ValueError(f"{self.name}: unknown language {self.language!r}")
        if not self.available_tokens_b >= 0:
            raise ValueError(f"{self.name}: available_tokens_b must be >= 0")


@dataclass(frozen=True)
class StageOp:
    kind: str
    domain: str
    params: dict

    def __post_init__(self) -> None:
        if self.kind not in OP_KINDS:
            raise BadParamError(f"unknown stage op kind {self.kind!r}")
        if self.domain not in DOMAINS:
            raise BadParamError(f"stage op on unknown domain {self.domain!r}")


@dataclass
class StageRecipe:
    stage: str
    proportions: dict[str, float]   # domain -> fraction of the stage budget
    budget_tokens_b: float
    ops: list[StageOp] = field(default_factory=list)

    def __post_init__(self) -> None:
        for domain, frac in self.proportions.items():
            if domain not in DOMAINS:
                raise ValueError(f"stage {self.stage}: unknown domain {domain!r}")
            if not 0.0 <= frac <= 1.0:
                raise ValueError(f"stage {self.stage}: proportion {domain}={frac} outside [0, 1]")
        if not self.budget_tokens_b > 0:
            raise ValueError(f"stage {self.stage}: budget must be positive")

    def check_sum(self, tol: float = PROPORTION_SUM_TOL) -> float:
        total = math.fsum(self.proportions.values())
        if abs(total - 1.0) > tol:
            raise ProportionSumError(
                f"stage {self.stage}: proportions sum to {total!r}, not 1"
            )
        return total


@dataclass
class Inventory:
    """Sources plus any active per-domain resample distributions."""

    sources: list[DataSource]
    resample: dict[str, dict[str, float]] = field(default_factory=dict)

    @classmethod
    def wrap(cls, sources) -> "Inventory":
        if isinstance(sources, Inventory):
            return sources
        return cls(sources=list(sources))

    def copy(self) -> "Inventory":
        return Inventory(
            sources=[replace(s) for s in self.sources],
            resample={d: dict(w) for d, w in self.resample.items()},
        )

    def in_domain(self, domain: str) -> list[DataSource]:
        return [s for s in self.sources if s.domain == domain]

    def find(self, name: str) -> DataSource | None:
        for s in self.sources:
            if s.name == name:
                return s
        return None


def load_inventory(path: str | Path) -> Inventory:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise ValueError(f"{path}: inventory must be a JSON list of sources")
    return Inventory(sources=[DataSource(**row) for row in data])


def _require(params: dict, key: str, op: StageOp):
    if key not in params:
        raise BadParamError(f"{op.kind} on {op.domain}: missing param {key!r}")
    return params[key]


def apply_stage_op(inventory, op: StageOp) -> Inventory:
    """Return a new inventory with one op applied; the input is untouched."""
    inv = Inventory.wrap(inventory).copy()
    targets = inv.in_domain(op.domain)

    if op.kind == "NewBatch":
        tokens_b = float(_require(op.params, "tokens_b", op))
        if tokens_b < 0:
            raise BadParamError(f"NewBatch on {op.domain}: tokens_b must be >= 0")
        name = op.params.get("source")
        if name is None:
            if len(targets) != 1:
                raise BadParamError(
                    f"NewBatch on {op.domain}: domain has {len(targets)} sources, name one"
                )
        else:
            targets = [s for s in targets if s.name == name]
            if not targets:
                raise UnknownSourceError(f"NewBatch: no source {name!r} in {op.domain}")
        src = targets[0]
        src.batch += 1
        src.available_tokens_b = tokens_b

    elif op.kind == "Filter":
        keep = float(_require(op.params, "keep_fraction", op))
        if not 0.0 < keep <= 1.0:
            raise BadParamError(f"Filter on {op.domain}: keep_fraction {keep} outside (0, 1]")
        name = op.params.get("source")
        if name is not None:
            targets = [s for s in targets if s.name == name]
            if not targets:
                raise UnknownSourceError(f"Filter: no source {name!r} in {op.domain}")
        for src in targets:
            src.available_tokens_b *= keep

    elif op.kind == "Resample":
        dist = _require(op.params, "distribution", op)
        if not isinstance(dist, dict) or not dist:
            raise BadParamError(f"Resample on {op.domain}: distribution must be a non-empty map")
        names = {s.name for s in targets}
        weights: dict[str, float] = {}
        for name, w in dist.items():
            if name not in names:
                raise UnknownSourceError(f"Resample: no source {name!r} in {op.domain}")
            w = float(w)
            if w < 0:
                raise BadParamError(f"Resample on {op.domain}: negative weight for {name!r}")
            weights[name] = w
        total = math.fsum(weights.values())
        if total <= 0:
            raise BadParamError(f"Resample on {op.domain}: weights sum to zero")
        inv.resample[op.domain] = {name: w / total for name, w in weights.items()}

    else:   # NewDataset
        name = str(_require(op.params, "name", op))
        tokens_b = float(_require(op.params, "tokens_b", op))
        if tokens_b < 0:
            raise BadParamError(f"NewDataset on {op.domain}: tokens_b must be >= 0")
        if inv.find(name) is not None:
            raise BadParamError(f"NewDataset: source {name!r} already exists")
        inv.sources.append(
            DataSource(
                name=name,
                domain=op.domain,
                language=str(op.params.get("language", "en")),
                available_tokens_b=tokens_b,
                batch=int(op.params.get("batch", 1)),
                quality_tier=int(op.params.get("quality_tier", 1)),
            )
        )
    return inv


@dataclass(frozen=True)
class SourceAllocation:
    weight: float            # share of the stage budget
    target_tokens_b: float
    epochs: float            # target / available


@dataclass
class SamplingPlan:
    stage: str
    budget_tokens_b: float
    allocations: dict[str, SourceAllocation]   # keyed by source name
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "budget_tokens_b": self.budget_tokens_b,
            "sources": {
                name: {
                    "weight": alloc.weight,
                    "target_tokens_b": alloc.target_tokens_b,
                    "epochs": alloc.epochs,
                }
                for name, alloc in sorted(self.allocations.items())
            },
            "diagnostics": list(self.diagnostics),
        }


def _split_domain(
    domain: str,
    budget: float,
    sources: list[DataSource],
    resample: dict[str, float] | None,
    epoch_cap: float,
) -> dict[str, float]:
    """Split one domain's token budget across its sources.

    With a resample distribution the split is exactly proportional to the
    given weights.  Otherwise tiers are consumed best-first, each source
    capped at ``epoch_cap`` passes, proportionally to availability within
    a tier; if every tier saturates, the overflow is spread across the
    whole domain proportionally to availability (epochs then exceed the
    cap, which planning reports as a diagnostic).
    """
    live = [s for s in sources if s.available_tokens_b > 0]
    if not live:
        raise EmptyDomainError(f"domain {domain} has no available source")
    if resample:
        targets = {}
        for name, w in resample.items():
            if w > 0:
                src = next((s for s in sources if s.name == name), None)
                if src is None or src.available_tokens_b <= 0:
                    raise EmptyDomainError(
                        f"domain {domain}: resample weight on empty source {name!r}"
                    )
                targets[name] = budget * w
        return targets

    targets = {s.name: 0.0 for s in live}
    remaining = budget
    for tier in sorted({s.quality_tier for s in live}, reverse=True):
        if remaining <= 0:
            break
        tier_sources = [s for s in live if s.quality_tier == tier]
        capacity = {s.name: s.available_tokens_b * epoch_cap - targets[s.name] for s in tier_sources}
        tier_room = math.fsum(capacity.values())
        if tier_room <= 0:
            continue
        take = min(remaining, tier_room)
        avail = math.fsum(s.available_tokens_b for s in tier_sources)
        given = 0.0
        for s in tier_sources:
            share = min(take * (s.available_tokens_b / avail), capacity[s.name])
            targets[s.name] += share
            given += share
        # proportional shares can undershoot a source's cap while another
        # saturates; sweep the residue into whatever room is left
        residue = take - given
        if residue > 1e-12 * budget:
            for s in tier_sources:
                room = s.available_tokens_b * epoch_cap - targets[s.name]
                grab = min(residue, room)
                targets[s.name] += grab
                residue -= grab
                if residue <= 0:
                    break
        remaining -= take - max(residue, 0.0)
    if remaining > 1e-12 * budget:
        # every tier is saturated; distribute the overflow by availability
        avail = math.fsum(s.available_tokens_b for s in live)
        for s in live:
            targets[s.name] += remaining * (s.available_tokens_b / avail)
    return targets


def plan_stage(
    recipe: StageRecipe, inventory, *, epoch_cap: float = DEFAULT_EPOCH_CAP
) -> SamplingPlan:
    """Turn a stage recipe plus inventory into per-source sampling weights.

    Weights sum to 1 and targets sum to the budget (up to rounding);
    every source's epochs equal target / available exactly.  Epochs above
    ``epoch_cap`` are reported as diagnostics, not errors.
    """
    recipe.check_sum()
    inv = Inventory.wrap(inventory)
    diagnostics: list[str] = []
    allocations: dict[str, SourceAllocation] = {}
    for domain in DOMAINS:
        frac = recipe.proportions.get(domain, 0.0)
        if frac == 0.0:
            continue
        sources = inv.in_domain(domain)
        targets = _split_domain(
            domain, frac * recipe.budget_tokens_b, sources, inv.resample.get(domain), epoch_cap
        )
        for src in sources:
            target = targets.get(src.name, 0.0)
            if target == 0.0 and src.available_tokens_b <= 0:
                continue
            epochs = target / src.available_tokens_b if src.available_tokens_b > 0 else 0.0
            allocations[src.name] = SourceAllocation(
                weight=target / recipe.budget_tokens_b,
                target_tokens_b=target,
                epochs=epochs,
            )
            if epochs > epoch_cap:
                diagnostics.append(
                    f"{domain}/{src.name}: {epochs:.6g} epochs exceeds the cap of {epoch_cap:g}"
                )
    return SamplingPlan(
        stage=recipe.stage,
        budget_tokens_b=recipe.budget_tokens_b,
        allocations=allocations,
        diagnostics=diagnostics,
    )


@dataclass
class ValidationPolicy:
    epoch_cap: float = DEFAULT_EPOCH_CAP
    zh_en_band: tuple[float, float] = ZH_EN_BAND
    sum_tol: float = PROPORTION_SUM_TOL


def validate_recipe(
    recipe: StageRecipe, inventory, policy: ValidationPolicy | None = None
) -> list[str]:
    """Check a recipe against the inventory and return diagnostics.

    A proportion sum off by more than the tolerance raises
    :class:`ProportionSumError`; everything else (missing domains,
    oversampling beyond the epoch cap, a zh:en token ratio outside the
    recommended band) is reported as a warning string.
    """
    policy = policy or ValidationPolicy()
    recipe.check_sum(policy.sum_tol)
    inv = Inventory.wrap(inventory)
    diagnostics: list[str] = []
    try:
        plan = plan_stage(recipe, inv, epoch_cap=policy.epoch_cap)
    except EmptyDomainError as exc:
        return [f"unplannable: {exc}"]
    diagnostics.extend(plan.diagnostics)

    by_language: dict[str, float] = {}
    for name, alloc in plan.allocations.items():
        src = inv.find(name)
        by_language[src.language] = by_language.get(src.language, 0.0) + alloc.target_tokens_b
    zh = by_language.get("zh", 0.0)
    en = by_language.get("en", 0.0)
    if zh > 0 or en > 0:
        lo, hi = policy.zh_en_band
        ratio = zh / en if en > 0 else math.inf
        if not lo <= ratio <= hi:
            diagnostics.append(
                f"zh:en token ratio {ratio:.6g} outside the recommended band "
                f"[{lo:.6g}, {hi:.6g}] (zh={zh:.6g} B, en={en:.6g} B)"
            )
    return diagnostics


# -- schedules ----------------------------------------------------------------

@dataclass(frozen=True)
class BatchRamp:
    start: int
    increment: int
    ramp_samples: int
    final: int


@dataclass(frozen=True)
class ScheduleSpec:
    lr_peak: float
    lr_min: float
    warmup_tokens_b: float
    total_tokens_b: float
    batch_ramp: BatchRamp | None = None

    def __post_init__(self) -> None:
        if not 0 < self.lr_min <= self.lr_peak:
            raise ValueError("need 0 < lr_min <= lr_peak")
        if not 0 < self.warmup_tokens_b < self.total_tokens_b:
            raise ValueError("need 0 < warmup_tokens_b < total_tokens_b")


def lr_at(tokens_b: float, schedule: ScheduleSpec) -> float:
    """Learning rate after ``tokens_b`` billion tokens: linear warmup from
    0 to the peak, then cosine decay to the minimum at the total."""
    if not 0.0 <= tokens_b <= schedule.total_tokens_b:
        raise OutOfRangeError(
            f"tokens_b {tokens_b} outside [0, {schedule.total_tokens_b}]"
        )
    if tokens_b <= schedule.warmup_tokens_b:
        return schedule.lr_peak * (tokens_b / schedule.warmup_tokens_b)
    progress = (tokens_b - schedule.warmup_tokens_b) / (
        schedule.total_tokens_b - schedule.warmup_tokens_b
    )
    return schedule.lr_min + 0.5 * (schedule.lr_peak - schedule.lr_min) * (
        1.0 + math.cos(math.pi * progress)
    )


def batch_size_at(samples_seen: int, ramp: BatchRamp) -> int:
    """Batch size on an equal-width staircase over samples.

    The ramp has (final - start) / increment + 1 levels (the first is the
    start size, the last the final size), each spanning an equal share of
    ``ramp_samples``; at or past ``ramp_samples`` the final size holds.
    """
    if samples_seen < 0:
        raise ValueError("samples_seen must be >= 0")
    if ramp.final < ramp.start or ramp.ramp_samples <= 0:
        raise BadRampError("need final >= start and ramp_samples > 0")
    if ramp.final == ramp.start:
        return ramp.final
    if ramp.increment <= 0 or (ramp.final - ramp.start) % ramp.increment != 0:
        raise BadRampError(
            f"ramp span {ramp.final - ramp.start} is not a multiple of increment {ramp.increment}"
        )
    if samples_seen >= ramp.ramp_samples:
        return ramp.final
    n_levels = (ramp.final - ramp.start) // ramp.increment + 1
    level = int(samples_seen * n_levels // ramp.ramp_samples)
    level = min(level, n_levels - 1)
    return ramp.start + level * ramp.increment


# -- whole-run plans ----------------------------------------------------------

@dataclass
class TrainingPlan:
    stages: list[tuple[StageRecipe, SamplingPlan]]
    boundaries_b: list[float]      # cumulative token budget after each stage
    schedule: ScheduleSpec

    def to_manifest(self) -> dict:
        return {
            "stages": [
                {
                    "stage": recipe.stage,
                    "budget_tokens_b": recipe.budget_tokens_b,
                    "proportions": {d: recipe.proportions[d] for d in DOMAINS if d in recipe.proportions},
                    **{k: v for k, v in plan.to_dict().items() if k in ("sources", "diagnostics")},
                }
                for recipe, plan in self.stages
            ],
            "boundaries_b": list(self.boundaries_b),
            "schedule": {
                "lr_peak": self.schedule.lr_peak,
                "lr_min": self.schedule.lr_min,
                "warmup_tokens_b": self.schedule.warmup_tokens_b,
                "total_tokens_b": self.schedule.total_tokens_b,
                "batch_ramp": None
                if self.schedule.batch_ramp is None
                else {
                    "start": self.schedule.batch_ramp.start,
                    "increment": self.schedule.batch_ramp.increment,
                    "ramp_samples": self.schedule.batch_ramp.ramp_samples,
                    "final": self.schedule.batch_ramp.final,
                },
            },
        }


def build_training_plan(
    recipes: list[StageRecipe],
    inventory,
    schedule: ScheduleSpec,
    *,
    epoch_cap: float = DEFAULT_EPOCH_CAP,
) -> TrainingPlan:
    """Apply each stage's ops to the evolving inventory, plan the stage,
    and accumulate cumulative token boundaries (plain prefix sums)."""
    if not recipes:
        raise ValueError("need at least one stage recipe")
    inv = Inventory.wrap(inventory)
    stages: list[tuple[StageRecipe, SamplingPlan]] = []
    boundaries: list[float] = []
    total = 0.0
    for recipe in recipes:
        for op in recipe.ops:
            inv = apply_stage_op(inv, op)
        stages.append((recipe, plan_stage(recipe, inv, epoch_cap=epoch_cap)))
        total += recipe.budget_tokens_b
        boundaries.append(total)
    return TrainingPlan(stages=stages, boundaries_b=boundaries, schedule=schedule)


# -- recipe files -------------------------------------------------------------

def _recipe_from_dict(doc: dict) -> tuple[list[StageRecipe], ScheduleSpec | None]:
    recipes = []
    for entry in doc.get("stages", []):
        ops = [
            StageOp(kind=o["kind"], domain=o["domain"], params=dict(o.get("params", {})))
            for o in entry.get("ops", [])
        ]
        recipes.append(
            StageRecipe(
                stage=str(entry["stage"]),
                proportions={str(k): float(v) for k, v in entry["proportions"].items()},
                budget_tokens_b=float(entry["budget_tokens_b"]),
                ops=ops,
            )
        )
    schedule = None
    if "schedule" in doc:
        s = doc["schedule"]
        ramp = None
        if s.get("batch_ramp") is not None:
            r = s["batch_ramp"]
            ramp = BatchRamp(
                start=int(r["start"]),
                increment=int(r["increment"]),
                ramp_samples=int(r["ramp_samples"]),
                final=int(r["final"]),
            )
        schedule = ScheduleSpec(
            lr_peak=float(s["lr_peak"]),
            lr_min=float(s["lr_min"]),
            warmup_tokens_b=float(s["warmup_tokens_b"]),
            total_tokens_b=float(s["total_tokens_b"]),
            batch_ramp=ramp,
        )
    return recipes, schedule


def load_recipes(path: str | Path) -> tuple[list[StageRecipe], ScheduleSpec | None]:
    """Read stage recipes and an optional schedule from TOML or JSON."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    else:
        with path.open("r", encoding="utf-8") as fh:
            doc = json.load(fh)
    return _recipe_from_dict(doc)
