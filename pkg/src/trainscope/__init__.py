"""Training-state telemetry for LLM pretraining runs.

Reads checkpoint weight containers, tracks per-layer statistics across
checkpoints, measures how fast weight trajectories settle via discrete
Frechet distances normalized by token gap, flags loss spikes and
plateaus, and turns staged data-mixture recipes into trainer-ready
sampling manifests with LR/batch schedules.
"""

__version__ = "0.1.0"

from .container import (
    MONITORED_ROLES,
    ContainerIndex,
    Dtype,
    MappingConfig,
    Role,
    TensorRecord,
    decode_bf16_bits,
    decode_f16_bits,
    default_mapping,
    fused_mapping,
    load_mapping_config,
    map_parameter,
    open_container,
    read_tensor_values,
)
from .errors import TrainscopeError
from .fixtures import RunSpec, gen_converging_run, gen_loss_curve, write_container
from .frechet import (
    VALUE_ONLY,
    ConvergenceSummary,
    DistancePoint,
    DistanceSeries,
    FrechetMode,
    convergence_summary,
    discrete_frechet,
    distance_series,
    normalized_distance,
)
from .mixture import (
    DOMAINS,
    BatchRamp,
    DataSource,
    Inventory,
    SamplingPlan,
    ScheduleSpec,
    StageOp,
    StageRecipe,
    TrainingPlan,
    apply_stage_op,
    batch_size_at,
    build_training_plan,
    load_inventory,
    load_recipes,
    lr_at,
    plan_stage,
    validate_recipe,
)
from .monitor import (
    MetricSeries,
    PlateauEvent,
    SpikeEvent,
    StageBoundary,
    annotate_stages,
    detect_plateaus,
    detect_spikes,
    ingest_series,
)
from .report import (
    ReportBundle,
    render_layer_curves,
    render_line_chart,
    write_report_bundle,
)
from .weightstats import (
    CheckpointStats,
    Stats,
    Trajectory,
    TrajectorySet,
    build_trajectory_set,
    checkpoint_stats,
    tensor_stats,
)

__all__ = [name for name in dir() if not name.startswith("_")]
