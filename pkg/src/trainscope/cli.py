"""Command-line surface: scan, frechet, loss, plan, report, fixtures.

Exit codes: 0 success, 1 usage error (bad flags or subcommand, help is
printed), 2 data error (unreadable or contract-violating inputs).
Diagnostics go to stderr; machine output goes to --out or stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .container import (
    MappingConfig,
    Role,
    default_mapping,
    load_mapping_config,
    open_container,
)
from .errors import BadParamError, BadSpecError, TrainscopeError
from .fixtures import RunSpec, gen_converging_run, gen_loss_curve
from .frechet import (
    FrechetMode,
    convergence_summary,
    distance_series,
    series_to_csv,
    series_to_dict,
)
from .mixture import (
    Inventory,
    ValidationPolicy,
    apply_stage_op,
    build_training_plan,
    load_inventory,
    load_recipes,
    validate_recipe,
)
from .monitor import (
    ColumnSchema,
    annotate_stages,
    detect_plateaus,
    detect_spikes,
    events_to_csv,
    events_to_json,
    ingest_series,
    load_boundaries,
)
from .report import ReportBundle, render_layer_curves, render_line_chart, sha256_file, write_report_bundle
from .weightstats import build_trajectory_set, checkpoint_stats, load_checkpoint_meta


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _mapping_from_args(args) -> MappingConfig:
    cfg = load_mapping_config(args.mapping) if args.mapping else default_mapping()
    if getattr(args, "strict", False):
        cfg.strict = True
    return cfg


def _frechet_mode(args) -> FrechetMode:
    mode = "planar" if args.frechet_mode == "planar" else "value_only"
    return FrechetMode(mode=mode, layer_axis_scale=args.layer_scale)


def _discover_run(ckpt_dir: Path) -> list[tuple[Path, Path, dict]]:
    """Pair containers with sidecars and order by tokens_b, never by name."""
    if not ckpt_dir.is_dir():
        raise TrainscopeError(f"{ckpt_dir}: not a directory")
    runs = []
    for container in sorted(ckpt_dir.glob("*.safetensors")):
        sidecar = container.with_suffix(".meta.json")
        if not sidecar.exists():
            print(f"warning: {container.name}: no sidecar metadata, skipped", file=sys.stderr)
            continue
        runs.append((container, sidecar, load_checkpoint_meta(sidecar)))
    if not runs:
        raise TrainscopeError(f"{ckpt_dir}: no checkpoint (container + sidecar) pairs found")
    runs.sort(key=lambda item: item[2]["tokens_b"])
    return runs


def _scan_run(ckpt_dir: Path, cfg: MappingConfig, jobs: int):
    runs = _discover_run(ckpt_dir)

    def one(item):
        container, _, meta = item
        return checkpoint_stats(
            open_container(container),
            cfg,
            checkpoint_id=meta["checkpoint_id"],
            tokens_b=meta["tokens_b"],
            stage=meta["stage"],
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            stats = list(pool.map(one, runs))
    else:
        stats = [one(item) for item in runs]
    return sorted(stats, key=lambda cs: cs.tokens_b), runs


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _dump(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def cmd_scan(args) -> int:
    cfg = _mapping_from_args(args)
    stats, _ = _scan_run(Path(args.ckpt_dir), cfg, args.jobs)
    _emit(_dump({"checkpoints": [cs.to_dict() for cs in stats]}), args.out)
    for cs in stats:
        for line in cs.warnings:
            print(f"warning: {cs.checkpoint_id}: {line}", file=sys.stderr)
    return 0


def cmd_frechet(args) -> int:
    cfg = _mapping_from_args(args)
    stats, _ = _scan_run(Path(args.ckpt_dir), cfg, args.jobs)
    tset = build_trajectory_set(stats, metric=args.metric, strict=args.strict)
    series = distance_series(tset, _frechet_mode(args))
    summary = convergence_summary(series, args.epsilon, args.window)
    doc = {
        "metric": args.metric,
        "mode": args.frechet_mode,
        "series": series_to_dict(series),
        "summary": summary.to_dict(),
    }
    _emit(_dump(doc), args.out)
    if args.csv:
        Path(args.csv).write_text(series_to_csv(series), encoding="utf-8")
    return 0


def cmd_loss(args) -> int:
    schema = ColumnSchema(
        tokens=args.tokens_col,
        value=args.value_col,
        direction="higher_better" if args.direction == "higher" else "lower_better",
    )
    series = ingest_series(args.series_file, schema)
    spikes = detect_spikes(series, args.window, args.threshold, args.mad_floor)
    span = series.points[-1][0] - series.points[0][0]
    plateau_window = args.plateau_window if args.plateau_window is not None else span / 5.0
    plateaus = detect_plateaus(series, plateau_window, args.slope_eps)
    doc = {
        "series": series.name,
        "direction": series.direction,
        "n_points": len(series.points),
        "window": args.window,
        "threshold": args.threshold,
        "plateau_window_b": plateau_window,
        "slope_eps": args.slope_eps,
        **events_to_json(spikes, plateaus),
    }
    if args.boundaries:
        annotated = annotate_stages(series, load_boundaries(args.boundaries))
        doc["stages"] = {stage: s.to_dict() for stage, s in annotated.summaries.items()}
    _emit(_dump(doc), args.out)
    if args.csv:
        Path(args.csv).write_text(events_to_csv(spikes, plateaus), encoding="utf-8")
    return 0


def cmd_plan(args) -> int:
    recipes, schedule = load_recipes(args.recipe)
    if not recipes:
        raise BadParamError(f"{args.recipe}: no stages defined")
    if schedule is None:
        raise BadParamError(f"{args.recipe}: recipe file must include a schedule table")
    inventory = load_inventory(args.inventory)
    policy = ValidationPolicy(epoch_cap=args.epoch_cap)
    inv = Inventory.wrap(inventory)
    for recipe in recipes:
        for op in recipe.ops:
            inv = apply_stage_op(inv, op)
        for line in validate_recipe(recipe, inv, policy):
            print(f"warning: stage {recipe.stage}: {line}", file=sys.stderr)
    plan = build_training_plan(recipes, inventory, schedule, epoch_cap=args.epoch_cap)
    _emit(_dump(plan.to_manifest()), args.out)
    return 0


def cmd_report(args) -> int:
    bundle = ReportBundle(title=args.title)
    boundaries = []
    if args.boundaries:
        boundaries = load_boundaries(args.boundaries)
        bundle.provenance[Path(args.boundaries).name] = sha256_file(args.boundaries)
    if args.mapping:
        bundle.provenance[Path(args.mapping).name] = sha256_file(args.mapping)

    if args.ckpt_dir:
        cfg = _mapping_from_args(args)
        stats, runs = _scan_run(Path(args.ckpt_dir), cfg, args.jobs)
        for container, sidecar, _ in runs:
            bundle.provenance[container.name] = sha256_file(container)
            bundle.provenance[sidecar.name] = sha256_file(sidecar)
        tset = build_trajectory_set(stats, metric=args.metric, strict=args.strict)
        series = distance_series(tset, _frechet_mode(args))
        bundle.add_chart(
            "distance series",
            render_line_chart(
                series,
                boundaries,
                title="normalized trajectory distance",
                y_label=f"frechet({args.metric}) per B tokens",
            ),
        )
        roles = [Role(r) for r in args.role] if args.role else list(tset.roles())
        for role in roles:
            bundle.add_chart(f"layer curves {role.value}", render_layer_curves(tset, role))
        bundle.add_table(
            "distance points",
            ["role", "from_tokens_b", "to_tokens_b", "raw", "normalized"],
            [
                row.split(",")
                for row in series_to_csv(series).splitlines()[1:]
            ],
        )

    for loss_file in args.loss or []:
        series = ingest_series(loss_file)
        bundle.provenance[Path(loss_file).name] = sha256_file(loss_file)
        stem = Path(loss_file).stem
        bundle.add_chart(
            f"loss {stem}",
            render_line_chart([series], boundaries, title=stem, y_label=series.name),
        )

    if not bundle.charts:
        raise TrainscopeError("nothing to report: give --ckpt-dir and/or --loss")
    write_report_bundle(bundle, args.out)
    print(
        f"wrote {len(bundle.charts)} chart(s), {len(bundle.tables)} table(s) to {args.out}",
        file=sys.stderr,
    )
    return 0


def cmd_fixtures(args) -> int:
    with open(args.spec_file, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    entries = doc if isinstance(doc, list) else [doc]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in entries:
        kind = entry.get("kind")
        if kind == "converging_run":
            spec = RunSpec.from_dict(entry.get("run", {}))
            target = out_dir / entry["name"] if "name" in entry else out_dir
            pairs = gen_converging_run(spec, target)
            print(f"wrote {len(pairs)} checkpoints to {target}", file=sys.stderr)
        elif kind == "loss_curve":
            curve = entry.get("curve")
            name = entry.get("name", curve)
            series_path, sidecar = gen_loss_curve(
                curve,
                out_dir / f"{name}.jsonl",
                params=entry.get("params"),
                seed=int(entry.get("seed", 0)),
            )
            print(f"wrote {series_path.name} + {sidecar.name}", file=sys.stderr)
        else:
            raise BadSpecError(f"unknown fixture kind {kind!r}")
    return 0


def _add_common_scan_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mapping", help="mapping config JSON (default: per-projection preset)")
    p.add_argument("--strict", action="store_true", help="strict mapping, NaN and grid checks")
    p.add_argument("--jobs", type=int, default=1, help="checkpoints processed concurrently")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trainscope", description=__doc__)
    parser.add_argument("--version", action="version", version=f"trainscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("scan", help="per-checkpoint weight statistics as JSON")
    p.add_argument("ckpt_dir")
    _add_common_scan_flags(p)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("frechet", help="normalized trajectory distances + convergence")
    p.add_argument("ckpt_dir")
    _add_common_scan_flags(p)
    p.add_argument("--metric", choices=("std", "rms"), default="std")
    p.add_argument("--frechet-mode", choices=("value", "planar"), default="value")
    p.add_argument("--layer-scale", type=float, default=1.0, help="layer-axis scale in planar mode")
    p.add_argument("--epsilon", type=float, default=1e-3, help="convergence threshold (tune per run)")
    p.add_argument("--window", type=int, default=3, help="trailing points that must sit below epsilon")
    p.add_argument("--out", help="JSON output file (default: stdout)")
    p.add_argument("--csv", help="also write the distance points as CSV")
    p.set_defaults(func=cmd_frechet)

    p = sub.add_parser("loss", help="spike/plateau report for a metric series")
    p.add_argument("series_file")
    p.add_argument("--direction", choices=("lower", "higher"), default="lower")
    p.add_argument("--tokens-col", default="tokens_b")
    p.add_argument("--value-col", default="value")
    p.add_argument("--window", type=int, default=50, help="rolling median window (points)")
    p.add_argument("--threshold", type=float, default=6.0, help="robust z-score threshold")
    p.add_argument("--mad-floor", type=float, default=1e-6)
    p.add_argument("--plateau-window", type=float, default=None,
                   help="plateau window in B tokens (default: one fifth of the span)")
    p.add_argument("--slope-eps", type=float, default=0.01,
                   help="max |slope| per B tokens inside a plateau")
    p.add_argument("--boundaries", help="stage boundaries JSON for per-stage summaries")
    p.add_argument("--out", help="JSON output file (default: stdout)")
    p.add_argument("--csv", help="also write events as CSV")
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("plan", help="staged sampling manifest from recipe + inventory")
    p.add_argument("recipe")
    p.add_argument("inventory")
    p.add_argument("--epoch-cap", type=float, default=3.0)
    p.add_argument("--out", help="manifest file (default: stdout)")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("report", help="SVG/CSV report bundle")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ckpt-dir")
    p.add_argument("--loss", action="append", help="metric series file (repeatable)")
    p.add_argument("--boundaries")
    _add_common_scan_flags(p)
    p.add_argument("--metric", choices=("std", "rms"), default="std")
    p.add_argument("--frechet-mode", choices=("value", "planar"), default="value")
    p.add_argument("--layer-scale", type=float, default=1.0)
    p.add_argument("--role", action="append", help="layer-curve role (repeatable, default: all present)")
    p.add_argument("--title", default="training report")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("fixtures", help="generate synthetic test data")
    p.add_argument("spec_file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (TrainscopeError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
