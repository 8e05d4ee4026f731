"""Release acceptance gate.

Each test here covers exactly one acceptance criterion and prints a single
verdict line, so ``pytest tests/test_acceptance.py -s`` reads as a checklist.
The oracles are imported from the unit suites rather than re-derived, keeping
one authoritative reference implementation per quantity.
"""

import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from trainscope import (
    BatchRamp,
    DataSource,
    Inventory,
    RunSpec,
    ScheduleSpec,
    StageRecipe,
    batch_size_at,
    build_trajectory_set,
    build_training_plan,
    decode_bf16_bits,
    decode_f16_bits,
    detect_plateaus,
    detect_spikes,
    discrete_frechet,
    distance_series,
    gen_converging_run,
    gen_loss_curve,
    ingest_series,
    lr_at,
    plan_stage,
    tensor_stats,
    validate_recipe,
)
from trainscope.cli import main
from trainscope.frechet import FrechetMode

from conftest import scan_run
from golden_utils import GOLDEN_DIR, GOLDEN_FILES, write_bundle
from test_checkpoint_io import bf16_reference, f16_reference
from test_frechet import frechet_brute, random_curve
from test_mixture import V3_PROPORTIONS, balanced_inventory
from test_weight_stats import two_pass_stats

REPO = Path(__file__).resolve().parent.parent


@contextmanager
def criterion(num: int, label: str):
    """Print one PASS/FAIL line per criterion, then let pytest do its thing."""
    try:
        yield
    except BaseException:
        print(f"\nACCEPTANCE FAIL: criterion {num:2d} - {label}")
        raise
    print(f"\nACCEPTANCE PASS: criterion {num:2d} - {label}")


def test_criterion_01_distance_oracle():
    with criterion(1, "Frechet DP equals brute-force coupling search (200 pairs, <5s)"):
        rng = np.random.default_rng(11)
        planar = FrechetMode(mode="planar")
        start = time.perf_counter()
        checked = 0
        for _ in range(100):
            m, n = rng.integers(1, 7, size=2)
            p, q = random_curve(rng, m), random_curve(rng, n)
            assert abs(discrete_frechet(p, q) - frechet_brute(p, q)) <= 1e-12
            checked += 1
        for _ in range(100):
            m, n = rng.integers(1, 7, size=2)
            p = random_curve(rng, m, with_layers=True)
            q = random_curve(rng, n, with_layers=True)
            got = discrete_frechet(p, q, planar)
            assert abs(got - frechet_brute(p, q, planar)) <= 1e-12
            checked += 1
        elapsed = time.perf_counter() - start
        assert checked == 200
        assert elapsed < 5.0, f"oracle sweep took {elapsed:.2f}s"


def test_criterion_02_metric_properties():
    with criterion(2, "identity, symmetry, and coupling bounds on 1000 random pairs"):
        rng = np.random.default_rng(23)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            p, q = random_curve(rng, n), random_curve(rng, n)
            d = discrete_frechet(p, q)
            assert discrete_frechet(p, p) == 0.0
            assert discrete_frechet(q, p) == d
            # any coupling pairs both endpoint pairs, so each is a lower bound
            assert d >= abs(p[0] - q[0])
            assert d >= abs(p[-1] - q[-1])
            # the index-aligned coupling is feasible, so it is an upper bound
            assert d <= np.max(np.abs(p - q))


def test_criterion_03_bit_decoding_exhaustive():
    with criterion(3, "all BF16 and all finite F16 patterns decode exactly"):
        bits = np.arange(65536, dtype=np.uint16)

        got = decode_bf16_bits(bits)
        want = np.array([bf16_reference(b) for b in range(65536)])
        agree = (got == want) | (np.isnan(got) & np.isnan(want))
        assert int((~agree).sum()) == 0

        finite = (bits >> 10) & 0x1F != 0x1F
        assert int(finite.sum()) == 63_488
        got = decode_f16_bits(bits)[finite]
        want = np.array([f16_reference(int(b)) for b in bits[finite]])
        assert int((got != want).sum()) == 0


def test_criterion_04_streaming_stats_oracle():
    with criterion(4, "streaming std matches two-pass oracle; shift/scale laws hold"):
        rng = np.random.default_rng(404)
        x = rng.standard_normal(1_000_000) * 0.02 + 0.003

        got = tensor_stats(x)
        want = two_pass_stats(x)
        assert got.mean == pytest.approx(want.mean, rel=1e-9)
        assert got.std == pytest.approx(want.std, rel=1e-9)
        assert got.rms == pytest.approx(want.rms, rel=1e-9)

        shifted = tensor_stats(x + 1000.0)
        assert shifted.std == pytest.approx(got.std, rel=1e-10)
        scaled = tensor_stats(x * 3.7)
        assert scaled.std == pytest.approx(3.7 * got.std, rel=1e-10)


def test_criterion_05_converging_run_end_to_end(tmp_path):
    with criterion(5, "default synthetic run: 9 strictly decreasing distance series, <10s"):
        start = time.perf_counter()
        paths = gen_converging_run(RunSpec(), tmp_path / "run")
        tset = build_trajectory_set(scan_run(paths))
        series = distance_series(tset)
        elapsed = time.perf_counter() - start

        assert len(series) == 9
        for s in series:
            values = [pt.normalized for pt in s.points]
            assert len(values) == 5
            assert all(a > b for a, b in zip(values, values[1:])), s.role
        assert elapsed < 10.0, f"pipeline took {elapsed:.2f}s"


def test_criterion_06_boundary_arithmetic():
    with criterion(6, "cumulative stage boundaries are exact for both budget sets"):
        inv = Inventory(sources=[DataSource("web-en", "Web", "en", 1e6)])

        def plan_for(budgets, stages):
            recipes = [
                StageRecipe(stage, {"Web": 1.0}, float(budget))
                for stage, budget in zip(stages, budgets)
            ]
            total = float(sum(budgets))
            schedule = ScheduleSpec(1.5e-4, 1.5e-5, 2.0, total)
            return build_training_plan(recipes, inv, schedule)

        plan = plan_for([523, 1053, 298], ("K6", "K62", "K65"))
        assert plan.boundaries_b == [523.0, 1576.0, 1874.0]
        plan = plan_for([203, 719, 347], ("K61", "K63", "K64"))
        assert plan.boundaries_b == [203.0, 922.0, 1269.0]


def test_criterion_07_recipe_validation():
    with criterion(7, "reference blend sums to exactly 1; band and epoch warnings fire"):
        recipe = StageRecipe("K65", V3_PROPORTIONS, 300.0)
        assert recipe.check_sum() == 1.0
        assert math.fsum(V3_PROPORTIONS.values()) == 1.0
        assert validate_recipe(recipe, balanced_inventory()) == []

        even = Inventory(
            sources=[
                DataSource("web-zh", "Web", "zh", 100.0),
                DataSource("web-en", "Web", "en", 100.0),
            ]
        )
        notes = validate_recipe(StageRecipe("K6", {"Web": 1.0}, 50.0), even)
        assert any("zh:en" in n for n in notes)

        thin = Inventory(sources=[DataSource("only", "Web", "en", 10.0)])
        plan = plan_stage(StageRecipe("K6", {"Web": 1.0}, 40.0), thin)
        assert plan.allocations["only"].epochs == 4.0
        assert len(plan.diagnostics) == 1


def test_criterion_08_schedule_anchors():
    with criterion(8, "LR warmup/decay anchors and batch ramp endpoints are exact"):
        schedule = ScheduleSpec(1.5e-4, 1.5e-5, 2.0, 1874.0)
        assert lr_at(2.0, schedule) == 1.5e-4
        assert lr_at(1874.0, schedule) == 1.5e-5
        midpoint = 2.0 + (1874.0 - 2.0) / 2.0
        assert lr_at(midpoint, schedule) == pytest.approx(8.25e-5, abs=1e-12)

        ramp = BatchRamp(start=32, increment=32, ramp_samples=2_000_000, final=1024)
        assert batch_size_at(0, ramp) == 32
        assert batch_size_at(1_000_000, ramp) == 544
        assert batch_size_at(2_000_000, ramp) == 1024
        assert batch_size_at(50_000_000, ramp) == 1024


def test_criterion_09_detector_ground_truth(tmp_path):
    with criterion(9, "spike recall 100% with zero false positives; plateau within one window"):
        curve, sidecar = gen_loss_curve("with_spikes", tmp_path / "spiky.jsonl")
        truth = json.loads(Path(sidecar).read_text())
        events = detect_spikes(ingest_series(curve))
        assert {e.tokens_b for e in events} == {s["tokens_b"] for s in truth["spikes"]}

        curve, sidecar = gen_loss_curve("plateau_then_drop", tmp_path / "flat.jsonl")
        truth = json.loads(Path(sidecar).read_text())
        series = ingest_series(curve)
        span = series.points[-1][0] - series.points[0][0]
        window = span / 5.0
        events = detect_plateaus(series, window, 0.01)
        assert len(events) == 1
        (segment,) = truth["plateaus"]
        assert abs(events[0].window_start_b - segment["start_b"]) <= window
        assert abs(events[0].window_end_b - segment["end_b"]) <= window


def test_criterion_10_byte_determinism(tmp_path):
    with criterion(10, "scan/frechet/plan/report byte-stable; bundle matches golden files"):
        run_dir = tmp_path / "run"
        gen_converging_run(RunSpec(), run_dir)

        def rerun(cmd):
            outs = []
            for tag in ("a", "b"):
                out = tmp_path / f"{cmd[0]}-{tag}.json"
                assert main([*cmd, "--out", str(out)]) == 0
                outs.append(out.read_bytes())
            assert outs[0] == outs[1], f"{cmd[0]} output changed between runs"

        rerun(["scan", str(run_dir)])
        rerun(["frechet", str(run_dir)])
        rerun(
            [
                "plan",
                str(REPO / "recipes" / "v3_single_stage.json"),
                str(REPO / "recipes" / "inventory_example.json"),
            ]
        )

        # two full report bundles from independently regenerated inputs
        bundles = []
        for tag in ("one", "two"):
            out_dir = tmp_path / f"bundle-{tag}"
            write_bundle(tmp_path / f"inputs-{tag}", out_dir)
            bundles.append(out_dir)
        for name in GOLDEN_FILES:
            fresh = (bundles[0] / name).read_bytes()
            assert fresh == (bundles[1] / name).read_bytes(), name
            assert fresh == (GOLDEN_DIR / name).read_bytes(), f"{name} != golden"


def test_criterion_11_scan_performance(tmp_path):
    with criterion(11, "100 MB checkpoint scan under 5s; --jobs 4 not slower than --jobs 1"):
        big = tmp_path / "big"
        spec = RunSpec(layers=4, tokens_schedule_b=(100.0,), tensor_elems=345_744)
        paths = gen_converging_run(spec, big)
        payload = sum(container.stat().st_size for container, _ in paths)
        assert payload >= 100 * 1024 * 1024

        start = time.perf_counter()
        assert main(["scan", str(big), "--jobs", "1", "--out", str(tmp_path / "big.json")]) == 0
        elapsed = time.perf_counter() - start
        assert elapsed < 5.0, f"scan took {elapsed:.2f}s"

        small = tmp_path / "six"
        gen_converging_run(RunSpec(), small)

        def timed(jobs: int) -> float:
            out = tmp_path / f"jobs{jobs}.json"
            t0 = time.perf_counter()
            assert main(["scan", str(small), "--jobs", str(jobs), "--out", str(out)]) == 0
            return time.perf_counter() - t0

        t1, t4 = timed(1), timed(4)
        assert t4 <= t1 + 0.75, f"--jobs 4 ({t4:.2f}s) slower than --jobs 1 ({t1:.2f}s)"
