"""Acceptance gate: every release criterion at its stated tolerance.

Each test prints one [PASS]/[FAIL] line so the gate reads as a checklist
under ``pytest tests/test_acceptance.py -v -s``.
"""

import json
import time

import numpy as np
import pytest

from gpseg.cli import bench_timings, main
from gpseg.episode import SynthConfig, synth_dataset
from gpseg.evaluate import PipelineConfig, shots_sweep
from gpseg.fileio import (
    DTYPE_F32,
    DTYPE_F64,
    FeatureMap,
    MaskMap,
    fmap_read,
    fmap_write,
    mask_read,
    mask_write,
)
from gpseg.kernels import LINEAR, RQ, SE, KernelSpec, default_length_sq
from gpseg.verify import (
    check_interpolation,
    check_oracle_equivalence,
    check_query_permutation_equivariance,
    check_ridge_equivalence,
    check_support_permutation_invariance,
    check_variance_monotonicity,
)


def report(name: str, ok: bool, detail: str = ""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}  {detail}")
    assert ok, f"{name}: {detail}"


def test_oracle_equivalence():
    t0 = time.perf_counter()
    res = check_oracle_equivalence(instances=200, tol=1e-8)
    elapsed = time.perf_counter() - t0
    report(
        "oracle equivalence (200 instances, 1e-8 max-abs)",
        res.passed and elapsed < 30.0,
        f"{res.detail}, {elapsed:.1f}s",
    )


def test_ridge_equivalence():
    res = check_ridge_equivalence(instances=50, tol=1e-6)
    report("linear kernel vs ridge regression (50 instances, 1e-6)", res.passed, res.detail)


def test_variance_monotonicity():
    res = check_variance_monotonicity(instances=50, slack=1e-9)
    report("variance monotone in support size (50 instances, 1e-9 slack)", res.passed, res.detail)


def test_support_permutation_invariance():
    res = check_support_permutation_invariance(tol=1e-10)
    report("support permutation invariance (1e-10)", res.passed, res.detail)


def test_query_permutation_equivariance():
    res = check_query_permutation_equivariance()
    report("query permutation equivariance (exact)", res.passed, res.detail)


def test_interpolation():
    res = check_interpolation(tol=1e-4)
    report("interpolation at noise 1e-12 (1e-4)", res.passed, res.detail)


@pytest.fixture(scope="module")
def sweep_dataset(tmp_path_factory):
    # Separation/noise ratio exactly 4, the weakest setting the sweep
    # criterion contemplates.
    cfg = SynthConfig(
        n_classes=4,
        images_per_class=12,
        feature_grid=(14, 14),
        stride=8,
        d=16,
        prototypes_per_class=1,
        background_prototypes=3,
        class_separation=4.0,
        feature_noise=1.0,
        n_folds=2,
    )
    return synth_dataset(cfg, seed=7, out_dir=tmp_path_factory.mktemp("sweep"))


def test_shots_sweep_monotone(sweep_dataset):
    pc = PipelineConfig(spec=KernelSpec(family=SE, length_sq=default_length_sq(16)))
    t0 = time.perf_counter()
    res = shots_sweep(sweep_dataset, 0, [1, 2, 3, 5, 10], 200, pc, seed=1, workers=2)
    elapsed = time.perf_counter() - t0
    mious = {r.shots: r.miou for r in res.rows}
    non_decreasing = all(
        b.miou >= a.miou - 0.01 for a, b in zip(res.rows, res.rows[1:])
    )
    ok = non_decreasing and mious[5] >= 0.9 and elapsed < 120.0
    report(
        "shots sweep non-decreasing, 5-shot miou >= 0.9, < 2 min",
        ok,
        f"mious={[f'{r.miou:.3f}' for r in res.rows]}, {elapsed:.1f}s",
    )


def test_kernel_family_comparison(tmp_path_factory):
    cfg = SynthConfig(
        n_classes=4,
        images_per_class=12,
        feature_grid=(14, 14),
        stride=8,
        d=16,
        prototypes_per_class=2,
        background_prototypes=3,
        class_separation=4.0,
        feature_noise=1.0,
        n_folds=2,
    )
    index = synth_dataset(cfg, seed=7, out_dir=tmp_path_factory.mktemp("multi"))
    scores = {}
    for family in (SE, RQ, LINEAR):
        pc = PipelineConfig(
            spec=KernelSpec(family=family, length_sq=default_length_sq(16))
        )
        res = shots_sweep(index, 0, [5], 200, pc, seed=2, workers=2)
        scores[family] = res.rows[0].miou
    ok = (
        scores[SE] - scores[LINEAR] >= 0.03
        and scores[RQ] - scores[LINEAR] >= 0.03
        and abs(scores[SE] - scores[RQ]) <= 0.02
    )
    report(
        "multi-modal data: SE and RQ beat linear by >= 0.03, agree within 0.02",
        ok,
        f"se={scores[SE]:.3f} rq={scores[RQ]:.3f} linear={scores[LINEAR]:.3f}",
    )


def test_fit_predict_performance():
    result = bench_timings(support_sizes=(640, 1280), d=512, n_queries=256, reps=7, seed=3)
    fit_large = result["fit_ms_median"][1280]
    predict_large = result["predict_ms_median"][1280]
    ratio = result["fit_scaling_ratio"]
    ok = fit_large < 2000.0 and predict_large < 200.0 and 4.0 <= ratio <= 12.0
    report(
        "fit(1280, d=512) < 2 s, predict(256) < 200 ms, cubic ratio in [4, 12]",
        ok,
        f"fit={fit_large:.0f}ms predict={predict_large:.0f}ms ratio={ratio:.1f}",
    )


def test_file_round_trips(tmp_path):
    rng = np.random.default_rng(2024)
    ok = True
    for i in range(100):
        if i % 2 == 0:
            h, w, d = (int(rng.integers(1, 9)) for _ in range(3))
            code = DTYPE_F32 if i % 4 == 0 else DTYPE_F64
            data = rng.standard_normal((h * w, d))
            if code == DTYPE_F32:
                data = data.astype(np.float32).astype(np.float64)
            fm = FeatureMap(h=h, w=w, d=d, stride=int(rng.integers(1, 64)),
                            data=data, dtype_code=code)
            p1, p2 = tmp_path / f"{i}a.fmap", tmp_path / f"{i}b.fmap"
            fmap_write(p1, fm)
            fmap_write(p2, fmap_read(p1))
        else:
            h, w = int(rng.integers(1, 40)), int(rng.integers(1, 40))
            mask = MaskMap(h=h, w=w, data=(rng.random((h, w)) < 0.5).astype(np.uint8))
            p1, p2 = tmp_path / f"{i}a.msk", tmp_path / f"{i}b.msk"
            mask_write(p1, mask)
            mask_write(p2, mask_read(p1))
        ok = ok and p1.read_bytes() == p2.read_bytes()
    report("100 random files round-trip byte-identically", ok)


def test_cli_determinism(tmp_path):
    config = {
        "dataset": {
            "synthetic": {
                "n_classes": 4,
                "images_per_class": 6,
                "feature_grid": [8, 8],
                "stride": 4,
                "d": 8,
                "class_separation": 4.0,
                "feature_noise": 1.0,
                "n_folds": 2,
            }
        },
        "shots": [1, 2, 3],
        "episodes_per_shot": 8,
        "seed": 5,
    }
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(config))
    outs = {}
    for name, extra in (
        ("a", ["--workers", "1"]),
        ("b", ["--workers", "1"]),
        ("c", ["--workers", "4"]),
    ):
        rc = main(["run", "--config", str(cfg), "--out", str(tmp_path / name)] + extra)
        assert rc == 0
        outs[name] = (tmp_path / name / "sweep.csv").read_bytes()
    ok = outs["a"] == outs["b"] == outs["c"]
    report("sweep.csv byte-identical across runs and worker counts", ok)
