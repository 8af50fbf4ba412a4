"""Command-line entry point.

Subcommands: ``run`` (config-driven episode sweep with JSON/CSV reports),
``bench`` (fit/predict timing at benchmark sizes), ``verify`` (seeded
property suite), and ``synth`` (emit a synthetic dataset to disk).

Exit codes: 0 success, 1 runtime failure, 2 configuration error (the
diagnostic names the offending field).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .episode import SynthConfig, load_index, synth_dataset
from .errors import GpsegError, InvalidConfig
from .evaluate import PipelineConfig, shots_sweep
from .fileio import fmap_read
from .gp import ZLayout, fit, predict
from .kernels import FAMILIES, KernelSpec, default_length_sq
from .verify import run_all

_LAYOUTS = {
    "mean": ZLayout.MEAN,
    "mean_var": ZLayout.MEAN_VAR,
    "mean_cov_window": ZLayout.MEAN_COV_WINDOW,
}

# Phase labels for bench output, matching the published timing table.
PHASE_FIT = "GP preparation on support"
PHASE_PREDICT = "GP inference on query"

_SYNTH_FIELDS = {
    "n_classes",
    "images_per_class",
    "feature_grid",
    "stride",
    "d",
    "prototypes_per_class",
    "background_prototypes",
    "class_separation",
    "feature_noise",
    "mask_fraction",
    "n_folds",
}


def _synth_config(doc: dict, where: str) -> SynthConfig:
    unknown = set(doc) - _SYNTH_FIELDS
    if unknown:
        raise InvalidConfig(f"{where}: unknown fields {sorted(unknown)}")
    kw = dict(doc)
    for key in ("feature_grid", "mask_fraction"):
        if key in kw:
            kw[key] = tuple(kw[key])
    try:
        cfg = SynthConfig(**kw)
        cfg.validate()
    except TypeError as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc
    except InvalidConfig as exc:
        raise InvalidConfig(f"{where}: {exc}") from exc
    return cfg


def resolve_run_config(doc: dict, seed=None, workers=None) -> dict:
    """Validate a run-config document and fill in every default.

    Returns a plain dict (JSON-serializable) that is echoed verbatim into
    the report so no run is ambiguous.
    """
    if not isinstance(doc, dict):
        raise InvalidConfig("config: top level must be an object")
    known = {
        "dataset",
        "fold",
        "kernel",
        "noise_sq",
        "shots",
        "episodes_per_shot",
        "z_layout",
        "encoder",
        "downsample_query",
        "tau",
        "seed",
        "sample_mode",
        "workers",
    }
    unknown = set(doc) - known
    if unknown:
        raise InvalidConfig(f"config: unknown fields {sorted(unknown)}")

    dataset = doc.get("dataset")
    if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in (
        "synthetic",
        "index",
    ):
        raise InvalidConfig(
            "dataset: must be an object with exactly one of 'synthetic' or 'index'"
        )
    if "synthetic" in dataset:
        synth = _synth_config(dataset["synthetic"], "dataset.synthetic")
        dataset_resolved = {"synthetic": asdict(synth)}
    else:
        dataset_resolved = {"index": str(dataset["index"])}

    kernel = dict(doc.get("kernel", {}))
    family = kernel.pop("family", "se")
    if family not in FAMILIES:
        raise InvalidConfig(f"kernel: unknown family {family!r}, expected {FAMILIES}")
    sigma_f_sq = kernel.pop("sigma_f_sq", 1.0)
    length_sq = kernel.pop("length_sq", None)
    alpha = kernel.pop("alpha", 1.0)
    if kernel:
        raise InvalidConfig(f"kernel: unknown fields {sorted(kernel)}")

    shots = doc.get("shots", [1, 5])
    if (
        not isinstance(shots, list)
        or not shots
        or any(not isinstance(s, int) or s < 1 for s in shots)
        or sorted(shots) != shots
    ):
        raise InvalidConfig(f"shots: must be a non-empty ascending list of ints, got {shots}")

    episodes = doc.get("episodes_per_shot", 100)
    if not isinstance(episodes, int) or episodes < 1:
        raise InvalidConfig(f"episodes_per_shot: must be a positive int, got {episodes}")

    layout = doc.get("z_layout", "mean_var")
    if layout not in _LAYOUTS:
        raise InvalidConfig(
            f"z_layout: must be one of {sorted(_LAYOUTS)}, got {layout!r}"
        )

    encoder = dict(doc.get("encoder", {}))
    enc_kind = encoder.pop("kind", "avgpool")
    enc_dim = encoder.pop("e", 1)
    enc_seed = encoder.pop("seed", 0)
    if encoder:
        raise InvalidConfig(f"encoder: unknown fields {sorted(encoder)}")
    if enc_kind not in ("avgpool", "random"):
        raise InvalidConfig(f"encoder.kind: must be 'avgpool' or 'random', got {enc_kind!r}")
    if not isinstance(enc_dim, int) or enc_dim < 1:
        raise InvalidConfig(f"encoder.e: must be a positive int, got {enc_dim}")
    if enc_kind == "avgpool" and enc_dim != 1:
        raise InvalidConfig("encoder.e: avgpool encoder is one-dimensional")

    mode = doc.get("sample_mode", "eval")
    if mode not in ("eval", "train"):
        raise InvalidConfig(f"sample_mode: must be 'eval' or 'train', got {mode!r}")

    fold = doc.get("fold", 0)
    if not isinstance(fold, int) or fold < 0:
        raise InvalidConfig(f"fold: must be a non-negative int, got {fold}")

    resolved_seed = seed if seed is not None else doc.get("seed", 0)
    resolved_workers = workers if workers is not None else doc.get("workers", 1)
    if not isinstance(resolved_workers, int) or resolved_workers < 1:
        raise InvalidConfig(f"workers: must be a positive int, got {resolved_workers}")

    return {
        "dataset": dataset_resolved,
        "fold": fold,
        "kernel": {
            "family": family,
            "sigma_f_sq": sigma_f_sq,
            "length_sq": length_sq,
            "alpha": alpha,
        },
        "noise_sq": doc.get("noise_sq", 0.01),
        "shots": shots,
        "episodes_per_shot": episodes,
        "z_layout": layout,
        "encoder": {"kind": enc_kind, "e": enc_dim, "seed": enc_seed},
        "downsample_query": bool(doc.get("downsample_query", False)),
        "tau": float(doc.get("tau", 0.5)),
        "seed": int(resolved_seed),
        "sample_mode": mode,
        "workers": resolved_workers,
    }


def _materialize(resolved: dict, out_dir: Path):
    """Turn a resolved config into a dataset index and a pipeline config."""
    if "synthetic" in resolved["dataset"]:
        synth = _synth_config(
            {
                k: v
                for k, v in resolved["dataset"]["synthetic"].items()
                if k in _SYNTH_FIELDS
            },
            "dataset.synthetic",
        )
        index = synth_dataset(synth, resolved["seed"], out_dir / "dataset")
        d = synth.d
    else:
        index = load_index(resolved["dataset"]["index"])
        if not index.entries:
            raise InvalidConfig("dataset.index: index lists no images")
        d = fmap_read(index.feature_file(index.entries[0])).d
    if resolved["fold"] >= len(index.folds):
        raise InvalidConfig(
            f"fold: dataset has {len(index.folds)} folds, got fold {resolved['fold']}"
        )
    kernel = resolved["kernel"]
    length_sq = kernel["length_sq"]
    if length_sq is None:
        length_sq = default_length_sq(d)
        kernel["length_sq"] = length_sq
    try:
        spec = KernelSpec(
            family=kernel["family"],
            sigma_f_sq=kernel["sigma_f_sq"],
            length_sq=length_sq,
            alpha=kernel["alpha"],
        )
    except GpsegError as exc:
        raise InvalidConfig(f"kernel: {exc}") from exc
    if not (isinstance(resolved["noise_sq"], (int, float)) and resolved["noise_sq"] >= 0):
        raise InvalidConfig(f"noise_sq: must be >= 0, got {resolved['noise_sq']}")
    pipeline = PipelineConfig(
        spec=spec,
        noise_sq=float(resolved["noise_sq"]),
        layout=_LAYOUTS[resolved["z_layout"]],
        encoder=resolved["encoder"]["kind"],
        encoder_dim=resolved["encoder"]["e"],
        encoder_seed=resolved["encoder"]["seed"],
        downsample_query=resolved["downsample_query"],
        tau=resolved["tau"],
    )
    return index, pipeline


def _write_reports(out_dir: Path, resolved: dict, result) -> None:
    csv_lines = ["shots,miou,mean_variance"]
    for row in result.rows:
        csv_lines.append(f"{row.shots},{row.miou:.6f},{row.mean_variance:.6e}")
    (out_dir / "sweep.csv").write_text("\n".join(csv_lines) + "\n")
    report = {
        "tool": {"name": "gpseg", "version": __version__},
        "config": resolved,
        "classes": list(result.classes),
        "rows": [asdict(r) for r in result.rows],
        "episodes": {
            str(k): [asdict(r) for r in reports]
            for k, reports in result.reports.items()
        },
        "notes": {
            "iou_resolution": "query feature grid (not the source image grid)",
            "timings": "per-episode millisecond timings are not deterministic",
        },
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n"
    )


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    try:
        doc = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"config error: config: file not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: config: not valid JSON ({exc})", file=sys.stderr)
        return 2
    try:
        resolved = resolve_run_config(doc, seed=args.seed, workers=args.workers)
        out_dir.mkdir(parents=True, exist_ok=True)
        index, pipeline = _materialize(resolved, out_dir)
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    result = shots_sweep(
        index,
        resolved["fold"],
        resolved["shots"],
        resolved["episodes_per_shot"],
        pipeline,
        resolved["seed"],
        workers=resolved["workers"],
        mode=resolved["sample_mode"],
    )
    _write_reports(out_dir, resolved, result)
    for row in result.rows:
        print(f"shots={row.shots:3d}  miou={row.miou:.4f}  mean_variance={row.mean_variance:.6f}")
    print(f"report: {out_dir / 'report.json'}")
    print(f"sweep:  {out_dir / 'sweep.csv'}")
    return 0


def bench_timings(
    support_sizes=(640, 1280), d=512, n_queries=256, reps=100, seed=0
) -> dict:
    """Fit/predict wall times (ms) at benchmark shapes, single-threaded.

    Reports the mean and the median over ``reps`` repetitions after a
    warm-up call; the scaling ratio uses medians, which shrug off scheduler
    noise on shared machines.
    """
    rng = np.random.default_rng(seed)
    spec = KernelSpec(family="se", sigma_f_sq=1.0, length_sq=default_length_sq(d))
    out = {
        "d": d,
        "n_queries": n_queries,
        "reps": reps,
        "fit_ms": {},
        "fit_ms_median": {},
        "predict_ms": {},
        "predict_ms_median": {},
    }

    def timed(fn):
        times = []
        for _ in range(reps):
            t0 = time.perf_counter()
            fn()
            times.append(time.perf_counter() - t0)
        return float(np.mean(times) * 1e3), float(np.median(times) * 1e3)

    with threadpool_limits(limits=1):
        for n_s in support_sizes:
            x = rng.standard_normal((n_s, d))
            y = rng.standard_normal((n_s, 1))
            q = rng.standard_normal((n_queries, d))
            model = fit(spec, 0.01, x, y)  # warm-up: allocator, BLAS init
            predict(model, q)
            out["fit_ms"][n_s], out["fit_ms_median"][n_s] = timed(
                lambda: fit(spec, 0.01, x, y)
            )
            out["predict_ms"][n_s], out["predict_ms_median"][n_s] = timed(
                lambda: predict(model, q)
            )
    sizes = sorted(out["fit_ms_median"])
    if len(sizes) >= 2:
        out["fit_scaling_ratio"] = (
            out["fit_ms_median"][sizes[-1]] / out["fit_ms_median"][sizes[0]]
        )
    return out


def cmd_bench(args) -> int:
    sizes = tuple(args.support_sizes)
    if any(s < 1 for s in sizes):
        print("config error: support-sizes: must be positive", file=sys.stderr)
        return 2
    result = bench_timings(
        support_sizes=sizes,
        d=args.d,
        n_queries=args.queries,
        reps=args.reps,
        seed=args.seed or 0,
    )
    shots_note = "(5-shot stride-32 grid of a 512x512 image gives n_s = 5*16*16 = 1280)"
    print(f"single-threaded, d={result['d']}, mean ms over {result['reps']} reps")
    print(shots_note)
    for n_s in sorted(result["fit_ms"]):
        print(f"  n_s={n_s:5d}  {PHASE_FIT}: {result['fit_ms'][n_s]:8.1f}")
        print(
            f"  n_s={n_s:5d}  {PHASE_PREDICT} ({result['n_queries']} queries): "
            f"{result['predict_ms'][n_s]:8.1f}"
        )
    if "fit_scaling_ratio" in result:
        print(f"  fit time ratio across sizes (medians): {result['fit_scaling_ratio']:.2f}")
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "bench.json").write_text(
            json.dumps(result, indent=2, sort_keys=True, default=str) + "\n"
        )
        print(f"bench: {out_dir / 'bench.json'}")
    return 0


def cmd_verify(args) -> int:
    results = run_all(fast=args.fast)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:35s} {status}  {r.detail}")
    if failed:
        print(f"{len(failed)} of {len(results)} properties failed", file=sys.stderr)
        return 1
    print(f"all {len(results)} properties passed")
    return 0


def cmd_synth(args) -> int:
    try:
        doc = json.loads(Path(args.config).read_text()) if args.config else {}
    except FileNotFoundError:
        print(f"config error: config: file not found: {args.config}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"config error: config: not valid JSON ({exc})", file=sys.stderr)
        return 2
    if "dataset" in doc and "synthetic" in doc.get("dataset", {}):
        doc = doc["dataset"]["synthetic"]
    try:
        cfg = _synth_config(doc, "synthetic")
    except InvalidConfig as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    index = synth_dataset(cfg, args.seed or 0, Path(args.out))
    print(f"{len(index.entries)} images, {len(index.folds)} folds")
    print(f"index: {Path(args.out) / 'index.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpseg",
        description="GP few-shot segmentation engine: episode sweeps, benchmarks, verification.",
    )
    parser.add_argument("--version", action="version", version=f"gpseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a config-driven episode sweep")
    p_run.add_argument("--config", required=True, help="JSON run configuration")
    p_run.add_argument("--seed", type=int, default=None, help="override config seed")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--workers", type=int, default=None, help="episode worker processes")
    p_run.set_defaults(func=cmd_run)

    p_bench = sub.add_parser("bench", help="time fit/predict at benchmark sizes")
    p_bench.add_argument("--support-sizes", type=int, nargs="+", default=[640, 1280])
    p_bench.add_argument("--d", type=int, default=512)
    p_bench.add_argument("--queries", type=int, default=256)
    p_bench.add_argument("--reps", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", default=None, help="write bench.json here")
    p_bench.set_defaults(func=cmd_bench)

    p_verify = sub.add_parser("verify", help="run the seeded property suite")
    p_verify.add_argument("--fast", action="store_true", help="fewer instances per property")
    p_verify.set_defaults(func=cmd_verify)

    p_synth = sub.add_parser("synth", help="emit a synthetic dataset to disk")
    p_synth.add_argument("--config", default=None, help="JSON synthetic-dataset configuration")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="dataset directory")
    p_synth.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except GpsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
