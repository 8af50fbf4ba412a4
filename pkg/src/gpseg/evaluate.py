"""Episode scoring: readouts, per-class IoU accumulation, shot sweeps.

IoU is accumulated per class over all episodes of a fold and only then
averaged over classes. Counters are exact integers, so accumulation order
and worker count cannot change any result. Sweeps share one query sequence
across shot counts, and supports for the same episode index are nested as
the shot count grows.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .episode import (
    EVAL_STYLE,
    DatasetIndex,
    EpisodePlan,
    downsample_encoding_half,
    downsample_half,
    encode_mask_avgpool,
    encode_mask_random_features,
    encoding_anchor,
    load_episode,
    plan_episode,
)
from .errors import EmptyClass, IncompatibleLayout, InvalidConfig, ShapeMismatch
from .fileio import MaskMap
from .gp import ZLayout, ZRepresentation, build_z, fit, predict
from .kernels import KernelSpec
from .linalg import as_matrix


@dataclass(frozen=True)
class SegPrediction:
    """Binary segmentation at the query grid resolution."""

    h: int
    w: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.h, self.w):
            raise ShapeMismatch(
                f"prediction shape {self.data.shape} != ({self.h}, {self.w})"
            )


class ClassAccumulator:
    """Running intersection/union pixel counts per class (exact integers)."""

    def __init__(self):
        self.counts: dict[int, list[int]] = {}

    def add(self, class_id: int, intersection: int, union: int) -> None:
        if intersection > union:
            raise ShapeMismatch(f"intersection {intersection} > union {union}")
        entry = self.counts.setdefault(int(class_id), [0, 0])
        entry[0] += int(intersection)
        entry[1] += int(union)

    def merge(self, other: "ClassAccumulator") -> None:
        for class_id, (i, u) in other.counts.items():
            self.add(class_id, i, u)


@dataclass(frozen=True)
class EpisodeReport:
    """Outcome of one scored episode."""

    class_id: int
    shots: int
    query_id: str
    intersection: int
    union: int
    mean_variance: float
    max_variance: float
    fit_ms: float
    predict_ms: float
    total_ms: float


def threshold_readout(z: ZRepresentation, tau: float = 0.5) -> SegPrediction:
    """Binarize a one-dimensional average-pool mean at ``tau``.

    A cell is foreground iff its posterior mean exceeds ``tau``; a mean
    exactly equal to ``tau`` stays background.
    """
    if z.layout not in (ZLayout.MEAN, ZLayout.MEAN_VAR):
        raise IncompatibleLayout(f"cannot threshold layout {z.layout.value}")
    e = z.data.shape[1] - (1 if z.layout is ZLayout.MEAN_VAR else 0)
    if e != 1:
        raise IncompatibleLayout(
            f"threshold readout needs a 1-dimensional encoding, got {e}"
        )
    if z.spatial is None:
        raise IncompatibleLayout("representation carries no spatial grid")
    h, w = z.spatial
    grid = (z.data[:, 0] > tau).astype(np.uint8).reshape(h, w)
    return SegPrediction(h=h, w=w, data=grid)


def mean_block(z: ZRepresentation) -> np.ndarray:
    """Posterior-mean columns of a representation, for any layout."""
    if z.layout is ZLayout.MEAN:
        return z.data
    if z.layout is ZLayout.MEAN_VAR:
        return z.data[:, :-1]
    return z.data[:, :-25]


def anchor_readout(
    z: ZRepresentation, anchor: np.ndarray, tau: float = 0.5
) -> SegPrediction:
    """Binarize by projecting predicted encodings onto the all-foreground axis.

    ``anchor`` is the encoding of a fully foreground cell; the projection
    recovers a foreground fraction, thresholded like ``threshold_readout``.
    With the average-pool encoder the anchor is 1 and this degenerates to a
    plain mean threshold.
    """
    if z.spatial is None:
        raise IncompatibleLayout("representation carries no spatial grid")
    mean = mean_block(z)
    if mean.shape[1] != anchor.size:
        raise IncompatibleLayout(
            f"anchor size {anchor.size} != encoding dimension {mean.shape[1]}"
        )
    fraction = mean @ anchor / float(anchor @ anchor)
    h, w = z.spatial
    grid = (fraction > tau).astype(np.uint8).reshape(h, w)
    return SegPrediction(h=h, w=w, data=grid)


def downsample_mask_majority(mask: MaskMap, target) -> MaskMap:
    """Ground truth at grid resolution: majority vote, ties to background."""
    frac = encode_mask_avgpool(mask, target)
    grid = (frac.data[:, 0] > 0.5).astype(np.uint8).reshape(target)
    return MaskMap(h=target[0], w=target[1], data=grid)


def accumulate_iou(
    acc: ClassAccumulator, pred: SegPrediction, gt: MaskMap, class_id: int
) -> ClassAccumulator:
    """Add one episode's foreground intersection and union to a class."""
    if (pred.h, pred.w) != (gt.h, gt.w):
        raise ShapeMismatch(
            f"prediction {pred.h}x{pred.w} vs ground truth {gt.h}x{gt.w}"
        )
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    acc.add(class_id, int((p & g).sum()), int((p | g).sum()))
    return acc


def miou(acc: ClassAccumulator, classes) -> float:
    """Mean over classes of accumulated intersection / union."""
    ratios = []
    for c in classes:
        inter, union = acc.counts.get(int(c), (0, 0))
        if union == 0:
            raise EmptyClass(f"class {c} has union 0")
        ratios.append(inter / union)
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# Episode pipeline


@dataclass(frozen=True)
class PipelineConfig:
    """Resolved numerical knobs for running one episode end to end."""

    spec: KernelSpec
    noise_sq: float = 0.01
    layout: ZLayout = ZLayout.MEAN_VAR
    encoder: str = "avgpool"
    encoder_dim: int = 1
    encoder_seed: int = 0
    downsample_query: bool = False
    tau: float = 0.5

    def __post_init__(self):
        if self.encoder not in ("avgpool", "random"):
            raise InvalidConfig(f"encoder must be 'avgpool' or 'random', got {self.encoder!r}")
        if self.encoder == "avgpool" and self.encoder_dim != 1:
            raise InvalidConfig("avgpool encoder is one-dimensional")
        if self.encoder_dim < 1:
            raise InvalidConfig(f"encoder_dim must be >= 1, got {self.encoder_dim}")


def _encode(cfg: PipelineConfig, mask: MaskMap, target) -> np.ndarray:
    if cfg.encoder == "avgpool":
        enc = encode_mask_avgpool(mask, target)
    else:
        enc = encode_mask_random_features(
            mask, target, cfg.encoder_dim, cfg.encoder_seed
        )
    return downsample_encoding_half(enc).data


def run_episode(
    index: DatasetIndex, plan: EpisodePlan, cfg: PipelineConfig, shots: int
) -> EpisodeReport:
    """Load, fit, predict, read out, and score a single episode.

    Support feature maps and their mask encodings are average-pooled by a
    factor of 2 before fitting; the query grid keeps its stride unless
    ``downsample_query`` is set. IoU is computed at the query grid
    resolution against a majority-vote downsampling of the ground truth.
    """
    t_start = time.perf_counter()
    ep = load_episode(index, plan)
    feats = []
    encs = []
    enc_block = None
    for fm, mask in ep.support:
        feats.append(downsample_half(fm).data)
        encs.append(_encode(cfg, mask, (fm.h, fm.w)))
        enc_block = (mask.h // fm.h, mask.w // fm.w)
    support_x = np.vstack(feats)
    support_y = as_matrix(np.vstack(encs), "support encodings")
    qfm = ep.query[0]
    if cfg.downsample_query:
        qfm = downsample_half(qfm)
    t0 = time.perf_counter()
    model = fit(cfg.spec, cfg.noise_sq, support_x, support_y)
    t1 = time.perf_counter()
    post = predict(model, qfm.data, want_full_cov=cfg.layout is ZLayout.MEAN_COV_WINDOW)
    t2 = time.perf_counter()
    z = build_z(post, cfg.layout, (qfm.h, qfm.w))
    gt_mask = ep.query[1]
    # The anchor must live in the support encoding space, so it is derived
    # from the support encoder's block shape, not the query grid.
    anchor = encoding_anchor(cfg.encoder, enc_block, cfg.encoder_dim, cfg.encoder_seed)
    pred = anchor_readout(z, anchor, cfg.tau)
    gt = downsample_mask_majority(gt_mask, (qfm.h, qfm.w))
    p = pred.data.astype(bool)
    g = gt.data.astype(bool)
    t_end = time.perf_counter()
    return EpisodeReport(
        class_id=ep.class_id,
        shots=shots,
        query_id=ep.query_id,
        intersection=int((p & g).sum()),
        union=int((p | g).sum()),
        mean_variance=float(post.variance.mean()),
        max_variance=float(post.variance.max()),
        fit_ms=(t1 - t0) * 1e3,
        predict_ms=(t2 - t1) * 1e3,
        total_ms=(t_end - t_start) * 1e3,
    )


def _episode_task(args):
    index, plan, cfg, shots = args
    return run_episode(index, plan, cfg, shots)


def _init_worker():
    # Episode matrices are small; BLAS thread fan-out costs more than it buys
    # and pinning it also keeps results independent of the worker count.
    threadpool_limits(limits=1)


@dataclass(frozen=True)
class SweepRow:
    shots: int
    miou: float
    mean_variance: float


@dataclass(frozen=True)
class SweepResult:
    rows: tuple[SweepRow, ...]
    classes: tuple[int, ...]
    reports: dict[int, list[EpisodeReport]] = field(repr=False)


def shots_sweep(
    index: DatasetIndex,
    fold: int,
    shots_list,
    episodes_per_shot: int,
    cfg: PipelineConfig,
    seed: int,
    workers: int = 1,
    mode: str = EVAL_STYLE,
) -> SweepResult:
    """Run the full pipeline once per shot count on a shared query sequence.

    Episode ``i`` uses the rng stream (seed, i) for every shot count, so the
    query, class, and support ordering are paired across rows; the support
    for k shots is a prefix of the support for any larger k.
    """
    shots_list = list(shots_list)
    if not shots_list or sorted(shots_list) != shots_list:
        raise InvalidConfig(f"shots must be non-empty ascending, got {shots_list}")
    if episodes_per_shot < 1:
        raise InvalidConfig(f"episodes_per_shot must be >= 1, got {episodes_per_shot}")
    min_images = max(shots_list) + 1
    rows = []
    reports_by_shot: dict[int, list[EpisodeReport]] = {}
    classes: tuple[int, ...] = ()
    for k in shots_list:
        plans = [
            plan_episode(
                index,
                fold,
                k,
                np.random.default_rng([seed, i]),
                mode=mode,
                position=i,
                min_images=min_images,
            )
            for i in range(episodes_per_shot)
        ]
        tasks = [(index, plan, cfg, k) for plan in plans]
        if workers > 1:
            with ProcessPoolExecutor(
                max_workers=workers, initializer=_init_worker
            ) as pool:
                reports = list(pool.map(_episode_task, tasks, chunksize=8))
        else:
            with threadpool_limits(limits=1):
                reports = [_episode_task(t) for t in tasks]
        acc = ClassAccumulator()
        for r in reports:
            acc.add(r.class_id, r.intersection, r.union)
        classes = tuple(sorted(acc.counts))
        rows.append(
            SweepRow(
                shots=k,
                miou=miou(acc, classes),
                mean_variance=float(np.mean([r.mean_variance for r in reports])),
            )
        )
        reports_by_shot[k] = reports
    return SweepResult(rows=tuple(rows), classes=classes, reports=reports_by_shot)
