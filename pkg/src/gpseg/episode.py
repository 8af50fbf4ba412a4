"""Episode plumbing: dataset index, grid ops, mask encoders, sampling, synth data.

The sampler follows two rules on every draw: the query image never appears
in the support set, and no support image appears twice. Evaluation-style
sampling walks eligible query images in dataset order; training-style
draws them at random.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import (
    IndivisibleDimensions,
    InsufficientImages,
    InvalidConfig,
    OddDimensions,
)
from .fileio import EncodedMask, FeatureMap, MaskMap, fmap_read, fmap_write, mask_read, mask_write


# ---------------------------------------------------------------------------
# Dataset index


@dataclass(frozen=True)
class IndexEntry:
    image_id: str
    class_ids: tuple[int, ...]
    feature_path: str
    mask_path: str


@dataclass(frozen=True)
class DatasetIndex:
    """Image catalogue plus the class-fold partition."""

    root: str
    entries: tuple[IndexEntry, ...]
    folds: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        seen = {}
        for f, classes in enumerate(self.folds):
            for c in classes:
                if c in seen:
                    raise InvalidConfig(f"class {c} appears in folds {seen[c]} and {f}")
                seen[c] = f

    def feature_file(self, entry: IndexEntry) -> Path:
        return Path(self.root) / entry.feature_path

    def mask_file(self, entry: IndexEntry) -> Path:
        return Path(self.root) / entry.mask_path


def save_index(path, index: DatasetIndex) -> None:
    doc = {
        "version": 1,
        "entries": [
            {
                "id": e.image_id,
                "classes": list(e.class_ids),
                "feature": e.feature_path,
                "mask": e.mask_path,
            }
            for e in index.entries
        ],
        "folds": [list(f) for f in index.folds],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_index(path) -> DatasetIndex:
    p = Path(path)
    doc = json.loads(p.read_text())
    entries = tuple(
        IndexEntry(
            image_id=e["id"],
            class_ids=tuple(e["classes"]),
            feature_path=e["feature"],
            mask_path=e["mask"],
        )
        for e in doc["entries"]
    )
    folds = tuple(tuple(f) for f in doc["folds"])
    return DatasetIndex(root=str(p.parent), entries=entries, folds=folds)


# ---------------------------------------------------------------------------
# Grid operations


def _pool2x2(data: np.ndarray, h: int, w: int) -> np.ndarray:
    # Elementwise adds of the four shifted slices keep every channel's
    # rounding independent of its position, unlike an axis reduction.
    c = data.shape[1]
    g = data.reshape(h, w, c)
    s = g[0::2, 0::2] + g[0::2, 1::2] + g[1::2, 0::2] + g[1::2, 1::2]
    return (0.25 * s).reshape((h // 2) * (w // 2), c)


def downsample_half(fm: FeatureMap) -> FeatureMap:
    """Average 2x2 cell blocks per channel, doubling the stride."""
    if fm.h % 2 or fm.w % 2:
        raise OddDimensions(f"grid {fm.h}x{fm.w} is not divisible by 2")
    return FeatureMap(
        h=fm.h // 2,
        w=fm.w // 2,
        d=fm.d,
        stride=fm.stride * 2,
        data=_pool2x2(fm.data, fm.h, fm.w),
        dtype_code=fm.dtype_code,
    )


def downsample_encoding_half(em: EncodedMask) -> EncodedMask:
    """Factor-2 average pooling of a mask encoding."""
    if em.h % 2 or em.w % 2:
        raise OddDimensions(f"grid {em.h}x{em.w} is not divisible by 2")
    return EncodedMask(
        h=em.h // 2, w=em.w // 2, e=em.e, data=_pool2x2(em.data, em.h, em.w)
    )


def _block_shape(mask: MaskMap, target) -> tuple[int, int]:
    th, tw = target
    if th < 1 or tw < 1 or mask.h % th or mask.w % tw:
        raise IndivisibleDimensions(
            f"mask {mask.h}x{mask.w} not divisible into {th}x{tw} cells"
        )
    return mask.h // th, mask.w // tw


def encode_mask_avgpool(mask: MaskMap, target) -> EncodedMask:
    """One-dimensional encoding: foreground fraction per grid cell."""
    th, tw = target
    bh, bw = _block_shape(mask, target)
    counts = mask.data.reshape(th, bh, tw, bw).sum(axis=(1, 3), dtype=np.int64)
    data = (counts / float(bh * bw)).reshape(th * tw, 1)
    return EncodedMask(h=th, w=tw, e=1, data=data)


def _projection_weights(seed: int, bh: int, bw: int, e: int) -> np.ndarray:
    wrng = np.random.default_rng([seed, bh, bw, e])
    return wrng.normal(scale=1.0 / (bh * bw), size=(bh * bw, e))


def encode_mask_random_features(
    mask: MaskMap, target, e: int, seed: int, weights: np.ndarray | None = None
) -> EncodedMask:
    """Multi-dimensional encoding via a fixed seed-derived linear map.

    Each cell's source block is flattened and projected to ``e`` dimensions.
    The map depends only on (seed, block shape, e), so identical masks and
    seeds give identical encodings. ``weights`` overrides the map; a single
    column of 1/block-area reproduces the average-pool encoding.
    """
    th, tw = target
    bh, bw = _block_shape(mask, target)
    if e < 1:
        raise InvalidConfig(f"encoding dimension must be >= 1, got {e}")
    area = bh * bw
    if weights is None:
        weights = _projection_weights(seed, bh, bw, e)
    elif weights.shape != (area, e):
        raise InvalidConfig(f"weights shape {weights.shape} != ({area}, {e})")
    blocks = (
        mask.data.reshape(th, bh, tw, bw)
        .transpose(0, 2, 1, 3)
        .reshape(th * tw, area)
        .astype(np.float64)
    )
    return EncodedMask(h=th, w=tw, e=e, data=blocks @ weights)


def encoding_anchor(
    kind: str, block_shape: tuple[int, int], e: int, seed: int
) -> np.ndarray:
    """Encoding of an all-foreground block; used to read fractions back out."""
    if kind == "avgpool":
        return np.ones(1)
    bh, bw = block_shape
    return _projection_weights(seed, bh, bw, e).sum(axis=0)


# ---------------------------------------------------------------------------
# Episode sampling


@dataclass(frozen=True)
class EpisodePlan:
    """Identifiers for one episode, before any file is touched.

    The query never appears among the supports and supports are distinct.
    """

    class_id: int
    query_id: str
    support_ids: tuple[str, ...]

    def __post_init__(self):
        if self.query_id in self.support_ids:
            raise ValueError(f"query {self.query_id!r} also appears in the support set")
        if len(set(self.support_ids)) != len(self.support_ids):
            raise ValueError("support set repeats an image")


@dataclass(frozen=True)
class Episode:
    """One sampled episode with maps loaded."""

    class_id: int
    support: tuple[tuple[FeatureMap, MaskMap], ...]
    query: tuple[FeatureMap, MaskMap]
    query_id: str
    support_ids: tuple[str, ...]


TRAIN_STYLE = "train"
EVAL_STYLE = "eval"


def plan_episode(
    index: DatasetIndex,
    test_fold: int,
    k: int,
    rng,
    mode: str = EVAL_STYLE,
    position: int = 0,
    min_images: int | None = None,
) -> EpisodePlan:
    """Choose query image, class, and support images for one episode.

    ``min_images`` widens the eligibility floor (default k+1) so paired
    sweeps can share one query sequence across different shot counts.
    """
    if mode not in (TRAIN_STYLE, EVAL_STYLE):
        raise InvalidConfig(f"mode must be '{TRAIN_STYLE}' or '{EVAL_STYLE}'")
    need = max(k + 1, min_images or 0)
    fold_classes = set(index.folds[test_fold])
    by_class: dict[int, list[IndexEntry]] = {c: [] for c in fold_classes}
    for entry in index.entries:
        for c in entry.class_ids:
            if c in fold_classes:
                by_class[c].append(entry)
    eligible_classes = {c for c, lst in by_class.items() if len(lst) >= need}
    if not eligible_classes:
        raise InsufficientImages(
            f"no class in fold {test_fold} has {need} images"
        )
    candidates = [
        e for e in index.entries if eligible_classes.intersection(e.class_ids)
    ]
    if mode == EVAL_STYLE:
        query = candidates[position % len(candidates)]
    else:
        query = candidates[int(rng.integers(len(candidates)))]
    query_classes = sorted(eligible_classes.intersection(query.class_ids))
    class_id = query_classes[int(rng.integers(len(query_classes)))]
    pool = [e for e in by_class[class_id] if e.image_id != query.image_id]
    if len(pool) < k:
        raise InsufficientImages(
            f"class {class_id} has only {len(pool)} images besides the query"
        )
    # A k-prefix of one permutation is a uniform draw without replacement and
    # makes supports nested across increasing k for the same rng stream.
    perm = rng.permutation(len(pool))
    support = tuple(pool[i].image_id for i in perm[:k])
    return EpisodePlan(class_id=class_id, query_id=query.image_id, support_ids=support)


# Episodes revisit the same few files constantly and dataset files are
# write-once, so maps are cached per process keyed on path alone. Call
# clear_map_cache after rewriting a file in place.
@lru_cache(maxsize=1024)
def _cached_fmap(path: str) -> FeatureMap:
    return fmap_read(path)


@lru_cache(maxsize=1024)
def _cached_mask(path: str) -> MaskMap:
    return mask_read(path)


def clear_map_cache() -> None:
    """Drop cached feature maps and masks (after overwriting files in place)."""
    _cached_fmap.cache_clear()
    _cached_mask.cache_clear()


def load_episode(index: DatasetIndex, plan: EpisodePlan) -> Episode:
    by_id = {e.image_id: e for e in index.entries}
    def load(image_id):
        entry = by_id[image_id]
        return (
            _cached_fmap(str(index.feature_file(entry))),
            _cached_mask(str(index.mask_file(entry))),
        )
    return Episode(
        class_id=plan.class_id,
        support=tuple(load(i) for i in plan.support_ids),
        query=load(plan.query_id),
        query_id=plan.query_id,
        support_ids=plan.support_ids,
    )


def sample_episode(
    index: DatasetIndex,
    test_fold: int,
    k: int,
    rng,
    mode: str = EVAL_STYLE,
    position: int = 0,
    min_images: int | None = None,
) -> Episode:
    """Plan and load one episode."""
    return load_episode(
        index, plan_episode(index, test_fold, k, rng, mode, position, min_images)
    )


# ---------------------------------------------------------------------------
# Synthetic dataset


@dataclass(frozen=True)
class SynthConfig:
    """Generator knobs for the synthetic desk-scale dataset.

    ``class_separation`` is the minimum Euclidean distance enforced between
    any two prototypes (class modes and background alike);
    ``feature_noise`` is the RMS norm of the within-class offset added to
    every cell, so separation / noise is a direct hardness ratio. With
    ``prototypes_per_class`` >= 2 the first two modes of each class sit on
    opposite sides of the origin, which no linear readout can fit.
    """

    n_classes: int = 8
    images_per_class: int = 12
    feature_grid: tuple[int, int] = (28, 28)
    stride: int = 16
    d: int = 64
    prototypes_per_class: int = 1
    background_prototypes: int = 3
    class_separation: float = 4.0
    feature_noise: float = 1.0
    mask_fraction: tuple[float, float] = (0.15, 0.6)
    n_folds: int = 4

    def validate(self) -> None:
        if self.n_classes < 2:
            raise InvalidConfig(f"n_classes must be >= 2, got {self.n_classes}")
        if self.images_per_class < 2:
            raise InvalidConfig(
                f"images_per_class must be >= 2, got {self.images_per_class}"
            )
        h, w = self.feature_grid
        if h < 2 or w < 2:
            raise InvalidConfig(f"feature_grid must be >= 2x2, got {h}x{w}")
        if self.stride < 1:
            raise InvalidConfig(f"stride must be >= 1, got {self.stride}")
        if self.d < 1:
            raise InvalidConfig(f"d must be >= 1, got {self.d}")
        if self.prototypes_per_class < 1:
            raise InvalidConfig(
                f"prototypes_per_class must be >= 1, got {self.prototypes_per_class}"
            )
        if self.background_prototypes < 1:
            raise InvalidConfig(
                f"background_prototypes must be >= 1, got {self.background_prototypes}"
            )
        if not (self.class_separation > 0 and np.isfinite(self.class_separation)):
            raise InvalidConfig(
                f"class_separation must be positive, got {self.class_separation}"
            )
        if not (self.feature_noise >= 0 and np.isfinite(self.feature_noise)):
            raise InvalidConfig(
                f"feature_noise must be >= 0, got {self.feature_noise}"
            )
        lo, hi = self.mask_fraction
        if not (0 < lo <= hi < 1):
            raise InvalidConfig(
                f"mask_fraction must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})"
            )
        if not (1 <= self.n_folds <= self.n_classes):
            raise InvalidConfig(
                f"n_folds must be in [1, n_classes], got {self.n_folds}"
            )


def _unit(rng, d):
    v = rng.normal(size=d)
    return v / np.linalg.norm(v)


def _place_prototypes(rng, cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """Class-mode and background prototypes with enforced pairwise separation."""
    sep = cfg.class_separation
    radius = sep
    placed: list[np.ndarray] = []

    def admit(candidate) -> bool:
        return all(np.linalg.norm(candidate - p) >= sep for p in placed)

    def place(candidate=None):
        nonlocal radius
        for attempt in range(200):
            cand = candidate if candidate is not None else _unit(rng, cfg.d) * radius
            if admit(cand):
                placed.append(cand)
                return cand
            candidate = None
            if attempt % 20 == 19:
                radius *= 1.2
        raise InvalidConfig(
            "class_separation too large for the requested prototype count"
        )

    class_protos = np.zeros((cfg.n_classes, cfg.prototypes_per_class, cfg.d))
    for c in range(cfg.n_classes):
        base = place()
        class_protos[c, 0] = base
        if cfg.prototypes_per_class > 1:
            class_protos[c, 1] = place(-base)
        for m in range(2, cfg.prototypes_per_class):
            class_protos[c, m] = place()
    bg = np.stack([place() for _ in range(cfg.background_prototypes)])
    return class_protos, bg


def _blob_mask(rng, h, w, frac_range) -> np.ndarray:
    lo, hi = frac_range
    for _ in range(100):
        rh = int(rng.integers(1, h + 1))
        rw = int(rng.integers(1, w + 1))
        if lo <= (rh * rw) / (h * w) <= hi:
            r0 = int(rng.integers(0, h - rh + 1))
            c0 = int(rng.integers(0, w - rw + 1))
            mask = np.zeros((h, w), dtype=np.uint8)
            mask[r0 : r0 + rh, c0 : c0 + rw] = 1
            return mask
    # Fallback: centered rectangle at the midpoint fraction.
    frac = 0.5 * (lo + hi)
    rh = max(1, min(h, round(h * np.sqrt(frac))))
    rw = max(1, min(w, round(w * np.sqrt(frac))))
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[(h - rh) // 2 : (h - rh) // 2 + rh, (w - rw) // 2 : (w - rw) // 2 + rw] = 1
    return mask


def synth_dataset(cfg: SynthConfig, seed: int, out_dir) -> DatasetIndex:
    """Generate feature/mask files plus an index, deterministically per seed.

    Foreground cells of an image draw features near one or several of its
    class prototypes; background cells draw from a mixture shared by the
    whole dataset. Masks are block-constant rectangles at the feature grid,
    stored upscaled by the stride.
    """
    cfg.validate()
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng([int(seed), 0xD5])
    class_protos, bg_protos = _place_prototypes(rng, cfg)
    h, w = cfg.feature_grid
    sigma = cfg.feature_noise / np.sqrt(cfg.d)
    entries = []
    for c in range(cfg.n_classes):
        for i in range(cfg.images_per_class):
            grid_mask = _blob_mask(rng, h, w, cfg.mask_fraction)
            flat = grid_mask.reshape(-1).astype(bool)
            n_cells = h * w
            features = np.empty((n_cells, cfg.d))
            n_modes = int(rng.integers(1, cfg.prototypes_per_class + 1))
            modes = rng.permutation(cfg.prototypes_per_class)[:n_modes]
            fg_idx = np.flatnonzero(flat)
            cell_modes = modes[rng.integers(0, n_modes, size=fg_idx.size)]
            features[fg_idx] = class_protos[c, cell_modes]
            bg_idx = np.flatnonzero(~flat)
            features[bg_idx] = bg_protos[
                rng.integers(0, cfg.background_prototypes, size=bg_idx.size)
            ]
            if cfg.feature_noise > 0:
                features += sigma * rng.normal(size=features.shape)
            image_id = f"cls{c:02d}_img{i:03d}"
            feature_path = f"features/{image_id}.fmap"
            mask_path = f"masks/{image_id}.msk"
            fmap_write(
                out / feature_path,
                FeatureMap(h=h, w=w, d=cfg.d, stride=cfg.stride, data=features),
            )
            full_mask = np.kron(grid_mask, np.ones((cfg.stride, cfg.stride), np.uint8))
            mask_write(
                out / mask_path,
                MaskMap(h=h * cfg.stride, w=w * cfg.stride, data=full_mask),
            )
            entries.append(
                IndexEntry(
                    image_id=image_id,
                    class_ids=(c,),
                    feature_path=feature_path,
                    mask_path=mask_path,
                )
            )
    folds = tuple(
        tuple(int(c) for c in chunk)
        for chunk in np.array_split(np.arange(cfg.n_classes), cfg.n_folds)
    )
    index = DatasetIndex(root=str(out), entries=tuple(entries), folds=folds)
    save_index(out / "index.json", index)
    return index
