"""Aspect-ratio bucketing for mixed-resolution image training.

A bucket layout is a fixed menu of training resolutions under a pixel
budget.  Each image goes to the bucket nearest in log-aspect (or is pruned
when even the best fit is too far off), and an epoch plan shards the
retained images across ranks into single-resolution batches, drawing
buckets with probability proportional to how many of their items remain so
that bucket membership does not bias *when* an image is seen.

Geometry is cover-scale-and-crop: scale the image until it covers the
bucket rectangle, then crop a random window of the bucket size from the
overflowing dimension.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, ParameterError

DEFAULT_MAX_AREA = 512 * 768
DEFAULT_MAX_DIM = 1024
DEFAULT_STEP = 64
DEFAULT_PRUNE_THRESHOLD = 0.7

# Internal dictionary key for the overflow bucket while drawing batches.
_CATCH_ALL = -1


@dataclass(frozen=True)
class BucketLayout:
    """An immutable set of (width, height) training resolutions."""

    buckets: tuple
    max_area: int = DEFAULT_MAX_AREA
    max_dim: int = DEFAULT_MAX_DIM
    step: int = DEFAULT_STEP

    def __post_init__(self):
        seen = set()
        for w, h in self.buckets:
            if (w, h) in seen:
                raise ParameterError(f"duplicate bucket {(w, h)}")
            seen.add((w, h))
            if w % self.step or h % self.step:
                raise ParameterError(f"bucket {(w, h)} not a multiple of {self.step}")
            # (512, 512) is the unconditional fallback resolution and is
            # allowed even when the budget would otherwise exclude it.
            if (w, h) == (512, 512):
                continue
            if w > self.max_dim or h > self.max_dim:
                raise ParameterError(f"bucket {(w, h)} exceeds max_dim {self.max_dim}")
            if w * h > self.max_area:
                raise ParameterError(f"bucket {(w, h)} exceeds max_area {self.max_area}")
        if (512, 512) not in seen:
            raise ParameterError("layout must contain (512, 512)")

    def __len__(self):
        return len(self.buckets)

    def log_aspects(self) -> np.ndarray:
        return np.array([math.log(w / h) for w, h in self.buckets])


@dataclass(frozen=True)
class Batch:
    """One same-resolution batch; ``bucket`` is None for the catch-all.

    ``item_buckets`` records each item's own bucket index so catch-all
    batches still know which geometry every image should get.
    """

    bucket: Optional[int]
    item_ids: tuple
    item_buckets: tuple

    def __post_init__(self):
        if self.bucket is not None and any(b != self.bucket for b in self.item_buckets):
            raise ParameterError("non-catch-all batch mixes buckets")


@dataclass(frozen=True)
class EpochPlan:
    """Per-rank batch lists for one epoch; construction is deterministic."""

    epoch: int
    world_size: int
    batch_size: int
    seed: int
    ranks: tuple  # one tuple of Batch per rank

    @property
    def batches_per_rank(self) -> int:
        return len(self.ranks[0])


@dataclass(frozen=True)
class CropGeometry:
    scaled_size: tuple
    crop_offset: tuple
    crop_size: tuple


def generate_buckets(max_area: int = DEFAULT_MAX_AREA, max_dim: int = DEFAULT_MAX_DIM,
                     step: int = DEFAULT_STEP) -> BucketLayout:
    """Enumerate bucket resolutions under a pixel budget.

    Widths sweep 256..max_dim in ``step`` increments, each paired with the
    largest step-multiple height that fits the budget; the sweep is repeated
    with the axes swapped, duplicates are dropped, and (512, 512) is always
    included.
    """
    if max_area <= 0 or max_dim <= 0 or step <= 0:
        raise ParameterError("bucket parameters must be positive")
    if 256 % step or max_dim % step:
        raise ParameterError("step must divide 256 and max_dim")
    found = set()
    for w in range(256, max_dim + 1, step):
        h = min(max_dim, max_area // w // step * step)
        if h >= step:
            found.add((w, h))
    found |= {(h, w) for w, h in found}
    found.add((512, 512))
    return BucketLayout(buckets=tuple(sorted(found)), max_area=max_area,
                        max_dim=max_dim, step=step)


def assign_bucket(layout: BucketLayout, image_size,
                  prune_threshold: float = DEFAULT_PRUNE_THRESHOLD) -> Optional[int]:
    """Index of the bucket nearest in |log aspect|, or None when pruned.

    Exact ties go to the larger-area bucket (less of the image is cropped
    away), then to the first in layout order.
    """
    w, h = image_size
    if w <= 0 or h <= 0:
        raise ParameterError("image dimensions must be positive")
    target = math.log(w / h)
    best = None
    for i, (bw, bh) in enumerate(layout.buckets):
        d = abs(math.log(bw / bh) - target)
        key = (d, -bw * bh)
        if best is None or key < best[0]:
            best = (key, i)
    if best[0][0] > prune_threshold:
        return None
    return best[1]


def log_aspect_distance(image_size, bucket_size) -> float:
    iw, ih = image_size
    bw, bh = bucket_size
    return abs(math.log(iw / ih) - math.log(bw / bh))


def plan_epoch(manifest, layout: BucketLayout, epoch: int, world_size: int,
               batch_size: int, seed: int,
               prune_threshold: float = DEFAULT_PRUNE_THRESHOLD) -> EpochPlan:
    """Shard one epoch of a manifest into same-resolution batches.

    The retained ids are shuffled with ``seed ^ epoch``, trimmed to a
    multiple of ``world_size * batch_size``, and split into contiguous
    per-rank stripes.  Within a rank, each bucket's id list donates its
    remainder modulo the batch size to a catch-all pool, then batches are
    drawn one at a time: pick a bucket with probability proportional to its
    remaining count, pop its next ``batch_size`` ids.
    """
    if world_size < 1 or batch_size < 1:
        raise ParameterError("world_size and batch_size must be at least 1")
    retained = []
    for item in manifest:
        idx = assign_bucket(layout, (item["width"], item["height"]), prune_threshold)
        if idx is not None:
            retained.append((item["id"], idx))
    per_pass = world_size * batch_size
    if len(retained) < per_pass:
        raise ParameterError(
            f"{len(retained)} retained items cannot fill one round of "
            f"{world_size} ranks x {batch_size}"
        )
    rng = np.random.default_rng(seed ^ epoch)
    order = rng.permutation(len(retained))[: len(retained) - len(retained) % per_pass]
    stripe = len(order) // world_size

    ranks = []
    for r in range(world_size):
        pools = {}
        for j in order[r * stripe:(r + 1) * stripe]:
            pools.setdefault(retained[j][1], []).append(retained[j])
        catch_all = []
        for b in sorted(pools):
            spill = len(pools[b]) % batch_size
            if spill:
                catch_all.extend(pools[b][-spill:])
                del pools[b][-spill:]
            if not pools[b]:
                del pools[b]
        if catch_all:
            pools[_CATCH_ALL] = catch_all

        batches = []
        while pools:
            keys = sorted(pools)
            sizes = np.array([len(pools[k]) for k in keys], dtype=np.float64)
            pick = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
            chunk = pools[pick][:batch_size]
            del pools[pick][:batch_size]
            if not pools[pick]:
                del pools[pick]
            batches.append(Batch(
                bucket=None if pick == _CATCH_ALL else pick,
                item_ids=tuple(item_id for item_id, _ in chunk),
                item_buckets=tuple(b for _, b in chunk),
            ))
        ranks.append(tuple(batches))
    return EpochPlan(epoch=epoch, world_size=world_size, batch_size=batch_size,
                     seed=seed, ranks=tuple(ranks))


def fit_geometry(image_size, bucket_size, rng: np.random.Generator) -> CropGeometry:
    """Cover-scale an image onto a bucket and pick a random crop window."""
    iw, ih = image_size
    bw, bh = bucket_size
    if min(iw, ih, bw, bh) <= 0:
        raise ParameterError("dimensions must be positive")
    scale = max(bw / iw, bh / ih)
    sw = max(bw, round(iw * scale))
    sh = max(bh, round(ih * scale))
    ox = int(rng.integers(0, sw - bw + 1)) if sw > bw else 0
    oy = int(rng.integers(0, sh - bh + 1)) if sh > bh else 0
    return CropGeometry(scaled_size=(sw, sh), crop_offset=(ox, oy), crop_size=(bw, bh))


def crop_fraction(image_size, bucket_size) -> float:
    """Area fraction lost to the crop, for exact (unrounded) cover scaling.

    Equals ``1 - exp(-d)`` where d is the log-aspect distance between image
    and bucket.
    """
    iw, ih = image_size
    bw, bh = bucket_size
    scale = max(bw / iw, bh / ih)
    return 1.0 - (bw * bh) / (iw * ih * scale * scale)


def read_manifest(path):
    """Parse a JSONL manifest of ``{"id", "width", "height"[, "tags"]}`` rows."""
    items = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: not valid JSON: {exc}") from exc
            if not isinstance(obj, dict) or not {"id", "width", "height"} <= obj.keys():
                raise DataError(f"{path}:{line_no}: need id, width and height fields")
            if obj["width"] <= 0 or obj["height"] <= 0:
                raise DataError(f"{path}:{line_no}: non-positive image dimensions")
            items.append(obj)
    return items


def write_manifest(path, items):
    with open(path, "w") as fh:
        for item in items:
            fh.write(json.dumps(item, sort_keys=True) + "\n")
