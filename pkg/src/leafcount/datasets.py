"""Datasets: loading annotated image folders, pooling, splitting, synthesis.

A dataset on disk is a directory of images plus a ``counts.csv`` annotation
file (UTF-8, header ``image,count``, one row per image). Image ids are
qualified as ``<dataset_id>/<filename>`` at load time so that pooling
collections from different sources never collides even when labs reuse
filenames.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .exceptions import (
    AnnotationError,
    DatasetError,
    GenerationError,
    PartitionError,
    PoolingError,
    SplitError,
)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
ANNOTATION_FILENAME = "counts.csv"


@dataclass(frozen=True)
class ImageSample:
    """One RGB image together with its integer object count.

    ``pixels`` is an HxWx3 uint8 array; the stored view is marked read-only
    so samples can be shared freely across threads.
    """

    image_id: str
    pixels: np.ndarray
    count: int
    source_id: str

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be a non-empty string")
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"pixels must be HxWx3, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image must have positive height and width")
        if px.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {px.dtype}")
        if int(self.count) != self.count or self.count < 0:
            raise ValueError(f"count must be a non-negative integer, got {self.count}")
        view = px.view()
        view.flags.writeable = False
        object.__setattr__(self, "pixels", view)
        object.__setattr__(self, "count", int(self.count))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class DatasetDescriptor:
    """Points at a dataset directory and its annotation CSV."""

    dataset_id: str
    root_dir: Path
    annotation_file: Path | None = None

    def __post_init__(self):
        object.__setattr__(self, "root_dir", Path(self.root_dir))
        ann = self.annotation_file
        if ann is None:
            ann = Path(self.root_dir) / ANNOTATION_FILENAME
        object.__setattr__(self, "annotation_file", Path(ann))


@dataclass(frozen=True)
class SplitPlan:
    """Deterministic train/val/test partition of image ids."""

    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    fractions: tuple[float, float, float]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "train_ids", tuple(self.train_ids))
        object.__setattr__(self, "val_ids", tuple(self.val_ids))
        object.__setattr__(self, "test_ids", tuple(self.test_ids))
        object.__setattr__(self, "fractions", tuple(self.fractions))

    @property
    def n(self) -> int:
        return len(self.train_ids) + len(self.val_ids) + len(self.test_ids)


@dataclass(frozen=True)
class SyntheticConfig:
    """Settings for the synthetic counting-image generator."""

    image_size: int = 64
    count_range: tuple[int, int] = (1, 8)
    shape: str = "disk"  # disk | ellipse
    background_style: str = "flat"  # flat | textured
    n_images: int = 100
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.count_range
        if lo < 1 or hi < lo:
            raise ValueError(f"count_range must satisfy 1 <= min <= max, got {self.count_range}")
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if self.shape not in ("disk", "ellipse"):
            raise ValueError(f"shape must be 'disk' or 'ellipse', got {self.shape!r}")
        if self.background_style not in ("flat", "textured"):
            raise ValueError(f"background_style must be 'flat' or 'textured', got {self.background_style!r}")
        object.__setattr__(self, "count_range", (int(lo), int(hi)))


def _round_half_up(x: float) -> int:
    # for non-negative size arithmetic; round(2.5) must be 3, not banker's 2
    return int(math.floor(x + 0.5))


def load_dataset(descriptor: DatasetDescriptor) -> list[ImageSample]:
    """Load every annotated image of a dataset directory.

    Returns one ImageSample per annotation row, with the count taken
    verbatim from the CSV and ``image_id`` qualified as
    ``<dataset_id>/<filename>``.
    """
    ann_path = descriptor.annotation_file
    if not descriptor.root_dir.is_dir():
        raise DatasetError(f"dataset root does not exist: {descriptor.root_dir}")
    if not ann_path.is_file():
        raise DatasetError(f"annotation file does not exist: {ann_path}")

    samples = []
    seen: set[str] = set()
    with open(ann_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["image", "count"]:
            raise AnnotationError(f"{ann_path}: expected header 'image,count', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2:
                raise AnnotationError(f"{ann_path}:{lineno}: expected 2 fields, got {len(row)}")
            filename, count_text = row[0].strip(), row[1].strip()
            try:
                count = int(count_text)
            except ValueError:
                raise AnnotationError(
                    f"{ann_path}:{lineno}: count must be an integer, got {count_text!r}"
                ) from None
            if count < 0:
                raise AnnotationError(f"{ann_path}:{lineno}: count must be >= 0, got {count}")
            if filename in seen:
                raise AnnotationError(f"{ann_path}:{lineno}: duplicate filename {filename!r}")
            seen.add(filename)
            image_path = descriptor.root_dir / filename
            if not image_path.is_file():
                raise DatasetError(f"annotated image missing on disk: {image_path}")
            bgr = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
            if bgr is None:
                raise DatasetError(f"could not decode image: {image_path}")
            pixels = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
            samples.append(ImageSample(
                image_id=f"{descriptor.dataset_id}/{filename}",
                pixels=pixels,
                count=count,
                source_id=descriptor.dataset_id,
            ))
    return samples


def pool_datasets(collections: Sequence[Sequence[ImageSample]]) -> list[ImageSample]:
    """Concatenate collections into one pooled dataset.

    Image ids are already source-qualified, so pooling is a plain
    concatenation; colliding ids raise a PoolingError listing the clashes.
    """
    pooled: list[ImageSample] = []
    seen: dict[str, str] = {}
    collisions = []
    for collection in collections:
        for sample in collection:
            if sample.image_id in seen:
                collisions.append(sample.image_id)
            else:
                seen[sample.image_id] = sample.source_id
            pooled.append(sample)
    if collisions:
        raise PoolingError(f"duplicate image ids while pooling: {sorted(set(collisions))}")
    return pooled


def _count_bins(counts: np.ndarray) -> np.ndarray:
    """Quartile bin index (0..3) of each count within its own distribution."""
    edges = np.percentile(counts, [25, 50, 75])
    return np.digitize(counts, edges, right=True)


def make_split(samples: Sequence[ImageSample], fractions=(0.5, 0.25, 0.25),
               seed: int = 0) -> SplitPlan:
    """Stratified train/val/test split.

    Samples are grouped by (source_id, count-quartile bin within that
    source); each stratum is allocated to the three parts by largest
    remainder, then single ids are shuffled between parts until the global
    sizes are exactly round(f*N) for train and val, with test taking the
    remainder. Each stratum stays within one sample of its proportional
    share. Deterministic given (ids, fractions, seed).
    """
    n = len(samples)
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise SplitError(f"fractions must be three positive values summing to 1, got {fractions}")
    ids = [s.image_id for s in samples]
    if len(set(ids)) != n:
        raise SplitError("duplicate image ids in split input")

    targets = [_round_half_up(fractions[0] * n), _round_half_up(fractions[1] * n)]
    targets.append(n - targets[0] - targets[1])
    if min(targets) < 1:
        raise SplitError(
            f"{n} samples are too few to populate train/val/test at fractions {fractions}"
        )

    # strata: (source, quartile bin of count within source)
    by_source: dict[str, list[ImageSample]] = {}
    for s in samples:
        by_source.setdefault(s.source_id, []).append(s)
    strata: dict[tuple[str, int], list[str]] = {}
    for source in sorted(by_source):
        group = by_source[source]
        bins = _count_bins(np.array([s.count for s in group], dtype=float))
        for s, b in zip(group, bins):
            strata.setdefault((source, int(b)), []).append(s.image_id)

    rng = np.random.default_rng(seed)
    parts: list[list[str]] = [[], [], []]
    # movable[p] holds (stratum ids, part) where part p received a leftover
    # unit above its floor quota, i.e. where one id can leave part p without
    # taking the stratum below floor(quota).
    movable: list[list[list[str]]] = [[], [], []]
    for key in sorted(strata):
        members = sorted(strata[key])
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        m = len(members)
        quotas = [fractions[p] * m for p in range(3)]
        alloc = [int(math.floor(q)) for q in quotas]
        leftovers = m - sum(alloc)
        remainder_order = sorted(range(3), key=lambda p: (-(quotas[p] - alloc[p]), p))
        got_extra = []
        for p in remainder_order[:leftovers]:
            alloc[p] += 1
            got_extra.append(p)
        pos = 0
        stratum_parts: list[list[str]] = []
        for p in range(3):
            chunk = members[pos:pos + alloc[p]]
            pos += alloc[p]
            parts[p].extend(chunk)
            stratum_parts.append(chunk)
        for p in got_extra:
            movable[p].append(stratum_parts[p])

    # rebalance leftover units until global sizes hit the targets exactly
    while True:
        surplus = [len(parts[p]) - targets[p] for p in range(3)]
        if all(s == 0 for s in surplus):
            break
        donor = max(range(3), key=lambda p: surplus[p])
        receiver = min(range(3), key=lambda p: surplus[p])
        if surplus[donor] <= 0 or not movable[donor]:
            raise SplitError("internal rebalancing failed")  # pragma: no cover
        chunk = movable[donor].pop()
        moved = chunk.pop()
        parts[donor].remove(moved)
        parts[receiver].append(moved)

    return SplitPlan(
        train_ids=tuple(parts[0]),
        val_ids=tuple(parts[1]),
        test_ids=tuple(parts[2]),
        fractions=fractions,
        seed=seed,
    )


def select_samples(samples: Sequence[ImageSample], ids: Iterable[str]) -> list[ImageSample]:
    """Resolve a list of ids back to samples, preserving id order."""
    by_id = {s.image_id: s for s in samples}
    return [by_id[i] for i in ids]


def partition_equal(samples: Sequence[ImageSample], k: int, seed: int = 0) -> list[list[ImageSample]]:
    """Split samples into k disjoint near-equal parts (sizes differ by <= 1)."""
    n = len(samples)
    if k < 1:
        raise PartitionError(f"k must be >= 1, got {k}")
    if k > n:
        raise PartitionError(f"cannot partition {n} samples into {k} parts")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    base, extra = divmod(n, k)
    parts = []
    pos = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        parts.append([samples[j] for j in order[pos:pos + size]])
        pos += size
    return parts


def save_split_plan(plan: SplitPlan, path: Path | str) -> None:
    """Write a split plan as an auditable three-section text file."""
    lines = [f"# fractions={plan.fractions} seed={plan.seed}"]
    for name, ids in (("train", plan.train_ids), ("val", plan.val_ids), ("test", plan.test_ids)):
        lines.append(f"[{name}]")
        lines.extend(ids)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split_plan(path: Path | str) -> SplitPlan:
    text = Path(path).read_text(encoding="utf-8")
    sections: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    current = None
    fractions, seed = (0.5, 0.25, 0.25), 0
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            # header comment: "# fractions=(0.5, 0.25, 0.25) seed=7"
            if "seed=" in line:
                seed = int(line.rsplit("seed=", 1)[1])
            if "fractions=(" in line:
                inner = line.split("fractions=(", 1)[1].split(")", 1)[0]
                fractions = tuple(float(v) for v in inner.split(","))
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in sections:
                raise SplitError(f"unknown split section {current!r} in {path}")
            continue
        if current is None:
            raise SplitError(f"id outside any section in {path}")
        sections[current].append(line)
    return SplitPlan(
        train_ids=tuple(sections["train"]),
        val_ids=tuple(sections["val"]),
        test_ids=tuple(sections["test"]),
        fractions=fractions,
        seed=seed,
    )


# --- synthetic data ---------------------------------------------------------

_FG_BASE = np.array([60.0, 140.0, 70.0])  # greenish shapes
_BG_BASE = np.array([120.0, 100.0, 80.0])  # soil-like background
_MIN_GAP = 2.0  # required clearance between shape boundaries, in pixels

_MAX_PLACEMENT_ATTEMPTS = 200
_MAX_LAYOUT_RESTARTS = 20


def _shape_radii(image_size: int) -> tuple[float, float]:
    r_min = max(3.0, 0.0625 * image_size)
    r_max = max(r_min + 1.0, 0.094 * image_size)
    return r_min, r_max


def _textured_background(size: int, rng: np.random.Generator) -> np.ndarray:
    """Value-noise background: two octaves of bilinear-upsampled random grids."""
    noise = np.zeros((size, size), dtype=np.float32)
    for cells, weight in ((6, 1.0), (17, 0.45)):
        grid = rng.normal(0.0, 1.0, size=(cells, cells)).astype(np.float32)
        noise += weight * cv2.resize(grid, (size, size), interpolation=cv2.INTER_LINEAR)
    noise /= np.abs(noise).max() + 1e-9
    base = _BG_BASE + rng.uniform(-15, 15, size=3)
    img = np.empty((size, size, 3), dtype=np.float64)
    for c in range(3):
        img[:, :, c] = base[c] + noise * 35.0
    return img


def _place_shapes(count: int, size: int, shape: str, rng: np.random.Generator):
    """Choose non-overlapping shape geometries; raises GenerationError on failure.

    Rejection sampling per shape with a whole-layout restart when a shape
    cannot be placed; an area precheck rejects plainly infeasible requests
    without looping.
    """
    r_min, r_max = _shape_radii(size)
    usable = (size - 2.0 * (r_min + 1.0)) ** 2
    required = count * np.pi * (r_min + _MIN_GAP / 2.0) ** 2
    if usable <= 0 or required > 0.6 * usable:
        raise GenerationError(
            f"{count} shapes of radius >= {r_min:.1f} cannot fit a "
            f"{size}x{size} image; use a smaller count_range"
        )

    for _restart in range(_MAX_LAYOUT_RESTARTS):
        placed = []  # (cx, cy, bounding_radius, a, b, theta)
        for _ in range(count):
            for attempt in range(_MAX_PLACEMENT_ATTEMPTS):
                a = rng.uniform(r_min, r_max)
                if attempt > _MAX_PLACEMENT_ATTEMPTS // 2:
                    a = r_min  # shrink to minimum once placement gets tight
                if shape == "ellipse":
                    b = a * rng.uniform(0.55, 0.9)
                    theta = rng.uniform(0.0, np.pi)
                else:
                    b, theta = a, 0.0
                margin = a + 1.0
                cx = rng.uniform(margin, size - 1 - margin)
                cy = rng.uniform(margin, size - 1 - margin)
                ok = all(
                    (cx - px) ** 2 + (cy - py) ** 2 >= (a + pr + _MIN_GAP) ** 2
                    for px, py, pr, *_ in placed
                )
                if ok:
                    placed.append((cx, cy, a, a, b, theta))
                    break
            else:
                break  # this layout jammed; restart from an empty canvas
        else:
            return placed
    raise GenerationError(
        f"could not place {count} non-overlapping shapes in a "
        f"{size}x{size} image; use a smaller count_range"
    )


def _render_sample(config: SyntheticConfig, count: int, rng: np.random.Generator):
    size = config.image_size
    if config.background_style == "textured":
        img = _textured_background(size, rng)
    else:
        img = np.ones((size, size, 3)) * (_BG_BASE + rng.uniform(-15, 15, size=3))

    geometries = _place_shapes(count, size, config.shape, rng)
    mask = np.zeros((size, size), dtype=bool)
    for cx, cy, bound, a, b, theta in geometries:
        # draw into the shape's bounding patch only
        x0, x1 = int(np.floor(cx - bound - 1)), int(np.ceil(cx + bound + 2))
        y0, y1 = int(np.floor(cy - bound - 1)), int(np.ceil(cy + bound + 2))
        x0, y0 = max(x0, 0), max(y0, 0)
        x1, y1 = min(x1, size), min(y1, size)
        yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
        dx, dy = xx - cx, yy - cy
        if config.shape == "ellipse":
            u = dx * np.cos(theta) + dy * np.sin(theta)
            v = -dx * np.sin(theta) + dy * np.cos(theta)
            dist = np.sqrt((u / a) ** 2 + (v / b) ** 2)
            alpha = np.clip(0.5 - (dist - 1.0) * b, 0.0, 1.0)
        else:
            dist = np.sqrt(dx ** 2 + dy ** 2)
            alpha = np.clip(a + 0.5 - dist, 0.0, 1.0)
        color = _FG_BASE + rng.uniform(-25, 25, size=3)
        patch = img[y0:y1, x0:x1]
        img[y0:y1, x0:x1] = patch * (1.0 - alpha[..., None]) + color * alpha[..., None]
        mask[y0:y1, x0:x1] |= alpha > 0.5

    img = img + rng.normal(0.0, 1.5, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), mask


def generate_synthetic(config: SyntheticConfig, source_id: str | None = None,
                       return_masks: bool = False):
    """Generate a synthetic counting dataset.

    Each image holds exactly ``count`` non-overlapping shapes, with the
    count drawn uniformly from ``count_range``. Deterministic under
    ``config.seed``. With ``return_masks=True`` also returns the boolean
    foreground mask of each image for independent verification.
    """
    rng = np.random.default_rng(config.seed)
    source = source_id or f"synth-{config.shape}-{config.background_style}"
    lo, hi = config.count_range
    samples, masks = [], []
    width = max(4, len(str(config.n_images)))
    for i in range(config.n_images):
        count = int(rng.integers(lo, hi + 1))
        pixels, mask = _render_sample(config, count, rng)
        samples.append(ImageSample(
            image_id=f"{source}/img{i:0{width}d}.png",
            pixels=pixels,
            count=count,
            source_id=source,
        ))
        masks.append(mask)
    if return_masks:
        return samples, masks
    return samples


def write_dataset(samples: Sequence[ImageSample], root_dir: Path | str) -> Path:
    """Write samples as a standard dataset directory (<root>/*.png + counts.csv)."""
    root = Path(root_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for s in samples:
        filename = s.image_id.rsplit("/", 1)[-1]
        if not filename.lower().endswith(IMAGE_EXTENSIONS):
            filename += ".png"
        out = root / filename
        if not cv2.imwrite(str(out), cv2.cvtColor(np.asarray(s.pixels), cv2.COLOR_RGB2BGR)):
            raise DatasetError(f"could not write image: {out}")
        rows.append((filename, s.count))
    with open(root / ANNOTATION_FILENAME, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image", "count"])
        writer.writerows(rows)
    return root
