"""Image ingestion, preprocessing, flip augmentation and batching.

Dataset layout::

    <root>/yes/*.{png,jpg,jpeg,bmp}   label 1 (tumor / malignant)
    <root>/no/*.{png,jpg,jpeg,bmp}    label 0 (no tumor / benign)

Each image is converted to grayscale with the luminosity weights, resized to
R x R by bilinear interpolation on half-pixel centers, and scaled to [0, 1].
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, IngestionError, ProtocolError
from .tensor import default_dtype

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
CLASS_DIRS = (("no", 0), ("yes", 1))
LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class LabeledSample:
    pixels: np.ndarray  # (1, 1, R, R), values in [0, 1]
    label: int
    provenance: str = "original"  # original | hflip | vflip
    source_id: str = ""

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")
        if self.provenance not in ("original", "hflip", "vflip"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


@dataclass
class IngestReport:
    root: str
    total: int
    counts: tuple[int, int]
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def render(self) -> str:
        lines = [
            f"root: {self.root}",
            f"total: {self.total}",
            f"no (label 0): {self.counts[0]}",
            f"yes (label 1): {self.counts[1]}",
            f"skipped: {len(self.skipped)}",
        ]
        lines += [f"  {path}: {reason}" for path, reason in self.skipped]
        return "\n".join(lines)


@dataclass
class LabeledDataset:
    samples: list[LabeledSample] = field(default_factory=list)
    report: IngestReport | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @property
    def class_counts(self) -> tuple[int, int]:
        pos = sum(s.label for s in self.samples)
        return len(self.samples) - pos, pos

    @property
    def resolution(self) -> int | None:
        return self.samples[0].pixels.shape[-1] if self.samples else None

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into ``(x of shape (n, 1, R, R), labels of shape (n,))``."""
        if not self.samples:
            return np.zeros((0, 1, 1, 1), dtype=default_dtype()), np.zeros(0, dtype=np.int64)
        x = np.concatenate([s.pixels for s in self.samples], axis=0)
        y = np.array([s.label for s in self.samples], dtype=np.int64)
        return x, y

    def source_ids(self) -> set[str]:
        return {s.source_id for s in self.samples}

    @classmethod
    def from_arrays(cls, x: np.ndarray, y: Sequence[int], prefix: str = "synthetic") -> "LabeledDataset":
        x = np.asarray(x)
        if x.ndim == 3:
            x = x[:, None]
        return cls([
            LabeledSample(x[i:i + 1].astype(default_dtype()), int(y[i]), "original", f"{prefix}/{i}")
            for i in range(len(x))
        ])


# -- pixel operations ----------------------------------------------------------


def to_grayscale(rgb) -> np.ndarray | float:
    """Luminosity grayscale of 8-bit RGB, scaled to [0, 1].

    Accepts a single (r, g, b) triple or an array whose last axis is RGB.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    r, g, b = arr[..., 0], arr[..., 1], arr[..., 2]
    gray = (LUMA[0] * r + LUMA[1] * g + LUMA[2] * b) / 255.0
    gray = np.clip(gray, 0.0, 1.0)
    return float(gray) if gray.ndim == 0 else gray


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a 2-D image to ``size`` x ``size``.

    Half-pixel centers (align_corners off): output pixel ``i`` samples source
    coordinate ``(i + 0.5) * in / out - 0.5``, clamped to the image.
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"resize expects a 2-D image, got shape {img.shape}")

    def axis_weights(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, rw = axis_weights(img.shape[0], size)
    c0, c1, cw = axis_weights(img.shape[1], size)
    top = img[r0][:, c0] * (1 - cw) + img[r0][:, c1] * cw
    bottom = img[r1][:, c0] * (1 - cw) + img[r1][:, c1] * cw
    return top * (1 - rw)[:, None] + bottom * rw[:, None]


def load_image(path: str | Path, resolution: int) -> np.ndarray:
    """Decode, grayscale, resize and scale one image to a (1, 1, R, R) array."""
    try:
        with Image.open(path) as im:
            rgb = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from None
    gray = resize(to_grayscale(rgb), resolution)
    return np.clip(gray, 0.0, 1.0).astype(default_dtype())[None, None]


def ingest_directory(root: str | Path, resolution: int) -> LabeledDataset:
    """Read ``root/yes`` and ``root/no`` into a dataset in lexicographic path order."""
    root = Path(root)
    for sub, _ in CLASS_DIRS:
        if not (root / sub).is_dir():
            raise IngestionError(f"dataset root {root} has no '{sub}' subdirectory")
    entries = []
    for sub, label in CLASS_DIRS:
        for p in (root / sub).iterdir():
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES:
                entries.append((p.relative_to(root).as_posix(), p, label))
    entries.sort(key=lambda e: e[0])

    samples: list[LabeledSample] = []
    skipped: list[tuple[str, str]] = []
    for rel, path, label in entries:
        try:
            pixels = load_image(path, resolution)
        except DecodeError as exc:
            log.warning("skipping %s: %s", rel, exc)
            skipped.append((rel, str(exc)))
            continue
        samples.append(LabeledSample(pixels, label, "original", str(path.resolve())))
    ds = LabeledDataset(samples)
    ds.report = IngestReport(str(root), len(samples), ds.class_counts, skipped)
    return ds


# -- augmentation --------------------------------------------------------------


def flip(sample: LabeledSample, axis: str) -> LabeledSample:
    """Horizontal flip reverses columns, vertical flip reverses rows.

    Flipping a flipped sample along the same axis restores provenance "original".
    """
    if axis == "horizontal":
        pixels, prov = sample.pixels[..., ::-1], "hflip"
    elif axis == "vertical":
        pixels, prov = sample.pixels[..., ::-1, :], "vflip"
    else:
        raise ValueError(f"axis must be 'horizontal' or 'vertical', got {axis!r}")
    if sample.provenance == prov:
        prov = "original"
    return replace(sample, pixels=np.ascontiguousarray(pixels), provenance=prov)


def augment(dataset: LabeledDataset) -> LabeledDataset:
    """Originals, then a horizontal flip of every sample, then a vertical flip of every sample."""
    orig = list(dataset.samples)
    return LabeledDataset(
        orig
        + [flip(s, "horizontal") for s in orig]
        + [flip(s, "vertical") for s in orig],
        dataset.report,
    )


# -- batching ------------------------------------------------------------------


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def batch_iterator(
    dataset: LabeledDataset,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    *,
    arrays: tuple[np.ndarray, np.ndarray] | None = None,
) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield shuffled ``(x, y)`` batches; the order depends only on (seed, epoch).

    The last batch is partial when ``batch_size`` does not divide the dataset.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    x, y = arrays if arrays is not None else dataset.arrays()
    order = epoch_order(len(y), seed, epoch)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield x[idx], y[idx]


def assert_disjoint(train: LabeledDataset, test: LabeledDataset) -> None:
    """Raise ProtocolError if any test source also appears in the training set."""
    shared = train.source_ids() & test.source_ids()
    if shared:
        example = sorted(shared)[0]
        raise ProtocolError(f"{len(shared)} test samples also appear in the training set, e.g. {example}")
