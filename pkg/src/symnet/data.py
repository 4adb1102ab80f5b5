"""Dataset ingestion and the digit preprocessing chain.

Raw images go through Otsu binarization at their original size, an
aspect-preserving bicubic fit into a 20x20 box, center-of-mass placement in
a 28x28 field, and a one-pixel zero border on the top and left (29x29).
Inputs that are already MNIST-normalized 28x28 fields only get the border.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
BOX = 20
FIELD = 28
NET_INPUT = 29


class DataError(Exception):
    """Unreadable or inconsistent dataset input."""


class IdxFormatError(DataError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: byte offset {offset}: {message}")
        self.offset = offset


class EmptyImageError(DataError):
    pass


@dataclass
class RawDataset:
    images: list[np.ndarray] | np.ndarray
    labels: np.ndarray
    n_classes: int = 10

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise DataError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "RawDataset":
        idx = np.asarray(idx, dtype=np.intp)
        if isinstance(self.images, np.ndarray):
            images = self.images[idx]
        else:
            images = [self.images[i] for i in idx]
        return RawDataset(images, self.labels[idx], self.n_classes)


@dataclass
class PreparedDataset:
    images: np.ndarray  # (n, 29, 29), z-scored
    labels: np.ndarray
    split: str
    mean: float
    std: float

    def __len__(self) -> int:
        return len(self.labels)


# -- IDX ---------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse a big-endian IDX file of unsigned bytes (optionally gzipped)."""
    try:
        raw = _read_bytes(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if len(raw) < 4:
        raise IdxFormatError(path, len(raw), "truncated before magic number")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if expected_magic is not None and magic != expected_magic:
        raise IdxFormatError(
            path, 0, f"magic 0x{magic:08x}, expected 0x{expected_magic:08x}"
        )
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(path, 0, f"magic 0x{magic:08x} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxFormatError(path, len(raw), f"truncated inside {ndim}-dimension header")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    size = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header + size:
        raise IdxFormatError(path, len(raw), f"truncated: need {header + size} bytes for dims {dims}")
    if len(raw) > header + size:
        raise IdxFormatError(path, header + size, "trailing bytes after data")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims).copy()


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    if array.dtype != np.uint8:
        if array.min() < 0 or array.max() > 255 or not np.array_equal(array, np.round(array)):
            raise ValueError("IDX writer only supports unsigned byte data")
        array = array.astype(np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    data = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        data = gzip.compress(data, mtime=0)
    path.write_bytes(data)


def load_idx(images_path, labels_path) -> RawDataset:
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.ndim != 3:
        raise IdxFormatError(images_path, 0, f"expected 3 dimensions, got {images.ndim}")
    if len(images) != len(labels):
        raise IdxFormatError(
            labels_path, 4, f"{len(labels)} labels for {len(images)} images"
        )
    n_classes = max(10, int(labels.max()) + 1) if len(labels) else 10
    return RawDataset(images, labels, n_classes)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_mnist(root) -> dict[str, tuple[Path, Path]]:
    """Locate the four MNIST files (plain or .gz) under ``root``."""
    root = Path(root)
    found = {}
    for split, names in MNIST_FILES.items():
        paths = []
        for name in names:
            for candidate in (root / name, root / (name + ".gz"), root / name.replace("-idx", ".idx")):
                if candidate.exists():
                    paths.append(candidate)
                    break
            else:
                raise DataError(f"MNIST file {name}[.gz] not found under {root}")
        found[split] = tuple(paths)
    return found


# -- image files -------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Grayscale 0-255 float image from PGM/PNG/etc; color is channel-averaged."""
    from PIL import Image

    try:
        with Image.open(path) as img:
            arr = np.asarray(img, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    if arr.ndim == 3:
        arr = arr[..., :3].mean(axis=2)
    if arr.max() > 255:
        arr = arr * (255.0 / arr.max())
    return arr


def load_manifest(path) -> RawDataset:
    """Images listed as ``filename,label`` lines, relative to the manifest's directory."""
    path = Path(path)
    images, labels = [], []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        name, sep, label = line.rpartition(",")
        if not sep:
            raise DataError(f"{path}:{lineno}: expected 'filename,label'")
        try:
            labels.append(int(label))
        except ValueError:
            raise DataError(f"{path}:{lineno}: label {label!r} is not an integer") from None
        images.append(read_image(path.parent / name))
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = max(10, int(labels.max()) + 1) if len(labels) else 10
    return RawDataset(images, labels, n_classes)


# -- preprocessing -----------------------------------------------------------


class OtsuResult(NamedTuple):
    threshold: int
    degenerate: bool


def _to_levels(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise ValueError("empty image")
    return np.clip(np.round(image), 0, 255).astype(np.int64)


def otsu_threshold(image) -> OtsuResult:
    """Threshold t maximizing between-class variance of {<= t} vs {> t}.

    Ties go to the smallest t. A constant image has nothing to separate and
    returns its single level with ``degenerate=True``.
    """
    levels = _to_levels(image)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    if np.count_nonzero(hist) == 1:
        return OtsuResult(int(levels.flat[0]), True)
    total = hist.sum()
    grey = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    s0 = np.cumsum(hist * grey)
    w1 = total - w0
    s1 = s0[-1] - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    best = between.max()
    # Cancellation noise must not break ties between equally good thresholds.
    t = int(np.flatnonzero(between >= best * (1 - 1e-12))[0])
    return OtsuResult(t, False)


def binarize(image, threshold: int | None = None) -> np.ndarray:
    """0/255 image with the digit as foreground (255).

    The side of the threshold holding fewer pixels is taken to be the digit,
    so dark-on-light scans come out the same way as MNIST.
    """
    levels = _to_levels(image)
    if threshold is None:
        threshold = otsu_threshold(levels).threshold
    bright = levels > threshold
    if bright.sum() > bright.size / 2:
        bright = ~bright
    return np.where(bright, 255.0, 0.0)


def _keys_kernel(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    out = np.zeros_like(x)
    near = x <= 1
    far = (x > 1) & (x < 2)
    out[near] = (a + 2) * x[near] ** 3 - (a + 3) * x[near] ** 2 + 1
    out[far] = a * x[far] ** 3 - 5 * a * x[far] ** 2 + 8 * a * x[far] - 4 * a
    return out


def _resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) Catmull-Rom weights, edges clamped, support widened when shrinking."""
    scale = n_in / n_out
    support = max(scale, 1.0)
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        center = (o + 0.5) * scale - 0.5
        lo = int(np.floor(center - 2 * support)) + 1
        hi = int(np.ceil(center + 2 * support))
        taps = np.arange(lo, hi)
        w = _keys_kernel((taps - center) / support)
        np.add.at(m[o], np.clip(taps, 0, n_in - 1), w)
        m[o] /= m[o].sum()
    return m


def resize_bicubic(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if (h, w) == (out_h, out_w):
        return image.copy()
    return _resample_matrix(h, out_h) @ image @ _resample_matrix(w, out_w).T


def fit_box_shape(h: int, w: int, box: int = BOX) -> tuple[int, int]:
    """Aspect-preserving size whose larger side equals ``box``."""
    if h >= w:
        return box, max(1, int(round(w * box / h)))
    return max(1, int(round(h * box / w))), box


def _round_half_to_zero(d: float) -> int:
    return int(np.sign(d) * np.ceil(abs(d) - 0.5))


def center_of_mass_shift(field: np.ndarray) -> tuple[int, int]:
    """Integer (row, col) translation bringing the intensity centroid to the field center."""
    total = field.sum()
    rows, cols = np.indices(field.shape)
    c_r = (rows * field).sum() / total
    c_c = (cols * field).sum() / total
    mid_r, mid_c = (field.shape[0] - 1) / 2, (field.shape[1] - 1) / 2
    return _round_half_to_zero(mid_r - c_r), _round_half_to_zero(mid_c - c_c)


def pad_border(field: np.ndarray) -> np.ndarray:
    """Add one zero row on top and one zero column on the left."""
    return np.pad(field, ((1, 0), (1, 0)))


def normalize_digit(image) -> np.ndarray:
    """Fit the digit's bounding box into 20x20, center by mass in 28x28, pad to 29x29."""
    image = np.asarray(image, dtype=np.float64)
    nz = np.argwhere(image > 0)
    if len(nz) == 0:
        raise EmptyImageError("image has no foreground pixels")
    (r0, c0), (r1, c1) = nz.min(axis=0), nz.max(axis=0) + 1
    digit = image[r0:r1, c0:c1]
    h, w = fit_box_shape(*digit.shape)
    digit = np.clip(np.round(resize_bicubic(digit, h, w)), 0, 255)
    if digit.sum() == 0:
        raise EmptyImageError("digit vanished after resizing")

    field = np.zeros((FIELD, FIELD))
    top, left = (FIELD - h) // 2, (FIELD - w) // 2
    field[top : top + h, left : left + w] = digit
    dr, dc = center_of_mass_shift(field)
    # Keep the whole box inside the field.
    dr = int(np.clip(dr, -top, FIELD - h - top))
    dc = int(np.clip(dc, -left, FIELD - w - left))
    field = np.roll(field, (dr, dc), axis=(0, 1))
    return pad_border(field)


def preprocess_digit(image) -> np.ndarray:
    """Full chain for a raw scan: Otsu binarization, then ``normalize_digit``."""
    return normalize_digit(binarize(image))


def prepare_images(raw: RawDataset, already_normalized: bool | None = None) -> np.ndarray:
    """29x29 float images for every entry of ``raw``.

    ``already_normalized`` defaults to True when every input is 28x28 (only
    the border is added) or 29x29 (passed through unchanged); anything else
    goes through the full binarize/resize/center chain.
    """
    images = raw.images
    if isinstance(images, np.ndarray) and images.ndim == 3:
        shape = images.shape[1:]
        if already_normalized is None:
            already_normalized = shape in ((FIELD, FIELD), (NET_INPUT, NET_INPUT))
        if already_normalized:
            images = images.astype(np.float64)
            if shape == (NET_INPUT, NET_INPUT):
                return images
            if shape != (FIELD, FIELD):
                raise DataError(f"normalized images must be 28x28 or 29x29, got {shape}")
            return np.pad(images, ((0, 0), (1, 0), (1, 0)))
    return np.stack([preprocess_digit(img) for img in images])


@dataclass(frozen=True)
class ZScore:
    mean: float
    std: float

    @classmethod
    def fit(cls, images: np.ndarray) -> "ZScore":
        images = np.asarray(images, dtype=np.float64)
        std = float(images.std())
        return cls(float(images.mean()), std if std > 0 else 1.0)

    def apply(self, images: np.ndarray) -> np.ndarray:
        return (np.asarray(images, dtype=np.float64) - self.mean) / self.std


def stratified_split(labels, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffled index split keeping each class within one example of ``fraction``.

    The first part has exactly ``round(fraction * n)`` examples; leftover
    slots go to the classes with the largest fractional quotas.
    """
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = np.unique(labels)
    members = [rng.permutation(np.flatnonzero(labels == c)) for c in classes]
    quota = np.array([fraction * len(m) for m in members])
    take = np.floor(quota).astype(int)
    extra = int(round(fraction * len(labels))) - take.sum()
    order = np.argsort(-(quota - take), kind="stable")
    take[order[:extra]] += 1
    first = np.concatenate([m[:k] for m, k in zip(members, take)])
    second = np.concatenate([m[k:] for m, k in zip(members, take)])
    return rng.permutation(first), rng.permutation(second)


def split_train_val(dataset: RawDataset, fraction: float = 0.9, seed: int = 0) -> tuple[RawDataset, RawDataset]:
    train, val = stratified_split(dataset.labels, fraction, seed)
    return dataset.subset(train), dataset.subset(val)


def stratified_subset(dataset: RawDataset, n: int, seed: int) -> RawDataset:
    if n >= len(dataset):
        return dataset
    idx, _ = stratified_split(dataset.labels, n / len(dataset), seed)
    return dataset.subset(np.sort(idx))


# -- synthetic data ----------------------------------------------------------

SYNTHETIC_CLASSES = (
    "horizontal bar",
    "vertical bar",
    "rising diagonal",
    "falling diagonal",
    "plus",
    "saltire",
    "blob",
    "ring",
    "horizontal pair",
    "vertical pair",
)


def _segment(rr, cc, p, q, width):
    p, q = np.asarray(p, float), np.asarray(q, float)
    d = q - p
    t = np.clip(((rr - p[0]) * d[0] + (cc - p[1]) * d[1]) / (d @ d), 0, 1)
    dist = np.hypot(rr - (p[0] + t * d[0]), cc - (p[1] + t * d[1]))
    return np.clip(width / 2 + 0.5 - dist, 0, 1)


def _draw(label: int, rng: np.random.Generator, size: int) -> np.ndarray:
    rr, cc = np.indices((size, size), dtype=np.float64)
    c = (size - 1) / 2 + rng.uniform(-3, 3, size=2)
    half = rng.uniform(6, 9)
    width = rng.uniform(1.5, 3.0)
    gap = rng.uniform(3, 5)
    r, k = c
    strokes = {
        0: [((r, k - half), (r, k + half))],
        1: [((r - half, k), (r + half, k))],
        2: [((r + half * 0.7, k - half * 0.7), (r - half * 0.7, k + half * 0.7))],
        3: [((r - half * 0.7, k - half * 0.7), (r + half * 0.7, k + half * 0.7))],
        4: [((r, k - half), (r, k + half)), ((r - half, k), (r + half, k))],
        5: [
            ((r + half * 0.7, k - half * 0.7), (r - half * 0.7, k + half * 0.7)),
            ((r - half * 0.7, k - half * 0.7), (r + half * 0.7, k + half * 0.7)),
        ],
        8: [((r - gap, k - half), (r - gap, k + half)), ((r + gap, k - half), (r + gap, k + half))],
        9: [((r - half, k - gap), (r + half, k - gap)), ((r - half, k + gap), (r + half, k + gap))],
    }
    if label in strokes:
        img = np.max([_segment(rr, cc, p, q, width) for p, q in strokes[label]], axis=0)
    else:
        dist = np.hypot(rr - r, cc - k)
        radius = half * 0.6
        if label == 6:
            img = np.clip(radius + 0.5 - dist, 0, 1)
        else:
            img = np.clip(width / 2 + 0.5 - np.abs(dist - radius), 0, 1)
    return img


def generate_synthetic(n_per_class: int, seed: int, size: int = NET_INPUT, noise: float = 0.1) -> RawDataset:
    """Ten classes of oriented bars, crosses and blobs with jitter and Gaussian noise."""
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(10), n_per_class)
    labels = labels[rng.permutation(len(labels))]
    images = np.empty((len(labels), size, size), dtype=np.uint8)
    for i, label in enumerate(labels):
        img = _draw(int(label), rng, size) * rng.uniform(0.7, 1.0)
        img = img + rng.normal(0.0, noise, size=img.shape)
        images[i] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return RawDataset(images, labels, 10)
