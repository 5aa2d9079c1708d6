"""Images in, labelled datasets out.

Covers netpbm (PGM/PPM) decoding and encoding, bilinear resizing,
normalization, the per-class train/val/test split, and a procedural
generator of elliptical, spiral and irregular galaxy images used when
real survey imagery is not at hand.
"""

import csv
import enum
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _rng
from .errors import DataError, ImageFormatError, InvalidShapeError

log = logging.getLogger(__name__)


class GalaxyClass(enum.IntEnum):
    ELLIPTICAL = 0
    SPIRAL = 1
    IRREGULAR = 2

    @property
    def dirname(self):
        return self.name.lower()

    @classmethod
    def from_name(cls, name):
        try:
            return cls[name.strip().upper()]
        except KeyError:
            raise DataError(f"unknown galaxy class {name!r}") from None


SPLITS = ("train", "val", "test")
IMAGE_SUFFIXES = (".pgm", ".ppm")


@dataclass
class Sample:
    id: str
    image: np.ndarray  # C x H x W, normalized
    label: GalaxyClass


class Dataset:
    """Parallel arrays of ids, normalized images (N x C x H x W) and labels."""

    def __init__(self, ids, images, labels):
        self.ids = list(ids)
        self.images = np.ascontiguousarray(images, dtype=np.float64)
        self.labels = np.asarray(labels, dtype=np.int64)
        if not (len(self.ids) == len(self.images) == len(self.labels)):
            raise DataError("ids, images and labels differ in length")
        if len(set(self.ids)) != len(self.ids):
            raise DataError("sample ids must be unique")
        if len(self.ids) and self.images.ndim != 4:
            raise DataError(f"images must be N x C x H x W, got {self.images.shape}")

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i):
        return Sample(self.ids[i], self.images[i], GalaxyClass(int(self.labels[i])))

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset([self.ids[i] for i in idx], self.images[idx], self.labels[idx])

    def class_counts(self):
        return tuple(int((self.labels == c).sum()) for c in GalaxyClass)


# --------------------------------------------------------------------------
# netpbm

def _read_header(buf, ntokens):
    """Return (tokens, payload offset) for a netpbm header."""
    tokens = []
    i = 0
    n = len(buf)
    while len(tokens) < ntokens:
        while i < n and buf[i:i + 1].isspace():
            i += 1
        if i < n and buf[i:i + 1] == b"#":
            while i < n and buf[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < n and not buf[i:i + 1].isspace() and buf[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise ImageFormatError("truncated netpbm header")
        tokens.append(buf[start:i])
    if i >= n or not buf[i:i + 1].isspace():
        raise ImageFormatError("missing whitespace after netpbm header")
    return tokens, i + 1


def decode_netpbm(buf):
    magic = buf[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"unsupported image format {magic!r}; expected binary PGM (P5) or PPM (P6)")
    tokens, offset = _read_header(buf, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ImageFormatError("non-numeric netpbm header field") from None
    if width < 1 or height < 1:
        raise ImageFormatError(f"invalid image size {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"maxval must be 255, got {maxval}")
    size = width * height * channels
    payload = buf[offset:offset + size]
    if len(payload) != size:
        raise ImageFormatError(f"truncated pixel data: expected {size} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return pixels.transpose(2, 0, 1).astype(np.float64)


def encode_netpbm(img):
    """Encode a C x H x W array of integers 0-255 (C = 1 or 3)."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise InvalidShapeError(f"expected a 1- or 3-channel C x H x W image, got {img.shape}")
    if img.min() < 0 or img.max() > 255 or not np.array_equal(img, np.round(img)):
        raise ValueError("pixel values must be integers in [0, 255]")
    c, h, w = img.shape
    magic = b"P5" if c == 1 else b"P6"
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + img.astype(np.uint8).transpose(1, 2, 0).tobytes()


def load_image(path):
    """Decode a binary PGM/PPM file into a C x H x W float tensor of raw 0-255 values."""
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    try:
        return decode_netpbm(buf)
    except ImageFormatError as exc:
        raise ImageFormatError(f"{path}: {exc}") from None


def save_image(path, img):
    Path(path).write_bytes(encode_netpbm(img))


# --------------------------------------------------------------------------
# geometry and intensity

def _sample_axis(src, dst):
    x = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    x = np.clip(x, 0.0, src - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, x - i0


def resize_bilinear(img, out_h, out_w):
    """Bilinear resize with half-pixel centres, applied per channel."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise InvalidShapeError(f"expected C x H x W, got {img.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidShapeError(f"invalid target size {out_h}x{out_w}")
    _, h, w = img.shape
    y0, y1, fy = _sample_axis(h, out_h)
    x0, x1, fx = _sample_axis(w, out_w)
    fx = fx[None, None, :]
    # a + f*(b - a) keeps constant regions exactly constant
    top = img[:, y0][:, :, x0] + fx * (img[:, y0][:, :, x1] - img[:, y0][:, :, x0])
    bot = img[:, y1][:, :, x0] + fx * (img[:, y1][:, :, x1] - img[:, y1][:, :, x0])
    return top + fy[None, :, None] * (bot - top)


def normalize(img):
    """Map raw 0-255 intensities to [-0.5, 0.5]."""
    img = np.asarray(img, dtype=np.float64)
    if img.size and (not np.isfinite(img).all() or img.min() < 0 or img.max() > 255):
        raise ValueError("raw pixel values must lie in [0, 255]")
    return img / 255.0 - 0.5


def match_channels(img, channels):
    if img.shape[0] == channels:
        return img
    if channels == 3 and img.shape[0] == 1:
        return np.repeat(img, 3, axis=0)
    if channels == 1 and img.shape[0] == 3:
        return img.mean(axis=0, keepdims=True)
    raise InvalidShapeError(f"cannot convert {img.shape[0]} channels to {channels}")


def prepare_image(raw, height, width, channels):
    """Raw decoded image -> network input (channel-matched, resized, normalized)."""
    img = match_channels(np.asarray(raw, dtype=np.float64), channels)
    if img.shape[1:] != (height, width):
        img = resize_bilinear(img, height, width)
    return normalize(img)


# --------------------------------------------------------------------------
# splitting

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.60
    val_fraction: float = 0.19
    seed: int = 0

    def __post_init__(self):
        if self.train_fraction <= 0 or self.val_fraction <= 0:
            raise ValueError("split fractions must be positive")
        if self.train_fraction + self.val_fraction >= 1:
            raise ValueError("train + val fractions must be below 1")


def _round_half_up(x):
    return math.floor(x + Fraction(1, 2))


def split_counts(n, spec=SplitSpec()):
    """Per-class (train, val, test) sizes: round-half-up of each fraction, test takes the rest."""
    # decimal fractions taken literally so that e.g. 0.19 * 50 rounds as 9.5
    train = min(n, _round_half_up(Fraction(repr(spec.train_fraction)) * n))
    val = min(n - train, _round_half_up(Fraction(repr(spec.val_fraction)) * n))
    return train, val, n - train - val


def split_indices(ids, labels, spec=SplitSpec()):
    """Index lists (train, val, test), each in ascending dataset order."""
    labels = np.asarray(labels)
    parts = ([], [], [])
    for cls in GalaxyClass:
        members = [i for i in range(len(ids)) if labels[i] == cls]
        if not members:
            raise DataError(f"class {cls.dirname} has no samples")
        members.sort(key=lambda i: ids[i])
        order = _rng.derive_rng(spec.seed, _rng.SPLIT, int(cls)).permutation(len(members))
        members = [members[j] for j in order]
        n_train, n_val, _ = split_counts(len(members), spec)
        parts[0].extend(members[:n_train])
        parts[1].extend(members[n_train:n_train + n_val])
        parts[2].extend(members[n_train + n_val:])
    return tuple(sorted(p) for p in parts)


def stratified_split(dataset, spec=SplitSpec()):
    return tuple(dataset.subset(idx) for idx in split_indices(dataset.ids, dataset.labels, spec))


def split_assignments(dataset, spec=SplitSpec()):
    """Map sample id -> split name."""
    out = {}
    for name, idx in zip(SPLITS, split_indices(dataset.ids, dataset.labels, spec)):
        for i in idx:
            out[dataset.ids[i]] = name
    return out


def write_manifest(path, dataset, assignments):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["id", "class", "split"])
        for sid, label in zip(dataset.ids, dataset.labels):
            writer.writerow([sid, GalaxyClass(int(label)).dirname, assignments[sid]])


def read_manifest(path):
    """List of (id, GalaxyClass, split) rows."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "class", "split"]:
            raise DataError(f"{path}: expected header id,class,split")
        rows = []
        for rec in reader:
            if not rec:
                continue
            if len(rec) != 3 or rec[2] not in SPLITS:
                raise DataError(f"{path}: malformed manifest row {rec}")
            rows.append((rec[0], GalaxyClass.from_name(rec[1]), rec[2]))
    return rows


# --------------------------------------------------------------------------
# dataset directories

def scan_dataset_dir(root):
    """Sorted list of (id, GalaxyClass, path) under ``root/<class>/``."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    entries = []
    seen = set()
    for cls in GalaxyClass:
        folder = root / cls.dirname
        if not folder.is_dir():
            continue
        for path in sorted(folder.iterdir()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            if path.stem in seen:
                raise DataError(f"duplicate sample id {path.stem!r}")
            seen.add(path.stem)
            entries.append((path.stem, cls, path))
    if not entries:
        raise DataError(f"no .pgm/.ppm images found under {root}")
    return entries


def load_dataset_dir(root, height, width, channels, ids=None):
    """Load and prepare every image (or only ``ids``) from a dataset directory."""
    entries = scan_dataset_dir(root)
    if ids is not None:
        wanted = set(ids)
        entries = [e for e in entries if e[0] in wanted]
        missing = wanted - {e[0] for e in entries}
        if missing:
            raise DataError(f"{len(missing)} manifest ids missing from {root}, e.g. {sorted(missing)[0]!r}")
    images = np.empty((len(entries), channels, height, width))
    for i, (_, _, path) in enumerate(entries):
        images[i] = prepare_image(load_image(path), height, width, channels)
    return Dataset([e[0] for e in entries], images, [int(e[1]) for e in entries])


# --------------------------------------------------------------------------
# synthetic galaxies

NOISE_SIGMA = 4.0 / 255.0
BACKGROUND = 0.04


def _grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return yy, xx


def _center(h, w, rng, jitter=0.08):
    return (
        (h - 1) / 2 + rng.uniform(-jitter, jitter) * h,
        (w - 1) / 2 + rng.uniform(-jitter, jitter) * w,
    )


def _elliptical(h, w, rng):
    yy, xx = _grid(h, w)
    scale = min(h, w)
    cy, cx = _center(h, w, rng)
    sigma_a = rng.uniform(0.07, 0.18) * scale
    sigma_b = rng.uniform(0.3, 1.0) * sigma_a
    phi = rng.uniform(0, np.pi)
    amp = rng.uniform(0.5, 0.95)
    dx, dy = xx - cx, yy - cy
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    return amp * np.exp(-(u ** 2 / (2 * sigma_a ** 2) + v ** 2 / (2 * sigma_b ** 2)))


def _spiral(h, w, rng):
    yy, xx = _grid(h, w)
    scale = min(h, w)
    cy, cx = _center(h, w, rng)
    bulge_sigma = rng.uniform(0.04, 0.08) * scale
    bulge_amp = rng.uniform(0.5, 0.95)
    img = bulge_amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * bulge_sigma ** 2))

    pitch = rng.uniform(0.15, 0.35)
    a = rng.uniform(0.04, 0.07) * scale
    r_max = rng.uniform(0.35, 0.45) * scale
    theta_max = np.log(r_max / a) / pitch
    width = rng.uniform(0.025, 0.045) * scale
    arm_amp = rng.uniform(0.35, 0.7) * bulge_amp
    phase = rng.uniform(0, 2 * np.pi)
    handed = rng.choice((-1.0, 1.0))
    # Tilt: the disc is seen at a random inclination.
    tilt = rng.uniform(0.55, 1.0)
    tilt_angle = rng.uniform(0, np.pi)

    theta = np.linspace(0, theta_max, 400)
    r = a * np.exp(pitch * theta)
    fade = np.exp(-r / r_max)
    ridge = np.zeros_like(img)
    for arm in range(2):
        ang = handed * theta + phase + arm * np.pi
        px, py = r * np.cos(ang), r * np.sin(ang) * tilt
        qx = px * np.cos(tilt_angle) - py * np.sin(tilt_angle) + cx
        qy = px * np.sin(tilt_angle) + py * np.cos(tilt_angle) + cy
        d2 = (xx[..., None] - qx) ** 2 + (yy[..., None] - qy) ** 2
        ridge = np.maximum(ridge, (fade * np.exp(-d2 / (2 * width ** 2))).max(axis=-1))
    return img + arm_amp * ridge


def _irregular(h, w, rng):
    yy, xx = _grid(h, w)
    scale = min(h, w)
    img = np.zeros((h, w))
    for _ in range(rng.integers(3, 8)):
        cy = rng.uniform(0.2, 0.8) * (h - 1)
        cx = rng.uniform(0.2, 0.8) * (w - 1)
        sigma = rng.uniform(0.03, 0.08) * scale
        amp = rng.uniform(0.3, 0.9)
        img += amp * np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma ** 2))
    return img


_RENDERERS = {
    GalaxyClass.ELLIPTICAL: _elliptical,
    GalaxyClass.SPIRAL: _spiral,
    GalaxyClass.IRREGULAR: _irregular,
}


def generate_synthetic(cls, h, w, rng, noise_sigma=NOISE_SIGMA):
    """Render one 3-channel (grey, replicated) galaxy image with values in [0, 1].

    ``noise_sigma=0`` gives the noiseless rendering.
    """
    if h < 16 or w < 16:
        raise InvalidShapeError(f"synthetic images need h, w >= 16, got {h}x{w}")
    img = BACKGROUND + _RENDERERS[GalaxyClass(cls)](h, w, rng)
    if noise_sigma:
        img = img + rng.normal(0.0, noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.repeat(img[None], 3, axis=0)


def render_sample(cls, index, h, w, seed):
    """Quantized 0-255 image for sample ``index`` of class ``cls``."""
    rng = _rng.derive_rng(seed, _rng.SYNTH, int(cls), index)
    return np.round(generate_synthetic(cls, h, w, rng) * 255.0)


def sample_id(cls, index):
    return f"{GalaxyClass(cls).dirname}_{index}"


def generate_dataset(counts, h, w, seed, channels=3):
    """Deterministic synthetic dataset with ``counts[c]`` images of class ``c``."""
    counts = [int(c) for c in counts]
    if len(counts) != 3 or min(counts) < 0:
        raise ValueError("counts must be three non-negative integers")
    total = sum(counts)
    images = np.empty((total, channels, h, w))
    ids, labels = [], []
    k = 0
    for cls, n in zip(GalaxyClass, counts):
        for i in range(n):
            raw = render_sample(cls, i, h, w, seed)
            images[k] = normalize(match_channels(raw, channels))
            ids.append(sample_id(cls, i))
            labels.append(int(cls))
            k += 1
    return Dataset(ids, images, labels)


def write_dataset_dir(root, counts, size, seed):
    """Write a synthetic dataset as ``root/<class>/<class>_<i>.ppm``; returns per-class counts."""
    root = Path(root)
    for cls, n in zip(GalaxyClass, counts):
        folder = root / cls.dirname
        folder.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            save_image(folder / f"{sample_id(cls, i)}.ppm", render_sample(cls, i, size, size, seed))
    return tuple(int(n) for n in counts)
