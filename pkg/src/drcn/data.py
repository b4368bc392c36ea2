"""Images on disk to training batches.

Images are float64 arrays shaped (channels, height, width) with values in
[0, 1].  Binary PGM (P5) and PPM (P6) with maxval 255 are the only file
formats.

Randomness is derived, never carried: every noise field, shuffle order and
augmentation choice comes from a Philox generator keyed by
``derive_seed(master_seed, *ids)``.  Gaussian samples are Box-Muller
transforms of Philox uniform doubles, so a stream depends only on its seed.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ImageFormatError, ImageTruncatedError, ShapeError

log = logging.getLogger(__name__)

PATCH_SIZE = 45
IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


# -- netpbm I/O -------------------------------------------------------------

def _header_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and (data[pos:pos + 1].isspace() or data[pos:pos + 1] == b"#"):
            if data[pos:pos + 1] == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            else:
                pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ImageTruncatedError("header ended early", offset=pos)
        tok = data[start:pos]
        if not tok.isdigit():
            raise ImageFormatError(f"expected an integer in header, found {tok!r}", offset=start)
        tokens.append((int(tok), start))
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise ImageFormatError("header must end with a single whitespace byte", offset=pos)
    return tokens, pos + 1


def decode_netpbm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise ImageFormatError(f"unsupported magic {magic!r}, expected b'P5' or b'P6'", offset=0)
    tokens, start = _header_tokens(data, 3)
    (width, w_off), (height, h_off), (maxval, m_off) = tokens
    if width < 1:
        raise ImageFormatError("width must be positive", offset=w_off)
    if height < 1:
        raise ImageFormatError("height must be positive", offset=h_off)
    if maxval != 255:
        raise ImageFormatError(f"maxval {maxval} unsupported, only 255", offset=m_off)
    need = width * height * channels
    payload = data[start:start + need]
    if len(payload) < need:
        raise ImageTruncatedError(
            f"payload has {len(payload)} of {need} bytes", offset=start + len(payload)
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def quantize(image) -> np.ndarray:
    """Map [0, 1] floats to the 8-bit grid, rounding half up and clamping."""
    return np.clip(np.floor(np.asarray(image, dtype=np.float64) * 255.0 + 0.5), 0, 255)


def encode_netpbm(image) -> bytes:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[None]
    if image.ndim != 3 or image.shape[0] not in (1, 3):
        raise ShapeError(f"image must be (1|3, h, w), got {image.shape}")
    c, h, w = image.shape
    magic = b"P5" if c == 1 else b"P6"
    body = quantize(image).astype(np.uint8).transpose(1, 2, 0).tobytes()
    return magic + f"\n{w} {h}\n255\n".encode("ascii") + body


def read_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_netpbm(fh.read())


def write_image(image, path):
    with open(path, "wb") as fh:
        fh.write(encode_netpbm(image))


# -- noise ------------------------------------------------------------------

def derive_seed(*ids: int) -> int:
    """Stable 64-bit seed from a tuple of nonnegative integers."""
    lo, hi = np.random.SeedSequence([int(i) for i in ids]).generate_state(2, np.uint32)
    return int(lo) | (int(hi) << 32)


def philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def gaussian(shape, seed: int) -> np.ndarray:
    """Standard normal samples via Box-Muller on Philox uniforms."""
    n = int(np.prod(shape))
    pairs = (n + 1) // 2
    u = philox(seed).random(2 * pairs)
    radius = np.sqrt(-2.0 * np.log(1.0 - u[:pairs]))  # 1 - u lies in (0, 1]
    theta = 2.0 * np.pi * u[pairs:]
    z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
    return z[:n].reshape(shape)


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 25.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")


def add_gaussian_noise(image, spec: NoiseSpec) -> np.ndarray:
    """y = x + n with n ~ N(0, (sigma/255)^2). Not clamped."""
    image = np.asarray(image, dtype=np.float64)
    return image + (spec.sigma / 255.0) * gaussian(image.shape, spec.seed)


# -- patches and augmentation ----------------------------------------------

def patch_positions(length: int, size: int, stride: int) -> list[int]:
    pos = list(range(0, length - size + 1, stride))
    if pos[-1] != length - size:
        pos.append(length - size)
    return pos


def extract_patches(image, size: int = PATCH_SIZE, stride: int = 35):
    """All size x size windows at ``stride`` plus edge-anchored ones.

    Returns a list of ((top, left), patch). An image smaller than the patch
    yields an empty list and a warning.
    """
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if stride < 1:
        raise ValueError("stride must be positive")
    if h < size or w < size:
        log.warning("skipping %dx%d image: smaller than %d patch", h, w, size)
        return []
    return [
        ((i, j), image[..., i:i + size, j:j + size].copy())
        for i in patch_positions(h, size, stride)
        for j in patch_positions(w, size, stride)
    ]


def augment(patch, transform_id: int) -> np.ndarray:
    """Dihedral transform on the last two axes.

    0-3 rotate counterclockwise by 0/90/180/270 degrees; 4-7 mirror left-right
    first, then rotate by (id - 4) quarter turns.
    """
    if not 0 <= int(transform_id) <= 7:
        raise ValueError(f"transform id must be in 0..7, got {transform_id}")
    patch = np.asarray(patch)
    if patch.shape[-1] != patch.shape[-2]:
        raise ShapeError("augment expects a square patch")
    if transform_id >= 4:
        patch = patch[..., ::-1]
    return np.ascontiguousarray(np.rot90(patch, transform_id % 4, axes=(-2, -1)))


def inverse_transform(transform_id: int) -> int:
    if transform_id < 4:
        return (4 - transform_id) % 4
    return transform_id  # reflections are involutions


# -- corpora ----------------------------------------------------------------

def _blur(img, passes):
    for _ in range(passes):
        img = (img + np.roll(img, 1, 0) + np.roll(img, -1, 0) + np.roll(img, 1, 1) + np.roll(img, -1, 1)) / 5
    return img


def synthetic_image(kind: int, size: int, channels: int, seed: int) -> np.ndarray:
    """One of four families: gradients, checkerboards, smooth noise, disks."""
    rng = philox(derive_seed(seed, kind))
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
    planes = []
    for c in range(channels):
        family = kind % 4
        if family == 0:
            a, b = rng.uniform(-1, 1, 2)
            img = a * xx + b * yy + 0.3 * np.sin(2 * np.pi * rng.uniform(0.5, 2) * (xx + yy) + c)
        elif family == 1:
            cell = int(rng.integers(6, 14))
            img = ((np.arange(size)[:, None] // cell + np.arange(size)[None, :] // cell) % 2).astype(float)
            img = img + 0.2 * xx
        elif family == 2:
            img = _blur(rng.standard_normal((size, size)), int(rng.integers(3, 8)))
        else:
            img = np.zeros((size, size))
            for _ in range(6):
                cy, cx, rad = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.08, 0.3)
                img += rng.uniform(-1, 1) * (((yy - cy) ** 2 + (xx - cx) ** 2) < rad * rad)
        img = img - img.min()
        img = img / (img.max() or 1.0)
        planes.append(img)
    # keep away from 0 and 1 so noise statistics survive 8-bit clipping
    return 0.15 + 0.7 * np.stack(planes)


def make_synthetic_corpus(count: int = 12, size: int = 64, channels: int = 1, seed: int = 0):
    return [(f"synth_{i:02d}", synthetic_image(i, size, channels, seed)) for i in range(count)]


def write_corpus(images, directory):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for name, img in images:
        path = os.path.join(directory, name + (".pgm" if img.shape[0] == 1 else ".ppm"))
        write_image(img, path)
        paths.append(path)
    return paths


def load_corpus(directory):
    """(name, image) pairs for every PGM/PPM file in ``directory``, sorted by name."""
    names = sorted(f for f in os.listdir(directory) if f.lower().endswith(IMAGE_SUFFIXES))
    return [(os.path.splitext(f)[0], read_image(os.path.join(directory, f))) for f in names]


# -- batches ----------------------------------------------------------------

@dataclass
class PatchMeta:
    source: str
    position: tuple
    augmentation: int
    noise_seed: int


@dataclass
class PatchBatch:
    noisy: np.ndarray
    residual_label: np.ndarray
    meta: list = field(default_factory=list)

    @property
    def clean(self):
        return self.noisy - self.residual_label


_SHUFFLE_TAG = 1
_NOISE_TAG = 2


class PatchDataset:
    """Clean training patches plus the per-epoch shuffle/augment/noise recipe."""

    def __init__(self, images, size=PATCH_SIZE, stride=35, patches_per_image=None, seed=0):
        self.size = size
        self.patches, self.sources, self.positions = [], [], []
        self.skipped = 0
        for idx, (name, img) in enumerate(images):
            found = extract_patches(img, size, stride)
            if not found:
                self.skipped += 1
                continue
            if patches_per_image is not None and patches_per_image < len(found):
                pick = philox(derive_seed(seed, idx)).choice(len(found), patches_per_image, replace=False)
                found = [found[i] for i in sorted(pick)]
            for pos, patch in found:
                self.patches.append(patch)
                self.sources.append(name)
                self.positions.append(pos)
        if not self.patches:
            raise ValueError("corpus produced no patches")
        self.patches = np.stack(self.patches)

    def __len__(self):
        return len(self.patches)

    def batches(self, epoch: int, batch_size: int, sigma: float, seed: int, augment_data=True):
        """Yield the epoch's PatchBatch stream; a pure function of its arguments."""
        rng = philox(derive_seed(seed, epoch, _SHUFFLE_TAG))
        order = rng.permutation(len(self))
        aug_ids = rng.integers(0, 8, size=len(self)) if augment_data else np.zeros(len(self), int)
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            clean, noise, meta = [], [], []
            for i in idx:
                t = int(aug_ids[i])
                patch = augment(self.patches[i], t)
                nseed = derive_seed(seed, epoch, _NOISE_TAG, int(i))
                clean.append(patch)
                noise.append((sigma / 255.0) * gaussian(patch.shape, nseed))
                meta.append(PatchMeta(self.sources[i], self.positions[i], t, nseed))
            clean = np.stack(clean)
            noise = np.stack(noise)
            yield PatchBatch(clean + noise, noise, meta)
