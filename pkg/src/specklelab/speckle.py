"""Multiplicative speckle synthesis and patch dataset construction.

Intensity images are 2-D float64 numpy arrays; an observed image is the
elementwise product of a noise-free image and a fully developed speckle
field drawn i.i.d. from the unit-mean Gamma law with shape L and rate L
(mean 1, variance 1/L), where L is the number of looks.

Stream accounting (reproducibility contract): ``sample_speckle`` consumes
exactly one draw from the caller's Rng as the field key; each pixel then
uses its own substream derived from (key, flat index) as documented in
``specklelab.rng``.  ``build_patch_dataset`` consumes, per patch, one draw
for the source image, two for the crop position, and one field key, in that
order.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .backend import kernels
from .errors import ConfigError, EmptyCorpusError, FormatError, ShapeError
from .rng import Rng

DATASET_MAGIC = b"DSPKDAT1"


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate/coerce to a 2-D float64 array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got rank {arr.ndim}")
    return arr


def sample_speckle(rows: int, cols: int, looks: float, rng: Rng) -> np.ndarray:
    """(rows, cols) field of i.i.d. unit-mean Gamma(L, rate L) speckle."""
    if rows < 1 or cols < 1:
        raise ConfigError(f"field dimensions must be >= 1, got {rows}x{cols}")
    if looks < 1.0:
        raise ConfigError(f"number of looks must be >= 1, got {looks}")
    key = rng.u64()
    return kernels().gamma_field(key, rows * cols, float(looks)).reshape(rows, cols)


def corrupt(clean: np.ndarray, speckle: np.ndarray) -> np.ndarray:
    """Observed intensity: elementwise product of clean image and speckle."""
    clean = as_image(clean, "clean")
    speckle = as_image(speckle, "speckle")
    if clean.shape != speckle.shape:
        raise ShapeError(f"clean {clean.shape} and speckle {speckle.shape} dimensions differ")
    return clean * speckle


def make_homogeneous_scene(
    value: float, rows: int, cols: int, looks: float, rng: Rng
) -> tuple[np.ndarray, np.ndarray]:
    """Constant scene plus its speckled observation (ENL test fixture)."""
    if value < 0:
        raise ConfigError("scene value must be >= 0")
    clean = np.full((rows, cols), float(value))
    return clean, corrupt(clean, sample_speckle(rows, cols, looks, rng))


@dataclass
class PatchDataset:
    """Aligned (clean, noisy, speckle) patch triples for training."""

    clean: np.ndarray    # (count, P, P)
    speckle: np.ndarray  # (count, P, P)
    noisy: np.ndarray    # (count, P, P), clean * speckle
    looks: float
    seed: int
    source_indices: np.ndarray | None = None

    def __len__(self) -> int:
        return self.clean.shape[0]

    @property
    def patch_size(self) -> int:
        return self.clean.shape[1]


def build_patch_dataset(
    images: list[np.ndarray],
    count: int,
    patch_size: int,
    looks: float,
    rng: Rng,
) -> PatchDataset:
    """Crop `count` random patches and pair each with a fresh speckle field.

    Source images must be nonnegative, pre-normalized to [0, 1], and at
    least `patch_size` in both dimensions (smaller ones are skipped with a
    warning).  Sampling is with replacement; the result is a pure function
    of the rng seed.
    """
    if patch_size < 1:
        raise ConfigError("patch_size must be >= 1")
    if count < 0:
        raise ConfigError("count must be >= 0")
    usable = []
    for i, img in enumerate(images):
        img = as_image(img, f"images[{i}]")
        if img.shape[0] < patch_size or img.shape[1] < patch_size:
            warnings.warn(
                f"skipping source image {i}: {img.shape} smaller than patch {patch_size}",
                stacklevel=2,
            )
            continue
        if np.any(img < 0):
            raise ConfigError(f"source image {i} has negative intensities")
        usable.append(img)
    if not usable and count > 0:
        raise EmptyCorpusError("no source image is large enough for the requested patch size")

    P = patch_size
    clean = np.empty((count, P, P))
    speckle = np.empty((count, P, P))
    sources = np.empty(count, dtype=np.int64)
    for k in range(count):
        idx = rng.below(len(usable))
        img = usable[idx]
        r = rng.below(img.shape[0] - P + 1)
        c = rng.below(img.shape[1] - P + 1)
        clean[k] = img[r:r + P, c:c + P]
        speckle[k] = sample_speckle(P, P, looks, rng)
        sources[k] = idx
    return PatchDataset(
        clean=clean,
        speckle=speckle,
        noisy=clean * speckle,
        looks=float(looks),
        seed=rng.seed,
        source_indices=sources,
    )


def save_dataset(dataset: PatchDataset, path) -> None:
    """Write the DSPKDAT1 container (see README for the field layout)."""
    count = len(dataset)
    header = DATASET_MAGIC + struct.pack(
        "<IIfQ", count, dataset.patch_size, float(dataset.looks), dataset.seed
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for k in range(count):
            fh.write(dataset.clean[k].astype("<f4").tobytes())
            fh.write(dataset.speckle[k].astype("<f4").tobytes())


def load_dataset(path) -> PatchDataset:
    """Read a DSPKDAT1 container; the noisy plane is recomputed."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 28:
        raise FormatError(f"dataset file truncated at offset {len(blob)} (header is 28 bytes)")
    if blob[:8] != DATASET_MAGIC:
        raise FormatError(f"bad dataset magic at offset 0: {blob[:8]!r}")
    count, patch_size, looks, seed = struct.unpack("<IIfQ", blob[8:28])
    plane = patch_size * patch_size * 4
    expected = 28 + count * 2 * plane
    if len(blob) != expected:
        raise FormatError(
            f"dataset payload ends at offset {len(blob)}, expected {expected} "
            f"for {count} patches of {patch_size}x{patch_size}"
        )
    raw = np.frombuffer(blob, dtype="<f4", offset=28).astype(np.float64)
    raw = raw.reshape(count, 2, patch_size, patch_size)
    clean = np.ascontiguousarray(raw[:, 0])
    speckle = np.ascontiguousarray(raw[:, 1])
    return PatchDataset(
        clean=clean,
        speckle=speckle,
        noisy=clean * speckle,
        looks=float(looks),
        seed=seed,
    )


def synthetic_clean_image(rows: int, cols: int, rng: Rng, shapes: int = 14) -> np.ndarray:
    """Piecewise scene with flat regions, edges and thin lines, in [0, 1].

    Stand-in corpus generator for desk experiments; any grayscale corpus can
    be used instead.
    """
    base = 0.15 + 0.25 * rng.uniform()
    img = np.full((rows, cols), base)
    ramp = 0.2 * rng.uniform()
    if rng.below(2):
        img += ramp * np.linspace(0.0, 1.0, cols)[None, :]
    else:
        img += ramp * np.linspace(0.0, 1.0, rows)[:, None]
    for _ in range(shapes):
        kind = rng.below(3)
        val = 0.1 + 0.85 * rng.uniform()
        if kind == 0:
            h = 4 + rng.below(max(rows // 3, 1))
            w = 4 + rng.below(max(cols // 3, 1))
            r0 = rng.below(max(rows - h, 1))
            c0 = rng.below(max(cols - w, 1))
            img[r0:r0 + h, c0:c0 + w] = val
        elif kind == 1:
            cr = rng.below(rows)
            cc = rng.below(cols)
            ra = 3 + rng.below(max(rows // 6, 1))
            rb = 3 + rng.below(max(cols // 6, 1))
            yy, xx = np.ogrid[:rows, :cols]
            img[((yy - cr) / ra) ** 2 + ((xx - cc) / rb) ** 2 <= 1.0] = val
        else:
            thick = 1 + rng.below(2)
            if rng.below(2):
                r0 = rng.below(rows - thick + 1)
                img[r0:r0 + thick, :] = val
            else:
                c0 = rng.below(cols - thick + 1)
                img[:, c0:c0 + thick] = val
    return np.clip(img, 0.0, 1.0)
