"""Radiomics feature families over a (volume, mask) pair.

Four families with a fixed public name contract, concatenated in canonical
order: first-order intensity statistics, voxel-face shape descriptors, and
GLCM / GLSZM texture features over equal-width quantized gray levels.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import Mask, Volume, grids_aligned
from .errors import DimMismatch, EmptyMask, NoValidPairs

# the 13 unique 3D unit displacements (first nonzero component positive)
DEFAULT_OFFSETS: tuple[tuple[int, int, int], ...] = (
    (1, 0, 0), (0, 1, 0), (0, 0, 1),
    (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1),
    (1, 1, 1), (1, 1, -1), (1, -1, 1), (1, -1, -1),
)


@dataclass(frozen=True)
class TextureConfig:
    n_bins: int = 32
    offsets: tuple[tuple[int, int, int], ...] = DEFAULT_OFFSETS
    symmetric: bool = True

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        offs = tuple(tuple(int(c) for c in o) for o in self.offsets)
        if any(o == (0, 0, 0) for o in offs):
            raise ValueError("offsets must be nonzero")
        object.__setattr__(self, "offsets", offs)


FIRST_ORDER_NAMES = (
    "firstorder_mean", "firstorder_variance", "firstorder_skewness",
    "firstorder_energy", "firstorder_entropy", "firstorder_p10", "firstorder_p90",
)
SHAPE_NAMES = ("shape_volume_mm3", "shape_surface_area_mm2", "shape_sphericity", "shape_sa_to_v")
GLCM_NAMES = ("glcm_contrast", "glcm_correlation", "glcm_energy", "glcm_homogeneity")
GLSZM_NAMES = (
    "glszm_small_area_emphasis", "glszm_large_area_emphasis",
    "glszm_gray_level_nonuniformity", "glszm_zone_entropy",
)
ALL_FEATURE_NAMES = FIRST_ORDER_NAMES + SHAPE_NAMES + GLCM_NAMES + GLSZM_NAMES

FAMILIES = {
    "FirstOrder": FIRST_ORDER_NAMES,
    "Shape": SHAPE_NAMES,
    "GLCM": GLCM_NAMES,
    "GLSZM": GLSZM_NAMES,
}


@dataclass(frozen=True)
class FeatureVector:
    """Ordered (name, value) pairs in canonical extraction order."""

    names: tuple[str, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.names) != len(self.values):
            raise ValueError("names/values length mismatch")
        if len(set(self.names)) != len(self.names):
            raise ValueError("feature names must be unique")
        if any(not math.isfinite(v) for v in self.values):
            raise ValueError("feature values must be finite")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, self.values))

    def csv_header(self) -> str:
        return ",".join(self.names)

    def csv_row(self) -> str:
        return ",".join(repr(v) for v in self.values)


def _masked(volume: Volume, mask: Mask) -> np.ndarray:
    if not grids_aligned(volume, mask):
        raise DimMismatch("mask grid differs from volume grid")
    fg = mask.voxels >= 0.5
    if not fg.any():
        raise EmptyMask("mask selects no voxels")
    return volume.voxels[fg].astype(np.float64)


def _quantize(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bins over min..max; a constant region maps to bin 0."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return np.zeros(values.shape, dtype=np.int32)
    width = (hi - lo) / n_bins
    q = np.floor((values - lo) / width).astype(np.int32)
    return np.clip(q, 0, n_bins - 1)


def _histogram_entropy_bits(values: np.ndarray, n_bins: int) -> float:
    q = _quantize(values, n_bins)
    counts = np.bincount(q, minlength=n_bins).astype(np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum())


def first_order(volume: Volume, mask: Mask, n_bins: int = 32) -> dict[str, float]:
    x = _masked(volume, mask)
    mean = float(x.mean())
    dev = x - mean
    var = float(np.mean(dev ** 2))
    if var == 0.0:
        skew = 0.0
    else:
        skew = float(np.mean(dev ** 3) / var ** 1.5)
    return {
        "firstorder_mean": mean,
        "firstorder_variance": var,
        "firstorder_skewness": skew,
        "firstorder_energy": float((x ** 2).sum()),
        "firstorder_entropy": _histogram_entropy_bits(x, n_bins),
        "firstorder_p10": float(np.percentile(x, 10)),
        "firstorder_p90": float(np.percentile(x, 90)),
    }


def shape(mask: Mask) -> dict[str, float]:
    fg = mask.voxels >= 0.5
    count = int(fg.sum())
    if count == 0:
        raise EmptyMask("mask selects no voxels")
    sx, sy, sz = mask.spacing
    volume_mm3 = count * sx * sy * sz

    face_area = (sy * sz, sx * sz, sx * sy)
    area = 0.0
    for axis in range(3):
        inside_lo = np.roll(fg, 1, axis=axis)
        inside_hi = np.roll(fg, -1, axis=axis)
        sl = [slice(None)] * 3
        sl[axis] = 0
        inside_lo[tuple(sl)] = False
        sl[axis] = -1
        inside_hi[tuple(sl)] = False
        exposed = np.count_nonzero(fg & ~inside_lo) + np.count_nonzero(fg & ~inside_hi)
        area += exposed * face_area[axis]

    sphericity = math.pi ** (1 / 3) * (6.0 * volume_mm3) ** (2 / 3) / area
    return {
        "shape_volume_mm3": volume_mm3,
        "shape_surface_area_mm2": area,
        "shape_sphericity": sphericity,
        "shape_sa_to_v": area / volume_mm3,
    }


def _quantized_grid(volume: Volume, mask: Mask, n_bins: int) -> np.ndarray:
    """Per-voxel quantized level, -1 outside the mask."""
    fg = mask.voxels >= 0.5
    grid = np.full(volume.dims, -1, dtype=np.int32)
    grid[fg] = _quantize(volume.voxels[fg].astype(np.float64), n_bins)
    return grid


def glcm(volume: Volume, mask: Mask, cfg: TextureConfig = TextureConfig()) -> dict[str, float]:
    _masked(volume, mask)  # validates alignment and non-emptiness
    grid = _quantized_grid(volume, mask, cfg.n_bins)
    offsets = np.asarray(cfg.offsets, dtype=np.int32)
    counts = kernels.glcm_counts(grid, cfg.n_bins, offsets)

    idx = np.arange(cfg.n_bins, dtype=np.float64)
    ii = idx[:, None]
    jj = idx[None, :]
    per_offset = []
    for k in range(counts.shape[0]):
        mat = counts[k]
        if cfg.symmetric:
            mat = mat + mat.T
        total = mat.sum()
        if total == 0:
            continue  # offset produced no in-mask pairs
        p = mat / total
        pi = p.sum(axis=1)
        pj = p.sum(axis=0)
        mu_i = float((idx * pi).sum())
        mu_j = float((idx * pj).sum())
        var_i = float(((idx - mu_i) ** 2 * pi).sum())
        var_j = float(((idx - mu_j) ** 2 * pj).sum())
        contrast = float((p * (ii - jj) ** 2).sum())
        if var_i <= 0.0 or var_j <= 0.0:
            correlation = 0.0
        else:
            correlation = float(
                (p * (ii - mu_i) * (jj - mu_j)).sum() / math.sqrt(var_i * var_j)
            )
        energy = float((p ** 2).sum())
        homogeneity = float((p / (1.0 + (ii - jj) ** 2)).sum())
        per_offset.append((contrast, correlation, energy, homogeneity))

    if not per_offset:
        raise NoValidPairs("no voxel pair lies inside the mask for any offset")
    avg = np.mean(np.asarray(per_offset, dtype=np.float64), axis=0)
    return dict(zip(GLCM_NAMES, (float(v) for v in avg)))


def glszm(volume: Volume, mask: Mask, cfg: TextureConfig = TextureConfig()) -> dict[str, float]:
    _masked(volume, mask)
    grid = _quantized_grid(volume, mask, cfg.n_bins)
    fg = (mask.voxels >= 0.5).astype(np.uint8)
    labels, n_zones = kernels.label_components(grid, fg, 26)

    sizes = np.bincount(labels.ravel(), minlength=n_zones + 1)[1:]
    # gray level of each zone = level at any of its voxels
    flat_labels = labels.ravel()
    flat_grid = grid.ravel()
    first_voxel = np.full(n_zones + 1, -1, dtype=np.int64)
    occupied = np.nonzero(flat_labels)[0]
    # reversed so the first occurrence wins
    first_voxel[flat_labels[occupied[::-1]]] = occupied[::-1]
    zone_levels = flat_grid[first_voxel[1:]]

    nz = float(n_zones)
    sizes_f = sizes.astype(np.float64)
    small = float((1.0 / sizes_f ** 2).sum() / nz)
    large = float((sizes_f ** 2).sum() / nz)

    level_counts = Counter(int(l) for l in zone_levels)
    gln = float(sum(c * c for c in level_counts.values()) / nz)

    cell_counts = Counter(zip((int(l) for l in zone_levels), (int(s) for s in sizes)))
    entropy = 0.0
    for c in cell_counts.values():
        p = c / nz
        entropy -= p * math.log2(p)

    return {
        "glszm_small_area_emphasis": small,
        "glszm_large_area_emphasis": large,
        "glszm_gray_level_nonuniformity": gln,
        "glszm_zone_entropy": entropy,
    }


def extract(volume: Volume, mask: Mask, cfg: TextureConfig = TextureConfig()) -> FeatureVector:
    """All four families concatenated in canonical order (19 features)."""
    merged: dict[str, float] = {}
    merged.update(first_order(volume, mask, cfg.n_bins))
    merged.update(shape(mask))
    merged.update(glcm(volume, mask, cfg))
    merged.update(glszm(volume, mask, cfg))
    return FeatureVector(
        names=ALL_FEATURE_NAMES,
        values=tuple(merged[name] for name in ALL_FEATURE_NAMES),
    )
