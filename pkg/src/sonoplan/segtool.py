"""Perception layer: synthetic phantoms, promptable reference segmentation,
overlap metrics and geometric serialization of masks.

The reference segmenter is intensity-threshold region growth behind a small
backend interface, so a learned model can replace it without touching the
rest of the pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .core import Mask, Volume, grids_aligned
from .errors import (
    DimMismatch,
    EllipsoidOutOfBounds,
    NoPositiveSeed,
    PromptOutOfBounds,
)

# ---------------------------------------------------------------------------
# prompts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClickPoint:
    x: int
    y: int
    z: int
    positive: bool


@dataclass(frozen=True)
class ClickPrompt:
    points: tuple[ClickPoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if not any(p.positive for p in self.points):
            raise NoPositiveSeed("click prompt needs at least one positive point")


@dataclass(frozen=True)
class BBoxPrompt:
    """Two opposite voxel corners; normalized to min <= max per axis."""

    lo: tuple[int, int, int]
    hi: tuple[int, int, int]

    def __post_init__(self):
        lo = tuple(min(a, b) for a, b in zip(self.lo, self.hi))
        hi = tuple(max(a, b) for a, b in zip(self.lo, self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)


@dataclass(frozen=True)
class AutonomyPrompt:
    pass


Prompt = ClickPrompt | BBoxPrompt | AutonomyPrompt


def _check_coord(coord, dims):
    if not all(0 <= c < d for c, d in zip(coord, dims)):
        raise PromptOutOfBounds(f"voxel {tuple(coord)} outside dims {dims}")


def validate_prompt(prompt: Prompt, dims: tuple[int, int, int]) -> None:
    if isinstance(prompt, ClickPrompt):
        for p in prompt.points:
            _check_coord((p.x, p.y, p.z), dims)
    elif isinstance(prompt, BBoxPrompt):
        _check_coord(prompt.lo, dims)
        _check_coord(prompt.hi, dims)


def parse_prompt_spec(spec: str) -> Prompt:
    """Parse the prompt grammar shared by the CLI and the HTTP API:
    ``auto`` | ``click:x,y,z,+;x,y,z,-`` | ``bbox:x0,y0,z0,x1,y1,z1``."""
    spec = spec.strip()
    if spec == "auto":
        return AutonomyPrompt()
    kind, sep, rest = spec.partition(":")
    if not sep:
        raise ValueError(f"bad prompt spec {spec!r}")
    if kind == "click":
        points = []
        for part in rest.split(";"):
            fields = [f.strip() for f in part.split(",")]
            if len(fields) != 4 or fields[3] not in ("+", "-"):
                raise ValueError(f"bad click point {part!r}")
            points.append(
                ClickPoint(int(fields[0]), int(fields[1]), int(fields[2]), fields[3] == "+")
            )
        return ClickPrompt(tuple(points))
    if kind == "bbox":
        vals = [int(v.strip()) for v in rest.split(",")]
        if len(vals) != 6:
            raise ValueError(f"bbox needs 6 coordinates, got {len(vals)}")
        return BBoxPrompt(tuple(vals[:3]), tuple(vals[3:]))
    raise ValueError(f"unknown prompt kind {kind!r}")


# ---------------------------------------------------------------------------
# phantoms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ellipsoid:
    center_mm: tuple[float, float, float]
    semiaxes_mm: tuple[float, float, float]
    intensity: float

    def __post_init__(self):
        if any(a <= 0 for a in self.semiaxes_mm):
            raise ValueError("semi-axes must be positive")


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    ellipsoids: tuple[Ellipsoid, ...]
    background: float = 0.0
    noise_sigma: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))


def make_phantom(spec: PhantomSpec) -> tuple[Volume, Mask]:
    """Render a phantom volume and its ground-truth mask.

    A voxel belongs to the mask when its center lies inside any ellipsoid;
    intensities are the ellipsoid value (later ellipsoids win) plus optional
    Gaussian noise seeded by ``rng_seed``.
    """
    dims = tuple(int(d) for d in spec.dims)
    spacing = np.asarray(spec.spacing, dtype=np.float64)
    extent = np.asarray(dims) * spacing
    vol = np.full(dims, spec.background, dtype=np.float64)
    mask = np.zeros(dims, dtype=bool)

    centers = [
        (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)
    ]
    gx, gy, gz = np.meshgrid(*centers, indexing="ij")

    for ell in spec.ellipsoids:
        c = np.asarray(ell.center_mm, dtype=np.float64)
        a = np.asarray(ell.semiaxes_mm, dtype=np.float64)
        if np.any(c - a < 0) or np.any(c + a > extent):
            raise EllipsoidOutOfBounds(
                f"ellipsoid at {ell.center_mm} with semi-axes {ell.semiaxes_mm} "
                f"exceeds volume extent {tuple(extent)}"
            )
        inside = (
            ((gx - c[0]) / a[0]) ** 2
            + ((gy - c[1]) / a[1]) ** 2
            + ((gz - c[2]) / a[2]) ** 2
        ) < 1.0
        vol[inside] = ell.intensity
        mask |= inside

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.rng_seed)
        vol = vol + rng.normal(0.0, spec.noise_sigma, size=dims)

    volume = Volume(dims, tuple(float(s) for s in spec.spacing), vol.astype(np.float32))
    truth = Mask(volume.dims, volume.spacing, mask.astype(np.float32))
    return volume, truth


# ---------------------------------------------------------------------------
# reference segmentation backend
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SegmenterConfig:
    """Tolerances for the region-growing reference backend.

    ``tau`` and ``autonomy_threshold`` default to values derived from the
    robust intensity range (1st/99th percentiles) of the volume at hand.
    """

    tau: float | None = None
    autonomy_threshold: float | None = None
    min_component_voxels: int = 10


def _robust_range(volume: Volume) -> tuple[float, float]:
    lo, hi = np.percentile(volume.voxels, [1.0, 99.0])
    return float(lo), float(hi)


def _default_tau(volume: Volume) -> float:
    lo, hi = _robust_range(volume)
    return 0.5 * (hi - lo)


def _otsu_threshold(values: np.ndarray, n_bins: int = 256) -> float:
    """Threshold maximizing between-class variance; stable even when the
    foreground is a tiny fraction of the volume (percentiles are not)."""
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        return hi
    hist, edges = np.histogram(values, bins=n_bins, range=(lo, hi))
    p = hist.astype(np.float64) / hist.sum()
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(p)
    mu = np.cumsum(p * centers)
    w1 = 1.0 - w0
    valid = (w0 > 0) & (w1 > 0)
    between = np.zeros(n_bins)
    between[valid] = (mu[-1] * w0[valid] - mu[valid]) ** 2 / (w0[valid] * w1[valid])
    return float(centers[int(np.argmax(between))])


def _default_autonomy_threshold(volume: Volume) -> float:
    return _otsu_threshold(volume.voxels)


def _full_box(dims):
    return (0, 0, 0, dims[0] - 1, dims[1] - 1, dims[2] - 1)


class ReferenceBackend:
    """Deterministic threshold/region-growing segmenter.

    Click prompts grow 6-connected regions around the positive seeds within
    an intensity tolerance of the seed mean, minus regions grown from the
    negative seeds.  BBox prompts grow from the box center, clipped to the
    box.  Autonomy detects candidate boxes first and unions per-box results.
    """

    def __init__(self, config: SegmenterConfig = SegmenterConfig()):
        self.config = config

    def segment(self, volume: Volume, prompt: Prompt) -> Mask:
        validate_prompt(prompt, volume.dims)
        tau = self.config.tau if self.config.tau is not None else _default_tau(volume)
        vox = volume.voxels
        if isinstance(prompt, ClickPrompt):
            out = self._click(vox, prompt, tau)
        elif isinstance(prompt, BBoxPrompt):
            out = self._bbox(vox, prompt, tau)
        elif isinstance(prompt, AutonomyPrompt):
            out = self._autonomy(volume, tau)
        else:
            raise TypeError(f"unknown prompt type {type(prompt)!r}")
        return Mask(volume.dims, volume.spacing, out.astype(np.float32))

    def _click(self, vox, prompt: ClickPrompt, tau):
        pos = [(p.x, p.y, p.z) for p in prompt.points if p.positive]
        neg = [(p.x, p.y, p.z) for p in prompt.points if not p.positive]
        box = _full_box(vox.shape)
        ref = float(np.mean([vox[c] for c in pos]))
        grown = kernels.region_grow(vox, pos, ref, tau, box)
        if neg:
            neg_ref = float(np.mean([vox[c] for c in neg]))
            veto = kernels.region_grow(vox, neg, neg_ref, tau, box)
            grown = grown & ~veto
        return grown

    def _bbox(self, vox, prompt: BBoxPrompt, tau):
        center = tuple((lo + hi) // 2 for lo, hi in zip(prompt.lo, prompt.hi))
        box = (*prompt.lo, *prompt.hi)
        ref = float(vox[center])
        return kernels.region_grow(vox, [center], ref, tau, box)

    def _autonomy(self, volume: Volume, tau):
        theta = (
            self.config.autonomy_threshold
            if self.config.autonomy_threshold is not None
            else _default_autonomy_threshold(volume)
        )
        boxes = autonomy_detect(volume, theta, self.config.min_component_voxels)
        out = np.zeros(volume.dims, dtype=np.uint8)
        for bb in boxes:
            out |= self._bbox(volume.voxels, bb, tau)
        return out


def segment(volume: Volume, prompt: Prompt, backend=None) -> Mask:
    """Segment with the given backend (reference region-grower by default)."""
    if backend is None:
        backend = ReferenceBackend()
    return backend.segment(volume, prompt)


def autonomy_detect(volume: Volume, theta: float, min_voxels: int) -> list[BBoxPrompt]:
    """Tight bounding boxes of 6-connected super-threshold components,
    largest first."""
    above = volume.voxels >= theta
    labels, n = kernels.label_components(
        np.ones(volume.dims, dtype=np.int32), above.astype(np.uint8), 6
    )
    boxes = []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    for lab in range(1, n + 1):
        if sizes[lab] < min_voxels:
            continue
        idx = np.nonzero(labels == lab)
        lo = tuple(int(ax.min()) for ax in idx)
        hi = tuple(int(ax.max()) for ax in idx)
        boxes.append((int(sizes[lab]), lab, BBoxPrompt(lo, hi)))
    boxes.sort(key=lambda t: (-t[0], t[1]))
    return [b for _, _, b in boxes]


# ---------------------------------------------------------------------------
# overlap metrics and loss
# ---------------------------------------------------------------------------


def _binary_sets(a: Mask, b: Mask):
    if a.dims != b.dims:
        raise DimMismatch(f"{a.dims} vs {b.dims}")
    return a.voxels >= 0.5, b.voxels >= 0.5


def dice(a: Mask, b: Mask) -> float:
    fa, fb = _binary_sets(a, b)
    na, nb = int(fa.sum()), int(fb.sum())
    if na + nb == 0:
        return 1.0
    inter = int(np.count_nonzero(fa & fb))
    return 2.0 * inter / (na + nb)


def iou(a: Mask, b: Mask) -> float:
    fa, fb = _binary_sets(a, b)
    union = int(np.count_nonzero(fa | fb))
    if union == 0:
        return 1.0
    inter = int(np.count_nonzero(fa & fb))
    return inter / union


_CLAMP_EPS = 1e-7


def composite_loss(pred: Mask, gt: Mask, lambda_dice: float = 1.0, lambda_ce: float = 1.0) -> float:
    """Weighted sum of (1 - soft Dice) and mean binary cross-entropy."""
    if pred.dims != gt.dims:
        raise DimMismatch(f"{pred.dims} vs {gt.dims}")
    p = pred.voxels.astype(np.float64)
    g = (gt.voxels >= 0.5).astype(np.float64)

    denom = p.sum() + g.sum()
    soft_dice = 1.0 if denom == 0 else 2.0 * float((p * g).sum()) / float(denom)

    pc = np.clip(p, _CLAMP_EPS, 1.0 - _CLAMP_EPS)
    ce = float(np.mean(-(g * np.log(pc) + (1.0 - g) * np.log(1.0 - pc))))

    return lambda_dice * (1.0 - soft_dice) + lambda_ce * ce


# ---------------------------------------------------------------------------
# geometric descriptors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LesionComponent:
    lesion_id: str
    volume_mm3: float
    centroid_mm: tuple[float, float, float]
    oar_min_distance_mm: float  # inf when no OAR declared / OAR empty


@dataclass(frozen=True)
class SegObservation:
    """Geometric summary of a segmentation, serialized for the strategy agent."""

    mask_ref: str
    lesion_volume_mm3: float
    centroid_mm: tuple[float, float, float]
    bbox: tuple[tuple[int, int, int], tuple[int, int, int]]
    oar_min_distance_mm: tuple[float, ...]
    multiplicity: int
    components: tuple[LesionComponent, ...] = field(default_factory=tuple)

    def min_oar_distance(self) -> float:
        finite = [d for d in self.oar_min_distance_mm if math.isfinite(d)]
        return min(finite) if finite else math.inf

    def to_block(self) -> str:
        d = self.min_oar_distance()
        dist = "none" if math.isinf(d) else f"{d:.2f}"
        cx, cy, cz = self.centroid_mm
        lines = [
            f"SEG: volume_mm3={self.lesion_volume_mm3:.2f}; "
            f"centroid=({cx:.2f},{cy:.2f},{cz:.2f}); "
            f"multiplicity={self.multiplicity}; oar_min_distance_mm={dist}"
        ]
        for comp in self.components:
            cd = comp.oar_min_distance_mm
            cdist = "none" if math.isinf(cd) else f"{cd:.2f}"
            lines.append(
                f"SEG-LESION: id={comp.lesion_id}; volume_mm3={comp.volume_mm3:.2f}; "
                f"oar_min_distance_mm={cdist}"
            )
        return "\n".join(lines)


def _boundary_coords(fg: np.ndarray) -> np.ndarray:
    """Coordinates of foreground voxels with at least one 6-neighbor outside."""
    eroded = fg.copy()
    for axis in range(3):
        lo = np.roll(fg, 1, axis=axis)
        hi = np.roll(fg, -1, axis=axis)
        # rolled-in faces count as outside
        sl = [slice(None)] * 3
        sl[axis] = 0
        lo[tuple(sl)] = False
        sl[axis] = -1
        hi[tuple(sl)] = False
        eroded &= lo & hi
    return np.argwhere(fg & ~eroded)


def _min_distance_mm(fg_a: np.ndarray, fg_b: np.ndarray, spacing) -> float:
    """Minimum center-to-center distance between two voxel sets.

    The closest pair of two disjoint sets lies on their boundaries, so only
    boundary voxels are compared; overlap short-circuits to 0.
    """
    if not fg_a.any() or not fg_b.any():
        return math.inf
    if np.any(fg_a & fg_b):
        return 0.0
    pa = _boundary_coords(fg_a).astype(np.float64) * np.asarray(spacing)
    pb = _boundary_coords(fg_b).astype(np.float64) * np.asarray(spacing)
    best = math.inf
    # chunk the outer set to bound the pairwise matrix
    for start in range(0, len(pa), 2048):
        chunk = pa[start : start + 2048]
        d2 = ((chunk[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
        best = min(best, float(np.sqrt(d2.min())))
    return best


def geometric_descriptors(
    mask: Mask,
    volume: Volume,
    oars: list[Mask] | tuple[Mask, ...] = (),
    mask_ref: str = "",
) -> SegObservation:
    if not grids_aligned(mask, volume):
        raise DimMismatch("mask grid differs from volume grid")
    for oar in oars:
        if not grids_aligned(oar, volume):
            raise DimMismatch("OAR grid differs from volume grid")

    fg = mask.voxels >= 0.5
    spacing = volume.spacing
    vox_mm3 = volume.voxel_volume_mm3
    count = int(fg.sum())
    if count == 0:
        return SegObservation(mask_ref, 0.0, (0.0, 0.0, 0.0), ((0, 0, 0), (0, 0, 0)),
                              tuple(math.inf for _ in oars), 0)

    coords = np.argwhere(fg)
    centroid = tuple(
        float(c) for c in (coords.mean(axis=0) + 0.5) * np.asarray(spacing)
    )
    lo = tuple(int(v) for v in coords.min(axis=0))
    hi = tuple(int(v) for v in coords.max(axis=0))

    oar_fgs = [o.voxels >= 0.5 for o in oars]
    oar_dists = tuple(_min_distance_mm(fg, ofg, spacing) for ofg in oar_fgs)

    labels, n = kernels.label_components(
        np.ones(mask.dims, dtype=np.int32), fg.astype(np.uint8), 6
    )
    comps = []
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    order = sorted(range(1, n + 1), key=lambda lab: (-int(sizes[lab]), lab))
    for rank, lab in enumerate(order, start=1):
        cfg = labels == lab
        ccoords = np.argwhere(cfg)
        ccentroid = tuple(
            float(c) for c in (ccoords.mean(axis=0) + 0.5) * np.asarray(spacing)
        )
        cdist = math.inf
        for ofg in oar_fgs:
            cdist = min(cdist, _min_distance_mm(cfg, ofg, spacing))
        comps.append(
            LesionComponent(
                lesion_id=f"L{rank}",
                volume_mm3=float(sizes[lab]) * vox_mm3,
                centroid_mm=ccentroid,
                oar_min_distance_mm=cdist,
            )
        )

    return SegObservation(
        mask_ref=mask_ref,
        lesion_volume_mm3=count * vox_mm3,
        centroid_mm=centroid,
        bbox=(lo, hi),
        oar_min_distance_mm=oar_dists,
        multiplicity=n,
        components=tuple(comps),
    )
