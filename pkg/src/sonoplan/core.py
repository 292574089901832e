"""Core domain types and bit-exact file I/O.

A patient case bundles a volumetric scan, the clinical record text, the
clinician's query and a small vector of clinical variables.  Volumes and
masks live in a little-endian binary container ("RVOL" for float32
intensities, "RMSK" for uint8 labels) with an x-fastest voxel layout so
that texture offsets downstream are unambiguous.  Round-tripping any valid
volume or mask through save/load is byte-identical.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    MalformedDocument,
    MissingField,
    NonPositiveDim,
    TruncatedPayload,
)

VOLUME_MAGIC = b"RVOL"
MASK_MAGIC = b"RMSK"
FORMAT_VERSION = 1

_HEADER = struct.Struct("<4sIIIIfff")  # magic, version, nx, ny, nz, sx, sy, sz


def _check_grid(dims, spacing, voxels):
    if len(dims) != 3 or any(int(d) <= 0 for d in dims):
        raise NonPositiveDim(f"dims must be three positive counts, got {dims!r}")
    if len(spacing) != 3 or any(not (s > 0) for s in spacing):
        raise ValueError(f"spacing must be positive, got {spacing!r}")
    if voxels.shape != tuple(dims):
        raise ValueError(f"voxel grid shape {voxels.shape} != dims {tuple(dims)}")
    if not np.all(np.isfinite(voxels)):
        raise ValueError("voxel grid contains NaN/Inf")


@dataclass(frozen=True)
class Volume:
    """A scalar voxel grid with physical spacing in mm/voxel.

    ``voxels[x, y, z]`` indexes the grid; axis order matches ``dims`` and
    ``spacing``.  Instances are immutable and safe to share across threads.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    voxels: np.ndarray  # float32, shape == dims

    def __post_init__(self):
        vox = np.ascontiguousarray(self.voxels, dtype=np.float32)
        _check_grid(self.dims, self.spacing, vox)
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz


@dataclass(frozen=True)
class Mask:
    """A label grid aligned to a volume: binary {0,1} or probabilities [0,1]."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    voxels: np.ndarray  # float32 in [0,1], shape == dims

    def __post_init__(self):
        vox = np.ascontiguousarray(self.voxels, dtype=np.float32)
        _check_grid(self.dims, self.spacing, vox)
        vox = np.clip(vox, 0.0, 1.0)
        vox.flags.writeable = False
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.voxels == 0.0) | (self.voxels == 1.0)))

    def binarize(self, threshold: float = 0.5) -> "Mask":
        return Mask(self.dims, self.spacing, (self.voxels >= threshold).astype(np.float32))

    def foreground_count(self) -> int:
        return int(np.count_nonzero(self.voxels >= 0.5))

    @staticmethod
    def for_volume(volume: Volume, voxels: np.ndarray) -> "Mask":
        """Build a mask on a volume's grid; shape mismatch fails at construction."""
        return Mask(volume.dims, volume.spacing, voxels)


def grids_aligned(a, b) -> bool:
    return a.dims == b.dims and a.spacing == b.spacing


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def _encode(magic: bytes, dims, spacing, payload: bytes) -> bytes:
    nx, ny, nz = dims
    sx, sy, sz = spacing
    return _HEADER.pack(magic, FORMAT_VERSION, nx, ny, nz, sx, sy, sz) + payload


def _decode(data: bytes, magic: bytes, dtype, item_size: int):
    if len(data) < _HEADER.size:
        raise TruncatedPayload(f"header needs {_HEADER.size} bytes, got {len(data)}")
    got_magic, version, nx, ny, nz, sx, sy, sz = _HEADER.unpack_from(data)
    if got_magic != magic:
        raise BadMagic(f"expected {magic!r}, got {got_magic!r}")
    if version != FORMAT_VERSION:
        raise MalformedDocument(f"unsupported container version {version}")
    if nx <= 0 or ny <= 0 or nz <= 0:
        raise NonPositiveDim(f"dims ({nx}, {ny}, {nz})")
    count = nx * ny * nz
    expected = _HEADER.size + count * item_size
    if len(data) != expected:
        raise TruncatedPayload(f"declared {count} voxels need {expected} bytes, got {len(data)}")
    flat = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    # x-fastest on disk == Fortran order for an [x, y, z]-indexed array
    voxels = flat.reshape((nx, ny, nz), order="F")
    return (nx, ny, nz), (sx, sy, sz), voxels


def save_volume(v: Volume) -> bytes:
    payload = np.asfortranarray(v.voxels, dtype="<f4").tobytes(order="F")
    return _encode(VOLUME_MAGIC, v.dims, v.spacing, payload)


def load_volume(data: bytes) -> Volume:
    dims, spacing, voxels = _decode(data, VOLUME_MAGIC, np.dtype("<f4"), 4)
    return Volume(dims, spacing, voxels.astype(np.float32))


def save_mask(m: Mask) -> bytes:
    if not m.is_binary:
        raise ValueError("only binary masks are persisted; binarize() first")
    payload = np.asfortranarray(m.voxels, dtype=np.uint8).tobytes(order="F")
    return _encode(MASK_MAGIC, m.dims, m.spacing, payload)


def load_mask(data: bytes) -> Mask:
    dims, spacing, voxels = _decode(data, MASK_MAGIC, np.uint8, 1)
    return Mask(dims, spacing, voxels.astype(np.float32))


def read_volume(path: str | Path) -> Volume:
    return load_volume(Path(path).read_bytes())


def write_volume(path: str | Path, v: Volume) -> None:
    Path(path).write_bytes(save_volume(v))


def read_mask(path: str | Path) -> Mask:
    return load_mask(Path(path).read_bytes())


def write_mask(path: str | Path, m: Mask) -> None:
    Path(path).write_bytes(save_mask(m))


# ---------------------------------------------------------------------------
# case documents
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClinicalVariables:
    """Per-patient scalar covariates fed to the dose model."""

    bmi: float
    abdominal_wall_thickness_mm: float
    preop_score: float
    age: float

    def __post_init__(self):
        vals = (self.bmi, self.abdominal_wall_thickness_mm, self.preop_score, self.age)
        if any(not math.isfinite(x) for x in vals):
            raise ValueError("clinical variables must be finite")
        if not (10.0 < self.bmi < 80.0):
            raise ValueError(f"bmi {self.bmi} outside (10, 80)")
        if self.abdominal_wall_thickness_mm < 0:
            raise ValueError("abdominal wall thickness must be >= 0")
        if self.preop_score < 0:
            raise ValueError("preop score must be >= 0")

    def as_dict(self) -> dict:
        return {
            "bmi": self.bmi,
            "abdominal_wall_thickness_mm": self.abdominal_wall_thickness_mm,
            "preop_score": self.preop_score,
            "age": self.age,
        }

# Fields a guideline applicability predicate may reference.
CASE_FACT_FIELDS = ("bmi", "abdominal_wall_thickness_mm", "preop_score", "age")


@dataclass(frozen=True)
class CaseInput:
    """One patient case: scan reference, record text, query and covariates."""

    case_id: str
    volume_ref: str
    ehr_text: str
    clinician_query: str
    clinical_vars: ClinicalVariables
    oar_refs: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not self.case_id:
            raise ValueError("case_id must be non-empty")
        object.__setattr__(self, "oar_refs", tuple(self.oar_refs))

    def facts(self) -> dict:
        return self.clinical_vars.as_dict()


_CASE_FIELDS = ("case_id", "volume_ref", "ehr_text", "clinician_query", "clinical_vars")
_CLINICAL_FIELDS = ("bmi", "abdominal_wall_thickness_mm", "preop_score", "age")


def parse_case(text: str) -> CaseInput:
    """Parse a UTF-8 case document (JSON) into a CaseInput.

    ``oar_refs`` is optional and defaults to an empty list; everything else
    is mandatory.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(str(exc)) from exc
    if not isinstance(doc, dict):
        raise MalformedDocument("case document must be an object")
    for name in _CASE_FIELDS:
        if name not in doc:
            raise MissingField(name)
    cv = doc["clinical_vars"]
    if not isinstance(cv, dict):
        raise MalformedDocument("clinical_vars must be an object")
    for name in _CLINICAL_FIELDS:
        if name not in cv:
            raise MissingField(f"clinical_vars.{name}")
    try:
        clinical = ClinicalVariables(
            bmi=float(cv["bmi"]),
            abdominal_wall_thickness_mm=float(cv["abdominal_wall_thickness_mm"]),
            preop_score=float(cv["preop_score"]),
            age=float(cv["age"]),
        )
        return CaseInput(
            case_id=str(doc["case_id"]),
            volume_ref=str(doc["volume_ref"]),
            ehr_text=str(doc["ehr_text"]),
            clinician_query=str(doc["clinician_query"]),
            clinical_vars=clinical,
            oar_refs=tuple(str(p) for p in doc.get("oar_refs", [])),
        )
    except (TypeError, ValueError) as exc:
        raise MalformedDocument(str(exc)) from exc


def serialize_case(case: CaseInput) -> str:
    doc = {
        "case_id": case.case_id,
        "volume_ref": case.volume_ref,
        "ehr_text": case.ehr_text,
        "clinician_query": case.clinician_query,
        "clinical_vars": case.clinical_vars.as_dict(),
        "oar_refs": list(case.oar_refs),
    }
    return json.dumps(doc, indent=2, sort_keys=True)
