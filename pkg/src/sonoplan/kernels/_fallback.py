"""Pure-Python voxel kernels, used when the compiled extension is absent.

Semantics are identical to the compiled versions in ``_native.pyx``; the
parity test suite asserts exact agreement, including label numbering.
"""

import numpy as np

_OFFSETS6 = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))
_OFFSETS26 = tuple(
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
)


def _offsets(connectivity):
    if connectivity == 6:
        return _OFFSETS6
    if connectivity == 26:
        return _OFFSETS26
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def label_components(levels, mask, connectivity=6):
    """Label maximal connected runs of equal ``levels`` value inside ``mask``.

    Returns ``(labels, n)`` where labels are 1..n in scan order of the first
    voxel of each component and 0 marks background.
    """
    levels = np.asarray(levels)
    mask = np.asarray(mask).astype(bool)
    nx, ny, nz = mask.shape
    labels = np.zeros(mask.shape, dtype=np.int32)
    offs = _offsets(connectivity)
    n = 0
    for x, y, z in zip(*np.nonzero(mask)):
        if labels[x, y, z]:
            continue
        n += 1
        lvl = levels[x, y, z]
        labels[x, y, z] = n
        stack = [(x, y, z)]
        while stack:
            cx, cy, cz = stack.pop()
            for dx, dy, dz in offs:
                px, py, pz = cx + dx, cy + dy, cz + dz
                if (
                    0 <= px < nx
                    and 0 <= py < ny
                    and 0 <= pz < nz
                    and mask[px, py, pz]
                    and not labels[px, py, pz]
                    and levels[px, py, pz] == lvl
                ):
                    labels[px, py, pz] = n
                    stack.append((px, py, pz))
    return labels, n


def region_grow(values, seeds, reference, tau, box):
    """6-connected growth from ``seeds`` over {|v - reference| <= tau} within ``box``.

    ``box`` is inclusive voxel corners (x0, y0, z0, x1, y1, z1).  Seeds whose
    intensity falls outside the tolerance do not grow.
    """
    values = np.asarray(values, dtype=np.float32)
    x0, y0, z0, x1, y1, z1 = (int(b) for b in box)
    out = np.zeros(values.shape, dtype=np.uint8)
    candidate = np.abs(values.astype(np.float64) - float(reference)) <= float(tau)
    stack = []
    for sx, sy, sz in np.asarray(seeds, dtype=np.int64).reshape(-1, 3):
        if x0 <= sx <= x1 and y0 <= sy <= y1 and z0 <= sz <= z1:
            if candidate[sx, sy, sz] and not out[sx, sy, sz]:
                out[sx, sy, sz] = 1
                stack.append((sx, sy, sz))
    while stack:
        cx, cy, cz = stack.pop()
        for dx, dy, dz in _OFFSETS6:
            px, py, pz = cx + dx, cy + dy, cz + dz
            if (
                x0 <= px <= x1
                and y0 <= py <= y1
                and z0 <= pz <= z1
                and candidate[px, py, pz]
                and not out[px, py, pz]
            ):
                out[px, py, pz] = 1
                stack.append((px, py, pz))
    return out


def glcm_counts(quant, n_levels, offsets):
    """Count ordered co-occurring level pairs per offset.

    ``quant`` holds the quantized level per voxel with -1 outside the region.
    Returns float64 counts of shape (n_offsets, n_levels, n_levels).
    """
    quant = np.asarray(quant, dtype=np.int32)
    offsets = np.asarray(offsets, dtype=np.int32).reshape(-1, 3)
    nx, ny, nz = quant.shape
    counts = np.zeros((len(offsets), n_levels, n_levels), dtype=np.float64)
    for k, (dx, dy, dz) in enumerate(offsets):
        sx = slice(max(0, -dx), min(nx, nx - dx))
        sy = slice(max(0, -dy), min(ny, ny - dy))
        sz = slice(max(0, -dz), min(nz, nz - dz))
        src = quant[sx, sy, sz]
        dst = quant[
            slice(sx.start + dx, sx.stop + dx),
            slice(sy.start + dy, sy.stop + dy),
            slice(sz.start + dz, sz.stop + dz),
        ]
        ok = (src >= 0) & (dst >= 0)
        if not ok.any():
            continue
        pair = src[ok].astype(np.int64) * n_levels + dst[ok]
        counts[k] += np.bincount(pair, minlength=n_levels * n_levels).reshape(
            n_levels, n_levels
        )
    return counts
