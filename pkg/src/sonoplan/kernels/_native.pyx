# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled voxel kernels: component labeling, region growth, GLCM counting.

Mirrors ``_fallback`` exactly, including label numbering and scan order.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def _offset_table(int connectivity):
    if connectivity == 6:
        return np.array(
            [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
            dtype=np.int32,
        )
    if connectivity == 26:
        offs = [
            (dx, dy, dz)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)
        ]
        return np.array(offs, dtype=np.int32)
    raise ValueError(f"connectivity must be 6 or 26, got {connectivity}")


def label_components(levels, mask, int connectivity=6):
    levels_arr = np.ascontiguousarray(levels, dtype=np.int32)
    mask_arr = np.ascontiguousarray(np.asarray(mask).astype(bool), dtype=np.uint8)
    cdef const cnp.int32_t[:, :, ::1] lv = levels_arr
    cdef const cnp.uint8_t[:, :, ::1] mk = mask_arr
    cdef Py_ssize_t nx = mk.shape[0], ny = mk.shape[1], nz = mk.shape[2]

    labels_arr = np.zeros((nx, ny, nz), dtype=np.int32)
    cdef cnp.int32_t[:, :, ::1] lb = labels_arr
    stack_arr = np.empty(nx * ny * nz, dtype=np.int64)
    cdef cnp.int64_t[::1] stack = stack_arr
    cdef const cnp.int32_t[:, ::1] offs = _offset_table(connectivity)
    cdef Py_ssize_t n_off = offs.shape[0]

    cdef Py_ssize_t x, y, z, cx, cy, cz, px, py, pz, k, top
    cdef cnp.int64_t code
    cdef cnp.int32_t n = 0, lvl

    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not mk[x, y, z] or lb[x, y, z]:
                    continue
                n += 1
                lvl = lv[x, y, z]
                lb[x, y, z] = n
                stack[0] = (x * ny + y) * nz + z
                top = 1
                while top > 0:
                    top -= 1
                    code = stack[top]
                    cz = code % nz
                    cy = (code // nz) % ny
                    cx = code // (ny * nz)
                    for k in range(n_off):
                        px = cx + offs[k, 0]
                        py = cy + offs[k, 1]
                        pz = cz + offs[k, 2]
                        if px < 0 or px >= nx or py < 0 or py >= ny or pz < 0 or pz >= nz:
                            continue
                        if mk[px, py, pz] and lb[px, py, pz] == 0 and lv[px, py, pz] == lvl:
                            lb[px, py, pz] = n
                            stack[top] = (px * ny + py) * nz + pz
                            top += 1
    return labels_arr, int(n)


def region_grow(values, seeds, double reference, double tau, box):
    values_arr = np.ascontiguousarray(values, dtype=np.float32)
    seeds_arr = np.ascontiguousarray(np.asarray(seeds, dtype=np.int64).reshape(-1, 3))
    cdef const cnp.float32_t[:, :, ::1] vals = values_arr
    cdef const cnp.int64_t[:, ::1] sd = seeds_arr
    cdef Py_ssize_t nx = vals.shape[0], ny = vals.shape[1], nz = vals.shape[2]
    cdef Py_ssize_t x0 = box[0], y0 = box[1], z0 = box[2]
    cdef Py_ssize_t x1 = box[3], y1 = box[4], z1 = box[5]

    out_arr = np.zeros((nx, ny, nz), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    stack_arr = np.empty(nx * ny * nz, dtype=np.int64)
    cdef cnp.int64_t[::1] stack = stack_arr
    offs_arr = _offset_table(6)
    cdef const cnp.int32_t[:, ::1] offs = offs_arr

    cdef Py_ssize_t i, k, top = 0
    cdef Py_ssize_t sx, sy, sz, cx, cy, cz, px, py, pz
    cdef cnp.int64_t code

    for i in range(sd.shape[0]):
        sx = sd[i, 0]
        sy = sd[i, 1]
        sz = sd[i, 2]
        if sx < x0 or sx > x1 or sy < y0 or sy > y1 or sz < z0 or sz > z1:
            continue
        if abs(<double> vals[sx, sy, sz] - reference) <= tau and not out[sx, sy, sz]:
            out[sx, sy, sz] = 1
            stack[top] = (sx * ny + sy) * nz + sz
            top += 1
    while top > 0:
        top -= 1
        code = stack[top]
        cz = code % nz
        cy = (code // nz) % ny
        cx = code // (ny * nz)
        for k in range(6):
            px = cx + offs[k, 0]
            py = cy + offs[k, 1]
            pz = cz + offs[k, 2]
            if px < x0 or px > x1 or py < y0 or py > y1 or pz < z0 or pz > z1:
                continue
            if out[px, py, pz]:
                continue
            if abs(<double> vals[px, py, pz] - reference) <= tau:
                out[px, py, pz] = 1
                stack[top] = (px * ny + py) * nz + pz
                top += 1
    return out_arr


def glcm_counts(quant, int n_levels, offsets):
    quant_arr = np.ascontiguousarray(quant, dtype=np.int32)
    offs_arr = np.ascontiguousarray(np.asarray(offsets, dtype=np.int32).reshape(-1, 3))
    cdef const cnp.int32_t[:, :, ::1] q = quant_arr
    cdef const cnp.int32_t[:, ::1] offs = offs_arr
    cdef Py_ssize_t nx = q.shape[0], ny = q.shape[1], nz = q.shape[2]
    cdef Py_ssize_t n_off = offs.shape[0]

    counts_arr = np.zeros((n_off, n_levels, n_levels), dtype=np.float64)
    cdef cnp.float64_t[:, :, ::1] counts = counts_arr

    cdef Py_ssize_t k, x, y, z, px, py, pz
    cdef cnp.int32_t i, j, dx, dy, dz

    for k in range(n_off):
        dx = offs[k, 0]
        dy = offs[k, 1]
        dz = offs[k, 2]
        for x in range(nx):
            for y in range(ny):
                for z in range(nz):
                    i = q[x, y, z]
                    if i < 0:
                        continue
                    px = x + dx
                    py = y + dy
                    pz = z + dz
                    if px < 0 or px >= nx or py < 0 or py >= ny or pz < 0 or pz >= nz:
                        continue
                    j = q[px, py, pz]
                    if j < 0:
                        continue
                    counts[k, i, j] += 1.0
    return counts_arr
