"""Independent brute-force oracles.

Everything here is a deliberately naive restatement of the quantity under
test (plain loops, no shared code with the package) so the main
implementations can be checked against it.
"""

import math
from collections import Counter


def first_order_stats(values, n_bins):
    """Plain-loop first-order statistics over a list of floats."""
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    if var == 0:
        skew = 0.0
    else:
        m3 = sum((v - mean) ** 3 for v in values) / n
        skew = m3 / var ** 1.5
    energy = sum(v * v for v in values)

    lo, hi = min(values), max(values)
    counts = [0] * n_bins
    if hi == lo:
        counts[0] = n
    else:
        width = (hi - lo) / n_bins
        for v in values:
            b = int((v - lo) / width)
            counts[min(b, n_bins - 1)] += 1
    entropy = 0.0
    for c in counts:
        if c:
            p = c / n
            entropy -= p * math.log2(p)

    return {
        "mean": mean,
        "variance": var,
        "skewness": skew,
        "energy": energy,
        "entropy": entropy,
        "p10": percentile(values, 10),
        "p90": percentile(values, 90),
    }


def percentile(values, q):
    """Linear-interpolation percentile on the sorted sample."""
    xs = sorted(values)
    if len(xs) == 1:
        return xs[0]
    h = (len(xs) - 1) * q / 100.0
    lo = int(math.floor(h))
    frac = h - lo
    if lo + 1 >= len(xs):
        return xs[-1]
    return xs[lo] + frac * (xs[lo + 1] - xs[lo])


def surface_area(fg, spacing):
    """Count exposed voxel faces one neighbor at a time."""
    nx, ny, nz = fg.shape
    sx, sy, sz = spacing
    areas = {0: sy * sz, 1: sx * sz, 2: sx * sy}
    total = 0.0
    for x in range(nx):
        for y in range(ny):
            for z in range(nz):
                if not fg[x, y, z]:
                    continue
                for axis, (dx, dy, dz) in enumerate(
                    [(1, 0, 0), (0, 1, 0), (0, 0, 1)]
                ):
                    for sgn in (1, -1):
                        px, py, pz = x + sgn * dx, y + sgn * dy, z + sgn * dz
                        outside = not (0 <= px < nx and 0 <= py < ny and 0 <= pz < nz)
                        if outside or not fg[px, py, pz]:
                            total += areas[axis]
    return total


def quantize(values, n_bins):
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0] * len(values)
    width = (hi - lo) / n_bins
    return [min(int((v - lo) / width), n_bins - 1) for v in values]


def quantized_grid(vol, fg, n_bins):
    """dict (x,y,z) -> level for masked voxels."""
    coords = [
        (x, y, z)
        for x in range(fg.shape[0])
        for y in range(fg.shape[1])
        for z in range(fg.shape[2])
        if fg[x, y, z]
    ]
    levels = quantize([float(vol[c]) for c in coords], n_bins)
    return dict(zip(coords, levels))


def glcm_features(grid, n_bins, offsets, symmetric):
    """Pair enumeration over a {coord: level} dict, features per offset,
    averaged across offsets that produced pairs."""
    per_offset = []
    for dx, dy, dz in offsets:
        pairs = Counter()
        for (x, y, z), i in grid.items():
            j = grid.get((x + dx, y + dy, z + dz))
            if j is not None:
                pairs[(i, j)] += 1
        if symmetric:
            sym = Counter()
            for (i, j), c in pairs.items():
                sym[(i, j)] += c
                sym[(j, i)] += c
            pairs = sym
        total = sum(pairs.values())
        if total == 0:
            continue
        p = {ij: c / total for ij, c in pairs.items()}
        pi = [0.0] * n_bins
        pj = [0.0] * n_bins
        for (i, j), v in p.items():
            pi[i] += v
            pj[j] += v
        mu_i = sum(i * v for i, v in enumerate(pi))
        mu_j = sum(j * v for j, v in enumerate(pj))
        var_i = sum((i - mu_i) ** 2 * v for i, v in enumerate(pi))
        var_j = sum((j - mu_j) ** 2 * v for j, v in enumerate(pj))
        contrast = sum(v * (i - j) ** 2 for (i, j), v in p.items())
        if var_i <= 0 or var_j <= 0:
            correlation = 0.0
        else:
            correlation = sum(
                v * (i - mu_i) * (j - mu_j) for (i, j), v in p.items()
            ) / math.sqrt(var_i * var_j)
        energy = sum(v * v for v in p.values())
        homogeneity = sum(v / (1 + (i - j) ** 2) for (i, j), v in p.items())
        per_offset.append((contrast, correlation, energy, homogeneity))
    assert per_offset, "oracle found no pairs"
    k = len(per_offset)
    return {
        "contrast": sum(t[0] for t in per_offset) / k,
        "correlation": sum(t[1] for t in per_offset) / k,
        "energy": sum(t[2] for t in per_offset) / k,
        "homogeneity": sum(t[3] for t in per_offset) / k,
    }


_NEIGHBORS26 = [
    (dx, dy, dz)
    for dx in (-1, 0, 1)
    for dy in (-1, 0, 1)
    for dz in (-1, 0, 1)
    if (dx, dy, dz) != (0, 0, 0)
]


def glszm_zones(grid):
    """Zones as 26-connected equal-level sets, by set-based flood fill."""
    remaining = set(grid)
    zones = []
    while remaining:
        start = min(remaining)  # deterministic order
        level = grid[start]
        zone = {start}
        frontier = [start]
        remaining.discard(start)
        while frontier:
            x, y, z = frontier.pop()
            for dx, dy, dz in _NEIGHBORS26:
                nb = (x + dx, y + dy, z + dz)
                if nb in remaining and grid[nb] == level:
                    remaining.discard(nb)
                    zone.add(nb)
                    frontier.append(nb)
        zones.append((level, len(zone)))
    return zones


def glszm_features(grid):
    zones = glszm_zones(grid)
    nz = len(zones)
    small = sum(1.0 / s ** 2 for _, s in zones) / nz
    large = sum(float(s) ** 2 for _, s in zones) / nz
    by_level = Counter(level for level, _ in zones)
    gln = sum(c * c for c in by_level.values()) / nz
    cells = Counter(zones)
    entropy = -sum((c / nz) * math.log2(c / nz) for c in cells.values())
    return {
        "small_area_emphasis": small,
        "large_area_emphasis": large,
        "gray_level_nonuniformity": gln,
        "zone_entropy": entropy,
    }


def connected_components(fg, connectivity=6):
    """Number of connected foreground components by flood fill."""
    if connectivity == 6:
        neighbors = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    else:
        neighbors = _NEIGHBORS26
    coords = {
        (x, y, z)
        for x in range(fg.shape[0])
        for y in range(fg.shape[1])
        for z in range(fg.shape[2])
        if fg[x, y, z]
    }
    n = 0
    while coords:
        n += 1
        frontier = [coords.pop()]
        while frontier:
            x, y, z = frontier.pop()
            for dx, dy, dz in neighbors:
                nb = (x + dx, y + dy, z + dz)
                if nb in coords:
                    coords.discard(nb)
                    frontier.append(nb)
    return n


def pairwise_auc(scores, labels):
    """O(n^2) concordance probability with half credit for ties."""
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def icc_anova(matrix):
    """ICC(1,1) from the one-way ANOVA table, written out longhand."""
    n = len(matrix)
    k = len(matrix[0])
    grand = sum(sum(row) for row in matrix) / (n * k)
    row_means = [sum(row) / k for row in matrix]
    ss_between = k * sum((m - grand) ** 2 for m in row_means)
    ss_within = sum(
        (matrix[i][j] - row_means[i]) ** 2 for i in range(n) for j in range(k)
    )
    msb = ss_between / (n - 1)
    msw = ss_within / (n * (k - 1))
    denom = msb + (k - 1) * msw
    return 0.0 if denom == 0 else (msb - msw) / denom


def least_squares_with_intercept(F, y):
    """Weights and intercept from the normal equations on [1 | F]."""
    import numpy as np

    A = np.hstack([np.ones((F.shape[0], 1)), F])
    coef = np.linalg.solve(A.T @ A, A.T @ y)
    return coef[1:], float(coef[0])


def lcs_length(a, b):
    """Textbook quadratic LCS table."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            if a[i - 1] == b[j - 1]:
                table[i][j] = table[i - 1][j - 1] + 1
            else:
                table[i][j] = max(table[i - 1][j], table[i][j - 1])
    return table[len(a)][len(b)]
