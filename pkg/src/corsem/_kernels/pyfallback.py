"""Numpy implementations of the hot kernels.

These are the reference/fallback implementations selected when the
compiled extension is unavailable (or when CORSEM_FORCE_PYTHON is set).
They produce the same results as the extension to floating tolerance and
identical integer outputs.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def t_pvalues(t, df, ln_beta, out):
    """Two-tailed Student-t p-values (vectorized incomplete beta)."""
    from ..special import student_t_two_tailed_p

    out[:] = student_t_two_tailed_p(t, int(df))


def ols_columns(x, xbar, vx, y, beta0, beta1, se1, t, r2, flags):
    """Simple-OLS statistics for every column of `y` against regressor `x`.

    x : float64 (n,); xbar, vx : precomputed mean and centered sum of
    squares of x; y : float32 (n, m).  Outputs are written into the
    supplied float64 (m,) arrays; `flags` (uint8) records degeneracies:
    0 normal, 1 zero total sum of squares, 2 zero residual (perfect fit).
    """
    n = x.shape[0]
    ybar = np.einsum("ij->j", y, dtype=np.float64) / n
    yc = y.astype(np.float64) - ybar
    xc = x - xbar
    cxy = np.einsum("i,ij->j", xc, yc)
    vy = np.einsum("ij,ij->j", yc, yc)

    sstot_zero = vy <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        b1 = np.where(sstot_zero, 0.0, cxy / vx)
        # explicit residuals; the algebraic vy - b1*cxy form cancels badly
        # on near-perfect fits
        resid = yc - xc[:, None] * b1
        sse = np.einsum("ij,ij->j", resid, resid)
        perfect = ~sstot_zero & (sse == 0.0)
        sigma2 = sse / (n - 2)
        s1 = np.sqrt(sigma2 / vx)
        tv = np.where(s1 > 0.0, b1 / np.where(s1 > 0.0, s1, 1.0), 0.0)
        rsq = np.where(sstot_zero, 0.0, 1.0 - sse / np.where(sstot_zero, 1.0, vy))
    tv = np.where(perfect, np.where(b1 >= 0.0, np.inf, -np.inf), tv)
    rsq = np.clip(np.where(perfect, 1.0, rsq), 0.0, 1.0)
    s1 = np.where(sstot_zero | perfect, 0.0, s1)

    beta1[:] = b1
    beta0[:] = ybar - b1 * xbar
    se1[:] = s1
    t[:] = tv
    r2[:] = rsq
    flags[:] = np.where(sstot_zero, 1, np.where(perfect, 2, 0)).astype(np.uint8)


def convolve_axis(field, kernel, axis, out):
    """Zero-padded 1-D convolution of a 3-D field along one axis.

    `kernel` has odd length 2r+1 with the center at index r; `out` must be
    a distinct array of the same shape as `field`.
    """
    r = (kernel.shape[0] - 1) // 2
    n = field.shape[axis]
    out[...] = 0.0
    for off in range(-r, r + 1):
        w = kernel[off + r]
        if w == 0.0:
            continue
        lo = max(0, off)
        hi = min(n, n + off)
        if lo >= hi:
            continue
        dst = [slice(None)] * 3
        src = [slice(None)] * 3
        dst[axis] = slice(lo, hi)
        src[axis] = slice(lo - off, hi - off)
        out[tuple(dst)] += w * field[tuple(src)]


def half_neighbor_offsets(connectivity):
    """Neighbor offsets (dx, dy, dz) that precede a voxel in flat order."""
    if connectivity not in (6, 18, 26):
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    offsets = []
    for dz in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                manhattan = abs(dx) + abs(dy) + abs(dz)
                if connectivity == 6 and manhattan != 1:
                    continue
                if connectivity == 18 and manhattan > 2:
                    continue
                if (dz, dy, dx) < (0, 0, 0):
                    offsets.append((dx, dy, dz))
    return offsets


def label_components(supra, nx, ny, nz, connectivity, labels_out):
    """Union-find connected-component labeling on a flat binary field.

    `supra` is uint8 of length nx*ny*nz in x-fastest order.  Components
    are numbered 0..k-1 by order of first (lowest flat index) voxel;
    background voxels get -1.  Returns the component sizes as int64.
    """
    offsets = half_neighbor_offsets(connectivity)
    n = nx * ny * nz
    parent = np.arange(n, dtype=np.int64)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    idx = 0
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if supra[idx]:
                    for dx, dy, dz in offsets:
                        xx, yy, zz = x + dx, y + dy, z + dz
                        if 0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz:
                            j = xx + nx * (yy + ny * zz)
                            if supra[j]:
                                ri, rj = find(idx), find(j)
                                if ri != rj:
                                    if ri < rj:
                                        parent[rj] = ri
                                    else:
                                        parent[ri] = rj
                idx += 1

    labels_out[:] = -1
    next_label = 0
    root_label = {}
    sizes = []
    for i in range(n):
        if supra[i]:
            root = find(i)
            lab = root_label.get(root)
            if lab is None:
                lab = next_label
                root_label[root] = lab
                sizes.append(0)
                next_label += 1
            labels_out[i] = lab
            sizes[lab] += 1
    return np.asarray(sizes, dtype=np.int64)
