# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled hot kernels: columnwise OLS, separable convolution, and
union-find component labeling.  Mirrors pyfallback.py; all loops release
the GIL so voxel blocks and simulation iterations parallelize across
threads."""

import numpy as np

cimport cython
from libc.math cimport INFINITY, exp, fabs, log, log1p, sqrt
from libc.stdlib cimport free, malloc

BACKEND = "compiled"

DEF FPMIN = 1e-300
DEF CF_EPS = 1e-15
DEF CF_MAX_ITER = 600


cdef double _betacf(double a, double b, double x) nogil:
    cdef double qab = a + b
    cdef double qap = a + 1.0
    cdef double qam = a - 1.0
    cdef double c = 1.0
    cdef double d = 1.0 - qab * x / qap
    cdef double h, aa, delta
    cdef int m, m2
    if fabs(d) < FPMIN:
        d = FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if fabs(d) < FPMIN:
            d = FPMIN
        c = 1.0 + aa / c
        if fabs(c) < FPMIN:
            c = FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if fabs(delta - 1.0) < CF_EPS:
            break
    return h


cdef double _incbeta(double a, double b, double x, double ln_beta) nogil:
    cdef double front
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = exp(a * log(x) + b * log1p(-x) - ln_beta)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_pvalues(const double[::1] t, double df, double ln_beta, double[::1] out):
    """Two-tailed Student-t p-values via the regularized incomplete beta;
    `ln_beta` is lgamma(df/2)+lgamma(1/2)-lgamma(df/2+1/2)."""
    cdef Py_ssize_t n = t.shape[0]
    cdef Py_ssize_t i
    cdef double a = 0.5 * df
    cdef double tv, x, p
    with nogil:
        for i in range(n):
            tv = t[i]
            if tv != tv or tv == INFINITY or tv == -INFINITY:
                out[i] = 0.0
                continue
            x = df / (df + tv * tv)
            p = _incbeta(a, 0.5, x, ln_beta)
            if p < 0.0:
                p = 0.0
            elif p > 1.0:
                p = 1.0
            out[i] = p


def ols_columns(const double[::1] x, double xbar, double vx,
                const float[:, :] y,
                double[::1] beta0, double[::1] beta1, double[::1] se1,
                double[::1] t, double[::1] r2,
                unsigned char[::1] flags):
    cdef Py_ssize_t n = y.shape[0]
    cdef Py_ssize_t m = y.shape[1]
    cdef Py_ssize_t i, v
    cdef double *sy
    cdef double *cxy
    cdef double *vy
    cdef double *sse
    cdef double xc, d, r, b1, sigma2, s1, tv, rsq, ybar_v
    cdef double dfn = <double> (n - 2)

    sy = <double *> malloc(4 * m * sizeof(double))
    if sy == NULL:
        raise MemoryError()
    cxy = sy + m
    vy = sy + 2 * m
    sse = sy + 3 * m
    with nogil:
        for v in range(m):
            sy[v] = 0.0
            cxy[v] = 0.0
            vy[v] = 0.0
            sse[v] = 0.0
        for i in range(n):
            for v in range(m):
                sy[v] += <double> y[i, v]
        for v in range(m):
            sy[v] /= <double> n
        for i in range(n):
            xc = x[i] - xbar
            for v in range(m):
                d = (<double> y[i, v]) - sy[v]
                cxy[v] += xc * d
                vy[v] += d * d
        for v in range(m):
            beta1[v] = 0.0 if vy[v] <= 0.0 else cxy[v] / vx
        # explicit residual pass: the algebraic vy - b1*cxy form cancels
        # catastrophically on near-perfect fits
        for i in range(n):
            xc = x[i] - xbar
            for v in range(m):
                r = ((<double> y[i, v]) - sy[v]) - beta1[v] * xc
                sse[v] += r * r
        for v in range(m):
            ybar_v = sy[v]
            if vy[v] <= 0.0:
                beta1[v] = 0.0
                beta0[v] = ybar_v
                se1[v] = 0.0
                t[v] = 0.0
                r2[v] = 0.0
                flags[v] = 1
                continue
            b1 = beta1[v]
            beta0[v] = ybar_v - b1 * xbar
            if sse[v] == 0.0:
                se1[v] = 0.0
                t[v] = INFINITY if b1 >= 0.0 else -INFINITY
                r2[v] = 1.0
                flags[v] = 2
                continue
            sigma2 = sse[v] / dfn
            s1 = sqrt(sigma2 / vx)
            tv = b1 / s1
            rsq = 1.0 - sse[v] / vy[v]
            if rsq < 0.0:
                rsq = 0.0
            elif rsq > 1.0:
                rsq = 1.0
            se1[v] = s1
            t[v] = tv
            r2[v] = rsq
            flags[v] = 0
    free(sy)


def convolve_axis(const double[:, :, ::1] field, const double[::1] kernel,
                  int axis, double[:, :, ::1] out):
    cdef Py_ssize_t r = (kernel.shape[0] - 1) // 2
    cdef Py_ssize_t n0 = field.shape[0]
    cdef Py_ssize_t n1 = field.shape[1]
    cdef Py_ssize_t n2 = field.shape[2]
    cdef Py_ssize_t i0, i1, i2, k, src
    cdef Py_ssize_t nax
    cdef double acc

    if axis == 0:
        nax = n0
    elif axis == 1:
        nax = n1
    else:
        nax = n2

    with nogil:
        if axis == 2:
            for i0 in range(n0):
                for i1 in range(n1):
                    for i2 in range(n2):
                        acc = 0.0
                        for k in range(-r, r + 1):
                            src = i2 - k
                            if 0 <= src < n2:
                                acc += kernel[k + r] * field[i0, i1, src]
                        out[i0, i1, i2] = acc
        elif axis == 1:
            for i0 in range(n0):
                for i1 in range(n1):
                    for i2 in range(n2):
                        acc = 0.0
                        for k in range(-r, r + 1):
                            src = i1 - k
                            if 0 <= src < n1:
                                acc += kernel[k + r] * field[i0, src, i2]
                        out[i0, i1, i2] = acc
        else:
            for i0 in range(n0):
                for i1 in range(n1):
                    for i2 in range(n2):
                        acc = 0.0
                        for k in range(-r, r + 1):
                            src = i0 - k
                            if 0 <= src < n0:
                                acc += kernel[k + r] * field[src, i1, i2]
                        out[i0, i1, i2] = acc


cdef inline long long _find(long long *parent, long long i) nogil:
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def label_components(const unsigned char[::1] supra, int nx, int ny, int nz,
                     int connectivity, long long[::1] labels_out):
    if connectivity not in (6, 18, 26):
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")

    cdef long long n = <long long> nx * ny * nz
    cdef long long *parent = <long long *> malloc(n * sizeof(long long))
    if parent == NULL:
        raise MemoryError()

    cdef int odx[13]
    cdef int ody[13]
    cdef int odz[13]
    cdef int n_off = 0
    cdef int dx, dy, dz, man
    for dz in range(-1, 2):
        for dy in range(-1, 2):
            for dx in range(-1, 2):
                if dx == 0 and dy == 0 and dz == 0:
                    continue
                man = abs(dx) + abs(dy) + abs(dz)
                if connectivity == 6 and man != 1:
                    continue
                if connectivity == 18 and man > 2:
                    continue
                if dz < 0 or (dz == 0 and dy < 0) or (dz == 0 and dy == 0 and dx < 0):
                    odx[n_off] = dx
                    ody[n_off] = dy
                    odz[n_off] = dz
                    n_off += 1

    cdef long long *root_label = <long long *> malloc(n * sizeof(long long))
    if root_label == NULL:
        free(parent)
        raise MemoryError()

    cdef long long idx, j, ri, rj, root
    cdef int x, y, z, xx, yy, zz, o
    cdef long long next_label = 0
    with nogil:
        for idx in range(n):
            parent[idx] = idx
            root_label[idx] = -1
        idx = 0
        for z in range(nz):
            for y in range(ny):
                for x in range(nx):
                    if supra[idx]:
                        for o in range(n_off):
                            xx = x + odx[o]
                            yy = y + ody[o]
                            zz = z + odz[o]
                            if 0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz:
                                j = xx + nx * (yy + <long long> ny * zz)
                                if supra[j]:
                                    ri = _find(parent, idx)
                                    rj = _find(parent, j)
                                    if ri != rj:
                                        if ri < rj:
                                            parent[rj] = ri
                                        else:
                                            parent[ri] = rj
                    idx += 1
        # renumber components by order of first (lowest flat index) voxel
        for idx in range(n):
            if supra[idx]:
                root = _find(parent, idx)
                if root_label[root] < 0:
                    root_label[root] = next_label
                    next_label += 1
                labels_out[idx] = root_label[root]
            else:
                labels_out[idx] = -1

    sizes = np.zeros(int(next_label), dtype=np.int64)
    cdef long long[::1] sizes_view = sizes
    if next_label > 0:
        with nogil:
            for idx in range(n):
                if labels_out[idx] >= 0:
                    sizes_view[labels_out[idx]] += 1
    free(root_label)
    free(parent)
    return sizes
