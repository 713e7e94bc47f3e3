"""Voxelwise ordinary-least-squares fits and group-level aggregation.

One simple regression (response on a single semantic regressor, with
intercept) is fit independently per masked voxel; subject-level slope
maps are then combined across subjects with a one-sample t-test.  The
columnwise fit is the hottest loop in the package and runs on the kernel
backend over fixed-size voxel blocks, so results are bitwise identical
for any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels, special
from .core import StatMap
from .design import BalancedDesign

BLOCK_VOXELS = 2048


@dataclass(frozen=True)
class OlsResult:
    beta0: float
    beta1: float
    se1: float
    t: float
    r2: float
    p: float
    df: int


def simple_ols(x, y) -> OlsResult:
    """Closed-form OLS of y on x with intercept.

    Degenerate conventions: constant y (zero total sum of squares) gives
    beta1 = t = r2 = 0 and p = 1; a zero-residual fit gives r2 = 1,
    p = 0 and a signed-infinity t sentinel.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    n = x.size
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    xbar = x.mean()
    xc = x - xbar
    vx = float(xc @ xc)
    if vx == 0.0:
        raise ValueError("regressor is constant")

    ybar = y.mean()
    yc = y - ybar
    vy = float(yc @ yc)
    df = n - 2
    if vy <= 0.0:
        return OlsResult(beta0=ybar, beta1=0.0, se1=0.0, t=0.0, r2=0.0, p=1.0, df=df)
    cxy = float(xc @ yc)
    beta1 = cxy / vx
    beta0 = ybar - beta1 * xbar
    # explicit residuals rather than vy - beta1*cxy: the algebraic form
    # cancels catastrophically on near-perfect fits
    resid = yc - beta1 * xc
    sse = float(resid @ resid)
    if sse == 0.0:
        t = math.inf if beta1 >= 0.0 else -math.inf
        return OlsResult(beta0=beta0, beta1=beta1, se1=0.0, t=t, r2=1.0, p=0.0, df=df)
    se1 = math.sqrt(sse / df / vx)
    t = beta1 / se1
    r2 = min(max(1.0 - sse / vy, 0.0), 1.0)
    p = float(special.student_t_two_tailed_p(t, df))
    return OlsResult(beta0=beta0, beta1=beta1, se1=se1, t=t, r2=r2, p=p, df=df)


def _block_starts(n_voxels: int):
    return range(0, n_voxels, BLOCK_VOXELS)


def fit_label_map(bold, annotation_column, *, label: str,
                  design: BalancedDesign | None = None,
                  workers: int = 1, meta: dict | None = None) -> StatMap:
    """Fit every masked voxel's response against one regressor column.

    When a balanced design is supplied, `bold` and `annotation_column`
    must already be trimmed to its kept rows.  Voxels are partitioned
    into fixed blocks independent of `workers`, so the resulting map is
    identical for any degree of parallelism.
    """
    bold = np.ascontiguousarray(bold, dtype=np.float32)
    x = np.asarray(annotation_column, dtype=np.float64).ravel()
    if bold.ndim != 2:
        raise ValueError("response matrix must be 2-D (samples x voxels)")
    n, n_vox = bold.shape
    if x.size != n:
        raise ValueError(f"regressor has {x.size} rows, responses have {n}")
    if design is not None and design.n_kept != n:
        raise ValueError("design kept-row count does not match trimmed inputs")
    if n < 3:
        raise ValueError(f"need at least 3 samples, got {n}")
    xbar = x.mean()
    xc = x - xbar
    vx = float(xc @ xc)
    if vx == 0.0:
        raise ValueError("regressor is constant")

    beta0 = np.empty(n_vox, dtype=np.float64)
    beta1 = np.empty(n_vox, dtype=np.float64)
    se1 = np.empty(n_vox, dtype=np.float64)
    t = np.empty(n_vox, dtype=np.float64)
    r2 = np.empty(n_vox, dtype=np.float64)
    p = np.empty(n_vox, dtype=np.float64)
    flags = np.empty(n_vox, dtype=np.uint8)

    df = n - 2
    ln_beta = (math.lgamma(0.5 * df) + math.lgamma(0.5)
               - math.lgamma(0.5 * df + 0.5))

    def run_block(v0: int):
        v1 = min(v0 + BLOCK_VOXELS, n_vox)
        _kernels.ols_columns(x, xbar, vx, bold[:, v0:v1],
                             beta0[v0:v1], beta1[v0:v1], se1[v0:v1],
                             t[v0:v1], r2[v0:v1], flags[v0:v1])
        _kernels.t_pvalues(t[v0:v1], float(df), ln_beta, p[v0:v1])

    starts = list(_block_starts(n_vox))
    if workers <= 1 or len(starts) == 1:
        for v0 in starts:
            run_block(v0)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_block, starts))

    p[flags == 1] = 1.0

    full_meta = {"label": label, "n_samples": int(n),
                 "n_degenerate": int((flags != 0).sum())}
    if design is not None:
        full_meta["design_seed"] = int(design.seed)
        full_meta["design_hash"] = design.content_hash()
    if meta:
        full_meta.update(meta)
    return StatMap(
        label=label, level="subject", df=df,
        beta=beta1.astype(np.float32), se=se1.astype(np.float32),
        t=t.astype(np.float32), r2=r2.astype(np.float32),
        p=p.astype(np.float32), meta=full_meta,
    )


def group_ttest(subject_values, *, label: str, meta: dict | None = None) -> StatMap:
    """One-sample t-test of per-subject slope estimates against zero.

    `subject_values` is (subjects x voxels).  Values are sorted per voxel
    before reduction so every statistic is exactly invariant to subject
    order.  Zero across-subject variance yields t = 0 at zero mean and a
    signed-infinity sentinel otherwise.
    """
    values = np.asarray(subject_values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("subject values must be 2-D (subjects x voxels)")
    s, n_vox = values.shape
    if s < 2:
        raise ValueError(f"need at least 2 subjects, got {s}")
    values = np.sort(values, axis=0)
    df = s - 1
    mean = values.sum(axis=0) / s
    dev = values - mean
    ss = np.einsum("ij,ij->j", dev, dev)
    var = ss / df
    se = np.sqrt(var / s)

    zero_var = se == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(zero_var, 0.0, mean / np.where(zero_var, 1.0, se))
    sentinel = zero_var & (mean != 0.0)
    t[sentinel] = np.where(mean[sentinel] > 0.0, np.inf, -np.inf)

    p = special.student_t_two_tailed_p(t, df)
    p[zero_var & ~sentinel] = 1.0
    # variance-explained analogue of the one-sample t, kept in [0, 1]
    with np.errstate(invalid="ignore"):
        r2 = np.where(np.isinf(t), 1.0, t * t / (t * t + df))
    r2 = np.clip(np.nan_to_num(r2, nan=0.0), 0.0, 1.0)

    full_meta = {"label": label, "n_subjects": int(s),
                 "n_degenerate": int(zero_var.sum())}
    if meta:
        full_meta.update(meta)
    return StatMap(
        label=label, level="group", df=df,
        beta=mean.astype(np.float32), se=se.astype(np.float32),
        t=t.astype(np.float32), r2=r2.astype(np.float32),
        p=p.astype(np.float32), meta=full_meta,
    )


def fit_multivariate(bold, annotations, labels, *, meta: dict | None = None) -> list:
    """Joint fit of all label regressors at once (no balancing).

    Returns one StatMap per label with that coefficient's statistics; r2
    is the full-model coefficient of determination, shared across maps.
    """
    bold = np.asarray(bold, dtype=np.float64)
    a = np.asarray(annotations, dtype=np.float64)
    labels = list(labels)
    n, n_vox = bold.shape
    n_labels = len(labels)
    if a.shape != (n, n_labels):
        raise ValueError(f"annotation shape {a.shape} != ({n}, {n_labels})")
    df = n - n_labels - 1
    if df < 1:
        raise ValueError(f"not enough samples ({n}) for {n_labels} regressors")
    design = np.column_stack([np.ones(n), a])
    gram = design.T @ design
    try:
        gram_inv = np.linalg.inv(gram)
    except np.linalg.LinAlgError as exc:
        raise ValueError("collinear annotation columns") from exc
    coef = gram_inv @ (design.T @ bold)
    resid = bold - design @ coef
    sse = np.einsum("ij,ij->j", resid, resid)
    sse = np.maximum(sse, 0.0)
    ybar = bold.mean(axis=0)
    dev = bold - ybar
    sstot = np.einsum("ij,ij->j", dev, dev)

    sstot_zero = sstot <= 0.0
    perfect = ~sstot_zero & (sse == 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(sstot_zero, 0.0, 1.0 - sse / np.where(sstot_zero, 1.0, sstot))
    r2 = np.clip(np.where(perfect, 1.0, r2), 0.0, 1.0)
    sigma2 = sse / df

    maps = []
    for j, label in enumerate(labels):
        bj = coef[j + 1]
        sej = np.sqrt(sigma2 * gram_inv[j + 1, j + 1])
        zero_se = sej == 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            tj = np.where(zero_se, 0.0, bj / np.where(zero_se, 1.0, sej))
        sentinel = zero_se & (bj != 0.0)
        tj[sentinel] = np.where(bj[sentinel] > 0.0, np.inf, -np.inf)
        bj = np.where(sstot_zero, 0.0, bj)
        tj = np.where(sstot_zero, 0.0, tj)
        pj = special.student_t_two_tailed_p(tj, df)
        pj[sstot_zero] = 1.0
        full_meta = {"label": label, "mode": "multivariate", "n_samples": int(n)}
        if meta:
            full_meta.update(meta)
        maps.append(StatMap(
            label=label, level="subject", df=df,
            beta=bj.astype(np.float32), se=sej.astype(np.float32),
            t=tj.astype(np.float32), r2=r2.astype(np.float32),
            p=pj.astype(np.float32), meta=full_meta,
        ))
    return maps
