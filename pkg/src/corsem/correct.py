"""Multiple-comparison control by Monte Carlo cluster-extent thresholds.

The null distribution of the maximum supra-threshold cluster size is
simulated on the study geometry: iid standard-normal fields are smoothed
with a mask-renormalized separable Gaussian, standardized back to exact
unit marginal variance (via the analytic per-voxel kernel variance, so
marginals stay N(0,1) regardless of mask edges), thresholded two-tailed
at the normal critical value, and the largest connected excursion
cluster is recorded.  Real maps are then corrected by zeroing voxels
below the t critical value and removing per-sign clusters smaller than
the simulated extent threshold.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels, rng, special
from .core import StatMap, VolumeGeometry

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
KERNEL_TRUNCATE_SIGMAS = 4.0
CONNECTIVITIES = (6, 18, 26)


def fwhm_to_sigma(fwhm_mm: float, voxel_size_mm: float) -> float:
    """Gaussian sigma in voxel units for a kernel width given as FWHM mm."""
    if fwhm_mm < 0:
        raise ValueError(f"fwhm must be >= 0, got {fwhm_mm}")
    if voxel_size_mm <= 0:
        raise ValueError(f"voxel size must be > 0, got {voxel_size_mm}")
    return fwhm_mm / FWHM_PER_SIGMA / voxel_size_mm


def gaussian_kernel_1d(sigma: float) -> np.ndarray:
    """Discrete Gaussian taps truncated at +/-4 sigma, normalized to sum 1."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return np.array([1.0])
    radius = int(math.ceil(KERNEL_TRUNCATE_SIGMAS * sigma))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (offsets / sigma) ** 2)
    return k / k.sum()


def _axis_kernels(geometry: VolumeGeometry, fwhm_mm: float):
    """Per-grid-axis kernels; grid axes (0,1,2) are (z,y,x)."""
    dx, dy, dz = geometry.voxel_size_mm
    return [
        gaussian_kernel_1d(fwhm_to_sigma(fwhm_mm, dz)),
        gaussian_kernel_1d(fwhm_to_sigma(fwhm_mm, dy)),
        gaussian_kernel_1d(fwhm_to_sigma(fwhm_mm, dx)),
    ]


def _separable_convolve(grid: np.ndarray, kernels) -> np.ndarray:
    cur = np.ascontiguousarray(grid, dtype=np.float64)
    for axis, k in enumerate(kernels):
        if k.size == 1 and k[0] == 1.0:
            continue
        out = np.empty_like(cur)
        _kernels.convolve_axis(cur, np.ascontiguousarray(k), axis, out)
        cur = out
    return cur


def gaussian_smooth(values, geometry: VolumeGeometry, fwhm_mm: float) -> np.ndarray:
    """Mask-renormalized separable Gaussian smoothing of a masked field.

    `values` holds one value per masked voxel; voxels outside the mask
    are treated as absent, and the kernel is renormalized over in-mask
    support at each voxel, so constant fields are preserved.  fwhm 0 is
    the bitwise identity.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != geometry.n_masked:
        raise ValueError(f"field has {values.size} values, mask has {geometry.n_masked}")
    if fwhm_mm < 0:
        raise ValueError(f"fwhm must be >= 0, got {fwhm_mm}")
    if fwhm_mm == 0.0:
        return values.copy()
    kernels = _axis_kernels(geometry, fwhm_mm)
    mask_grid = geometry.mask.astype(np.float64).reshape(geometry.grid_shape())
    num = _separable_convolve(geometry.embed(values), kernels)
    den = _separable_convolve(mask_grid, kernels)
    flat_num = num.reshape(-1)[geometry.mask]
    flat_den = den.reshape(-1)[geometry.mask]
    return flat_num / flat_den


@dataclass(frozen=True)
class Cluster:
    indices: np.ndarray  # masked-voxel indices, ascending
    size: int
    sign: int  # +1, -1, or 0 when sign is not applicable


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple

    def sizes(self) -> np.ndarray:
        return np.array([c.size for c in self.clusters], dtype=np.int64)

    def max_size(self) -> int:
        return int(self.sizes().max()) if self.clusters else 0


def connected_components(binary_field, geometry: VolumeGeometry,
                         connectivity: int = 6, sign: int = 0) -> ClusterSet:
    """Maximal connected components of a masked binary field.

    Components are ordered by their first (lowest flat index) voxel, and
    each cluster's indices are masked-voxel indices in ascending order.
    """
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}")
    binary = np.asarray(binary_field, dtype=bool).ravel()
    if binary.size != geometry.n_masked:
        raise ValueError("binary field length does not match mask")
    supra = np.zeros(geometry.n_voxels, dtype=np.uint8)
    supra[np.flatnonzero(geometry.mask)[binary]] = 1
    labels = np.empty(geometry.n_voxels, dtype=np.int64)
    nx, ny, nz = geometry.dims
    sizes = _kernels.label_components(supra, nx, ny, nz, connectivity, labels)
    masked_labels = labels[geometry.mask]
    clusters = []
    for lab in range(sizes.size):
        idx = np.flatnonzero(masked_labels == lab).astype(np.int64)
        clusters.append(Cluster(indices=idx, size=int(sizes[lab]), sign=sign))
    return ClusterSet(clusters=tuple(clusters))


@dataclass(frozen=True)
class ClusterThreshold:
    voxel_p: float
    fwhm_mm: float
    connectivity: int
    n_iterations: int
    min_cluster_voxels: int
    min_cluster_mm3: float
    alpha: float
    seed: int
    z_critical: float
    max_cluster_histogram: dict = field(default_factory=dict)
    df: int | None = None

    def __post_init__(self):
        if not 0.0 < self.voxel_p < 1.0:
            raise ValueError("voxel_p must be in (0, 1)")
        if self.min_cluster_voxels < 1:
            raise ValueError("min_cluster_voxels must be >= 1")

    def to_json_dict(self) -> dict:
        doc = {
            "voxel_p": self.voxel_p,
            "fwhm_mm": self.fwhm_mm,
            "connectivity": self.connectivity,
            "n_iterations": self.n_iterations,
            "min_cluster_voxels": self.min_cluster_voxels,
            "min_cluster_mm3": self.min_cluster_mm3,
            "alpha": self.alpha,
            "seed": self.seed,
            "z_critical": self.z_critical,
            "max_cluster_histogram": {str(k): int(v)
                                      for k, v in sorted(self.max_cluster_histogram.items())},
        }
        if self.df is not None:
            doc["df"] = self.df
        return doc

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "ClusterThreshold":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            voxel_p=doc["voxel_p"], fwhm_mm=doc["fwhm_mm"],
            connectivity=int(doc["connectivity"]), n_iterations=int(doc["n_iterations"]),
            min_cluster_voxels=int(doc["min_cluster_voxels"]),
            min_cluster_mm3=doc["min_cluster_mm3"], alpha=doc["alpha"],
            seed=int(doc["seed"]), z_critical=doc["z_critical"],
            max_cluster_histogram={int(k): int(v)
                                   for k, v in doc["max_cluster_histogram"].items()},
            df=doc.get("df"),
        )

    def exceedance_probability(self, k: int) -> float:
        """Empirical P(max cluster >= k) from the simulation histogram."""
        total = sum(self.max_cluster_histogram.values())
        ge = sum(v for size, v in self.max_cluster_histogram.items() if size >= k)
        return ge / total


def _null_max_sizes(geometry, kernels, inv_std, z_crit, connectivity, seed,
                    iterations, out):
    nx, ny, nz = geometry.dims
    mask_flat_idx = np.flatnonzero(geometry.mask)
    labels_buf = np.empty(geometry.n_voxels, dtype=np.int64)
    for it in iterations:
        noise = rng.stream(seed, "mc", it).standard_normal(geometry.n_masked)
        smoothed = _separable_convolve(geometry.embed(noise), kernels)
        z = smoothed.reshape(-1)[mask_flat_idx] * inv_std
        supra_masked = np.abs(z) > z_crit
        if not supra_masked.any():
            out[it] = 0
            continue
        supra = np.zeros(geometry.n_voxels, dtype=np.uint8)
        supra[mask_flat_idx[supra_masked]] = 1
        sizes = _kernels.label_components(supra, nx, ny, nz, connectivity, labels_buf)
        out[it] = int(sizes.max())


def mc_cluster_threshold(geometry: VolumeGeometry, fwhm_mm: float, voxel_p: float,
                         df: int | None, connectivity: int, n_iterations: int,
                         alpha: float, seed: int, workers: int = 1) -> ClusterThreshold:
    """Simulate the null max-cluster-size distribution and pick the extent
    threshold: the smallest k with empirical P(max >= k) <= alpha (floor 1).

    Iterations draw from per-iteration counter-based streams, so the
    result is identical for any worker count.  `df` is recorded for
    bookkeeping only; the voxel threshold applied to a real map uses that
    map's own degrees of freedom.
    """
    if n_iterations < 100:
        raise ValueError(f"need at least 100 iterations, got {n_iterations}")
    if not 0.0 < voxel_p < 1.0:
        raise ValueError("voxel_p must be in (0, 1)")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if connectivity not in CONNECTIVITIES:
        raise ValueError(f"connectivity must be one of {CONNECTIVITIES}")

    z_crit = special.normal_two_tailed_critical(voxel_p)
    kernels = _axis_kernels(geometry, fwhm_mm)
    # analytic per-voxel variance of the smoothed unit-normal field within
    # the mask: conv(mask, k^2) for the separable product kernel
    mask_grid = geometry.mask.astype(np.float64).reshape(geometry.grid_shape())
    sq_kernels = [k * k for k in kernels]
    var_grid = _separable_convolve(mask_grid, sq_kernels)
    inv_std = 1.0 / np.sqrt(var_grid.reshape(-1)[geometry.mask])

    maxes = np.zeros(n_iterations, dtype=np.int64)
    if workers <= 1:
        _null_max_sizes(geometry, kernels, inv_std, z_crit, connectivity, seed,
                        range(n_iterations), maxes)
    else:
        chunks = [range(w, n_iterations, workers) for w in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(
                lambda ch: _null_max_sizes(geometry, kernels, inv_std, z_crit,
                                           connectivity, seed, ch, maxes),
                chunks))

    counts = np.bincount(maxes)
    histogram = {int(k): int(v) for k, v in enumerate(counts) if v > 0}
    # empirical exceedance: P(max >= k) = (# iterations with max >= k) / n
    tail_ge = n_iterations - np.cumsum(counts)  # tail_ge[k-1] = #{max >= k}
    k = 1
    while k <= maxes.max() and tail_ge[k - 1] / n_iterations > alpha:
        k += 1
    return ClusterThreshold(
        voxel_p=voxel_p, fwhm_mm=fwhm_mm, connectivity=connectivity,
        n_iterations=n_iterations, min_cluster_voxels=int(k),
        min_cluster_mm3=float(k) * geometry.voxel_volume_mm3,
        alpha=alpha, seed=seed, z_critical=z_crit,
        max_cluster_histogram=histogram, df=df,
    )


def apply_correction(stat_map: StatMap, threshold: ClusterThreshold,
                     geometry: VolumeGeometry) -> StatMap:
    """Cluster-extent correction of a subject- or group-level map.

    Voxels with |t| below the t critical value for the map's df are
    zeroed; the remaining positive and negative voxels are clustered
    separately and clusters smaller than the extent threshold are zeroed.
    Surviving voxels keep their original statistics; removed voxels get
    t = beta = se = r2 = 0 and p = 1.
    """
    if stat_map.n_voxels != geometry.n_masked:
        raise ValueError("stat map does not match geometry mask")
    if stat_map.level == "corrected":
        raise ValueError("map is already corrected")
    expected_mm3 = threshold.min_cluster_voxels * geometry.voxel_volume_mm3
    if not math.isclose(threshold.min_cluster_mm3, expected_mm3, rel_tol=1e-9):
        raise ValueError("threshold volume does not match geometry voxel size")
    t_crit = special.t_critical(threshold.voxel_p, stat_map.df)
    t = stat_map.t.astype(np.float64)
    survive = np.zeros(stat_map.n_voxels, dtype=bool)
    for sign in (1, -1):
        supra = (t >= t_crit) if sign > 0 else (t <= -t_crit)
        if not supra.any():
            continue
        clusters = connected_components(supra, geometry, threshold.connectivity, sign=sign)
        for cluster in clusters.clusters:
            if cluster.size >= threshold.min_cluster_voxels:
                survive[cluster.indices] = True

    def keep(arr, removed_value=0.0):
        out = arr.copy()
        out[~survive] = removed_value
        return out

    meta = dict(stat_map.meta)
    meta.update({
        "corrected_from": stat_map.level,
        "voxel_p": threshold.voxel_p,
        "t_critical": t_crit,
        "min_cluster_voxels": threshold.min_cluster_voxels,
        "n_surviving_voxels": int(survive.sum()),
    })
    return StatMap(
        label=stat_map.label, level="corrected", df=stat_map.df,
        beta=keep(stat_map.beta), se=keep(stat_map.se), t=keep(stat_map.t),
        r2=keep(stat_map.r2), p=keep(stat_map.p, removed_value=1.0),
        meta=meta,
    )
