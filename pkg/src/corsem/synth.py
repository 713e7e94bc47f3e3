"""Ground-truth phantom generation for end-to-end verification.

Phantoms plant known response slopes at known voxel sets: annotation
columns are seeded Bernoulli draws, and each response value is the sum of
the planted effects plus iid Gaussian noise.  Hierarchy phantoms build
implication-consistent annotation columns with exact nested yes-counts
and drive each level's own region with the component of that level's
indicator that is orthogonal (sample-exactly, and surviving the balanced
subsample) to its parent, so an upper label's fit is null on regions
added by more specific labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .core import VolumeGeometry


@dataclass(frozen=True)
class PhantomLabel:
    name: str
    roi: np.ndarray  # masked-voxel indices, ascending
    effect: float
    base_rate: float = 0.5

    def __post_init__(self):
        roi = np.unique(np.asarray(self.roi, dtype=np.int64))
        if not 0.0 < self.base_rate < 1.0:
            raise ValueError(f"base rate must be in (0, 1), got {self.base_rate}")
        object.__setattr__(self, "roi", roi)
        roi.setflags(write=False)


@dataclass(frozen=True)
class PhantomSpec:
    geometry: VolumeGeometry
    labels: tuple
    n_samples: int
    noise_sigma: float
    seed: int
    n_subjects: int = 1

    def __post_init__(self):
        if self.n_samples < 10:
            raise ValueError(f"need at least 10 samples, got {self.n_samples}")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        labels = tuple(self.labels)
        names = [lab.name for lab in labels]
        if len(set(names)) != len(names):
            raise ValueError("duplicate phantom label names")
        n_masked = self.geometry.n_masked
        for lab in labels:
            if lab.roi.size and (lab.roi.min() < 0 or lab.roi.max() >= n_masked):
                raise ValueError(f"ROI of '{lab.name}' outside the mask "
                                 f"(indices must be < {n_masked})")
        object.__setattr__(self, "labels", labels)


@dataclass(frozen=True)
class PhantomTruth:
    label_rois: dict  # name -> masked-index array
    label_slopes: dict  # name -> float
    voxel_labels: dict = field(default_factory=dict)  # masked idx -> [names]

    def to_json_dict(self) -> dict:
        return {
            "label_rois": {k: [int(i) for i in v] for k, v in self.label_rois.items()},
            "label_slopes": {k: float(v) for k, v in self.label_slopes.items()},
            "voxel_labels": {str(k): list(v) for k, v in sorted(self.voxel_labels.items())},
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True)
            fh.write("\n")


def _truth_from_rois(names, rois, slopes) -> PhantomTruth:
    voxel_labels = {}
    for name, roi in zip(names, rois):
        for v in roi:
            voxel_labels.setdefault(int(v), []).append(name)
    return PhantomTruth(
        label_rois={n: np.asarray(r, dtype=np.int64) for n, r in zip(names, rois)},
        label_slopes=dict(zip(names, slopes)),
        voxel_labels=voxel_labels,
    )


def generate_phantom(spec: PhantomSpec):
    """Draw (annotations, per-subject responses, truth) for a spec.

    annotation(i, l) ~ Bernoulli(base_rate_l) on the stream keyed by
    (seed, "annot", l); response(i, v) = sum over labels of
    effect_l * annotation(i, l) * [v in ROI_l] plus N(0, sigma^2) noise
    on per-subject streams.  Fully deterministic given the seed.
    """
    n = spec.n_samples
    n_vox = spec.geometry.n_masked
    n_labels = len(spec.labels)
    annotations = np.zeros((n, n_labels), dtype=np.float32)
    for j, lab in enumerate(spec.labels):
        draws = rng.stream(spec.seed, "annot", j).random(n)
        annotations[:, j] = (draws < lab.base_rate).astype(np.float32)

    signal = np.zeros((n, n_vox), dtype=np.float64)
    for j, lab in enumerate(spec.labels):
        if lab.roi.size and lab.effect != 0.0:
            signal[:, lab.roi] += lab.effect * annotations[:, j:j + 1].astype(np.float64)

    bolds = []
    for s in range(spec.n_subjects):
        if spec.noise_sigma == 0.0:
            bold = signal.copy()
        else:
            noise = rng.stream(spec.seed, "noise", s).normal(0.0, spec.noise_sigma, (n, n_vox))
            bold = signal + noise
        bolds.append(bold.astype(np.float32))

    truth = _truth_from_rois(
        [lab.name for lab in spec.labels],
        [lab.roi for lab in spec.labels],
        [lab.effect for lab in spec.labels],
    )
    return annotations, bolds, truth


def nested_yes_counts(n_samples: int, depth: int) -> list:
    """Default yes-counts for a hierarchy: halved at each level, >= 2."""
    counts = []
    c = n_samples // 2
    for _ in range(depth):
        if c < 2:
            raise ValueError("not enough samples for the hierarchy depth")
        counts.append(c)
        c //= 2
    return counts


def generate_hierarchy_phantom(chain, geometry: VolumeGeometry, own_rois,
                               n_samples: int, effect: float, seed: int,
                               noise_sigma: float = 0.0, yes_counts=None,
                               n_subjects: int = 1):
    """Phantom for a general-to-specific label chain.

    Annotations have exact nested yes-counts (every yes-row of a label is
    a yes-row of all its ancestors), so the implication constraint holds
    for every sample.  Level l's own region responds to the residual of
    that level's indicator after removing the parent-proportional part;
    the planted ROI of a label is the union of its own region and all
    ancestor regions.
    """
    chain = list(chain)
    if len(chain) < 2:
        raise ValueError("hierarchy chain must have at least 2 labels")
    if len(set(chain)) != len(chain):
        raise ValueError("hierarchy chain labels must be unique")
    own_rois = [np.unique(np.asarray(r, dtype=np.int64)) for r in own_rois]
    if len(own_rois) != len(chain):
        raise ValueError("need one own-region per chain level")
    n_masked = geometry.n_masked
    seen = set()
    for name, roi in zip(chain, own_rois):
        if roi.size and (roi.min() < 0 or roi.max() >= n_masked):
            raise ValueError(f"own region of '{name}' outside the mask")
        overlap = seen.intersection(roi.tolist())
        if overlap:
            raise ValueError(f"own regions overlap at voxels {sorted(overlap)[:5]}")
        seen.update(roi.tolist())

    depth = len(chain)
    if yes_counts is None:
        yes_counts = nested_yes_counts(n_samples, depth)
    yes_counts = [int(c) for c in yes_counts]
    if len(yes_counts) != depth:
        raise ValueError("need one yes-count per chain level")
    if any(c < 1 for c in yes_counts) or yes_counts[0] >= n_samples:
        raise ValueError("yes counts must satisfy 1 <= c < n_samples")
    if any(b > a for a, b in zip(yes_counts, yes_counts[1:])):
        raise ValueError("yes counts must be non-increasing down the chain")

    order = rng.stream(seed, "hierarchy").permutation(n_samples)
    annotations = np.zeros((n_samples, depth), dtype=np.float32)
    for lev, c in enumerate(yes_counts):
        annotations[order[:c], lev] = 1.0

    # per-level regressor: the level indicator minus the parent-fraction of
    # the parent indicator; zero-mean and exactly uncorrelated with every
    # ancestor (the residual is supported on parent-yes rows and sums to 0)
    signals = np.zeros((n_samples, depth), dtype=np.float64)
    signals[:, 0] = annotations[:, 0]
    for lev in range(1, depth):
        ratio = yes_counts[lev] / yes_counts[lev - 1]
        signals[:, lev] = annotations[:, lev] - ratio * annotations[:, lev - 1]

    signal_field = np.zeros((n_samples, n_masked), dtype=np.float64)
    for lev, roi in enumerate(own_rois):
        if roi.size:
            signal_field[:, roi] += effect * signals[:, lev:lev + 1]

    bolds = []
    for s in range(n_subjects):
        if noise_sigma == 0.0:
            bold = signal_field.copy()
        else:
            noise = rng.stream(seed, "noise", s).normal(0.0, noise_sigma,
                                                        (n_samples, n_masked))
            bold = signal_field + noise
        bolds.append(bold.astype(np.float32))

    nested = []
    acc = np.array([], dtype=np.int64)
    for roi in own_rois:
        acc = np.union1d(acc, roi)
        nested.append(acc.copy())
    truth = _truth_from_rois(chain, nested, [effect] * depth)
    return annotations, bolds, truth
