"""Shared data model and bit-exact container I/O.

Every matrix-shaped payload (annotations, per-subject responses, masks,
per-statistic arrays) travels in one binary container format so that
round-trips are byte-identical and portable.  Volumes use a fixed linear
ordering: flat index = x + nx*(y + ny*z), i.e. x varies fastest.  Grid
arrays are therefore shaped (nz, ny, nx) so that C-order raveling matches
the flat index.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"CORSEM01"

STAT_NAMES = ("beta", "se", "t", "r2", "p")
LEVELS = ("subject", "group", "corrected")


class CorsemError(Exception):
    """Base class for all package errors."""


class ContainerError(CorsemError):
    """Malformed or unreadable binary container."""


def write_matrix(path, values) -> None:
    """Write a 2-D float32 matrix to `path` in the binary container format.

    Layout: 8-byte magic ``CORSEM01``, n_rows and n_cols as unsigned 32-bit
    little-endian, then row-major float32 little-endian payload.
    """
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2:
        raise ContainerError(f"container payload must be 2-D, got shape {arr.shape}")
    n_rows, n_cols = arr.shape
    if n_rows < 1 or n_cols < 1:
        raise ContainerError("container dimensions must be >= 1")
    if np.isnan(arr).any():
        raise ContainerError("refusing to write NaN payload")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n_rows, n_cols))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))


def read_matrix(path, allow_inf: bool = False) -> np.ndarray:
    """Read a container written by :func:`write_matrix`.

    NaN payloads are always rejected; +/-Inf is rejected unless
    `allow_inf` is set (statistic maps may carry signed-infinity
    sentinels at zero-residual voxels).
    """
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r} in {path}")
        header = fh.read(8)
        if len(header) != 8:
            raise ContainerError(f"truncated header in {path}")
        n_rows, n_cols = struct.unpack("<II", header)
        if n_rows == 0 or n_cols == 0:
            raise ContainerError(f"zero dimension ({n_rows}x{n_cols}) in {path}")
        payload = fh.read()
    expected = n_rows * n_cols * 4
    if len(payload) < expected:
        raise ContainerError(f"truncated payload in {path}: {len(payload)} < {expected} bytes")
    if len(payload) > expected:
        raise ContainerError(f"trailing data in {path}: {len(payload)} > {expected} bytes")
    arr = np.frombuffer(payload, dtype="<f4").reshape(n_rows, n_cols).astype(np.float32)
    if np.isnan(arr).any():
        raise ContainerError(f"NaN values in payload of {path}")
    if not allow_inf and np.isinf(arr).any():
        raise ContainerError(f"non-finite values in payload of {path}")
    return arr


@dataclass(frozen=True)
class VolumeGeometry:
    """3-D grid dimensions, voxel size in mm, and inclusion mask.

    `dims` is (nx, ny, nz); `mask` is a flat boolean array of length
    nx*ny*nz in x-fastest order.
    """

    dims: tuple
    voxel_size_mm: tuple
    mask: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        vox = tuple(float(v) for v in self.voxel_size_mm)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValueError(f"dims must be three counts >= 1, got {dims}")
        if len(vox) != 3 or any(v <= 0 for v in vox):
            raise ValueError(f"voxel sizes must be positive, got {vox}")
        mask = np.asarray(self.mask, dtype=bool).ravel()
        n = dims[0] * dims[1] * dims[2]
        if mask.size != n:
            raise ValueError(f"mask has {mask.size} entries, expected {n}")
        if not mask.any():
            raise ValueError("mask selects no voxels")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "voxel_size_mm", vox)
        object.__setattr__(self, "mask", mask)
        mask.setflags(write=False)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def n_masked(self) -> int:
        return int(self.mask.sum())

    @property
    def voxel_volume_mm3(self) -> float:
        dx, dy, dz = self.voxel_size_mm
        return dx * dy * dz

    def grid_shape(self) -> tuple:
        """Shape of a grid array, (nz, ny, nx), so C-ravel is x-fastest."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    def embed(self, masked_values, fill=0.0) -> np.ndarray:
        """Scatter per-masked-voxel values into a full grid array."""
        masked_values = np.asarray(masked_values)
        if masked_values.shape != (self.n_masked,):
            raise ValueError("masked value vector has wrong length")
        out = np.full(self.n_voxels, fill, dtype=np.float64)
        out[self.mask] = masked_values
        return out.reshape(self.grid_shape())

    def extract(self, grid) -> np.ndarray:
        """Gather masked-voxel values from a full grid array."""
        grid = np.asarray(grid)
        if grid.shape != self.grid_shape():
            raise ValueError(f"grid shape {grid.shape} != {self.grid_shape()}")
        return grid.reshape(-1)[self.mask]

    def save(self, json_path, mask_path=None) -> None:
        json_path = os.fspath(json_path)
        if mask_path is None:
            mask_path = os.path.splitext(json_path)[0] + "_mask.bin"
        write_matrix(mask_path, self.mask.astype(np.float32)[None, :])
        doc = {
            "dims": list(self.dims),
            "voxel_size_mm": list(self.voxel_size_mm),
            "mask_file": os.path.relpath(mask_path, os.path.dirname(json_path) or "."),
        }
        with open(json_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, json_path) -> "VolumeGeometry":
        json_path = os.fspath(json_path)
        with open(json_path) as fh:
            doc = json.load(fh)
        mask_path = os.path.join(os.path.dirname(json_path) or ".", doc["mask_file"])
        raw = read_matrix(mask_path).ravel()
        bad = ~np.isin(raw, (0.0, 1.0))
        if bad.any():
            raise ValueError("mask container must contain only 0.0/1.0 values")
        return cls(tuple(doc["dims"]), tuple(doc["voxel_size_mm"]), raw == 1.0)


class MaskIndexMap:
    """Bijection between masked-voxel indices and (x, y, z) coordinates.

    Masked voxels are enumerated in ascending flat-index order
    (flat = x + nx*(y + ny*z), x fastest).
    """

    def __init__(self, geometry: VolumeGeometry):
        if not geometry.mask.any():
            raise ValueError("mask selects no voxels")
        self.geometry = geometry
        self.masked_to_flat = np.flatnonzero(geometry.mask).astype(np.int64)
        self.flat_to_masked = np.full(geometry.n_voxels, -1, dtype=np.int64)
        self.flat_to_masked[self.masked_to_flat] = np.arange(self.masked_to_flat.size)

    def __len__(self) -> int:
        return int(self.masked_to_flat.size)

    def coords_of(self, masked_index: int) -> tuple:
        flat = int(self.masked_to_flat[masked_index])
        nx, ny, _ = self.geometry.dims
        x = flat % nx
        y = (flat // nx) % ny
        z = flat // (nx * ny)
        return (x, y, z)

    def masked_of(self, x: int, y: int, z: int) -> int:
        nx, ny, nz = self.geometry.dims
        if not (0 <= x < nx and 0 <= y < ny and 0 <= z < nz):
            raise IndexError(f"coordinate ({x},{y},{z}) outside grid {self.geometry.dims}")
        idx = int(self.flat_to_masked[x + nx * (y + ny * z)])
        if idx < 0:
            raise KeyError(f"voxel ({x},{y},{z}) is outside the mask")
        return idx


class LabelSet:
    """Ordered set of unique semantic labels; the ordering is fixed for
    every matrix column layout downstream."""

    def __init__(self, labels):
        labels = [str(s) for s in labels]
        if not labels:
            raise ValueError("label set is empty")
        if len(set(labels)) != len(labels):
            dupes = sorted({s for s in labels if labels.count(s) > 1})
            raise ValueError(f"duplicate labels: {dupes}")
        self.labels = tuple(labels)

    def __len__(self):
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, i):
        return self.labels[i]

    def __eq__(self, other):
        return isinstance(other, LabelSet) and self.labels == other.labels

    def index(self, label: str) -> int:
        return self.labels.index(label)


@dataclass(frozen=True)
class AnnotationMatrix:
    """Stimuli-by-labels regressor matrix plus its row/column identities.

    `kind` is "vqa" for binary {0,1} encodings and "feature" for
    continuous [-1,1] similarity encodings; it decides whether the
    balancing stage applies downstream.
    """

    stimulus_ids: tuple
    labels: tuple
    values: np.ndarray
    kind: str = "vqa"

    def __post_init__(self):
        ids = tuple(str(s) for s in self.stimulus_ids)
        labels = tuple(LabelSet(self.labels).labels)
        values = np.asarray(self.values, dtype=np.float32)
        if len(set(ids)) != len(ids):
            raise ValueError("stimulus ids must be unique")
        if values.shape != (len(ids), len(labels)):
            raise ValueError(
                f"values shape {values.shape} != ({len(ids)}, {len(labels)})"
            )
        if self.kind not in ("vqa", "feature"):
            raise ValueError(f"kind must be 'vqa' or 'feature', got {self.kind!r}")
        if self.kind == "vqa":
            if not np.isin(values, (0.0, 1.0)).all():
                raise ValueError("vqa annotation values must be binary 0/1")
        else:
            if (values < -1.0).any() or (values > 1.0).any():
                raise ValueError("feature annotation values must lie in [-1, 1]")
        object.__setattr__(self, "stimulus_ids", ids)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "values", values)

    @property
    def n_stimuli(self) -> int:
        return len(self.stimulus_ids)

    def column(self, label: str) -> np.ndarray:
        return self.values[:, self.labels.index(label)]

    def save(self, manifest_path) -> None:
        manifest_path = os.fspath(manifest_path)
        values_path = os.path.splitext(manifest_path)[0] + ".bin"
        write_matrix(values_path, self.values)
        doc = {
            "kind": self.kind,
            "stimulus_ids": list(self.stimulus_ids),
            "labels": list(self.labels),
            "values_file": os.path.relpath(values_path,
                                           os.path.dirname(manifest_path) or "."),
        }
        with open(manifest_path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, manifest_path) -> "AnnotationMatrix":
        manifest_path = os.fspath(manifest_path)
        with open(manifest_path) as fh:
            doc = json.load(fh)
        values = read_matrix(os.path.join(os.path.dirname(manifest_path) or ".",
                                          doc["values_file"]))
        return cls(stimulus_ids=tuple(doc["stimulus_ids"]),
                   labels=tuple(doc["labels"]),
                   values=values, kind=doc.get("kind", "vqa"))


def _check_stat_array(name, arr, n):
    arr = np.asarray(arr, dtype=np.float32)
    if arr.shape != (n,):
        raise ValueError(f"statistic '{name}' has shape {arr.shape}, expected ({n},)")
    if np.isnan(arr).any():
        raise ValueError(f"statistic '{name}' contains NaN")
    return arr


@dataclass
class StatMap:
    """Per-masked-voxel regression statistics for one label at one level."""

    label: str
    level: str
    df: int
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    r2: np.ndarray
    p: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.level not in LEVELS:
            raise ValueError(f"level must be one of {LEVELS}, got {self.level!r}")
        n = np.asarray(self.t).size
        for name in STAT_NAMES:
            setattr(self, name, _check_stat_array(name, getattr(self, name), n))
        finite_r2 = self.r2
        if (finite_r2 < 0).any() or (finite_r2 > 1).any():
            raise ValueError("r2 outside [0, 1]")
        if (self.p < 0).any() or (self.p > 1).any():
            raise ValueError("p outside [0, 1]")
        self.df = int(self.df)

    @property
    def n_voxels(self) -> int:
        return int(self.t.size)

    def save(self, out_dir, stem=None) -> str:
        """Write one container per statistic plus a manifest JSON; returns
        the manifest path."""
        os.makedirs(out_dir, exist_ok=True)
        stem = stem or f"{self.label}_{self.level}"
        stats_entry = {}
        for name in STAT_NAMES:
            fname = f"{stem}_{name}.bin"
            write_matrix(os.path.join(out_dir, fname), getattr(self, name)[None, :])
            stats_entry[name] = fname
        manifest = {
            "label": self.label,
            "level": self.level,
            "df": self.df,
            "stats": stats_entry,
            "meta": self.meta,
        }
        path = os.path.join(out_dir, f"{stem}.statmap.json")
        with open(path, "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=1)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, manifest_path) -> "StatMap":
        manifest_path = os.fspath(manifest_path)
        with open(manifest_path) as fh:
            doc = json.load(fh)
        base = os.path.dirname(manifest_path) or "."
        arrays = {}
        for name in STAT_NAMES:
            arr = read_matrix(os.path.join(base, doc["stats"][name]), allow_inf=True)
            arrays[name] = arr.ravel()
        return cls(
            label=doc["label"],
            level=doc["level"],
            df=int(doc["df"]),
            meta=doc.get("meta", {}),
            **arrays,
        )
