"""Per-label class balancing by seeded undersampling.

Binary annotation columns are balanced by keeping the minority class in
full and subsampling the majority class without replacement, so that
downstream fits see equal yes/no counts.  Responses are trimmed to the
same kept rows.  Continuous (feature-similarity) regressors skip this
stage entirely.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import rng


@dataclass(frozen=True)
class BalancedDesign:
    label: str
    seed: int
    kept_row_indices: np.ndarray
    n_yes: int
    n_no: int

    def __post_init__(self):
        kept = np.asarray(self.kept_row_indices, dtype=np.int64)
        if kept.size == 0:
            raise ValueError("balanced design keeps no rows")
        if (np.diff(kept) <= 0).any():
            raise ValueError("kept indices must be strictly increasing")
        if self.n_yes != self.n_no:
            raise ValueError(f"unbalanced design: {self.n_yes} yes vs {self.n_no} no")
        object.__setattr__(self, "kept_row_indices", kept)
        kept.setflags(write=False)

    @property
    def n_kept(self) -> int:
        return int(self.kept_row_indices.size)

    def to_json_dict(self) -> dict:
        return {
            "label": self.label,
            "seed": int(self.seed),
            "kept_row_indices": [int(i) for i in self.kept_row_indices],
            "n_yes": int(self.n_yes),
            "n_no": int(self.n_no),
        }

    def content_hash(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh, sort_keys=True, indent=1)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BalancedDesign":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(
            label=doc["label"],
            seed=int(doc["seed"]),
            kept_row_indices=np.asarray(doc["kept_row_indices"], dtype=np.int64),
            n_yes=int(doc["n_yes"]),
            n_no=int(doc["n_no"]),
        )


def balance_indices(annotation_column, seed: int, label: str) -> BalancedDesign:
    """Equalize class counts of a binary column by seeded undersampling.

    The minority class is kept in full; the majority class is subsampled
    uniformly without replacement on a counter-based stream keyed by
    (seed, label), so the kept set is reproducible for any scheduling.
    """
    col = np.asarray(annotation_column, dtype=np.float64).ravel()
    values = np.unique(col)
    if not np.isin(values, (0.0, 1.0)).all():
        raise ValueError(f"column for '{label}' is not binary (values {values[:5]}...)")
    yes_idx = np.flatnonzero(col == 1.0)
    no_idx = np.flatnonzero(col == 0.0)
    if yes_idx.size == 0 or no_idx.size == 0:
        raise ValueError(f"label '{label}' degenerate, cannot balance")

    n_keep = min(yes_idx.size, no_idx.size)
    if yes_idx.size == no_idx.size:
        kept = np.sort(np.concatenate([yes_idx, no_idx]))
    else:
        minority, majority = (yes_idx, no_idx) if yes_idx.size < no_idx.size else (no_idx, yes_idx)
        gen = rng.stream(seed, "balance", label)
        sampled = rng.subsample_without_replacement(gen, majority, n_keep)
        kept = np.sort(np.concatenate([minority, sampled]))
    return BalancedDesign(
        label=label,
        seed=seed,
        kept_row_indices=kept,
        n_yes=n_keep,
        n_no=n_keep,
    )


def align_rows(bold, design: BalancedDesign):
    """Select the design's kept rows of a response matrix, in kept order."""
    bold = np.asarray(bold)
    if bold.ndim != 2:
        raise ValueError("response matrix must be 2-D")
    kept = design.kept_row_indices
    if kept.min() < 0 or kept.max() >= bold.shape[0]:
        raise IndexError(
            f"kept index out of range for {bold.shape[0]}-row matrix "
            f"(max kept {int(kept.max())})"
        )
    return bold[kept]
