"""Higher-level organization of per-label maps.

Covers overlay counting across corrected maps, sign-pattern overlays of
hierarchically related label pairs, the label-by-label activation
similarity matrix and its distance transform, agglomerative (Ward)
clustering with a deterministic tie-break, per-cluster mean maps, and the
thresholded semantic network with JSON/GraphML export.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .core import StatMap

OVERLAY_CATEGORIES = (
    "none",
    "both_pos",
    "both_neg",
    "upper_only_pos",
    "lower_only_pos",
    "upper_only_neg",
    "lower_only_neg",
    "conflict_pos_neg",  # upper positive, lower negative
    "conflict_neg_pos",  # upper negative, lower positive
)
_CATEGORY_CODE = {name: i for i, name in enumerate(OVERLAY_CATEGORIES)}


@dataclass(frozen=True)
class OverlayCounts:
    total: np.ndarray
    positive: np.ndarray
    negative: np.ndarray

    def __post_init__(self):
        if not (self.total == self.positive + self.negative).all():
            raise ValueError("total counts must equal positive + negative")


def _check_shared_geometry(maps):
    sizes = {m.n_voxels for m in maps}
    if len(sizes) != 1:
        raise ValueError(f"maps disagree on voxel count: {sorted(sizes)}")


def overlay_counts(corrected_maps) -> OverlayCounts:
    """Count, per voxel, how many corrected maps activate it (by sign)."""
    maps = list(corrected_maps)
    if not maps:
        raise ValueError("no maps given")
    for m in maps:
        if m.level != "corrected":
            raise ValueError(f"map '{m.label}' is {m.level}-level, expected corrected")
    _check_shared_geometry(maps)
    n = maps[0].n_voxels
    pos = np.zeros(n, dtype=np.int32)
    neg = np.zeros(n, dtype=np.int32)
    for m in maps:
        pos += (m.t > 0).astype(np.int32)
        neg += (m.t < 0).astype(np.int32)
    return OverlayCounts(total=pos + neg, positive=pos, negative=neg)


@dataclass(frozen=True)
class OverlayCategoryMap:
    upper_label: str
    lower_label: str
    codes: np.ndarray  # int8 category code per masked voxel

    def category_names(self):
        return OVERLAY_CATEGORIES

    def counts(self) -> dict:
        out = {}
        for name, code in _CATEGORY_CODE.items():
            out[name] = int((self.codes == code).sum())
        return out


def hierarchy_overlay(upper: StatMap, lower: StatMap) -> OverlayCategoryMap:
    """Classify each voxel by the sign pattern of an (upper, lower) pair
    of corrected maps; the nine categories partition the mask."""
    for m, role in ((upper, "upper"), (lower, "lower")):
        if m.level != "corrected":
            raise ValueError(f"{role} map '{m.label}' is {m.level}-level, expected corrected")
    _check_shared_geometry([upper, lower])
    su = np.sign(upper.t).astype(np.int8)
    sl = np.sign(lower.t).astype(np.int8)
    codes = np.full(upper.n_voxels, _CATEGORY_CODE["none"], dtype=np.int8)
    codes[(su > 0) & (sl > 0)] = _CATEGORY_CODE["both_pos"]
    codes[(su < 0) & (sl < 0)] = _CATEGORY_CODE["both_neg"]
    codes[(su > 0) & (sl == 0)] = _CATEGORY_CODE["upper_only_pos"]
    codes[(su == 0) & (sl > 0)] = _CATEGORY_CODE["lower_only_pos"]
    codes[(su < 0) & (sl == 0)] = _CATEGORY_CODE["upper_only_neg"]
    codes[(su == 0) & (sl < 0)] = _CATEGORY_CODE["lower_only_neg"]
    codes[(su > 0) & (sl < 0)] = _CATEGORY_CODE["conflict_pos_neg"]
    codes[(su < 0) & (sl > 0)] = _CATEGORY_CODE["conflict_neg_pos"]
    return OverlayCategoryMap(upper_label=upper.label, lower_label=lower.label, codes=codes)


def similarity_matrix(maps, statistic: str = "t") -> np.ndarray:
    """Pearson correlation of per-label statistic vectors over the mask."""
    maps = list(maps)
    if len(maps) < 2:
        raise ValueError("need at least 2 maps")
    if statistic != "t":
        raise ValueError(f"unsupported statistic {statistic!r}")
    _check_shared_geometry(maps)
    data = np.stack([m.t.astype(np.float64) for m in maps])
    bad = [m.label for m, row in zip(maps, data) if not np.isfinite(row).all()]
    if bad:
        raise ValueError(
            f"maps with non-finite statistics cannot be correlated: {bad} "
            "(zero-residual sentinel voxels; only noisy fits correlate)"
        )
    centered = data - data.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    for m, nrm in zip(maps, norms):
        if nrm == 0.0:
            raise ValueError(f"map '{m.label}' is constant (zero variance)")
    n = len(maps)
    sim = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            r = float(centered[i] @ centered[j] / (norms[i] * norms[j]))
            r = min(max(r, -1.0), 1.0)
            sim[i, j] = sim[j, i] = r
    return sim


def to_distance(similarity) -> np.ndarray:
    """Elementwise 1 - similarity; maps correlations in [-1,1] to [0,2]."""
    s = np.asarray(similarity, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"similarity must be square, got {s.shape}")
    if (np.abs(s) > 1.0 + 1e-9).any():
        raise ValueError("similarity entries outside [-1, 1]")
    if not np.allclose(s, s.T, atol=1e-12):
        raise ValueError("similarity matrix is not symmetric")
    if not np.allclose(np.diag(s), 1.0, atol=1e-12):
        raise ValueError("similarity diagonal is not 1")
    d = 1.0 - np.clip(s, -1.0, 1.0)
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def ward_merge_sequence(distance) -> list:
    """Agglomerative merge sequence under the Ward recurrence on squared
    distances.

    Clusters are identified by their smallest original member index; at
    each step the pair with minimal squared linkage distance merges, ties
    broken by the lexicographically smallest (i, j) id pair.  Returns
    [(step, left_id, right_id, height)] with height = sqrt of the merge
    distance.
    """
    d = np.asarray(distance, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n < 1:
        raise ValueError("empty distance matrix")
    d2 = d * d
    active = list(range(n))
    size = {i: 1 for i in range(n)}
    dist2 = {}
    for i in range(n):
        for j in range(i + 1, n):
            dist2[(i, j)] = d2[i, j]

    merges = []
    for step in range(n - 1):
        best = None
        for a_idx in range(len(active)):
            for b_idx in range(a_idx + 1, len(active)):
                a, b = active[a_idx], active[b_idx]
                key = (dist2[(a, b)], a, b)
                if best is None or key < best:
                    best = key
        d2_ab, a, b = best
        merges.append((step, a, b, math.sqrt(max(d2_ab, 0.0))))
        # Lance-Williams update for Ward: D2(a+b, c)
        na, nb = size[a], size[b]
        for c in active:
            if c in (a, b):
                continue
            nc = size[c]
            d2_ac = dist2[(min(a, c), max(a, c))]
            d2_bc = dist2[(min(b, c), max(b, c))]
            new = ((na + nc) * d2_ac + (nb + nc) * d2_bc - nc * d2_ab) / (na + nb + nc)
            dist2[(min(a, c), max(a, c))] = new
        size[a] = na + nb
        active.remove(b)
    return merges


def ward_cluster(distance, k: int):
    """Cut the Ward dendrogram at k clusters.

    Returns an int array assigning each label index to a cluster id;
    cluster ids are numbered by order of first member.
    """
    d = np.asarray(distance, dtype=np.float64)
    n = d.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    merges = ward_merge_sequence(d)
    parent = np.arange(n)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for step, a, b, _height in merges[: n - k]:
        ra, rb = find(a), find(b)
        parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    # ids by order of first member == ascending root index
    unique_roots = sorted(set(roots.tolist()))
    remap = {r: i for i, r in enumerate(unique_roots)}
    return np.array([remap[r] for r in roots], dtype=np.int64)


def cluster_mean_maps(maps, assignment, n_clusters: int | None = None) -> dict:
    """Voxelwise mean t-map of the member maps of each cluster."""
    maps = list(maps)
    assignment = np.asarray(assignment, dtype=np.int64)
    if assignment.size != len(maps):
        raise ValueError("assignment length does not match number of maps")
    _check_shared_geometry(maps)
    ids = sorted(set(assignment.tolist()))
    if n_clusters is not None:
        missing = sorted(set(range(n_clusters)) - set(ids))
        if missing:
            raise ValueError(f"empty cluster(s): {missing}")
    out = {}
    for cid in ids:
        members = [maps[i] for i in np.flatnonzero(assignment == cid)]
        stacked = np.stack([m.t.astype(np.float64) for m in members])
        out[int(cid)] = (stacked.sum(axis=0) / len(members)).astype(np.float32)
    return out


@dataclass(frozen=True)
class SemanticNetwork:
    nodes: tuple  # (label, cluster_id)
    edges: tuple  # (label_a, label_b, weight) with label_a before label_b

    def to_json_dict(self) -> dict:
        return {
            "nodes": [{"label": lab, "cluster": int(cid)} for lab, cid in self.nodes],
            "edges": [{"a": a, "b": b, "weight": float(w)} for a, b, w in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=1) + "\n"

    def to_graphml(self) -> str:
        lines = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
            ' <key id="d_cluster" for="node" attr.name="cluster" attr.type="int"/>',
            ' <key id="d_weight" for="edge" attr.name="weight" attr.type="double"/>',
            ' <graph id="semantic" edgedefault="undirected">',
        ]
        for lab, cid in self.nodes:
            lines.append(f'  <node id="{escape(lab, {chr(34): "&quot;"})}">')
            lines.append(f'   <data key="d_cluster">{int(cid)}</data>')
            lines.append("  </node>")
        for a, b, w in self.edges:
            ea = escape(a, {chr(34): "&quot;"})
            eb = escape(b, {chr(34): "&quot;"})
            lines.append(f'  <edge source="{ea}" target="{eb}">')
            lines.append(f'   <data key="d_weight">{float(w)!r}</data>')
            lines.append("  </edge>")
        lines.append(" </graph>")
        lines.append("</graphml>")
        return "\n".join(lines) + "\n"


def build_network(similarity, labels, assignment, edge_threshold: float = 0.55) -> SemanticNetwork:
    """Nodes carry cluster membership; an undirected edge joins every
    label pair whose similarity strictly exceeds the threshold."""
    s = np.asarray(similarity, dtype=np.float64)
    labels = list(labels)
    assignment = np.asarray(assignment, dtype=np.int64)
    n = len(labels)
    if s.shape != (n, n):
        raise ValueError(f"similarity shape {s.shape} != ({n}, {n})")
    if assignment.size != n:
        raise ValueError("assignment length does not match labels")
    if not -1.0 < edge_threshold < 1.0:
        raise ValueError(f"edge threshold must be in (-1, 1), got {edge_threshold}")
    nodes = tuple((labels[i], int(assignment[i])) for i in range(n))
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if s[i, j] > edge_threshold:
                edges.append((labels[i], labels[j], float(s[i, j])))
    return SemanticNetwork(nodes=nodes, edges=tuple(edges))


def save_dendrogram(merges, path) -> None:
    doc = {"merges": [
        {"step": int(s), "left": int(a), "right": int(b), "height": float(h)}
        for s, a, b, h in merges
    ]}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")
