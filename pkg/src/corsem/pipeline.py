"""Pipeline orchestration: configuration, staged execution, manifest.

A single JSON config names the inputs (geometry, per-subject responses,
annotations or a VQA backend) and the analysis parameters.  Stages write
their artifacts into one output directory and can be run independently;
``run`` chains them all and records a manifest with a content hash per
artifact, so identical config + seed runs are byte-verifiable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import correct as correct_mod
from . import design as design_mod
from . import encode, glm, semantics
from .core import (AnnotationMatrix, StatMap, VolumeGeometry, read_matrix,
                   write_matrix)

DEFAULT_CORRECTION = {
    "voxel_p": 0.05,
    "fwhm_mm": 3.0,
    "connectivity": 6,
    "n_iterations": 1000,
    "alpha": 0.05,
}


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    geometry_path: str
    bold_paths: dict
    annotations_path: str | None = None
    backend: dict | None = None
    template: str = encode.DEFAULT_TEMPLATE
    labels: tuple | None = None
    mode: str = "per-label"
    correction: dict = field(default_factory=lambda: dict(DEFAULT_CORRECTION))
    hierarchy_chains: tuple = ()
    k: int = 5
    edge_threshold: float = 0.55
    similarity_source: str = "uncorrected"
    workers: int = 1
    method: str = "vqa"
    model: str = "fixture"

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is required")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.mode not in ("per-label", "multivariate"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.similarity_source not in ("uncorrected", "corrected"):
            raise ConfigError(f"unknown similarity source {self.similarity_source!r}")
        if not self.bold_paths:
            raise ConfigError("at least one subject response file is required")
        if self.annotations_path is None and self.backend is None:
            raise ConfigError("either 'annotations' or 'backend' must be configured")
        corr = dict(DEFAULT_CORRECTION)
        corr.update(self.correction or {})
        object.__setattr__(self, "correction", corr)
        object.__setattr__(self, "bold_paths",
                           dict(sorted(self.bold_paths.items())))
        object.__setattr__(self, "hierarchy_chains",
                           tuple(tuple(c) for c in self.hierarchy_chains))
        if self.labels is not None:
            object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def subjects(self):
        return list(self.bold_paths)

    def validate_paths(self) -> None:
        missing = []
        for path in [self.geometry_path, *self.bold_paths.values()]:
            if not os.path.exists(path):
                missing.append(path)
        if self.annotations_path and not os.path.exists(self.annotations_path):
            missing.append(self.annotations_path)
        if self.backend and self.backend.get("kind") == "fixture":
            if not os.path.exists(self.backend["path"]):
                missing.append(self.backend["path"])
        if self.backend and self.backend.get("kind") == "feature":
            for key in ("image_embeddings", "text_embeddings"):
                if not os.path.exists(self.backend.get(key, "")):
                    missing.append(self.backend.get(key, f"<{key}>"))
        if missing:
            raise ConfigError(f"missing input file(s): {missing}")

    def to_json_dict(self) -> dict:
        # deliberately excludes `workers`: it is an execution parameter and
        # never changes outputs, so the echoed config stays byte-identical
        # across worker counts
        return {
            "seed": self.seed,
            "geometry": self.geometry_path,
            "bold": dict(self.bold_paths),
            "annotations": self.annotations_path,
            "backend": self.backend,
            "template": self.template,
            "labels": list(self.labels) if self.labels else None,
            "mode": self.mode,
            "correction": dict(self.correction),
            "hierarchy_chains": [list(c) for c in self.hierarchy_chains],
            "k": self.k,
            "edge_threshold": self.edge_threshold,
            "similarity_source": self.similarity_source,
            "method": self.method,
            "model": self.model,
        }

    @classmethod
    def from_file(cls, path, **overrides) -> "PipelineConfig":
        path = os.fspath(path)
        with open(path) as fh:
            doc = json.load(fh)
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            return p if p is None or os.path.isabs(p) else os.path.join(base, p)

        backend = doc.get("backend")
        if backend:
            backend = dict(backend)
            for key in ("path", "image_dir", "image_embeddings",
                        "text_embeddings"):
                if key in backend:
                    backend[key] = resolve(backend[key])
        cfg = cls(
            seed=doc.get("seed"),
            geometry_path=resolve(doc["geometry"]),
            bold_paths={k: resolve(v) for k, v in doc["bold"].items()},
            annotations_path=resolve(doc.get("annotations")),
            backend=backend,
            template=doc.get("template", encode.DEFAULT_TEMPLATE),
            labels=doc.get("labels"),
            mode=doc.get("mode", "per-label"),
            correction=doc.get("correction", {}),
            hierarchy_chains=doc.get("hierarchy_chains", ()),
            k=doc.get("k", 5),
            edge_threshold=doc.get("edge_threshold", 0.55),
            similarity_source=doc.get("similarity_source", "uncorrected"),
            workers=doc.get("workers", 1),
            method=doc.get("method", "vqa"),
            model=doc.get("model", "fixture"),
        )
        if overrides:
            clean = {k: v for k, v in overrides.items() if v is not None}
            corr_over = {k: clean.pop(k) for k in list(clean)
                         if k in ("voxel_p", "fwhm_mm", "connectivity",
                                  "n_iterations", "alpha")}
            if corr_over:
                merged = dict(cfg.correction)
                merged.update(corr_over)
                clean["correction"] = merged
            cfg = replace(cfg, **clean)
        return cfg


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def _make_backend(cfg: PipelineConfig):
    kind = cfg.backend.get("kind")
    if kind == "fixture":
        return encode.FixtureVqaBackend(cfg.backend["path"])
    if kind == "http":
        return encode.HttpVqaBackend(
            cfg.backend["endpoint"], cfg.backend.get("image_dir", "."),
            max_inflight=cfg.backend.get("max_inflight", 4),
        )
    raise ConfigError(f"unknown backend kind {kind!r}")


def _annotate_from_backend(cfg: PipelineConfig) -> AnnotationMatrix:
    kind = cfg.backend.get("kind")
    if kind == "feature":
        images = encode.load_embeddings(cfg.backend["image_embeddings"])
        texts = encode.load_embeddings(cfg.backend["text_embeddings"])
        labels = cfg.backend.get("labels") or list(texts.ids)
        values = encode.feature_similarity_annotate(images, texts, labels)
        return AnnotationMatrix(stimulus_ids=images.ids, labels=labels,
                                values=values, kind="feature")
    backend = _make_backend(cfg)
    ids = cfg.backend.get("stimulus_ids")
    labels = cfg.backend.get("labels")
    if not ids or not labels:
        raise ConfigError("backend config needs 'stimulus_ids' and 'labels'")
    cache = None
    if cfg.backend.get("cache_dir"):
        cache = encode.AnswerCache(cfg.backend["cache_dir"])
    values = encode.vqa_annotate(ids, labels,
                                 encode.PromptTemplate(cfg.template),
                                 backend, cache=cache)
    return AnnotationMatrix(stimulus_ids=ids, labels=labels,
                            values=values, kind="vqa")


def stage_annotate(cfg: PipelineConfig, out_dir) -> list:
    """Materialize the annotation matrix into the output directory."""
    os.makedirs(out_dir, exist_ok=True)
    target = os.path.join(out_dir, "annotations.json")
    if cfg.annotations_path:
        matrix = AnnotationMatrix.load(cfg.annotations_path)
    else:
        matrix = _annotate_from_backend(cfg)
    matrix.save(target)
    return [target, os.path.splitext(target)[0] + ".bin"]


def _load_annotations(cfg: PipelineConfig, out_dir) -> AnnotationMatrix:
    path = os.path.join(out_dir, "annotations.json")
    if not os.path.exists(path):
        raise ConfigError("annotations not materialized; run the annotate stage first")
    return AnnotationMatrix.load(path)


def stage_fit(cfg: PipelineConfig, out_dir) -> list:
    """Per-subject, per-label voxelwise fits (balanced for binary
    annotations in per-label mode)."""
    geometry = VolumeGeometry.load(cfg.geometry_path)
    annotations = _load_annotations(cfg, out_dir)
    labels = list(cfg.labels) if cfg.labels else list(annotations.labels)
    for label in labels:
        if label not in annotations.labels:
            raise ConfigError(f"label {label!r} not present in annotations")
    written = []
    design_dir = os.path.join(out_dir, "designs")
    for subject, bold_path in cfg.bold_paths.items():
        bold = read_matrix(bold_path)
        if bold.shape[0] != annotations.n_stimuli:
            raise ConfigError(
                f"subject {subject}: {bold.shape[0]} response rows vs "
                f"{annotations.n_stimuli} annotation rows"
            )
        if bold.shape[1] != geometry.n_masked:
            raise ConfigError(
                f"subject {subject}: {bold.shape[1]} voxels vs mask {geometry.n_masked}"
            )
        subj_dir = os.path.join(out_dir, "subject", subject)
        os.makedirs(subj_dir, exist_ok=True)
        if cfg.mode == "multivariate":
            maps = glm.fit_multivariate(bold, annotations.values[:, [annotations.labels.index(lab) for lab in labels]],
                                        labels, meta={"subject": subject, "seed": cfg.seed})
            for m in maps:
                written.append(m.save(subj_dir, stem=f"{m.label}_subject"))
            written.extend(_stat_bins(subj_dir, [m.label for m in maps], "subject"))
            continue
        for label in labels:
            column = annotations.column(label).astype(np.float64)
            if annotations.kind == "vqa":
                os.makedirs(design_dir, exist_ok=True)
                bal = design_mod.balance_indices(column, cfg.seed, label)
                design_path = os.path.join(design_dir, f"{subject}_{label}.design.json")
                bal.save(design_path)
                written.append(design_path)
                trimmed_bold = design_mod.align_rows(bold, bal)
                trimmed_col = column[bal.kept_row_indices]
            else:
                bal = None
                trimmed_bold = bold
                trimmed_col = column
            stat = glm.fit_label_map(
                trimmed_bold, trimmed_col, label=label, design=bal,
                workers=cfg.workers,
                meta={"subject": subject, "seed": cfg.seed},
            )
            written.append(stat.save(subj_dir, stem=f"{label}_subject"))
            written.extend(_stat_bins(subj_dir, [label], "subject"))
    return written


def _stat_bins(directory, labels, level) -> list:
    paths = []
    for label in labels:
        for stat in ("beta", "se", "t", "r2", "p"):
            paths.append(os.path.join(directory, f"{label}_{level}_{stat}.bin"))
    return paths


def _subject_map_path(out_dir, subject, label) -> str:
    return os.path.join(out_dir, "subject", subject, f"{label}_subject.statmap.json")


def stage_group(cfg: PipelineConfig, out_dir) -> list:
    """One-sample aggregation of subject slope maps (needs >= 2 subjects)."""
    subjects = cfg.subjects
    if len(subjects) < 2:
        return []
    annotations = _load_annotations(cfg, out_dir)
    labels = list(cfg.labels) if cfg.labels else list(annotations.labels)
    group_dir = os.path.join(out_dir, "group")
    os.makedirs(group_dir, exist_ok=True)
    written = []
    for label in labels:
        betas = []
        for subject in subjects:
            stat = StatMap.load(_subject_map_path(out_dir, subject, label))
            betas.append(stat.beta.astype(np.float64))
        gmap = glm.group_ttest(np.stack(betas), label=label,
                               meta={"seed": cfg.seed})
        written.append(gmap.save(group_dir, stem=f"{label}_group"))
        written.extend(_stat_bins(group_dir, [label], "group"))
    return written


def _final_uncorrected_map(cfg: PipelineConfig, out_dir, label) -> StatMap:
    """The map correction applies to: group level when available,
    otherwise the single subject's map."""
    subjects = cfg.subjects
    if len(subjects) >= 2:
        return StatMap.load(os.path.join(out_dir, "group", f"{label}_group.statmap.json"))
    return StatMap.load(_subject_map_path(out_dir, subjects[0], label))


def stage_correct(cfg: PipelineConfig, out_dir) -> list:
    """Simulate the extent threshold once, then correct every label map."""
    geometry = VolumeGeometry.load(cfg.geometry_path)
    annotations = _load_annotations(cfg, out_dir)
    labels = list(cfg.labels) if cfg.labels else list(annotations.labels)
    corr = cfg.correction
    threshold = correct_mod.mc_cluster_threshold(
        geometry, corr["fwhm_mm"], corr["voxel_p"], None,
        corr["connectivity"], corr["n_iterations"], corr["alpha"],
        cfg.seed, workers=cfg.workers,
    )
    threshold_path = os.path.join(out_dir, "threshold.json")
    threshold.save(threshold_path)
    corrected_dir = os.path.join(out_dir, "corrected")
    os.makedirs(corrected_dir, exist_ok=True)
    written = [threshold_path]
    for label in labels:
        base_map = _final_uncorrected_map(cfg, out_dir, label)
        corrected = correct_mod.apply_correction(base_map, threshold, geometry)
        written.append(corrected.save(corrected_dir, stem=f"{label}_corrected"))
        written.extend(_stat_bins(corrected_dir, [label], "corrected"))
    return written


def _load_corrected(out_dir, label) -> StatMap:
    return StatMap.load(os.path.join(out_dir, "corrected",
                                     f"{label}_corrected.statmap.json"))


def stage_overlay(cfg: PipelineConfig, out_dir) -> list:
    annotations = _load_annotations(cfg, out_dir)
    labels = list(cfg.labels) if cfg.labels else list(annotations.labels)
    maps = [_load_corrected(out_dir, label) for label in labels]
    counts = semantics.overlay_counts(maps)
    bin_path = os.path.join(out_dir, "overlay_counts.bin")
    write_matrix(bin_path, np.stack([
        counts.total.astype(np.float32),
        counts.positive.astype(np.float32),
        counts.negative.astype(np.float32),
    ]))
    meta_path = os.path.join(out_dir, "overlay_counts.json")
    _write_json(meta_path, {
        "rows": ["total", "positive", "negative"],
        "labels": labels,
        "values_file": "overlay_counts.bin",
    })
    return [bin_path, meta_path]


def stage_hierarchy(cfg: PipelineConfig, out_dir) -> list:
    if not cfg.hierarchy_chains:
        return []
    hier_dir = os.path.join(out_dir, "hierarchy")
    os.makedirs(hier_dir, exist_ok=True)
    written = []
    for chain in cfg.hierarchy_chains:
        if len(chain) < 2:
            raise ConfigError(f"hierarchy chain too short: {chain}")
        for upper_label, lower_label in zip(chain, chain[1:]):
            upper = _load_corrected(out_dir, upper_label)
            lower = _load_corrected(out_dir, lower_label)
            overlay = semantics.hierarchy_overlay(upper, lower)
            stem = f"{upper_label}__{lower_label}"
            bin_path = os.path.join(hier_dir, f"{stem}.bin")
            write_matrix(bin_path, overlay.codes.astype(np.float32)[None, :])
            meta_path = os.path.join(hier_dir, f"{stem}.json")
            _write_json(meta_path, {
                "upper": upper_label,
                "lower": lower_label,
                "categories": list(semantics.OVERLAY_CATEGORIES),
                "category_counts": overlay.counts(),
                "values_file": f"{stem}.bin",
            })
            written.extend([bin_path, meta_path])
    return written


def stage_network(cfg: PipelineConfig, out_dir) -> list:
    annotations = _load_annotations(cfg, out_dir)
    labels = list(cfg.labels) if cfg.labels else list(annotations.labels)
    if cfg.k > len(labels):
        raise ConfigError(f"k={cfg.k} exceeds {len(labels)} labels")
    if cfg.similarity_source == "corrected":
        maps = [_load_corrected(out_dir, label) for label in labels]
    else:
        maps = [_final_uncorrected_map(cfg, out_dir, label) for label in labels]
    sim = semantics.similarity_matrix(maps)
    dist = semantics.to_distance(sim)
    merges = semantics.ward_merge_sequence(dist)
    assignment = semantics.ward_cluster(dist, cfg.k)
    network = semantics.build_network(sim, labels, assignment, cfg.edge_threshold)

    written = []
    sim_path = os.path.join(out_dir, "similarity.bin")
    write_matrix(sim_path, sim.astype(np.float32))
    dist_path = os.path.join(out_dir, "distance.bin")
    write_matrix(dist_path, dist.astype(np.float32))
    labels_path = os.path.join(out_dir, "similarity_labels.json")
    _write_json(labels_path, {"labels": labels})
    dendro_path = os.path.join(out_dir, "dendrogram.json")
    semantics.save_dendrogram(merges, dendro_path)
    clusters_path = os.path.join(out_dir, "clusters.json")
    _write_json(clusters_path, {
        "k": cfg.k,
        "assignment": {lab: int(c) for lab, c in zip(labels, assignment)},
    })
    written.extend([sim_path, dist_path, labels_path, dendro_path, clusters_path])

    means_dir = os.path.join(out_dir, "cluster_means")
    os.makedirs(means_dir, exist_ok=True)
    for cid, mean_map in semantics.cluster_mean_maps(maps, assignment, cfg.k).items():
        path = os.path.join(means_dir, f"cluster{cid}_mean_t.bin")
        write_matrix(path, mean_map[None, :])
        written.append(path)

    net_json = os.path.join(out_dir, "network.json")
    with open(net_json, "w") as fh:
        fh.write(network.to_json())
    net_graphml = os.path.join(out_dir, "network.graphml")
    with open(net_graphml, "w") as fh:
        fh.write(network.to_graphml())
    written.extend([net_json, net_graphml])
    return written


STAGES = (
    ("annotate", stage_annotate),
    ("fit", stage_fit),
    ("group", stage_group),
    ("correct", stage_correct),
    ("overlay", stage_overlay),
    ("hierarchy", stage_hierarchy),
    ("network", stage_network),
)


def run_pipeline(cfg: PipelineConfig, out_dir) -> dict:
    """Run every stage and write the output manifest.

    On failure the manifest records status=incomplete and the error; on
    success it lists every artifact with its sha256 content hash.
    """
    cfg.validate_paths()
    os.makedirs(out_dir, exist_ok=True)
    echo_path = os.path.join(out_dir, "config.echo.json")
    _write_json(echo_path, cfg.to_json_dict())
    artifacts = {"config": [echo_path]}
    manifest_path = os.path.join(out_dir, "manifest.json")
    try:
        for stage_name, stage_fn in STAGES:
            artifacts[stage_name] = stage_fn(cfg, out_dir)
    except Exception as exc:
        _write_json(manifest_path, {
            "status": "incomplete",
            "error": f"{type(exc).__name__}: {exc}",
        })
        raise
    entries = []
    for stage_name, paths in artifacts.items():
        for path in paths:
            entries.append({
                "stage": stage_name,
                "path": os.path.relpath(path, out_dir),
                "sha256": _file_hash(path),
            })
    entries.sort(key=lambda e: e["path"])
    manifest = {"status": "complete", "artifacts": entries}
    _write_json(manifest_path, manifest)
    return manifest


def compare_methods(configs, roi_indices, label: str) -> list:
    """Mean statistic within an ROI for one label, per method config.

    Each config is fit in memory (uncorrected final map); the result rows
    are (model, method, mean_t), mirroring a model/method comparison
    table.
    """
    roi = np.unique(np.asarray(roi_indices, dtype=np.int64))
    if roi.size == 0:
        raise ValueError("ROI is empty")
    geometries = []
    rows = []
    for cfg in configs:
        cfg.validate_paths()
        geometry = VolumeGeometry.load(cfg.geometry_path)
        geometries.append((geometry.dims, geometry.voxel_size_mm,
                           hashlib.sha256(geometry.mask.tobytes()).hexdigest()))
        if roi.max() >= geometry.n_masked:
            raise ValueError("ROI index outside the mask")
        if cfg.annotations_path is None:
            raise ConfigError("compare requires materialized annotations")
        annotations = AnnotationMatrix.load(cfg.annotations_path)
        if label not in annotations.labels:
            raise ConfigError(f"label {label!r} not present in annotations")
        column = annotations.column(label).astype(np.float64)
        betas = []
        final_map = None
        for subject, bold_path in cfg.bold_paths.items():
            bold = read_matrix(bold_path)
            if annotations.kind == "vqa" and cfg.mode == "per-label":
                bal = design_mod.balance_indices(column, cfg.seed, label)
                stat = glm.fit_label_map(design_mod.align_rows(bold, bal),
                                         column[bal.kept_row_indices],
                                         label=label, design=bal,
                                         workers=cfg.workers)
            else:
                stat = glm.fit_label_map(bold, column, label=label,
                                         workers=cfg.workers)
            betas.append(stat.beta.astype(np.float64))
            final_map = stat
        if len(betas) >= 2:
            final_map = glm.group_ttest(np.stack(betas), label=label)
        mean_t = float(final_map.t.astype(np.float64)[roi].mean())
        rows.append((cfg.model, cfg.method, mean_t))
    if len({g for g in geometries}) > 1:
        raise ValueError("compared configs must share the same geometry")
    return rows


def comparison_table(rows) -> str:
    lines = ["model\tmethod\tmean_t"]
    for model, method, mean_t in rows:
        lines.append(f"{model}\t{method}\t{mean_t:.6g}")
    return "\n".join(lines) + "\n"
