"""Command-line interface.

Each pipeline stage is independently invokable against one output
directory; ``run`` chains them all and writes the manifest.  Errors exit
nonzero with a single machine-parsable line on stderr of the form
``corsem-error: <message>``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import pipeline, render, synth
from .core import AnnotationMatrix, StatMap, VolumeGeometry, read_matrix
from .pipeline import PipelineConfig


def _add_common_overrides(parser):
    parser.add_argument("--config", required=True, help="pipeline config JSON")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--voxel-p", type=float, default=None, dest="voxel_p")
    parser.add_argument("--fwhm-mm", type=float, default=None, dest="fwhm_mm")
    parser.add_argument("--connectivity", type=int, default=None,
                        choices=(6, 18, 26))
    parser.add_argument("--iterations", type=int, default=None, dest="n_iterations")
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--edge-threshold", type=float, default=None,
                        dest="edge_threshold")


def _config_from_args(args) -> PipelineConfig:
    overrides = {
        "seed": args.seed,
        "workers": args.workers,
        "voxel_p": args.voxel_p,
        "fwhm_mm": args.fwhm_mm,
        "connectivity": args.connectivity,
        "n_iterations": args.n_iterations,
        "k": args.k,
        "edge_threshold": args.edge_threshold,
    }
    return PipelineConfig.from_file(args.config, **overrides)


def _roi_from_file(path) -> np.ndarray:
    with open(path) as fh:
        doc = json.load(fh)
    return np.asarray(doc["voxels"], dtype=np.int64)


def cmd_synth(args) -> int:
    with open(args.spec) as fh:
        doc = json.load(fh)
    out = args.out
    os.makedirs(out, exist_ok=True)
    written = synth_from_spec_dict(doc, out, seed_override=args.seed)
    print("\n".join(written))
    return 0


def synth_from_spec_dict(doc, out_dir, seed_override=None) -> list:
    """Build phantom inputs (geometry, annotations, responses, truth) from
    a JSON phantom description; returns the written paths."""
    dims = tuple(doc["dims"])
    voxel_size = tuple(doc.get("voxel_size_mm", (1.0, 1.0, 1.0)))
    seed = int(doc["seed"] if seed_override is None else seed_override)
    mask_spec = doc.get("mask", {"kind": "full"})
    n = dims[0] * dims[1] * dims[2]
    if mask_spec["kind"] == "full":
        mask = np.ones(n, dtype=bool)
    elif mask_spec["kind"] == "ball":
        nx, ny, nz = dims
        zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                 indexing="ij")
        center = mask_spec.get("center", [(nx - 1) / 2, (ny - 1) / 2, (nz - 1) / 2])
        r = mask_spec["radius_vox"]
        dist2 = ((xx - center[0]) ** 2 + (yy - center[1]) ** 2
                 + (zz - center[2]) ** 2)
        mask = (dist2 <= r * r).reshape(-1)
    else:
        raise ValueError(f"unknown mask kind {mask_spec['kind']!r}")
    geometry = VolumeGeometry(dims, voxel_size, mask)

    geom_path = os.path.join(out_dir, "geometry.json")
    geometry.save(geom_path)
    written = [geom_path, os.path.join(out_dir, "geometry_mask.bin")]

    if "hierarchy" in doc:
        h = doc["hierarchy"]
        annotations, bolds, truth = synth.generate_hierarchy_phantom(
            h["chain"], geometry, [np.asarray(r, dtype=np.int64) for r in h["own_rois"]],
            doc["n_samples"], h.get("effect", 1.0), seed,
            noise_sigma=doc.get("noise_sigma", 0.0),
            yes_counts=h.get("yes_counts"),
            n_subjects=doc.get("n_subjects", 1),
        )
        labels = list(h["chain"])
    else:
        label_specs = tuple(
            synth.PhantomLabel(
                name=lab["name"],
                roi=np.asarray(lab.get("roi", []), dtype=np.int64),
                effect=lab.get("effect", 1.0),
                base_rate=lab.get("base_rate", 0.5),
            )
            for lab in doc["labels"]
        )
        spec = synth.PhantomSpec(
            geometry=geometry, labels=label_specs,
            n_samples=int(doc["n_samples"]),
            noise_sigma=float(doc.get("noise_sigma", 1.0)),
            seed=seed, n_subjects=int(doc.get("n_subjects", 1)),
        )
        annotations, bolds, truth = synth.generate_phantom(spec)
        labels = [lab.name for lab in label_specs]

    ids = [f"stim{n:06d}" for n in range(annotations.shape[0])]
    ann = AnnotationMatrix(stimulus_ids=ids, labels=labels,
                           values=annotations, kind="vqa")
    ann_path = os.path.join(out_dir, "annotations.json")
    ann.save(ann_path)
    written.extend([ann_path, os.path.join(out_dir, "annotations.bin")])

    from .core import write_matrix
    for s, bold in enumerate(bolds):
        path = os.path.join(out_dir, f"bold_sub{s:02d}.bin")
        write_matrix(path, bold)
        written.append(path)

    truth_path = os.path.join(out_dir, "truth.json")
    truth.save(truth_path)
    written.append(truth_path)
    return written


def cmd_stage(stage_name):
    def handler(args) -> int:
        cfg = _config_from_args(args)
        cfg.validate_paths()
        os.makedirs(args.out, exist_ok=True)
        stage_fn = dict(pipeline.STAGES)[stage_name]
        written = stage_fn(cfg, args.out)
        print("\n".join(os.path.relpath(w, args.out) for w in written))
        return 0
    return handler


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    manifest = pipeline.run_pipeline(cfg, args.out)
    print(f"complete: {len(manifest['artifacts'])} artifacts in {args.out}")
    return 0


def cmd_compare(args) -> int:
    configs = [PipelineConfig.from_file(p, seed=args.seed, workers=args.workers)
               for p in args.configs]
    roi = _roi_from_file(args.roi)
    rows = pipeline.compare_methods(configs, roi, args.label)
    table = pipeline.comparison_table(rows)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(table)
    sys.stdout.write(table)
    return 0


def cmd_render(args) -> int:
    geometry = VolumeGeometry.load(args.geometry)
    if args.statmap:
        values = getattr(StatMap.load(args.statmap), args.stat).astype(np.float64)
    else:
        values = read_matrix(args.values, allow_inf=True).ravel()
    render.render_slice(values, geometry, args.axis, args.index, args.out,
                        vmin=args.vmin, vmax=args.vmax)
    print(args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="corsem",
        description="semantic-annotation brain-response mapping pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate phantom inputs")
    p_synth.add_argument("--spec", required=True, help="phantom spec JSON")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(fn=cmd_synth)

    for stage_name in ("annotate", "fit", "group", "correct", "overlay",
                       "hierarchy", "network"):
        p_stage = sub.add_parser(stage_name, help=f"run the {stage_name} stage")
        _add_common_overrides(p_stage)
        p_stage.set_defaults(fn=cmd_stage(stage_name))

    p_run = sub.add_parser("run", help="run the full pipeline")
    _add_common_overrides(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_cmp = sub.add_parser("compare", help="method comparison table over an ROI")
    p_cmp.add_argument("--configs", nargs="+", required=True)
    p_cmp.add_argument("--roi", required=True, help='JSON {"voxels": [...]}')
    p_cmp.add_argument("--label", required=True)
    p_cmp.add_argument("--out", default=None)
    p_cmp.add_argument("--seed", type=int, default=None)
    p_cmp.add_argument("--workers", type=int, default=None)
    p_cmp.set_defaults(fn=cmd_compare)

    p_render = sub.add_parser("render", help="render a slice to a PPM image")
    p_render.add_argument("--geometry", required=True)
    group = p_render.add_mutually_exclusive_group(required=True)
    group.add_argument("--values", help="1xV masked-field container")
    group.add_argument("--statmap", help="stat map manifest JSON")
    p_render.add_argument("--stat", default="t",
                          choices=("beta", "se", "t", "r2", "p"))
    p_render.add_argument("--axis", default="z", choices=("x", "y", "z"))
    p_render.add_argument("--index", type=int, required=True)
    p_render.add_argument("--out", required=True)
    p_render.add_argument("--vmin", type=float, default=None)
    p_render.add_argument("--vmax", type=float, default=None)
    p_render.set_defaults(fn=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parsable error contract
        message = str(exc).replace("\n", " ")
        print(f"corsem-error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
