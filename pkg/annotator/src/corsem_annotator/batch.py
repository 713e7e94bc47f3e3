"""Batch annotation of an image directory.

Walks the images in sorted-filename order, queries the model for every
(image, label) pair, and emits the fixture TSV
(stimulus_id\\tlabel\\tanswer) plus the binary annotation container the
analysis pipeline ingests.  Runs are resumable: rows already present in
the fixture are not recomputed, and writes are append-only with a flush
per image.  Unreadable images are recorded in an errors sidecar and the
run continues.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .containers import write_matrix
from .models import ImageDecodeError

IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")


@dataclass
class AnnotationJob:
    image_dir: str
    labels: list
    template: str = "Is there any {label} that can be easily recognized in this image?"
    fixture_path: str = "annotations.tsv"
    matrix_path: str | None = None
    ids_path: str | None = None
    extensions: tuple = IMAGE_EXTENSIONS

    def __post_init__(self):
        if not os.path.isdir(self.image_dir):
            raise ValueError(f"image directory {self.image_dir!r} does not exist")
        if not self.labels:
            raise ValueError("label list is empty")
        if self.template.count("{label}") != 1:
            raise ValueError("template needs exactly one {label} placeholder")


@dataclass
class BatchResult:
    n_answered: int = 0
    n_cached: int = 0
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _list_images(job: AnnotationJob) -> list:
    names = [n for n in sorted(os.listdir(job.image_dir))
             if n.lower().endswith(tuple(job.extensions))]
    return names


def _read_existing(fixture_path: str) -> dict:
    existing = {}
    if not os.path.exists(fixture_path):
        return existing
    with open(fixture_path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"corrupt fixture row: {line!r}")
            existing[(parts[0], parts[1])] = parts[2]
    return existing


def batch_annotate(job: AnnotationJob, model) -> BatchResult:
    """Annotate every (image, label) pair; returns counts and errors.

    The matrix container (when requested) covers the images that
    annotated completely, in sorted-filename order, with labels in job
    order; it always agrees cell-for-cell with the fixture TSV.
    """
    result = BatchResult()
    names = _list_images(job)
    existing = _read_existing(job.fixture_path)
    answers = dict(existing)
    result.n_cached = len(existing)

    with open(job.fixture_path, "a") as fixture:
        for name in names:
            pending = [lab for lab in job.labels if (name, lab) not in answers]
            if not pending:
                continue
            try:
                with open(os.path.join(job.image_dir, name), "rb") as fh:
                    image_bytes = fh.read()
                rows = []
                for label in pending:
                    prompt = job.template.replace("{label}", label)
                    answer, _confidence = model.answer(image_bytes, prompt)
                    if answer not in ("yes", "no"):
                        raise ValueError(f"model returned non-binary {answer!r}")
                    rows.append((label, answer))
            except (OSError, ImageDecodeError, ValueError) as exc:
                result.errors.append((name, str(exc)))
                continue
            for label, answer in rows:
                fixture.write(f"{name}\t{label}\t{answer}\n")
                answers[(name, label)] = answer
                result.n_answered += 1
            fixture.flush()

    complete = [n for n in names
                if all((n, lab) in answers for lab in job.labels)]
    if job.matrix_path:
        if not complete:
            raise ValueError("no image annotated completely; cannot write matrix")
        values = np.zeros((len(complete), len(job.labels)), dtype=np.float32)
        for i, name in enumerate(complete):
            for j, label in enumerate(job.labels):
                values[i, j] = 1.0 if answers[(name, label)] == "yes" else 0.0
        write_matrix(job.matrix_path, values)
        if job.ids_path:
            import json

            with open(job.ids_path, "w") as fh:
                json.dump({"stimulus_ids": complete,
                           "labels": list(job.labels)}, fh, sort_keys=True)
                fh.write("\n")
    return result


def write_error_sidecar(job: AnnotationJob, result: BatchResult) -> str | None:
    if not result.errors:
        return None
    path = job.fixture_path + ".errors"
    with open(path, "a") as fh:
        for name, message in result.errors:
            fh.write(f"{name}\t{message}\n")
    return path
