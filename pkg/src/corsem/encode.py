"""Semantic annotation of stimuli.

Two encodings produce the stimuli-by-labels regressor matrix: binary
visual-question-answering ("is there any <label> ...?" posed per image,
answers normalized strictly to yes/no) and continuous image-text
embedding cosine similarity.  VQA answers come from a backend: a fixture
TSV for offline runs, or an HTTP service speaking the wire protocol
(POST /v1/vqa with a base64 image and a prompt).  Answers are cached per
(stimulus, label, template) so large annotation runs are resumable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import string
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import LabelSet

DEFAULT_TEMPLATE = "Is there any {label} that can be easily recognized in this image?"

_STRIP_CHARS = string.whitespace + string.punctuation


class AnnotationError(ValueError):
    """Backend answer or coverage violates the annotation contract."""


@dataclass(frozen=True)
class PromptTemplate:
    template: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        if self.template.count("{label}") != 1:
            raise ValueError(
                f"template must contain the placeholder '{{label}}' exactly once: "
                f"{self.template!r}"
            )

    def render(self, label: str) -> str:
        if not label:
            raise ValueError("label is empty")
        return self.template.replace("{label}", label)

    def content_hash(self) -> str:
        return hashlib.sha256(self.template.encode("utf-8")).hexdigest()[:16]


def render_prompt(label: str, template: PromptTemplate | None = None) -> str:
    return (template or PromptTemplate()).render(label)


def normalize_answer(raw: str, stimulus_id: str, label: str) -> str:
    """Lowercase and strip surrounding whitespace/punctuation; anything
    that is not exactly yes/no afterwards is an error, never coerced."""
    cleaned = str(raw).strip(_STRIP_CHARS).lower()
    if cleaned not in ("yes", "no"):
        raise AnnotationError(
            f"stimulus {stimulus_id!r}, label {label!r}: "
            f"answer {raw!r} does not normalize to yes/no"
        )
    return cleaned


class FixtureVqaBackend:
    """Backend reading answers from a TSV of stimulus_id\\tlabel\\tanswer."""

    max_inflight = 1

    def __init__(self, path):
        self.path = os.fspath(path)
        self._answers = {}
        self.n_requests = 0
        with open(self.path) as fh:
            for line_no, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise AnnotationError(
                        f"{self.path}:{line_no}: expected 3 tab-separated fields"
                    )
                self._answers[(parts[0], parts[1])] = parts[2]

    def query(self, stimulus_id: str, label: str, prompt: str) -> str:
        self.n_requests += 1
        try:
            return self._answers[(stimulus_id, label)]
        except KeyError:
            raise AnnotationError(
                f"fixture {self.path} has no entry for "
                f"stimulus {stimulus_id!r}, label {label!r}"
            ) from None


class HttpVqaBackend:
    """Backend posting images to a VQA service.

    Stimulus ids resolve to files in `image_dir`; requests are JSON
    {"image_b64", "prompt"} against POST <endpoint>/v1/vqa.  Transient
    failures (connection errors, 503) are retried up to `retries` times
    with exponential backoff.
    """

    def __init__(self, endpoint: str, image_dir, max_inflight: int = 4,
                 retries: int = 3, backoff_s: float = 0.5, timeout_s: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.image_dir = os.fspath(image_dir)
        self.max_inflight = max(1, int(max_inflight))
        self.retries = int(retries)
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s
        self.n_requests = 0

    def _image_b64(self, stimulus_id: str) -> str:
        path = os.path.join(self.image_dir, stimulus_id)
        with open(path, "rb") as fh:
            return base64.b64encode(fh.read()).decode("ascii")

    def query(self, stimulus_id: str, label: str, prompt: str) -> str:
        body = json.dumps({"image_b64": self._image_b64(stimulus_id),
                           "prompt": prompt}).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint + "/v1/vqa", data=body,
            headers={"Content-Type": "application/json"}, method="POST",
        )
        last_error = None
        for attempt in range(self.retries + 1):
            self.n_requests += 1
            try:
                with urllib.request.urlopen(request, timeout=self.timeout_s) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                return str(payload["answer"])
            except urllib.error.HTTPError as exc:
                if exc.code == 503 and attempt < self.retries:
                    last_error = exc
                else:
                    raise AnnotationError(
                        f"stimulus {stimulus_id!r}, label {label!r}: "
                        f"backend returned HTTP {exc.code}"
                    ) from exc
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                if attempt >= self.retries:
                    raise AnnotationError(
                        f"backend unreachable at {self.endpoint}: {exc}"
                    ) from exc
                last_error = exc
            time.sleep(self.backoff_s * 2 ** attempt)
        raise AnnotationError(f"backend failed after retries: {last_error}")


class AnswerCache:
    """One small text file per (stimulus, label, template) key."""

    def __init__(self, directory):
        self.directory = os.fspath(directory)
        os.makedirs(self.directory, exist_ok=True)

    def _path(self, stimulus_id: str, label: str, template_hash: str) -> str:
        key = json.dumps([stimulus_id, label, template_hash])
        name = hashlib.sha256(key.encode("utf-8")).hexdigest() + ".tsv"
        return os.path.join(self.directory, name)

    def get(self, stimulus_id: str, label: str, template_hash: str):
        path = self._path(stimulus_id, label, template_hash)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            fields = fh.read().rstrip("\n").split("\t")
        if len(fields) != 3 or fields[0] != stimulus_id or fields[1] != label:
            return None
        return fields[2]

    def put(self, stimulus_id: str, label: str, template_hash: str, answer: str) -> None:
        path = self._path(stimulus_id, label, template_hash)
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(f"{stimulus_id}\t{label}\t{answer}\n")
        os.replace(tmp, path)


def vqa_annotate(stimulus_ids, labels, template: PromptTemplate, backend,
                 cache: AnswerCache | None = None) -> np.ndarray:
    """Binary annotation matrix from backend answers.

    Entry (i, j) is 1.0 iff the backend's answer for (stimulus i, prompt
    of label j) normalizes to yes.  Rows follow `stimulus_ids`, columns
    follow `labels`; assembly is a deterministic gather regardless of
    request completion order.
    """
    ids = [str(s) for s in stimulus_ids]
    if len(set(ids)) != len(ids):
        raise ValueError("stimulus ids must be unique")
    labels = labels if isinstance(labels, LabelSet) else LabelSet(labels)
    template_hash = template.content_hash()
    n, m = len(ids), len(labels)
    values = np.zeros((n, m), dtype=np.float32)

    pending = []
    answers = {}
    for i, sid in enumerate(ids):
        for j, label in enumerate(labels):
            cached = cache.get(sid, label, template_hash) if cache else None
            if cached is not None:
                answers[(i, j)] = normalize_answer(cached, sid, label)
            else:
                pending.append((i, j, sid, label))

    def fetch(task):
        i, j, sid, label = task
        raw = backend.query(sid, label, template.render(label))
        return i, j, sid, label, raw

    inflight = getattr(backend, "max_inflight", 1)
    if pending:
        if inflight > 1:
            with ThreadPoolExecutor(max_workers=inflight) as pool:
                results = list(pool.map(fetch, pending))
        else:
            results = [fetch(t) for t in pending]
        for i, j, sid, label, raw in results:
            normalized = normalize_answer(raw, sid, label)
            answers[(i, j)] = normalized
            if cache:
                cache.put(sid, label, template_hash, normalized)

    for (i, j), answer in answers.items():
        values[i, j] = 1.0 if answer == "yes" else 0.0
    return values


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|), clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.size != v.size:
        raise ValueError(f"dimension mismatch: {u.size} vs {v.size}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    return float(min(max(float(u @ v) / (nu * nv), -1.0), 1.0))


def load_embeddings(manifest_path) -> "EmbeddingSet":
    """Load an embedding set from a JSON manifest binding an id list to a
    binary matrix container: {"ids": [...], "vectors_file": "<path>"}."""
    from .core import read_matrix

    manifest_path = os.fspath(manifest_path)
    with open(manifest_path) as fh:
        doc = json.load(fh)
    vectors = read_matrix(os.path.join(os.path.dirname(manifest_path) or ".",
                                       doc["vectors_file"]))
    return EmbeddingSet(ids=tuple(doc["ids"]), vectors=vectors)


def save_embeddings(embeddings: "EmbeddingSet", manifest_path) -> None:
    from .core import write_matrix

    manifest_path = os.fspath(manifest_path)
    vectors_path = os.path.splitext(manifest_path)[0] + ".bin"
    write_matrix(vectors_path, embeddings.vectors.astype(np.float32))
    doc = {"ids": list(embeddings.ids),
           "vectors_file": os.path.relpath(
               vectors_path, os.path.dirname(manifest_path) or ".")}
    with open(manifest_path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple
    vectors: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.ids)
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2:
            raise ValueError("vectors must be 2-D (ids x dimension)")
        if len(ids) != vectors.shape[0]:
            raise ValueError("one vector per id required")
        if len(set(ids)) != len(ids):
            raise ValueError("embedding ids must be unique")
        if vectors.shape[1] < 1:
            raise ValueError("embedding dimension must be >= 1")
        norms = np.linalg.norm(vectors, axis=1)
        if (norms == 0.0).any():
            zero = [ids[i] for i in np.flatnonzero(norms == 0.0)[:5]]
            raise ValueError(f"zero-norm embedding for ids {zero}")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(ids)})

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.vectors[self._index[key]]
        except KeyError:
            raise KeyError(f"no embedding for {key!r}") from None


def feature_similarity_annotate(image_embeddings: EmbeddingSet,
                                text_embeddings: EmbeddingSet,
                                labels) -> np.ndarray:
    """Continuous annotation matrix of image-text cosine similarities.

    Rows follow the image embedding order; entry (i, j) is the cosine of
    image i's vector with the text vector of label j.
    """
    labels = labels if isinstance(labels, LabelSet) else LabelSet(labels)
    if image_embeddings.dimension != text_embeddings.dimension:
        raise ValueError(
            f"embedding dimension mismatch: image {image_embeddings.dimension} "
            f"vs text {text_embeddings.dimension}"
        )
    missing = [lab for lab in labels if lab not in text_embeddings._index]
    if missing:
        raise ValueError(f"labels missing from text embeddings: {missing}")
    img = image_embeddings.vectors
    txt = np.stack([text_embeddings.vector(lab) for lab in labels])
    img_n = img / np.linalg.norm(img, axis=1, keepdims=True)
    txt_n = txt / np.linalg.norm(txt, axis=1, keepdims=True)
    sim = np.clip(img_n @ txt_n.T, -1.0, 1.0)
    return sim.astype(np.float32)
