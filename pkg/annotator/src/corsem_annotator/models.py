"""VQA model backends.

Every backend answers (image bytes, prompt) with a ("yes"|"no",
confidence) pair; the binary contract is enforced by construction, never
by parsing free-form generations.  The stub backend is deterministic and
dependency-light (used by the test suite and as a serving placeholder);
the BLIP backend scores the two candidate answers with a pretrained
checkpoint when torch/transformers and weights are available.
"""

from __future__ import annotations

import hashlib
import io


class ImageDecodeError(ValueError):
    """The request payload is not a decodable image."""


def _validate_image(image_bytes: bytes) -> None:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(image_bytes)) as img:
            img.verify()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise ImageDecodeError(f"undecodable image: {exc}") from exc


class StubVqaModel:
    """Deterministic answers derived from the image and prompt content.

    The answer is a parity bit of sha256(image || prompt), so identical
    inputs always yield identical answers and any change to either input
    can flip them.  Images must still decode; garbage bytes are rejected
    exactly like the real model path.
    """

    name = "stub"

    def answer(self, image_bytes: bytes, prompt: str):
        _validate_image(image_bytes)
        digest = hashlib.sha256(image_bytes + prompt.encode("utf-8")).digest()
        answer = "yes" if digest[0] % 2 == 0 else "no"
        confidence = 0.5 + digest[1] / 512.0
        return answer, confidence


class BlipVqaModel:
    """Pretrained BLIP question answering with decoding restricted to the
    yes/no pair.

    Each candidate answer is scored with the language-model loss; the
    lower-loss candidate wins and the confidence is its normalized
    likelihood among the two, so outputs always satisfy the binary
    contract regardless of what the unconstrained decoder would say.
    """

    name = "blip"

    def __init__(self, checkpoint: str):
        import torch
        from PIL import Image
        from transformers import BlipForQuestionAnswering, BlipProcessor

        self._torch = torch
        self._image_cls = Image
        self.processor = BlipProcessor.from_pretrained(checkpoint)
        self.model = BlipForQuestionAnswering.from_pretrained(checkpoint)
        self.model.eval()

    def _candidate_loss(self, inputs, text: str) -> float:
        labels = self.processor(text=text, return_tensors="pt").input_ids
        with self._torch.no_grad():
            out = self.model(**inputs, labels=labels)
        return float(out.loss)

    def answer(self, image_bytes: bytes, prompt: str):
        import math

        _validate_image(image_bytes)
        image = self._image_cls.open(io.BytesIO(image_bytes)).convert("RGB")
        inputs = self.processor(images=image, text=prompt, return_tensors="pt")
        loss_yes = self._candidate_loss(inputs, "yes")
        loss_no = self._candidate_loss(inputs, "no")
        score_yes = math.exp(-loss_yes)
        score_no = math.exp(-loss_no)
        total = score_yes + score_no
        if loss_yes <= loss_no:
            return "yes", score_yes / total
        return "no", score_no / total


def load_model(spec: str):
    """Instantiate a model from a spec string: "stub" or "blip:<checkpoint>"."""
    if spec == "stub":
        return StubVqaModel()
    if spec.startswith("blip:"):
        checkpoint = spec.split(":", 1)[1]
        if not checkpoint:
            raise ValueError("blip model spec needs a checkpoint: blip:<name-or-path>")
        return BlipVqaModel(checkpoint)
    raise ValueError(f"unknown model spec {spec!r} (expected 'stub' or 'blip:<ckpt>')")
