import io

import numpy as np
import pytest
from PIL import Image


def make_png(seed: int, size=(24, 24)) -> bytes:
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, (*size, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, format="PNG")
    return buf.getvalue()


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i in range(5):
        (d / f"img{i:02d}.png").write_bytes(make_png(i))
    return d
