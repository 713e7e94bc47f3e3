"""Writer for the analysis pipeline's binary matrix container.

Independent implementation of the interchange format (magic CORSEM01,
u32le row/column counts, row-major float32 little-endian payload); this
package talks to the pipeline only through files and the wire protocol.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CORSEM01"


def write_matrix(path, values) -> None:
    arr = np.ascontiguousarray(values, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"payload must be a non-empty 2-D matrix, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("refusing to write non-finite payload")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        fh.write(arr.astype("<f4", copy=False).tobytes(order="C"))
