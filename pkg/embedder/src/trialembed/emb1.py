"""EMB1 binary matrix writer.

Layout: 4-byte magic "EMB1", little-endian u32 row count and width,
NUL-terminated UTF-8 ids in row order, then float32 LE row data.  This
mirrors the consuming package's loader exactly; the round trip is
covered by a cross-package test.
"""

import struct

import numpy as np

MAGIC = b"EMB1"


def write_embeddings(path, ids, matrix) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise ValueError(f"embedding matrix must be 2-D, got {matrix.shape}")
    if len(ids) != matrix.shape[0]:
        raise ValueError(f"{len(ids)} ids for {matrix.shape[0]} rows")
    if not np.isfinite(matrix).all():
        bad = int(np.nonzero(~np.isfinite(matrix).all(axis=1))[0][0])
        raise ValueError(f"embedding row {bad} (trial {ids[bad]!r}) "
                          "contains non-finite values")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", matrix.shape[0], matrix.shape[1]))
        for trial_id in ids:
            encoded = trial_id.encode("utf-8")
            if b"\x00" in encoded:
                raise ValueError(f"trial id {trial_id!r} contains NUL")
            fh.write(encoded + b"\x00")
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())
