"""Text, CSV and binary PGM renderings of attention masks.

Text grids use one character per cell, ``#`` attended and ``.`` not
attended, with queries as rows and keys as columns. Soft weights are only
visible in the image output.

PGM output is binary P5 with maxval 255 and one pixel per cell:
pixel = round(255 * weight), so 0 is not attended and 255 is a hard cell.
Multiple panels sit side by side, split by a one-pixel column of value 128.
"""

from __future__ import annotations

import io
from typing import Sequence

import numpy as np

from .patterns import AttentionMask

SEPARATOR = 128


def _weights(mask: AttentionMask) -> np.ndarray:
    return mask.weights if mask.is_soft else mask.allowed.astype(np.float64)


def text_grid(mask: AttentionMask) -> str:
    chars = np.where(mask.allowed, "#", ".")
    return "\n".join("".join(row) for row in chars) + "\n"


def text_panels(masks: Sequence[AttentionMask], titles: Sequence[str]) -> str:
    if len(masks) != len(titles):
        raise ValueError("one title per panel")
    return "\n".join(f"{title}\n{text_grid(mask)}" for mask, title in zip(masks, titles))


def mask_csv(masks: Sequence[AttentionMask]) -> str:
    """``panel,query,key,weight`` for every attended cell, row-major within a panel."""
    buf = io.StringIO()
    buf.write("panel,query,key,weight\n")
    for p, mask in enumerate(masks):
        w = _weights(mask)
        for q, k in zip(*np.nonzero(mask.allowed)):
            buf.write(f"{p},{q},{k},{w[q, k]:.6g}\n")
    return buf.getvalue()


def pgm_pixels(masks: Sequence[AttentionMask]) -> np.ndarray:
    if not masks:
        raise ValueError("nothing to render")
    height = masks[0].n_queries
    if any(m.n_queries != height for m in masks):
        raise ValueError("panels must share the query count")
    parts = []
    for i, mask in enumerate(masks):
        if i:
            parts.append(np.full((height, 1), SEPARATOR, dtype=np.uint8))
        parts.append(np.rint(255 * _weights(mask)).astype(np.uint8))
    return np.concatenate(parts, axis=1)


def pgm_bytes(masks: Sequence[AttentionMask]) -> bytes:
    pixels = pgm_pixels(masks)
    header = f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    """Parse the P5 files written by :func:`pgm_bytes` (no comments, maxval 255)."""
    fields = data.split(maxsplit=4)
    if len(fields) < 5 or fields[0] != b"P5" or fields[3] != b"255":
        raise ValueError("not an 8-bit binary PGM")
    width, height = int(fields[1]), int(fields[2])
    # exactly one whitespace byte follows maxval
    start = len(data) - width * height
    return np.frombuffer(data[start:], dtype=np.uint8).reshape(height, width)
