"""File formats: 8-bit PNG images, landmark JSON sidecars, raw float32 sidecars.

Images travel in memory as float64 arrays of shape (H, W, 3) with values in
[0, 1]. On disk they are 8-bit sRGB PNG, mapped by value/255 on read and
round-half-up on write. Adversarial outputs additionally get a raw float32
sidecar (little-endian, row-major, RGB interleaved) so metrics can be
recomputed bit-exactly from disk.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .errors import DimensionMismatch

FLOAT_SIDECAR_SUFFIX = ".f32"
LANDMARK_SUFFIX = ".landmarks.json"


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read an 8-bit PNG into a float64 (H, W, 3) array in [0, 1]."""
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_image(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write a [0, 1] float image as 8-bit PNG, rounding half up."""
    _check_image(image)
    q = np.floor(np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    PILImage.fromarray(q, mode="RGB").save(path, format="PNG")


def write_float_sidecar(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write the raw float32 sidecar next to a PNG output."""
    _check_image(image)
    Path(path).write_bytes(np.ascontiguousarray(image, dtype="<f4").tobytes())


def read_float_sidecar(path: str | os.PathLike, height: int, width: int) -> np.ndarray:
    """Read a raw float32 sidecar back into a float64 (H, W, 3) array."""
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if data.size != height * width * 3:
        raise DimensionMismatch(
            f"sidecar {path} holds {data.size} floats, expected {height * width * 3}"
        )
    return data.reshape(height, width, 3).astype(np.float64)


def read_landmarks(path: str | os.PathLike) -> tuple[np.ndarray, str]:
    """Read a landmark sidecar; returns (points (N, 2) float64, scheme id)."""
    obj = json.loads(Path(path).read_text())
    pts = np.asarray(obj["points"], dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise DimensionMismatch(f"landmark file {path}: points must be an array of [x, y] pairs")
    return pts, str(obj["scheme"])


def write_landmarks(path: str | os.PathLike, points: np.ndarray, scheme: str) -> None:
    obj = {"scheme": scheme, "points": [[float(x), float(y)] for x, y in np.asarray(points)]}
    Path(path).write_text(canonical_json(obj))


def canonical_json(obj) -> str:
    """Deterministic JSON serialization (sorted keys, fixed separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ": "), indent=1) + "\n"


def write_json(path: str | os.PathLike, obj) -> None:
    Path(path).write_text(canonical_json(obj))


def read_json(path: str | os.PathLike):
    return json.loads(Path(path).read_text())


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _check_image(image: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"expected (H, W, 3) image, got shape {image.shape}")
