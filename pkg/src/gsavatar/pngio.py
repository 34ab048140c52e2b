"""PNG image I/O (RGBA floats in [0,1]) via Pillow."""

from __future__ import annotations

import numpy as np
from PIL import Image


def save_rgba(path, rgb: np.ndarray, alpha: np.ndarray | None = None):
    rgb8 = (np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if alpha is None:
        Image.fromarray(rgb8, "RGB").save(path)
        return
    a8 = (np.clip(alpha, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(np.dstack([rgb8, a8]), "RGBA").save(path)


def load_rgba(path) -> tuple[np.ndarray, np.ndarray]:
    img = Image.open(path)
    arr = np.asarray(img.convert("RGBA"), dtype=np.float32) / 255.0
    return arr[:, :, :3].copy(), arr[:, :, 3].copy()
