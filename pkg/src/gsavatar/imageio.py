"""Linear-RGB image type and 8-bit sRGB PNG I/O.

All rendering, losses and gradients work in linear RGB; the sRGB transfer
function is applied only at the PNG boundary.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage

from .errors import DimensionMismatch


@dataclass
class Image:
    data: np.ndarray  # (H, W, 3) f32, linear RGB in [0, 1]

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise DimensionMismatch(f"image data must be (H, W, 3), got {self.data.shape}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


def linear_to_srgb(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(x, 1.0 / 2.4) - 0.055)


def srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, np.power((x + 0.055) / 1.055, 2.4))


def to_png_bytes(image: Image) -> bytes:
    import io

    u8 = np.round(linear_to_srgb(image.data.astype(np.float64)) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    PILImage.fromarray(u8, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_png(image: Image, path) -> None:
    with open(path, "wb") as f:
        f.write(to_png_bytes(image))


def load_png(path) -> Image:
    with PILImage.open(path) as img:
        rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return Image(srgb_to_linear(rgb).astype(np.float32))


def load_png_rgba(path) -> np.ndarray:
    """RGBA f32 with linear RGB and straight alpha, for texture patches."""
    with PILImage.open(path) as img:
        rgba = np.asarray(img.convert("RGBA"), dtype=np.float64) / 255.0
    out = np.empty_like(rgba, dtype=np.float64)
    out[..., :3] = srgb_to_linear(rgba[..., :3])
    out[..., 3] = rgba[..., 3]
    return out.astype(np.float32)
