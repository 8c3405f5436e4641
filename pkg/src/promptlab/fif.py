"""Attention-guided patch erasure.

The frozen teacher's last-layer class-token attention ranks the image
patches; the top ``q`` percent are zeroed before the student sees the image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import DualEncoder
from .errors import InvalidInputError, InvalidParameterError


@dataclass
class Mask:
    grid: np.ndarray  # (..., g, g) of {0, 1}
    threshold: float

    @property
    def zero_fraction(self) -> float:
        return float(1.0 - self.grid.mean())


def extract_attention(teacher: DualEncoder, images) -> np.ndarray:
    """Head-averaged class-token -> patch attention of the last block.

    Returns an array of shape (B, g, g), or (g, g) for a single image.
    """
    if not teacher.frozen:
        raise InvalidParameterError("attention masks must come from a frozen teacher")
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    attn = cls_attention(teacher, images[None] if single else images)
    return attn[0] if single else attn


def cls_attention(model: DualEncoder, images) -> np.ndarray:
    """Last-block class-token attention over patches, (B, g, g); no frozen check."""
    stack = model.encode_image(images)
    last = stack.attention[-1]  # (B, heads, T, T)
    start = 1 + stack.n_prompts
    g = model.config.grid
    return last[:, :, 0, start:].mean(axis=1).reshape(-1, g, g)


def build_mask(attn, q: float) -> Mask:
    """Zero every patch whose attention lies strictly above the (100 - q)th percentile.

    Ties at the cutoff survive, so a uniform map is never masked. Batched
    input (B, g, g) gets one cutoff per image.
    """
    if not 0 <= q <= 100:
        raise InvalidParameterError(f"mask threshold must be in [0, 100], got {q}")
    attn = np.asarray(attn, dtype=np.float64)
    if np.any(attn < 0) or not np.all(np.isfinite(attn)):
        raise InvalidInputError("attention maps must be finite and non-negative")
    if q == 0:
        return Mask(np.ones_like(attn), q)
    flat = attn.reshape(-1, attn.shape[-2] * attn.shape[-1]) if attn.ndim > 2 else attn.reshape(1, -1)
    cutoff = np.percentile(flat, 100.0 - q, axis=1, keepdims=True)
    grid = (flat <= cutoff).astype(np.float64).reshape(attn.shape)
    return Mask(grid, q)


def apply_mask(mask: Mask | np.ndarray, images) -> np.ndarray:
    """Element-wise product of the images with the patch mask upsampled to pixels."""
    grid = mask.grid if isinstance(mask, Mask) else np.asarray(mask, dtype=np.float64)
    images = np.asarray(images, dtype=np.float64)
    size = images.shape[-1]
    g = grid.shape[-1]
    if images.shape[-2] != size or grid.shape[-2] != g or size % g:
        raise InvalidInputError(f"mask grid {grid.shape[-2:]} does not tile image {images.shape[-2:]}")
    if grid.ndim == 3 and (images.ndim != 4 or images.shape[0] != grid.shape[0]):
        raise InvalidInputError("batched mask needs one image per mask")
    patch = size // g
    pixels = np.repeat(np.repeat(grid, patch, axis=-1), patch, axis=-2)
    if pixels.ndim == 3:
        pixels = pixels[:, None]  # broadcast over channels
    return images * pixels


def filter_images(teacher: DualEncoder, images, q: float) -> np.ndarray:
    """Mask a batch of clean images using the teacher's own attention."""
    if q == 0:
        return np.asarray(images, dtype=np.float64)
    return apply_mask(build_mask(extract_attention(teacher, images), q), images)
