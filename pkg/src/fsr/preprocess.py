"""Masking, depth normalization, and the crop/scale/pad canvas pipeline.

The network input is a 256x256 single-channel float canvas: the hand
bounding box is scaled to 227x227 and placed at offset (14, 14), leaving a
zero border of 14 pixels before and 15 after on each axis. Depths are
normalized relative to the closest hand pixel so the pipeline is invariant
to a constant depth offset.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthio import DepthFrame
from .errors import (
    BadMagicError,
    BoxOutOfBoundsError,
    DimensionMismatchError,
    EmptyMaskError,
    EmptySetError,
    SizeMismatchError,
)
from .segment import BoundingBox, HandMask

TARGET_SIZE = 227
CANVAS_SIZE = 256
PAD_BEFORE = 14
PAD_AFTER = 15

MEAN_MAGIC = b"FSRMEAN1"


@dataclass(frozen=True)
class PreprocessParams:
    target_size: int = TARGET_SIZE
    canvas_size: int = CANVAS_SIZE
    pad_before: int = PAD_BEFORE
    pad_after: int = PAD_AFTER
    interpolation: str = "nearest"  # or "bilinear"
    delta_max: float = 250.0        # mm mapped to 1.0 by normalize_depth

    def __post_init__(self):
        if self.pad_before + self.target_size + self.pad_after != self.canvas_size:
            raise ValueError("pad_before + target_size + pad_after must equal canvas_size")
        if self.interpolation not in ("nearest", "bilinear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass
class MeanImage:
    values: np.ndarray  # (canvas, canvas) float32
    provenance: str = ""


def apply_mask(frame: DepthFrame, mask: HandMask) -> DepthFrame:
    """Zero every pixel outside the mask."""
    if mask.member.shape != frame.pixels.shape:
        raise DimensionMismatchError(
            f"mask {mask.member.shape} vs frame {frame.pixels.shape}"
        )
    return DepthFrame(np.where(mask.member, frame.pixels, 0).astype(np.uint16))


def normalize_depth(frame: DepthFrame, mask: HandMask, delta_max: float = 250.0) -> np.ndarray:
    """Map member depths to [0, 1] relative to the closest member pixel."""
    if mask.member.shape != frame.pixels.shape:
        raise DimensionMismatchError(
            f"mask {mask.member.shape} vs frame {frame.pixels.shape}"
        )
    if not mask.member.any():
        raise EmptyMaskError("cannot normalize an empty mask")
    depth = frame.pixels.astype(np.float32)
    d_min = depth[mask.member].min()
    out = np.clip((depth - d_min) / delta_max, 0.0, 1.0)
    out[~mask.member] = 0.0
    return out.astype(np.float32)


def nearest_index(i: np.ndarray | int, src: int, dst: int):
    """Source index sampled for destination index i under nearest scaling."""
    return np.asarray(i) * src // dst


def _scale(crop: np.ndarray, size: int, interpolation: str) -> np.ndarray:
    sh, sw = crop.shape
    if interpolation == "nearest":
        rows = nearest_index(np.arange(size), sh, size)
        cols = nearest_index(np.arange(size), sw, size)
        return crop[np.ix_(rows, cols)]
    # bilinear, half-pixel centers
    ys = np.clip((np.arange(size) + 0.5) * sh / size - 0.5, 0, sh - 1)
    xs = np.clip((np.arange(size) + 0.5) * sw / size - 0.5, 0, sw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, sh - 1)
    x1 = np.minimum(x0 + 1, sw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = crop[np.ix_(y0, x0)] * (1 - wx) + crop[np.ix_(y0, x1)] * wx
    bot = crop[np.ix_(y1, x0)] * (1 - wx) + crop[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def crop_scale_pad(
    image: np.ndarray, bbox: BoundingBox, params: PreprocessParams = PreprocessParams()
) -> np.ndarray:
    """Scale the bbox crop to target_size and center it on a zero canvas."""
    h, w = image.shape
    if bbox.row_min < 0 or bbox.col_min < 0 or bbox.row_max >= h or bbox.col_max >= w:
        raise BoxOutOfBoundsError(f"{bbox} outside {h}x{w} image")
    crop = image[bbox.row_min : bbox.row_max + 1, bbox.col_min : bbox.col_max + 1]
    scaled = _scale(np.asarray(crop, dtype=np.float32), params.target_size, params.interpolation)
    canvas = np.zeros((params.canvas_size, params.canvas_size), dtype=np.float32)
    o = params.pad_before
    canvas[o : o + params.target_size, o : o + params.target_size] = scaled
    return canvas


def preprocess_frame(
    frame: DepthFrame,
    mask: HandMask,
    bbox: BoundingBox,
    params: PreprocessParams = PreprocessParams(),
) -> np.ndarray:
    """normalize_depth then crop_scale_pad; the standard per-frame chain."""
    norm = normalize_depth(frame, mask, params.delta_max)
    return crop_scale_pad(norm, bbox, params)


def compute_mean_image(images, provenance: str = "") -> MeanImage:
    """Per-pixel mean over processed images, accumulated in float64."""
    total = None
    count = 0
    for img in images:
        arr = np.asarray(img, dtype=np.float64)
        total = arr.copy() if total is None else total + arr
        count += 1
    if count == 0:
        raise EmptySetError("cannot average zero images")
    return MeanImage((total / count).astype(np.float32), provenance)


def subtract_mean(image: np.ndarray, mean: MeanImage) -> np.ndarray:
    if image.shape != mean.values.shape:
        raise DimensionMismatchError(f"image {image.shape} vs mean {mean.values.shape}")
    return (image - mean.values).astype(np.float32)


def write_mean_image(mean: MeanImage) -> bytes:
    """Magic "FSRMEAN1" + canvas*canvas little-endian float32 values."""
    return MEAN_MAGIC + mean.values.astype("<f4").tobytes()


def read_mean_image(data: bytes, provenance: str = "") -> MeanImage:
    if data[:8] != MEAN_MAGIC:
        raise BadMagicError("not a mean-image file")
    payload = data[8:]
    expected = CANVAS_SIZE * CANVAS_SIZE * 4
    if len(payload) != expected:
        raise SizeMismatchError(f"expected {expected} payload bytes, got {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(CANVAS_SIZE, CANVAS_SIZE)
    return MeanImage(values.astype(np.float32), provenance)
