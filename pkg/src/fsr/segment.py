"""Hand segmentation: grow the connected component around the closest pixel.

The hand is assumed to be the closest object to the camera. Segmentation
seeds at the minimum nonzero depth and grows a connected region whose
adjacent pixels differ by at most ``tau_step`` mm and which stays within
``delta_max`` mm of the seed depth. Depth voids (value 0) are never members,
so a void ring around the wrist bounds the component.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthio import DepthFrame
from .errors import ComponentTooSmallError, EmptyMaskError, NoValidDepthError

REFERENCE_PIXELS = 320 * 240  # min_component_size is stated at this resolution


@dataclass(frozen=True)
class SegmentationParams:
    tau_step: float = 15.0          # mm, max step between adjacent members
    delta_max: float = 250.0        # mm, max depth above the seed
    connectivity: int = 8
    min_component_size: int = 100   # pixels at 320x240, scaled with resolution

    def __post_init__(self):
        if self.tau_step <= 0:
            raise ValueError("tau_step must be > 0")
        if self.delta_max < self.tau_step:
            raise ValueError("delta_max must be >= tau_step")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.min_component_size < 1:
            raise ValueError("min_component_size must be >= 1")

    def scaled_min_size(self, width: int, height: int) -> int:
        return max(1, round(self.min_component_size * width * height / REFERENCE_PIXELS))


@dataclass
class HandMask:
    member: np.ndarray  # (H, W) bool

    @property
    def height(self) -> int:
        return self.member.shape[0]

    @property
    def width(self) -> int:
        return self.member.shape[1]

    @property
    def size(self) -> int:
        return int(self.member.sum())


@dataclass(frozen=True)
class BoundingBox:
    row_min: int
    col_min: int
    row_max: int  # inclusive
    col_max: int  # inclusive

    @property
    def height(self) -> int:
        return self.row_max - self.row_min + 1

    @property
    def width(self) -> int:
        return self.col_max - self.col_min + 1


_OFFSETS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_OFFSETS_8 = _OFFSETS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


def find_seed(frame: DepthFrame) -> tuple[int, int]:
    """Coordinate of the minimum nonzero depth; row-major tie-break."""
    depth = frame.pixels
    masked = np.where(depth == 0, np.uint32(65536), depth.astype(np.uint32))
    flat = int(np.argmin(masked))
    if masked.flat[flat] == 65536:
        raise NoValidDepthError("no valid depth in frame")
    return flat // frame.width, flat % frame.width


def grow_region(frame: DepthFrame, seed: tuple[int, int], params: SegmentationParams) -> HandMask:
    """Frontier-propagation flood fill from the seed.

    A pixel joins the region if it has nonzero depth, lies within delta_max
    of the seed depth, and is adjacent to a member with depth difference at
    most tau_step.
    """
    depth = frame.pixels.astype(np.int64)
    sr, sc = seed
    seed_depth = depth[sr, sc]
    if seed_depth == 0:
        raise ValueError("seed pixel has zero depth")
    allowed = (depth > 0) & (depth <= seed_depth + params.delta_max)

    member = np.zeros(depth.shape, dtype=bool)
    member[sr, sc] = True
    frontier = member.copy()
    offsets = _OFFSETS_4 if params.connectivity == 4 else _OFFSETS_8
    h, w = depth.shape

    while frontier.any():
        new = np.zeros_like(member)
        for dy, dx in offsets:
            # destination window receiving frontier pixels shifted by (dy, dx)
            dst = (slice(max(dy, 0), h + min(dy, 0)), slice(max(dx, 0), w + min(dx, 0)))
            src = (slice(max(-dy, 0), h + min(-dy, 0)), slice(max(-dx, 0), w + min(-dx, 0)))
            ok = (
                frontier[src]
                & allowed[dst]
                & ~member[dst]
                & (np.abs(depth[dst] - depth[src]) <= params.tau_step)
            )
            new[dst] |= ok
        member |= new
        frontier = new
    return HandMask(member)


def bounding_box(mask: HandMask) -> BoundingBox:
    """Tight axis-aligned box over the member pixels."""
    rows, cols = np.nonzero(mask.member)
    if rows.size == 0:
        raise EmptyMaskError("mask has no member pixels")
    return BoundingBox(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max()))


def segment_hand(
    frame: DepthFrame, params: SegmentationParams = SegmentationParams()
) -> tuple[HandMask, BoundingBox]:
    """find_seed -> grow_region -> bounding_box, with a size sanity check."""
    seed = find_seed(frame)
    mask = grow_region(frame, seed, params)
    min_size = params.scaled_min_size(frame.width, frame.height)
    if mask.size < min_size:
        raise ComponentTooSmallError(
            f"component of {mask.size} pixels below minimum {min_size}"
        )
    return mask, bounding_box(mask)
