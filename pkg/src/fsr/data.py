"""Batch sources bridging manifests to network input tensors.

Frames are segmented and depth-normalized once; the 256x256 canvas is
materialized per batch (crop/scale/pad plus mean subtraction) to keep the
resident footprint at the source resolution rather than the canvas size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .depthio import DatasetManifest, label_index, read_pgm16
from .preprocess import (
    MeanImage,
    PreprocessParams,
    compute_mean_image,
    crop_scale_pad,
    normalize_depth,
)
from .segment import BoundingBox, SegmentationParams, segment_hand


@dataclass
class ArrayBatchSource:
    """In-memory batch source over ready-made tensors, for tests and toys."""

    x: np.ndarray  # (N, C, H, W)
    labels: np.ndarray  # (N,) int

    def __len__(self):
        return self.x.shape[0]

    def batch(self, indices):
        return self.x[indices], self.labels[indices]


@dataclass
class PipelineBatchSource:
    """Lazy canvas materialization over normalized source-resolution images."""

    images: list[np.ndarray]      # normalized (h, w) float32 per record
    bboxes: list[BoundingBox]
    labels: np.ndarray
    subjects: np.ndarray
    channels: int = 1
    params: PreprocessParams = PreprocessParams()
    mean: MeanImage | None = None

    def __len__(self):
        return len(self.images)

    def canvases(self, indices) -> np.ndarray:
        out = np.stack([
            crop_scale_pad(self.images[i], self.bboxes[i], self.params)
            for i in indices
        ])
        if self.mean is not None:
            out = out - self.mean.values[None]
        return out

    def batch(self, indices):
        canvases = self.canvases(indices)
        x = np.repeat(canvases[:, None], self.channels, axis=1).astype(np.float32)
        return x, self.labels[indices]

    def compute_mean(self, provenance: str = "") -> MeanImage:
        """Mean canvas over every record (call on the training split only)."""
        return compute_mean_image(
            (self.canvases([i])[0] for i in range(len(self))), provenance
        )


def load_pipeline_data(
    manifest: DatasetManifest,
    root,
    seg_params: SegmentationParams = SegmentationParams(),
    pre_params: PreprocessParams = PreprocessParams(),
    channels: int = 1,
) -> PipelineBatchSource:
    """Read, segment, and normalize every manifest record."""
    root = Path(root)
    images, bboxes, labels, subjects = [], [], [], []
    for rec in manifest.records:
        frame = read_pgm16((root / rec.path).read_bytes())
        mask, bbox = segment_hand(frame, seg_params)
        images.append(normalize_depth(frame, mask, pre_params.delta_max))
        bboxes.append(bbox)
        labels.append(label_index(rec.label))
        subjects.append(rec.subject)
    return PipelineBatchSource(
        images, bboxes, np.asarray(labels), np.asarray(subjects),
        channels=channels, params=pre_params,
    )


def subset(source: PipelineBatchSource, indices) -> PipelineBatchSource:
    indices = list(indices)
    return PipelineBatchSource(
        [source.images[i] for i in indices],
        [source.bboxes[i] for i in indices],
        source.labels[indices],
        source.subjects[indices],
        channels=source.channels,
        params=source.params,
        mean=source.mean,
    )
