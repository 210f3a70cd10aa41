"""Deterministic synthetic depth scenes with ground-truth hand masks.

Each class is a disc with a class-specific number of radial prongs at
class-specific angles; subjects systematically deform prong lengths and
widths, so subject-separated splits are genuinely harder than random ones.
A depth-void ring surrounds the silhouette (standing in for the wrist band)
and the background plane sits well behind the hand.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .depthio import (
    LABELS,
    DatasetManifest,
    DepthFrame,
    ManifestRecord,
    dump_manifest,
    write_pgm16,
)
from .segment import HandMask


@dataclass(frozen=True)
class SynthParams:
    width: int = 64
    height: int = 64
    n_classes: int = 31
    samples_per_class: int = 10
    n_subjects: int = 5
    hand_near: float = 500.0       # mm
    hand_far: float = 800.0        # mm
    background_depth: float = 2000.0
    noise_sigma: float = 8.0       # background depth noise, mm
    void_ring_width: int = 3       # pixels
    seed: int = 0

    def __post_init__(self):
        if self.hand_far >= self.background_depth:
            raise ValueError("hand depth range must be closer than the background")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if not 1 <= self.n_classes <= len(LABELS):
            raise ValueError(f"n_classes must be in [1, {len(LABELS)}]")


def _subject_factors(subject_id: int) -> tuple[float, float, float]:
    """Systematic per-subject deformation: prong length/width scales and a
    global rotation offset (radians)."""
    rng = np.random.default_rng([991, subject_id])
    length = 0.55 + 0.9 * rng.random()
    width = 0.6 + 0.8 * rng.random()
    rotation = (rng.random() - 0.5) * 0.14
    return length, width, rotation


def silhouette(class_id: int, subject_id: int, params: SynthParams,
               center: tuple[float, float] | None = None) -> np.ndarray:
    """Render the class/subject silhouette as a boolean mask."""
    h, w = params.height, params.width
    base = min(h, w)
    radius = 0.13 * base
    n_prongs = 2 + class_id % 6
    length_scale, width_scale, rot_offset = _subject_factors(subject_id)
    rotation = (class_id // 6) * (2 * math.pi / n_prongs) / 6.0 + rot_offset
    prong_len = radius * (0.55 + 0.75 * length_scale)
    prong_half_angle = width_scale * math.pi / (4.5 * n_prongs)

    if center is None:
        center = (h / 2.0, w / 2.0)
    cy, cx = center
    yy, xx = np.mgrid[0:h, 0:w]
    dy = yy - cy
    dx = xx - cx
    dist = np.hypot(dy, dx)
    mask = dist <= radius
    theta = np.arctan2(dy, dx)
    for i in range(n_prongs):
        angle = rotation + 2 * math.pi * i / n_prongs
        # per-prong length modulation keeps subjects distinguishable
        plen = prong_len * (0.85 + 0.3 * ((i * 2654435761 + subject_id) % 7) / 6.0)
        delta = np.abs((theta - angle + math.pi) % (2 * math.pi) - math.pi)
        mask |= (delta <= prong_half_angle) & (dist <= radius + plen)
    return mask


def max_extent(params: SynthParams) -> float:
    """Upper bound on silhouette radius, used to keep translations in frame."""
    base = min(params.height, params.width)
    radius = 0.13 * base
    return radius + radius * (0.55 + 0.75 * 1.45) * 1.15


def generate_scene(class_id: int, subject_id: int, sample_seed: int,
                   params: SynthParams = SynthParams()):
    """Render one scene; returns (DepthFrame, ground-truth HandMask, label).

    Deterministic in (class_id, subject_id, sample_seed, params.seed).
    """
    if class_id >= params.n_classes:
        raise ValueError(f"class_id {class_id} >= n_classes {params.n_classes}")
    rng = np.random.default_rng([params.seed, class_id, subject_id, sample_seed])
    h, w = params.height, params.width

    margin = max_extent(params) + params.void_ring_width + 2
    cy = h / 2.0 + rng.uniform(-1, 1) * max(0.0, h / 2.0 - margin)
    cx = w / 2.0 + rng.uniform(-1, 1) * max(0.0, w / 2.0 - margin)
    mask = silhouette(class_id, subject_id, params, (cy, cx))

    depth_span = min(25.0, (params.hand_far - params.hand_near) * 0.2)
    z0 = rng.uniform(params.hand_near, params.hand_far - depth_span - 1)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = np.hypot(yy - cy, xx - cx)
    extent = max(1.0, float(dist[mask].max())) if mask.any() else 1.0
    hand_depth = z0 + depth_span * dist / extent  # <= ~1 mm per pixel slope

    ring = ndimage.binary_dilation(mask, iterations=params.void_ring_width) & ~mask

    noise = rng.normal(0.0, params.noise_sigma, size=(h, w))
    bg_floor = params.hand_far + 400.0
    background = np.clip(params.background_depth + noise, bg_floor, 65535.0)

    depth = background
    depth = np.where(mask, hand_depth, depth)
    depth = np.where(ring, 0.0, depth)
    frame = DepthFrame(np.clip(np.rint(depth), 0, 65535).astype(np.uint16))
    return frame, HandMask(mask), LABELS[class_id]


def check_class_separability(params: SynthParams, min_fraction: float = 0.05) -> None:
    """Assert any two class silhouettes differ in >= min_fraction of hand pixels."""
    sils = [silhouette(c, 0, params) for c in range(params.n_classes)]
    for a in range(params.n_classes):
        for b in range(a + 1, params.n_classes):
            diff = np.logical_xor(sils[a], sils[b]).sum()
            base = max(sils[a].sum(), sils[b].sum())
            if diff < min_fraction * base:
                raise AssertionError(
                    f"classes {LABELS[a]} and {LABELS[b]} differ in only "
                    f"{diff}/{base} pixels"
                )


def generate_dataset(params: SynthParams, out_dir) -> DatasetManifest:
    """Write PGM files in <root>/subject<k>/<label>/<index>.pgm plus manifest.csv."""
    check_class_separability(params)
    root = Path(out_dir)
    records = []
    for subject in range(params.n_subjects):
        for class_id in range(params.n_classes):
            label = LABELS[class_id]
            class_dir = root / f"subject{subject}" / label
            class_dir.mkdir(parents=True, exist_ok=True)
            for index in range(params.samples_per_class):
                frame, _, _ = generate_scene(class_id, subject, index, params)
                rel = f"subject{subject}/{label}/{index}.pgm"
                (root / rel).write_bytes(write_pgm16(frame))
                records.append(ManifestRecord(rel, subject, label))
    manifest = DatasetManifest(records)
    (root / "manifest.csv").write_text(dump_manifest(manifest), encoding="utf-8")
    return manifest
