"""Depth-map fingerspelling recognition toolkit.

Pipeline: closest-region hand segmentation -> crop/scale/pad preprocessing
-> CNN classification over 31 ASL alphabet/digit classes, with re-training
and fine-tuning regimes and subject-separated evaluation.
"""

from . import cli, data, depthio, estimators, nn, preprocess, segment, synth, train
from .depthio import LABELS, NUM_CLASSES, DepthFrame, parse_label

__all__ = [
    "LABELS",
    "NUM_CLASSES",
    "DepthFrame",
    "parse_label",
    "cli",
    "data",
    "depthio",
    "estimators",
    "nn",
    "preprocess",
    "segment",
    "synth",
    "train",
]

__version__ = "0.1.0"
