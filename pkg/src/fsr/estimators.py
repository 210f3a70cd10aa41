"""scikit-learn-style wrappers so the pipeline composes with the ecosystem.

``HandSegmenter`` is a transformer over raw depth frames; the
``FingerspellingClassifier`` runs the full segment/preprocess/train chain
with the usual fit/predict/get_params surface.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from .data import PipelineBatchSource
from .depthio import LABELS, DepthFrame, label_index
from .nn import init_weights, network_forward, tiny
from .preprocess import PreprocessParams, normalize_depth
from .segment import SegmentationParams, segment_hand
from .train import TrainConfig, train


def _as_frames(X) -> list[DepthFrame]:
    frames = []
    for item in X:
        frames.append(item if isinstance(item, DepthFrame) else DepthFrame(np.asarray(item)))
    return frames


class HandSegmenter(BaseEstimator, TransformerMixin):
    """Stateless transformer: depth frames -> masked, depth-normalized images."""

    def __init__(self, tau_step=15.0, delta_max=250.0, connectivity=8,
                 min_component_size=100):
        self.tau_step = tau_step
        self.delta_max = delta_max
        self.connectivity = connectivity
        self.min_component_size = min_component_size

    def _params(self) -> SegmentationParams:
        return SegmentationParams(self.tau_step, self.delta_max,
                                  self.connectivity, self.min_component_size)

    def fit(self, X, y=None):
        self._params()  # validates hyperparameters
        return self

    def transform(self, X):
        """Returns a list of (normalized image, HandMask, BoundingBox) triples."""
        params = self._params()
        out = []
        for frame in _as_frames(X):
            mask, bbox = segment_hand(frame, params)
            out.append((normalize_depth(frame, mask, self.delta_max), mask, bbox))
        return out


class FingerspellingClassifier(BaseEstimator, ClassifierMixin):
    """Full-pipeline classifier over raw depth frames."""

    def __init__(self, spec=None, base_lr=0.01, momentum=0.9, weight_decay=5e-4,
                 batch_size=32, total_iters=500, init_sigma=0.05, seed=0,
                 tau_step=15.0, delta_max=250.0, connectivity=8,
                 min_component_size=100):
        self.spec = spec
        self.base_lr = base_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.total_iters = total_iters
        self.init_sigma = init_sigma
        self.seed = seed
        self.tau_step = tau_step
        self.delta_max = delta_max
        self.connectivity = connectivity
        self.min_component_size = min_component_size

    def _build_source(self, X, y=None) -> PipelineBatchSource:
        spec = self.spec if self.spec is not None else tiny()
        seg = SegmentationParams(self.tau_step, self.delta_max,
                                 self.connectivity, self.min_component_size)
        images, bboxes = [], []
        for frame in _as_frames(X):
            mask, bbox = segment_hand(frame, seg)
            images.append(normalize_depth(frame, mask, self.delta_max))
            bboxes.append(bbox)
        labels = (np.asarray([label_index(str(v)) for v in y])
                  if y is not None else np.zeros(len(images), dtype=int))
        return PipelineBatchSource(
            images, bboxes, labels, np.zeros(len(images), dtype=int),
            channels=spec.input_shape[0], params=PreprocessParams(delta_max=self.delta_max),
        )

    def fit(self, X, y):
        spec = self.spec if self.spec is not None else tiny()
        source = self._build_source(X, y)
        self.mean_image_ = source.compute_mean("fit")
        source.mean = self.mean_image_
        config = TrainConfig(
            base_lr=self.base_lr, momentum=self.momentum,
            weight_decay=self.weight_decay, batch_size=self.batch_size,
            total_iters=self.total_iters, init_sigma=self.init_sigma,
            seed=self.seed,
        )
        net = init_weights(spec, sigma=self.init_sigma, seed=self.seed)
        self.net_ = train(net, source, None, config).net
        self.classes_ = np.asarray(LABELS)
        return self

    def predict_proba(self, X):
        source = self._build_source(X)
        source.mean = self.mean_image_
        x, _ = source.batch(np.arange(len(source)))
        logits, _ = network_forward(self.net_, x, mode="eval")
        exp = np.exp(logits - logits.max(axis=1, keepdims=True))
        return exp / exp.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
