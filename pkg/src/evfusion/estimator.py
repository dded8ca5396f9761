"""scikit-learn style front end: ``fit`` on labelled frames, ``predict`` fused detections."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .evaluation import evaluate
from .fusion_net import FusionModel, dump_checkpoint, init_params, load_checkpoint
from .kitti_io import parse_results, write_results
from .matching import Detection2D, Detection3D
from .pipeline import DEFAULT_CLASSES, Frame, PipelineConfig, fuse_frame, train


def check_frames(frames, num_classes, require_labels=False):
    """Validate a sequence of :class:`Frame` objects and return it as a list."""
    if isinstance(frames, Frame):
        frames = [frames]
    frames = list(frames)
    for f in frames:
        if not isinstance(f, Frame):
            raise TypeError(f"expected Frame objects, got {type(f).__name__}")
        for d in f.dets3d:
            if not isinstance(d, Detection3D):
                raise TypeError(f"frame {f.frame_id}: 3D detections must be Detection3D")
            if d.num_classes != num_classes:
                raise ValueError(f"frame {f.frame_id}: 3D detection has {d.num_classes} class scores, "
                                 f"expected {num_classes}")
        for d in f.dets2d:
            if not isinstance(d, Detection2D):
                raise TypeError(f"frame {f.frame_id}: 2D detections must be Detection2D")
            if d.num_classes != num_classes:
                raise ValueError(f"frame {f.frame_id}: 2D detection has {d.num_classes} class scores, "
                                 f"expected {num_classes}")
        if require_labels and f.labels is None:
            raise ValueError(f"frame {f.frame_id} has no ground truth")
    return frames


class LateFusionDetector(BaseEstimator):
    """Evidential late fusion of 3D and 2D detections.

    ``fit`` trains the evidence heads and the score network on frames with
    ground truth; ``predict`` returns one list of
    :class:`~evfusion.pipeline.FusedDetection` per frame.
    """

    def __init__(self, conf_threshold=0.95, nms_iou=0.4, u_max=0.10, max_range=80.0, pair_iou_floor=0.0,
                 target_iou_car=0.5, target_iou_small=0.25, lambda_anneal_epochs=10, kappa=25.0, epochs=20,
                 seed=0, lr=0.003, classes=DEFAULT_CLASSES):
        self.conf_threshold = conf_threshold
        self.nms_iou = nms_iou
        self.u_max = u_max
        self.max_range = max_range
        self.pair_iou_floor = pair_iou_floor
        self.target_iou_car = target_iou_car
        self.target_iou_small = target_iou_small
        self.lambda_anneal_epochs = lambda_anneal_epochs
        self.kappa = kappa
        self.epochs = epochs
        self.seed = seed
        self.lr = lr
        self.classes = classes

    def config(self) -> PipelineConfig:
        return PipelineConfig(**self.get_params())

    @classmethod
    def from_config(cls, cfg: PipelineConfig):
        return cls(**{k: getattr(cfg, k) for k in cls._get_param_names()})

    def fit(self, X, y=None):
        """Train on frames ``X``; ``y`` optionally supplies per-frame labels."""
        cfg = self.config()
        frames = check_frames(X, cfg.num_classes)
        if y is not None:
            y = list(y)
            if len(y) != len(frames):
                raise ValueError("y must hold one label list per frame")
            frames = [Frame(f.frame_id, f.dets3d, f.dets2d, f.calib, labels) for f, labels in zip(frames, y)]
        result = train(frames, cfg, seed=self.seed)
        self.model_ = result.model
        self.loss_curve_ = list(result.losses)
        self.n_skipped_frames_ = result.skipped
        return self

    def init_model(self):
        """Use untrained seeded parameters (equivalent to ``fit`` with zero epochs)."""
        self.model_ = init_params(self.seed, len(self.classes), self.kappa)
        self.loss_curve_ = []
        self.n_skipped_frames_ = 0
        return self

    def set_model(self, model: FusionModel):
        if model.num_classes != len(self.classes):
            raise ValueError(f"model has {model.num_classes} classes, estimator expects {len(self.classes)}")
        self.model_ = model
        self.loss_curve_ = []
        self.n_skipped_frames_ = 0
        return self

    def predict_frame(self, dets3d, dets2d, calib):
        check_is_fitted(self, "model_")
        return fuse_frame(dets3d, dets2d, calib, self.model_, self.config())

    def predict(self, X):
        check_is_fitted(self, "model_")
        cfg = self.config()
        frames = check_frames(X, cfg.num_classes)
        return [fuse_frame(f.dets3d, f.dets2d, f.calib, self.model_, cfg) for f in frames]

    def score(self, X, y=None, metric="3d", bucket="Moderate"):
        """Mean AP (percent) over the configured classes."""
        frames = check_frames(X, len(self.classes))
        preds = self.predict(frames)
        gts = {f.frame_id: (f.labels if y is None else y[k]) or [] for k, f in enumerate(frames)}
        records = {f.frame_id: parse_results(write_results(p, classes=self.classes)[0])
                   for f, p in zip(frames, preds)}
        return float(np.mean([evaluate(records, gts, metric, c, bucket) for c in self.classes]))

    def to_checkpoint(self) -> str:
        check_is_fitted(self, "model_")
        return dump_checkpoint(self.model_)

    def load_checkpoint(self, text: str):
        return self.set_model(load_checkpoint(text))
