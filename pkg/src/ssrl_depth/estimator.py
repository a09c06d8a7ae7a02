"""Estimator front end: ``fit`` the whole pipeline on arrays, ``predict`` depth maps."""
from __future__ import annotations

import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import EvalProtocol, evaluate_predictions, predict_batches
from .pipeline.config import AblationSpec, Config, StagesConfig
from .pipeline.runner import run_variant
from .pipeline.stages import TrainData
from .validation import check_depths, check_images


class SSRLDepthEstimator(RegressorMixin, BaseEstimator):
    """Unsupervised domain-adaptive monocular depth.

    ``fit(X, y, target_X)`` takes labeled source images ``X`` with depth ``y``
    and unlabeled target images; ``predict`` returns ``(N, H, W)`` depth in
    meters. ``score`` is the negative Abs Rel under ``EvalProtocol``.
    ``base_config`` supplies network sizes and the remaining settings.
    """

    def __init__(self, variant: str = "full", tap: str = "last", mode: str = "pixelwise", alpha: int = 3,
                 lambda_crdoco: float = 1.0, epochs: tuple[int, int, int] = (5, 20, 10),
                 batch_sizes: tuple[int, int, int] = (4, 16, 4), lr: float = 0.002,
                 translator_lr: float = 0.001, d_min: float = 1.0, d_max: float = 80.0,
                 dtype: str = "float32", seed: int = 0, work_dir: Optional[str] = None,
                 base_config: Optional[Config] = None):
        self.variant = variant
        self.tap = tap
        self.mode = mode
        self.alpha = alpha
        self.lambda_crdoco = lambda_crdoco
        self.epochs = epochs
        self.batch_sizes = batch_sizes
        self.lr = lr
        self.translator_lr = translator_lr
        self.d_min = d_min
        self.d_max = d_max
        self.dtype = dtype
        self.seed = seed
        self.work_dir = work_dir
        self.base_config = base_config

    def make_config(self) -> Config:
        base = Config() if self.base_config is None else self.base_config
        stages = StagesConfig(self.seed, *self.epochs, *self.batch_sizes, self.lr, self.translator_lr)
        cfg = replace(base, stages=stages, nets=replace(base.nets, dtype=self.dtype),
                      data=replace(base.data, d_min=self.d_min, d_max=self.d_max))
        spec = AblationSpec(self.variant, tap=self.tap, mode=self.mode, alpha=self.alpha,
                            lambda_crdoco=self.lambda_crdoco)
        return cfg.with_ablation(spec)

    def fit(self, X, y, target_X=None):
        X = check_images(X, "X", multiple_of=16)
        y = check_depths(y, X)
        if target_X is None:
            raise ValueError("target_X (unlabeled target-domain images) is required")
        target_X = check_images(target_X, "target_X", multiple_of=16)
        if target_X.shape[-2:] != X.shape[-2:]:
            raise ValueError("source and target images must share one resolution")
        cfg = self.make_config()
        dt = cfg.nets.torch_dtype
        data = TrainData(torch.as_tensor(X, dtype=dt), torch.as_tensor(y, dtype=dt), torch.as_tensor(target_X, dtype=dt))
        if self.work_dir is None:
            with tempfile.TemporaryDirectory(prefix="ssrl-depth-") as tmp:
                nets = run_variant(cfg, data, Path(tmp))
        else:
            nets = run_variant(cfg, data, Path(self.work_dir))
        nets.f.eval()
        self.networks_ = nets
        self.task_net_ = nets.f
        self.config_ = cfg
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "task_net_")
        X = check_images(X, "X", multiple_of=16)
        return predict_batches(self.task_net_, X)[:, 0]

    def score(self, X, y, sample_weight=None) -> float:
        X = check_images(X, "X", multiple_of=16)
        y = check_depths(y, X)
        result = evaluate_predictions(self.predict(X)[:, None], y, EvalProtocol(d_min=self.d_min, d_max=self.d_max))
        return -result.aggregate.abs_rel
