"""Depth metrics, the cropped/capped evaluation protocol and report files."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as nnf
from matplotlib import colormaps
from PIL import Image

# Fractional crop rectangle (top, bottom, left, right) of the Garg/Eigen lineage.
GARG_CROP = (0.40810811, 0.99189189, 0.03594771, 0.96405229)
METRIC_NAMES = ("abs_rel", "sq_rel", "rmse", "rmse_log", "delta1", "delta2", "delta3")
COLORMAP = "magma"  # near (d_min) -> light yellow end, far (d_max) -> black end


@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, k) for k in METRIC_NAMES)

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


@dataclass(frozen=True)
class EvalProtocol:
    crop: tuple[float, float, float, float] = GARG_CROP
    d_min: float = 1.0
    d_max: float = 80.0

    def __post_init__(self) -> None:
        top, bottom, left, right = self.crop
        if not (0 <= top < bottom <= 1 and 0 <= left < right <= 1):
            raise ValueError(f"crop {self.crop} is not a rectangle inside the image")
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")

    @classmethod
    def full_image(cls, d_min: float = 1.0, d_max: float = 80.0) -> "EvalProtocol":
        return cls((0.0, 1.0, 0.0, 1.0), d_min, d_max)


def garg_crop_mask(h: int, w: int, proto: EvalProtocol = EvalProtocol()) -> np.ndarray:
    if h <= 0 or w <= 0:
        raise ValueError(f"image size must be positive, got {h}x{w}")
    top, bottom, left, right = proto.crop
    mask = np.zeros((h, w), dtype=bool)
    mask[math.floor(top * h):math.floor(bottom * h), math.floor(left * w):math.floor(right * w)] = True
    return mask


def valid_mask(gt: np.ndarray, proto: EvalProtocol) -> np.ndarray:
    crop = garg_crop_mask(gt.shape[-2], gt.shape[-1], proto)
    return crop & np.isfinite(gt) & (gt >= proto.d_min) & (gt <= proto.d_max)


def compute_metrics(pred: np.ndarray, gt: np.ndarray, proto: EvalProtocol = EvalProtocol()) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pred = pred.reshape(pred.shape[-2:]) if pred.ndim == 3 else pred
    gt = gt.reshape(gt.shape[-2:]) if gt.ndim == 3 else gt
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = valid_mask(gt, proto)
    if not mask.any():
        raise ValueError("no valid ground-truth pixels under the evaluation protocol")
    p = np.clip(np.nan_to_num(pred[mask], nan=proto.d_max), proto.d_min, proto.d_max)
    g = gt[mask]
    ratio = np.maximum(p / g, g / p)
    err = p - g
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(err) / g)),
        sq_rel=float(np.mean(err ** 2 / g)),
        rmse=float(np.sqrt(np.mean(err ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
    )


def aggregate(per_sample: Sequence[DepthMetrics]) -> DepthMetrics:
    """Mean of per-image metrics."""
    if not per_sample:
        raise ValueError("nothing to aggregate")
    arr = np.array([m.as_tuple() for m in per_sample], dtype=np.float64)
    return DepthMetrics(*(float(v) for v in arr.mean(axis=0)))


@dataclass
class EvalResult:
    aggregate: DepthMetrics
    per_sample: list[dict] = field(default_factory=list)
    predictions: Optional[np.ndarray] = None
    images: Optional[np.ndarray] = None
    ground_truth: Optional[np.ndarray] = None

    def to_json(self) -> str:
        return json.dumps({"aggregate": self.aggregate.to_dict(), "per_sample": self.per_sample},
                          indent=2, sort_keys=True) + "\n"


@torch.no_grad()
def predict_batches(f: torch.nn.Module, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    was_training = f.training
    f.eval()
    dtype = next(f.parameters()).dtype
    out = []
    for i in range(0, len(images), batch_size):
        x = torch.as_tensor(images[i:i + batch_size], dtype=dtype)
        out.append(f(x).cpu().numpy())
    f.train(was_training)
    return np.concatenate(out).astype(np.float64)


def upsample_to(pred: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of ``(N, 1, h, w)`` predictions to ``shape``."""
    if pred.shape[-2:] == tuple(shape):
        return pred
    t = torch.as_tensor(pred)
    return nnf.interpolate(t, size=shape, mode="bilinear", align_corners=False).numpy()


def evaluate_predictions(preds: np.ndarray, gts: np.ndarray, proto: EvalProtocol,
                         scene_ids: Optional[Sequence[int]] = None) -> EvalResult:
    preds = upsample_to(preds, gts.shape[-2:])
    per = [compute_metrics(p, g, proto) for p, g in zip(preds, gts)]
    ids = list(scene_ids) if scene_ids is not None else list(range(len(per)))
    rows = [{"scene_id": int(i), **m.to_dict()} for i, m in zip(ids, per)]
    return EvalResult(aggregate(per), rows, predictions=preds, ground_truth=gts)


def evaluate_model(f: torch.nn.Module, images: np.ndarray, gts: np.ndarray, proto: EvalProtocol,
                   scene_ids: Optional[Sequence[int]] = None) -> EvalResult:
    result = evaluate_predictions(predict_batches(f, images), gts, proto, scene_ids)
    result.images = images
    return result


def evaluate_run(ckpt: str | os.PathLike, manifest, split: str = "test", proto: EvalProtocol = EvalProtocol(),
                 domain: str = "target") -> EvalResult:
    """Evaluate a task-network checkpoint on one split of a dataset."""
    from .data.dataset import load_eval_depth, read_rgb
    from .pipeline.nets import load_task_network

    f = load_task_network(ckpt)
    recs = manifest.records(split, domain)
    if not recs:
        raise ValueError(f"split {split!r} has no {domain} records")
    images = np.stack([read_rgb(manifest.root / r.rgb) for r in recs])
    gts = np.stack([load_eval_depth(manifest, r) for r in recs])
    return evaluate_model(f, images, gts, proto, [r.scene_id for r in recs])


def colorize(depth: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    """``(H, W)`` depth to ``(H, W, 3)`` uint8; ``d_min`` maps to the bright end."""
    t = np.clip((np.asarray(depth, dtype=np.float64) - d_min) / (d_max - d_min), 0.0, 1.0)
    rgba = colormaps[COLORMAP](1.0 - t)
    return np.rint(rgba[..., :3] * 255).astype(np.uint8)


def triptych(image: np.ndarray, pred: np.ndarray, gt: np.ndarray, d_min: float, d_max: float) -> np.ndarray:
    rgb = np.rint(np.clip(image, 0, 1).transpose(1, 2, 0) * 255).astype(np.uint8)
    gt_vis = colorize(gt.reshape(gt.shape[-2:]), d_min, d_max)
    gt_vis[gt.reshape(gt.shape[-2:]) <= 0] = 0
    return np.concatenate([rgb, colorize(pred.reshape(pred.shape[-2:]), d_min, d_max), gt_vis], axis=1)


def emit_report(result: EvalResult, out_dir: str | os.PathLike, proto: EvalProtocol = EvalProtocol(),
                visualize: bool = True) -> list[Path]:
    """Write ``metrics.json``, ``metrics.csv`` and optional triptych images."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / "metrics.json", out / "metrics.csv"]
    written[0].write_text(result.to_json(), encoding="utf-8")
    with open(written[1], "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["scene_id", *METRIC_NAMES])
        writer.writeheader()
        writer.writerows(result.per_sample)
        writer.writerow({"scene_id": "mean", **result.aggregate.to_dict()})
    if visualize and result.images is not None and result.predictions is not None:
        viz = out / "viz"
        viz.mkdir(exist_ok=True)
        for row, img, pred, gt in zip(result.per_sample, result.images, result.predictions, result.ground_truth):
            path = viz / f"{row['scene_id']:06d}.png"
            Image.fromarray(triptych(img, pred, gt, proto.d_min, proto.d_max)).save(path)
            written.append(path)
    return written


def load_metrics_json(path: str | os.PathLike) -> tuple[DepthMetrics, list[dict]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return DepthMetrics(**payload["aggregate"]), payload["per_sample"]


def load_protocol(path: Optional[str | os.PathLike]) -> EvalProtocol:
    """Read ``[eval]`` keys ``crop`` (top, bottom, left, right), ``d_min``, ``d_max``."""
    if path is None:
        return EvalProtocol()
    import configparser

    parser = configparser.ConfigParser()
    parser.read_string(Path(path).read_text(encoding="utf-8"))
    sec = parser["eval"] if parser.has_section("eval") else {}
    crop = tuple(float(x) for x in sec.get("crop", ",".join(map(str, GARG_CROP))).split(","))
    return EvalProtocol(crop, float(sec.get("d_min", 1.0)), float(sec.get("d_max", 80.0)))  # type: ignore[arg-type]
