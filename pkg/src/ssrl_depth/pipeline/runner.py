"""Full three-stage runs and the ablation harness."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, fields, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..data.dataset import DatasetManifest, load_domain_arrays
from ..evaluation import METRIC_NAMES, EvalProtocol, EvalResult, evaluate_model
from .config import AblationSpec, Config, apply_determinism
from .nets import Networks, build_networks
from .stages import TrainData, run_depth_stage, run_ssrl_stage, run_style_transfer_stage

log = logging.getLogger(__name__)


def _style_fingerprint(cfg: Config) -> str:
    payload = {"data": repr(cfg.data), "nets": asdict(cfg.nets), "weights": asdict(cfg.weights),
               "stages": asdict(cfg.stages), "optimizer": asdict(cfg.optimizer)}
    return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:16]


def ensure_style_stage(cfg: Config, data: TrainData, style_dir: str | os.PathLike) -> Path:
    """Run the style-transfer stage unless ``style_dir`` already holds a completed, matching run."""
    style_dir = Path(style_dir)
    stamp = style_dir / "fingerprint.txt"
    fp = _style_fingerprint(cfg)
    if (style_dir / "done.json").exists() and stamp.exists() and stamp.read_text().strip() == fp:
        log.info("reusing style-transfer stage in %s", style_dir)
        return style_dir
    nets = build_networks(cfg)
    run_style_transfer_stage(cfg, data, nets, style_dir)
    stamp.write_text(fp + "\n")
    return style_dir


def run_variant(cfg: Config, data: TrainData, run_dir: str | os.PathLike,
                style_dir: Optional[str | os.PathLike] = None) -> Networks:
    """Train one configuration end to end and return the final networks.

    ``cfg.ablation.variant`` picks the stage sequence:

    * ``full``, ``blocks_c``, ``blocks_d``: style transfer, SSRL, depth
    * ``no_ssrl``: style transfer, depth
    * ``combined_a`` / ``combined_b``: style transfer, then a depth stage with the
      cosine loss on decoder features, without / with the Siamese head
    * ``task_only_source``: F trained from scratch on source labels only
    """
    apply_determinism()
    run_dir = Path(run_dir)
    variant = cfg.ablation.variant
    data = data.to(cfg.nets.torch_dtype)
    nets = build_networks(cfg)
    if variant == "task_only_source":
        run_depth_stage(cfg, data, nets, run_dir / "depth", None, mode="task_only_source")
        return nets
    style = ensure_style_stage(cfg, data, style_dir or run_dir / "style_transfer")
    if variant in ("full", "blocks_c", "blocks_d"):
        run_ssrl_stage(cfg, data, nets, run_dir / "ssrl", style)
        run_depth_stage(cfg, data, nets, run_dir / "depth", run_dir / "ssrl")
    elif variant == "no_ssrl":
        run_depth_stage(cfg, data, nets, run_dir / "depth", style)
    elif variant in ("combined_a", "combined_b"):
        run_depth_stage(cfg, data, nets, run_dir / "depth", style, mode=variant)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return nets


def load_test_split(manifest: DatasetManifest, split: str = "test") -> tuple[np.ndarray, np.ndarray, list[int]]:
    images, depths = load_domain_arrays(manifest, split, "target", with_depth=True)
    return images, depths, [r.scene_id for r in manifest.records(split, "target")]


def run_ablation(spec: AblationSpec, base_cfg: Config, manifest: DatasetManifest, run_dir: str | os.PathLike,
                 data: Optional[TrainData] = None, split: str = "test",
                 shared_style_root: Optional[str | os.PathLike] = None) -> list[dict]:
    """One metrics row per seed in ``spec.seeds`` for the configured variant."""
    rows = []
    data = data or TrainData.from_manifest(manifest, base_cfg.nets.torch_dtype)
    images, depths, ids = load_test_split(manifest, split)
    proto = EvalProtocol(d_min=base_cfg.data.d_min, d_max=base_cfg.data.d_max)
    for seed in spec.seeds:
        cfg = base_cfg.with_ablation(spec).with_seed(seed)
        start = time.perf_counter()
        out = Path(run_dir) / spec.label().replace("=", "-").replace(",", "_") / f"seed{seed}"
        style_dir = Path(shared_style_root) / f"seed{seed}-{_style_fingerprint(cfg)}" if shared_style_root else None
        nets = run_variant(cfg, data, out, style_dir)
        result = evaluate_model(nets.f, images, depths, proto, ids)
        rows.append({"variant": spec.variant, "tap": cfg.ssrl.tap, "mode": cfg.ssrl.mode, "alpha": cfg.ssrl.alpha,
                     "blocks": cfg.ssrl.blocks, "lambda_crdoco": cfg.weights.crdoco, "seed": seed,
                     **result.aggregate.to_dict(), "seconds": round(time.perf_counter() - start, 2)})
        log.info("ablation %s seed %d: abs_rel %.4f", spec.label(), seed, result.aggregate.abs_rel)
    return rows


def ablation_grid(seeds: Sequence[int] = (0,)) -> list[AblationSpec]:
    """All ablation configurations: taps, cosine modes, alphas, variants, lambda_crdoco."""
    seeds = tuple(seeds)
    specs = [AblationSpec("full", seeds=seeds), AblationSpec("no_ssrl", seeds=seeds)]
    specs += [AblationSpec("full", tap=t, seeds=seeds) for t in ("second_last", "third_last")]
    specs += [AblationSpec("full", mode="global", seeds=seeds)]
    specs += [AblationSpec("full", alpha=a, seeds=seeds) for a in (1, 2, 4)]
    specs += [AblationSpec(v, seeds=seeds) for v in ("combined_a", "combined_b", "blocks_c", "blocks_d",
                                                    "task_only_source")]
    specs += [AblationSpec("full", lambda_crdoco=lam, seeds=seeds) for lam in (0.0, 10.0)]
    return specs


ROW_FIELDS = ["variant", "tap", "mode", "alpha", "blocks", "lambda_crdoco", "seed", *METRIC_NAMES, "seconds"]


def write_rows(rows: Sequence[dict], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        writer.writeheader()
        writer.writerows(rows)
