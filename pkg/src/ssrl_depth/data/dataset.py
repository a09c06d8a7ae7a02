"""On-disk toy benchmark: writer, manifest and loaders.

Layout under ``root``::

    manifest.json
    <split>/<domain>/rgb/<scene_id>.png      8-bit RGB
    <split>/source/depth/<scene_id>.png      16-bit gray, meters * 256, 0 = invalid
    <split>/target/depth/<scene_id>.png      val/test only, read by evaluation

Target depth of the training split is never written.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from PIL import Image

from .scene import StyleParams, render_scene, sample_scene

Domain = Literal["source", "target"]
Split = Literal["train", "val", "test"]
SPLITS: tuple[str, ...] = ("train", "val", "test")
DEPTH_SCALE = 256.0
MANIFEST_VERSION = 1


class DatasetLoadError(IOError):
    """A referenced dataset file is missing or cannot be decoded."""


@dataclass(frozen=True)
class DataConfig:
    seed: int = 1
    height: int = 32
    width: int = 96
    n_train_source: int = 192
    n_train_target: int = 192
    n_val: int = 8
    n_test: int = 16
    d_min: float = 1.0
    d_max: float = 80.0
    style: StyleParams = field(default_factory=StyleParams)

    def validate(self) -> None:
        counts = (self.n_train_source, self.n_train_target, self.n_val, self.n_test)
        if min(counts) < 1:
            raise ValueError(f"all sample counts must be >= 1, got {counts}")
        if self.height < 2 or self.width < 2:
            raise ValueError(f"image dims must be at least 2x2, got {self.height}x{self.width}")
        if self.width < self.height:
            raise ValueError(f"images are landscape (W >= H), got {self.height}x{self.width}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass(frozen=True)
class SampleRecord:
    scene_id: int
    domain: str
    rgb: str
    depth: Optional[str] = None
    eval_depth: Optional[str] = None


@dataclass
class DatasetManifest:
    root: Path
    seed: int
    d_min: float
    d_max: float
    height: int
    width: int
    splits: dict[str, list[SampleRecord]]

    def records(self, split: str, domain: Optional[str] = None) -> list[SampleRecord]:
        if split not in self.splits:
            raise KeyError(f"unknown split {split!r}")
        recs = self.splits[split]
        return [r for r in recs if domain is None or r.domain == domain]

    def to_json(self) -> str:
        payload = {
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "d_min": self.d_min,
            "d_max": self.d_max,
            "dims": {"height": self.height, "width": self.width},
            "splits": {k: [asdict(r) for r in v] for k, v in self.splits.items()},
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    @classmethod
    def load(cls, root: str | os.PathLike) -> "DatasetManifest":
        root = Path(root)
        path = root / "manifest.json"
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetLoadError(f"cannot read manifest {path}: {exc}") from exc
        splits = {k: [SampleRecord(**r) for r in v] for k, v in payload["splits"].items()}
        return cls(root=root, seed=payload["seed"], d_min=payload["d_min"], d_max=payload["d_max"],
                   height=payload["dims"]["height"], width=payload["dims"]["width"], splits=splits)


@dataclass
class DomainSample:
    image: np.ndarray
    depth: Optional[np.ndarray]
    domain: str
    scene_id: int

    def __post_init__(self) -> None:
        if self.domain == "source" and self.depth is None:
            raise ValueError("source samples carry a depth label")
        if self.domain == "target" and self.depth is not None:
            raise ValueError("target samples never carry a depth label")


def encode_depth(depth: np.ndarray) -> np.ndarray:
    """Meters to 16-bit raw values; non-positive or non-finite depth becomes 0 (invalid)."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth) & (depth > 0)
    raw = np.rint(np.where(valid, depth, 0.0) * DEPTH_SCALE)
    raw = np.clip(raw, 0, 65535)
    raw = np.where(valid, np.maximum(raw, 1), 0)
    return raw.astype(np.uint16)


def decode_depth(raw: np.ndarray) -> np.ndarray:
    """16-bit raw values to meters; invalid pixels decode to 0."""
    return np.asarray(raw, dtype=np.float64) / DEPTH_SCALE


def write_rgb(path: Path, rgb: np.ndarray) -> None:
    hwc = np.rint(np.clip(rgb, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.ascontiguousarray(hwc)).save(path, format="PNG")


def write_depth(path: Path, depth: np.ndarray) -> None:
    raw = encode_depth(np.asarray(depth).reshape(np.asarray(depth).shape[-2:]))
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raw).save(path, format="PNG")


def read_rgb(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    except (OSError, ValueError) as exc:
        raise DatasetLoadError(f"cannot load image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1) / 255.0)


def read_depth(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            raw = np.asarray(im, dtype=np.uint16)
    except (OSError, ValueError) as exc:
        raise DatasetLoadError(f"cannot load depth {path}: {exc}") from exc
    if raw.ndim != 2:
        raise DatasetLoadError(f"depth file {path} is not single-channel")
    return decode_depth(raw)[None]


def _write_sample(root: Path, split: str, domain: str, scene_id: int, cfg: DataConfig,
                  keep_depth: bool) -> SampleRecord:
    spec = sample_scene(cfg.seed, scene_id, cfg.height, cfg.width, cfg.d_min, cfg.d_max, cfg.style)
    rgb, depth = render_scene(spec, domain)  # type: ignore[arg-type]
    name = f"{scene_id:06d}.png"
    rgb_rel = f"{split}/{domain}/rgb/{name}"
    write_rgb(root / rgb_rel, rgb)
    depth_rel = None
    eval_rel = None
    if domain == "source" or keep_depth:
        rel = f"{split}/{domain}/depth/{name}"
        write_depth(root / rel, depth)
        if domain == "source":
            depth_rel = rel
        else:
            eval_rel = rel
    return SampleRecord(scene_id=scene_id, domain=domain, rgb=rgb_rel, depth=depth_rel, eval_depth=eval_rel)


def build_dataset(cfg: DataConfig, root: str | os.PathLike) -> DatasetManifest:
    """Render every split to ``root`` and write ``manifest.json``.

    Scene ids are allocated sequentially, so source and target scenes never
    share an id and no id appears in two splits.
    """
    cfg.validate()
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset root {root}: {exc}") from exc

    plan = [
        ("train", "source", cfg.n_train_source),
        ("train", "target", cfg.n_train_target),
        ("val", "source", cfg.n_val),
        ("val", "target", cfg.n_val),
        ("test", "source", cfg.n_test),
        ("test", "target", cfg.n_test),
    ]
    splits: dict[str, list[SampleRecord]] = {s: [] for s in SPLITS}
    next_id = 0
    for split, domain, count in plan:
        for _ in range(count):
            rec = _write_sample(root, split, domain, next_id, cfg, keep_depth=split != "train")
            splits[split].append(rec)
            next_id += 1

    manifest = DatasetManifest(root=root, seed=cfg.seed, d_min=cfg.d_min, d_max=cfg.d_max,
                               height=cfg.height, width=cfg.width, splits=splits)
    tmp = root / "manifest.json.tmp"
    tmp.write_text(manifest.to_json(), encoding="utf-8")
    os.replace(tmp, root / "manifest.json")
    return manifest


def load_sample(manifest: DatasetManifest, split: str, index: int) -> DomainSample:
    recs = manifest.records(split)
    if not 0 <= index < len(recs):
        raise IndexError(f"index {index} out of range for split {split!r} ({len(recs)} records)")
    rec = recs[index]
    image = read_rgb(manifest.root / rec.rgb)
    depth = read_depth(manifest.root / rec.depth) if rec.depth else None
    return DomainSample(image=image, depth=depth, domain=rec.domain, scene_id=rec.scene_id)


def load_eval_depth(manifest: DatasetManifest, record: SampleRecord) -> np.ndarray:
    """Ground truth used by evaluation only (target val/test scenes included)."""
    rel = record.depth or record.eval_depth
    if rel is None:
        raise DatasetLoadError(f"scene {record.scene_id} has no ground-truth depth")
    return read_depth(manifest.root / rel)


def load_domain_arrays(manifest: DatasetManifest, split: str, domain: str,
                       with_depth: bool = True) -> tuple[np.ndarray, Optional[np.ndarray]]:
    """Stack one split/domain into ``(N, 3, H, W)`` images and ``(N, 1, H, W)`` depths."""
    recs = manifest.records(split, domain)
    if not recs:
        raise DatasetLoadError(f"no {domain} records in split {split!r}")
    images = np.stack([read_rgb(manifest.root / r.rgb) for r in recs])
    depths = None
    if with_depth:
        depths = np.stack([load_eval_depth(manifest, r) for r in recs]).astype(np.float32)
    return images, depths
