"""Run configuration and its flat INI-style file format.

Sections and keys (all optional, defaults shown by ``default_config_text``)::

    [data]      generator settings, see DataConfig
    [nets]      network widths and floating point precision
    [weights]   loss weights
    [stages]    per-stage epochs / batch sizes, base learning rates, seed
    [ssrl]      alpha, mode, tap, blocks, block_size
    [ablation]  variant, lambda_crdoco, seeds
"""
from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional

import torch

from ..data.dataset import DataConfig
from ..data.scene import StyleParams
from ..objectives import LossWeights
from ..tasknet import TAPS

STAGES = ("style_transfer", "ssrl", "depth")
VARIANTS = ("full", "no_ssrl", "combined_a", "combined_b", "blocks_c", "blocks_d", "task_only_source")
NETWORKS = ("g_st", "g_ts", "d_s", "d_t", "f_enc", "f_dec", "s_pro", "s_pre")

# Full-scale schedule: epochs (20, 100, 30), batch (16, 128, 16).
FULL_SCALE_EPOCHS = {"style_transfer": 20, "ssrl": 100, "depth": 30}
FULL_SCALE_BATCH = {"style_transfer": 16, "ssrl": 128, "depth": 16}


@dataclass(frozen=True)
class NetConfig:
    gen_channels: int = 16
    gen_res_blocks: int = 2
    disc_channels: int = 16
    enc_channels: tuple[int, ...] = (16, 24, 32, 48)
    dec_channels: tuple[int, ...] = (32, 24, 16, 12)
    dtype: str = "float32"

    @property
    def torch_dtype(self) -> torch.dtype:
        try:
            return {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        except KeyError:
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}") from None


@dataclass(frozen=True)
class StagesConfig:
    seed: int = 0
    style_epochs: int = 5
    ssrl_epochs: int = 20
    depth_epochs: int = 10
    style_batch: int = 4
    ssrl_batch: int = 16
    depth_batch: int = 4
    # Full scale: lr 0.0004, translator_lr 0.0002; raised for the short toy schedule.
    lr: float = 0.002
    translator_lr: float = 0.001
    ssrl_lr: Optional[float] = None  # None: same as ``lr``


@dataclass(frozen=True)
class SSRLConfig:
    alpha: int = 3
    mode: str = "pixelwise"
    tap: str = "last"
    blocks: str = "off"
    block_size: tuple[int, ...] = (32, 32)

    def validate(self) -> None:
        if self.mode not in ("pixelwise", "global"):
            raise ValueError(f"ssrl.mode must be pixelwise or global, got {self.mode!r}")
        if self.tap not in TAPS:
            raise ValueError(f"ssrl.tap must be one of {TAPS}, got {self.tap!r}")
        if self.blocks not in ("off", "s_input", "pre_input"):
            raise ValueError(f"ssrl.blocks must be off, s_input or pre_input, got {self.blocks!r}")
        if len(self.block_size) != 2:
            raise ValueError("ssrl.block_size takes two integers")


@dataclass(frozen=True)
class AblationSpec:
    variant: str = "full"
    tap: Optional[str] = None
    mode: Optional[str] = None
    alpha: Optional[int] = None
    lambda_crdoco: Optional[float] = None
    seeds: tuple[int, ...] = (0,)

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    def label(self) -> str:
        parts = [self.variant]
        for name in ("tap", "mode", "alpha", "lambda_crdoco"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value}")
        return ",".join(parts)


@dataclass(frozen=True)
class StageConfig:
    name: str
    epochs: int
    batch_size: int
    base_lr: float
    translator_lr: float
    train: frozenset[str]
    frozen: frozenset[str]


@dataclass(frozen=True)
class OptimizerConfig:
    family: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    differential_encoder_lr: bool = True
    decay: str = "linear_last_half"


@dataclass(frozen=True)
class Config:
    data: DataConfig = field(default_factory=DataConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    stages: StagesConfig = field(default_factory=StagesConfig)
    ssrl: SSRLConfig = field(default_factory=SSRLConfig)
    ablation: AblationSpec = field(default_factory=AblationSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def stage(self, name: str) -> StageConfig:
        s = self.stages
        if name == "style_transfer":
            return StageConfig(name, s.style_epochs, s.style_batch, s.lr, s.translator_lr,
                               frozenset({"g_st", "g_ts", "d_s", "d_t", "f_enc", "f_dec"}), frozenset())
        if name == "ssrl":
            ssrl_lr = s.lr if s.ssrl_lr is None else s.ssrl_lr
            return StageConfig(name, s.ssrl_epochs, s.ssrl_batch, ssrl_lr, s.translator_lr,
                               frozenset({"f_dec", "s_pro", "s_pre"}), frozenset({"g_st", "g_ts", "f_enc"}))
        if name == "depth":
            return StageConfig(name, s.depth_epochs, s.depth_batch, s.lr, s.translator_lr,
                               frozenset({"f_enc", "f_dec"}), frozenset({"g_st", "g_ts", "s_pro", "s_pre"}))
        raise ValueError(f"unknown stage {name!r}; expected one of {STAGES}")

    def with_ablation(self, spec: AblationSpec) -> "Config":
        """Fold an ablation spec into the SSRL settings and loss weights."""
        ssrl = self.ssrl
        updates: dict[str, Any] = {}
        for name in ("tap", "mode", "alpha"):
            value = getattr(spec, name)
            if value is not None:
                updates[name] = value
        if spec.variant == "blocks_c":
            updates["blocks"] = "s_input"
        elif spec.variant == "blocks_d":
            updates["blocks"] = "pre_input"
        ssrl = replace(ssrl, **updates)
        weights = self.weights
        if spec.lambda_crdoco is not None:
            weights = replace(weights, crdoco=spec.lambda_crdoco)
        cfg = replace(self, ssrl=ssrl, weights=weights, ablation=spec)
        cfg.ssrl.validate()
        return cfg

    def with_seed(self, seed: int) -> "Config":
        return replace(self, stages=replace(self.stages, seed=seed))


def _coerce(raw: str, default: Any, name: str) -> Any:
    raw = raw.strip()
    if default is None or raw.lower() in ("none", ""):
        if raw.lower() in ("none", ""):
            return None
        try:
            return int(raw)
        except ValueError:
            pass
        try:
            return float(raw)
        except ValueError:
            return raw
    if isinstance(default, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [x for x in raw.replace("x", ",").split(",") if x.strip()]
        kind = type(default[0]) if default else int
        return tuple(kind(x.strip()) for x in items)
    return raw


def _update(obj: Any, section: configparser.SectionProxy, prefix: str) -> Any:
    known = {f.name: f for f in fields(obj)}
    updates = {}
    for key, raw in section.items():
        if key not in known:
            raise ValueError(f"unknown config key {prefix}.{key}")
        default = getattr(obj, key)
        if dataclasses.is_dataclass(default):
            raise ValueError(f"{prefix}.{key} is a group, not a value")
        updates[key] = _coerce(raw, default, f"{prefix}.{key}")
    return replace(obj, **updates)


_STYLE_KEYS = {f.name for f in fields(StyleParams)}


def parse_config(text: str, base: Optional[Config] = None) -> Config:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    cfg = base or Config()
    for name in parser.sections():
        section = parser[name]
        if name == "data":
            style_items = {k: v for k, v in section.items() if k in _STYLE_KEYS}
            other = configparser.ConfigParser()
            other.read_dict({"data": {k: v for k, v in section.items() if k not in _STYLE_KEYS},
                             "style": style_items})
            style = _update(cfg.data.style, other["style"], "data")
            data = _update(cfg.data, other["data"], "data")
            cfg = replace(cfg, data=replace(data, style=style))
        elif name in ("nets", "weights", "stages", "ssrl", "ablation"):
            cfg = replace(cfg, **{name: _update(getattr(cfg, name), section, name)})
        else:
            raise ValueError(f"unknown config section [{name}]")
    cfg.ssrl.validate()
    cfg.data.validate()
    cfg.nets.torch_dtype
    return cfg


def load_config(path: Optional[str | os.PathLike], base: Optional[Config] = None) -> Config:
    if path is None:
        return base or Config()
    return parse_config(Path(path).read_text(encoding="utf-8"), base)


SECTION_NOTES = {
    "stages": ["# full scale: lr = 0.0004, translator_lr = 0.0002 (toy defaults are 5x higher)"],
}


def config_to_text(cfg: Config) -> str:
    def fmt(value: Any) -> str:
        if isinstance(value, tuple):
            return ", ".join(str(v) for v in value)
        return "none" if value is None else str(value)

    lines = []
    data = {f.name: getattr(cfg.data, f.name) for f in fields(cfg.data) if f.name != "style"}
    data.update({f.name: getattr(cfg.data.style, f.name) for f in fields(cfg.data.style)})
    sections = [("data", data)] + [
        (name, {f.name: getattr(getattr(cfg, name), f.name) for f in fields(getattr(cfg, name))})
        for name in ("nets", "weights", "stages", "ssrl", "ablation")
    ]
    for name, values in sections:
        lines.append(f"[{name}]")
        lines += SECTION_NOTES.get(name, [])
        lines += [f"{k} = {fmt(v)}" for k, v in values.items()]
        lines.append("")
    return "\n".join(lines)


def default_config_text() -> str:
    return config_to_text(Config())


def deterministic_mode() -> bool:
    """Deterministic kernels unless ``SSRL_DETERMINISTIC`` is set to 0/false/off."""
    return os.environ.get("SSRL_DETERMINISTIC", "1").strip().lower() not in ("0", "false", "off", "no")


def apply_determinism() -> None:
    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
    else:
        torch.use_deterministic_algorithms(False)
