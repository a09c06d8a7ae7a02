"""The three training stages: style transfer, SSRL and depth estimation.

Every stage writes into its own directory::

    log.csv        one row per optimizer step (step, stage, epoch, lr, terms..., total)
    state.pt       resumable run state, rewritten at the end of every epoch
    *.ckpt         network checkpoints, rewritten at the end of every epoch
    done.json      written once the stage completes; later stages require it
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from ..data.dataset import DatasetManifest, load_domain_arrays
from ..evaluation import EvalProtocol, evaluate_model
from ..objectives import (
    LossReport,
    compose,
    depth_estimation_objective,
    depth_terms,
    forward_streams,
    masked_l1,
    depth_mask,
    style_transfer_objective,
)
from ..translation import adv_loss_discriminator
from .checkpoint import CheckpointError, atomic_torch_save, atomic_write_bytes
from .config import Config, StageConfig, config_to_text
from .nets import Networks, load_networks, new_siamese, save_networks
from .schedule import lr_schedule

log = logging.getLogger(__name__)

STAGE_INDEX = {"style_transfer": 0, "ssrl": 1, "depth": 2}
ALL_GROUPS = frozenset({"g_st", "g_ts", "d_s", "d_t", "f_enc", "f_dec", "s_pro", "s_pre"})


class StageOrderError(RuntimeError):
    """A stage was started without the artifacts of the stage it builds on."""


class TrainingDivergedError(RuntimeError):
    """A loss became NaN or infinite; a diagnostic dump was written."""


class FreezeViolationError(RuntimeError):
    """Parameters of a frozen group changed during a stage."""


@dataclass
class TrainData:
    source_images: torch.Tensor
    source_depths: torch.Tensor
    target_images: torch.Tensor
    val_images: Optional[np.ndarray] = None
    val_depths: Optional[np.ndarray] = None
    val_ids: Optional[list[int]] = None

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, dtype: torch.dtype = torch.float32,
                      val_split: Optional[str] = "val") -> "TrainData":
        xs, ds = load_domain_arrays(manifest, "train", "source", with_depth=True)
        xt, _ = load_domain_arrays(manifest, "train", "target", with_depth=False)
        data = cls(torch.as_tensor(xs, dtype=dtype), torch.as_tensor(ds, dtype=dtype), torch.as_tensor(xt, dtype=dtype))
        if val_split is not None:
            vx, vd = load_domain_arrays(manifest, val_split, "target", with_depth=True)
            data.val_images, data.val_depths = vx, vd
            data.val_ids = [r.scene_id for r in manifest.records(val_split, "target")]
        return data

    def to(self, dtype: torch.dtype) -> "TrainData":
        return TrainData(self.source_images.to(dtype), self.source_depths.to(dtype), self.target_images.to(dtype),
                         self.val_images, self.val_depths, self.val_ids)


@dataclass
class RunState:
    stage: str
    epoch: int
    step: int
    seed: int
    out_dir: str
    checkpoints: dict[str, str] = field(default_factory=dict)
    log_path: str = ""
    state_path: str = ""
    lr_history: list[float] = field(default_factory=list)
    checksums_before: dict[str, str] = field(default_factory=dict)
    checksums_after: dict[str, str] = field(default_factory=dict)
    metrics: Optional[dict] = None
    total_epochs: int = 0

    @property
    def complete(self) -> bool:
        return self.epoch >= self.total_epochs


def epoch_batches(seed: int, stage: str, epoch: int, domain: int, n: int, batch: int, steps: int) -> np.ndarray:
    """Index batches for one epoch; a pure function of its arguments."""
    rng = np.random.default_rng([seed, STAGE_INDEX[stage], epoch, domain])
    need = steps * batch
    chunks = []
    while sum(len(c) for c in chunks) < need:
        chunks.append(rng.permutation(n))
    return np.concatenate(chunks)[:need].reshape(steps, batch)


def steps_per_epoch(data: TrainData, batch: int) -> int:
    return max(1, math.ceil(max(len(data.source_images), len(data.target_images)) / batch))


def _set_epoch_lr(optimizers, batch: int, epoch: int, total: int) -> None:
    for opt in optimizers:
        for group in opt.param_groups:
            group["lr"] = lr_schedule(group["base_lr"], batch, epoch, total)


def _adam(groups: list[dict], cfg: Config) -> torch.optim.Adam:
    for g in groups:
        g.setdefault("base_lr", g["lr"])
    return torch.optim.Adam(groups, betas=cfg.optimizer.betas)


def _require_done(init_dir: str | os.PathLike, expected: tuple[str, ...]) -> dict:
    marker = Path(init_dir) / "done.json"
    if not marker.exists():
        raise StageOrderError(f"no completed stage in {init_dir} (missing {marker.name})")
    info = json.loads(marker.read_text(encoding="utf-8"))
    if info["stage"] not in expected:
        raise StageOrderError(f"{init_dir} holds stage {info['stage']!r}, expected one of {expected}")
    return info


def _cell(value) -> str:
    if isinstance(value, (str, int)):
        return str(value)
    return repr(float(value))


class _Logger:
    """CSV step log; rows are also kept in memory so run states can carry them."""

    def __init__(self, path: Path, columns: list[str], rows: Optional[list[list[str]]] = None):
        self.path = path
        self.columns = columns
        self.rows = [list(r) for r in rows or []]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            writer.writerows(self.rows)

    def write(self, row: dict) -> None:
        cells = [_cell(row[c]) for c in self.columns]
        with open(self.path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow(cells)
        self.rows.append(cells)


def _dump_divergence(out_dir: Path, nets: Networks, batch: dict, report: dict) -> Path:
    path = out_dir / "nan_dump.pt"
    atomic_torch_save({"batch": batch, "report": report, "checksums": nets.checksums()}, path)
    return path


def _train(stage: StageConfig, cfg: Config, data: TrainData, nets: Networks, out_dir: Path,
           optimizers: list[torch.optim.Optimizer], step_fn: Callable, columns: list[str],
           resume: Optional[str], stop_after: Optional[int], extra_columns: tuple[str, ...] = (),
           extra_lr: Optional[float] = None, checkpoint_names=None) -> RunState:
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.stages.seed
    frozen = ALL_GROUPS - stage.train
    before = nets.checksums()
    state = RunState(stage.name, 0, 0, seed, str(out_dir), log_path=str(out_dir / "log.csv"),
                     state_path=str(out_dir / "state.pt"), total_epochs=stage.epochs)
    kept_rows = None
    if resume is not None:
        saved = torch.load(resume, weights_only=False)
        if saved["stage"] != stage.name:
            raise CheckpointError(f"{resume} belongs to stage {saved['stage']!r}, not {stage.name!r}")
        for name, mod in nets.items():
            mod.load_state_dict(saved["nets"][name])
        for opt, sd in zip(optimizers, saved["optimizers"]):
            opt.load_state_dict(sd)
        torch.set_rng_state(saved["torch_rng"])
        state.epoch, state.step = saved["epoch"], saved["step"]
        state.lr_history = list(saved["lr_history"])
        before = saved["checksums_before"]
        kept_rows = saved["log_rows"]
    nets.freeze(frozen)
    logger = _Logger(out_dir / "log.csv", ["step", "stage", "epoch", "lr", *columns, "total", *extra_columns],
                     kept_rows)

    steps = steps_per_epoch(data, stage.batch_size)
    n_s, n_t = len(data.source_images), len(data.target_images)
    while state.epoch < stage.epochs:
        if stop_after is not None and state.epoch >= stop_after:
            break
        epoch = state.epoch
        _set_epoch_lr(optimizers, stage.batch_size, epoch, stage.epochs)
        lr = lr_schedule(stage.base_lr, stage.batch_size, epoch, stage.epochs)
        state.lr_history.append(lr)
        idx_s = epoch_batches(seed, stage.name, epoch, 0, n_s, stage.batch_size, steps)
        idx_t = epoch_batches(seed, stage.name, epoch, 1, n_t, stage.batch_size, steps)
        for k in range(steps):
            xs = data.source_images[idx_s[k]]
            ds = data.source_depths[idx_s[k]]
            xt = data.target_images[idx_t[k]]
            values = step_fn(xs, ds, xt)
            if not all(math.isfinite(v) for v in values.values()):
                dump = _dump_divergence(out_dir, nets, {"source": idx_s[k], "target": idx_t[k], "images_s": xs,
                                                        "images_t": xt}, values)
                raise TrainingDivergedError(f"{stage.name}: non-finite loss at step {state.step}; dump in {dump}")
            row = {"step": state.step, "stage": stage.name, "epoch": epoch, "lr": lr, **values}
            if extra_lr is not None:
                row["lr_translator"] = lr_schedule(extra_lr, stage.batch_size, epoch, stage.epochs)
            logger.write(row)
            state.step += 1
        state.epoch += 1
        state.checkpoints = save_networks(nets, out_dir, checkpoint_names)
        atomic_torch_save({
            "stage": stage.name, "epoch": state.epoch, "step": state.step, "seed": seed,
            "nets": {name: mod.state_dict() for name, mod in nets.items()},
            "optimizers": [opt.state_dict() for opt in optimizers],
            "torch_rng": torch.get_rng_state(), "lr_history": state.lr_history,
            "checksums_before": before, "log_rows": logger.rows, "config": config_to_text(cfg),
        }, out_dir / "state.pt")
        log.info("%s epoch %d/%d done (lr %.3g)", stage.name, state.epoch, stage.epochs, lr)

    state.checksums_before = before
    state.checksums_after = nets.checksums()
    changed = [g for g in frozen if before[g] != state.checksums_after[g]]
    if changed:
        raise FreezeViolationError(f"{stage.name}: frozen groups changed: {sorted(changed)}")
    if state.complete:
        info = {"stage": stage.name, "epochs": stage.epochs, "steps": state.step,
                "checksums": state.checksums_after, "lr_history": state.lr_history}
        atomic_write_bytes(out_dir / "done.json", (json.dumps(info, indent=2, sort_keys=True) + "\n").encode())
    return state


def run_style_transfer_stage(cfg: Config, data: TrainData, nets: Networks, out_dir: str | os.PathLike,
                             resume: Optional[str] = None, stop_after: Optional[int] = None) -> RunState:
    """Jointly train translators and F against the weighted objective, alternating D steps."""
    stage = cfg.stage("style_transfer")
    nets.freeze(ALL_GROUPS - stage.train)
    opt_g = _adam([
        {"params": [*nets.g_st.parameters(), *nets.g_ts.parameters()], "lr": stage.translator_lr},
        {"params": list(nets.f.parameters()), "lr": stage.base_lr},
    ], cfg)
    opt_d = _adam([{"params": [*nets.d_s.parameters(), *nets.d_t.parameters()], "lr": stage.translator_lr}], cfg)
    w = cfg.weights

    def step(xs, ds, xt):
        opt_g.zero_grad(set_to_none=True)
        report, st = style_transfer_objective(nets, xs, ds, xt, w)
        report.total.backward()
        opt_g.step()
        opt_d.zero_grad(set_to_none=True)
        d_loss = 0.5 * (adv_loss_discriminator(nets.d_t, xt, st.i_st) + adv_loss_discriminator(nets.d_s, xs, st.i_ts))
        d_loss.backward()
        opt_d.step()
        return {**report.values(), "total": float(report.total.detach()), "disc_adv": float(d_loss.detach())}

    columns = ["adv", "cycle", "identity", "task", "smooth", "crdoco"]
    return _train(stage, cfg, data, nets, Path(out_dir), [opt_g, opt_d], step, columns, resume, stop_after,
                  extra_columns=["disc_adv", "lr_translator"], extra_lr=stage.translator_lr,
                  checkpoint_names=("g_st", "g_ts", "d_s", "d_t", "f"))


def run_ssrl_stage(cfg: Config, data: TrainData, nets: Networks, out_dir: str | os.PathLike,
                   init_dir: str | os.PathLike, resume: Optional[str] = None,
                   stop_after: Optional[int] = None) -> RunState:
    """Train F_dec and the Siamese head on translated view pairs; translators and F_enc stay fixed."""
    _require_done(init_dir, ("style_transfer",))
    load_networks(nets, init_dir, ("g_st", "g_ts", "d_s", "d_t", "f"))
    nets.siamese = new_siamese(cfg, nets.f, cfg.stages.seed + 1)
    stage = cfg.stage("ssrl")
    nets.freeze(ALL_GROUPS - stage.train)
    opt = _adam([{"params": [*nets.f.decoder.parameters(), *nets.f.head.parameters(),
                             *nets.siamese.parameters()], "lr": stage.base_lr}], cfg)
    s = cfg.ssrl
    kwargs = {"mode": s.mode, "blocks": s.blocks, "block_size": tuple(s.block_size)}

    def step(xs, ds, xt):
        opt.zero_grad(set_to_none=True)
        st = forward_streams(nets.f, nets.g_st, nets.g_ts, xs, xt, translate_grad=False)
        loss = nets.siamese.pair_loss(st.taps["S"][s.tap], st.taps["S->T"][s.tap],
                                      st.taps["T"][s.tap], st.taps["T->S"][s.tap], **kwargs)
        loss.backward()
        opt.step()
        value = float(loss.detach())
        return {"cossim": value, "total": value}

    return _train(stage, cfg, data, nets, Path(out_dir), [opt], step, ["cossim"], resume, stop_after,
                  checkpoint_names=("g_st", "g_ts", "d_s", "d_t", "f", "siamese"))


DEPTH_MODES = ("standard", "combined_a", "combined_b", "task_only_source")


def run_depth_stage(cfg: Config, data: TrainData, nets: Networks, out_dir: str | os.PathLike,
                    init_dir: Optional[str | os.PathLike], mode: str = "standard",
                    resume: Optional[str] = None, stop_after: Optional[int] = None,
                    proto: Optional[EvalProtocol] = None) -> RunState:
    """Fine-tune F (encoder with differential rates) on task, smoothness and consistency losses.

    ``init_dir`` is the SSRL stage directory, or the style-transfer directory
    when SSRL is skipped. ``mode`` selects the ablation variants that change
    this stage; ``task_only_source`` trains a fresh F with source labels only
    and takes no ``init_dir``.
    """
    if mode not in DEPTH_MODES:
        raise ValueError(f"unknown depth-stage mode {mode!r}")
    stage = cfg.stage("depth")
    w = cfg.weights
    s = cfg.ssrl
    kwargs = {"mode": s.mode, "blocks": s.blocks, "block_size": tuple(s.block_size)}

    if mode == "task_only_source":
        stage = StageConfig(stage.name, cfg.stages.style_epochs + cfg.stages.depth_epochs, stage.batch_size,
                            stage.base_lr, stage.translator_lr, frozenset({"f_enc", "f_dec"}),
                            ALL_GROUPS - {"f_enc", "f_dec"})
        nets.freeze(stage.frozen)
        opt = _adam(nets.f.param_groups(stage.base_lr, differential=False), cfg)

        def step(xs, ds, xt):
            opt.zero_grad(set_to_none=True)
            pred = nets.f(xs)
            report = compose({"task": masked_l1(pred, ds, depth_mask(ds))}, {"task": w.task})
            report.total.backward()
            opt.step()
            return {**report.values(), "total": float(report.total.detach())}

        columns = ["task"]
    else:
        info = _require_done(init_dir, ("ssrl", "style_transfer"))
        names = ("g_st", "g_ts", "d_s", "d_t", "f") + (("siamese",) if info["stage"] == "ssrl" else ())
        load_networks(nets, init_dir, names)
        train = set(stage.train)
        if mode == "combined_a":
            nets.siamese = new_siamese(cfg, nets.f, cfg.stages.seed + 1, identity=True)
        elif mode == "combined_b":
            nets.siamese = new_siamese(cfg, nets.f, cfg.stages.seed + 1)
            train |= {"s_pro", "s_pre"}
        stage = StageConfig(stage.name, stage.epochs, stage.batch_size, stage.base_lr, stage.translator_lr,
                            frozenset(train), ALL_GROUPS - frozenset(train))
        nets.freeze(stage.frozen)
        groups = nets.f.param_groups(stage.base_lr, differential=cfg.optimizer.differential_encoder_lr)
        if mode == "combined_b":
            groups.append({"params": list(nets.siamese.parameters()), "lr": stage.base_lr, "name": "siamese"})
        opt = _adam(groups, cfg)
        with_cossim = mode in ("combined_a", "combined_b")

        def step(xs, ds, xt):
            opt.zero_grad(set_to_none=True)
            report, st = depth_estimation_objective(nets.f, nets.g_st, nets.g_ts, xs, ds, xt, w)
            if with_cossim:
                cos = nets.siamese.pair_loss(st.taps["S"][s.tap], st.taps["S->T"][s.tap],
                                             st.taps["T"][s.tap], st.taps["T->S"][s.tap], **kwargs)
                report = compose({**report.terms, "cossim": cos}, asdict(w))
            report.total.backward()
            opt.step()
            return {**report.values(), "total": float(report.total.detach())}

        columns = ["task", "smooth", "crdoco"] + (["cossim"] if with_cossim else [])

    state = _train(stage, cfg, data, nets, Path(out_dir), [opt], step, columns, resume, stop_after,
                   checkpoint_names=("f",))
    if state.complete and data.val_images is not None:
        result = evaluate_model(nets.f, data.val_images, data.val_depths, proto or EvalProtocol(
            d_min=cfg.data.d_min, d_max=cfg.data.d_max), data.val_ids)
        state.metrics = result.aggregate.to_dict()
        Path(out_dir, "val_metrics.json").write_text(result.to_json(), encoding="utf-8")
    return state
