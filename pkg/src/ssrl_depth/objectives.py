"""Depth-side losses and the weighted stage objectives."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Optional

import torch
from torch import nn

from .translation import adv_loss_generator, cycle_loss, identity_loss

ImageMap = Callable[[torch.Tensor], torch.Tensor]


@dataclass(frozen=True)
class LossWeights:
    cycle: float = 10.0
    identity: float = 100.0
    task: float = 100.0
    smooth: float = 0.1
    crdoco: float = 1.0
    cossim: float = 1.0

    def __post_init__(self) -> None:
        for name, value in asdict(self).items():
            if not (value >= 0 and value < float("inf")):
                raise ValueError(f"weight {name} must be finite and non-negative, got {value}")


@dataclass
class LossReport:
    """Per-term values, their weights and the weighted total."""

    terms: dict[str, torch.Tensor]
    weights: dict[str, float]
    total: torch.Tensor = field(init=False)

    def __post_init__(self) -> None:
        total = None
        for name, value in self.terms.items():
            part = self.weights[name] * value
            total = part if total is None else total + part
        if total is None:
            raise ValueError("a loss report needs at least one term")
        self.total = total

    def values(self) -> dict[str, float]:
        return {k: float(v.detach()) for k, v in self.terms.items()}


def compose(terms: Mapping[str, torch.Tensor], weights: Mapping[str, float]) -> LossReport:
    return LossReport(dict(terms), {k: float(weights[k]) for k in terms})


def masked_l1(pred: torch.Tensor, target: torch.Tensor, valid: Optional[torch.Tensor] = None) -> torch.Tensor:
    """Mean absolute error over ``valid`` pixels (all pixels when omitted)."""
    if valid is None:
        return (pred - target).abs().mean()
    count = valid.sum()
    if count == 0:
        raise ValueError("no valid depth pixels in batch")
    diff = torch.where(valid, pred - target, torch.zeros_like(pred))
    return diff.abs().sum() / count


def depth_mask(depth: torch.Tensor) -> torch.Tensor:
    return depth > 0


def task_terms(pred_s: torch.Tensor, pred_st: Optional[torch.Tensor], label: torch.Tensor) -> torch.Tensor:
    valid = depth_mask(label)
    loss = masked_l1(pred_s, label, valid)
    if pred_st is not None:
        loss = loss + masked_l1(pred_st, label, valid)
    return loss


def task_loss(f: ImageMap, g_st: ImageMap, images_s: torch.Tensor, depth_s: torch.Tensor) -> torch.Tensor:
    """L1 of ``F(I_S)`` and ``F(G_st(I_S))`` against the shared source label."""
    return task_terms(f(images_s), f(g_st(images_s)), depth_s)


def smooth_loss(pred: torch.Tensor, img: torch.Tensor) -> torch.Tensor:
    """Edge-aware first-order smoothness with forward differences."""
    if pred.shape[-2:] != img.shape[-2:]:
        raise ValueError(f"prediction {tuple(pred.shape)} and image {tuple(img.shape)} differ spatially")
    if pred.shape[-1] < 2 or pred.shape[-2] < 2:
        raise ValueError("smoothness needs at least 2x2 maps")
    dx_p = (pred[..., :, 1:] - pred[..., :, :-1]).abs()
    dy_p = (pred[..., 1:, :] - pred[..., :-1, :]).abs()
    dx_i = (img[..., :, 1:] - img[..., :, :-1]).abs().mean(dim=-3, keepdim=True)
    dy_i = (img[..., 1:, :] - img[..., :-1, :]).abs().mean(dim=-3, keepdim=True)
    return (dx_p * torch.exp(-dx_i)).mean() + (dy_p * torch.exp(-dy_i)).mean()


def crdoco_loss(f: ImageMap, g_ts: ImageMap, images_t: torch.Tensor) -> torch.Tensor:
    """L1 between ``F(I_T)`` and ``F(G_ts(I_T))``; both branches carry gradient."""
    return masked_l1(f(images_t), f(g_ts(images_t)))


@dataclass
class Streams:
    """The four image streams and F's outputs on them."""

    i_s: torch.Tensor
    i_t: torch.Tensor
    i_st: torch.Tensor
    i_ts: torch.Tensor
    p_s: torch.Tensor
    p_t: torch.Tensor
    p_st: torch.Tensor
    p_ts: torch.Tensor
    taps: dict[str, dict[str, torch.Tensor]]


def forward_streams(f: nn.Module, g_st: ImageMap, g_ts: ImageMap, images_s: torch.Tensor,
                    images_t: torch.Tensor, translate_grad: bool = True) -> Streams:
    if translate_grad:
        i_st, i_ts = g_st(images_s), g_ts(images_t)
    else:
        with torch.no_grad():
            i_st, i_ts = g_st(images_s), g_ts(images_t)
    taps = {}
    preds = {}
    for key, img in (("S", images_s), ("T", images_t), ("S->T", i_st), ("T->S", i_ts)):
        preds[key], taps[key] = f.forward_all(img)
    return Streams(images_s, images_t, i_st, i_ts, preds["S"], preds["T"], preds["S->T"], preds["T->S"], taps)


def depth_terms(st: Streams, depth_s: torch.Tensor) -> dict[str, torch.Tensor]:
    return {
        "task": task_terms(st.p_s, st.p_st, depth_s),
        "smooth": smooth_loss(st.p_t, st.i_t) + smooth_loss(st.p_st, st.i_st),
        "crdoco": masked_l1(st.p_t, st.p_ts),
    }


def style_transfer_objective(nets, images_s: torch.Tensor, depth_s: torch.Tensor, images_t: torch.Tensor,
                             w: LossWeights) -> tuple[LossReport, Streams]:
    """Generator/task side of the style-transfer min-max.

    The adversarial term averages the two translation directions.
    """
    st = forward_streams(nets.f, nets.g_st, nets.g_ts, images_s, images_t)
    terms = {
        "adv": 0.5 * (adv_loss_generator(nets.d_t, st.i_st) + adv_loss_generator(nets.d_s, st.i_ts)),
        "cycle": cycle_loss(nets.g_st, nets.g_ts, images_s, images_t, st.i_st, st.i_ts),
        "identity": identity_loss(nets.g_st, nets.g_ts, images_s, images_t),
        **depth_terms(st, depth_s),
    }
    weights = {"adv": 1.0, **asdict(w)}
    return compose(terms, weights), st


def depth_estimation_objective(f: nn.Module, g_st: ImageMap, g_ts: ImageMap, images_s: torch.Tensor,
                               depth_s: torch.Tensor, images_t: torch.Tensor,
                               w: LossWeights) -> tuple[LossReport, Streams]:
    """Task, smoothness and cross-domain consistency with frozen translators."""
    st = forward_streams(f, g_st, g_ts, images_s, images_t, translate_grad=False)
    return compose(depth_terms(st, depth_s), asdict(w)), st
