"""Siamese head over decoder features: per-pixel projector and bottleneck predictor.

The training signal is a symmetrized negative cosine similarity with a stop
gradient on the projector branch of the opposite view.
"""
from __future__ import annotations

from typing import Callable, Literal, Optional

import torch
from torch import nn

EPS = 1e-8
Mode = Literal["pixelwise", "global"]
BlockPlacement = Literal["off", "s_input", "pre_input"]


class Projector(nn.Module):
    """Three 1x1 convolutions ``C -> C -> C -> C``; BN + ReLU after the first two."""

    def __init__(self, channels: int = 12, identity: bool = False):
        super().__init__()
        c = channels
        self.channels = c
        self.config = {"channels": c, "identity": identity}
        if identity:
            convs = [nn.Conv2d(c, c, 1) for _ in range(3)]
            for conv in convs:
                _set_identity(conv)
            self.net = nn.Sequential(*convs)
        else:
            self.net = nn.Sequential(
                nn.Conv2d(c, c, 1), nn.BatchNorm2d(c), nn.ReLU(inplace=True),
                nn.Conv2d(c, c, 1), nn.BatchNorm2d(c), nn.ReLU(inplace=True),
                nn.Conv2d(c, c, 1),
            )

    def forward(self, m: torch.Tensor) -> torch.Tensor:
        _check_channels(m, self.channels)
        return self.net(m)


class Predictor(nn.Module):
    """Two 1x1 convolutions ``C -> C // alpha -> C``; BN + ReLU after the first."""

    def __init__(self, channels: int = 12, alpha: int = 3, identity: bool = False):
        super().__init__()
        self.hidden = hidden_dim(channels, alpha)
        self.channels = channels
        self.alpha = alpha
        self.config = {"channels": channels, "alpha": alpha, "identity": identity}
        if identity:
            # Skip-equivalent weights need a full-width hidden layer.
            convs = [nn.Conv2d(channels, channels, 1) for _ in range(2)]
            for conv in convs:
                _set_identity(conv)
            self.net = nn.Sequential(*convs)
        else:
            self.net = nn.Sequential(
                nn.Conv2d(channels, self.hidden, 1), nn.BatchNorm2d(self.hidden), nn.ReLU(inplace=True),
                nn.Conv2d(self.hidden, channels, 1),
            )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        _check_channels(z, self.channels)
        return self.net(z)


def hidden_dim(channels: int, alpha: int) -> int:
    if not isinstance(alpha, int) or alpha < 1:
        raise ValueError(f"alpha must be a positive integer, got {alpha!r}")
    hidden = channels // alpha
    if hidden < 1:
        raise ValueError(f"alpha={alpha} leaves no hidden channels for C={channels}")
    return hidden


def _set_identity(conv: nn.Conv2d) -> None:
    with torch.no_grad():
        conv.weight.zero_()
        conv.weight[:, :, 0, 0].copy_(torch.eye(conv.out_channels, conv.in_channels))
        conv.bias.zero_()


def _check_channels(x: torch.Tensor, channels: int) -> None:
    if x.dim() != 4 or x.shape[1] != channels:
        raise ValueError(f"expected (B, {channels}, H, W) features, got {tuple(x.shape)}")


def _as_batch(a: torch.Tensor) -> torch.Tensor:
    return a.unsqueeze(0) if a.dim() == 3 else a


def _check_pair(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"feature maps differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}")
    if a.dim() not in (3, 4):
        raise ValueError(f"expected (C, H, W) or (B, C, H, W) features, got {tuple(a.shape)}")


def project(s_pro: Projector, m: torch.Tensor) -> torch.Tensor:
    return s_pro(_as_batch(m))


def predict_embed(s_pre: Predictor, z: torch.Tensor) -> torch.Tensor:
    return s_pre(_as_batch(z))


def _unit(x: torch.Tensor, dim: int, eps: float) -> torch.Tensor:
    # Norms below eps are clamped, so nonzero vectors stay exactly unit length
    # and zero vectors map to zero with bounded gradients.
    return x / x.norm(dim=dim, keepdim=True).clamp_min(eps)


def cossim_pixelwise(a: torch.Tensor, b: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Mean over batch and spatial positions of ``-<a_i/|a_i|, b_i/|b_i|>``."""
    _check_pair(a, b)
    a, b = _as_batch(a), _as_batch(b)
    return -(_unit(a, 1, eps) * _unit(b, 1, eps)).sum(dim=1).mean()


def cossim_global(a: torch.Tensor, b: torch.Tensor, eps: float = EPS) -> torch.Tensor:
    """Negative cosine of the flattened ``C*H*W`` vectors, averaged over the batch."""
    _check_pair(a, b)
    a, b = _as_batch(a).flatten(1), _as_batch(b).flatten(1)
    return -(_unit(a, 1, eps) * _unit(b, 1, eps)).sum(dim=1).mean()


COSSIM: dict[str, Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = {
    "pixelwise": cossim_pixelwise,
    "global": cossim_global,
}


def split_blocks(m: torch.Tensor, block: tuple[int, int]) -> list[torch.Tensor]:
    """Non-overlapping ``block``-sized tiles of ``m`` in row-major order."""
    bh, bw = block
    h, w = m.shape[-2:]
    if bh < 1 or bw < 1 or h % bh or w % bw:
        raise ValueError(f"block {bh}x{bw} does not tile a {h}x{w} map")
    return [m[..., i:i + bh, j:j + bw] for i in range(0, h, bh) for j in range(0, w, bw)]


def merge_blocks(blocks: list[torch.Tensor], shape: tuple[int, int]) -> torch.Tensor:
    """Inverse of :func:`split_blocks` for a map of spatial size ``shape``."""
    bh, bw = blocks[0].shape[-2:]
    cols = shape[1] // bw
    rows = [torch.cat(blocks[r * cols:(r + 1) * cols], dim=-1) for r in range(shape[0] // bh)]
    return torch.cat(rows, dim=-2)


def _symmetric(p_a: torch.Tensor, z_a: torch.Tensor, p_b: torch.Tensor, z_b: torch.Tensor,
               cos: Callable[[torch.Tensor, torch.Tensor], torch.Tensor]) -> torch.Tensor:
    return 0.5 * cos(p_a, z_b.detach()) + 0.5 * cos(p_b, z_a.detach())


def ssrl_loss(s_pro: nn.Module, s_pre: nn.Module, m_a: torch.Tensor, m_b: torch.Tensor,
              mode: Mode = "pixelwise", blocks: BlockPlacement = "off",
              block_size: Optional[tuple[int, int]] = None) -> torch.Tensor:
    """Symmetrized stop-gradient loss for one pair of views.

    ``blocks="s_input"`` tiles the features before the projector;
    ``blocks="pre_input"`` tiles the projector output before the predictor.
    Per-block losses are averaged.
    """
    _check_pair(m_a, m_b)
    m_a, m_b = _as_batch(m_a), _as_batch(m_b)
    if mode not in COSSIM:
        raise ValueError(f"unknown cosine mode {mode!r}")
    cos = COSSIM[mode]
    if blocks == "off":
        z_a, z_b = s_pro(m_a), s_pro(m_b)
        return _symmetric(s_pre(z_a), z_a, s_pre(z_b), z_b, cos)
    if block_size is None:
        raise ValueError("block_size is required when blocks are enabled")
    if blocks == "s_input":
        losses = []
        for ba, bb in zip(split_blocks(m_a, block_size), split_blocks(m_b, block_size)):
            z_a, z_b = s_pro(ba), s_pro(bb)
            losses.append(_symmetric(s_pre(z_a), z_a, s_pre(z_b), z_b, cos))
        return torch.stack(losses).mean()
    if blocks == "pre_input":
        z_a, z_b = s_pro(m_a), s_pro(m_b)
        losses = [_symmetric(s_pre(ba), ba, s_pre(bb), bb, cos)
                  for ba, bb in zip(split_blocks(z_a, block_size), split_blocks(z_b, block_size))]
        return torch.stack(losses).mean()
    raise ValueError(f"unknown block placement {blocks!r}")


class SiameseHead(nn.Module):
    """Projector and predictor shared by every view pair."""

    def __init__(self, channels: int = 12, alpha: int = 3, identity: bool = False):
        super().__init__()
        self.projector = Projector(channels, identity=identity)
        self.predictor = Predictor(channels, alpha, identity=identity)
        self.config = {"channels": channels, "alpha": alpha, "identity": identity}

    def loss(self, m_a: torch.Tensor, m_b: torch.Tensor, mode: Mode = "pixelwise",
             blocks: BlockPlacement = "off", block_size: Optional[tuple[int, int]] = None) -> torch.Tensor:
        return ssrl_loss(self.projector, self.predictor, m_a, m_b, mode, blocks, block_size)

    def pair_loss(self, m_s: torch.Tensor, m_st: torch.Tensor, m_t: torch.Tensor, m_ts: torch.Tensor,
                  **kwargs) -> torch.Tensor:
        """Average of the ``(S, S->T)`` and ``(T, T->S)`` pair losses."""
        return 0.5 * (self.loss(m_s, m_st, **kwargs) + self.loss(m_t, m_ts, **kwargs))
