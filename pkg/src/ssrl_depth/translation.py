"""Bidirectional image translation: generators, discriminators and their losses.

Least-squares adversarial objective, L1 cycle consistency and L1 identity
mapping. Discriminators see full images.
"""
from __future__ import annotations

from typing import Callable, Optional

import torch
from torch import nn
from torch.func import functional_call

ImageMap = Callable[[torch.Tensor], torch.Tensor]


class ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels, affine=True),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.body(x)


class Generator(nn.Module):
    """Residual image-to-image generator scaled down for toy resolution.

    Output is ``(1 - blend) * x + blend * sigmoid(net(x))``; ``blend`` is a
    fixed buffer, 1 for normal use and 0 for the identity configuration.
    """

    downsample_steps = 2

    def __init__(self, direction: str = "S->T", channels: int = 16, n_res_blocks: int = 2,
                 blend: float = 1.0):
        super().__init__()
        if direction not in ("S->T", "T->S"):
            raise ValueError(f"direction must be 'S->T' or 'T->S', got {direction!r}")
        self.direction = direction
        self.config = {"direction": direction, "channels": channels, "n_res_blocks": n_res_blocks,
                       "blend": blend}
        c = channels
        layers: list[nn.Module] = [
            nn.ReflectionPad2d(3), nn.Conv2d(3, c, 7), nn.InstanceNorm2d(c, affine=True), nn.ReLU(inplace=True),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1), nn.InstanceNorm2d(2 * c, affine=True), nn.ReLU(inplace=True),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1), nn.InstanceNorm2d(4 * c, affine=True),
            nn.ReLU(inplace=True),
        ]
        layers += [ResidualBlock(4 * c) for _ in range(n_res_blocks)]
        layers += [
            nn.ConvTranspose2d(4 * c, 2 * c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(2 * c, affine=True), nn.ReLU(inplace=True),
            nn.ConvTranspose2d(2 * c, c, 3, stride=2, padding=1, output_padding=1),
            nn.InstanceNorm2d(c, affine=True), nn.ReLU(inplace=True),
            nn.ReflectionPad2d(3), nn.Conv2d(c, 3, 7),
        ]
        self.net = nn.Sequential(*layers)
        self.register_buffer("blend", torch.tensor(float(blend)))

    @classmethod
    def identity(cls, direction: str = "S->T", channels: int = 4, n_res_blocks: int = 1) -> "Generator":
        """Test configuration whose output equals its input exactly."""
        return cls(direction, channels, n_res_blocks, blend=0.0)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_image_batch(x, multiple_of=2 ** self.downsample_steps)
        out = torch.sigmoid(self.net(x))
        if self.blend == 1:
            return out
        if self.blend == 0:
            return x
        return (1 - self.blend) * x + self.blend * out


class Discriminator(nn.Module):
    """Three-layer convolutional critic producing a score map."""

    def __init__(self, domain: str = "T", channels: int = 16):
        super().__init__()
        if domain not in ("S", "T"):
            raise ValueError(f"domain must be 'S' or 'T', got {domain!r}")
        self.domain = domain
        self.config = {"domain": domain, "channels": channels}
        c = channels
        self.net = nn.Sequential(
            nn.Conv2d(3, c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(c, 2 * c, 4, stride=2, padding=1), nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(2 * c, 1, 3, padding=1),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_image_batch(x)
        return self.net(x)


def check_image_batch(x: torch.Tensor, multiple_of: int = 1) -> None:
    if x.dim() != 4 or x.shape[1] != 3:
        raise ValueError(f"expected an image batch of shape (B, 3, H, W), got {tuple(x.shape)}")
    if x.shape[0] == 0:
        raise ValueError("empty image batch")
    h, w = x.shape[-2:]
    if h % multiple_of or w % multiple_of:
        raise ValueError(f"spatial dims {h}x{w} must be divisible by {multiple_of}")


def translate(g: ImageMap, img: torch.Tensor) -> torch.Tensor:
    """Apply a generator to one image ``(3, H, W)`` or a batch ``(B, 3, H, W)``."""
    if img.dim() == 3:
        return g(img.unsqueeze(0)).squeeze(0)
    return g(img)


def _frozen_call(d: nn.Module, x: torch.Tensor) -> torch.Tensor:
    # Parameters enter as constants, so no gradient can reach them.
    params = {k: v.detach() for k, v in d.named_parameters()}
    return functional_call(d, params, (x,))


def adv_loss_discriminator(d: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """``E[(D(real) - 1)^2] + E[D(fake)^2]`` with the fake batch detached."""
    if real.shape[0] == 0 or fake.shape[0] == 0:
        raise ValueError("adversarial loss needs non-empty batches")
    return ((d(real) - 1) ** 2).mean() + (d(fake.detach()) ** 2).mean()


def adv_loss_generator(d: nn.Module, fake: torch.Tensor) -> torch.Tensor:
    """``E[(D(fake) - 1)^2]``; gradients reach the generator only."""
    if fake.shape[0] == 0:
        raise ValueError("adversarial loss needs a non-empty batch")
    return ((_frozen_call(d, fake) - 1) ** 2).mean()


def cycle_loss(g_st: ImageMap, g_ts: ImageMap, batch_s: torch.Tensor, batch_t: torch.Tensor,
               fake_t: Optional[torch.Tensor] = None, fake_s: Optional[torch.Tensor] = None) -> torch.Tensor:
    """``fake_t = g_st(batch_s)`` and ``fake_s = g_ts(batch_t)`` may be passed in to skip recomputation."""
    rec_s = g_ts(g_st(batch_s) if fake_t is None else fake_t)
    rec_t = g_st(g_ts(batch_t) if fake_s is None else fake_s)
    return (rec_s - batch_s).abs().mean() + (rec_t - batch_t).abs().mean()


def identity_loss(g_st: ImageMap, g_ts: ImageMap, batch_s: torch.Tensor, batch_t: torch.Tensor) -> torch.Tensor:
    return (g_ts(batch_s) - batch_s).abs().mean() + (g_st(batch_t) - batch_t).abs().mean()
