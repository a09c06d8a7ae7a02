"""Weights-shared encoder-decoder depth network with decoder feature taps."""
from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn.functional as nnf
from torch import nn

TAPS = ("last", "second_last", "third_last")

# Encoder stage (1-based) -> divisor of the base learning rate.
DIFFERENTIAL_LR = {1: 1e3, 2: 1e3, 3: 1e2, 4: 1e1}


def conv_bn_relu(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.block = nn.Sequential(conv_bn_relu(cin, cout, stride=2), conv_bn_relu(cout, cout))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class UpBlock(nn.Module):
    """Bilinear x2 upsampling, concatenation with the skip, two convolutions."""

    def __init__(self, cin: int, cskip: int, cout: int):
        super().__init__()
        self.block = nn.Sequential(conv_bn_relu(cin + cskip, cout), conv_bn_relu(cout, cout))

    def forward(self, x: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        x = nnf.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.block(torch.cat([x, skip], dim=1))


class Encoder(nn.Module):
    def __init__(self, channels: Sequence[int]):
        super().__init__()
        cins = [3, *channels[:-1]]
        self.stages = nn.ModuleList(EncoderStage(a, b) for a, b in zip(cins, channels))

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        feats = [x]
        for stage in self.stages:
            feats.append(stage(feats[-1]))
        return feats


class Decoder(nn.Module):
    def __init__(self, enc_channels: Sequence[int], dec_channels: Sequence[int]):
        super().__init__()
        if len(dec_channels) != len(enc_channels):
            raise ValueError("decoder needs one block per encoder stage")
        skips = [*reversed(enc_channels[:-1]), 3]
        cins = [enc_channels[-1], *dec_channels[:-1]]
        self.blocks = nn.ModuleList(UpBlock(ci, cs, co) for ci, cs, co in zip(cins, skips, dec_channels))

    def forward(self, feats: list[torch.Tensor]) -> list[torch.Tensor]:
        x = feats[-1]
        outs = []
        for block, skip in zip(self.blocks, reversed(feats[:-1])):
            x = block(x, skip)
            outs.append(x)
        return outs


class DepthHead(nn.Module):
    """1x1 convolution, then a sigmoid mapped log-linearly onto ``[d_min, d_max]``."""

    def __init__(self, channels: int, d_min: float, d_max: float):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, 1)
        self.log_min = math.log(d_min)
        self.log_span = math.log(d_max) - math.log(d_min)
        self.d_min, self.d_max = d_min, d_max

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        depth = torch.exp(self.log_min + self.log_span * torch.sigmoid(self.conv(x)))
        return depth.clamp(self.d_min, self.d_max)


class TaskNetwork(nn.Module):
    """Depth network ``F = F_dec o F_enc``.

    One instance serves every input stream. Frozen parameter groups are kept
    in inference mode so their normalization statistics stay fixed as well.
    """

    def __init__(self, enc_channels: Sequence[int] = (16, 24, 32, 48),
                 dec_channels: Sequence[int] = (32, 24, 16, 12), d_min: float = 1.0, d_max: float = 80.0):
        super().__init__()
        if len(enc_channels) < 3:
            raise ValueError("encoder needs at least 3 stages")
        self.config = {"enc_channels": list(enc_channels), "dec_channels": list(dec_channels),
                       "d_min": d_min, "d_max": d_max}
        self.encoder = Encoder(enc_channels)
        self.decoder = Decoder(enc_channels, dec_channels)
        self.head = DepthHead(dec_channels[-1], d_min, d_max)
        self.d_min, self.d_max = d_min, d_max
        self.encoder_trainable = True
        self.decoder_trainable = True

    @property
    def stride(self) -> int:
        return 2 ** len(self.encoder.stages)

    def tap_channels(self, tap: str = "last") -> int:
        return self.config["dec_channels"][-1 - _tap_index(tap)]

    def check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected (B, 3, H, W) images, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ValueError(f"spatial dims {h}x{w} must be divisible by {self.stride}")

    def forward_all(self, x: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        """Depth and every tap from one forward pass."""
        self.check_input(x)
        outs = self.decoder(self.encoder(x))
        taps = {name: outs[-1 - i] for i, name in enumerate(TAPS)}
        return self.head(outs[-1]), taps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.forward_all(x)[0]

    def train(self, mode: bool = True) -> "TaskNetwork":
        super().train(mode)
        if mode:
            self.encoder.train(self.encoder_trainable)
            trainable = self.decoder_trainable
            self.decoder.train(trainable)
            self.head.train(trainable)
        return self

    def param_groups(self, lr: float, differential: bool = True) -> list[dict]:
        """Optimizer groups; encoder stages get the reduced rates of ``DIFFERENTIAL_LR``."""
        groups = []
        n = len(self.encoder.stages)
        for i, stage in enumerate(self.encoder.stages, start=1):
            if differential:
                # Deeper encoders map their extra early stages onto the
                # slowest group and keep the last two on /1e2 and /1e1.
                key = 4 if i == n else 3 if i == n - 1 else 1
                scale = 1.0 / DIFFERENTIAL_LR[key]
            else:
                scale = 1.0
            groups.append({"params": list(stage.parameters()), "lr": lr * scale, "lr_scale": scale,
                           "name": f"encoder.stage{i}"})
        groups.append({"params": [*self.decoder.parameters(), *self.head.parameters()], "lr": lr,
                       "lr_scale": 1.0, "name": "decoder"})
        return groups


def _tap_index(tap: str) -> int:
    if tap not in TAPS:
        raise ValueError(f"unknown tap {tap!r}; expected one of {TAPS}")
    return TAPS.index(tap)


def predict_depth(f: TaskNetwork, img: torch.Tensor) -> torch.Tensor:
    if img.dim() == 3:
        return f(img.unsqueeze(0)).squeeze(0)
    return f(img)


def extract_features(f: TaskNetwork, img: torch.Tensor, tap: str = "last") -> torch.Tensor:
    _tap_index(tap)
    squeeze = img.dim() == 3
    _, taps = f.forward_all(img.unsqueeze(0) if squeeze else img)
    out = taps[tap]
    return out.squeeze(0) if squeeze else out


def set_trainable(f: TaskNetwork, encoder: bool, decoder: bool) -> None:
    """Freeze or unfreeze the encoder and the decoder+head groups."""
    f.encoder_trainable = encoder
    f.decoder_trainable = decoder
    for p in f.encoder.parameters():
        p.requires_grad_(encoder)
    for mod in (f.decoder, f.head):
        for p in mod.parameters():
            p.requires_grad_(decoder)
    if f.training:
        f.train(True)
