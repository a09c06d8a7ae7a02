"""The network bundle shared by all stages, and its checkpoint files."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional

import torch
from torch import nn

from ..siamese import SiameseHead
from ..tasknet import TaskNetwork, set_trainable
from ..translation import Discriminator, Generator
from .checkpoint import CheckpointError, checksum, load_module, read_checkpoint, save_module
from .config import Config

CKPT_FILES = {
    "g_st": "g_st.ckpt",
    "g_ts": "g_ts.ckpt",
    "d_s": "d_s.ckpt",
    "d_t": "d_t.ckpt",
    "f": "f.ckpt",
    "siamese": "siamese.ckpt",
}
KINDS = {"g_st": "Generator", "g_ts": "Generator", "d_s": "Discriminator", "d_t": "Discriminator",
         "f": "TaskNetwork", "siamese": "SiameseHead"}


@dataclass
class Networks:
    g_st: Generator
    g_ts: Generator
    d_s: Discriminator
    d_t: Discriminator
    f: TaskNetwork
    siamese: SiameseHead

    def items(self) -> Iterator[tuple[str, nn.Module]]:
        for name in CKPT_FILES:
            yield name, getattr(self, name)

    def groups(self) -> dict[str, list[nn.Module]]:
        """Modules per freezing-group name."""
        return {
            "g_st": [self.g_st], "g_ts": [self.g_ts], "d_s": [self.d_s], "d_t": [self.d_t],
            "f_enc": [self.f.encoder], "f_dec": [self.f.decoder, self.f.head],
            "s_pro": [self.siamese.projector], "s_pre": [self.siamese.predictor],
        }

    def checksums(self) -> dict[str, str]:
        return {name: checksum(*mods) for name, mods in self.groups().items()}

    def freeze(self, frozen: frozenset[str]) -> None:
        """Set ``requires_grad`` per group; frozen groups also go to inference mode."""
        groups = self.groups()
        for name, mods in groups.items():
            if name in ("f_enc", "f_dec"):
                continue
            for mod in mods:
                mod.requires_grad_(name not in frozen)
                mod.train(name not in frozen)
        set_trainable(self.f, encoder="f_enc" not in frozen, decoder="f_dec" not in frozen)
        self.f.train(True)


def build_networks(cfg: Config, seed: Optional[int] = None) -> Networks:
    """Fresh, seeded networks in the configured precision."""
    torch.manual_seed(cfg.stages.seed if seed is None else seed)
    n = cfg.nets
    f = TaskNetwork(n.enc_channels, n.dec_channels, cfg.data.d_min, cfg.data.d_max)
    nets = Networks(
        g_st=Generator("S->T", n.gen_channels, n.gen_res_blocks),
        g_ts=Generator("T->S", n.gen_channels, n.gen_res_blocks),
        d_s=Discriminator("S", n.disc_channels),
        d_t=Discriminator("T", n.disc_channels),
        f=f,
        siamese=SiameseHead(f.tap_channels(cfg.ssrl.tap), cfg.ssrl.alpha),
    )
    for _, mod in nets.items():
        mod.to(n.torch_dtype)
    return nets


def new_siamese(cfg: Config, f: TaskNetwork, seed: int, identity: bool = False) -> SiameseHead:
    torch.manual_seed(seed)
    head = SiameseHead(f.tap_channels(cfg.ssrl.tap), cfg.ssrl.alpha, identity=identity)
    return head.to(cfg.nets.torch_dtype)


def save_networks(nets: Networks, directory: str | os.PathLike, names=None, meta=None) -> dict[str, str]:
    directory = Path(directory)
    paths = {}
    for name, mod in nets.items():
        if names is not None and name not in names:
            continue
        extra = dict(meta or {})
        if name == "f":
            extra.update({"encoder_trainable": nets.f.encoder_trainable,
                          "decoder_trainable": nets.f.decoder_trainable})
        path = directory / CKPT_FILES[name]
        save_module(path, mod, KINDS[name], extra)
        paths[name] = str(path)
    return paths


def load_networks(nets: Networks, directory: str | os.PathLike, names) -> None:
    directory = Path(directory)
    for name in names:
        path = directory / CKPT_FILES[name]
        if not path.exists():
            raise CheckpointError(f"missing checkpoint {path}")
        load_module(path, getattr(nets, name))


def load_task_network(path: str | os.PathLike) -> TaskNetwork:
    state, header = read_checkpoint(path)
    if header.get("kind") != "TaskNetwork":
        raise CheckpointError(f"{path} holds a {header.get('kind')}, not a TaskNetwork")
    f = TaskNetwork(**header["config"])
    dtype = next(iter(state.values())).dtype
    f.to(dtype)
    f.load_state_dict(state)
    f.eval()
    return f
