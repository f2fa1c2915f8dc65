"""Dual-branch vision state space modules and their residual blocks/groups.

One VSSM normalizes its input, then runs two branches:

* main:  depthwise 3x3 conv -> SiLU -> scan -> channel projection, where
  the scan is either the local-window four-direction pass (local variant)
  or the hierarchical stride pass (hierarchical variant);
* skip:  channel projection -> SiLU.

The branch sum goes through a second layer norm and a final projection.
A residual block wraps the VSSM and a two-layer channel MLP transformer
style; a group chains blocks and closes with a zero-initialized refinement
conv plus a group-level residual, so every fresh group starts out as the
identity map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .scan import hier_scan, local_enhanced_ss2d, make_direction_params
from .ssm import Module


@dataclass(frozen=True)
class GroupConfig:
    """Placement and size of one residual group."""
    index: int                # group position l (1-based)
    block_count: int
    variant: str              # "local" or "hierarchical"
    channels: int

    def __post_init__(self):
        if self.block_count < 1:
            raise ConfigError(f"group needs >= 1 blocks, got {self.block_count}")
        if self.variant not in ("local", "hierarchical"):
            raise ConfigError(f"unknown group variant {self.variant!r}")


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _param(rng, fan_in, shape) -> Tensor:
    return Tensor(_uniform(rng, fan_in, shape), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Vssm(Module):
    """The dual-branch module; ``variant`` picks the scan in the main branch."""

    def __init__(self, channels: int, state_size: int, variant: str,
                 window: tuple[int, int], hier_levels: int,
                 rng: np.random.Generator, scan_mode: str = "local"):
        if variant not in ("local", "hierarchical"):
            raise ConfigError(f"unknown vssm variant {variant!r}")
        self.variant = variant
        self.window = window
        self.scan_mode = scan_mode
        c = channels
        self.ln1_g, self.ln1_b = _ones(c), _zeros(c)
        self.dw_w = _param(rng, 9, (3, 3, c))
        self.dw_b = _zeros(c)
        self.phi1_w, self.phi1_b = _param(rng, c, (c, c)), _zeros(c)
        self.phi2_w, self.phi2_b = _param(rng, c, (c, c)), _zeros(c)
        self.ln2_g, self.ln2_b = _ones(c), _zeros(c)
        self.phi3_w, self.phi3_b = _param(rng, c, (c, c)), _zeros(c)
        if variant == "local":
            self.scan_params = make_direction_params(c, state_size, rng)
        else:
            self.scan_params = [
                make_direction_params(c, state_size, rng) for _ in range(hier_levels)
            ]

    def _window_for(self, h: int, w: int) -> tuple[int, int]:
        if self.scan_mode == "raster":
            return h, w  # one window covering the grid: plain raster scan
        return min(self.window[0], h), min(self.window[1], w)

    def scan(self, t: Tensor) -> Tensor:
        h, w, _ = t.shape
        win = self._window_for(h, w)
        if self.variant == "local":
            return local_enhanced_ss2d(t, self.scan_params, win)
        return hier_scan(t, self.scan_params, win)

    def forward(self, x: Tensor) -> Tensor:
        x1 = ad.layer_norm(x, self.ln1_g, self.ln1_b)
        t = ad.silu(ad.conv2d(x1, self.dw_w, self.dw_b))
        xm = ad.linear(self.scan(t), self.phi1_w, self.phi1_b)
        xs = ad.silu(ad.linear(x1, self.phi2_w, self.phi2_b))
        mixed = ad.layer_norm(ad.add(xm, xs), self.ln2_g, self.ln2_b)
        return ad.linear(mixed, self.phi3_w, self.phi3_b)

    __call__ = forward


class Rssb(Module):
    """Residual block: x + VSSM(x), then a pre-norm channel MLP residual."""

    MLP_EXPAND = 2

    def __init__(self, channels: int, state_size: int, variant: str,
                 window: tuple[int, int], hier_levels: int,
                 rng: np.random.Generator, scan_mode: str = "local"):
        c = channels
        hidden = c * self.MLP_EXPAND
        self.vssm = Vssm(channels, state_size, variant, window, hier_levels,
                         rng, scan_mode)
        self.ln3_g, self.ln3_b = _ones(c), _zeros(c)
        self.mlp1_w, self.mlp1_b = _param(rng, c, (c, hidden)), _zeros(hidden)
        self.mlp2_w, self.mlp2_b = _param(rng, hidden, (hidden, c)), _zeros(c)

    def forward(self, x: Tensor) -> Tensor:
        y = ad.add(x, self.vssm(x))
        m = ad.linear(
            ad.silu(ad.linear(ad.layer_norm(y, self.ln3_g, self.ln3_b),
                              self.mlp1_w, self.mlp1_b)),
            self.mlp2_w, self.mlp2_b,
        )
        return ad.add(y, m)

    __call__ = forward


class Rssg(Module):
    """A group of residual blocks with a refinement conv and group residual.

    Local groups hold ``block_count`` local blocks.  Hierarchical groups
    hold ``block_count - 1`` local blocks and one terminal hierarchical
    block.  The 3x3 refinement conv starts near zero so a fresh group is
    close to the identity while still passing gradient to its blocks (an
    exactly zero conv would cut them off entirely).
    """

    REFINE_INIT_SCALE = 0.02

    def __init__(self, cfg: GroupConfig, state_size: int, window: tuple[int, int],
                 hier_levels: int, rng: np.random.Generator,
                 scan_mode: str = "local"):
        self.cfg = cfg
        variants = ["local"] * cfg.block_count
        if cfg.variant == "hierarchical":
            variants[-1] = "hierarchical"
        self.blocks = [
            Rssb(cfg.channels, state_size, v, window, hier_levels, rng, scan_mode)
            for v in variants
        ]
        c = cfg.channels
        self.conv_w = Tensor(
            self.REFINE_INIT_SCALE * _uniform(rng, 9 * c, (3, 3, c, c)),
            requires_grad=True,
        )
        self.conv_b = _zeros(c)

    def forward(self, x: Tensor) -> Tensor:
        h = x
        for blk in self.blocks:
            h = blk(h)
        return ad.add(x, ad.conv2d(h, self.conv_w, self.conv_b))

    __call__ = forward

    def block_variants(self) -> list[str]:
        return [b.vssm.variant for b in self.blocks]
