"""The U-shaped flare removal network and its checkpoint format.

Layout for ``levels = 3``::

    embed 3->C
    enc group 1 (1 block)  @ H      -- down -> H/2, 2C
    enc group 2 (2 blocks) @ H/2    -- down -> H/4, 4C
    enc group 3 (3 blocks) @ H/4
    bottleneck local group @ H/4
    up -> H/2, 2C; + skip(enc 2); dec group 2 (1 local + 1 terminal block)
    up -> H,   C;  + skip(enc 1); dec group 1 (terminal block)
    head C->6

The first three output channels predict the flare-free image, the last
three the flare layer.  Encoder groups are local; decoder groups end in a
hierarchical block unless the ``hierarchical`` switch is off.  Skip
connections are additive behind an identity-initialized 1x1 conv.  The
``u_shaped`` switch swaps the whole trunk for a flat full-resolution stack
with the same group sizes.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointError, ConfigError, ShapeError
from .blocks import GroupConfig, Rssg, _param, _zeros
from .ssm import Module

_MAGIC = b"DFLRNET\x00"
_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; all ablation axes are plain switches."""
    base_channels: int = 16
    levels: int = 3
    state_size: int = 16
    window: tuple[int, int] = (8, 8)
    hier_levels: int = 2
    scan_mode: str = "local"        # "local" | "raster"
    hierarchical: bool = True       # terminal hierarchical blocks in the decoder
    u_shaped: bool = True
    bottleneck_blocks: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.base_channels < 1 or self.state_size < 1:
            raise ConfigError(f"non-positive sizes in {self}")
        if self.scan_mode not in ("local", "raster"):
            raise ConfigError(f"scan_mode must be 'local' or 'raster', got {self.scan_mode!r}")
        if self.hier_levels < 1:
            raise ConfigError(f"hier_levels must be >= 1, got {self.hier_levels}")

    @property
    def divisor(self) -> int:
        """Input extents must be divisible by this (U-shaped trunks only)."""
        return 2 ** (self.levels - 1) if self.u_shaped else 1

    def blocks_per_group(self) -> list[int]:
        return list(range(1, self.levels + 1))


def config_to_text(cfg: NetworkConfig) -> str:
    lines = [
        f"base_channels = {cfg.base_channels}",
        f"levels = {cfg.levels}",
        f"state_size = {cfg.state_size}",
        f"window = {cfg.window[0]},{cfg.window[1]}",
        f"hier_levels = {cfg.hier_levels}",
        f"scan_mode = {cfg.scan_mode}",
        f"hierarchical = {int(cfg.hierarchical)}",
        f"u_shaped = {int(cfg.u_shaped)}",
        f"bottleneck_blocks = {cfg.bottleneck_blocks}",
        f"seed = {cfg.seed}",
    ]
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> NetworkConfig:
    vals: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, val = line.partition("=")
        vals[key.strip()] = val.strip()
    try:
        wh, ww = (int(v) for v in vals["window"].split(","))
        return NetworkConfig(
            base_channels=int(vals["base_channels"]),
            levels=int(vals["levels"]),
            state_size=int(vals["state_size"]),
            window=(wh, ww),
            hier_levels=int(vals["hier_levels"]),
            scan_mode=vals["scan_mode"],
            hierarchical=bool(int(vals["hierarchical"])),
            u_shaped=bool(int(vals["u_shaped"])),
            bottleneck_blocks=int(vals["bottleneck_blocks"]),
            seed=int(vals["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"bad config block in checkpoint: {exc}") from exc


class Network(Module):
    """Maps a corrupted image to (flare-free, flare) predictions."""

    IN_CHANNELS = 3
    OUT_CHANNELS = 6

    def __init__(self, config: NetworkConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        c = config.base_channels
        dec_variant = "hierarchical" if config.hierarchical else "local"

        self.embed_w = _param(rng, 9 * self.IN_CHANNELS, (3, 3, self.IN_CHANNELS, c))
        self.embed_b = _zeros(c)

        def group(level: int, variant: str, channels: int) -> Rssg:
            return Rssg(
                GroupConfig(index=level, block_count=level, variant=variant,
                            channels=channels),
                config.state_size, config.window, config.hier_levels, rng,
                config.scan_mode,
            )

        if config.u_shaped:
            widths = [c * (1 << i) for i in range(config.levels)]
            enc_variants = ["local"] * config.levels
        else:
            widths = [c] * config.levels  # flat trunk keeps one width
            enc_variants = ["local"] * (config.levels - 1) + [dec_variant]
        self.enc_groups = [
            group(l + 1, enc_variants[l], widths[l]) for l in range(config.levels)
        ]

        if config.u_shaped:
            self.down_w = [
                _param(rng, 9 * widths[l], (3, 3, widths[l], widths[l + 1]))
                for l in range(config.levels - 1)
            ]
            self.down_b = [_zeros(widths[l + 1]) for l in range(config.levels - 1)]
            self.bottleneck = Rssg(
                GroupConfig(index=config.levels, block_count=config.bottleneck_blocks,
                            variant="local", channels=widths[-1]),
                config.state_size, config.window, config.hier_levels, rng,
                config.scan_mode,
            )
            self.up_w = [
                _param(rng, 9 * widths[l + 1], (3, 3, widths[l + 1], widths[l]))
                for l in range(config.levels - 1)
            ]
            self.up_b = [_zeros(widths[l]) for l in range(config.levels - 1)]
            # 1x1 channel-matching skip convs, identity at init
            self.skip_w = [
                Tensor(np.eye(widths[l])[None, None], requires_grad=True)
                for l in range(config.levels - 1)
            ]
            self.skip_b = [_zeros(widths[l]) for l in range(config.levels - 1)]
            self.dec_groups = [
                group(l + 1, dec_variant, widths[l]) for l in range(config.levels - 1)
            ]
        else:
            self.dec_groups = []

        self.head_w = _param(rng, 9 * c, (3, 3, c, self.OUT_CHANNELS))
        self.head_b = _zeros(self.OUT_CHANNELS)

    # -- plumbing ----------------------------------------------------------
    def _check_extents(self, h: int, w: int) -> None:
        d = self.config.divisor
        if h % d or w % d:
            raise ShapeError(
                f"input extents ({h}, {w}) must be divisible by {d} "
                f"for a {self.config.levels}-level network"
            )

    def downsample(self, x: Tensor, level: int) -> Tensor:
        """Stride-2 conv halving the extents and doubling the channels."""
        h, w, _ = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"downsample needs even extents, got ({h}, {w})")
        return ad.conv2d(x, self.down_w[level], self.down_b[level], stride=2)

    def upsample(self, x: Tensor, level: int) -> Tensor:
        """Nearest-neighbor 2x followed by a channel-halving conv."""
        if x.shape[2] % 2:
            raise ShapeError(f"upsample needs even channel count, got {x.shape[2]}")
        return ad.conv2d(ad.nearest_upsample2(x), self.up_w[level], self.up_b[level])

    def forward(self, image, trace: list | None = None):
        """Run the network; returns ``(flare_free, flare)``, both (H, W, 3).

        ``trace``, when given, collects ``(tag, shape)`` pairs of the
        intermediate feature maps.
        """
        x = ad.as_tensor(image)
        if x.data.ndim != 3 or x.shape[2] != self.IN_CHANNELS:
            raise ShapeError(f"forward expects (H, W, 3), got {x.shape}")
        h, w, _ = x.shape
        self._check_extents(h, w)

        def note(tag, t):
            if trace is not None:
                trace.append((tag, t.shape))

        feat = ad.conv2d(x, self.embed_w, self.embed_b)
        note("embed", feat)

        if not self.config.u_shaped:
            for i, g in enumerate(self.enc_groups):
                feat = g(feat)
                note(f"flat{i + 1}", feat)
        else:
            skips = []
            for i, g in enumerate(self.enc_groups):
                feat = g(feat)
                note(f"enc{i + 1}", feat)
                if i < self.config.levels - 1:
                    skips.append(feat)
                    feat = self.downsample(feat, i)
            feat = self.bottleneck(feat)
            note("bottleneck", feat)
            for i in range(self.config.levels - 2, -1, -1):
                feat = self.upsample(feat, i)
                skip = ad.conv2d(skips[i], self.skip_w[i], self.skip_b[i])
                feat = self.dec_groups[i](ad.add(feat, skip))
                note(f"dec{i + 1}", feat)

        out = ad.conv2d(feat, self.head_w, self.head_b)
        note("head", out)
        # channel split: first three = flare-free, last three = flare
        i0_hat = _slice_channels(out, 0, 3)
        f_hat = _slice_channels(out, 3, 6)
        return i0_hat, f_hat

    __call__ = forward


def _slice_channels(t: Tensor, lo: int, hi: int) -> Tensor:
    parts = [ad.take_index(t, i, axis=2) for i in range(lo, hi)]
    return ad.stack(parts, axis=2)


# ---------------------------------------------------------------------------
# training state and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class OptimState:
    """Adam accumulators; ``m``/``v`` are keyed by parameter name."""
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class NetworkState:
    """Everything needed to resume training exactly where it stopped."""
    net: Network
    iteration: int = 0
    opt: OptimState | None = None

    @property
    def config(self) -> NetworkConfig:
        return self.net.config


def fresh_state(config: NetworkConfig, lr: float = 1e-4) -> NetworkState:
    return NetworkState(net=Network(config), iteration=0, opt=OptimState(lr=lr))


def _write_record(buf, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf.write(struct.pack("<I", len(nb)))
    buf.write(nb)
    buf.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        buf.write(struct.pack("<Q", dim))
    buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def save_checkpoint(state: NetworkState, path: str) -> None:
    """Serialize weights, optimizer moments and the iteration counter.

    The format is a little-endian binary container: magic, version,
    iteration, optimizer header, config block, then named float64 records.
    Round trips are bit-exact.
    """
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", _VERSION))
    buf.write(struct.pack("<Q", state.iteration))
    opt = state.opt
    buf.write(struct.pack("<I", 0 if opt is None else 1))
    if opt is not None:
        buf.write(struct.pack("<Qdddd", opt.t, opt.lr, opt.beta1, opt.beta2, opt.eps))
    cfg_text = config_to_text(state.config).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg_text)))
    buf.write(cfg_text)

    records = [(name, t.data) for name, t in state.net.named_params()]
    if opt is not None:
        records += [(f"m:{k}", v) for k, v in opt.m.items()]
        records += [(f"v:{k}", v) for k, v in opt.v.items()]
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        _write_record(buf, name, arr)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def load_checkpoint(path: str) -> NetworkState:
    """Rebuild a :class:`NetworkState` from :func:`save_checkpoint` output.

    Fails closed: any parse problem raises :class:`CheckpointError` before
    a partially filled state can escape.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_MAGIC)) != _MAGIC:
            raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _VERSION:
            raise CheckpointError(f"{path}: unsupported format version {version}")
        (iteration,) = struct.unpack("<Q", _read_exact(fh, 8))
        (has_opt,) = struct.unpack("<I", _read_exact(fh, 4))
        opt = None
        if has_opt:
            t, lr, b1, b2, eps = struct.unpack("<Qdddd", _read_exact(fh, 40))
            opt = OptimState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t)
        (cfg_len,) = struct.unpack("<I", _read_exact(fh, 4))
        cfg = config_from_text(_read_exact(fh, cfg_len).decode("utf-8"))
        (n_records,) = struct.unpack("<I", _read_exact(fh, 4))
        records: dict[str, np.ndarray] = {}
        for _ in range(n_records):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
            shape = tuple(
                struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim)
            )
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape)
            records[name] = arr.astype(np.float64)

    net = Network(cfg)
    for name, t in net.named_params():
        if name not in records:
            raise CheckpointError(f"{path}: missing parameter record {name!r}")
        if records[name].shape != t.shape:
            raise CheckpointError(
                f"{path}: record {name!r} has shape {records[name].shape}, "
                f"expected {t.shape}"
            )
        t.data = records[name]
    if opt is not None:
        for name, _ in net.named_params():
            mk, vk = f"m:{name}", f"v:{name}"
            if mk in records:
                opt.m[name] = records[mk]
            if vk in records:
                opt.v[name] = records[vk]
    return NetworkState(net=net, iteration=iteration, opt=opt)


def ablation_config(kind: str, **overrides) -> NetworkConfig:
    """Named switch combinations: 'baseline', 'local', 'hierarchical'."""
    table = {
        "baseline": dict(scan_mode="raster", hierarchical=False),
        "local": dict(scan_mode="local", hierarchical=False),
        "hierarchical": dict(scan_mode="local", hierarchical=True),
    }
    if kind not in table:
        raise ConfigError(f"unknown ablation {kind!r}; pick from {sorted(table)}")
    return replace(NetworkConfig(**overrides), **table[kind])
