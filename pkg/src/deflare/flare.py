"""Synthetic flare imagery: procedural backgrounds, scattering and
reflective flare layers, and paired-sample composition.

Every generator is a pure function of its dimensions, parameters and seed,
so datasets regenerate exactly from integers.  Composition is additive in
linear intensity with clipping as the only nonlinearity:

    corrupted = clip01(background + flare)

Scattering flare is a radial glow plus angular streaks centered on the
light source (a local phenomenon).  Reflective flare places ghost disks
and rings on the line through the light source and the optical center, on
the far side of the center, which ties the artifact to a distant cause.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


@dataclass
class ScatterParams:
    glow_amp: float = 0.8
    glow_sigma: float = 0.18      # fraction of the image diagonal
    n_streaks: int = 4
    streak_amp: float = 0.35
    streak_width: float = 1.6     # pixels, perpendicular falloff
    streak_len: float = 0.5       # fraction of the diagonal
    tint: tuple = (1.0, 0.92, 0.78)


@dataclass
class ReflectParams:
    n_ghosts: int = 3
    amp: float = 0.35
    radius: float = 0.06          # fraction of the diagonal
    max_offset: float = 1.2       # ghost spacing along the mirror line
    rings: bool = True
    tint: tuple = (0.7, 0.85, 1.0)


@dataclass
class FlarePair:
    """A training triple: corrupted image, clean background, flare layer."""
    image: np.ndarray        # I  = clip01(background + flare)
    background: np.ndarray   # I0
    flare: np.ndarray        # F
    meta: dict = field(default_factory=dict)


def _grids(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return ys, xs


def gen_background(h: int, w: int, seed: int) -> np.ndarray:
    """A dim procedural scene: smooth gradients, a few shapes, mild noise."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xB6]))
    ys, xs = _grids(h, w)
    yn, xn = ys / max(h - 1, 1), xs / max(w - 1, 1)
    img = np.zeros((h, w, 3))
    corners = rng.uniform(0.02, 0.30, size=(4, 3))
    for c in range(3):
        img[:, :, c] = (
            corners[0, c] * (1 - yn) * (1 - xn) + corners[1, c] * (1 - yn) * xn
            + corners[2, c] * yn * (1 - xn) + corners[3, c] * yn * xn
        )
    for _ in range(rng.integers(3, 7)):
        color = rng.uniform(0.05, 0.65, size=3)
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, h), rng.integers(0, w)
            hh = int(rng.integers(max(2, h // 8), max(3, h // 2)))
            wwd = int(rng.integers(max(2, w // 8), max(3, w // 2)))
            img[y0:y0 + hh, x0:x0 + wwd] = 0.55 * img[y0:y0 + hh, x0:x0 + wwd] + 0.45 * color
        else:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            r = rng.uniform(min(h, w) / 12, min(h, w) / 4)
            mask = (ys - cy) ** 2 + (xs - cx) ** 2 <= r * r
            img[mask] = 0.55 * img[mask] + 0.45 * color
    img += rng.normal(0.0, 0.01, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def gen_scattering_flare(h: int, w: int, light_pos: tuple[float, float],
                         params: ScatterParams, seed: int) -> np.ndarray:
    """Radially symmetric glow plus angular streaks through the light source."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5C]))
    ly, lx = light_pos
    ys, xs = _grids(h, w)
    dy, dx = ys - ly, xs - lx
    diag = float(np.hypot(h, w))
    r2 = dy * dy + dx * dx

    sigma = max(params.glow_sigma * diag, 1e-6)
    layer = params.glow_amp * np.exp(-r2 / (2.0 * sigma * sigma))

    if params.n_streaks > 0 and params.streak_amp > 0:
        base = rng.uniform(0, np.pi)
        length = max(params.streak_len * diag, 1e-6)
        for i in range(params.n_streaks):
            theta = base + np.pi * i / params.n_streaks + rng.normal(0, 0.02)
            # signed distance to the streak line and distance along it
            perp = dx * np.sin(theta) - dy * np.cos(theta)
            par = dx * np.cos(theta) + dy * np.sin(theta)
            ridge = np.exp(-(perp * perp) / (2.0 * params.streak_width ** 2))
            ridge *= np.exp(-(par * par) / (2.0 * length * length))
            layer += params.streak_amp * ridge

    tint = np.asarray(params.tint, dtype=np.float64)
    return layer[:, :, None] * tint[None, None, :]


def gen_reflective_flare(h: int, w: int, light_pos: tuple[float, float],
                         params: ReflectParams, seed: int) -> np.ndarray:
    """Ghosts along the light-to-center line, past the center.

    A ghost with offset ratio t sits at ``center + t * (center - light)``;
    ratio 1 is the point reflection of the light source through the center.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9F]))
    ly, lx = light_pos
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = _grids(h, w)
    diag = float(np.hypot(h, w))
    out = np.zeros((h, w))
    if params.n_ghosts > 0 and params.amp > 0:
        ratios = np.sort(rng.uniform(0.25, params.max_offset, size=params.n_ghosts))
        ratios[-1] = min(1.0, params.max_offset)  # keep one ghost at the mirror point
        for i, t in enumerate(ratios):
            gy, gx = cy + t * (cy - ly), cx + t * (cx - lx)
            r = max(params.radius * diag * rng.uniform(0.6, 1.4), 0.75)
            d = np.hypot(ys - gy, xs - gx)
            if params.rings and i % 2 == 1:
                out += params.amp * np.exp(-((d - r) ** 2) / (2.0 * (0.25 * r) ** 2))
            else:
                out += params.amp * np.exp(-(d * d) / (2.0 * r * r))
    tint = np.asarray(params.tint, dtype=np.float64)
    return out[:, :, None] * tint[None, None, :]


def compose_pair(background: np.ndarray, flare: np.ndarray,
                 meta: dict | None = None) -> FlarePair:
    """``corrupted = clip01(background + flare)``, with generator metadata."""
    background = np.asarray(background, dtype=np.float64)
    flare = np.asarray(flare, dtype=np.float64)
    if background.shape != flare.shape:
        raise ShapeError(
            f"compose_pair: background {background.shape} vs flare {flare.shape}"
        )
    image = np.clip(background + flare, 0.0, 1.0)
    return FlarePair(image=image, background=background, flare=flare,
                     meta=dict(meta or {}))


def make_pair(h: int, w: int, seed: int) -> FlarePair:
    """One complete random training pair from a single integer seed."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA7]))
    light = (float(rng.uniform(0.1, 0.9) * (h - 1)), float(rng.uniform(0.1, 0.9) * (w - 1)))
    sp = ScatterParams(
        glow_amp=float(rng.uniform(0.5, 1.0)),
        glow_sigma=float(rng.uniform(0.10, 0.22)),
        n_streaks=int(rng.integers(2, 6)),
        streak_amp=float(rng.uniform(0.15, 0.4)),
        streak_width=float(rng.uniform(1.0, 2.5)),
        streak_len=float(rng.uniform(0.3, 0.7)),
    )
    rp = ReflectParams(
        n_ghosts=int(rng.integers(1, 4)),
        amp=float(rng.uniform(0.2, 0.45)),
        radius=float(rng.uniform(0.04, 0.09)),
    )
    background = gen_background(h, w, seed)
    flare = (
        gen_scattering_flare(h, w, light, sp, seed)
        + gen_reflective_flare(h, w, light, rp, seed)
    )
    meta = {
        "seed": int(seed),
        "light_y": light[0],
        "light_x": light[1],
        "glow_amp": sp.glow_amp,
        "glow_sigma": sp.glow_sigma,
        "n_streaks": sp.n_streaks,
        "n_ghosts": rp.n_ghosts,
    }
    return compose_pair(background, flare, meta)


def augment_pair(pair: FlarePair, rng: np.random.Generator) -> FlarePair:
    """Flips, 90-degree rotations and a global gain jitter on the flare layer."""
    bg, fl = pair.background, pair.flare
    k = int(rng.integers(0, 4))
    if k:
        bg, fl = np.rot90(bg, k, axes=(0, 1)), np.rot90(fl, k, axes=(0, 1))
    if rng.random() < 0.5:
        bg, fl = bg[:, ::-1], fl[:, ::-1]
    if rng.random() < 0.5:
        bg, fl = bg[::-1, :], fl[::-1, :]
    fl = fl * float(rng.uniform(0.8, 1.2))
    return compose_pair(np.ascontiguousarray(bg), np.ascontiguousarray(fl),
                        {**pair.meta, "augmented": 1})
