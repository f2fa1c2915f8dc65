"""Losses, the Adam optimizer, and the deterministic training loop.

The paired loss is L1 plus a lightweight perceptual proxy: L1 between
Gaussian-pyramid features of prediction and target (three scales, binomial
5-tap blur + decimation), weighted 0.1.  The proxy replaces a pretrained
feature network on purpose; it keeps the package dependency-free and it is
switchable via ``perceptual_weight=0``.

Training is a pure function of its seeds: data pairs come from integer
seeds, batch membership is derived from the iteration counter, and the
metric log formats every line identically, so reruns are byte-identical
and a checkpoint resume reproduces the interrupted run bitwise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError, TrainingError
from .flare import FlarePair, augment_pair, make_pair
from .metrics import psnr
from .network import NetworkConfig, NetworkState, fresh_state

log = logging.getLogger("deflare")

_BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
_PYRAMID_SCALES = 3


@dataclass
class LossBreakdown:
    """One iteration's loss terms; ``total`` recomposes from the parts."""
    l_image: float
    l_flare: float
    l_rec: float
    total: float
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0


@dataclass
class TrainConfig:
    iters: int = 200
    batch_size: int = 2
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    image_h: int = 64
    image_w: int = 64
    dataset_seed: int = 1
    dataset_size: int = 8
    w1: float = 1.0
    w2: float = 1.0
    w3: float = 1.0
    perceptual_weight: float = 0.1
    augment: bool = False
    eval_every: int = 50


def _l1(a: Tensor, b: Tensor) -> Tensor:
    return ad.tmean(ad.tabs(ad.sub(a, b)))


def _blur_down(x: Tensor) -> Tensor:
    # Binomial blur with replicate padding (preserves constants exactly),
    # then 2x decimation.
    c = x.shape[2]
    kernel = Tensor(np.broadcast_to(np.outer(_BINOMIAL5, _BINOMIAL5)[:, :, None],
                                    (5, 5, c)).copy())
    return ad.subsample2(ad.conv2d(ad.pad_edge2d(x, 2), kernel, padding="valid"))


def pyramid(x: Tensor, scales: int = _PYRAMID_SCALES) -> list[Tensor]:
    """Successively blurred and decimated copies of ``x`` (coarse features)."""
    out = []
    cur = x
    for _ in range(scales):
        cur = _blur_down(cur)
        out.append(cur)
    return out


def loss_pair(y_hat: Tensor, y, perceptual_weight: float = 0.1) -> Tensor:
    """L1 plus the weighted pyramid proxy between prediction and target."""
    y_hat = ad.as_tensor(y_hat)
    y = ad.as_tensor(y)
    if y_hat.shape != y.shape:
        raise ShapeError(f"loss_pair: shapes {y_hat.shape} and {y.shape} differ")
    total = _l1(y_hat, y)
    if perceptual_weight > 0.0:
        terms = [
            _l1(ph, pt) for ph, pt in zip(pyramid(y_hat), pyramid(y))
        ]
        proxy = terms[0]
        for t in terms[1:]:
            proxy = ad.add(proxy, t)
        total = ad.add(total, ad.scale(proxy, perceptual_weight / len(terms)))
    return total


def loss_rec(image, i0_hat: Tensor, f_hat: Tensor) -> Tensor:
    """Mean absolute error between the input and the recomposed prediction."""
    image = ad.as_tensor(image)
    if i0_hat.shape != f_hat.shape or image.shape != i0_hat.shape:
        raise ShapeError(
            f"loss_rec: shapes {image.shape}, {i0_hat.shape}, {f_hat.shape} differ"
        )
    return _l1(image, ad.clip01(ad.add(i0_hat, f_hat)))


def loss_total(pair: FlarePair, outputs, w1: float = 1.0, w2: float = 1.0,
               w3: float = 1.0, perceptual_weight: float = 0.1):
    """Weighted sum of the two paired losses and the reconstruction term.

    Returns ``(total, breakdown)``; the tensor stays connected to the graph
    while the breakdown holds plain floats for logging.
    """
    i0_hat, f_hat = outputs
    li = loss_pair(i0_hat, pair.background, perceptual_weight)
    lf = loss_pair(f_hat, pair.flare, perceptual_weight)
    lr = loss_rec(pair.image, i0_hat, f_hat)
    total = ad.add(ad.add(ad.scale(li, w1), ad.scale(lf, w2)), ad.scale(lr, w3))
    breakdown = LossBreakdown(
        l_image=li.item(), l_flare=lf.item(), l_rec=lr.item(),
        total=total.item(), w1=w1, w2=w2, w3=w3,
    )
    return total, breakdown


def adam_step(state: NetworkState) -> None:
    """One bias-corrected Adam update over every parameter's ``.grad``."""
    opt = state.opt
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.t
    c2 = 1.0 - b2 ** opt.t
    for name, p in state.net.named_params():
        g = p.grad
        if g is None:
            g = np.zeros(p.shape)
        elif not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = opt.m.get(name)
        v = opt.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        opt.m[name] = m
        opt.v[name] = v
        p.data = p.data - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


def format_metric_line(iteration: int, lb: LossBreakdown) -> str:
    return (f"{iteration}, {lb.l_image:.6f}, {lb.l_flare:.6f}, "
            f"{lb.l_rec:.6f}, {lb.total:.6f}")


def write_metric_log(path: str, breakdowns: list[LossBreakdown],
                     start_iteration: int = 0) -> None:
    with open(path, "w") as fh:
        for i, lb in enumerate(breakdowns, start=start_iteration + 1):
            fh.write(format_metric_line(i, lb) + "\n")


def build_dataset(cfg: TrainConfig) -> list[FlarePair]:
    return [
        make_pair(cfg.image_h, cfg.image_w, cfg.dataset_seed + i)
        for i in range(cfg.dataset_size)
    ]


def train_psnr(state: NetworkState, pairs: list[FlarePair]) -> float:
    """Mean PSNR of the clipped flare-free prediction over ``pairs``."""
    vals = []
    with ad.no_grad():
        for pair in pairs:
            i0_hat, _ = state.net(pair.image)
            vals.append(psnr(np.clip(i0_hat.data, 0, 1), pair.background))
    return float(np.mean(vals))


def train(net_config: NetworkConfig, train_config: TrainConfig,
          state: NetworkState | None = None):
    """Run the training loop; returns ``(state, breakdowns)``.

    When ``state`` is given, training resumes from its iteration counter.
    Everything downstream of (configs, seeds, start iteration) is
    deterministic, including batch membership and augmentation draws.
    """
    cfg = train_config
    if state is None:
        state = fresh_state(net_config, lr=cfg.lr)
    state.opt.lr = cfg.lr
    state.opt.beta1, state.opt.beta2, state.opt.eps = cfg.beta1, cfg.beta2, cfg.eps
    pairs = build_dataset(cfg)
    params = list(state.net.named_params())
    breakdowns: list[LossBreakdown] = []

    for step in range(cfg.iters):
        iteration = state.iteration + 1
        ad.zero_grads(t for _, t in params)
        batch_lbs = []
        for j in range(cfg.batch_size):
            idx = ((iteration - 1) * cfg.batch_size + j) % len(pairs)
            pair = pairs[idx]
            if cfg.augment:
                rng = np.random.default_rng(
                    np.random.SeedSequence([cfg.dataset_seed, iteration, j])
                )
                pair = augment_pair(pair, rng)
            outputs = state.net(pair.image)
            total, lb = loss_total(pair, outputs, cfg.w1, cfg.w2, cfg.w3,
                                   cfg.perceptual_weight)
            if not np.isfinite(lb.total):
                raise TrainingError(
                    f"non-finite loss at iteration {iteration}: "
                    f"l_image={lb.l_image} l_flare={lb.l_flare} l_rec={lb.l_rec}"
                )
            ad.backward(ad.scale(total, 1.0 / cfg.batch_size))
            batch_lbs.append(lb)
        adam_step(state)
        state.iteration = iteration
        mean_lb = LossBreakdown(
            l_image=float(np.mean([b.l_image for b in batch_lbs])),
            l_flare=float(np.mean([b.l_flare for b in batch_lbs])),
            l_rec=float(np.mean([b.l_rec for b in batch_lbs])),
            total=float(np.mean([b.total for b in batch_lbs])),
            w1=cfg.w1, w2=cfg.w2, w3=cfg.w3,
        )
        breakdowns.append(mean_lb)
        log.debug("%s", format_metric_line(iteration, mean_lb))
        if cfg.eval_every and iteration % cfg.eval_every == 0:
            log.info("iter %d train-set psnr %.3f dB", iteration,
                     train_psnr(state, pairs))
    return state, breakdowns
