"""deflare: a desk-scale selective state space network for lens flare removal.

The package is organized bottom-up:

* :mod:`deflare.autodiff` -- float64 tensors and reverse-mode gradients;
* :mod:`deflare.ssm` -- diagonal state space models, exact zero-order-hold
  discretization, recurrent/convolutional evaluation and the selective scan;
* :mod:`deflare.scan` -- 2-D/1-D scan orders: local windows, four
  directions, hierarchical stride partitions;
* :mod:`deflare.blocks` / :mod:`deflare.network` -- the dual-branch modules
  and the U-shaped restoration network with checkpointing;
* :mod:`deflare.flare` -- synthetic paired flare imagery;
* :mod:`deflare.training` / :mod:`deflare.metrics` -- losses, Adam, the
  deterministic training loop, PSNR and SSIM;
* :mod:`deflare.cli` -- the ``deflare`` command.
"""

from .autodiff import Tensor, backward, grad_check, no_grad
from .flare import FlarePair, compose_pair, make_pair
from .metrics import psnr, ssim
from .network import (
    Network,
    NetworkConfig,
    NetworkState,
    ablation_config,
    fresh_state,
    load_checkpoint,
    save_checkpoint,
)
from .scan import (
    ScanOrder,
    directional_variants,
    hier_partition,
    hier_reverse,
    hier_scan,
    local_enhanced_ss2d,
    local_window_order,
)
from .ssm import (
    DiscreteSsm,
    SsmParams,
    SsmSequence,
    contribution,
    discretize_zoh,
    kernel_convolve,
    scan_recurrent,
    selective_scan,
)
from .training import LossBreakdown, TrainConfig, adam_step, loss_pair, loss_rec, loss_total, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "grad_check", "no_grad",
    "FlarePair", "compose_pair", "make_pair",
    "psnr", "ssim",
    "Network", "NetworkConfig", "NetworkState", "ablation_config",
    "fresh_state", "load_checkpoint", "save_checkpoint",
    "ScanOrder", "directional_variants", "hier_partition", "hier_reverse",
    "hier_scan", "local_enhanced_ss2d", "local_window_order",
    "DiscreteSsm", "SsmParams", "SsmSequence", "contribution",
    "discretize_zoh", "kernel_convolve", "scan_recurrent", "selective_scan",
    "LossBreakdown", "TrainConfig", "adam_step", "loss_pair", "loss_rec",
    "loss_total", "train",
]
