"""Self-contained property suites behind the ``check`` CLI command.

Each suite returns ``[(name, passed, detail), ...]`` so callers can print
one line per property and derive an exit code.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from . import ssm
from .network import NetworkConfig, fresh_state, load_checkpoint, save_checkpoint
from .scan import hier_partition_info, local_window_order
from .training import TrainConfig, build_dataset, loss_total


def _result(name, ok, detail=""):
    return (name, bool(ok), detail)


def suite_ssm(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []

    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        L = int(rng.integers(2, 65))
        a = -rng.uniform(0.2, 3.0, n)
        b = rng.uniform(-1, 1, n)
        c = rng.uniform(-1, 1, n)
        delta = float(rng.uniform(0.05, 1.0))
        d = ssm.discretize_zoh(a, b, np.full(L, delta), c=c, d=float(rng.uniform(-1, 1)))
        x = rng.uniform(-1, 1, L)
        diff = np.abs(ssm.scan_recurrent(d, x).y - ssm.kernel_convolve(d, x).y).max()
        worst = max(worst, diff)
    out.append(_result("recurrent-equals-convolution", worst <= 1e-10, f"max diff {worst:.2e}"))

    d = ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), np.log(2.0))
    ok = abs(d.a_bar[0, 0] - 0.5) <= 1e-12 and abs(d.b_bar[0, 0] - 0.5 / np.log(2)) <= 1e-12
    tiny = ssm.discretize_zoh(np.array([-1.0]), np.array([2.0]), 1e-13)
    ok = ok and abs(tiny.b_bar[0, 0] - 2e-13) <= 1e-12
    out.append(_result("zoh-closed-form", ok))

    violations = 0
    for _ in range(100):
        n = int(rng.integers(1, 9))
        L = 24
        a = -rng.uniform(0.2, 3.0, n)
        b = rng.uniform(0.2, 1.0, n)
        c = rng.uniform(0.2, 1.0, n)
        delta = rng.uniform(0.05, 0.8, L)
        d = ssm.discretize_zoh(a, b, delta, c=c)
        vals = [abs(ssm.contribution(d, 0, nn)) for nn in range(1, L)]
        if not all(vals[i] > vals[i + 1] for i in range(len(vals) - 1)):
            violations += 1
    out.append(_result("decay-monotonicity", violations == 0, f"{violations} violations"))

    d = ssm.discretize_zoh(np.array([-1.0, -2.0]), np.array([1.0, 1.0]),
                           np.full(4096, 0.1), c=np.array([1.0, 1.0]), d=0.5)
    y = ssm.scan_recurrent(d, rng.uniform(-1, 1, 4096)).y
    out.append(_result("stability-4096", np.all(np.isfinite(y)) and np.abs(y).max() < 1e3,
                       f"max |y| {np.abs(y).max():.3f}"))
    return out


def suite_scan(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []

    golden = [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
    out.append(_result("golden-4x4-window-2x2",
                       local_window_order(4, 4, 2, 2).forward.tolist() == golden))

    bad = 0
    for _ in range(50):
        h = int(rng.integers(1, 13))
        w = int(rng.integers(1, 13))
        wh = int(rng.integers(1, 9))
        ww = int(rng.integers(1, 9))
        o = local_window_order(h, w, wh, ww)
        if sorted(o.forward.tolist()) != list(range(h * w)):
            bad += 1
        if not np.array_equal(o.inverse[o.forward], np.arange(h * w)):
            bad += 1
    out.append(_result("window-order-bijective", bad == 0, f"{bad} failures"))

    bad = 0
    for h in (4, 5, 7, 16, 33):
        for w in (4, 6, 9, 33):
            for level in (1, 2, 3):
                part = hier_partition_info(h, w, level)
                covered = part.index[part.index >= 0]
                if sorted(covered.tolist()) != list(range(h * w)):
                    bad += 1
    out.append(_result("hier-exact-cover", bad == 0, f"{bad} failures"))
    return out


def suite_grad(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    out = []
    cases = {
        "exp": lambda t: ad.tsum(ad.texp(t)),
        "silu": lambda t: ad.tsum(ad.silu(t)),
        "softplus": lambda t: ad.tsum(ad.softplus(t)),
        "sigmoid": lambda t: ad.tsum(ad.sigmoid(t)),
        "mul": lambda t: ad.tsum(ad.mul(t, t)),
    }
    worst = 0.0
    for f in cases.values():
        x = Tensor(rng.uniform(-1, 1, (3, 4)))
        worst = max(worst, ad.grad_check(f, x, 1e-5))
    out.append(_result("primitive-gradients", worst <= 1e-4, f"max rel err {worst:.2e}"))

    cfg = NetworkConfig(base_channels=4, levels=2, state_size=4, window=(4, 4),
                        hier_levels=2, seed=3)
    state = fresh_state(cfg)
    pair = build_dataset(TrainConfig(image_h=8, image_w=8, dataset_seed=5,
                                     dataset_size=1))[0]
    names = [n for n, _ in state.net.named_params()]
    picks = rng.choice(len(names), size=5, replace=False)
    worst = 0.0
    params = dict(state.net.named_params())
    for pi in picks:
        p = params[names[pi]]
        flat_idx = int(rng.integers(p.data.size))
        ad.zero_grads(t for _, t in state.net.named_params())
        total, _ = loss_total(pair, state.net(pair.image))
        ad.backward(total)
        analytic = p.grad.reshape(-1)[flat_idx] if p.grad is not None else 0.0
        h = 1e-6
        orig = p.data.copy()
        with ad.no_grad():
            p.data = orig.copy()
            p.data.reshape(-1)[flat_idx] += h
            hi, _ = loss_total(pair, state.net(pair.image))
            p.data = orig.copy()
            p.data.reshape(-1)[flat_idx] -= h
            lo, _ = loss_total(pair, state.net(pair.image))
        p.data = orig
        numeric = (hi.item() - lo.item()) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    out.append(_result("network-gradient-sample", worst <= 1e-4, f"max rel err {worst:.2e}"))
    return out


def suite_net(seed: int = 0, tmpdir: str = ".") -> list:
    import os
    import tempfile

    out = []
    cfg = NetworkConfig(base_channels=4, levels=2, state_size=4, window=(4, 4), seed=seed)
    s1, s2 = fresh_state(cfg), fresh_state(cfg)
    img = np.random.default_rng(7).uniform(0, 1, (8, 8, 3))
    with ad.no_grad():
        a1, b1 = s1.net(img)
        a2, b2 = s2.net(img)
    ok = (a1.shape == (8, 8, 3) and b1.shape == (8, 8, 3)
          and np.array_equal(a1.data, a2.data) and np.array_equal(b1.data, b2.data))
    out.append(_result("forward-shape-and-determinism", ok))

    with tempfile.TemporaryDirectory(dir=tmpdir) as td:
        path = os.path.join(td, "ckpt.bin")
        save_checkpoint(s1, path)
        s3 = load_checkpoint(path)
        same = all(
            np.array_equal(t.data, dict(s3.net.named_params())[n].data)
            for n, t in s1.net.named_params()
        )
    out.append(_result("checkpoint-roundtrip", same))
    return out


SUITES = {
    "ssm": suite_ssm,
    "scan": suite_scan,
    "grad": suite_grad,
    "net": suite_net,
}


def run_suites(which: str = "all", seed: int = 0) -> list:
    names = list(SUITES) if which == "all" else [which]
    results = []
    for name in names:
        for prop in SUITES[name](seed):
            results.append((name, *prop))
    return results
