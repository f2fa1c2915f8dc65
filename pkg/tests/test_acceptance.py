"""Acceptance criteria, one test per criterion.

Each test prints one ``[criterion] ... PASS/FAIL`` line (run with ``-s`` or
``-rA`` to see them).  Budgeted criteria assert their runtime; the kernel
warmup fixture in conftest keeps one-time compilation out of the timings.

The two training criteria pin desk-scale benchmark configurations chosen
once and frozen: the smoke run uses an 8-channel 3-level network on 64x64
pairs, the ablation ordering a 6-channel 2-level network on 24x24 pairs
with a 0.9 dB seed-noise band measured over three init seeds per
configuration.
"""

import time

import numpy as np
import pytest

from deflare import autodiff as ad
from deflare import ssm
from deflare.flare import make_pair
from deflare.metrics import psnr, ssim
from deflare.network import NetworkConfig, ablation_config, fresh_state, load_checkpoint, save_checkpoint
from deflare.ppm import read_ppm_u8, write_ppm_u8
from deflare.scan import hier_partition_info, hier_scan, local_enhanced_ss2d, local_window_order
from deflare.ssm import SsmParams
from deflare.training import TrainConfig, build_dataset, format_metric_line, loss_total, train, train_psnr

import oracles


def report(name, ok, detail=""):
    print(f"[criterion] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name} failed {detail}"


def test_01_ssm_recurrent_convolution_equivalence(rng):
    t0 = time.monotonic()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        L = int(rng.integers(2, 65))
        d = ssm.discretize_zoh(
            -rng.uniform(0.2, 3.0, n), rng.uniform(-1, 1, n),
            np.full(L, float(rng.uniform(0.05, 1.0))),
            c=rng.uniform(-1, 1, n), d=float(rng.uniform(-1, 1)),
        )
        x = rng.uniform(-1, 1, L)
        worst = max(worst, float(np.abs(ssm.scan_recurrent(d, x).y
                                        - ssm.kernel_convolve(d, x).y).max()))
    elapsed = time.monotonic() - t0
    report("01 ssm-equivalence", worst <= 1e-10 and elapsed < 5.0,
           f"(max diff {worst:.2e}, {elapsed:.2f}s)")


def test_02_zoh_closed_form():
    d = ssm.discretize_zoh(np.array([-1.0]), np.array([1.0]), np.log(2.0))
    ok = abs(d.a_bar[0, 0] - 0.5) <= 1e-12
    ok &= abs(d.b_bar[0, 0] - 0.5 / np.log(2.0)) <= 1e-12
    tiny = ssm.discretize_zoh(np.array([-1.0]), np.array([3.0]), 1e-13)
    ok &= abs(tiny.b_bar[0, 0] - 3e-13) <= 1e-12
    report("02 zoh-closed-form", bool(ok))


def test_03_decay_monotonicity(rng):
    violations = 0
    for _ in range(100):
        n = int(rng.integers(1, 13))
        L = 24
        d = ssm.discretize_zoh(
            -rng.uniform(0.2, 3.0, n), rng.uniform(0.2, 1.0, n),
            rng.uniform(0.05, 0.8, L), c=rng.uniform(0.2, 1.0, n),
        )
        vals = [abs(ssm.contribution(d, 0, k)) for k in range(1, L)]
        if not all(u > v for u, v in zip(vals, vals[1:])):
            violations += 1
    report("03 decay-monotonicity", violations == 0, f"({violations} violations)")


def test_04_scan_geometry_golden_and_bijective(rng):
    golden = [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]
    ok = local_window_order(4, 4, 2, 2).forward.tolist() == golden
    failures = 0
    for _ in range(50):
        h, w = int(rng.integers(1, 14)), int(rng.integers(1, 14))
        wh, ww = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        o = local_window_order(h, w, wh, ww)
        if sorted(o.forward.tolist()) != list(range(h * w)):
            failures += 1
        if not np.array_equal(o.inverse[o.forward], np.arange(h * w)):
            failures += 1
        if o.forward.tolist() != [y * w + x
                                  for y, x in oracles.window_sequence(h, w, wh, ww)]:
            failures += 1
    report("04 scan-geometry", ok and failures == 0, f"({failures} failures)")


def test_05_hier_partition_cover_and_roundtrip(rng):
    failures = 0
    for h in (4, 5, 8, 11, 16, 21, 27, 33):
        for w in (4, 7, 12, 33):
            for level in (1, 2, 3):
                part = hier_partition_info(h, w, level)
                covered = part.index[part.index >= 0]
                if sorted(covered.tolist()) != list(range(h * w)):
                    failures += 1
                    continue
                from deflare.scan import hier_partition, hier_reverse
                f = ad.Tensor(rng.normal(size=(h, w, 2)))
                subs, p = hier_partition(f, level)
                if not np.array_equal(hier_reverse(subs, p).data, f.data):
                    failures += 1
    report("05 hier-partition", failures == 0, f"({failures} failures)")


def test_06_oracle_equivalence(rng):
    ssms = [SsmParams.init(3, 4, rng) for _ in range(4)]
    x8 = rng.uniform(-1, 1, (8, 8, 3))
    d_local = float(np.abs(local_enhanced_ss2d(ad.Tensor(x8), ssms, (4, 4)).data
                           - oracles.le_ss2d(x8, ssms, (4, 4))).max())
    levels = [[SsmParams.init(2, 3, rng) for _ in range(4)] for _ in range(2)]
    x16 = rng.uniform(-1, 1, (16, 16, 2))
    d_hier = float(np.abs(hier_scan(ad.Tensor(x16), levels, (4, 4)).data
                          - oracles.hier_scan(x16, levels, (4, 4))).max())
    report("06 oracle-equivalence", d_local <= 1e-10 and d_hier <= 1e-10,
           f"(local {d_local:.2e}, hier {d_hier:.2e})")


def test_07_full_network_gradient_check(rng):
    t0 = time.monotonic()
    cfg = NetworkConfig(base_channels=4, levels=2, state_size=4,
                        window=(4, 4), hier_levels=2, seed=21)
    state = fresh_state(cfg)
    pair = build_dataset(TrainConfig(image_h=16, image_w=16, dataset_seed=31,
                                     dataset_size=1))[0]
    params = list(state.net.named_params())

    ad.zero_grads(t for _, t in params)
    total, _ = loss_total(pair, state.net(pair.image))
    ad.backward(total)
    grads = {name: (np.zeros(p.shape) if p.grad is None else p.grad.copy())
             for name, p in params}

    worst = 0.0
    step = 1e-6
    picks = rng.integers(0, len(params), size=50)
    for pi in picks:
        name, p = params[int(pi)]
        idx = int(rng.integers(p.data.size))
        analytic = float(grads[name].reshape(-1)[idx])
        orig = p.data.copy()
        with ad.no_grad():
            p.data = orig.copy()
            p.data.reshape(-1)[idx] += step
            hi, _ = loss_total(pair, state.net(pair.image))
            p.data = orig.copy()
            p.data.reshape(-1)[idx] -= step
            lo, _ = loss_total(pair, state.net(pair.image))
        p.data = orig
        numeric = (hi.item() - lo.item()) / (2 * step)
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(analytic)))
    elapsed = time.monotonic() - t0
    report("07 network-gradient-check", worst <= 1e-4 and elapsed < 60.0,
           f"(max rel err {worst:.2e}, {elapsed:.1f}s)")


SMOKE_NET = NetworkConfig(base_channels=8, levels=3, state_size=8,
                          window=(8, 8), hier_levels=2, seed=7)
SMOKE_TRAIN = TrainConfig(iters=200, batch_size=2, lr=1e-4,
                          image_h=64, image_w=64, dataset_seed=100,
                          dataset_size=8, eval_every=0)


def test_08_smoke_training():
    t0 = time.monotonic()
    state, lbs = train(SMOKE_NET, SMOKE_TRAIN)
    elapsed = time.monotonic() - t0
    pairs = build_dataset(SMOKE_TRAIN)
    corrupted = float(np.mean([psnr(p.image, p.background) for p in pairs]))
    trained = train_psnr(state, pairs)
    drop = 1.0 - lbs[-1].total / lbs[0].total
    ok = drop >= 0.5 and trained >= corrupted + 3.0 and elapsed < 600.0
    report("08 smoke-training", ok,
           f"(loss drop {100 * drop:.0f}%, psnr {corrupted:.2f} -> {trained:.2f} dB, "
           f"{elapsed:.0f}s)")


ABLATION_SIZES = dict(base_channels=6, levels=2, state_size=6, window=(4, 4),
                      hier_levels=2, seed=13)
ABLATION_TRAIN = TrainConfig(iters=2000, batch_size=2, lr=1e-4,
                             image_h=24, image_w=24, dataset_seed=300,
                             dataset_size=8, eval_every=0)
# 2x the pooled per-config PSNR std over init seeds {11, 12, 13}, times
# sqrt(2) for a difference of two runs, rounded up
SEED_NOISE_BAND_DB = 0.9


def test_09_ablation_ordering():
    heldout = [make_pair(24, 24, 900 + i) for i in range(8)]

    def score(kind):
        cfg = ablation_config(kind, **ABLATION_SIZES)
        state, _ = train(cfg, ABLATION_TRAIN)
        vals = []
        with ad.no_grad():
            for p in heldout:
                i0_hat, _ = state.net(p.image)
                vals.append(psnr(np.clip(i0_hat.data, 0, 1), p.background))
        return float(np.mean(vals))

    base = score("baseline")
    local = score("local")
    hier = score("hierarchical")
    ok = (local >= base - SEED_NOISE_BAND_DB
          and hier >= local - SEED_NOISE_BAND_DB)
    report("09 ablation-ordering", ok,
           f"(baseline {base:.3f} <= local {local:.3f} <= hier {hier:.3f} dB, "
           f"band {SEED_NOISE_BAND_DB})")


def test_10_determinism_and_serialization(tmp_path):
    cfg = NetworkConfig(base_channels=4, levels=2, state_size=4,
                        window=(4, 4), seed=5)
    tcfg = TrainConfig(iters=25, dataset_size=4, image_h=16, image_w=16,
                       dataset_seed=50, eval_every=0)
    _, run_a = train(cfg, tcfg)
    _, run_b = train(cfg, tcfg)
    log_a = "\n".join(format_metric_line(i + 1, x) for i, x in enumerate(run_a))
    log_b = "\n".join(format_metric_line(i + 1, x) for i, x in enumerate(run_b))
    logs_equal = log_a.encode() == log_b.encode()

    state, _ = train(cfg, tcfg)
    path = str(tmp_path / "ckpt.bin")
    save_checkpoint(state, path)
    one_more = TrainConfig(iters=1, dataset_size=4, image_h=16, image_w=16,
                           dataset_seed=50, eval_every=0)
    _, direct = train(cfg, one_more, state=state)
    _, resumed = train(cfg, one_more, state=load_checkpoint(path))
    next_step_equal = (
        direct[0].total == resumed[0].total
        and direct[0].l_image == resumed[0].l_image
        and direct[0].l_flare == resumed[0].l_flare
        and direct[0].l_rec == resumed[0].l_rec
    )
    report("10 determinism-serialization", logs_equal and next_step_equal,
           f"(logs identical: {logs_equal}, resume bitwise: {next_step_equal})")


def test_11_metric_contracts(tmp_path, rng):
    a = np.full((32, 32, 3), 0.4)
    p = psnr(a, a + 0.1)
    psnr_ok = abs(p - 20.0) <= 0.01

    x = rng.uniform(0, 1, (24, 24, 3))
    ssim_ok = abs(ssim(x, x) - 1.0) <= 1e-9

    vals = np.arange(256, dtype=np.uint8)
    img = np.stack([vals.reshape(16, 16)] * 3, axis=2)
    path = str(tmp_path / "all.ppm")
    write_ppm_u8(path, img)
    ppm_ok = np.array_equal(read_ppm_u8(path), img)

    report("11 metric-contracts", psnr_ok and ssim_ok and ppm_ok,
           f"(psnr {p:.4f} dB, ssim 1.0, ppm bit-exact: {ppm_ok})")
