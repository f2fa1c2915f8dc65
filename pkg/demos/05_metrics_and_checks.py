#!/usr/bin/env python3
"""PSNR/SSIM behavior and the built-in property suites.

Run:  python demos/05_metrics_and_checks.py
"""

import numpy as np

from deflare import checks, metrics

rng = np.random.default_rng(0)
x = rng.uniform(0.2, 0.8, (64, 64, 3))

print("psnr(x, x)          =", metrics.psnr(x, x), "dB (capped)")
print("ssim(x, x)          =", metrics.ssim(x, x))
for sigma in (0.01, 0.05, 0.2):
    noisy = np.clip(x + rng.normal(0, sigma, x.shape), 0, 1)
    print(f"noise sigma {sigma:4.2f}: psnr {metrics.psnr(x, noisy):6.2f} dB, "
          f"ssim {metrics.ssim(x, noisy):.4f}")

print("closed form check  : psnr(0.4, 0.5) =",
      round(metrics.psnr(np.full((8, 8, 3), 0.4), np.full((8, 8, 3), 0.5)), 2),
      "dB (expect 20.0)")

# The same property suites back `deflare check`.
print("\nproperty suites:")
for suite, name, ok, detail in checks.run_suites("ssm"):
    print(f"  {'PASS' if ok else 'FAIL'} {suite}:{name} {detail}")
