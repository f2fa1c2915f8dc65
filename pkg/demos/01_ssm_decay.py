#!/usr/bin/env python3
"""State space basics: exact discretization, the convolution kernel view,
and how far a token's influence reaches.

Run:  python demos/01_ssm_decay.py
"""

import numpy as np

from deflare import ssm

# A one-state continuous system dx/dt = -x + u, read out directly.
# Discretized with step log(2) the state halves every step.
d = ssm.discretize_zoh(a=np.array([-1.0]), b=np.array([1.0]),
                       delta=np.full(8, np.log(2.0)),
                       c=np.array([1.0]), d=0.0)
print("a_bar per step:", d.a_bar[0])
print("b_bar per step:", d.b_bar[0])

# Impulse response two ways: the sequential recurrence and the causal
# kernel.  For time-invariant parameters they agree to machine precision.
impulse = np.zeros(8)
impulse[0] = 1.0
rec = ssm.scan_recurrent(d, impulse).y
kern = ssm.kernel_convolve(d, impulse).y
print("\nimpulse response (recurrence): ", np.round(rec, 6))
print("impulse response (convolution):", np.round(kern, 6))
print("kernel coefficients:           ", np.round(ssm.ssm_kernel(d), 6))
print("max difference:", np.abs(rec - kern).max())

# The influence of token m on output n shrinks geometrically with the
# token distance; this is what makes naive long sequences forgetful and
# motivates scan orders that keep related pixels close together.
print("\ncontribution of token 0 to outputs 1..7:")
for n in range(1, 8):
    print(f"  distance {n}: {ssm.contribution(d, 0, n):.6f}")

# Selection makes the step size (and so the decay) input dependent.
rng = np.random.default_rng(0)
params = ssm.SsmParams.init(channels=1, state_size=4, rng=rng)
quiet = ssm.selective_scan(params, np.full((12, 1), 0.05)).y
loud = ssm.selective_scan(params, np.full((12, 1), 2.0)).y
print("\nselective scan, constant quiet input:", np.round(quiet[:4, 0], 4))
print("selective scan, constant loud input: ", np.round(loud[:4, 0], 4))
