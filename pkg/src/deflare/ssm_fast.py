"""Optional numba kernels for the batched selective scan.

Single-pass fusions of discretization + recurrence (forward) and the
adjoint recurrence + parameter gradients (backward).  Semantics match the
numpy implementations in :mod:`deflare.ssm`; the test suite checks both.
Set ``DEFLARE_NO_JIT=1`` to force the numpy path.
"""

from __future__ import annotations

import os

import numpy as np

AVAILABLE = False
if os.environ.get("DEFLARE_NO_JIT", "") != "1":
    try:
        from numba import njit

        AVAILABLE = True
    except ImportError:  # pragma: no cover - depends on environment
        pass

if AVAILABLE:

    @njit(cache=True)
    def fwd_kernel(u, delta, b, c, a, d, y, a_bar, b_bar, hist):
        G, L, C = u.shape
        N = a.shape[1]
        for g in range(G):
            h = np.zeros((C, N))
            for k in range(L):
                for ci in range(C):
                    dt = delta[g, k, ci]
                    uu = u[g, k, ci]
                    acc = 0.0
                    for ni in range(N):
                        z = dt * a[g, ni]
                        ab = np.exp(z)
                        az = abs(z)
                        if az < 1e-12:
                            bb = dt * b[g, k, ni]
                        elif az < 1e-5:
                            bb = (1.0 + z * (0.5 + z / 6.0)) * b[g, k, ni]
                        else:
                            bb = (ab - 1.0) / z * b[g, k, ni]
                        hv = ab * h[ci, ni] + bb * uu
                        h[ci, ni] = hv
                        a_bar[g, k, ci, ni] = ab
                        b_bar[g, k, ci, ni] = bb
                        hist[g, k, ci, ni] = hv
                        acc += hv * c[g, k, ni]
                    y[g, k, ci] = acc + d[g] * uu

    @njit(cache=True)
    def bwd_kernel(u, delta, b, c, a, d, a_bar, b_bar, hist, gy,
                   gu, gdelta, gb, gc, ga, gd):
        G, L, C = u.shape
        N = a.shape[1]
        for g in range(G):
            gh = np.zeros((C, N))
            for k in range(L - 1, -1, -1):
                for ci in range(C):
                    gyv = gy[g, k, ci]
                    dt = delta[g, k, ci]
                    uu = u[g, k, ci]
                    gu_acc = d[g] * gyv
                    gdelta_acc = 0.0
                    for ni in range(N):
                        ghv = gh[ci, ni] * a_bar[g, k + 1, ci, ni] if k < L - 1 else 0.0
                        ghv += gyv * c[g, k, ni]
                        gh[ci, ni] = ghv

                        hprev = hist[g, k - 1, ci, ni] if k > 0 else 0.0
                        gz = ghv * hprev * a_bar[g, k, ci, ni]
                        g_bbar = ghv * uu
                        z = dt * a[g, ni]
                        ab = a_bar[g, k, ci, ni]
                        az = abs(z)
                        if az < 1e-12:
                            # small-step branch: b_bar = delta * b
                            gb[g, k, ni] += dt * g_bbar
                            gdelta_acc += b[g, k, ni] * g_bbar
                        else:
                            if az < 1e-5:
                                phi = 1.0 + z * (0.5 + z / 6.0)
                            else:
                                phi = (ab - 1.0) / z
                            if az < 1e-4:
                                phi_p = 0.5 + z * (1.0 / 3.0 + z * (0.125 + z / 30.0))
                            else:
                                phi_p = (ab * (z - 1.0) + 1.0) / (z * z)
                            gb[g, k, ni] += phi * g_bbar
                            gz += phi_p * b[g, k, ni] * g_bbar
                        gdelta_acc += gz * a[g, ni]
                        ga[g, ni] += gz * dt
                        gc[g, k, ni] += gyv * hist[g, k, ci, ni]
                        gu_acc += ghv * b_bar[g, k, ci, ni]
                    gu[g, k, ci] = gu_acc
                    gdelta[g, k, ci] = gdelta_acc
                    gd[g] += gyv * uu


def scan_forward(u, delta, b, c, a, d):
    G, L, C = u.shape
    n = a.shape[1]
    y = np.empty((G, L, C))
    a_bar = np.empty((G, L, C, n))
    b_bar = np.empty((G, L, C, n))
    hist = np.empty((G, L, C, n))
    fwd_kernel(u, delta, b, c, a, d, y, a_bar, b_bar, hist)
    return y, (a_bar, b_bar, hist)


def scan_backward(u, delta, b, c, a, d, saved, gy):
    a_bar, b_bar, hist = saved
    G, L, C = u.shape
    n = a.shape[1]
    gu = np.empty((G, L, C))
    gdelta = np.empty((G, L, C))
    gb = np.zeros((G, L, n))
    gc = np.zeros((G, L, n))
    ga = np.zeros((G, n))
    gd = np.zeros(G)
    bwd_kernel(u, delta, b, c, a, d, a_bar, b_bar, hist, gy,
               gu, gdelta, gb, gc, ga, gd)
    return gu, gdelta, gb, gc, ga, gd
