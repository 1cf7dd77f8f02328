"""Compiled per-node kernels for the time-stepping hot loops.

Each kernel reads only its input arrays and writes only its output arrays
(double buffering), so node order never changes the result. Reductions over
the per-node outputs are done afterwards with ``max``/``min``, which do not
depend on evaluation order.
"""

from __future__ import annotations

import os

import numba
import numpy as np
from numba import njit, prange

# The TBB layer shipped with some numba builds is too old; workqueue is always available.
numba.config.THREADING_LAYER = "workqueue"

PAD = 2


def configure_threads(value: str | int | None = None) -> int:
    """Apply the ``LAGFLOW_THREADS`` cap (0 or unset means use every available core)."""
    if value is None:
        value = os.environ.get("LAGFLOW_THREADS", "0")
    try:
        k = int(value)
    except ValueError as exc:
        raise ValueError(f"LAGFLOW_THREADS must be an integer, got {value!r}") from exc
    if k < 0:
        raise ValueError("LAGFLOW_THREADS must be >= 0")
    limit = numba.config.NUMBA_NUM_THREADS
    k = limit if k == 0 else min(k, limit)
    numba.set_num_threads(k)
    return k


@njit(cache=True, boundscheck=False)
def wrap_pad(f, out):
    """Copy ``f`` into ``out`` with a periodic halo of width PAD."""
    n = f.shape[0]
    for i in range(n + 2 * PAD):
        si = (i - PAD) % n
        for j in range(n + 2 * PAD):
            out[i, j] = f[si, (j - PAD) % n]


@njit(cache=True, parallel=True, boundscheck=False, error_model="numpy")
def torus_rhs(P, Q, lin, h, order, ru, rv, lam_out, jac_out):
    """Graphical MCF velocity g^{ij} w_ij for the padded displacement fields P=u, Q=v.

    Also writes the largest eigenvalue of g^{-1} (for the CFL bound) and the
    Jacobian f_x g_y - f_y g_x at every node.
    """
    n = ru.shape[0]
    inv2h = 0.5 / h
    inv12h = 1.0 / (12.0 * h)
    ih2 = 1.0 / (h * h)
    ih2_12 = ih2 / 12.0
    q2 = inv2h * inv2h
    q4 = inv12h * inv12h
    for i in prange(n):
        a = i + PAD
        for j in range(n):
            b = j + PAD
            if order == 2:
                ux = (P[a + 1, b] - P[a - 1, b]) * inv2h
                uy = (P[a, b + 1] - P[a, b - 1]) * inv2h
                vx = (Q[a + 1, b] - Q[a - 1, b]) * inv2h
                vy = (Q[a, b + 1] - Q[a, b - 1]) * inv2h
                uxx = (P[a - 1, b] - 2.0 * P[a, b] + P[a + 1, b]) * ih2
                uyy = (P[a, b - 1] - 2.0 * P[a, b] + P[a, b + 1]) * ih2
                vxx = (Q[a - 1, b] - 2.0 * Q[a, b] + Q[a + 1, b]) * ih2
                vyy = (Q[a, b - 1] - 2.0 * Q[a, b] + Q[a, b + 1]) * ih2
                uxy = ((P[a + 1, b + 1] - P[a + 1, b - 1]) - (P[a - 1, b + 1] - P[a - 1, b - 1])) * q2
                vxy = ((Q[a + 1, b + 1] - Q[a + 1, b - 1]) - (Q[a - 1, b + 1] - Q[a - 1, b - 1])) * q2
            else:
                ux = (P[a - 2, b] - 8.0 * P[a - 1, b] + 8.0 * P[a + 1, b] - P[a + 2, b]) * inv12h
                uy = (P[a, b - 2] - 8.0 * P[a, b - 1] + 8.0 * P[a, b + 1] - P[a, b + 2]) * inv12h
                vx = (Q[a - 2, b] - 8.0 * Q[a - 1, b] + 8.0 * Q[a + 1, b] - Q[a + 2, b]) * inv12h
                vy = (Q[a, b - 2] - 8.0 * Q[a, b - 1] + 8.0 * Q[a, b + 1] - Q[a, b + 2]) * inv12h
                uxx = (-P[a - 2, b] + 16.0 * P[a - 1, b] - 30.0 * P[a, b] + 16.0 * P[a + 1, b] - P[a + 2, b]) * ih2_12
                uyy = (-P[a, b - 2] + 16.0 * P[a, b - 1] - 30.0 * P[a, b] + 16.0 * P[a, b + 1] - P[a, b + 2]) * ih2_12
                vxx = (-Q[a - 2, b] + 16.0 * Q[a - 1, b] - 30.0 * Q[a, b] + 16.0 * Q[a + 1, b] - Q[a + 2, b]) * ih2_12
                vyy = (-Q[a, b - 2] + 16.0 * Q[a, b - 1] - 30.0 * Q[a, b] + 16.0 * Q[a, b + 1] - Q[a, b + 2]) * ih2_12
                uxy = 0.0
                vxy = 0.0
                for s in range(-2, 3):
                    if s == 0:
                        continue
                    ws = -8.0 * s if abs(s) == 1 else 0.5 * s
                    pu = 0.0
                    pv = 0.0
                    for r in range(-2, 3):
                        if r == 0:
                            continue
                        wr = -8.0 * r if abs(r) == 1 else 0.5 * r
                        pu += wr * P[a + s, b + r]
                        pv += wr * Q[a + s, b + r]
                    uxy += ws * pu
                    vxy += ws * pv
                # weights above are the negated (1, -8, 0, 8, -1) stencil; the sign squares away
                uxy *= q4
                vxy *= q4
            fx = lin[0, 0] + ux
            fy = lin[0, 1] + uy
            gx = lin[1, 0] + vx
            gy = lin[1, 1] + vy
            g11 = 1.0 + fx * fx + gx * gx
            g22 = 1.0 + fy * fy + gy * gy
            g12 = fx * fy + gx * gy
            det = g11 * g22 - g12 * g12
            i11 = g22 / det
            i22 = g11 / det
            i12 = -g12 / det
            ru[i, j] = i11 * uxx + 2.0 * i12 * uxy + i22 * uyy
            rv[i, j] = i11 * vxx + 2.0 * i12 * vxy + i22 * vyy
            lam_out[i, j] = 0.5 * (i11 + i22) + np.sqrt(0.25 * (i11 - i22) ** 2 + i12 * i12)
            jac_out[i, j] = fx * gy - fy * gx
