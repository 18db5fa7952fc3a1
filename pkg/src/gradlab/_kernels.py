"""Compiled heat-bath kernels for V(t) = t²/2 + eps·(cos t − 1) (eps = 0: quadratic).

Every move resamples a scalar t from a density ∝ exp(−Σ_k V(d_k + s_k t))
by rejection against the Gaussian tangent envelope of precision λ·Σ s_k²,
which is a valid lower bound on the energy because V'' ≥ λ.  Single-site
updates have s_k = 1 over the four incident edges; block moves shift a whole
block by t and see only the edges crossing its boundary.

Each kernel call seeds numba's generator itself so that a call is a
deterministic function of its inputs, also when run from worker threads.
"""
from __future__ import annotations

import math

import numba
import numpy as np

OK = 0
ENVELOPE_EXHAUSTED = 1
ENVELOPE_VIOLATED = 2


@numba.njit(cache=True, nogil=True)
def _energy(d, n, t, eps):
    h = 0.0
    g = 0.0
    c = 0.0
    for k in range(n):
        x = d[k] + t
        if eps != 0.0:
            cs = math.cos(x)
            h += 0.5 * x * x + eps * (cs - 1.0)
            g += x - eps * math.sin(x)
            c += 1.0 - eps * cs
        else:
            h += 0.5 * x * x
            g += x
            c += 1.0
    return h, g, c


@numba.njit(cache=True, nogil=True)
def _draw_shift(d, n, eps, lam, max_prop, diag):
    """Sample t ∝ exp(−Σ_k V(d_k + t)); diag = [proposals, violations, status]."""
    t = 0.0
    for k in range(n):
        t -= d[k]
    t /= n
    if eps != 0.0:
        for _ in range(2):
            _, g, c = _energy(d, n, t, eps)
            t -= g / c
    h0, g0, _ = _energy(d, n, t, eps)
    prec = n * lam
    mean = t - g0 / prec
    sd = 1.0 / math.sqrt(prec)
    for _ in range(max_prop):
        u = mean + sd * np.random.standard_normal()
        diag[0] += 1
        if eps == 0.0 and lam == 1.0:
            return u
        hu, _, _ = _energy(d, n, u, eps)
        gap = hu - (h0 + g0 * (u - t) + 0.5 * prec * (u - t) ** 2)
        if gap < -1e-9 * (1.0 + abs(hu)):
            diag[1] += 1
        if np.random.random() < math.exp(-gap):
            return u
    diag[2] = ENVELOPE_EXHAUSTED
    return t


@numba.njit(cache=True, nogil=True)
def _site_pass(phi, interior, eps, lam, max_prop, diag):
    nx, ny = phi.shape
    d = np.empty(4)
    for parity in range(2):
        for i in range(1, nx - 1):
            for j in range(1, ny - 1):
                if (i + j) % 2 != parity or not interior[i, j]:
                    continue
                x = phi[i, j]
                d[0] = x - phi[i - 1, j]
                d[1] = x - phi[i + 1, j]
                d[2] = x - phi[i, j - 1]
                d[3] = x - phi[i, j + 1]
                t = _draw_shift(d, 4, eps, lam, max_prop, diag)
                if diag[2] != OK:
                    return
                phi[i, j] = x + t


@numba.njit(cache=True, nogil=True)
def _block_pass(phi, interior, b, ox, oy, eps, lam, max_prop, diag, buf):
    """Shift each block [x0, x0+b) × [y0, y0+b) ∩ interior by an exact conditional draw."""
    nx, ny = phi.shape
    x0 = -ox
    while x0 < nx:
        y0 = -oy
        while y0 < ny:
            xa = max(x0, 0)
            xb = min(x0 + b, nx)
            ya = max(y0, 0)
            yb = min(y0 + b, ny)
            n = 0
            for i in range(xa, xb):
                for j in range(ya, yb):
                    if not interior[i, j]:
                        continue
                    x = phi[i, j]
                    # neighbors outside the moving set (rect ∩ interior) give crossing edges
                    if not (i - 1 >= xa and interior[i - 1, j]):
                        buf[n] = x - phi[i - 1, j]
                        n += 1
                    if not (i + 1 < xb and interior[i + 1, j]):
                        buf[n] = x - phi[i + 1, j]
                        n += 1
                    if not (j - 1 >= ya and interior[i, j - 1]):
                        buf[n] = x - phi[i, j - 1]
                        n += 1
                    if not (j + 1 < yb and interior[i, j + 1]):
                        buf[n] = x - phi[i, j + 1]
                        n += 1
            if n > 0:
                t = _draw_shift(buf, n, eps, lam, max_prop, diag)
                if diag[2] != OK:
                    return
                for i in range(xa, xb):
                    for j in range(ya, yb):
                        if interior[i, j]:
                            phi[i, j] += t
            y0 += b
        x0 += b


@numba.njit(cache=True, nogil=True)
def sweep(phi, interior, eps, lam, seed, n_sweeps, levels, max_prop, diag):
    """``n_sweeps`` sweeps: checkerboard site pass, then block passes b = 2, 4, …, 2^levels."""
    np.random.seed(seed)
    nx, ny = phi.shape
    buf = np.empty(4 * nx * ny)
    for _ in range(n_sweeps):
        _site_pass(phi, interior, eps, lam, max_prop, diag)
        if diag[2] != OK:
            return
        for lev in range(1, levels + 1):
            b = 1 << lev
            ox = np.random.randint(0, b)
            oy = np.random.randint(0, b)
            _block_pass(phi, interior, b, ox, oy, eps, lam, max_prop, diag, buf)
            if diag[2] != OK:
                return
