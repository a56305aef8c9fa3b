"""Hot numeric kernels: Euler path loops, with numba-jitted and pure-numpy builds.

The jitted build is the default. Set the environment variable
``BOUNDARYLIMITS_DISABLE_NUMBA=1`` before import to force the pure-numpy
fallback (useful for debugging and for the benchmark in
``benchmarks/bench_kernels.py``). Both builds consume pre-drawn Gaussian
increments, so results are bit-identical across the two paths.

Kernel conventions: ``z`` holds standard-normal draws of shape
(n_obs * refine, r); ``h_fine`` is the integration step; the returned array
has one row per fine step plus the initial state.
"""

import os

import numpy as np

DISABLE_NUMBA = os.environ.get("BOUNDARYLIMITS_DISABLE_NUMBA", "") not in ("", "0")


def _euler_constant_f(y0, drift, fa, h_fine, z):
    # dY = drift dt + (f a) dW with f constant: increments are iid; the loop
    # stays for parity with the state-dependent kernels.
    n_steps = z.shape[0]
    d = y0.shape[0]
    out = np.empty((n_steps + 1, d))
    out[0] = y0
    y = y0.copy()
    sqh = np.sqrt(h_fine)
    for i in range(n_steps):
        y = y + drift * h_fine + sqh * (fa @ z[i])
        out[i + 1] = y
    return out


def _euler_poly_iso(y0, drift, a, h_fine, z):
    # f(x) = (1 + |x|^2) I_m, d = m.
    n_steps = z.shape[0]
    d = y0.shape[0]
    out = np.empty((n_steps + 1, d))
    out[0] = y0
    y = y0.copy()
    sqh = np.sqrt(h_fine)
    for i in range(n_steps):
        scale = 1.0 + y @ y
        y = y + drift * h_fine + (sqh * scale) * (a @ z[i])
        out[i + 1] = y
    return out


def _euler_scalar_regressor(y0, drift0, a_row0, a_row1, h_fine, z):
    # d = 1, m = 2, f(x) = (1, x): dY = b dt + (a_row0 + x a_row1) . dW.
    n_steps = z.shape[0]
    out = np.empty(n_steps + 1)
    out[0] = y0
    y = y0
    sqh = np.sqrt(h_fine)
    for i in range(n_steps):
        g0 = a_row0[0] + y * a_row1[0]
        g1 = a_row0[1] + y * a_row1[1]
        y = y + drift0 * h_fine + sqh * (g0 * z[i, 0] + g1 * z[i, 1])
        out[i + 1] = y
    return out


if not DISABLE_NUMBA:
    try:
        from numba import njit

        _euler_constant_f = njit(cache=True)(_euler_constant_f)
        _euler_poly_iso = njit(cache=True)(_euler_poly_iso)
        _euler_scalar_regressor = njit(cache=True)(_euler_scalar_regressor)
        JIT_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        JIT_ENABLED = False
else:
    JIT_ENABLED = False


euler_constant_f = _euler_constant_f
euler_poly_iso = _euler_poly_iso
euler_scalar_regressor = _euler_scalar_regressor
