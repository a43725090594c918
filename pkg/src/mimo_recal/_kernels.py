"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time: numba is used whenever it can be
imported, unless the environment variable ``MIMO_RECAL_NO_NUMBA`` is set to a
truthy value ("1", "true", "yes", "on").  Every public function in this module
behaves identically on both backends; ``benchmarks/bench_kernels.py`` compares
their throughput.

The scalar special functions here (erfcx, scaled E1, the Bussgang gain and
distortion-variance curves) are written so the same source compiles under
``@numba.njit`` and runs as plain Python.  The array entry points either wrap
the scalars with ``numba.vectorize`` or use masked vectorised numpy.
"""

from __future__ import annotations

import math
import os

import numpy as np

_ENV_FLAG = "MIMO_RECAL_NO_NUMBA"

_SQRT_PI = math.sqrt(math.pi)
_EULER_GAMMA = 0.5772156649015328606


def _numba_disabled() -> bool:
    return os.environ.get(_ENV_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


try:
    if _numba_disabled():
        raise ImportError("numba disabled via MIMO_RECAL_NO_NUMBA")
    import numba as _nb

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via env flag in CI
    _nb = None
    HAVE_NUMBA = False

BACKEND = "numba" if HAVE_NUMBA else "numpy"


def backend_name() -> str:
    """Active kernel backend, either ``"numba"`` or ``"numpy"``."""
    return BACKEND


# ---------------------------------------------------------------------------
# scalar special functions (njit-compatible source)
# ---------------------------------------------------------------------------


def _erfcx_scalar(x: float) -> float:
    # x >= 0.  Maclaurin series of erf below the crossover, Laplace continued
    # fraction above; the crossover keeps both branches at ~1e-15 relative.
    if x < 2.0:
        x2 = x * x
        term = x
        acc = x
        k = 1
        while k < 80:
            term *= -x2 / k
            delta = term / (2 * k + 1)
            acc += delta
            if abs(delta) < 1e-18 * abs(acc):
                break
            k += 1
        erf = 2.0 / _SQRT_PI * acc
        return (1.0 - erf) * math.exp(x2)
    # modified Lentz on F = x + (1/2)/(x + 1/(x + (3/2)/(x + ...)))
    f = x
    c = x
    d = 0.0
    for n in range(1, 300):
        a = 0.5 * n
        d = x + a * d
        if d == 0.0:
            d = 1e-300
        c = x + a / c
        if c == 0.0:
            c = 1e-300
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return 1.0 / (_SQRT_PI * f)


def _e1_scaled_scalar(y: float) -> float:
    # exp(y) * E1(y) for y > 0.  Power series below 1, Lentz continued
    # fraction above (the even form used by the classic expint routine).
    if y <= 1.0:
        acc = -_EULER_GAMMA - math.log(y)
        term = 1.0
        k = 1
        while k < 60:
            term *= -y / k
            delta = -term / k
            acc += delta
            if abs(delta) < 1e-18 * abs(acc):
                break
            k += 1
        return math.exp(y) * acc
    b = y + 1.0
    c = 1e300
    d = 1.0 / b
    h = d
    for i in range(1, 400):
        a = -float(i) * i
        b += 2.0
        d = 1.0 / (a * d + b)
        c = b + a / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def _mu_scalar(x: float) -> float:
    # Bussgang linear gain of the smooth envelope limiter for a complex
    # Gaussian input with saturation-to-rms ratio x.  The closed form
    # (x/2) * [2x - sqrt(pi) erfcx(x) (2x^2 - 1)] cancels catastrophically for
    # large x, so beyond 50 the asymptotic series 1 - u + 2.25u^2 - ... with
    # u = 1/x^2 takes over (relative error < 1e-13 at the crossover).
    if x == 0.0:
        return 0.0
    if x > 50.0:
        inv = 1.0 / x
        u = inv * inv
        return 1.0 + u * (-1.0 + u * (2.25 + u * (-7.5 + u * 32.8125)))
    bracket = 2.0 * x - _SQRT_PI * _erfcx_scalar(x) * (2.0 * x * x - 1.0)
    return 0.5 * x * bracket


def _lam_scalar(a_sat: float, sigma: float) -> float:
    # Distortion variance per unit |t|^2: A^2 + (A^4/s^2) e^{y} Ei(-y) - s^2 mu^2
    # with y = A^2/s^2.  Uses the scaled E1  (e^{y} Ei(-y) = -e1_scaled(y)) and
    # an asymptotic branch past a_sat/sigma = 25 where the direct form cancels.
    a = a_sat / sigma
    if a > 25.0:
        inv = 1.0 / a
        u = inv * inv
        u2 = u * u
        val = sigma * sigma * u2 * (0.5 + u * (-4.5 + u * 34.3125))
        return val if val > 0.0 else 0.0
    y = a * a
    mu = _mu_scalar(a)
    val = a_sat * a_sat - (a_sat ** 4 / (sigma * sigma)) * _e1_scaled_scalar(y) - sigma * sigma * mu * mu
    return val if val > 0.0 else 0.0


# ---------------------------------------------------------------------------
# vectorised numpy fallbacks
# ---------------------------------------------------------------------------


def _erfcx_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    small = x < 2.0
    if np.any(small):
        xs = x[small]
        x2 = xs * xs
        term = xs.copy()
        acc = xs.copy()
        for k in range(1, 80):
            term *= -x2 / k
            acc += term / (2 * k + 1)
        erf = 2.0 / _SQRT_PI * acc
        out[small] = (1.0 - erf) * np.exp(x2)
    if np.any(~small):
        xl = x[~small]
        # backward evaluation of the continued fraction, depth 160 covers x>=2
        t = xl.copy()
        for n in range(160, 0, -1):
            t = xl + (0.5 * n) / t
        out[~small] = 1.0 / (_SQRT_PI * t)
    return out


def _e1_scaled_np(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    out = np.empty_like(y)
    small = y <= 1.0
    if np.any(small):
        ys = y[small]
        acc = -_EULER_GAMMA - np.log(ys)
        term = np.ones_like(ys)
        for k in range(1, 60):
            term *= -ys / k
            acc -= term / k
        out[small] = np.exp(ys) * acc
    if np.any(~small):
        yl = y[~small]
        # backward recurrence of F = (y+1) - 1/((y+3) - 4/((y+5) - ...))
        depth = 220
        t = yl + (2.0 * depth + 1.0)
        for i in range(depth, 0, -1):
            t = (yl + (2.0 * i - 1.0)) - (i * i) / t
        out[~small] = 1.0 / t
    return out


def _mu_np(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    large = x > 50.0
    if np.any(large):
        u = (1.0 / x[large]) ** 2
        out[large] = 1.0 + u * (-1.0 + u * (2.25 + u * (-7.5 + u * 32.8125)))
    rest = ~large
    if np.any(rest):
        xr = x[rest]
        bracket = 2.0 * xr - _SQRT_PI * _erfcx_np(xr) * (2.0 * xr * xr - 1.0)
        out[rest] = 0.5 * xr * bracket
    return out


def _lam_np(a_sat: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    a_sat = np.asarray(a_sat, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    a_sat, sigma = np.broadcast_arrays(a_sat, sigma)
    a = a_sat / sigma
    out = np.empty_like(a)
    large = a > 25.0
    if np.any(large):
        u = (1.0 / a[large]) ** 2
        out[large] = sigma[large] ** 2 * u * u * (0.5 + u * (-4.5 + u * 34.3125))
    rest = ~large
    if np.any(rest):
        ar = a[rest]
        sr = sigma[rest]
        Ar = a_sat[rest]
        mu = _mu_np(ar)
        out[rest] = Ar ** 2 - (Ar ** 4 / sr ** 2) * _e1_scaled_np(ar * ar) - sr ** 2 * mu * mu
    return np.maximum(out, 0.0)


# ---------------------------------------------------------------------------
# backend wiring
# ---------------------------------------------------------------------------

if HAVE_NUMBA:
    _erfcx_scalar = _nb.njit(cache=True)(_erfcx_scalar)
    _e1_scaled_scalar = _nb.njit(cache=True)(_e1_scaled_scalar)
    _mu_scalar = _nb.njit(cache=True)(_mu_scalar)
    _lam_scalar = _nb.njit(cache=True)(_lam_scalar)

    erfcx_arr = _nb.vectorize(["float64(float64)"], nopython=True, cache=True)(
        _erfcx_scalar.py_func
    )
    e1_scaled_arr = _nb.vectorize(["float64(float64)"], nopython=True, cache=True)(
        _e1_scaled_scalar.py_func
    )
    mu_arr = _nb.vectorize(["float64(float64)"], nopython=True, cache=True)(
        _mu_scalar.py_func
    )
    lam_arr = _nb.vectorize(["float64(float64, float64)"], nopython=True, cache=True)(
        _lam_scalar.py_func
    )
else:
    erfcx_arr = _erfcx_np
    e1_scaled_arr = _e1_scaled_np
    mu_arr = _mu_np
    lam_arr = _lam_np


# ---------------------------------------------------------------------------
# batched ZF effective-channel kernel (the Monte-Carlo hot loop)
# ---------------------------------------------------------------------------


def _effective_channels_np(
    h: np.ndarray,
    r: np.ndarray,
    b: np.ndarray,
    u: np.ndarray,
    g: np.ndarray,
    beta: float,
) -> np.ndarray:
    """Effective downlink channels U H G W for a batch of channel draws.

    h is (B, K, M); r, g are (M,); b, u are (K,).  W is the zero-forcing
    precoder built from H_UL = R H^T B with normalisation 1/sqrt(beta).
    Returns (B, K, K).
    """
    h_ul = r[None, :, None] * np.transpose(h, (0, 2, 1)) * b[None, None, :]
    # h_ul: (B, M, K);  gram = H_UL^T H_UL^* : (B, K, K)
    gram = np.einsum("bmk,bml->bkl", h_ul, np.conj(h_ul))
    inv = np.linalg.inv(gram)
    w = np.einsum("bmk,bkl->bml", np.conj(h_ul), inv) / math.sqrt(beta)
    hg = h * g[None, None, :]
    h_eq = np.einsum("bkm,bml->bkl", hg, w) * u[None, :, None]
    return h_eq


if HAVE_NUMBA:

    @_nb.njit(cache=True)
    def _effective_channels_nb(h, r, b, u, g, beta):  # pragma: no cover - jit
        B, K, M = h.shape
        out = np.empty((B, K, K), dtype=np.complex128)
        sqrt_beta = math.sqrt(beta)
        for t in range(B):
            h_ul = np.empty((M, K), dtype=np.complex128)
            for m in range(M):
                for k in range(K):
                    h_ul[m, k] = r[m] * h[t, k, m] * b[k]
            gram = h_ul.T @ np.conj(h_ul)
            inv = np.linalg.inv(gram)
            w = (np.conj(h_ul) @ inv) / sqrt_beta
            hg = h[t] * g
            heq = hg @ w
            for k in range(K):
                for l in range(K):
                    out[t, k, l] = u[k] * heq[k, l]
        return out

    def effective_channels(h, r, b, u, g, beta):
        return _effective_channels_nb(
            np.ascontiguousarray(h),
            np.ascontiguousarray(r),
            np.ascontiguousarray(b),
            np.ascontiguousarray(u),
            np.ascontiguousarray(g, dtype=np.complex128),
            float(beta),
        )

else:
    effective_channels = _effective_channels_np
