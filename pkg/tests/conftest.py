"""Shared oracles and helpers for the test suite.

Every oracle here is independent of the implementation path it checks:
quadrature and series for the special functions, Monte-Carlo sampling for the
Bussgang layer, bisection for the max-min solver, and synthetic-data
generators for the calibration estimators.
"""

import numpy as np
import pytest

import mimo_recal as mr
from mimo_recal.calibration import TrainingRecord, psi_vector


def soft_limiter(x, a_sat):
    """The envelope soft limiter (unit-gain SSPA with smoothness 1)."""
    return x / np.sqrt(1.0 + (np.abs(x) / a_sat) ** 2)


def mc_bussgang(a_sat, sigma, n, seed, chunks=10):
    """Regression/variance oracle: complex Gaussian samples through the soft
    limiter, g = <x* f>/<|x|^2> and lambda = Var{f - g x}."""
    rng = np.random.default_rng(seed)
    pieces = []
    g_num = 0.0
    g_den = 0.0
    for _ in range(chunks):
        x = (rng.standard_normal(n // chunks) + 1j * rng.standard_normal(n // chunks))
        x *= sigma / np.sqrt(2.0)
        f = soft_limiter(x, a_sat)
        g_num += float(np.real(np.vdot(x, f)))
        g_den += float(np.real(np.vdot(x, x)))
        pieces.append((x, f))
    g = g_num / g_den
    var = 0.0
    count = 0
    for x, f in pieces:
        var += float(np.sum(np.abs(f - g * x) ** 2))
        count += len(x)
    return g, var / count


def slp_bisection_oracle(model, sigma_x, rho_t, c_max, outer=80, inner=100):
    """Independent max-min solution: bisection on the common gain g0, with a
    per-antenna monotone root find for phi_m^{-1}(g0)."""
    c_max = np.asarray(c_max, dtype=np.float64)
    sigma_x = np.asarray(sigma_x, dtype=np.float64)

    def phi_at(c):
        return c * model.mu_abs_all(c * sigma_x)

    hi_g = float(np.min(phi_at(c_max)))
    lo_g = 0.0
    for _ in range(outer):
        mid = 0.5 * (lo_g + hi_g)
        lo = np.zeros_like(c_max)
        hi = c_max.copy()
        for _ in range(inner):
            c = 0.5 * (lo + hi)
            below = phi_at(c) < mid
            lo = np.where(below, c, lo)
            hi = np.where(below, hi, c)
        if float(np.sum((hi * sigma_x) ** 2)) > rho_t:
            hi_g = mid
        else:
            lo_g = mid
    return lo_g


def synth_poly_records(hw, plan, omega, tau, order, rng):
    """Noise-free training records generated from known polynomial mismatch
    functions (g_m = r_m * mu_m), in the estimator's normalised-power basis."""
    recs = []
    for tx in range(hw.m):
        for n in range(plan.n_levels):
            amp = plan.amplitude(tx, n)
            x = amp * np.exp(2j * np.pi * rng.uniform(size=plan.n_symbols))
            mu = psi_vector(order, float(plan.levels[n])) @ tau[tx]
            out = hw.bs_rx[tx] * mu * x
            for rx in range(hw.m):
                if rx == tx:
                    continue
                recs.append(TrainingRecord(tx, rx, n, x,
                                           hw.a0 * hw.bs_rx[rx] * omega[tx, rx] * out))
    return recs


def gauge_fit_error(poly, true_model, plan, n_grid=50):
    """Max relative deviation of the fitted mismatch functions from the true
    ones over [0, sigma_max], after removing the single unobservable global
    complex scale (fitted by least squares over the grid)."""
    grid = np.linspace(1e-3, 1.0, n_grid)
    num = 0.0 + 0.0j
    den = 0.0
    per_antenna = []
    for m in range(poly.m):
        s = grid * plan.sigma_max[m]
        fh = poly.mu(m, s)
        ft = true_model.mu(m, s)
        per_antenna.append((s, fh, ft))
        num += np.vdot(fh, ft)
        den += float(np.vdot(fh, fh).real)
    kappa = num / den
    worst = 0.0
    for s, fh, ft in per_antenna:
        worst = max(worst, float(np.max(np.abs(fh * kappa - ft) / np.abs(ft))))
    return worst


def mean_rate_mc(hw, phi, rho_t, a0, noise_var, c, rng, n_channels=200):
    bs = mr.estimate_sindr_mc(hw, phi, rho_t, a0, noise_var, n_channels, 1,
                              "surrogate", rng, c=c)
    return float(np.mean([mr.rate_from_sindr(b.sindr) for b in bs]))


def scale_to_power(c, sigma_x, rho_t, c_max):
    c = np.asarray(c, dtype=np.complex128)
    c = c * np.sqrt(rho_t / float(np.sum(np.abs(c) ** 2 * sigma_x**2)))
    amp = np.minimum(np.abs(c), c_max)
    return amp * np.exp(1j * np.angle(c))


@pytest.fixture(scope="session")
def default_mismatch():
    return mr.HardwareMismatch.uniform(0.05, np.pi / 6)
