"""Over-the-air nonlinear reciprocity calibration.

Pipeline: multi-power constant-modulus pilots between antenna pairs, LS fit of
per-antenna polynomial mismatch functions, a sequential-linear-programming
max-min solver for the coefficient amplitudes, and a closed-form phase
solution.  The conventional single-power (linear) calibration is included for
comparison.

The polynomial basis is evaluated in the transmit *power* (amplitude squared)
normalised per antenna by sigma_max,m^2, so every antenna shares the level
grid (n/N)^2 on (0, 1].  The model class is unchanged (degree-Pi polynomials
in the power); the normalisation keeps the least-squares system conditioned.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, Literal

import numpy as np

from .hardware import SystemHardware, bussgang_decompose, sspa_apply
from .numerics import bussgang_mu

__all__ = [
    "CalibrationError",
    "PilotPlan",
    "TrainingRecord",
    "PolyMismatch",
    "TrueMismatch",
    "CalibrationResult",
    "orth_poly_psi",
    "psi_vector",
    "draw_inter_antenna_channel",
    "simulate_ota_training",
    "assemble_psi_matrix",
    "estimate_poly_coeffs",
    "estimate_poly_coeffs_from_records",
    "mu_hat",
    "mu_hat_amplitude",
    "linear_calibration",
    "slp_solve",
    "calibration_phases",
    "calibrate",
    "training_overhead",
]

MAX_PSI_ORDER = 20


class CalibrationError(RuntimeError):
    """Raised when a calibration stage cannot produce a valid result."""


# ---------------------------------------------------------------------------
# polynomial basis
# ---------------------------------------------------------------------------


def _psi_coeff_table(order: int) -> np.ndarray:
    """Coefficients c[w, l] of psi_w(z) = sum_l c[w, l] z^l for w = 0..order.

    Exact integer arithmetic; every coefficient up to order 20 is exactly
    representable in float64.
    """
    if not 0 <= order <= MAX_PSI_ORDER:
        raise ValueError(f"polynomial order must lie in [0, {MAX_PSI_ORDER}]")
    table = np.zeros((order + 1, order + 1))
    for w in range(order + 1):
        for l in range(w + 1):
            sign = -1 if (l + w) % 2 else 1
            num = math.factorial(w + l + 2)
            den = math.factorial(l) * math.factorial(l + 1) * math.factorial(w - l)
            table[w, l] = float(sign * num) / float(den)
    return table


def orth_poly_psi(order: int, z) -> float | np.ndarray:
    """The orthogonal basis polynomial psi_order evaluated at z >= 0."""
    if order < 0:
        raise ValueError("order must be non-negative")
    coeffs = _psi_coeff_table(order)[order]
    z_arr = np.asarray(z, dtype=np.float64)
    powers = z_arr[..., None] ** np.arange(order + 1)
    out = powers @ coeffs
    return float(out) if np.isscalar(z) or z_arr.ndim == 0 else out


def psi_vector(order: int, z) -> np.ndarray:
    """All basis values [psi_0(z), ..., psi_order(z)]; shape (..., order+1)."""
    table = _psi_coeff_table(order)
    z_arr = np.asarray(z, dtype=np.float64)
    powers = z_arr[..., None] ** np.arange(order + 1)
    return powers @ table.T


# ---------------------------------------------------------------------------
# pilot plan and training records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PilotPlan:
    """Multi-power pilot schedule.

    ``levels`` holds the N power fractions (n/N)^2; the realized level-n power
    at antenna m is levels[n] * sigma_max[m]^2.
    """

    n_levels: int
    n_symbols: int
    sigma_max: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        if self.n_levels < 1 or self.n_symbols < 1:
            raise ValueError("need n_levels >= 1 and n_symbols >= 1")
        if len(self.levels) != self.n_levels:
            raise ValueError("levels must have n_levels entries")
        if np.any(np.diff(self.levels) <= 0):
            raise ValueError("levels must be strictly increasing")
        if np.any(np.asarray(self.sigma_max) <= 0):
            raise ValueError("sigma_max entries must be positive")

    @classmethod
    def make(cls, n_levels: int, n_symbols: int, sigma_max) -> "PilotPlan":
        sigma_max = np.atleast_1d(np.asarray(sigma_max, dtype=np.float64))
        fracs = (np.arange(1, n_levels + 1) / n_levels) ** 2
        return cls(n_levels=n_levels, n_symbols=n_symbols, sigma_max=sigma_max, levels=fracs)

    @classmethod
    def for_hardware(cls, hw: SystemHardware, n_levels: int, n_symbols: int,
                     ibo_min_db: float = 0.0) -> "PilotPlan":
        """Common per-antenna amplitude cap at ``ibo_min_db`` below the
        (geometric-mean) saturation level.

        The cap is deliberately common across antennas: the pair-ratio
        training can only identify the mismatch functions when the normalised
        curves differ between antennas, which the per-antenna saturation
        spread provides exactly when sigma_max does not track A_sat,m.
        """
        base = float(np.exp(np.mean(np.log(hw.a_sat))))
        sigma_max = np.full(hw.m, base * 10.0 ** (-ibo_min_db / 10.0))
        return cls.make(n_levels, n_symbols, sigma_max)

    def amplitude(self, antenna: int, level: int) -> float:
        return math.sqrt(self.levels[level]) * float(self.sigma_max[antenna])

    def power(self, antenna: int, level: int) -> float:
        return float(self.levels[level]) * float(self.sigma_max[antenna]) ** 2


@dataclass(frozen=True)
class TrainingRecord:
    """Pilots sent by ``tx_antenna`` at one power level and the samples
    received at ``rx_antenna``."""

    tx_antenna: int
    rx_antenna: int
    level: int
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError("pilot and received arrays must have equal length")


def training_overhead(m: int, plan: PilotPlan) -> int:
    """Number of transmitted pilot slots: every antenna sends Q symbols at N levels."""
    return m * plan.n_levels * plan.n_symbols


def draw_inter_antenna_channel(rng: np.random.Generator, m: int, sigma2: float = 1.0) -> np.ndarray:
    """Symmetric zero-diagonal CN(0, sigma2) inter-antenna channel matrix."""
    w = math.sqrt(sigma2 / 2.0) * (rng.standard_normal((m, m)) + 1j * rng.standard_normal((m, m)))
    omega = np.triu(w, 1)
    return omega + omega.T


def simulate_ota_training(
    hw: SystemHardware,
    plan: PilotPlan,
    omega: np.ndarray,
    noise_var: float,
    mode: Literal["physical", "surrogate"],
    rng: np.random.Generator,
) -> list[TrainingRecord]:
    """Simulate the pair-wise pilot exchange for all ordered antenna pairs.

    Pilots are constant-modulus with random phases, so the level-n operating
    amplitude is exactly sqrt(rho_c,n).  Each antenna transmits once per
    level; all other antennas receive the same waveform through the symmetric
    channel ``omega``.  Surrogate mode applies the Bussgang linear scale at
    the pilot amplitude; physical mode applies the SSPA sample-wise.  Neither
    injects sampled distortion: a constant-modulus pilot drives the
    (memoryless) amplifier at a single deterministic operating point, so the
    Gaussian-input distortion term has no physical counterpart here and would
    only act as errors-in-variables noise in the ratio equations.
    """
    m = hw.m
    if omega.shape != (m, m):
        raise ValueError("omega must be M x M")
    if not np.allclose(omega, omega.T):
        raise ValueError("omega must be symmetric (propagation reciprocity)")
    if np.any(np.abs(np.diag(omega)) > 0):
        raise ValueError("omega must have zero diagonal")
    if mode not in ("physical", "surrogate"):
        raise ValueError(f"unknown mode {mode!r}")

    q = plan.n_symbols
    a0 = hw.a0
    records: list[TrainingRecord] = []
    for tx in range(m):
        hpa = hw.bs_hpas[tx]
        for n in range(plan.n_levels):
            amp = plan.amplitude(tx, n)
            x = amp * np.exp(2j * np.pi * rng.uniform(0.0, 1.0, size=q))
            if mode == "physical":
                out = sspa_apply(hpa, x) / math.sqrt(a0)
            else:
                out = bussgang_decompose(hpa, amp).g * x
            for rx in range(m):
                if rx == tx:
                    continue
                y = a0 * hw.bs_rx[rx] * omega[tx, rx] * out
                if noise_var > 0:
                    y = y + math.sqrt(noise_var / 2.0) * (
                        rng.standard_normal(q) + 1j * rng.standard_normal(q)
                    )
                records.append(TrainingRecord(tx_antenna=tx, rx_antenna=rx, level=n, x=x, y=y))
    return records


def _records_by_key(records: Iterable[TrainingRecord]) -> dict[tuple[int, int, int], TrainingRecord]:
    table = {}
    for rec in records:
        table[(rec.tx_antenna, rec.rx_antenna, rec.level)] = rec
    return table


def _pair_row_blocks(table, plan, order, m, i, n):
    """Row coefficients for the unordered pair (m, i) at level n.

    The reciprocity identity mu_m * (x_m . y_{i->m}) = mu_i * (x_i . y_{m->i})
    holds per symbol, so each symbol q yields one row with +ybar^{(m)} psi_n
    on antenna m's block and -ybar^{(i)} psi_n on antenna i's block.
    """
    rec_to_m = table.get((i, m, n))  # transmitted by i, received at m
    rec_to_i = table.get((m, i, n))  # transmitted by m, received at i
    if rec_to_m is None or rec_to_i is None:
        raise CalibrationError(f"missing training records for pair ({m},{i}) at level {n}")
    # the pilot of antenna m lives in the record where m transmits (rec_to_i.x)
    ybar_m = rec_to_m.y * rec_to_i.x
    ybar_i = rec_to_i.y * rec_to_m.x
    psi_n = psi_vector(order, float(plan.levels[n]))  # shared normalised power
    return ybar_m[:, None] * psi_n[None, :], ybar_i[:, None] * psi_n[None, :]


def assemble_psi_matrix(records: Iterable[TrainingRecord], plan: PilotPlan, order: int) -> np.ndarray:
    """Stack the homogeneous equations Psi tau = 0 for all unordered pairs.

    Rows: M(M-1)/2 * N * Q; columns: M * (order+1), block-sparse so that the
    pair (m, i) touches only the blocks of antennas m and i with opposite
    signs.
    """
    table = _records_by_key(records)
    m_count = max(max(t, r) for t, r, _ in table.keys()) + 1
    p = order + 1
    q = plan.n_symbols
    n_rows = m_count * (m_count - 1) // 2 * plan.n_levels * q
    psi = np.zeros((n_rows, m_count * p), dtype=np.complex128)
    row = 0
    for m in range(m_count):
        for i in range(m + 1, m_count):
            for n in range(plan.n_levels):
                block_m, block_i = _pair_row_blocks(table, plan, order, m, i, n)
                psi[row:row + q, m * p:(m + 1) * p] = block_m
                psi[row:row + q, i * p:(i + 1) * p] = -block_i
                row += q
    return psi


@dataclass(frozen=True)
class PolyMismatch:
    """Per-antenna polynomial mismatch functions mu_m(sigma).

    mu_m(sigma) = sum_w tau[m, w] psi_w(sigma^2 / sigma_ref[m]^2); sigma_ref
    is the per-antenna amplitude that maps to normalised power 1 (the top
    pilot level).
    """

    tau: np.ndarray  # (M, order+1) complex
    order: int
    sigma_ref: np.ndarray | None = None

    def __post_init__(self):
        if self.tau.shape[1] != self.order + 1:
            raise ValueError("tau must have order+1 columns")
        if self.tau[0, 0] != 1:
            raise ValueError("normalisation requires tau[0, 0] == 1")
        if self.sigma_ref is None:
            object.__setattr__(self, "sigma_ref", np.ones(self.tau.shape[0]))
        if np.any(np.asarray(self.sigma_ref) <= 0):
            raise ValueError("sigma_ref entries must be positive")

    @property
    def m(self) -> int:
        return self.tau.shape[0]

    def mu(self, antenna: int, sigma):
        """Complex mismatch value at transmit amplitude ``sigma``."""
        z = (np.asarray(sigma, dtype=np.float64) / self.sigma_ref[antenna]) ** 2
        return psi_vector(self.order, z) @ self.tau[antenna]

    def mu_abs(self, antenna: int, sigma):
        return np.abs(self.mu(antenna, sigma))

    def mu_all(self, sigma: np.ndarray) -> np.ndarray:
        """Per-antenna values at per-antenna amplitudes; sigma has shape (M,)."""
        z = (np.asarray(sigma, dtype=np.float64) / self.sigma_ref) ** 2
        return np.einsum("mp,mp->m", psi_vector(self.order, z), self.tau)

    def mu_abs_all(self, sigma: np.ndarray) -> np.ndarray:
        return np.abs(self.mu_all(sigma))


@dataclass(frozen=True)
class TrueMismatch:
    """Ground-truth mismatch functions mu_m(sigma) = t_m mu(A_m/sigma) / r_m."""

    hw: SystemHardware

    @property
    def m(self) -> int:
        return self.hw.m

    def mu(self, antenna: int, sigma):
        sigma = np.asarray(sigma, dtype=np.float64)
        hpa = self.hw.bs_hpas[antenna]
        ratio = hpa.t / self.hw.bs_rx[antenna]
        arg = hpa.a_sat / np.maximum(sigma, 1e-300)
        return ratio * bussgang_mu(arg)

    def mu_abs(self, antenna: int, sigma):
        return np.abs(self.mu(antenna, sigma))

    def mu_all(self, sigma: np.ndarray) -> np.ndarray:
        sigma = np.asarray(sigma, dtype=np.float64)
        ratio = self.hw.t / self.hw.bs_rx
        arg = self.hw.a_sat / np.maximum(sigma, 1e-300)
        return ratio * bussgang_mu(arg)

    def mu_abs_all(self, sigma: np.ndarray) -> np.ndarray:
        return np.abs(self.mu_all(sigma))


def mu_hat(poly, antenna: int, sigma):
    """Mismatch-function value of a fitted or true model at amplitude sigma."""
    return poly.mu(antenna, sigma)


def mu_hat_amplitude(poly, antenna: int, sigma):
    """Amplitude sqrt(mu_r^2 + mu_i^2) of the mismatch function."""
    return poly.mu_abs(antenna, sigma)


def _solve_pinned_ls(gram: np.ndarray, order: int) -> np.ndarray:
    """Solve the pinned least-squares problem from the full Gram matrix of Psi."""
    g22 = gram[1:, 1:]
    g21 = gram[1:, 0]
    scale = np.sqrt(np.abs(np.diag(g22)))
    if np.any(scale == 0):
        dead = np.flatnonzero(scale == 0) + 1
        raise CalibrationError(f"rank-deficient system, empty columns {dead.tolist()}")
    gs = g22 / scale[:, None] / scale[None, :]
    eigvals, vecs = np.linalg.eigh(gs)
    if eigvals[0] < 1e-10 * eigvals[-1]:
        bad = np.flatnonzero(np.abs(vecs[:, 0]) > 0.1) + 1
        raise CalibrationError(
            "rank-deficient polynomial system (need N >= order+2 power levels); "
            f"deficient columns include {bad.tolist()}"
        )
    tau_c = -np.linalg.solve(gs, (g21 / scale)) / scale
    return np.concatenate([[1.0 + 0j], tau_c])


def _row_weights(block_m: np.ndarray, block_i: np.ndarray) -> np.ndarray:
    """Per-symbol equation weights that equilibrate row norms.

    Row magnitudes are set by the received-signal products, which vary by
    orders of magnitude across pairs and power levels; unweighted LS is
    numerically unusable.  Equilibration leaves noiseless solutions unchanged.
    """
    norms = np.sqrt(
        np.sum(np.abs(block_m) ** 2, axis=1) + np.sum(np.abs(block_i) ** 2, axis=1)
    )
    norms[norms == 0] = 1.0
    return 1.0 / norms


def estimate_poly_coeffs(psi_matrix: np.ndarray, order: int,
                         sigma_ref=None) -> PolyMismatch:
    """LS estimate of the polynomial coefficients with tau_{1,0} pinned to 1.

    Rows of the stacked system are equilibrated to unit norm before the
    normal equations are formed.
    """
    p = order + 1
    n_cols = psi_matrix.shape[1]
    if n_cols % p:
        raise ValueError("psi matrix width must be a multiple of order+1")
    norms = np.linalg.norm(psi_matrix, axis=1)
    norms[norms == 0] = 1.0
    scaled = psi_matrix / norms[:, None]
    gram = np.conj(scaled).T @ scaled
    tau = _solve_pinned_ls(gram, order)
    return PolyMismatch(tau=tau.reshape(n_cols // p, p), order=order, sigma_ref=sigma_ref)


def estimate_poly_coeffs_from_records(records: Iterable[TrainingRecord], plan: PilotPlan,
                                      order: int) -> PolyMismatch:
    """Same estimate as ``estimate_poly_coeffs`` without materialising Psi.

    Accumulates the normal equations pair by pair; the Gram matrix only
    receives contributions on the two antenna blocks each pair touches.
    """
    if plan.n_levels < order + 2:
        raise CalibrationError(
            f"need at least order+2 = {order + 2} power levels: the pinning removes "
            "only the global scale, one extra level resolves the per-level scale family"
        )
    table = _records_by_key(records)
    m_count = max(max(t, r) for t, r, _ in table.keys()) + 1
    p = order + 1
    gram = np.zeros((m_count * p, m_count * p), dtype=np.complex128)
    for m in range(m_count):
        sl_m = slice(m * p, (m + 1) * p)
        for i in range(m + 1, m_count):
            sl_i = slice(i * p, (i + 1) * p)
            for n in range(plan.n_levels):
                block_m, block_i = _pair_row_blocks(table, plan, order, m, i, n)
                w = _row_weights(block_m, block_i)
                block_m = block_m * w[:, None]
                block_i = block_i * w[:, None]
                gram[sl_m, sl_m] += np.conj(block_m).T @ block_m
                gram[sl_i, sl_i] += np.conj(block_i).T @ block_i
                cross = -np.conj(block_m).T @ block_i
                gram[sl_m, sl_i] += cross
                gram[sl_i, sl_m] += np.conj(cross).T
    tau = _solve_pinned_ls(gram, order)
    return PolyMismatch(tau=tau.reshape(m_count, p), order=order,
                        sigma_ref=plan.sigma_max.copy())


def measured_level_shapes(records: Iterable[TrainingRecord], plan: PilotPlan) -> np.ndarray:
    """Per-antenna transmit-gain profiles across the power levels.

    For a fixed pair the received signal scales across levels exactly like
    the transmitter's gain g_m, so y/x averaged per level measures g_m's
    level profile up to one per-pair constant.  Combining the receivers by
    least squares returns, for every antenna, the complex profile normalised
    to 1 at the top level.  (This is the observable that the pair-ratio
    equations of the polynomial LS cancel out.)
    """
    table = _records_by_key(records)
    m_count = max(max(t, r) for t, r, _ in table.keys()) + 1
    n_levels = plan.n_levels
    prof = np.zeros((m_count, m_count, n_levels), dtype=np.complex128)
    for (tx, rx, n), rec in table.items():
        prof[tx, rx, n] = np.mean(rec.y / rec.x)
    top = n_levels - 1
    shapes = np.zeros((m_count, n_levels), dtype=np.complex128)
    for m in range(m_count):
        others = [i for i in range(m_count) if i != m]
        pm = prof[m, others, :]
        denom = float(np.sum(np.abs(pm[:, top]) ** 2))
        if denom == 0:
            raise CalibrationError(f"no usable level profile for antenna {m}")
        shapes[m] = (np.conj(pm[:, top]) @ pm) / denom
    return shapes


def estimate_poly_coeffs_anchored(records: Iterable[TrainingRecord], plan: PilotPlan,
                                  order: int) -> PolyMismatch:
    """Polynomial mismatch estimate with the common-shape gauge pinned.

    The pair-ratio LS determines the mismatch functions only up to a common
    per-level factor, a family that becomes (near-)degenerate when the
    antennas' normalised curves are scaled copies of one shape - exactly the
    situation for a homogeneous amplifier population.  This estimator instead
    combines the two identifiable observables directly: the measured
    per-antenna level profiles (see ``measured_level_shapes``) and the
    cross-antenna scale at the top power level from the single-level
    calibration LS.  A per-antenna polynomial refit on the shared level grid
    returns coefficients in the same basis, pinned to tau[0,0] = 1.
    """
    recs = list(records)
    if plan.n_levels < order + 2:
        raise CalibrationError(f"need at least order+2 = {order + 2} power levels")
    shapes = measured_level_shapes(recs, plan)
    top = plan.n_levels - 1
    top_scale = 1.0 / linear_calibration([r for r in recs if r.level == top], 1.0)
    values = shapes * top_scale[:, None]
    # precision-weighted refit: the level-n profile noise scales like 1/amp_n,
    # so weight nodes by the level amplitude (exact data is unaffected)
    weights = np.sqrt(np.asarray(plan.levels))
    basis = psi_vector(order, np.asarray(plan.levels)) * weights[:, None]
    tau = np.linalg.lstsq(basis, (values * weights[None, :]).T, rcond=None)[0].T
    tau = tau / tau[0, 0]
    tau[0, 0] = 1.0
    return PolyMismatch(tau=tau, order=order, sigma_ref=plan.sigma_max.copy())


# ---------------------------------------------------------------------------
# conventional linear calibration
# ---------------------------------------------------------------------------


def linear_calibration(records: Iterable[TrainingRecord], c0: complex) -> np.ndarray:
    """Single-power-level reciprocity calibration (Rogalin-style LS).

    ``records`` must contain both directions for every antenna pair at one
    common power level.  Returns c_m = c0 / f_m with f estimated from the
    cross-correlation matrix Ybar.
    """
    if c0 == 0:
        raise ValueError("c0 must be non-zero")
    recs = list(records)
    levels = {r.level for r in recs}
    if len(levels) != 1:
        raise ValueError("linear calibration expects records at a single power level")
    level = levels.pop()
    table = {(r.tx_antenna, r.rx_antenna): r for r in recs}
    m_count = max(max(t, r) for t, r in table.keys()) + 1
    for m in range(m_count):
        for i in range(m_count):
            if m != i and (m, i) not in table:
                raise CalibrationError(f"missing record for pair ({m},{i}) at level {level}")

    ybar = np.zeros((m_count, m_count), dtype=np.complex128)
    for m in range(m_count):
        x_m = table[(m, 0 if m else 1)].x  # pilot of antenna m (same at all receivers)
        diag = 0.0
        for j in range(m_count):
            if j == m:
                continue
            diag += abs(np.sum(x_m * table[(j, m)].y)) ** 2
        ybar[m, m] = diag
        for i in range(m_count):
            if i == m:
                continue
            x_i = table[(i, 0 if i else 1)].x
            ybar[m, i] = -np.conj(np.sum(x_m * table[(i, m)].y)) * np.sum(x_i * table[(m, i)].y)

    y1 = ybar[:, 0]
    y2 = ybar[:, 1:]
    b = y2.T @ np.conj(y2)
    v = y1 @ np.conj(y2)
    try:
        f_tail = -np.linalg.solve(b.T, v)
    except np.linalg.LinAlgError as exc:
        raise CalibrationError("singular Ybar_2 system in linear calibration") from exc
    f = np.concatenate([[1.0 + 0j], f_tail])
    return c0 / f


# ---------------------------------------------------------------------------
# SLP coefficient solver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationResult:
    """Calibration coefficients plus solver diagnostics."""

    c: np.ndarray
    g0: float
    iterations: int
    converged: bool
    overhead: int = 0


def _mu_abs_all(model, amps: np.ndarray) -> np.ndarray:
    if hasattr(model, "mu_abs_all"):
        return model.mu_abs_all(amps)
    return np.array([model.mu_abs(m, amps[m]) for m in range(len(amps))])


def _phi_all(model, c_abs: np.ndarray, sigma_x: np.ndarray) -> np.ndarray:
    return c_abs * _mu_abs_all(model, c_abs * sigma_x)


def _phi_grid(model, sigma_x, c_max, n_grid=65):
    grid = np.linspace(0.0, 1.0, n_grid)
    vals = np.empty((len(c_max), n_grid))
    for j, frac in enumerate(grid):
        c = frac * c_max
        vals[:, j] = c * _mu_abs_all(model, c * sigma_x)
    return vals


def _check_concave_increasing(model, sigma_x, c_max, strict: bool):
    # tolerance of 1% of the per-antenna range: boundary wiggles of fitted
    # polynomials stay below it, overfit models violate it by O(0.1..1)
    vals = _phi_grid(model, sigma_x, c_max)
    rng_ = np.max(vals, axis=1) - np.min(vals, axis=1)
    rng_ = np.maximum(rng_, 1e-300)
    inc_viol = np.max(-np.diff(vals, axis=1) / rng_[:, None])
    second = np.diff(vals, 2, axis=1)
    conc_viol = np.max(second / rng_[:, None])
    tol = 1e-2
    if inc_viol > tol or conc_viol > tol:
        msg = (
            f"phi_m(x) = x*|mu_m(x sigma)| not concave increasing on the grid "
            f"(increase violation {inc_viol:.2e}, concavity violation {conc_viol:.2e})"
        )
        if strict:
            raise CalibrationError(msg)
        warnings.warn(msg, RuntimeWarning)


def slp_solve(
    model,
    sigma_x: np.ndarray,
    rho_t: float,
    c_max: np.ndarray,
    eps: float = 1e-6,
    rho_step: float = 0.5,
    max_iter: int = 500,
    strict: bool = True,
    monitor: Callable[[int, np.ndarray, float], None] | None = None,
) -> CalibrationResult:
    """Max-min coefficient amplitudes via sequential linear programming.

    Maximises g0 subject to g0 <= phi_m(|c_m|) = |c_m| * |mu_m(|c_m| sigma_x,m)|,
    the total power constraint sum |c_m|^2 sigma_x,m^2 <= rho_t and the
    per-antenna caps |c_m| <= c_max,m.  Each iteration linearises phi, solves
    the closed-form subproblem and backtracks with ratio ``rho_step`` so the
    minimum of phi never decreases and the next linearisation stays feasible.
    """
    sigma_x = np.asarray(sigma_x, dtype=np.float64)
    c_max = np.asarray(c_max, dtype=np.float64)
    n = len(sigma_x)
    if len(c_max) != n:
        raise ValueError("sigma_x and c_max must have equal length")
    _check_concave_increasing(model, sigma_x, c_max, strict)

    h_rel = 1e-6

    def phi_and_slope(c_abs):
        h = np.maximum(h_rel * c_max, 1e-12)
        lo = np.maximum(c_abs - h, 0.0)
        hi = np.minimum(c_abs + h, c_max)
        phi = _phi_all(model, c_abs, sigma_x)
        slope = (_phi_all(model, hi, sigma_x) - _phi_all(model, lo, sigma_x)) / (hi - lo)
        return phi, slope

    def next_point_feasible(c_abs, phi, slope):
        # Eq.-(64)-style conditions so the next subproblem keeps c_bar >= 0
        chi = phi - slope * c_abs
        chi_max = np.max(chi)
        if np.min(chi + slope * c_max) <= chi_max:
            return False
        return float(np.sum(((chi_max - chi) * sigma_x / slope) ** 2)) < rho_t

    c = 1e-3 * c_max
    phi, slope = phi_and_slope(c)
    min_phi = float(np.min(phi))
    iterations = 0
    converged = False
    for it in range(1, max_iter + 1):
        iterations = it
        if np.any(slope <= 0):
            raise CalibrationError("phi slope non-positive; model not increasing")
        chi = phi - slope * c
        w = (sigma_x / slope) ** 2
        a = float(np.sum(w))
        b = -2.0 * float(np.sum(w * chi))
        cc = float(np.sum(w * chi**2)) - rho_t
        disc = b * b - 4.0 * a * cc
        if disc < 0:
            raise CalibrationError("infeasible power subproblem (negative discriminant)")
        g_hat = (-b + math.sqrt(disc)) / (2.0 * a)
        g_cap = float(np.min(chi + slope * c_max))
        g0 = min(g_hat, g_cap)
        c_bar = (g0 - chi) / slope
        delta = c_bar - c

        step = 1.0
        accepted = None
        while step > 1e-12:
            cand = np.clip(c + step * delta, 0.0, c_max)
            phi_c, slope_c = phi_and_slope(cand)
            if float(np.min(phi_c)) >= min_phi - 1e-12 and next_point_feasible(cand, phi_c, slope_c):
                accepted = (cand, phi_c, slope_c)
                break
            step *= rho_step
        if accepted is None:
            break
        cand, phi, slope = accepted
        move = float(np.mean(np.abs(cand - c)))
        c = cand
        min_phi = max(min_phi, float(np.min(phi)))
        if monitor is not None:
            monitor(it, c.copy(), min_phi)
        if move < eps:
            converged = True
            break

    if not converged:
        warnings.warn(f"SLP did not converge within {max_iter} iterations", RuntimeWarning)
    power = float(np.sum(c**2 * sigma_x**2))
    if power > rho_t + 1e-9 or np.any(c > c_max + 1e-9):
        raise CalibrationError("SLP terminated at an infeasible point")
    return CalibrationResult(c=c.astype(np.complex128), g0=min_phi,
                             iterations=iterations, converged=converged)


def calibration_phases(model, c_abs: np.ndarray, sigma_x: np.ndarray) -> np.ndarray:
    """Phases angle(c_m) = -angle(mu_m(|c_m| sigma_x,m)), quadrant-safe."""
    c_abs = np.asarray(c_abs, dtype=np.float64)
    if hasattr(model, "mu_all"):
        vals = np.asarray(model.mu_all(c_abs * sigma_x))
    else:
        vals = np.array([model.mu(m, c_abs[m] * sigma_x[m]) for m in range(len(c_abs))])
    if np.any(vals == 0):
        dead = np.flatnonzero(vals == 0).tolist()
        raise CalibrationError(f"mu vanishes at the operating point for antennas {dead}")
    return -np.arctan2(vals.imag, vals.real)


def calibrate(
    hw: SystemHardware,
    plan: PilotPlan,
    omega: np.ndarray,
    noise_var: float,
    order: int,
    rho_t: float,
    rng: np.random.Generator,
    mode: Literal["physical", "surrogate"] = "surrogate",
    eps: float = 1e-6,
    rho_step: float = 0.5,
    strict: bool = False,
    anchor_gauge: bool = True,
) -> CalibrationResult:
    """Full pipeline: OTA training, polynomial fit, SLP amplitudes, phases.

    ``anchor_gauge`` selects the gauge-pinned estimator (recommended); with
    it off, the pipeline uses the plain pair-ratio LS, which cannot resolve
    the common compression shape of a homogeneous amplifier population.
    ``strict`` forwards to the SLP concavity gate; estimated models keep it
    off because the backtracking line search preserves the solver guarantees
    under the small boundary wiggles a fitted polynomial carries.
    """
    records = simulate_ota_training(hw, plan, omega, noise_var, mode, rng)
    if anchor_gauge:
        poly = estimate_poly_coeffs_anchored(records, plan, order)
    else:
        poly = estimate_poly_coeffs_from_records(records, plan, order)
    sigma_x = hw.sigma_x(rho_t)
    c_max = plan.sigma_max / sigma_x
    res = slp_solve(poly, sigma_x, rho_t, c_max, eps=eps, rho_step=rho_step, strict=strict)
    c_abs = np.abs(res.c)
    phases = calibration_phases(poly, c_abs, sigma_x)
    c = c_abs * np.exp(1j * phases)
    return CalibrationResult(c=c, g0=res.g0, iterations=res.iterations,
                             converged=res.converged, overhead=training_overhead(hw.m, plan))
