"""Per-antenna and per-UE RF chain models.

The transmit chains carry a smooth envelope-limiting amplifier (SSPA)

    f(x) = sqrt(a0) * t * x / (1 + (|x|/A_sat)^(2v))^(1/(2v)),

whose Bussgang decomposition for complex Gaussian input with rms sigma_x is
g = t*mu(A_sat/sigma_x), sigma_d^2 = |t|^2 * lambda(A_sat, sigma_x).  The
closed forms for mu/lambda are exact for smoothness v = 1 (the soft envelope
limiter); ``sspa_apply`` supports any v for sample-level simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import MismatchDistribution, bussgang_lambda, bussgang_mu, draw_complex_gain

__all__ = [
    "HpaModel",
    "SystemHardware",
    "BussgangPair",
    "HardwareMismatch",
    "draw_system_hardware",
    "sspa_apply",
    "bussgang_decompose",
    "ibo_db",
    "sigma_from_ibo",
    "a_sat_for_ibo",
]

# Lemma-level closed forms (mu, lambda) are exact at this smoothness order.
SOFT_LIMITER_V = 1.0


@dataclass(frozen=True)
class HpaModel:
    """One amplifier: small-signal power gain a0, complex gain vibration t,
    saturation amplitude a_sat and smoothness order v."""

    a0: float
    t: complex
    a_sat: float
    v: float = SOFT_LIMITER_V

    def __post_init__(self):
        if self.a0 <= 0 or self.a_sat <= 0 or self.v <= 0:
            raise ValueError("HpaModel requires a0 > 0, a_sat > 0, v > 0")


@dataclass(frozen=True)
class BussgangPair:
    """Linear scale g and distortion variance sigma_d^2 of one amplifier."""

    g: complex
    sigma_d2: float

    def __post_init__(self):
        if self.sigma_d2 < 0:
            raise ValueError("sigma_d2 must be non-negative")


@dataclass(frozen=True)
class HardwareMismatch:
    """Per-role mismatch laws: a (BS saturation spread), t/r (BS tx/rx gains),
    u/v (UE rx/tx gains)."""

    a: MismatchDistribution
    t: MismatchDistribution
    r: MismatchDistribution
    u: MismatchDistribution
    v: MismatchDistribution

    @classmethod
    def uniform(cls, delta2: float, theta: float) -> "HardwareMismatch":
        """Same delta^2 for every role and the same theta for every phase
        (the saturation role a is real positive, so no phase)."""
        amp_only = MismatchDistribution(delta2, 0.0)
        full = MismatchDistribution(delta2, theta)
        return cls(a=amp_only, t=full, r=full, u=full, v=full)

    @classmethod
    def none(cls) -> "HardwareMismatch":
        zero = MismatchDistribution(0.0, 0.0)
        return cls(a=zero, t=zero, r=zero, u=zero, v=zero)


@dataclass(frozen=True)
class SystemHardware:
    """All drawn RF-chain gains for one realization."""

    bs_hpas: list[HpaModel]
    bs_rx: np.ndarray  # r, length M
    ue_tx_gain: np.ndarray  # b_k = B_k(ue_pilot_amp), length K
    ue_rx: np.ndarray  # u, length K
    ue_hpas: list[HpaModel] = field(default_factory=list)

    def __post_init__(self):
        if len(self.bs_rx) != len(self.bs_hpas):
            raise ValueError("bs_rx and bs_hpas must have the same length")
        if len(self.ue_tx_gain) != len(self.ue_rx):
            raise ValueError("ue_tx_gain and ue_rx must have the same length")
        if self.ue_hpas and len(self.ue_hpas) != len(self.ue_rx):
            raise ValueError("ue_hpas length must match the UE count")
        if np.any(self.bs_rx == 0):
            raise ValueError("receive chains must be live (no zero entries in r)")

    @property
    def m(self) -> int:
        return len(self.bs_hpas)

    @property
    def k(self) -> int:
        return len(self.ue_rx)

    @property
    def a0(self) -> float:
        return self.bs_hpas[0].a0

    @property
    def t(self) -> np.ndarray:
        return np.array([h.t for h in self.bs_hpas])

    @property
    def a_sat(self) -> np.ndarray:
        return np.array([h.a_sat for h in self.bs_hpas])

    @property
    def r(self) -> np.ndarray:
        return self.bs_rx

    @property
    def b(self) -> np.ndarray:
        return self.ue_tx_gain

    @property
    def u(self) -> np.ndarray:
        return self.ue_rx

    def sigma_x(self, rho_t: float) -> np.ndarray:
        """Per-antenna transmit rms under ZF, sigma_x,m = |r_m| sqrt(rho_t/tr{RR*})."""
        r2 = np.abs(self.bs_rx) ** 2
        return np.sqrt(r2 * rho_t / r2.sum())


def draw_system_hardware(
    rng: np.random.Generator,
    m: int,
    k: int,
    dists: HardwareMismatch,
    a_sat_base: float,
    v: float = SOFT_LIMITER_V,
    ue_pilot_amp: float = 0.1,
    a0: float = 10.0,
    b0: float = 1.0,
    b_sat_base: float = 1.0,
) -> SystemHardware:
    """Draw one hardware realization: A_sat,m = a_sat_base * a_m with a_m
    log-normal, complex gains per role, and b_k = B_k(ue_pilot_amp)."""
    if not m > k >= 1:
        raise ValueError(f"need m > k >= 1, got m={m}, k={k}")
    a_m = np.abs(draw_complex_gain(rng, dists.a, size=m))
    t = draw_complex_gain(rng, dists.t, size=m)
    r = draw_complex_gain(rng, dists.r, size=m)
    u = draw_complex_gain(rng, dists.u, size=k)
    v_k = draw_complex_gain(rng, dists.v, size=k)

    bs_hpas = [HpaModel(a0=a0, t=t[i], a_sat=a_sat_base * a_m[i], v=v) for i in range(m)]
    ue_hpas = [HpaModel(a0=b0, t=v_k[i], a_sat=b_sat_base, v=v) for i in range(k)]
    # b_k = v_k / (1 + (amp/B_sat)^(2v))^(1/(2v)): UE SSPA gain at the pilot amplitude
    comp = (1.0 + (ue_pilot_amp / b_sat_base) ** (2 * v)) ** (1.0 / (2 * v))
    b = v_k / comp
    return SystemHardware(bs_hpas=bs_hpas, bs_rx=r, ue_tx_gain=b, ue_rx=u, ue_hpas=ue_hpas)


def sspa_apply(hpa: HpaModel, x):
    """Sample-level SSPA transfer sqrt(a0)*t*x / (1 + (|x|/a_sat)^(2v))^(1/(2v))."""
    x = np.asarray(x, dtype=np.complex128)
    mag = np.abs(x)
    den = (1.0 + (mag / hpa.a_sat) ** (2.0 * hpa.v)) ** (1.0 / (2.0 * hpa.v))
    out = math.sqrt(hpa.a0) * hpa.t * x / den
    return complex(out) if out.ndim == 0 else out


def bussgang_decompose(hpa: HpaModel, sigma_x: float) -> BussgangPair:
    """Bussgang pair of one amplifier at input rms sigma_x (a0 stays outside)."""
    if sigma_x <= 0:
        raise ValueError("sigma_x must be positive")
    g = hpa.t * bussgang_mu(hpa.a_sat / sigma_x)
    sigma_d2 = abs(hpa.t) ** 2 * bussgang_lambda(hpa.a_sat, sigma_x)
    return BussgangPair(g=g, sigma_d2=sigma_d2)


def ibo_db(a_sat: float, sigma_x: float) -> float:
    """Input back-off 10*log10(a_sat/sigma_x) (amplitude-ratio convention)."""
    if a_sat <= 0 or sigma_x <= 0:
        raise ValueError("ibo_db requires positive arguments")
    return 10.0 * math.log10(a_sat / sigma_x)


def sigma_from_ibo(a_sat: float, ibo: float) -> float:
    """Input rms giving the requested back-off for saturation level a_sat."""
    if a_sat <= 0:
        raise ValueError("a_sat must be positive")
    return a_sat * 10.0 ** (-ibo / 10.0)


def a_sat_for_ibo(ibo: float, rho_t: float, m: int) -> float:
    """Common saturation level so that the mean per-antenna rms sqrt(rho_t/m)
    sits ``ibo`` dB below saturation."""
    if rho_t <= 0 or m <= 0:
        raise ValueError("need rho_t > 0 and m > 0")
    return math.sqrt(rho_t / m) * 10.0 ** (ibo / 10.0)
