"""Channel realizations, the two-vector orthonormal basis and network features.

Channels follow a distance-dependent path loss combined with i.i.d. Rayleigh
small-scale fading.  Everything downstream only needs the four scalars held in
:class:`BasisProjections`, which is what makes the beamforming problem
independent of the antenna count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi


class DegenerateBasisError(ValueError):
    """Raised when the two user channels are (numerically) parallel."""


def wrap_angle(angle):
    """Map angles to ``[0, 2*pi)``; works on scalars and arrays."""
    wrapped = np.mod(angle, TWO_PI)
    # np.mod can return exactly 2*pi for tiny negative inputs
    wrapped = np.where(wrapped >= TWO_PI, 0.0, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class LinkBudget:
    """Transmit power and receiver noise settings.

    All BER formulas and the link simulator work with unit-power beamformers,
    so the transmit power is folded into :attr:`effective_noise_watt`.
    """

    carrier_freq_hz: float = 2e9
    bandwidth_hz: float = 10e6
    noise_density_dbm_hz: float = -174.0
    tx_power_watt: float = 0.1

    def __post_init__(self):
        if self.bandwidth_hz <= 0 or self.tx_power_watt <= 0 or self.carrier_freq_hz <= 0:
            raise ValueError("link budget quantities must be strictly positive")

    @property
    def noise_variance_watt(self) -> float:
        dbm = self.noise_density_dbm_hz + 10.0 * math.log10(self.bandwidth_hz)
        return 10.0 ** ((dbm - 30.0) / 10.0)

    @property
    def effective_noise_watt(self) -> float:
        return self.noise_variance_watt / self.tx_power_watt


@dataclass(frozen=True, eq=False)
class Scenario:
    """One channel realization of a user pair; user 1 is the weaker one."""

    nt: int
    h1: np.ndarray
    h2: np.ndarray
    d1_m: float
    d2_m: float
    beta1: float
    beta2: float
    seed: int | None = None

    def __post_init__(self):
        h1 = np.asarray(self.h1, dtype=complex)
        h2 = np.asarray(self.h2, dtype=complex)
        if h1.shape != (self.nt,) or h2.shape != (self.nt,):
            raise ValueError(f"channels must have shape ({self.nt},)")
        if not (np.all(np.isfinite(h1)) and np.all(np.isfinite(h2))):
            raise ValueError("channel vectors must be finite")
        object.__setattr__(self, "h1", h1)
        object.__setattr__(self, "h2", h2)

    @classmethod
    def from_channels(cls, h1, h2, seed=None) -> "Scenario":
        """Wrap raw channel vectors (unit large-scale gain, no distances)."""
        h1 = np.asarray(h1, dtype=complex)
        return cls(nt=h1.shape[0], h1=h1, h2=np.asarray(h2, dtype=complex),
                   d1_m=float("nan"), d2_m=float("nan"), beta1=1.0, beta2=1.0, seed=seed)


@dataclass(frozen=True, eq=False)
class OrthonormalBasis:
    u1: np.ndarray
    u2: np.ndarray


@dataclass(frozen=True)
class BasisProjections:
    """Inner products of the channels with the basis.

    ``h1_norm`` equals ``h1^H u1``, ``g21_mag``/``g21_angle`` describe
    ``h2^H u1`` and ``g22`` is the (real, positive) ``h2^H u2``.
    """

    h1_norm: float
    g21_mag: float
    g21_angle: float
    g22: float

    @property
    def g21(self) -> complex:
        return self.g21_mag * complex(math.cos(self.g21_angle), math.sin(self.g21_angle))

    @property
    def h2_norm(self) -> float:
        return math.hypot(self.g21_mag, self.g22)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray = field(repr=True)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def path_loss_db(d_km: float) -> float:
    """Path loss in dB for a distance in kilometres (128.1 + 37.6 log10 d)."""
    if not d_km > 0:
        raise ValueError(f"distance must be positive, got {d_km!r}")
    return 128.1 + 37.6 * math.log10(d_km)


def _check_range(name, rng_m):
    lo, hi = (float(v) for v in rng_m)
    if not (0 < lo <= hi):
        raise ValueError(f"{name} must satisfy 0 < low <= high, got {rng_m!r}")
    return lo, hi


def sample_scenario(nt, d1_range_m=(600.0, 650.0), d2_range_m=(350.0, 400.0),
                    budget=None, seed=None) -> Scenario:
    """Draw one channel realization.

    Distances are uniform in their intervals, the large-scale gain is the
    attenuation ``10**(-PL/10)`` and the fading is CN(0, I).  If the draw gives
    ``||h1|| > ||h2||`` the user roles are swapped so user 1 stays the weak one.
    ``budget`` is accepted for API symmetry; channel statistics do not depend on it.
    """
    if int(nt) < 2:
        raise ValueError("nt must be at least 2")
    nt = int(nt)
    lo1, hi1 = _check_range("d1_range_m", d1_range_m)
    lo2, hi2 = _check_range("d2_range_m", d2_range_m)
    rng = np.random.default_rng(seed)
    d1 = rng.uniform(lo1, hi1)
    d2 = rng.uniform(lo2, hi2)
    beta1 = 10.0 ** (-path_loss_db(d1 / 1000.0) / 10.0)
    beta2 = 10.0 ** (-path_loss_db(d2 / 1000.0) / 10.0)
    fading = (rng.standard_normal((2, nt)) + 1j * rng.standard_normal((2, nt))) / math.sqrt(2.0)
    h1 = math.sqrt(beta1) * fading[0]
    h2 = math.sqrt(beta2) * fading[1]
    if np.linalg.norm(h1) > np.linalg.norm(h2):
        h1, h2, d1, d2, beta1, beta2 = h2, h1, d2, d1, beta2, beta1
    return Scenario(nt=nt, h1=h1, h2=h2, d1_m=float(d1), d2_m=float(d2),
                    beta1=float(beta1), beta2=float(beta2), seed=seed)


def build_basis(scenario: Scenario) -> OrthonormalBasis:
    """Gram-Schmidt on ``(h1, h2)``."""
    h1, h2 = scenario.h1, scenario.h2
    n1 = np.linalg.norm(h1)
    if n1 == 0:
        raise DegenerateBasisError("h1 is the zero vector")
    u1 = h1 / n1
    resid = h2 - u1 * np.vdot(u1, h2)
    # second pass keeps orthogonality at the 1e-16 level
    resid = resid - u1 * np.vdot(u1, resid)
    rn = np.linalg.norm(resid)
    if rn < 1e-14 * np.linalg.norm(h2) or rn == 0:
        raise DegenerateBasisError("h2 is parallel to h1")
    return OrthonormalBasis(u1=u1, u2=resid / rn)


def project_channels(scenario: Scenario, basis: OrthonormalBasis) -> BasisProjections:
    # h^H u == np.vdot(h, u)
    g21 = np.vdot(scenario.h2, basis.u1)
    g22 = np.vdot(scenario.h2, basis.u2)
    return BasisProjections(
        h1_norm=float(np.linalg.norm(scenario.h1)),
        g21_mag=float(abs(g21)),
        g21_angle=wrap_angle(float(np.angle(g21))) if g21 != 0 else 0.0,
        g22=float(abs(g22)),
    )


def scenario_projections(scenario: Scenario) -> tuple[OrthonormalBasis, BasisProjections]:
    basis = build_basis(scenario)
    return basis, project_channels(scenario, basis)


def extract_features(projections: BasisProjections, xi: float = 1e6) -> FeatureVector:
    """Seven network inputs: three scaled magnitudes, their squares, one angle."""
    if not xi > 0:
        raise ValueError("xi must be positive")
    mags = xi * np.array([projections.h1_norm, projections.g22, projections.g21_mag])
    return FeatureVector(np.concatenate([mags, mags**2, [projections.g21_angle]]))
