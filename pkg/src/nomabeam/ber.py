"""Closed-form conditional BER of the two NOMA users with Gray-coded square QAM.

User 1 decodes its own symbol directly while user 2's symbol leaks into its
decision statistic with a relative phase; user 2 runs one SIC stage first.
Both expressions are finite sums of Q-function terms whose coefficients only
depend on the modulation pair, so they are tabulated once per pair
(:func:`term_table`) and evaluated with numpy broadcasting.  The ``*_gains``
functions take the effective received amplitudes directly; ``ber_user1`` and
``ber_user2`` map reduced beam parameters onto those gains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import erfc

SUPPORTED_ORDERS = (4, 16, 64)

# Pairs (M1, M2) for which the user-2 expression has been checked against the
# link simulator (see tests/test_ber.py::test_user2_matches_simulation).  The
# tabulated user-2 sum is only exact when user 2 carries one bit per axis.
VALIDATED_USER2_PAIRS = frozenset({(4, 4), (16, 4), (64, 4)})

# largest tolerated excursion outside [0, 1] before clamping
_CLAMP_SLACK = 1e-12


class UnsupportedModulationError(ValueError):
    pass


class UnvalidatedModulationError(NotImplementedError):
    """The user-2 expression is not trusted for this modulation pair."""


def q_function(x):
    """Gaussian tail probability ``P(Z > x)``.

    Uses ``erfc``, which keeps full relative precision deep in the tail.
    """
    out = 0.5 * erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class ModulationSpec:
    m1: int = 4
    m2: int = 4

    def __post_init__(self):
        for m in (self.m1, self.m2):
            if m not in SUPPORTED_ORDERS:
                raise UnsupportedModulationError(
                    f"modulation order {m} is not a supported square QAM {SUPPORTED_ORDERS}")

    @property
    def e1(self) -> float:
        return 2.0 * (self.m1 - 1) / 3.0

    @property
    def e2(self) -> float:
        return 2.0 * (self.m2 - 1) / 3.0

    @property
    def bits1(self) -> int:
        return int(math.log2(self.m1))

    @property
    def bits2(self) -> int:
        return int(math.log2(self.m2))

    @property
    def user2_validated(self) -> bool:
        return (self.m1, self.m2) in VALIDATED_USER2_PAIRS


@dataclass(frozen=True)
class BerPair:
    pe1: float
    pe2: float

    @property
    def psi(self) -> float:
        return max(self.pe1, self.pe2)


@dataclass(frozen=True, eq=False)
class BerTermTable:
    """Flattened Q-term coefficients for one modulation pair.

    User 1: ``Pe1 = sum_t c1[t] * Q((a1[t]*A + D*(b1[t]*cos(tau) + c1b[t]*sin(tau))) / s)``
    with ``A = rho1*||h1||/sqrt(E1)`` and ``D = delta1*||h1||/sqrt(E2)``.

    User 2: ``Pe2 = sum_t c2[t] * Q((l2[t]*G1/sqrt(E1) + k2[t]*G2/sqrt(E2)) / s)``
    where ``k2`` already carries the +/- sign of the two inner sums.
    """

    coef1: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    c1: np.ndarray
    coef2: np.ndarray
    l2: np.ndarray
    k2: np.ndarray


def _user1_terms(m1, m2):
    r1, r2 = math.isqrt(m1), math.isqrt(m2)
    lam2 = r2 - 1
    nbits = int(math.log2(r1))
    coef, a, b, c = [], [], [], []
    for i in range(1, nbits + 1):
        p = 2 ** (i - 1)
        last_k = int(round((1 - 2.0**-i) * r1)) - 1
        for k in range(last_k + 1):
            sign = -1 if (k * p) // r1 % 2 else 1
            weight = sign * (p - math.floor(k * p / r1 + 0.5))
            for l in range(lam2 + 1):
                for m in range(lam2 + 1):
                    coef.append(2.0 / nbits * weight / (m2 * r1))
                    a.append(2 * k + 1)
                    b.append(2 * l - r2 + 1)
                    c.append(2 * m - r2 + 1)
    return [np.array(v, dtype=float) for v in (coef, a, b, c)]


def _user2_terms(m1, m2):
    # transcribed term by term; only trusted for VALIDATED_USER2_PAIRS
    r1, r2 = math.isqrt(m1), math.isqrt(m2)
    lam1 = r1 - 1
    nb1 = int(math.log2(r1))
    nb2 = int(math.log2(r2))
    log_term = math.log2(r1 - 1)
    coef, ls, ks = [], [], []
    for i in range(1, nb2 + 1):
        p = 2 ** (i - 1)
        last_k = int(round((1 - 2.0**-i) * r2)) - 1
        for k in range(last_k + 1):
            lam = (k * p) // r2
            d2 = p - math.floor(k * p / r2 + 0.5)
            for l in range(2 * lam1 + 1):
                d3 = 2**nb1 - math.floor(l / 2 ** (1 - (i - 1) * log_term) + 0.5)
                s = -1 if (math.floor(l * 2 ** (nb2 + i - 1) / r2) + lam) % 2 else 1
                w = 2.0 / nb2 * s * d2 * d3 / math.sqrt(m1 * m2)
                coef.append(w)
                ls.append(l)
                ks.append(2 * k + 1)
                if l >= 1:
                    coef.append(-w)
                    ls.append(l)
                    ks.append(-(2 * k + 1))
    return [np.array(v, dtype=float) for v in (coef, ls, ks)]


@lru_cache(maxsize=None)
def term_table(m1: int, m2: int) -> BerTermTable:
    ModulationSpec(m1, m2)
    c1, a1, b1, cc1 = _user1_terms(m1, m2)
    c2, l2, k2 = _user2_terms(m1, m2)
    tables = (c1, a1, b1, cc1, c2, l2, k2)
    for t in tables:
        t.flags.writeable = False
    return BerTermTable(*tables)


def _clamp(p):
    p = np.asarray(p, dtype=float)
    lo = float(np.min(p)) if p.size else 0.0
    hi = float(np.max(p)) if p.size else 0.0
    if lo < -_CLAMP_SLACK or hi > 1.0 + _CLAMP_SLACK:
        raise FloatingPointError(f"BER outside [0, 1] beyond round-off: [{lo}, {hi}]")
    out = np.clip(p, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _noise_scale(n0_eff):
    if not np.all(np.asarray(n0_eff) > 0):
        raise ValueError("n0_eff must be positive")
    return np.sqrt(np.asarray(n0_eff, dtype=float) / 2.0)


def ber_user1_gains(own_gain, leak_gain, tau, mods: ModulationSpec, n0_eff):
    """User-1 BER from ``|h1^H w1|``, ``|h1^H w2|`` and their phase gap."""
    tab = term_table(mods.m1, mods.m2)
    s = _noise_scale(n0_eff)[..., None]
    a = np.asarray(own_gain, dtype=float)[..., None] / math.sqrt(mods.e1)
    d = np.asarray(leak_gain, dtype=float)[..., None] / math.sqrt(mods.e2)
    tau = np.asarray(tau, dtype=float)[..., None]
    arg = (tab.a1 * a + d * (tab.b1 * np.cos(tau) + tab.c1 * np.sin(tau))) / s
    return _clamp(np.sum(tab.coef1 * q_function(arg), axis=-1))


def ber_user2_gains(sic_gain, own_gain, mods: ModulationSpec, n0_eff):
    """User-2 BER from the (phase-aligned) gains of ``s1`` and ``s2`` at user 2."""
    if not mods.user2_validated:
        raise UnvalidatedModulationError(
            f"user-2 BER expression not validated for (M1, M2) = ({mods.m1}, {mods.m2})")
    tab = term_table(mods.m1, mods.m2)
    s = _noise_scale(n0_eff)[..., None]
    g1 = np.asarray(sic_gain, dtype=float)[..., None] / math.sqrt(mods.e1)
    g2 = np.asarray(own_gain, dtype=float)[..., None] / math.sqrt(mods.e2)
    arg = (tab.l2 * g1 + tab.k2 * g2) / s
    return _clamp(np.sum(tab.coef2 * q_function(arg), axis=-1))


def user2_gains(rho1, rho2, delta1, delta2, phi1, phi2, proj):
    """Composite gains at user 2: coherent ``G1`` for ``s1`` and ``G2`` for ``s2``."""
    g1 = rho1 * proj.g21_mag + rho2 * proj.g22
    z = (delta1 * np.exp(1j * (np.asarray(phi1) + proj.g21_angle)) * proj.g21_mag
         + delta2 * np.exp(1j * np.asarray(phi2)) * proj.g22)
    return g1, np.abs(z)


def ber_user1(params, proj, mods: ModulationSpec, n0_eff) -> float:
    return ber_user1_gains(params.rho1 * proj.h1_norm, params.delta1 * proj.h1_norm,
                           params.tau1, mods, n0_eff)


def ber_user2(params, proj, mods: ModulationSpec, n0_eff) -> float:
    g1, g2 = user2_gains(params.rho1, params.rho2, params.delta1, params.delta2,
                         params.phi1, params.phi2, proj)
    return ber_user2_gains(g1, g2, mods, n0_eff)


def ber_pair(params, proj, mods: ModulationSpec, n0_eff) -> BerPair:
    return BerPair(ber_user1(params, proj, mods, n0_eff), ber_user2(params, proj, mods, n0_eff))


def ber_4qam_direct(params, proj, n0_eff, mods: ModulationSpec | None = None) -> BerPair:
    """Hand-expanded 4-QAM/4-QAM expressions, independent of :func:`term_table`."""
    if mods is not None and (mods.m1, mods.m2) != (4, 4):
        raise UnsupportedModulationError("the direct 4-QAM expressions only cover M1 = M2 = 4")
    s = math.sqrt(n0_eff / 2.0)
    e = math.sqrt(2.0)  # sqrt(E) for 4-QAM
    a = params.rho1 * proj.h1_norm / e
    d = params.delta1 * proj.h1_norm / e
    ct, st = math.cos(params.tau1), math.sin(params.tau1)

    def g1(x, y, z):
        return (x * a + d * (y * ct + z * st)) / s

    pe1 = 0.25 * (q_function(g1(1, -1, -1)) + q_function(g1(1, -1, 1))
                  + q_function(g1(1, 1, -1)) + q_function(g1(1, 1, 1)))
    big1, big2 = user2_gains(params.rho1, params.rho2, params.delta1, params.delta2,
                             params.phi1, params.phi2, proj)
    big1, big2 = float(big1) / e, float(big2) / e

    def gp(x, y):
        return (x * big1 + y * big2) / s

    def gm(x, y):
        return (x * big1 - y * big2) / s

    pe2 = 0.5 * (2 * q_function(gp(0, 1)) - q_function(gp(1, 1)) + q_function(gp(2, 1))
                 + q_function(gm(1, 1)) - q_function(gm(2, 1)))
    return BerPair(_clamp(pe1), _clamp(pe2))


def psi(pe1, pe2):
    """Fairness objective: the larger of the two error rates."""
    return np.maximum(pe1, pe2) if np.ndim(pe1) or np.ndim(pe2) else max(pe1, pe2)
