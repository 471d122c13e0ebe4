"""Symbol-level Monte Carlo simulation of the two-user downlink.

This is the independent check on the closed-form BER expressions: it draws
Gray-coded QAM symbols, superposes them through the actual beamformers, adds
noise and runs the same detectors the receivers use (phase correction, ML
slicing at user 1, SIC followed by slicing at user 2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .ber import ModulationSpec

BLOCK_SIZE = 2**16


@dataclass(frozen=True, eq=False)
class GrayMap:
    """Square QAM with per-axis binary-reflected Gray labels.

    The first ``log2(sqrt(M))`` bits pick the in-phase level, the rest the
    quadrature level.  Level index ``j`` carries amplitude ``(sqrt(M)-1) - 2j``
    and label ``j ^ (j >> 1)``, so an all-zero word maps to the upper-right
    corner.
    """

    order: int
    levels: np.ndarray          # per-axis amplitudes, index j -> value
    axis_labels: np.ndarray     # per-axis Gray label of index j
    points: np.ndarray          # symbol index -> unit-energy point
    bits: np.ndarray            # symbol index -> bit vector (MSB first)
    index_of_bits: dict
    bit_distance: np.ndarray    # (side, side) Hamming distance of axis labels

    @property
    def side(self) -> int:
        return self.levels.shape[0]

    @property
    def bits_per_axis(self) -> int:
        return int(math.log2(self.side))

    @property
    def energy(self) -> float:
        return 2.0 * (self.order - 1) / 3.0


@lru_cache(maxsize=None)
def gray_map(order: int) -> GrayMap:
    side = math.isqrt(order)
    if side * side != order or side < 2 or side & (side - 1):
        raise ValueError(f"{order} is not a square QAM order with a power-of-two side")
    nb = int(math.log2(side))
    j = np.arange(side)
    levels = (side - 1) - 2.0 * j
    labels = j ^ (j >> 1)
    energy = 2.0 * (order - 1) / 3.0
    ji, jq = np.divmod(np.arange(order), side)
    points = (levels[ji] + 1j * levels[jq]) / math.sqrt(energy)
    shifts = np.arange(nb - 1, -1, -1)
    bits = np.concatenate([(labels[ji][:, None] >> shifts) & 1,
                           (labels[jq][:, None] >> shifts) & 1], axis=1).astype(np.int8)
    index_of_bits = {tuple(int(b) for b in row): idx for idx, row in enumerate(bits)}
    xor = labels[:, None] ^ labels[None, :]
    dist = np.array([[bin(int(v)).count("1") for v in row] for row in xor], dtype=np.int64)
    for arr in (levels, labels, points, bits, dist):
        arr.flags.writeable = False
    return GrayMap(order, levels, labels, points, bits, index_of_bits, dist)


def modulate_gray(bits, gmap: GrayMap) -> complex:
    key = tuple(int(b) for b in bits)
    if len(key) != int(math.log2(gmap.order)):
        raise ValueError(f"expected {int(math.log2(gmap.order))} bits, got {len(key)}")
    try:
        return complex(gmap.points[gmap.index_of_bits[key]])
    except KeyError:
        raise ValueError(f"bits must be 0/1, got {key}") from None


@dataclass(frozen=True)
class SimResult:
    bits_sent1: int
    bits_sent2: int
    bit_errors1: int
    bit_errors2: int
    sic_errors: int
    n_symbols: int

    @property
    def ber1(self) -> float:
        return self.bit_errors1 / self.bits_sent1

    @property
    def ber2(self) -> float:
        return self.bit_errors2 / self.bits_sent2

    @property
    def psi(self) -> float:
        return max(self.ber1, self.ber2)

    @property
    def sic_symbol_error_rate(self) -> float:
        return self.sic_errors / self.n_symbols


def standard_error(ber: float, n_bits: int) -> float:
    """Binomial standard error of a BER estimate."""
    if n_bits <= 0:
        raise ValueError("n_bits must be positive")
    return math.sqrt(ber * (1.0 - ber) / n_bits)


def slice_axis(values, gmap: GrayMap):
    """Nearest level index along one axis for unit-energy-scaled values."""
    side = gmap.side
    j = np.rint(((side - 1) - values * math.sqrt(gmap.energy)) / 2.0)
    return np.clip(j, 0, side - 1).astype(np.int64)


def slice_detect(z, gain, gmap: GrayMap):
    """ML decision for ``z = gain * s + noise`` as (in-phase, quadrature) indices.

    ``gain`` may be complex.  With zero gain every candidate is equally likely
    and the first one (index 0 on both axes) is returned.
    """
    z = np.asarray(z)
    if gain == 0:
        zero = np.zeros(z.shape, dtype=np.int64)
        return zero, zero
    x = z / gain
    return slice_axis(x.real, gmap), slice_axis(x.imag, gmap)


def ml_detect(z, gain, gmap: GrayMap):
    """Brute-force ``argmin_s |z - gain*s|^2``; returns symbol indices."""
    z = np.asarray(z)
    d = np.abs(z[..., None] - gain * gmap.points) ** 2
    return np.argmin(d, axis=-1)


def _axis_errors(gmap, true_i, true_q, hat_i, hat_q):
    bd = gmap.bit_distance
    return int(bd[true_i, hat_i].sum() + bd[true_q, hat_q].sum())


def _unit_phase(c):
    return 1.0 if c == 0 else c / abs(c)


def simulate_ber_pair(w1, w2, scenario, mods: ModulationSpec, n0_eff: float,
                      n_symbols: int, seed=None, block_size: int = BLOCK_SIZE) -> SimResult:
    """Estimate both users' BER for a given beam pair.

    Symbols are processed in blocks, each with its own random stream derived
    from ``(seed, block index)``, so the result does not depend on how blocks
    are scheduled.
    """
    if n_symbols < 1:
        raise ValueError("n_symbols must be at least 1")
    if not n0_eff > 0:
        raise ValueError("n0_eff must be positive")
    g1map, g2map = gray_map(mods.m1), gray_map(mods.m2)
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    # h^H w products: the whole transmit chain collapses to four scalars
    h11, h12 = np.vdot(scenario.h1, w1), np.vdot(scenario.h1, w2)
    h21, h22 = np.vdot(scenario.h2, w1), np.vdot(scenario.h2, w2)
    rot1 = np.conj(_unit_phase(h11))
    rot2 = np.conj(_unit_phase(h22))
    a1 = abs(h11)
    sic_coef = h21 * rot2
    own2 = abs(h22)
    sigma = math.sqrt(n0_eff / 2.0)
    if seed is None:
        seed = int(np.random.SeedSequence().generate_state(1)[0])

    err1 = err2 = sic_err = 0
    n_blocks = -(-n_symbols // block_size)
    for b in range(n_blocks):
        n = min(block_size, n_symbols - b * block_size)
        rng = np.random.default_rng([int(seed), b])
        i1 = rng.integers(0, g1map.side, n)
        q1 = rng.integers(0, g1map.side, n)
        i2 = rng.integers(0, g2map.side, n)
        q2 = rng.integers(0, g2map.side, n)
        noise = sigma * rng.standard_normal((2, 2, n))
        s1 = g1map.points[i1 * g1map.side + q1]
        s2 = g2map.points[i2 * g2map.side + q2]
        y1 = h11 * s1 + h12 * s2 + (noise[0, 0] + 1j * noise[0, 1])
        y2 = h21 * s1 + h22 * s2 + (noise[1, 0] + 1j * noise[1, 1])

        hi1, hq1 = slice_detect(y1 * rot1, a1, g1map)
        err1 += _axis_errors(g1map, i1, q1, hi1, hq1)

        z2 = y2 * rot2
        si, sq = slice_detect(z2, sic_coef, g1map)
        sic_err += int(np.count_nonzero((si != i1) | (sq != q1)))
        resid = z2 - sic_coef * g1map.points[si * g1map.side + sq]
        hi2, hq2 = slice_detect(resid, own2, g2map)
        err2 += _axis_errors(g2map, i2, q2, hi2, hq2)

    return SimResult(
        bits_sent1=n_symbols * mods.bits1, bits_sent2=n_symbols * mods.bits2,
        bit_errors1=err1, bit_errors2=err2, sic_errors=sic_err, n_symbols=n_symbols,
    )


def graymap_table(order: int) -> list[dict]:
    """Bit pattern to constellation point table, for auditing the mapping."""
    gmap = gray_map(order)
    e = math.sqrt(gmap.energy)
    rows = []
    for idx, bits in enumerate(gmap.bits):
        p = gmap.points[idx]
        rows.append({"bits": "".join(str(int(b)) for b in bits),
                     "in_phase": round(p.real * e), "quadrature": round(p.imag * e),
                     "re": float(p.real), "im": float(p.imag)})
    return rows
