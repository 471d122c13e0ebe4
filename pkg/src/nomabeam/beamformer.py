"""Beamformer construction from the 7 reduced parameters, benchmarks, and
the feasibility checks / repair applied to network outputs."""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass

import numpy as np

from .ber import ModulationSpec
from .channel import BasisProjections, OrthonormalBasis, wrap_angle

_TRIG_ZERO_TOL = 1e-12
# repair treats smaller amplitudes as zero: (1 + a) rounds to 1 and the
# shrinking loops could never finish
REPAIR_AMP_FLOOR = 1e-12


class RepairError(RuntimeError):
    pass


class OutOfSpanError(ValueError):
    pass


@dataclass(frozen=True)
class BeamParams:
    """Amplitudes on ``(u1, u2)`` for both users plus the three free phases."""

    rho1: float
    rho2: float
    delta1: float
    delta2: float
    tau1: float
    phi1: float
    phi2: float

    @classmethod
    def from_array(cls, values) -> "BeamParams":
        values = np.asarray(values, dtype=float).ravel()
        if values.shape != (7,):
            raise ValueError("expected 7 beam parameters")
        return cls(*(float(v) for v in values))

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @property
    def power(self) -> float:
        return _sum_squares(self.rho1, self.rho2, self.delta1, self.delta2)

    def wrapped(self) -> "BeamParams":
        return BeamParams(self.rho1, self.rho2, self.delta1, self.delta2,
                          wrap_angle(self.tau1), wrap_angle(self.phi1), wrap_angle(self.phi2))


@dataclass(frozen=True, eq=False)
class BeamPair:
    w1: np.ndarray
    w2: np.ndarray

    @property
    def power(self) -> float:
        return float(np.vdot(self.w1, self.w1).real + np.vdot(self.w2, self.w2).real)


@dataclass(frozen=True)
class ConstraintContext:
    y1: float
    lambda2: float
    strict_margin: float = 1e-9

    @classmethod
    def from_modulation(cls, mods: ModulationSpec, strict_margin: float = 1e-9):
        r2 = math.isqrt(mods.m2)
        y1 = (mods.m1 - 1) / (mods.m2 - 1) * (r2 - 1) ** 2
        return cls(y1=float(y1), lambda2=float(r2 - 1), strict_margin=strict_margin)

    @property
    def threshold(self) -> float:
        return self.y1 * (1.0 + self.strict_margin)


@dataclass(frozen=True)
class RepairConfig:
    rho_defaults: tuple = (0.5, 0.5)
    delta_defaults: tuple = (0.1, 0.3)
    kappa1: float = 1e-5
    kappa2: float = 1e-5
    max_passes: int = 10_000

    def __post_init__(self):
        if not all(0 < v <= 1 for v in (*self.rho_defaults, *self.delta_defaults)):
            raise ValueError("repair defaults must lie in (0, 1]")
        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ValueError("kappas must be positive")

    @classmethod
    def from_labels(cls, labels, **kwargs) -> "RepairConfig":
        """Defaults set to the mean label amplitudes."""
        labels = np.asarray(labels, dtype=float).reshape(-1, 7)
        mean = np.clip(labels[:, :4].mean(axis=0), 1e-6, 1.0)
        return cls(rho_defaults=(float(mean[0]), float(mean[1])),
                   delta_defaults=(float(mean[2]), float(mean[3])), **kwargs)


@dataclass(frozen=True)
class ConstraintReport:
    ordering_ok: bool      # user-1 constellation separation
    sic_ok: bool           # SIC ordering at user 2
    power_ok: bool
    ordering_ratio: float
    sic_ratio: float
    power: float
    in_range: bool = True

    @property
    def feasible(self) -> bool:
        return self.ordering_ok and self.sic_ok and self.power_ok and self.in_range


def _g2_complex(delta1, delta2, phi1, phi2, proj):
    return (delta1 * proj.g21_mag * complex(math.cos(phi1 + proj.g21_angle), math.sin(phi1 + proj.g21_angle))
            + delta2 * proj.g22 * complex(math.cos(phi2), math.sin(phi2)))


def ordering_ratio(rho1, delta1, tau1, lambda2) -> float:
    trig = math.cos(tau1) - math.sin(tau1)
    denom = delta1 * trig * lambda2
    if delta1 == 0 or abs(trig) < _TRIG_ZERO_TOL or denom == 0:
        return math.inf
    return abs(rho1 / denom)


def sic_ratio(params: BeamParams, proj: BasisProjections) -> float:
    g1 = params.rho1 * proj.g21_mag + params.rho2 * proj.g22
    z = abs(_g2_complex(params.delta1, params.delta2, params.phi1, params.phi2, proj))
    if z == 0:
        return math.inf
    return g1 / z


def check_constraints(params: BeamParams, proj: BasisProjections,
                      ctx: ConstraintContext) -> ConstraintReport:
    """Evaluate the two SIC/separation ratio constraints and the power budget."""
    r27 = ordering_ratio(params.rho1, params.delta1, params.tau1, ctx.lambda2)
    r28 = sic_ratio(params, proj)
    amps = (params.rho1, params.rho2, params.delta1, params.delta2)
    in_range = all(0.0 <= a <= 1.0 for a in amps) and all(
        0.0 <= a < 2 * math.pi for a in (params.tau1, params.phi1, params.phi2))
    power = params.power
    return ConstraintReport(
        ordering_ok=r27 >= ctx.threshold,
        sic_ok=r28 >= ctx.threshold,
        power_ok=power <= 1.0,
        ordering_ratio=r27, sic_ratio=r28, power=power, in_range=in_range,
    )


def assemble_beamformers(params: BeamParams, basis: OrthonormalBasis,
                         proj: BasisProjections) -> BeamPair:
    """Full beamforming vectors in the ``(u1, u2)`` plane.

    The global phase is fixed by ``theta1 = phi1 - tau1``; ``theta2`` makes the
    two components of ``w1`` add coherently at user 2.
    """
    theta1 = params.phi1 - params.tau1
    theta2 = theta1 + proj.g21_angle  # h2^H u2 is real and positive
    w1 = (params.rho1 * np.exp(1j * theta1) * basis.u1
          + params.rho2 * np.exp(1j * theta2) * basis.u2)
    w2 = (params.delta1 * np.exp(1j * params.phi1) * basis.u1
          + params.delta2 * np.exp(1j * params.phi2) * basis.u2)
    return BeamPair(w1=w1, w2=w2)


def _phase_close(a, b, tol):
    d = (a - b + math.pi) % (2 * math.pi) - math.pi
    return abs(d) <= tol


def params_from_vectors(w1, w2, basis: OrthonormalBasis, proj: BasisProjections,
                        tol: float = 1e-9) -> tuple[BeamParams, bool]:
    """Coordinates of a beam pair in the ``(u1, u2)`` plane.

    Returns the parameters and a flag telling whether ``w1``'s contributions at
    user 2 are in phase with each other and with ``h2^H w2``, the premise under
    which the reduced user-2 BER describes the physical link.
    """
    w1 = np.asarray(w1, dtype=complex)
    w2 = np.asarray(w2, dtype=complex)
    c = np.array([np.vdot(basis.u1, w1), np.vdot(basis.u2, w1)])
    d = np.array([np.vdot(basis.u1, w2), np.vdot(basis.u2, w2)])
    for w, coef in ((w1, c), (w2, d)):
        resid = w - coef[0] * basis.u1 - coef[1] * basis.u2
        if np.linalg.norm(resid) > tol * max(1.0, np.linalg.norm(w)):
            raise OutOfSpanError("beamformer has a component outside span{u1, u2}")
    theta1 = float(np.angle(c[0]))
    phi1 = float(np.angle(d[0]))
    params = BeamParams(
        rho1=float(abs(c[0])), rho2=float(abs(c[1])),
        delta1=float(abs(d[0])), delta2=float(abs(d[1])),
        tau1=wrap_angle(phi1 - theta1), phi1=wrap_angle(phi1),
        phi2=wrap_angle(float(np.angle(d[1]))),
    )
    g21 = proj.g21
    parts = [c[0] * g21, c[1] * proj.g22]
    total2 = d[0] * g21 + d[1] * proj.g22
    scale = tol * proj.h2_norm
    active = [p for p in parts if abs(p) > scale]
    aligned = True
    if abs(total2) > scale:
        ref = float(np.angle(total2))
    elif active:
        ref = float(np.angle(active[0]))
    else:
        ref = 0.0
    for p in active:
        aligned &= _phase_close(float(np.angle(p)), ref, 1e-9)
    return params, bool(aligned)


def _check_channels(h1, h2):
    h1 = np.asarray(h1, dtype=complex)
    h2 = np.asarray(h2, dtype=complex)
    if np.linalg.norm(h1) == 0 or np.linalg.norm(h2) == 0:
        raise ValueError("channel vectors must be nonzero")
    return h1, h2


def _split(power_split):
    p1, p2 = (float(v) for v in power_split)
    if p1 < 0 or p2 < 0 or p1 + p2 > 1 + 1e-12:
        raise ValueError("power split must be non-negative and sum to at most 1")
    return p1, p2


def mrt_direction(h):
    return h / np.linalg.norm(h)


def zf_direction(h_own, h_other):
    """Unit vector along ``h_own`` with the ``h_other`` component projected out."""
    v = h_own - h_other * (np.vdot(h_other, h_own) / np.vdot(h_other, h_other))
    n = np.linalg.norm(v)
    if n <= 1e-12 * np.linalg.norm(h_own):
        raise ValueError("channels are parallel; zero forcing is undefined")
    return v / n


def mrt_pair(h1, h2, power_split=(0.5, 0.5)) -> BeamPair:
    h1, h2 = _check_channels(h1, h2)
    p1, p2 = _split(power_split)
    return BeamPair(math.sqrt(p1) * mrt_direction(h1), math.sqrt(p2) * mrt_direction(h2))


def zfbf_pair(h1, h2, power_split=(0.5, 0.5)) -> BeamPair:
    h1, h2 = _check_channels(h1, h2)
    p1, p2 = _split(power_split)
    return BeamPair(math.sqrt(p1) * zf_direction(h1, h2), math.sqrt(p2) * zf_direction(h2, h1))


def hybrid_pair(h1, h2, first: str, second: str, power_split=(0.5, 0.5)) -> BeamPair:
    """Mix of MRT and ZF per user, e.g. ``hybrid_pair(h1, h2, "mrt", "zf")``."""
    h1, h2 = _check_channels(h1, h2)
    p1, p2 = _split(power_split)
    pick = {"mrt": lambda own, other: mrt_direction(own), "zf": zf_direction}
    return BeamPair(math.sqrt(p1) * pick[first](h1, h2), math.sqrt(p2) * pick[second](h2, h1))


def _repeat_count(value, limit, excess):
    """Smallest n >= 1 with ``value / (1 + excess)**n <= limit`` (value > limit).

    ``log1p`` keeps the count finite when ``1 + excess`` rounds to one.
    """
    n = math.ceil((math.log(value) - math.log(limit)) / math.log1p(excess))
    return max(n, 1)


def _sum_squares(*amps):
    # a * a, never a**2: numpy scalar pow can be off by an ulp, which matters
    # right at the budget
    total = 0.0
    for a in amps:
        total = total + a * a
    return float(total)


def _fit_power(*amps):
    """Scale by ``1/sqrt(S)`` when ``S > 1``; both ratio constraints are scale-free."""
    s = _sum_squares(*amps)
    if s <= 1:
        return amps
    k = math.sqrt(s)
    amps = tuple(a / k for a in amps)
    while _sum_squares(*amps) > 1:
        # rounding can leave S one ulp above 1
        amps = tuple(a * (1 - 2**-52) for a in amps)
    return amps


def repair_params(raw: BeamParams, proj: BasisProjections, ctx: ConstraintContext,
                  cfg: RepairConfig = RepairConfig()) -> BeamParams:
    """Post-network correction that makes any raw output feasible.

    Bad amplitudes get defaults, the power is rescaled and ``tau1`` is nudged
    off the degenerate angle.  Two loops then divide amplitudes by a constant
    factor until a constraint holds; the number of divisions is computed in
    closed form and then confirmed, so tiny amplitudes (factor close to one)
    do not need millions of passes.
    """
    def positive(v, default):
        return v if (math.isfinite(v) and v >= REPAIR_AMP_FLOOR) else default

    rho1 = positive(raw.rho1, cfg.rho_defaults[0])
    rho2 = positive(raw.rho2, cfg.rho_defaults[1])
    delta1 = positive(raw.delta1, cfg.delta_defaults[0])
    delta2 = positive(raw.delta2, cfg.delta_defaults[1])
    tau1, phi1, phi2 = (a if math.isfinite(a) else 0.0 for a in (raw.tau1, raw.phi1, raw.phi2))

    rho1, rho2, delta1, delta2 = _fit_power(rho1, rho2, delta1, delta2)

    tau1 = wrap_angle(tau1)
    if abs(math.cos(tau1) - math.sin(tau1)) < _TRIG_ZERO_TOL:
        tau1 = wrap_angle(tau1 + cfg.kappa1)

    thr = ctx.threshold
    passes = 0
    while ordering_ratio(rho1, delta1, tau1, ctx.lambda2) < thr:
        passes += 1
        if passes > cfg.max_passes:
            raise RepairError("ordering constraint repair did not terminate")
        limit = rho1 / (thr * ctx.lambda2 * abs(math.cos(tau1) - math.sin(tau1)))
        n = _repeat_count(delta1, limit, rho1)
        delta1 = delta1 * math.exp(-n * math.log1p(rho1))

    if abs(_g2_complex(delta1, delta2, phi1, phi2, proj)) == 0:
        delta2 = delta2 + cfg.kappa2

    g1 = rho1 * proj.g21_mag + rho2 * proj.g22
    passes = 0
    while True:
        z = abs(_g2_complex(delta1, delta2, phi1, phi2, proj))
        if z == 0 or g1 / z >= thr:
            break
        passes += 1
        if passes > cfg.max_passes or g1 <= 0:
            raise RepairError("SIC constraint repair did not terminate")
        n = _repeat_count(z, g1 / thr, rho1 + rho2)
        shrink = math.exp(-n * math.log1p(rho1 + rho2))
        delta1, delta2 = delta1 * shrink, delta2 * shrink

    rho1, rho2, delta1, delta2 = _fit_power(rho1, rho2, delta1, delta2)
    return BeamParams(rho1, rho2, delta1, delta2, tau1, wrap_angle(phi1), wrap_angle(phi2))


def canonical_params(params: BeamParams) -> BeamParams:
    """Representative of the parameters' equivalence class.

    The BER expressions and all three constraints depend on ``phi1`` and ``phi2``
    only through their difference and on ``tau1`` only modulo ``pi``.  Fixing
    ``phi1 = 0`` and ``tau1`` in ``[0, pi)`` gives labels a network can regress.
    """
    tau = math.fmod(wrap_angle(params.tau1), math.pi)
    return BeamParams(params.rho1, params.rho2, params.delta1, params.delta2,
                      tau, 0.0, wrap_angle(params.phi2 - params.phi1))


def effective_gains(pair: BeamPair, h1, h2) -> dict:
    """Received amplitudes and phases of both symbols at both users."""
    h11, h12 = np.vdot(h1, pair.w1), np.vdot(h1, pair.w2)
    h21, h22 = np.vdot(h2, pair.w1), np.vdot(h2, pair.w2)
    return {
        "u1_own": abs(h11), "u1_leak": abs(h12),
        "u1_phase_gap": wrap_angle(float(np.angle(h12) - np.angle(h11))),
        "u2_sic": abs(h21), "u2_own": abs(h22),
        "u2_phase_gap": wrap_angle(float(np.angle(h21) - np.angle(h22))),
    }


def align_tau1(params: BeamParams, proj: BasisProjections) -> BeamParams:
    """Return ``params`` with ``tau1`` chosen so the assembled pair is fully aligned.

    With the gauge of :func:`assemble_beamformers`, ``s1`` reaches user 2 with
    phase ``phi1 - tau1 + angle(h2^H u1)``; this picks ``tau1`` so that it
    matches the phase of ``h2^H w2`` and user 2 sees no relative rotation.
    """
    z = _g2_complex(params.delta1, params.delta2, params.phi1, params.phi2, proj)
    ref = math.atan2(z.imag, z.real) if z != 0 else params.phi1 + proj.g21_angle
    tau = wrap_angle(params.phi1 + proj.g21_angle - ref)
    return BeamParams(params.rho1, params.rho2, params.delta1, params.delta2,
                      tau, params.phi1, params.phi2)
