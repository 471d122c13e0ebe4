"""Multi-start penalized Nelder-Mead for the min-max BER problem.

The simplex method runs on many independent problems at once (one per start,
and one per scenario when labelling a dataset).  Each instance follows the
same trajectory it would follow alone; batching only amortizes numpy overhead.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import NamedTuple

import numpy as np

from .ber import ModulationSpec, ber_user1_gains, ber_user2_gains, user2_gains
from .beamformer import (BeamParams, ConstraintContext, RepairConfig, check_constraints,
                         repair_params)
from .channel import TWO_PI, BasisProjections

N_PARAMS = 7
AMP_FLOOR = 1e-9
_NM = dict(alpha=1.0, gamma=2.0, rho=0.5, sigma=0.5)


@dataclass(frozen=True)
class CoConfig:
    n_starts: int = 20
    max_iterations: int = 800
    penalties: tuple = (1e2, 1e4)
    ftol_rel: float = 1e-8
    ftol_abs: float = 1e-14
    xtol: float = 1e-7
    seed: int = 0
    repair: RepairConfig = field(default_factory=RepairConfig)

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if self.max_iterations < 1 or not self.penalties:
            raise ValueError("need at least one iteration and one penalty round")
        if min(self.ftol_rel, self.ftol_abs, self.xtol) <= 0 or min(self.penalties) < 0:
            raise ValueError("tolerances must be positive and penalties non-negative")


class OptimizationError(RuntimeError):
    pass


class LocalResult(NamedTuple):
    params: BeamParams
    psi: float
    converged: bool


@dataclass(frozen=True)
class StartTrace:
    index: int
    psi: float
    feasible: bool
    converged: bool


@dataclass(frozen=True)
class CoSolution:
    params: BeamParams
    psi_value: float
    trace: tuple = ()

    @property
    def best_start(self) -> int:
        return min(self.trace, key=lambda t: (t.psi, t.index)).index if self.trace else 0


def stack_projections(projs) -> SimpleNamespace:
    """Column view of a list of projections, usable by the vectorized BER code."""
    return SimpleNamespace(
        h1_norm=np.array([p.h1_norm for p in projs], dtype=float),
        g21_mag=np.array([p.g21_mag for p in projs], dtype=float),
        g21_angle=np.array([p.g21_angle for p in projs], dtype=float),
        g22=np.array([p.g22 for p in projs], dtype=float),
    )


def _take(proj, rows):
    return SimpleNamespace(**{k: v[rows] for k, v in vars(proj).items()})


def psi_and_violation(x, proj, mods: ModulationSpec, n0_eff, ctx: ConstraintContext):
    """Row-wise max BER and summed squared normalized violations for ``(n, 7)`` params."""
    rho1, rho2, d1, d2, tau1, phi1, phi2 = (x[:, k] for k in range(N_PARAMS))
    pe1 = ber_user1_gains(rho1 * proj.h1_norm, d1 * proj.h1_norm, tau1, mods, n0_eff)
    big1, big2 = user2_gains(rho1, rho2, d1, d2, phi1, phi2, proj)
    pe2 = ber_user2_gains(big1, big2, mods, n0_eff)
    thr = ctx.threshold
    v_order = np.maximum(0.0, thr * ctx.lambda2 * d1 * np.abs(np.cos(tau1) - np.sin(tau1)) - rho1)
    v_sic = np.maximum(0.0, thr * big2 - big1) / np.hypot(proj.g21_mag, proj.g22)
    v_power = np.maximum(0.0, rho1**2 + rho2**2 + d1**2 + d2**2 - 1.0)
    return np.maximum(pe1, pe2), v_order**2 + v_sic**2 + v_power**2


def batch_objective(x, proj, mods, n0_eff, ctx, mu):
    # amplitudes outside [floor, 1] are evaluated at the clipped point and
    # pay a quadratic box penalty, so the search never leaves the valid domain
    amps = np.clip(x[:, :4], AMP_FLOOR, 1.0)
    box = np.sum((x[:, :4] - amps) ** 2, axis=1)
    psi, viol = psi_and_violation(np.concatenate([amps, x[:, 4:]], axis=1),
                                  proj, mods, n0_eff, ctx)
    return psi + mu * (viol + box)


def penalized_objective(params: BeamParams, proj: BasisProjections, mods: ModulationSpec,
                        n0_eff: float, mu: float, ctx: ConstraintContext | None = None) -> float:
    """``Psi`` plus ``mu`` times the summed squared normalized constraint violations."""
    if mu < 0:
        raise ValueError("mu must be non-negative")
    ctx = ctx or ConstraintContext.from_modulation(mods)
    psi, viol = psi_and_violation(params.to_array()[None, :], stack_projections([proj]),
                                  mods, n0_eff, ctx)
    return float(psi[0] + mu * viol[0])


def _initial_simplex(x0):
    b, d = x0.shape
    sim = np.repeat(x0[:, None, :], d + 1, axis=1)
    for j in range(d):
        step = np.where(x0[:, j] + 0.1 <= 1.0, 0.1, -0.1) if j < 4 else np.full(b, 0.5)
        sim[:, j + 1, j] += step
    return sim


def nelder_mead_batch(func, x0, owners=None, max_iter=2000, ftol_rel=1e-8, ftol_abs=1e-14,
                      xtol=1e-7):
    """Minimize independently from every row of ``x0``.

    ``func(points, owners)`` evaluates points, where ``owners[i]`` tells which
    instance point ``i`` belongs to.  Returns (best points, best values,
    converged flags, iteration counts).
    """
    a, g, r, s_ = _NM["alpha"], _NM["gamma"], _NM["rho"], _NM["sigma"]
    x0 = np.asarray(x0, dtype=float)
    b, d = x0.shape
    owners = np.arange(b) if owners is None else np.asarray(owners)
    sim = _initial_simplex(x0)
    fs = func(sim.reshape(-1, d), np.repeat(owners, d + 1)).reshape(b, d + 1)
    active = np.ones(b, dtype=bool)
    converged = np.zeros(b, dtype=bool)
    iters = np.zeros(b, dtype=np.int64)

    for _ in range(max_iter):
        order = np.argsort(fs, axis=1, kind="stable")
        sim = np.take_along_axis(sim, order[:, :, None], axis=1)
        fs = np.take_along_axis(fs, order, axis=1)
        done = ((fs[:, -1] - fs[:, 0] <= ftol_abs + ftol_rel * np.abs(fs[:, 0]))
                & (np.max(np.abs(sim[:, 1:] - sim[:, :1]), axis=(1, 2)) <= xtol))
        converged |= active & done
        active &= ~done
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        iters[idx] += 1
        sm, fv, own = sim[idx], fs[idx], owners[idx]
        cen = sm[:, :-1].mean(axis=1)
        worst = sm[:, -1]
        xr = cen + a * (cen - worst)
        fr = func(xr, own)
        new_x, new_f = worst.copy(), fv[:, -1].copy()

        expand = fr < fv[:, 0]
        if expand.any():
            e = np.flatnonzero(expand)
            xe = cen[e] + g * (xr[e] - cen[e])
            fe = func(xe, own[e])
            better = fe < fr[e]
            new_x[e] = np.where(better[:, None], xe, xr[e])
            new_f[e] = np.where(better, fe, fr[e])
        accept = ~expand & (fr < fv[:, -2])
        new_x[accept], new_f[accept] = xr[accept], fr[accept]

        shrink = np.zeros(idx.size, dtype=bool)
        contract = ~expand & ~accept
        if contract.any():
            c = np.flatnonzero(contract)
            outside = fr[c] < fv[c, -1]
            xc = np.where(outside[:, None], cen[c] + r * (xr[c] - cen[c]),
                          cen[c] + r * (worst[c] - cen[c]))
            fc = func(xc, own[c])
            ok = np.where(outside, fc <= fr[c], fc < fv[c, -1])
            new_x[c[ok]], new_f[c[ok]] = xc[ok], fc[ok]
            shrink[c[~ok]] = True

        keep = ~shrink
        sm[keep, -1], fv[keep, -1] = new_x[keep], new_f[keep]
        if shrink.any():
            k = np.flatnonzero(shrink)
            pts = sm[k, :1] + s_ * (sm[k, 1:] - sm[k, :1])
            sm[k, 1:] = pts
            fv[k, 1:] = func(pts.reshape(-1, d), np.repeat(own[k], d)).reshape(k.size, d)
        sim[idx], fs[idx] = sm, fv

    best = np.argmin(fs, axis=1)
    rows = np.arange(b)
    return sim[rows, best], fs[rows, best], converged, iters


def _to_params(x) -> BeamParams:
    amps = np.clip(x[:4], AMP_FLOOR, 1.0)
    angles = np.mod(x[4:], TWO_PI)
    return BeamParams(*(float(v) for v in np.concatenate([amps, angles])))


def _psi_rows(params_list, projs, mods, n0_eff, ctx):
    x = np.array([p.to_array() for p in params_list])
    return psi_and_violation(x, stack_projections(projs), mods, n0_eff, ctx)[0]


def local_search_batch(starts, projs, mods: ModulationSpec, n0_eff: float,
                       cfg: CoConfig = CoConfig()) -> list[LocalResult]:
    """Penalty continuation from each start row (``starts[i]`` pairs with ``projs[i]``).

    Every returned point is feasible and never worse than its start when the
    start itself is feasible.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    if starts.shape != (len(projs), N_PARAMS):
        raise ValueError("need one 7-parameter start per projection")
    ctx = ConstraintContext.from_modulation(mods)
    stacked = stack_projections(projs)
    x = starts.copy()
    conv = np.ones(len(x), dtype=bool)
    for mu in cfg.penalties:
        def func(points, owners, _mu=mu):
            return batch_objective(points, _take(stacked, owners), mods, n0_eff, ctx, _mu)
        x, _, c, _ = nelder_mead_batch(func, x, max_iter=cfg.max_iterations,
                                       ftol_rel=cfg.ftol_rel, ftol_abs=cfg.ftol_abs,
                                       xtol=cfg.xtol)
        conv &= c

    repaired = [repair_params(_to_params(row), projs[i], ctx, cfg.repair)
                for i, row in enumerate(x)]
    psi_rep = _psi_rows(repaired, projs, mods, n0_eff, ctx)
    start_params = [BeamParams.from_array(row).wrapped() for row in starts]
    psi_start = _psi_rows(start_params, projs, mods, n0_eff, ctx)
    out = []
    for i in range(len(projs)):
        best, val = repaired[i], float(psi_rep[i])
        if psi_start[i] < val and check_constraints(start_params[i], projs[i], ctx).feasible:
            best, val = start_params[i], float(psi_start[i])
        out.append(LocalResult(best, val, bool(conv[i])))
    return out


def local_search(start: BeamParams, proj: BasisProjections, mods: ModulationSpec,
                 n0_eff: float, cfg: CoConfig = CoConfig()) -> LocalResult:
    return local_search_batch(start.to_array()[None, :], [proj], mods, n0_eff, cfg)[0]


def _seed_words(seed) -> list:
    words = [seed] if np.isscalar(seed) else list(seed)
    out = [int(w) for w in words]
    if any(w < 0 for w in out):
        raise ValueError("seeds must be non-negative integers")
    return out


def random_starts(n_starts: int, seed) -> np.ndarray:
    """Start ``i`` depends only on ``(seed, i)``, so fewer starts give a prefix.

    ``seed`` is an int or a tuple of ints.  Amplitudes are uniform on
    ``[0, 1]`` and rescaled onto the power sphere if they exceed it; angles
    are uniform on ``[0, 2*pi)``.
    """
    base = _seed_words(seed)
    rows = []
    for i in range(n_starts):
        rng = np.random.default_rng([*base, i])
        amps = rng.uniform(0.0, 1.0, 4)
        s = float(np.sum(amps**2))
        if s > 1:
            amps = amps / np.sqrt(s)
        rows.append(np.concatenate([amps, rng.uniform(0.0, TWO_PI, 3)]))
    return np.array(rows)


def co_solve_many(projs, mods: ModulationSpec, n0_eff: float, cfg: CoConfig = CoConfig(),
                  seeds=None) -> list[CoSolution]:
    """Run :func:`co_solve` on several scenarios in one batch.

    ``seeds[k]`` (an int or tuple of ints) seeds the starts of scenario ``k``;
    by default every scenario uses ``cfg.seed``.
    """
    projs = list(projs)
    if not projs:
        return []
    seeds = [cfg.seed] * len(projs) if seeds is None else list(seeds)
    if len(seeds) != len(projs):
        raise ValueError("one seed per scenario")
    n = cfg.n_starts
    ctx = ConstraintContext.from_modulation(mods)
    starts = np.concatenate([random_starts(n, s) for s in seeds])
    flat_projs = [p for p in projs for _ in range(n)]
    results = local_search_batch(starts, flat_projs, mods, n0_eff, cfg)
    out = []
    for k in range(len(projs)):
        chunk = results[k * n:(k + 1) * n]
        feas = [check_constraints(r.params, projs[k], ctx).feasible for r in chunk]
        trace = tuple(StartTrace(i, r.psi, feas[i], r.converged) for i, r in enumerate(chunk))
        ok = [i for i in range(n) if feas[i]]
        if not ok:
            raise OptimizationError("no start produced a feasible point")
        best = min(ok, key=lambda i: (chunk[i].psi, i))
        out.append(CoSolution(chunk[best].params, chunk[best].psi, trace))
    return out


def co_solve(proj: BasisProjections, mods: ModulationSpec, n0_eff: float,
             cfg: CoConfig = CoConfig()) -> CoSolution:
    """Best feasible point over ``cfg.n_starts`` random starts."""
    return co_solve_many([proj], mods, n0_eff, cfg)[0]
