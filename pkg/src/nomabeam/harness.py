"""Technique comparison, ECDF emission, timing and the analytic-vs-simulation check."""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .ber import ModulationSpec, ber_pair, ber_user1_gains, ber_user2_gains
from .beamformer import (BeamParams, ConstraintContext, RepairConfig, align_tau1, check_constraints,
                         effective_gains, hybrid_pair, mrt_pair, params_from_vectors, zfbf_pair,
                         assemble_beamformers)
from .channel import LinkBudget, extract_features, sample_scenario, scenario_projections, TWO_PI
from .learner import BeamformingNet, MlpModel, predict_params
from .linksim import simulate_ber_pair, standard_error
from .optimizer import CoConfig, co_solve_many

TECHNIQUES = ("NN", "CO", "ZFBF", "MRT", "MRT1_ZFBF2", "ZFBF1_MRT2")
SIMULATED = frozenset({"MRT", "MRT1_ZFBF2", "ZFBF1_MRT2"})
EVAL_FIELDS = ("technique", "nt", "scenario_id", "psi", "mode", "mc_symbols")
TIMING_FIELDS = ("technique", "nt", "mean_seconds", "count")
ECDF_FIELDS = ("technique", "nt", "psi", "cumulative_fraction")


class ModeDisciplineError(ValueError):
    """A technique was paired with an evaluation mode it may not use."""


class MissingModelError(ValueError):
    pass


@dataclass(frozen=True)
class EvalRow:
    technique: str
    nt: int
    scenario_id: int
    psi: float
    mode: str
    mc_symbols: int | None = None

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if self.mode not in ("analytic", "monte_carlo"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.technique in SIMULATED and self.mode != "monte_carlo":
            raise ModeDisciplineError(f"{self.technique} has no closed form; simulate it")
        if self.technique not in SIMULATED and self.mode != "analytic":
            raise ModeDisciplineError(f"{self.technique} is evaluated in closed form")
        if (self.mode == "monte_carlo") != (self.mc_symbols is not None):
            raise ValueError("mc_symbols is set exactly for simulated rows")

    def as_dict(self) -> dict:
        return {"technique": self.technique, "nt": self.nt, "scenario_id": self.scenario_id,
                "psi": repr(float(self.psi)), "mode": self.mode,
                "mc_symbols": "" if self.mc_symbols is None else self.mc_symbols}


@dataclass(frozen=True)
class TimingRow:
    technique: str
    nt: int
    mean_seconds: float
    count: int
    samples: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not self.mean_seconds > 0 or self.count < 1:
            raise ValueError("timings must be positive")

    def as_dict(self) -> dict:
        return {"technique": self.technique, "nt": self.nt,
                "mean_seconds": repr(float(self.mean_seconds)), "count": self.count}


@dataclass(frozen=True)
class EvalConfig:
    mods: ModulationSpec = field(default_factory=ModulationSpec)
    budget: LinkBudget = field(default_factory=LinkBudget)
    techniques: tuple = TECHNIQUES
    mc_symbols: int = 10**6
    seed: int = 0
    co: CoConfig = field(default_factory=CoConfig)
    repair: RepairConfig = field(default_factory=RepairConfig)
    power_split: tuple = (0.5, 0.5)

    def __post_init__(self):
        bad = [t for t in self.techniques if t not in TECHNIQUES]
        if bad:
            raise ValueError(f"unknown techniques {bad}")
        if self.mc_symbols < 1:
            raise ValueError("mc_symbols must be positive")


def _as_model(model) -> MlpModel | None:
    if model is None or isinstance(model, MlpModel):
        return model
    if isinstance(model, BeamformingNet):
        return model.model_
    raise TypeError(f"unsupported model type {type(model).__name__}")


def zfbf_psi(scenario, mods: ModulationSpec, n0_eff: float, power_split=(0.5, 0.5)) -> float:
    """Closed-form max-BER of zero-forcing beams.

    Both cross gains vanish (``h1^H w2 = h2^H w1 = 0``), so the user-1 terms
    lose their interference part and user 2 sees no ``s1`` to cancel; the
    expressions are then exact whatever the phases.  The pair is mapped onto
    the basis first to check it lies in the channel span.
    """
    pair = zfbf_pair(scenario.h1, scenario.h2, power_split)
    basis, proj = scenario_projections(scenario)
    params_from_vectors(pair.w1, pair.w2, basis, proj)
    g = effective_gains(pair, scenario.h1, scenario.h2)
    pe1 = ber_user1_gains(g["u1_own"], g["u1_leak"], g["u1_phase_gap"], mods, n0_eff)
    pe2 = ber_user2_gains(g["u2_sic"], g["u2_own"], mods, n0_eff)
    return float(max(pe1, pe2))


def zfbf_reduced_psi(scenario, mods: ModulationSpec, n0_eff: float, power_split=(0.5, 0.5)) -> float:
    """Max-BER of the zero-forcing pair mapped to the 7 reduced parameters.

    This is the reduced model's value at the ZF point, which lies in the
    optimizer's search space; it ignores that the ZF pair is not phase-aligned.
    """
    pair = zfbf_pair(scenario.h1, scenario.h2, power_split)
    basis, proj = scenario_projections(scenario)
    params, _ = params_from_vectors(pair.w1, pair.w2, basis, proj)
    return float(ber_pair(params, proj, mods, n0_eff).psi)


def _simulated_pair(tech, scenario, split):
    if tech == "MRT":
        return mrt_pair(scenario.h1, scenario.h2, split)
    if tech == "MRT1_ZFBF2":
        return hybrid_pair(scenario.h1, scenario.h2, "mrt", "zf", split)
    return hybrid_pair(scenario.h1, scenario.h2, "zf", "mrt", split)


def run_eval(records, model=None, cfg: EvalConfig = EvalConfig(), features=None):
    """Yield one :class:`EvalRow` per scenario and technique.

    ``records`` are dataset records; their CO labels are reused when present.
    ``features`` optionally replaces the network inputs row by row (used for
    the quantized-input experiment).
    """
    records = list(records)
    net = _as_model(model)
    if "NN" in cfg.techniques and net is None:
        raise MissingModelError("technique NN requested without a model")
    if features is not None and len(features) != len(records):
        raise ValueError("one feature row per record")
    n0 = cfg.budget.effective_noise_watt
    mods = cfg.mods
    ctx = ConstraintContext.from_modulation(mods)

    co_psi = {}
    if "CO" in cfg.techniques:
        todo = [i for i, r in enumerate(records) if not r.labeled]
        sols = co_solve_many([records[i].projections() for i in todo], mods, n0, cfg.co,
                             seeds=[(cfg.co.seed, records[i].seed) for i in todo])
        co_psi = {i: s.psi_value for i, s in zip(todo, sols)}

    for sid, rec in enumerate(records):
        scenario = rec.scenario()
        proj = rec.projections()
        for tech in cfg.techniques:
            if tech == "NN":
                feats = rec.features if features is None else features[sid]
                params = predict_params(net, feats, proj, ctx, cfg.repair)
                yield EvalRow(tech, rec.nt, sid, ber_pair(params, proj, mods, n0).psi, "analytic")
            elif tech == "CO":
                psi = rec.psi_co if rec.labeled else co_psi[sid]
                yield EvalRow(tech, rec.nt, sid, float(psi), "analytic")
            elif tech == "ZFBF":
                yield EvalRow(tech, rec.nt, sid, zfbf_psi(scenario, mods, n0, cfg.power_split),
                              "analytic")
            else:
                pair = _simulated_pair(tech, scenario, cfg.power_split)
                seed = (int(cfg.seed), int(rec.seed), TECHNIQUES.index(tech))
                sim = simulate_ber_pair(pair.w1, pair.w2, scenario, mods, n0, cfg.mc_symbols,
                                        seed=np.random.SeedSequence(seed).generate_state(1)[0])
                yield EvalRow(tech, rec.nt, sid, sim.psi, "monte_carlo", cfg.mc_symbols)


def percentile(values, q: float) -> float:
    """Smallest value whose empirical cumulative fraction reaches ``q``."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    if not 0 < q <= 1:
        raise ValueError("q must lie in (0, 1]")
    rank = math.ceil(round(q * v.size, 9))
    return float(v[max(rank, 1) - 1])


def ecdf(values):
    """Sorted values with their fractions ``i/n``."""
    v = np.sort(np.asarray(values, dtype=float), kind="stable")
    if v.size == 0:
        raise ValueError("no values")
    return v, np.arange(1, v.size + 1) / v.size


def emit_ecdf(rows, per_nt: bool = True) -> list[dict]:
    """ECDF rows per technique over all ``nt`` (``nt = "all"``) and, optionally, per ``nt``."""
    rows = list(rows)
    if not rows:
        raise ValueError("no evaluation rows")
    for r in rows:
        if r.technique in SIMULATED and r.mode != "monte_carlo":
            raise ModeDisciplineError(f"{r.technique} row in {r.mode} mode")
    out = []
    techs = [t for t in TECHNIQUES if any(r.technique == t for r in rows)]
    nts = sorted({r.nt for r in rows})
    for tech in techs:
        groups = [("all", [r.psi for r in rows if r.technique == tech])]
        if per_nt:
            groups += [(nt, [r.psi for r in rows if r.technique == tech and r.nt == nt]) for nt in nts]
        for nt, vals in groups:
            if not vals:
                continue
            v, frac = ecdf(vals)
            out.extend({"technique": tech, "nt": nt, "psi": repr(float(a)),
                        "cumulative_fraction": repr(float(b))} for a, b in zip(v, frac))
    return out


def write_csv(rows, fields, path=None) -> str:
    """Comma-separated with a header row; returns the text and writes it if ``path`` is set."""
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r if isinstance(r, dict) else r.as_dict())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def read_eval_csv(path) -> list[EvalRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(EVAL_FIELDS):
            raise ValueError(f"{path}: expected header {','.join(EVAL_FIELDS)}")
        return [EvalRow(r["technique"], int(r["nt"]), int(r["scenario_id"]), float(r["psi"]),
                        r["mode"], int(r["mc_symbols"]) if r["mc_symbols"] else None)
                for r in reader]


def run_timing(scenarios_by_nt: dict, model, cfg: EvalConfig = EvalConfig(),
               techniques=("NN", "CO")):
    """Mean wall time per instance, single-threaded.

    NN time covers basis construction, feature extraction, the forward pass
    and repair; CO time covers basis construction and the full multi-start
    solve.  Every technique is warmed up on one instance first.  Antenna
    counts are timed round-robin so slow drift in machine speed does not
    show up as a trend over ``nt``.
    """
    net = _as_model(model)
    if "NN" in techniques and net is None:
        raise MissingModelError("timing NN needs a model")
    n0 = cfg.budget.effective_noise_watt
    mods = cfg.mods
    ctx = ConstraintContext.from_modulation(mods)

    def nn_once(sc):
        _, proj = scenario_projections(sc)
        feats = extract_features(proj, net.xi)
        return predict_params(net, feats, proj, ctx, cfg.repair)

    def co_once(sc):
        _, proj = scenario_projections(sc)
        return co_solve_many([proj], mods, n0, cfg.co, seeds=[(cfg.co.seed, sc.seed or 0)])[0]

    runners = {"NN": nn_once, "CO": co_once}
    rows = []
    with threadpool_limits(limits=1):
        groups = {nt: list(sc) for nt, sc in sorted(scenarios_by_nt.items())}
        for nt, scenarios in groups.items():
            if not scenarios:
                raise ValueError(f"no scenarios for nt={nt}")
        for tech in techniques:
            fn = runners[tech]
            for scenarios in groups.values():
                fn(scenarios[0])
            samples = {nt: [] for nt in groups}
            for i in range(max(map(len, groups.values()))):
                for nt, scenarios in groups.items():
                    if i < len(scenarios):
                        t0 = time.perf_counter()
                        fn(scenarios[i])
                        samples[nt].append(time.perf_counter() - t0)
            for nt, ts in samples.items():
                rows.append(TimingRow(tech, int(nt), float(np.mean(ts)), len(ts), tuple(ts)))
    return rows


@dataclass(frozen=True)
class ValidationRow:
    index: int
    nt: int
    pe1: float
    pe2: float
    mc1: float
    mc2: float
    se1: float
    se2: float
    n_symbols: int
    sigmas: float

    @property
    def z1(self) -> float:
        return abs(self.mc1 - self.pe1) / self.se1

    @property
    def z2(self) -> float:
        return abs(self.mc2 - self.pe2) / self.se2

    @property
    def passed(self) -> bool:
        return self.z1 <= self.sigmas and self.z2 <= self.sigmas

    def as_dict(self) -> dict:
        return {"index": self.index, "nt": self.nt, "pe1": repr(self.pe1), "pe2": repr(self.pe2),
                "mc1": repr(self.mc1), "mc2": repr(self.mc2), "z1": f"{self.z1:.3f}",
                "z2": f"{self.z2:.3f}", "passed": int(self.passed)}


VALIDATION_FIELDS = ("index", "nt", "pe1", "pe2", "mc1", "mc2", "z1", "z2", "passed")


def sample_validation_case(nt: int, mods: ModulationSpec, n0_eff: float, rng, min_ber=1e-3,
                           max_tries=10_000):
    """Random feasible, phase-aligned (scenario, params) with both BERs at least ``min_ber``."""
    ctx = ConstraintContext.from_modulation(mods)
    for _ in range(max_tries):
        sc = sample_scenario(nt, seed=int(rng.integers(2**63)))
        _, proj = scenario_projections(sc)
        amps = rng.uniform(0.0, 1.0, 4)
        amps /= max(1.0, float(np.linalg.norm(amps)))
        params = align_tau1(BeamParams(*amps, 0.0, *rng.uniform(0.0, TWO_PI, 2)), proj)
        if not check_constraints(params, proj, ctx).feasible:
            continue
        pair = ber_pair(params, proj, mods, n0_eff)
        if min(pair.pe1, pair.pe2) >= min_ber:
            return sc, params, pair
    raise RuntimeError("could not sample a validation case")


def validation_suite(count: int = 50, n_symbols: int = 10**6, seed: int = 0, nt: int = 2,
                     mods: ModulationSpec = ModulationSpec(), budget: LinkBudget = LinkBudget(),
                     sigmas: float = 5.0) -> list[ValidationRow]:
    """Compare closed-form BERs with the link simulator on random aligned feasible cases."""
    n0 = budget.effective_noise_watt
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(count):
        sc, params, pair = sample_validation_case(nt, mods, n0, rng)
        basis, proj = scenario_projections(sc)
        beams = assemble_beamformers(params, basis, proj)
        sim = simulate_ber_pair(beams.w1, beams.w2, sc, mods, n0, n_symbols,
                                seed=int(rng.integers(2**63)))
        rows.append(ValidationRow(
            i, nt, float(pair.pe1), float(pair.pe2), sim.ber1, sim.ber2,
            standard_error(pair.pe1, sim.bits_sent1), standard_error(pair.pe2, sim.bits_sent2),
            n_symbols, sigmas))
    return rows
