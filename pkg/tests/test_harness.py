import math

import numpy as np
import pytest

from nomabeam import dataset as ds
from nomabeam.ber import ModulationSpec, ber_pair
from nomabeam.beamformer import params_from_vectors, zfbf_pair
from nomabeam.channel import LinkBudget, sample_scenario, scenario_projections
from nomabeam.harness import (ECDF_FIELDS, EVAL_FIELDS, SIMULATED, TECHNIQUES, EvalConfig, EvalRow,
                              MissingModelError, ModeDisciplineError, TimingRow, emit_ecdf, ecdf,
                              percentile, read_eval_csv, run_eval, run_timing, validation_suite,
                              write_csv, zfbf_psi, zfbf_reduced_psi)
from nomabeam.learner import mlp_init
from nomabeam.linksim import simulate_ber_pair, standard_error
from nomabeam.optimizer import CoConfig

N0 = LinkBudget().effective_noise_watt
MODS = ModulationSpec()


def rows_for(psis, tech="CO", nt=2):
    return [EvalRow(tech, nt, i, p, "analytic") for i, p in enumerate(psis)]


def test_ecdf_fractions():
    v, f = ecdf([0.3, 0.1, 0.4, 0.2])
    assert v.tolist() == [0.1, 0.2, 0.3, 0.4]
    assert f.tolist() == [0.25, 0.5, 0.75, 1.0]
    with pytest.raises(ValueError):
        ecdf([])


def test_percentile_definition():
    vals = [0.1 * k for k in range(1, 11)]
    assert percentile(vals, 0.9) == pytest.approx(0.9)
    assert percentile(vals, 0.5) == pytest.approx(0.5)
    assert percentile(vals, 0.91) == pytest.approx(1.0)
    assert percentile([5.0], 0.9) == 5.0
    rng = np.random.default_rng(0)
    for _ in range(50):
        v = rng.uniform(size=int(rng.integers(1, 300)))
        q = float(rng.uniform(0.01, 1))
        p = percentile(v, q)
        assert np.mean(v <= p) >= q - 1e-12
        smaller = v[v < p]
        assert smaller.size == 0 or np.mean(v <= smaller.max()) < q
    with pytest.raises(ValueError):
        percentile([], 0.5)
    with pytest.raises(ValueError):
        percentile([1.0], 0.0)


def test_emit_ecdf_counts_and_reproducibility():
    rows = rows_for([0.1, 0.2, 0.3, 0.4]) + rows_for([0.05, 0.5], nt=3)
    rows += [EvalRow("MRT", 2, 0, 0.5, "monte_carlo", 100)]
    out = emit_ecdf(rows)
    co_all = [r for r in out if r["technique"] == "CO" and r["nt"] == "all"]
    co_per = [r for r in out if r["technique"] == "CO" and r["nt"] != "all"]
    assert len(co_all) == len(co_per) == 6
    two = [float(r["cumulative_fraction"]) for r in out if r["technique"] == "CO" and r["nt"] == 2]
    assert two == [0.25, 0.5, 0.75, 1.0]
    assert write_csv(out, ECDF_FIELDS) == write_csv(emit_ecdf(rows), ECDF_FIELDS)
    with pytest.raises(ValueError):
        emit_ecdf([])


def test_mode_discipline():
    for tech in SIMULATED:
        with pytest.raises(ModeDisciplineError):
            EvalRow(tech, 2, 0, 0.1, "analytic")
    for tech in set(TECHNIQUES) - SIMULATED:
        with pytest.raises(ModeDisciplineError):
            EvalRow(tech, 2, 0, 0.1, "monte_carlo", 10)
    with pytest.raises(ValueError):
        EvalRow("CO", 2, 0, 0.1, "analytic", 10)
    with pytest.raises(ValueError):
        EvalRow("XX", 2, 0, 0.1, "analytic")


def test_timing_row_validation():
    with pytest.raises(ValueError):
        TimingRow("NN", 2, 0.0, 3)


def test_zfbf_psi_is_exact():
    for s in range(5):
        sc = sample_scenario(2 + s % 3, seed=s)
        pair = zfbf_pair(sc.h1, sc.h2)
        # lower the SNR so the simulated error rates are measurable
        n0 = N0 * 1e3
        analytic = zfbf_psi(sc, MODS, n0)
        sim = simulate_ber_pair(pair.w1, pair.w2, sc, MODS, n0, 100_000, seed=s)
        assert abs(sim.psi - analytic) <= 5 * standard_error(analytic, sim.bits_sent1) + 1e-12


def test_zfbf_reduced_uses_params_from_vectors():
    sc = sample_scenario(2, seed=1)
    basis, proj = scenario_projections(sc)
    pair = zfbf_pair(sc.h1, sc.h2)
    params, _ = params_from_vectors(pair.w1, pair.w2, basis, proj)
    assert zfbf_reduced_psi(sc, MODS, N0) == ber_pair(params, proj, MODS, N0).psi
    assert params.delta1 <= 1e-12


@pytest.fixture(scope="module")
def labeled():
    return ds.label_dataset(list(ds.generate_dataset([2, 3], 3, seed=1)), MODS, CoConfig(n_starts=3))


def test_run_eval_all_techniques(labeled):
    cfg = EvalConfig(mc_symbols=2000, co=CoConfig(n_starts=3))
    rows = list(run_eval(labeled, mlp_init(seed=0), cfg))
    assert len(rows) == len(labeled) * len(TECHNIQUES)
    for r in rows:
        assert (r.mode == "monte_carlo") == (r.technique in SIMULATED)
        assert 0 <= r.psi <= 1
    co = [r.psi for r in rows if r.technique == "CO"]
    assert co == [r.psi_co for r in labeled]
    again = list(run_eval(labeled, mlp_init(seed=0), cfg))
    assert write_csv(rows, EVAL_FIELDS) == write_csv(again, EVAL_FIELDS)


def test_run_eval_solves_unlabeled(labeled):
    raw = list(ds.generate_dataset([2, 3], 3, seed=1))
    cfg = EvalConfig(techniques=("CO",), co=CoConfig(n_starts=3))
    rows = list(run_eval(raw, None, cfg))
    assert [r.psi for r in rows] == [r.psi_co for r in labeled]


def test_run_eval_needs_model(labeled):
    with pytest.raises(MissingModelError):
        list(run_eval(labeled, None, EvalConfig(techniques=("NN",))))
    with pytest.raises(ValueError):
        EvalConfig(techniques=("NN", "BOGUS"))


def test_run_eval_quantized_features(labeled):
    feats = np.repeat(ds.feature_matrix(labeled).mean(axis=0)[None], len(labeled), axis=0)
    rows = list(run_eval(labeled, mlp_init(seed=0), EvalConfig(techniques=("NN",)), features=feats))
    assert len(rows) == len(labeled)
    with pytest.raises(ValueError):
        list(run_eval(labeled, mlp_init(seed=0), EvalConfig(techniques=("NN",)), features=feats[:1]))


def test_csv_round_trip(tmp_path, labeled):
    rows = list(run_eval(labeled, mlp_init(seed=0), EvalConfig(mc_symbols=500,
                                                               co=CoConfig(n_starts=3))))
    path = tmp_path / "e.csv"
    text = write_csv(rows, EVAL_FIELDS, path)
    assert text.splitlines()[0] == ",".join(EVAL_FIELDS)
    back = read_eval_csv(path)
    assert back == rows
    (tmp_path / "bad.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        read_eval_csv(tmp_path / "bad.csv")


def test_run_timing_small():
    scen = {nt: [sample_scenario(nt, seed=s) for s in range(3)] for nt in (2, 3)}
    rows = run_timing(scen, mlp_init(seed=0), EvalConfig(co=CoConfig(n_starts=2)))
    assert [(r.technique, r.nt) for r in rows] == [("NN", 2), ("NN", 3), ("CO", 2), ("CO", 3)]
    assert all(r.count == 3 and r.mean_seconds > 0 and len(r.samples) == 3 for r in rows)
    with pytest.raises(MissingModelError):
        run_timing(scen, None)


def test_validation_suite_small():
    rows = validation_suite(count=3, n_symbols=50_000, seed=1)
    assert len(rows) == 3
    for r in rows:
        assert min(r.pe1, r.pe2) >= 1e-3
        assert r.se1 == pytest.approx(math.sqrt(r.pe1 * (1 - r.pe1) / (2 * 50_000)))
        assert r.passed == (r.z1 <= 5 and r.z2 <= 5)
