import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nomabeam.ber import (VALIDATED_USER2_PAIRS, ModulationSpec, UnsupportedModulationError,
                          UnvalidatedModulationError, ber_4qam_direct, ber_pair, ber_user1,
                          ber_user1_gains, ber_user2, ber_user2_gains, psi, q_function, term_table,
                          user2_gains)
from nomabeam.beamformer import (BeamParams, ConstraintContext, align_tau1, assemble_beamformers,
                                 check_constraints)
from nomabeam.channel import BasisProjections, sample_scenario, scenario_projections
from nomabeam.linksim import simulate_ber_pair, standard_error

from conftest import random_params

_CTX = ConstraintContext.from_modulation(ModulationSpec())


def q_by_quadrature(x):
    val, _ = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi), x, math.inf,
                            epsabs=1e-14, epsrel=1e-12)
    return val


@pytest.mark.parametrize("x, expected, tol", [(0.0, 0.5, 0.0), (1.2816, 0.1, 1e-4),
                                              (2.0, 0.02275, 1e-5)])
def test_q_function_values(x, expected, tol):
    assert abs(q_function(x) - expected) <= tol


@pytest.mark.parametrize("x", [-3.0, -0.5, 0.3, 1.0, 2.5, 4.0, 6.0])
def test_q_function_matches_quadrature(x):
    assert q_function(x) == pytest.approx(q_by_quadrature(x), rel=1e-9)


def test_q_function_tail_relative_precision():
    # Mills-ratio asymptotic Q(x) ~ phi(x)/x * (1 - 1/x^2 + 3/x^4)
    x = 20.0
    approx = math.exp(-x * x / 2) / (x * math.sqrt(2 * math.pi)) * (1 - 1 / x**2 + 3 / x**4)
    assert q_function(x) == pytest.approx(approx, rel=1e-5)
    assert q_function(x) > 0


@given(st.floats(-30, 30))
def test_q_function_symmetry(x):
    assert q_function(x) + q_function(-x) == pytest.approx(1.0, abs=1e-15)


def test_q_function_vectorised():
    out = q_function(np.array([0.0, 2.0]))
    assert out.shape == (2,) and out[0] == 0.5


def test_unsupported_modulation():
    with pytest.raises(UnsupportedModulationError):
        ModulationSpec(8, 4)
    with pytest.raises(UnsupportedModulationError):
        ModulationSpec(4, 32)


def test_unvalidated_user2_pairs_raise():
    proj = BasisProjections(1.0, 0.5, 0.2, 1.0)
    p = BeamParams(0.6, 0.4, 0.1, 0.3, 0.0, 0.0, 0.0)
    for m1 in (4, 16, 64):
        for m2 in (4, 16, 64):
            mods = ModulationSpec(m1, m2)
            assert mods.user2_validated == ((m1, m2) in VALIDATED_USER2_PAIRS)
            ber_user1(p, proj, mods, 0.1)
            if mods.user2_validated:
                assert 0 <= ber_user2(p, proj, mods, 0.1) <= 1
            else:
                with pytest.raises(UnvalidatedModulationError):
                    ber_user2(p, proj, mods, 0.1)


def test_user1_interference_free_reduces_to_single_q():
    n0 = 0.37
    h = 2 * math.sqrt(n0) / 0.7
    proj = BasisProjections(h1_norm=h, g21_mag=0.1, g21_angle=0.0, g22=1.0)
    p = BeamParams(0.7, 0.2, 0.0, 0.3, 1.234, 0.5, 2.0)
    assert abs(ber_user1(p, proj, ModulationSpec(), n0) - 0.02275) <= 1e-5
    assert ber_user1(p, proj, ModulationSpec(), n0) == pytest.approx(q_function(2.0), rel=1e-12)
    app = ber_4qam_direct(p, proj, n0)
    assert app.pe1 == pytest.approx(q_function(2.0), rel=1e-12)


def test_zero_gains_give_half():
    proj = BasisProjections(1.0, 0.5, 0.3, 1.0)
    mods = ModulationSpec()
    assert ber_user1(BeamParams(0, 0.4, 0, 0.2, 0.3, 0, 0), proj, mods, 0.1) == pytest.approx(0.5)
    assert ber_user2_gains(0.0, 0.0, mods, 0.1) == pytest.approx(0.5)
    z = BeamParams(0, 0, 0, 0, 0.3, 0.2, 1.0)
    assert ber_user2(z, proj, mods, 0.1) == pytest.approx(0.5)


@pytest.mark.parametrize("a, b, expected", [(1e-3, 2e-4, 1e-3), (0.0, 0.5, 0.5), (0.3, 0.3, 0.3)])
def test_psi_examples(a, b, expected):
    assert psi(a, b) == expected


def test_psi_vectorised():
    assert np.array_equal(psi(np.array([0.1, 0.4]), np.array([0.2, 0.3])), [0.2, 0.4])


def _random_feasible_tuple(rng):
    while True:
        _, proj = scenario_projections(sample_scenario(int(rng.integers(2, 6)),
                                                       seed=int(rng.integers(2**32))))
        p = random_params(rng)
        if check_constraints(p, proj, _CTX).feasible:
            return p, proj


def test_general_equals_direct_4qam_500_tuples(n0):
    rng = np.random.default_rng(2024)
    mods = ModulationSpec()
    worst = 0.0
    for _ in range(500):
        p, proj = _random_feasible_tuple(rng)
        # scale noise so error rates are not all vanishingly small
        n0_case = n0 * float(rng.uniform(1, 1e3))
        gen = ber_pair(p, proj, mods, n0_case)
        app = ber_4qam_direct(p, proj, n0_case)
        worst = max(worst, abs(gen.pe1 - app.pe1), abs(gen.pe2 - app.pe2))
    assert worst <= 1e-12


def test_direct_4qam_rejects_other_orders():
    proj = BasisProjections(1.0, 0.5, 0.3, 1.0)
    with pytest.raises(UnsupportedModulationError):
        ber_4qam_direct(BeamParams(0.5, 0.5, 0.1, 0.1, 0, 0, 0), proj, 0.1, ModulationSpec(16, 4))


def test_direct_4qam_user2_perfect_sic_limit():
    proj = BasisProjections(1.0, 1.0, 0.0, 1.0)
    n0 = 0.2
    g2 = 0.3
    p = BeamParams(50.0, 50.0, g2, 0.0, 0.0, 0.0, 0.0)
    _, big2 = user2_gains(p.rho1, p.rho2, p.delta1, p.delta2, p.phi1, p.phi2, proj)
    expected = q_function(big2 / math.sqrt(2 * n0 / 2))
    assert ber_4qam_direct(p, proj, n0).pe2 == pytest.approx(expected, rel=1e-12)
    assert ber_user2(p, proj, ModulationSpec(), n0) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-10, 10))
def test_gauge_invariance_user1(seed, c):
    rng = np.random.default_rng(seed)
    sc = sample_scenario(int(rng.integers(2, 6)), seed=seed)
    basis, proj = scenario_projections(sc)
    p = random_params(rng)
    n0 = float(rng.uniform(0.01, 1)) * proj.h1_norm**2
    pair = assemble_beamformers(p, basis, proj)
    rot = np.exp(1j * c)
    mods = ModulationSpec()

    def from_vectors(w1, w2):
        h11, h12 = np.vdot(sc.h1, w1), np.vdot(sc.h1, w2)
        return ber_user1_gains(abs(h11), abs(h12), np.angle(h12) - np.angle(h11), mods, n0)

    base = from_vectors(pair.w1, pair.w2)
    assert from_vectors(rot * pair.w1, rot * pair.w2) == pytest.approx(base, abs=1e-13)
    assert base == pytest.approx(ber_user1(p, proj, mods, n0), abs=1e-13)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_user2_depends_on_phase_difference_only(seed):
    rng = np.random.default_rng(seed)
    proj = BasisProjections(*rng.uniform(0.2, 2, 2), rng.uniform(0, 2 * math.pi), rng.uniform(0.2, 2))
    p = random_params(rng)
    c = float(rng.uniform(-5, 5))
    q = BeamParams(p.rho1, p.rho2, p.delta1, p.delta2, p.tau1, p.phi1 + c, p.phi2 + c)
    a = ber_user2(p, proj, ModulationSpec(), 0.3)
    b = ber_user2(q, proj, ModulationSpec(), 0.3)
    assert a == pytest.approx(b, abs=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(VALIDATED_USER2_PAIRS)))
def test_outputs_are_probabilities(seed, pair):
    rng = np.random.default_rng(seed)
    proj = BasisProjections(*rng.uniform(0.01, 3, 2), rng.uniform(0, 2 * math.pi), rng.uniform(0.01, 3))
    p = random_params(rng, scale_to_power=False)
    n0 = float(10 ** rng.uniform(-4, 1))
    r = ber_pair(p, proj, ModulationSpec(*pair), n0)
    assert 0 <= r.pe1 <= 1 and 0 <= r.pe2 <= 1


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([4, 16, 64]), st.sampled_from([4, 16, 64]), st.floats(0.01, 1.0))
def test_user1_monotone_in_gain_without_interference(m1, m2, n0):
    gains = np.linspace(0, 10, 60)
    vals = ber_user1_gains(gains, np.zeros_like(gains), np.zeros_like(gains), ModulationSpec(m1, m2), n0)
    assert np.all(np.diff(vals) <= 1e-15)
    assert vals[0] == pytest.approx(0.5)


def test_term_table_is_immutable_and_cached():
    t = term_table(4, 4)
    assert t is term_table(4, 4)
    with pytest.raises(ValueError):
        t.coef1[0] = 3.0
    # every Q term equals 1/2 at zero gain and the weights sum to one
    assert float(np.sum(t.coef1)) == pytest.approx(1.0)


def test_user2_matches_simulation_single_cases(n0):
    """Fixed-seed spot checks for every validated modulation pair, 3 standard errors."""
    rng = np.random.default_rng(99)
    for pair in sorted(VALIDATED_USER2_PAIRS):
        mods = ModulationSpec(*pair)
        ctx = ConstraintContext.from_modulation(mods)
        found = 0
        while found < 2:
            sc = sample_scenario(2, seed=int(rng.integers(2**32)))
            basis, proj = scenario_projections(sc)
            p = align_tau1(random_params(rng), proj)
            if not check_constraints(p, proj, ctx).feasible:
                continue
            # pick a noise level where both error rates are measurable
            for n0_case in n0 * np.logspace(0, 8, 81):
                b = ber_pair(p, proj, mods, n0_case)
                if min(b.pe1, b.pe2) >= 1e-3:
                    break
            if not (min(b.pe1, b.pe2) >= 1e-3 and max(b.pe1, b.pe2) <= 0.4):
                continue
            found += 1
            pairv = assemble_beamformers(p, basis, proj)
            sim = simulate_ber_pair(pairv.w1, pairv.w2, sc, mods, n0_case, 200_000,
                                    seed=int(rng.integers(2**32)))
            assert abs(sim.ber1 - b.pe1) <= 3 * standard_error(b.pe1, sim.bits_sent1) + 1e-12
            assert abs(sim.ber2 - b.pe2) <= 3 * standard_error(b.pe2, sim.bits_sent2) + 1e-12
