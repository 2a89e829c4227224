import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfscramble.hartree import evolve
from mfscramble.scrambling import (OTOC_PREFACTOR, CovarianceMatrix, butterfly_fit, char_function,
                                   enumerate_pairings, gaussian_expectation, growth_envelope,
                                   initial_rate, otoc, otoc_scalar, otoc_scalar_series,
                                   otoc_symplectic_form, sigma_matrix, wick_moment)
from mfscramble.bogoliubov import propagate_many
from mfscramble.space import Field, InteractionKernel, ModeSpace, Observable, apply_observable, inner


def double_factorial(n):
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def brute_force_pairings(m):
    """Perfect matchings from all permutations, canonicalised and deduplicated."""
    found = set()
    for perm in itertools.permutations(range(1, m + 1)):
        pairs = tuple(sorted(tuple(sorted(perm[i:i + 2])) for i in range(0, m, 2)))
        found.add(pairs)
    return found


def cov(entries):
    entries = np.asarray(entries, dtype=complex)
    return CovarianceMatrix(np.arange(entries.shape[0], dtype=float), entries)


# -- combinatorics -------------------------------------------------------------

@pytest.mark.parametrize("m", [0, 2, 4, 6, 8])
def test_pairing_count(m):
    assert len(enumerate_pairings(m)) == double_factorial(m - 1)


@pytest.mark.parametrize("m", [2, 4, 6])
def test_pairings_match_brute_force(m):
    assert {p.pairs for p in enumerate_pairings(m)} == brute_force_pairings(m)


def test_pairings_are_canonical():
    for p in enumerate_pairings(6):
        firsts = [i for i, _ in p.pairs]
        assert firsts == sorted(firsts)
        assert all(i < j for i, j in p.pairs)


def test_pairings_reject_odd_and_large_orders():
    with pytest.raises(ValueError):
        enumerate_pairings(3)
    with pytest.raises(ValueError):
        enumerate_pairings(14)


# -- Gaussian formulas ---------------------------------------------------------

def test_wick_moment_small_orders():
    s = np.array([[2.0, 0.5 + 0.1j, 0.3, 0.2j], [0.5 + 0.1j, 1.0, 0.4, 0.1],
                  [0.3, 0.4, 1.5, 0.6], [0.2j, 0.1, 0.6, 0.7]])
    assert wick_moment(cov(s[:2, :2]), 2) == pytest.approx(s[0, 1])
    expected = s[0, 1] * s[2, 3] + s[0, 2] * s[1, 3] + s[0, 3] * s[1, 2]
    assert wick_moment(cov(s), 4) == pytest.approx(expected)
    assert wick_moment(cov(s[:3, :3]), 3) == 0
    with pytest.raises(ValueError):
        wick_moment(cov(s), 2)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6).filter(lambda v: len(v) % 2 == 0))
def test_wick_moment_of_rank_one_covariance(v):
    v = np.array(v)
    m = len(v)
    assert wick_moment(cov(np.outer(v, v)), m) == pytest.approx(double_factorial(m - 1) * np.prod(v),
                                                                 abs=1e-10)


def test_char_function_matches_quadrature():
    s = np.array([[1.0, 0.4], [0.4, 0.8]])
    lam = np.array([0.7, -0.3])
    # E cos(l1 X1 + l2 X2) is not a product, so check the one-variable case and the m=2 moment
    one = cov(s[:1, :1])
    assert gaussian_expectation(one, lambda x: np.cos(0.7 * x)) == pytest.approx(
        char_function(one, [0.7]).real, abs=1e-12)
    assert gaussian_expectation(cov(s), lambda x: x) == pytest.approx(0.4, abs=1e-12)
    assert char_function(cov(s), lam) == pytest.approx(np.exp(-0.5 * lam @ s @ lam))


def test_gaussian_expectation_guards():
    with pytest.raises(ValueError):
        gaussian_expectation(cov(np.eye(4)), lambda x: x)
    with pytest.raises(ValueError):
        gaussian_expectation(cov([[1.0, 0.1j], [0.1j, 1.0]]), lambda x: x)
    with pytest.raises(ValueError):
        gaussian_expectation(cov([[1.0, 2.0], [2.0, 1.0]]), lambda x: x)


# -- large-N quantities on a torus ------------------------------------------

@pytest.fixture(scope="module")
def twisted():
    """Complex condensate on which the t = 0 scalar does not vanish."""
    sp = ModeSpace.torus(2 * np.pi, 64, InteractionKernel.gaussian(1.0, 0.5))
    phi0 = Field.from_function(sp, lambda x: (1 + 0.1 * np.cos(x)) * np.exp(0.3j * np.cos(x))).normalized()
    A = Observable.position_fn(sp, np.cos)
    B = Observable.momentum_fn(sp, lambda k: k[:, 0] ** 2)
    return evolve(phi0, 0.5), A, B


def test_scalar_at_zero_matches_grid_oracle(twisted):
    traj, A, B = twisted
    # independent grid summation with numpy FFTs, frozen
    assert otoc_scalar(traj, A, B, 0.0) == pytest.approx(-0.1496268656716418, abs=1e-13)


def test_otoc_is_prefactor_times_square(twisted):
    traj, A, B = twisted
    s = otoc_scalar(traj, A, B, 0.5)
    assert otoc(traj, A, B, 0.5) == pytest.approx(OTOC_PREFACTOR * s * s)


def test_symplectic_form_equals_four_times_scalar(twisted):
    traj, A, B = twisted
    for t in (0.0, 0.5):
        assert otoc_symplectic_form(traj, A, B, t) == pytest.approx(4.0 * otoc_scalar(traj, A, B, t),
                                                                    rel=1e-10)


def test_series_matches_pointwise(twisted):
    traj, A, B = twisted
    series = otoc_scalar_series(traj, A, B, [0.1, 0.3, 0.5])
    np.testing.assert_allclose(series, [otoc_scalar(traj, A, B, t) for t in (0.1, 0.3, 0.5)], atol=1e-14)


def test_initial_rate_is_slope_of_scalar(twisted):
    traj, A, B = twisted
    h = [0.004, 0.002]
    s = otoc_scalar_series(traj, A, B, [0.0, *h])
    d1, d2 = ((s[i + 1] - s[0]) / hh for i, hh in enumerate(h))
    assert 2 * d2 - d1 == pytest.approx(initial_rate(traj.state(0.0), A, B), rel=1e-4)


def test_initial_rate_on_ring_is_hopping_times_amplitudes(preset_c):
    # real condensate, A = n_3, B = n_1: only the 1-3 hopping survives, rate = -phi_1 phi_3
    phi = preset_c.phi0.amplitudes
    assert initial_rate(preset_c.phi0, preset_c.A, preset_c.B) == pytest.approx(-phi[0] * phi[2], abs=1e-14)
    assert -phi[0] * phi[2] == pytest.approx(-0.3)


def test_sigma_matrix_structure(traj_c, preset_c):
    sig = sigma_matrix(traj_c, preset_c.A, [0.0, 0.4, 0.8])
    np.testing.assert_allclose(sig.entries, sig.entries.T)
    assert np.all(np.abs(np.diag(sig.entries).imag) < 1e-15)
    assert np.all(np.diag(sig.entries).real > 0)
    # one time: variance of A in the condensate
    single = sigma_matrix(traj_c, preset_c.A, [0.0])
    phi = preset_c.phi0.amplitudes
    n3 = abs(phi[2]) ** 2
    assert single.entries[0, 0].real == pytest.approx(n3 - n3 ** 2, abs=1e-14)


# -- fits ------------------------------------------------------------------------

def test_butterfly_fit_recovers_rate():
    t = np.linspace(0, 2, 21)
    fit = butterfly_fit(t, 0.3 * np.exp(1.7 * t), (0.5, 2.0))
    assert fit.rate == pytest.approx(1.7)
    assert fit.r2 == pytest.approx(1.0)
    assert fit.window == (0.5, 2.0)


def test_butterfly_fit_constant_and_errors():
    t = np.linspace(0, 1, 11)
    fit = butterfly_fit(t, np.full(11, 2.0), (0.0, 1.0))
    assert fit.rate == 0.0 and fit.r2 == 1.0
    with pytest.raises(ValueError):
        butterfly_fit(t, np.zeros(11), (0.0, 1.0))
    with pytest.raises(ValueError):
        butterfly_fit(t, np.ones(11), (5.0, 6.0))


def test_growth_envelope_bounds_oscillating_exponential():
    t = np.linspace(0.5, 5, 451)
    vals = np.exp(0.8 * t) * (1.1 + np.sin(7 * t))
    env = growth_envelope(t, vals, (0.5, 5.0))
    assert not env.super_exponential
    assert np.all(np.log(vals) <= env.intercept + env.rate * t + 1e-12)
    assert env.rate == pytest.approx(0.8, abs=0.1)


def test_growth_envelope_flags_super_exponential():
    t = np.linspace(0.5, 5, 451)
    env = growth_envelope(t, np.exp(t ** 2), (0.5, 5.0))
    assert env.super_exponential


def test_char_function_mixed_derivative_is_second_moment():
    s = cov([[0.9, 0.35 + 0.2j], [0.35 + 0.2j, 0.6]])
    h = 1e-4

    def c(a, b):
        return char_function(s, [a, b])

    mixed = (c(h, h) - c(h, -h) - c(-h, h) + c(-h, -h)) / (4 * h * h)
    assert -mixed == pytest.approx(wick_moment(s, 2), abs=1e-6)


def test_equal_time_covariance_has_real_diagonal(traj_c, preset_c):
    sig = sigma_matrix(traj_c, preset_c.A, [0.7, 0.7])
    assert np.max(np.abs(np.diag(sig.entries).imag)) < 1e-12
    assert sig.entries[0, 1] == pytest.approx(sig.entries[0, 0], abs=1e-14)


def test_centered_and_uncentered_scalars_agree(traj_a, prop_a, preset_a):
    A, B = preset_a.A, preset_a.B
    times = [0.5, 1.5, 3.0]
    centered = otoc_scalar_series(traj_a, A, B, times, prop_a)
    raw = propagate_many(prop_a, [apply_observable(A, traj_a.state(t)) for t in times], times)
    b_phi = apply_observable(B, preset_a.phi0)
    uncentered = [inner(b_phi, f).imag for f in raw]
    np.testing.assert_allclose(centered, uncentered, atol=1e-8)
    assert np.all(OTOC_PREFACTOR * centered ** 2 >= 0)
