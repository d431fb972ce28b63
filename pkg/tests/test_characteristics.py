"""Characteristic tables: exact moments, star transforms, gap characteristic."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmjsim import make_phi1, make_indicator_characteristic, spectral_decompose, star_transform
from cmjsim.characteristics import (
    Characteristic,
    NoiseLaw,
    assumption_sums,
    expected_process,
    make_table_characteristic,
)
from cmjsim.spectral import projected_power

from oracles import exact_moment_tables


def test_noise_law_moments():
    law = NoiseLaw(probs=(0.25, 0.75), values=(0.0, 4.0))
    assert law.mean() == pytest.approx(3.0)
    assert law.variance() == pytest.approx(3.0)  # E X^2 = 12


def test_noise_law_rejects_bad_probabilities():
    with pytest.raises(ValueError):
        NoiseLaw(probs=(0.6, 0.6), values=(0.0, 1.0))
    with pytest.raises(ValueError):
        NoiseLaw(probs=(1.0,), values=(0.0, 1.0))


def test_indicator_characteristic_shape():
    phi = make_indicator_characteristic([2.0, -1.0])
    assert phi.J == 2
    assert phi.value_keys == (0,)
    assert phi.is_deterministic and phi.is_real
    assert np.allclose(phi.mean(0), [2.0, -1.0])
    assert np.allclose(phi.mean(3), [0.0, 0.0])


def test_mean_includes_noise_and_variance_splits(mirror):
    model = mirror.model
    c_row = np.array([1.0, -1.0])
    phi = make_table_characteristic(
        2,
        base={0: np.array([5.0, 0.0])},
        coeff={0: c_row},
        noise={(0, 1): NoiseLaw((0.5, 0.5), (0.0, 2.0))},
    )
    assert np.allclose(phi.mean(0), [5.0, 1.0])  # noise adds its mean to type 2
    var = phi.variance(0, model)
    # coeff part: c C_j c^T; both columns have C_j = [[1,-1],[-1,1]] -> 4
    assert var[0] == pytest.approx(4.0)
    assert var[1] == pytest.approx(4.0 + 1.0)  # plus Bernoulli(1/2)*2 variance


def test_mean_table_drops_all_zero_rows():
    phi = make_table_characteristic(
        1, base={0: np.array([1.0]), 3: np.array([0.0])}, coeff={1: np.array([2.0])}
    )
    assert sorted(phi.mean_table()) == [0]
    # the all-zero base row at age 3 is canonicalized away entirely
    assert phi.value_keys == (0, 1)
    assert phi.coeff_k_min == 1
    assert phi.static_k_min == 0


def test_scaling_by_complex_factor(mirror):
    model = mirror.model
    phi = make_table_characteristic(
        2,
        base={0: np.array([1.0, 2.0])},
        coeff={1: np.array([1.0, -1.0])},
        noise={(0, 0): NoiseLaw((0.5, 0.5), (0.0, 2.0))},
    )
    z = 2.0 - 1.0j
    scaled = phi.scaled(z)
    for k in (0, 1):
        assert np.allclose(scaled.mean(k), z * phi.mean(k))
        assert np.allclose(scaled.variance(k, model), abs(z) ** 2 * phi.variance(k, model))
    assert not scaled.is_real


def test_empirical_single_individual_moments(mirror):
    """Sample phi(k) for one individual of each type; compare exact tables."""
    model = mirror.model
    rng = np.random.default_rng(40_127)
    c_row = np.array([1.0, -1.0])
    noise = NoiseLaw((0.25, 0.75), (0.0, 4.0))
    phi = make_table_characteristic(
        2, base={0: np.array([5.0, -2.0])}, coeff={0: c_row}, noise={(0, 1): noise}
    )
    R = 100_000
    for j in range(2):
        law = model.laws[j]
        outcomes = law.outcome_matrix().astype(float)
        idx = rng.choice(len(law.probs), size=R, p=law.probs)
        vals = phi.base[0][j].real + (outcomes[idx] - model.A[:, j]) @ c_row
        if (0, j) in phi.noise:
            vals = vals + rng.choice(noise.values, size=R, p=noise.probs).real
        exact_mean = phi.mean(0)[j].real
        exact_var = phi.variance(0, model)[j]
        se_mean = np.sqrt(exact_var / R)
        assert abs(vals.mean() - exact_mean) < 4 * se_mean
        c = vals - vals.mean()
        se_var = np.sqrt(max(np.mean(c**4) - exact_var**2, 0.0) / R)
        assert abs(c.var() - exact_var) < 4 * se_var + 1e-12


def test_column_covariance_matches_enumeration(mirror):
    model = mirror.model
    c_row = np.array([1.0, -1.0])
    phi = make_table_characteristic(2, coeff={0: c_row})
    w = np.array([2.0, 1.0])
    for j in range(2):
        # brute force over the enumerated outcomes of column j
        law = model.laws[j]
        mean = model.A[:, j]
        acc = 0.0
        for p, counts in zip(law.probs, law.outcome_matrix()):
            acc += p * (c_row @ (counts - mean)) * (w @ (counts - mean))
        assert phi.column_covariance(0, w, j, model) == pytest.approx(acc, abs=1e-12)


# -- star transforms ---------------------------------------------------------


def test_plain_star_rows_are_powers_of_the_mean_matrix(mirror):
    S = mirror.S
    a = np.array([1.0, -1.0])
    star = star_transform(make_indicator_characteristic(a), S, model=mirror.model, n_max=12)
    A = S.A
    for k in range(1, 13):
        expect = a @ np.linalg.matrix_power(A, k - 1)
        assert np.allclose(star.rows[k], expect, atol=1e-9), k
    assert star.k_lo == 1 and star.k_hi == 12
    # mean-zero by construction: coeff-only tables have no static part
    assert not star.characteristic.mean_table()
    assert star.characteristic.coeff_k_min == 1


def test_star_transform_requires_deterministic_input(mirror):
    noisy = make_table_characteristic(
        2, base={0: np.array([1.0, 1.0])}, noise={(0, 0): NoiseLaw((0.5, 0.5), (0.0, 1.0))}
    )
    with pytest.raises(ValueError):
        star_transform(noisy, mirror.S)


def test_projected_star_piecewise_window(mirror):
    S = mirror.S
    r0 = np.array([1.0, 2.0])
    r_neg = np.array([0.0, 1.0])
    phi = make_table_characteristic(2, base={-2: r_neg, 0: r0})
    for sel in (1, 2):
        star = star_transform(phi, S, projection_selector=sel)
        # k <= 0: sum over l >= 0 of mt[k-1-l] pi A^l; k > 0: minus the l <= -1 part
        for k in (-1, 0):
            expect = np.zeros(2, dtype=complex)
            for m in (-2, 0):
                l = k - 1 - m
                if l >= 0:
                    expect += phi.mean(m) @ projected_power(S, sel, l)
            got = star.rows.get(k, np.zeros(2))
            assert np.allclose(got, expect, atol=1e-10), (sel, k)
        assert all(k <= 0 for k in star.rows)


def test_projected_star_covers_positive_support(mirror):
    S = mirror.S
    r = np.array([1.0, 2.0])
    phi = make_table_characteristic(2, base={1: r})
    for sel in (1, 2):
        star = star_transform(phi, S, projection_selector=sel)
        assert sorted(star.rows) == [1]
        assert np.allclose(star.rows[1], -r @ projected_power(S, sel, -1), atol=1e-12)


def test_sub_star_uses_decaying_powers(three_scale):
    S = three_scale.S
    a = three_scale.row
    star = star_transform(make_indicator_characteristic(a), S, projection_selector=3, n_max=15)
    for k in sorted(star.rows):
        expect = a @ projected_power(S, 3, k - 1)
        assert np.allclose(star.rows[k], expect, atol=1e-10)
    # geometric decay of the summability terms
    assert star.sum_sq_ratio < 1.0 or np.isnan(star.sum_sq)


def test_summability_sum_matches_brute_force_and_flags_critical_divergence(mirror):
    S, model = mirror.S, mirror.model
    a = np.array([1.0, -1.0])  # eigenvector of the half-power eigenvalue 2
    star = star_transform(make_indicator_characteristic(a), S, model=model, n_max=25)
    brute = 0.0
    for k, row in star.rows.items():
        for j in range(2):
            var_j = float(np.real(row @ model.covs[j] @ row.conj()))
            brute += S.rho ** (-k) * S.u[j] * var_j
    assert star.sum_sq == pytest.approx(brute, rel=1e-9, abs=1e-9)
    # terms are constant in k along the half-power direction: honest divergence
    assert not star.sum_sq_converged
    assert star.sum_sq_ratio == pytest.approx(1.0, abs=1e-9)


def test_summability_sum_converges_below_the_half_power_circle(cross_feed):
    S, model = cross_feed.S, cross_feed.model
    star = star_transform(
        make_indicator_characteristic(cross_feed.row), S, model=model, n_max=30
    )
    assert star.sum_sq_converged
    assert star.sum_sq_ratio < 1.0
    assert np.isfinite(star.sum_sq) and star.sum_sq > 0


# -- the martingale-gap characteristic ---------------------------------------


def test_gap_characteristic_rows_for_doubling(single_type):
    S, model = single_type.S, single_type.model
    phi1 = make_phi1(S, np.array([1.0]), model=model)
    # row at age k is 2^{k-1} for the doubling mean
    for k in sorted(phi1.coeff):
        assert phi1.coeff[k][0] == pytest.approx(2.0 ** (k - 1), rel=1e-12)
    assert max(phi1.coeff) == 0
    assert phi1.k_low < -40  # auto-truncation reaches the 1e-14 threshold
    assert 0 < phi1.discarded_mass < 1e-12


def test_gap_characteristic_hard_window(single_type):
    S = single_type.S
    phi1 = make_phi1(S, np.array([1.0]), k_min=-5)
    assert sorted(phi1.coeff) == list(range(-5, 1))
    assert phi1.k_low == -5


def test_gap_characteristic_zero_row_short_circuits(cross_feed):
    S = cross_feed.S
    phi1 = make_phi1(S, np.zeros(2))
    assert not phi1.coeff
    assert phi1.discarded_mass == 0.0
    # a pi1 for the sub-aligned row is zero up to rounding dust; whatever
    # survives is far below the truncation threshold after one term
    dusty = make_phi1(S, cross_feed.row @ S.pi1, model=cross_feed.model)
    assert all(float(np.linalg.norm(r)) < 1e-12 for r in dusty.coeff.values())


def test_mean_zero_characteristics_have_zero_expected_process(mirror):
    star = star_transform(make_indicator_characteristic(mirror.row), mirror.S, model=mirror.model)
    for n in (0, 3, 7):
        assert expected_process(star.characteristic, mirror.model, n) == 0


@pytest.mark.parametrize("name", ["single_type_binary", "two_type_mirror", "jordan_critical"])
def test_expected_process_matches_exact_recursion(name):
    from conftest import bundle

    b = bundle(name)
    model = b.model
    means, _ = exact_moment_tables(model, 8)
    phi = make_table_characteristic(
        model.J,
        base={0: b.row, 2: 0.5 * b.row},
    )
    for n in (2, 5, 8):
        expect = complex(sum(b.row[i] * float(means[n][i]) for i in range(model.J)))
        expect += complex(sum(0.5 * b.row[i] * float(means[n - 2][i]) for i in range(model.J)))
        assert expected_process(phi, model, n) == pytest.approx(expect, rel=1e-12)


def test_assumption_sums_are_finite_and_positive(mirror):
    sums = assumption_sums(mirror.phi, mirror.S, mirror.model)
    assert np.isfinite(sums["mean_weighted_sum"]) and sums["mean_weighted_sum"] > 0
    assert sums["variance_weighted_sum"] == 0.0  # indicators carry no randomness


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.integers(-3, 3), min_size=2, max_size=2),
    st.integers(-2, 2),
    st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False),
)
def test_scaling_composes(row, k, z):
    phi = make_table_characteristic(2, base={k: np.array(row, dtype=float)})
    twice = phi.scaled(z).scaled(z)
    once = phi.scaled(z * z)
    assert np.allclose(twice.mean(k), once.mean(k), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_row_canonicalization_accepts_lists(row):
    phi = make_table_characteristic(3, base={0: row})
    if not any(row):
        assert 0 not in phi.base  # all-zero rows are dropped
        return
    assert isinstance(phi.base[0], np.ndarray)
    assert phi.base[0].dtype == complex
    assert np.allclose(phi.base[0].real, row)
