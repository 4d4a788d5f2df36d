import numpy as np
import pytest

from hette.core import EstimationError, InputError, Sample
from hette.late import complier_cdf, late_continuous, late_discrete

import oracles

# Frozen from the brute-force leave-one-out covariance-ratio loop
# (tests/oracles.delta_discrete_loo) on the 6-row single-cell fixture.
SIX_ROW_DELTAS = [15.0, 18.0, 5.25, 5.25, 18.0, 15.0]


def six_row_sample():
    return Sample(
        [1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        [0, 0, 1, 0, 1, 1],
        [0, 0, 0, 1, 1, 1],
        [1, 1, 1, 1, 1, 1],
    )


def random_discrete_sample(rng, n, n_levels=3):
    """A random sample guaranteed to have a non-degenerate first stage per cell."""
    x = np.repeat(np.arange(1, n_levels + 1), n // n_levels + 1)[:n]
    z = np.tile([0, 1], n // 2 + 1)[:n]
    d = (z & (rng.random(n) < 0.8)).astype(int)
    # Force at least one treated Z=1 row per cell so Cov(D,Z|x) > 0.
    for lv in range(1, n_levels + 1):
        cell = np.flatnonzero((x == lv) & (z == 1))
        d[cell[0]] = 1
        d[cell[-1]] = 1
    y = rng.standard_normal(n) + d * rng.standard_normal(n)
    return Sample(y, d, z, x)


def test_six_row_fixture_matches_oracle_and_frozen_values():
    s = six_row_sample()
    fit = late_discrete(s)
    np.testing.assert_allclose(fit.delta_at_sample, SIX_ROW_DELTAS, rtol=1e-12)
    loop = [
        oracles.delta_discrete_loo(s.outcome, s.treatment, s.instrument, s.covariate, i)
        for i in range(6)
    ]
    np.testing.assert_allclose(fit.delta_at_sample, loop, rtol=1e-12)


def test_discrete_oracle_on_random_fixtures():
    rng = np.random.default_rng(21)
    for _ in range(25):
        n = int(rng.integers(12, 30))
        s = random_discrete_sample(rng, n, n_levels=int(rng.integers(1, 4)))
        fit = late_discrete(s)
        loop = [
            oracles.delta_discrete_loo(s.outcome, s.treatment, s.instrument, s.covariate, i)
            for i in range(n)
        ]
        np.testing.assert_allclose(fit.delta_at_sample, loop, rtol=1e-10)


def test_sharp_design_reduces_to_mean_difference():
    # D = Z within the cell: delta is the leave-one-out difference of means.
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0])
    z = np.array([0, 1, 0, 1, 0, 1])
    s = Sample(y, z, z, np.ones(6))
    fit = late_discrete(s)
    i = 0  # excluded row has Z=0
    want = y[[1, 3, 5]].mean() - y[[2, 4]].mean()
    assert fit.delta_at_sample[i] == pytest.approx(want, rel=1e-12)


def test_translation_invariance_and_scale_equivariance():
    rng = np.random.default_rng(5)
    s = random_discrete_sample(rng, 24)
    base = late_discrete(s).delta_at_sample
    shifted = late_discrete(Sample(s.outcome + 13.25, s.treatment, s.instrument, s.covariate))
    np.testing.assert_allclose(shifted.delta_at_sample, base, rtol=1e-10)
    scaled = late_discrete(Sample(s.outcome * 2.5, s.treatment, s.instrument, s.covariate))
    np.testing.assert_allclose(scaled.delta_at_sample, 2.5 * base, rtol=1e-10)


def test_w_hat_equals_outcome_for_treated():
    rng = np.random.default_rng(6)
    s = random_discrete_sample(rng, 30)
    fit = late_discrete(s)
    treated = s.treatment == 1
    np.testing.assert_array_equal(fit.w_hat[treated], s.outcome[treated])


def test_wald_estimator_from_cell_tables():
    # Single level, full-sample plug-in tables reproduce the textbook Wald ratio.
    rng = np.random.default_rng(8)
    s = random_discrete_sample(rng, 40, n_levels=1)
    fit = late_discrete(s)
    y, d, z = s.outcome, s.treatment, s.instrument
    wald = (y[z == 1].mean() - y[z == 0].mean()) / (d[z == 1].mean() - d[z == 0].mean())
    plug_in = (fit.cond_mean_y(1.0, 1) - fit.cond_mean_y(1.0, 0)) / (
        fit.propensity(1.0, 1) - fit.propensity(1.0, 0)
    )
    assert plug_in == pytest.approx(wald, rel=1e-12)


def test_irrelevant_instrument_errors_with_cell():
    # Cell x=2 has D identical across Z: zero first-stage covariance.
    s = Sample(
        [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        [0, 1, 0, 1, 1, 1, 1, 1],
        [0, 1, 0, 1, 0, 1, 0, 1],
        [1, 1, 1, 1, 2, 2, 2, 2],
    )
    with pytest.raises(EstimationError, match="x=2"):
        late_discrete(s)


# ---------------------------------------------------------------------------
# continuous mode


def ten_row_sample():
    # Frozen 10-row continuous fixture (seeded draws; values pinned here).
    x = [0.6503558794220734, 0.7195450783076736, 0.1224284996142675,
         0.04595255438914603, 0.5378732191245607, 0.0884085630662268,
         0.7468539860271115, 0.8250998887005263, 0.011285828773174855,
         0.04478538914190011]
    z = [0, 0, 0, 0, 0, 1, 0, 1, 0, 1]
    d = [0, 0, 0, 0, 0, 0, 0, 1, 0, 1]
    y = [1.6311524926949454, -0.10121309360598307, -0.07015559477778113,
         -2.3164243355175635, 0.46670443129835243, -0.11017808484969013,
         1.488113339187736, 1.5732090967361574, 0.2799775587295543,
         1.8485478171028091]
    return Sample(y, d, z, x, "continuous")


def test_ten_row_continuous_matches_oracle_and_frozen_value():
    s = ten_row_sample()
    fit = late_continuous(s, h=0.5)
    assert fit.delta_at_sample[0] == pytest.approx(1.3827571921748418, rel=1e-12)
    loop = [
        oracles.delta_continuous_loo(s.outcome, s.treatment, s.instrument, s.covariate, i, 0.5)
        for i in range(10)
    ]
    np.testing.assert_allclose(fit.delta_at_sample, loop, rtol=1e-10)


def test_continuous_oracle_on_random_fixtures():
    rng = np.random.default_rng(33)
    for _ in range(10):
        n = int(rng.integers(10, 30))
        x = rng.random(n)
        z = rng.integers(0, 2, n)
        z[:2] = [0, 1]
        d = (z & (rng.random(n) < 0.9)).astype(int)
        d[np.flatnonzero(z == 1)[0]] = 1
        y = rng.standard_normal(n) + d
        s = Sample(y, d, z, x, "continuous")
        fit = late_continuous(s, h=0.7)
        loop = [
            oracles.delta_continuous_loo(y, d, z, x, i, 0.7) for i in range(n)
        ]
        np.testing.assert_allclose(fit.delta_at_sample, loop, rtol=1e-10)


def test_huge_bandwidth_gives_unconditional_ratio():
    s = ten_row_sample()
    fit = late_continuous(s, h=1e9)
    loop = [
        oracles.delta_discrete_loo(s.outcome, s.treatment, s.instrument, np.ones(10), i)
        for i in range(10)
    ]
    np.testing.assert_allclose(fit.delta_at_sample, loop, rtol=1e-6)


def test_collapsed_support_agrees_with_discrete():
    rng = np.random.default_rng(44)
    n = 20
    z = np.tile([0, 1], 10)
    d = (z & (rng.random(n) < 0.7)).astype(int)
    d[1] = 1
    y = rng.standard_normal(n) + 0.5 * d
    cont = Sample(y, d, z, np.full(n, 2.0), "continuous")
    disc = Sample(y, d, z, np.full(n, 2.0), "discrete")
    fit_c = late_continuous(cont, h=0.8)
    fit_d = late_discrete(disc)
    np.testing.assert_allclose(fit_c.delta_at_sample, fit_d.delta_at_sample, rtol=1e-12)


def test_continuous_shift_and_scale_properties():
    s = ten_row_sample()
    base = late_continuous(s, h=0.5).delta_at_sample
    shifted = late_continuous(
        Sample(s.outcome + 7.0, s.treatment, s.instrument, s.covariate, "continuous"), h=0.5
    ).delta_at_sample
    np.testing.assert_allclose(shifted, base, rtol=1e-10)
    scaled = late_continuous(
        Sample(s.outcome * 3.0, s.treatment, s.instrument, s.covariate, "continuous"), h=0.5
    ).delta_at_sample
    np.testing.assert_allclose(scaled, 3.0 * base, rtol=1e-10)


def test_weak_first_stage_errors():
    rng = np.random.default_rng(1)
    n = 50
    x = rng.random(n)
    z = rng.integers(0, 2, n)
    d = np.zeros(n, dtype=int)  # instrument moves nobody
    y = rng.standard_normal(n)
    with pytest.raises(EstimationError, match="weak first stage"):
        late_continuous(Sample(y, d, z, x, "continuous"), h=0.3)


def test_propensity_clipping_diagnostic():
    s = ten_row_sample()
    fit = late_continuous(s, h=0.2)
    p1 = fit.propensity(np.linspace(0, 1, 50), 1)
    assert np.all((0.0 <= p1) & (p1 <= 1.0))


# ---------------------------------------------------------------------------
# complier distribution diagnostic


def eight_row_sample():
    return Sample(
        [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
        [0, 0, 1, 0, 1, 1, 0, 1],
        [0, 0, 0, 1, 1, 1, 0, 1],
        [1, 1, 1, 1, 1, 1, 1, 1],
    )


def test_complier_cdf_matches_cell_count_oracle():
    s = eight_row_sample()
    t_grid = np.array([0.0, 2.5, 4.5, 6.5, 9.0])
    res = complier_cdf(s, d=1, x=1.0, t_grid=t_grid)
    want = [
        oracles.complier_cdf_cells(s.outcome, s.treatment, s.instrument, s.covariate, 1, 1.0, t)
        for t in t_grid
    ]
    np.testing.assert_allclose(res.raw, want, rtol=1e-12)


def test_complier_cdf_sharp_design_is_cell_ecdf():
    y = np.array([3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0])
    z = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    s = Sample(y, z, z, np.ones(8))
    t_grid = np.linspace(0.0, 10.0, 21)
    res = complier_cdf(s, d=1, x=1.0, t_grid=t_grid)
    treated_y = np.sort(y[z == 1])
    ecdf = np.searchsorted(treated_y, t_grid, side="right") / treated_y.size
    np.testing.assert_allclose(res.raw, ecdf, rtol=1e-12)
    assert res.denominator == pytest.approx(1.0)


def test_complier_cdf_limits_after_correction():
    s = eight_row_sample()
    res = complier_cdf(s, d=1, x=1.0, t_grid=[-100.0, 100.0])
    assert res.corrected[0] == 0.0
    assert res.corrected[-1] == 1.0


def test_complier_cdf_corrected_is_monotone_in_unit_interval():
    rng = np.random.default_rng(10)
    n = 60
    z = np.tile([0, 1], 30)
    d = (z & (rng.random(n) < 0.6)).astype(int)
    d[np.flatnonzero(z == 1)[:2]] = 1
    y = rng.standard_normal(n)
    s = Sample(y, d, z, np.ones(n))
    res = complier_cdf(s, d=1, x=1.0, t_grid=np.linspace(-3, 3, 41))
    assert np.all(np.diff(res.corrected) >= -1e-12)
    assert res.corrected.min() >= 0.0 and res.corrected.max() <= 1.0


def test_complier_cdf_no_compliers_errors():
    # D independent of Z in the cell: zero denominator.
    s = Sample(
        [1.0, 2.0, 3.0, 4.0],
        [1, 0, 1, 0],
        [0, 0, 1, 1],
        [1, 1, 1, 1],
    )
    with pytest.raises(EstimationError, match="no compliers"):
        complier_cdf(s, d=1, x=1.0, t_grid=[0.5])


def test_complier_cdf_rejects_continuous_mode():
    s = ten_row_sample()
    with pytest.raises(InputError):
        complier_cdf(s, d=1, x=0.5, t_grid=[0.0])
