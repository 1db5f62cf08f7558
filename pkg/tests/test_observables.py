import math

import numpy as np
import pytest

from core.errors import ConfigError, InsufficientDataError
from core.fitting import weighted_linear_fit
from core.lattice import BoundaryCondition, BoxSpec, Orientation, Rod, RodConfig
from core.observables import (
    Estimate,
    EventSpec,
    ObservableSeries,
    PairCorrelationEstimate,
    RunningStats,
    bulk_density,
    bulk_tile_bounds,
    cluster_property_probe,
    combine_estimates,
    compare_estimates,
    default_separations,
    density,
    error_bars,
    estimate,
    event_indicator,
    fit_correlation_decay,
    fit_event_decay,
    jackknife,
    order_parameter,
    pair_correlation,
    pair_product_average,
    symmetrized_order_parameter,
    tile_pair_product,
)

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL


def _ar1(phi, n, seed):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=n)
    x = np.empty(n)
    x[0] = noise[0] / math.sqrt(1 - phi * phi)
    for i in range(1, n):
        x[i] = phi * x[i - 1] + noise[i]
    return x


class TestErrorBars:
    def test_iid_series(self):
        n = 2**14
        values = np.random.default_rng(1).normal(size=n)
        result = error_bars(values)
        assert result.stderr == pytest.approx(1 / math.sqrt(n), rel=0.2)
        assert result.mean == pytest.approx(values.mean())

    def test_correlated_series_gets_wider_bars(self):
        phi, n = 0.9, 2**16
        values = _ar1(phi, n, seed=3)
        sigma_x = 1 / math.sqrt(1 - phi * phi)
        expected = sigma_x / math.sqrt(n) * math.sqrt((1 + phi) / (1 - phi))
        result = error_bars(values)
        assert result.stderr == pytest.approx(expected, rel=0.25)
        assert result.stderr > 3 * values.std() / math.sqrt(n)

    def test_constant_series_has_zero_error(self):
        result = error_bars(np.full(64, 0.25))
        assert (result.mean, result.stderr) == (0.25, 0.0)

    def test_short_series_is_refused(self):
        with pytest.raises(InsufficientDataError):
            estimate([1.0] * 15)

    def test_series_wrapper(self):
        series = ObservableSeries.from_array("N", np.arange(32.0))
        assert len(series) == 32
        assert series.mean() == pytest.approx(15.5)
        assert series.blocking().mean == pytest.approx(15.5)


class TestMergers:
    def test_jackknife_of_a_mean(self):
        values = np.random.default_rng(2).normal(size=4096)
        jk = jackknife([values], lambda m: m)
        assert jk.value == pytest.approx(values.mean())
        assert jk.error == pytest.approx(values.std() / math.sqrt(len(values)), rel=0.35)

    def test_jackknife_of_a_ratio(self):
        a = np.full(100, 2.0)
        b = np.full(100, 4.0)
        jk = jackknife([a, b], lambda x, y: x / y)
        assert jk.value == pytest.approx(0.5)
        assert jk.error == pytest.approx(0.0, abs=1e-15)

    def test_jackknife_needs_equal_columns(self):
        with pytest.raises(ValueError):
            jackknife([[1.0, 2.0], [1.0]], lambda a, b: a)

    def test_running_stats_merge(self):
        data = np.random.default_rng(4).normal(size=300)
        left, right, whole = RunningStats(), RunningStats(), RunningStats()
        left.add_many(data[:120])
        right.add_many(data[120:])
        whole.add_many(data)
        merged = left.merge(right)
        assert merged.count == whole.count
        assert merged.mean == pytest.approx(whole.mean)
        assert merged.variance == pytest.approx(whole.variance)
        assert merged.variance == pytest.approx(data.var(ddof=1))

    def test_combine_weights_by_count(self):
        combined = combine_estimates([Estimate(1.0, 0.1, 100), Estimate(2.0, 0.1, 300)])
        assert combined.value == pytest.approx(1.75)
        assert combined.n == 400
        assert combined.error == pytest.approx(math.hypot(10, 30) / 400)

    def test_compare(self):
        cmp = compare_estimates(Estimate(1.0, 0.3, 10), Estimate(0.5, 0.4, 10))
        assert cmp.difference == pytest.approx(0.5)
        assert cmp.sigmas == pytest.approx(1.0)
        assert cmp.consistent_3sigma
        assert not compare_estimates(Estimate(1.0, 0.0, 1), Estimate(0.0, 0.0, 1)).consistent_3sigma


class TestConfigurationObservables:
    def test_order_parameter(self):
        box = BoxSpec(L=12, k=2)
        config = RodConfig.from_rods(box, [Rod(H, 0, 0), Rod(H, 0, 2), Rod(V, 6, 6)])
        assert order_parameter(config) == pytest.approx(1 / 3)
        assert order_parameter(RodConfig(box)) == 0.0

    def test_symmetrized_order_parameter_vanishes(self):
        box = BoxSpec(L=12, k=2)
        frames = [
            RodConfig.from_rods(box, [Rod(H, 0, 0), Rod(H, 0, 2)]),
            RodConfig.from_rods(box, [Rod(H, 4, 4), Rod(V, 8, 8), Rod(H, 1, 9)]),
        ]
        assert symmetrized_order_parameter(frames) == 0.0

    def test_density(self):
        sample = density(RodConfig.from_rods(BoxSpec(L=4, k=2), [Rod(H, 0, 0)]))
        assert sample.rho == pytest.approx(1 / 16)
        assert sample.n_field.sum() == 1
        assert sample.n_field[0, 0]

    def test_pair_correlation_of_a_frozen_frame(self):
        box = BoxSpec(L=8, k=2)
        frame = RodConfig.from_rods(box, [Rod(H, 0, 0), Rod(H, 2, 0)])
        (result,) = pair_correlation([frame] * 20, [(2, 0)])
        assert result.pair.value == pytest.approx(1 / 48)
        assert result.truncated.value == pytest.approx(1 / 48 - (2 / 64) ** 2)
        assert result.truncated.error == pytest.approx(0.0, abs=1e-15)
        assert result.distance == 2.0

    def test_bulk_density_ignores_the_peel(self):
        box = BoxSpec(L=20, k=2, bc=BoundaryCondition.PLUS)
        config = RodConfig.from_rods(box, [Rod(H, 0, 0), Rod(H, 10, 10)])
        assert bulk_density(config) == pytest.approx(1 / 144)

    def test_pair_product_average(self):
        n = np.zeros((4, 4), dtype=bool)
        n[1, 1] = n[1, 2] = True
        assert pair_product_average(n, (0, 4, 0, 4), (1, 0)) == pytest.approx(1 / 12)
        assert pair_product_average(n, (0, 4, 0, 4), (0, 1)) == 0.0
        with pytest.raises(InsufficientDataError):
            pair_product_average(n, (0, 4, 0, 4), (4, 0))

    def test_default_separations(self):
        seps = default_separations(4)
        assert seps[:4] == [(2, 0), (0, 2), (4, 0), (0, 4)]
        assert max(dx for dx, _ in seps) == 16

    def test_tile_pair_product(self):
        spins = np.array([[1, 1, -1], [1, 1, -1]], dtype=float)
        assert tile_pair_product(spins, 1) == pytest.approx(3 / 7)
        with pytest.raises(InsufficientDataError):
            tile_pair_product(spins, 3)

    def test_bulk_tile_bounds(self):
        box = BoxSpec(L=40, k=4, bc=BoundaryCondition.PLUS)
        assert bulk_tile_bounds(box) == (4, 16, 4, 16)


class TestEvents:
    @pytest.fixture
    def box(self):
        return BoxSpec(L=40, k=4, bc=BoundaryCondition.PLUS)

    def test_vertical_window(self, box):
        event = EventSpec(center=(20, 20), side=2, target=V)
        event.validate(box)
        assert event.bounds() == (20, 22, 20, 22)
        assert event_indicator(RodConfig(box), event) == 0
        assert event_indicator(RodConfig.from_rods(box, [Rod(V, 21, 20)]), event) == 1
        assert event_indicator(RodConfig.from_rods(box, [Rod(H, 20, 21)]), event) == 0

    def test_vacuous_and_minimum_counts(self, box):
        vacuous = EventSpec(center=(20, 20), side=2, target=V, include_vacuous=True)
        assert event_indicator(RodConfig(box), vacuous) == 1
        two = EventSpec(center=(20, 20), side=2, target=V, min_rods=2)
        assert event_indicator(RodConfig.from_rods(box, [Rod(V, 20, 20)]), two) == 0
        both = RodConfig.from_rods(box, [Rod(V, 20, 20), Rod(V, 21, 21)])
        assert event_indicator(both, two) == 1

    def test_window_in_peel_is_rejected(self, box):
        with pytest.raises(ConfigError) as err:
            EventSpec(center=(3, 20), side=2, target=V).validate(box)
        assert err.value.field == "windows.center"

    def test_window_outside_box(self):
        with pytest.raises(ConfigError):
            EventSpec(center=(0, 0), side=3, target=V).validate(BoxSpec(L=10, k=2))


class TestClusterProbe:
    def test_rods_in_different_rows_are_nearly_independent(self):
        box = BoxSpec(L=16, k=2)
        rng = np.random.default_rng(8)
        frames = []
        for _ in range(64):
            config = RodConfig(box)
            for x, y in rng.integers(0, 16, size=(30, 2)).tolist():
                rod = Rod(H, x, y)
                if config.is_compatible(rod):
                    config.apply(rod)
            frames.append(config)
        results = cluster_property_probe(frames, "n", "n", [(0, 2), (0, 4)])
        assert [r.displacement for r in results] == [(0, 2), (0, 4)]
        for r in results:
            assert abs(r.connected.value) < 5 * r.connected.error + 1e-3


class TestFits:
    def test_exact_line(self):
        x = np.arange(6.0)
        fit = weighted_linear_fit(x, 2.0 - 0.5 * x, np.full(6, 0.1))
        assert fit.slope == pytest.approx(-0.5)
        assert fit.intercept == pytest.approx(2.0)
        assert fit.chi2 == pytest.approx(0.0, abs=1e-10)
        assert fit.slope_negative_95
        assert fit.predict(10) == pytest.approx(-3.0)

    def test_errors_are_absolute(self):
        # unit errors on x = 0, 1, 2: var(slope) = 1/2, var(intercept) = 5/6
        fit = weighted_linear_fit([0.0, 1.0, 2.0], [0.0, 1.5, 1.0], [1.0, 1.0, 1.0])
        assert fit.slope == pytest.approx(0.5)
        assert fit.intercept == pytest.approx(1 / 3)
        assert fit.slope_err == pytest.approx(math.sqrt(0.5))
        assert fit.intercept_err == pytest.approx(math.sqrt(5 / 6))
        assert fit.chi2 == pytest.approx(2 / 3)
        scaled = weighted_linear_fit([0.0, 1.0, 2.0], [0.0, 1.5, 1.0], [2.0, 2.0, 2.0])
        assert scaled.slope_err == pytest.approx(2 * fit.slope_err)

    def test_fit_needs_two_points(self):
        with pytest.raises(InsufficientDataError):
            weighted_linear_fit([1.0], [1.0], [1.0])
        with pytest.raises(InsufficientDataError):
            weighted_linear_fit([1.0, 1.0], [1.0, 2.0], [1.0, 1.0])

    def test_event_decay_constant(self):
        zk2 = [1.0, 2.0, 3.0, 4.0]
        probs = [Estimate(math.exp(0.2 - 0.3 * x), 0.01 * math.exp(0.2 - 0.3 * x), 1000) for x in zk2]
        fit = fit_event_decay(zk2, probs)
        assert fit.constant == pytest.approx(0.3)
        assert fit.confident

    def test_event_decay_skips_empty_points(self):
        zk2 = [1.0, 2.0, 3.0]
        probs = [Estimate(0.5, 0.01, 100), Estimate(0.2, 0.01, 100), Estimate(0.0, 0.0, 100)]
        fit = fit_event_decay(zk2, probs)
        assert fit.fit.n == 2

    def test_correlation_decay_constant(self):
        rho, eps, k = 0.1, 0.5, 4
        c_prime = 1.5
        correlations = []
        for d in (2, 4, 6, 8):
            value = rho * rho * eps ** (c_prime * d / k)
            correlations.append(
                PairCorrelationEstimate((d, 0), Estimate(0.0, 0.0, 500), Estimate(value, 0.02 * value, 500))
            )
        fit = fit_correlation_decay(correlations, rho, eps, k)
        assert fit.constant == pytest.approx(c_prime)

    def test_correlation_decay_needs_a_decay_scale(self):
        with pytest.raises(InsufficientDataError):
            fit_correlation_decay([], 0.1, 1.0, 4)
