import numpy.testing as npt
import pytest

from core.errors import InvariantViolation, StateSpaceTooLarge
from core.lattice import BoundaryCondition, BoxSpec, Containment, Orientation, Rod
from core.observables import (
    EventSpec,
    bulk_density,
    cluster_property_probe,
    connected_products,
    density,
    estimate,
    event_indicator,
    event_probability,
    pair_correlation,
    pair_product_average,
    site_field,
)
from core.oracle import (
    candidate_rods,
    enumerate_configs,
    exact_expectation,
    exact_measure,
    exact_transition_check,
    independent_set_counts,
    partition_polynomial,
    swap_orientations,
    transition_matrix,
)
from core.sampler import GrandCanonicalKernel, MoveMix, SamplerParams, run_chain

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL


class TestEnumeration:
    def test_two_by_two_has_seven_states(self, box2x2):
        states = list(enumerate_configs(box2x2))
        assert len(states) == 7
        assert len({s.key() for s in states}) == 7
        assert frozenset({Rod(H, 0, 0), Rod(H, 0, 1)}) in {s.key() for s in states}
        assert frozenset({Rod(V, 0, 0), Rod(V, 1, 0)}) in {s.key() for s in states}

    def test_every_state_is_valid(self, box2x2):
        for state in enumerate_configs(box2x2):
            state.check_invariants()

    def test_one_row_box(self, box1x4):
        assert partition_polynomial(box1x4).coefficients == (1, 3, 1)

    def test_single_site_box_only_holds_nothing(self):
        box = BoxSpec(L=1, k=2, containment=Containment.FULLY_CONTAINED)
        assert candidate_rods(box) == []
        assert partition_polynomial(box).coefficients == (1,)

    def test_order_is_reproducible(self, box2x2):
        first = [s.key() for s in enumerate_configs(box2x2)]
        second = [s.key() for s in enumerate_configs(box2x2)]
        assert first == second
        assert first[0] == frozenset()

    @pytest.mark.parametrize(
        "box",
        [
            BoxSpec(L=3, k=2),
            BoxSpec(L=4, k=3, containment=Containment.FULLY_CONTAINED),
            BoxSpec(L=3, k=2, height=4),
            BoxSpec(L=4, k=2, bc=BoundaryCondition.PLUS),
        ],
        ids=["3x3-k2", "4x4-k3-full", "3x4-k2", "4x4-k2-plus"],
    )
    def test_independent_set_count_agrees(self, box):
        assert tuple(independent_set_counts(box)) == partition_polynomial(box).coefficients

    def test_plus_peel_covering_the_box_removes_vertical_rods(self):
        box = BoxSpec(L=4, k=2, bc=BoundaryCondition.PLUS)
        assert all(r.orientation is H for r in candidate_rods(box))
        measure = exact_measure(box, 0.7)
        assert measure.expectation(lambda c: c.n_vertical) == 0.0

    def test_guard_refuses_large_boxes(self):
        box = BoxSpec(L=6, k=2)
        with pytest.raises(StateSpaceTooLarge) as err:
            partition_polynomial(box)
        assert err.value.candidates == 72
        assert err.value.estimate == 2**72

    def test_guard_limit_from_env(self, monkeypatch, box2x2):
        monkeypatch.setenv("KMER_ENUM_LIMIT", "3")
        with pytest.raises(StateSpaceTooLarge):
            list(enumerate_configs(box2x2))
        assert partition_polynomial(box2x2, limit=3, allow_large=True).n_configs == 7


class TestPartitionPolynomial:
    @pytest.mark.parametrize("z", [0.0, 0.25, 0.5, 1.0, 3.0])
    def test_two_by_two_polynomial(self, box2x2, z):
        poly = partition_polynomial(box2x2)
        assert poly.coefficients == (1, 4, 2)
        assert poly.evaluate(z) == pytest.approx(1 + 4 * z + 2 * z * z)
        assert poly.mean_rods(z) == pytest.approx((4 * z + 4 * z * z) / (1 + 4 * z + 2 * z * z))

    def test_mean_rods_matches_exact_expectation(self):
        box = BoxSpec(L=3, k=2)
        z = 0.4
        assert exact_measure(box, z).expectation(len) == pytest.approx(
            partition_polynomial(box).mean_rods(z)
        )

    def test_exact_expectation(self, box2x2):
        assert exact_expectation(box2x2, 0.5, len) == pytest.approx(3.0 / 3.5)
        assert exact_expectation(box2x2, 0.0, len) == 0.0

    def test_to_dict(self, box2x2):
        data = partition_polynomial(box2x2).to_dict()
        assert data["coefficients"] == [1, 4, 2]
        assert data["schema_version"] == 1
        assert data["containment"] == "fully_contained"


class TestSiteDensities:
    @staticmethod
    def _site_density(x, y):
        return lambda config: config.centers[y, x] != 0

    @pytest.mark.parametrize(
        "box",
        [
            BoxSpec(L=2, k=2),
            BoxSpec(L=2, k=2, containment=Containment.FULLY_CONTAINED),
            BoxSpec(L=4, k=2, containment=Containment.FULLY_CONTAINED, height=1),
            BoxSpec(L=4, k=2, bc=BoundaryCondition.PLUS),
        ],
    )
    def test_site_densities_add_up_to_the_mean_rod_count(self, box):
        z = 0.7
        total = sum(
            exact_expectation(box, z, self._site_density(x, y)) for y in range(box.Ly) for x in range(box.L)
        )
        assert total == pytest.approx(exact_expectation(box, z, len), abs=1e-12)

    def test_open_two_by_two_site_densities(self):
        box = BoxSpec(L=2, k=2)
        assert partition_polynomial(box).coefficients == (1, 8, 15, 6)
        z = 0.5
        Z = 1 + 8 * z + 15 * z**2 + 6 * z**3
        corner = (2 * z + 8 * z**2 + 4 * z**3) / Z
        edge = (2 * z + 7 * z**2 + 4 * z**3) / Z
        far = (2 * z + 8 * z**2 + 6 * z**3) / Z
        densities = {(x, y): exact_expectation(box, z, self._site_density(x, y)) for y in (0, 1) for x in (0, 1)}
        assert densities[(0, 0)] == pytest.approx(corner)
        assert densities[(1, 0)] == pytest.approx(edge)
        assert densities[(0, 1)] == pytest.approx(edge)
        assert densities[(1, 1)] == pytest.approx(far)
        assert densities[(0, 0)] - densities[(1, 0)] == pytest.approx(z**2 / Z)


class TestSymmetry:
    def test_square_open_box_is_reflection_invariant(self):
        box = BoxSpec(L=3, k=2)
        keys = [s.key() for s in enumerate_configs(box)]
        assert set(swap_orientations(keys)) == set(keys)
        measure = exact_measure(box, 0.6)
        assert measure.expectation(lambda c: c.n_horizontal) == pytest.approx(
            measure.expectation(lambda c: c.n_vertical)
        )

    def test_plus_and_minus_are_mirror_images(self):
        plus = BoxSpec(L=4, k=2, bc=BoundaryCondition.PLUS)
        minus = plus.with_bc(BoundaryCondition.MINUS)
        plus_keys = {s.key() for s in enumerate_configs(plus)}
        minus_keys = {s.key() for s in enumerate_configs(minus)}
        assert set(swap_orientations(list(plus_keys))) == minus_keys


class TestExactKernel:
    @pytest.mark.parametrize("z", [0.25, 0.5, 1.0])
    def test_stationarity_residual(self, box2x2, z):
        assert exact_transition_check(box2x2, z, GrandCanonicalKernel(box2x2, z)) < 1e-12

    @pytest.mark.parametrize("z", [0.25, 1.0])
    def test_stationarity_residual_on_one_row(self, box1x4, z):
        assert exact_transition_check(box1x4, z, GrandCanonicalKernel(box1x4, z)) < 1e-12

    def test_stationarity_with_only_translations_and_rotations(self):
        box = BoxSpec(L=3, k=2)
        kernel = GrandCanonicalKernel(box, 0.5, MoveMix(0.0, 0.0, 0.5, 0.5))
        assert exact_transition_check(box, 0.5, kernel) < 1e-12

    def test_rows_are_stochastic(self, box1x4):
        measure = exact_measure(box1x4, 0.5)
        P = transition_matrix(measure, GrandCanonicalKernel(box1x4, 0.5))
        npt.assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)
        assert (P >= 0).all()

    def test_detailed_balance(self, box2x2):
        z = 0.5
        measure = exact_measure(box2x2, z)
        P = transition_matrix(measure, GrandCanonicalKernel(box2x2, z))
        flow = measure.probabilities()[:, None] * P
        npt.assert_allclose(flow, flow.T, atol=1e-14)

    def test_kernel_leaving_the_state_space_is_caught(self, box2x2):
        class Leaky:
            def transition_probabilities(self, config):
                return {frozenset({Rod(H, 5, 5)}): 1.0}

        with pytest.raises(InvariantViolation):
            transition_matrix(exact_measure(box2x2, 0.5), Leaky())

    def test_total_variation_against_itself(self, box2x2):
        measure = exact_measure(box2x2, 0.5)
        counts = {s.key(): int(round(p * 1e6)) for s, p in zip(measure.states, measure.probabilities())}
        assert measure.total_variation(counts) < 1e-5
        assert measure.total_variation({frozenset({Rod(H, 9, 9)}): 10}) == pytest.approx(1.0)


@pytest.mark.slow
class TestSamplerAgainstOracle:
    """Chain estimators on a 4x4, k=2 open box against exact enumeration."""

    box = BoxSpec(L=4, k=2)
    z = 1.0

    @pytest.fixture(scope="class")
    def measure(self):
        return exact_measure(self.box, self.z, limit=32)

    @pytest.fixture(scope="class")
    def frames(self):
        frames = []
        params = SamplerParams(z=self.z, sweeps=16_000, seed=5, thermalization=200, measurement_interval=2)
        run_chain(self.box, params, on_frame=lambda sweep, config: frames.append(config.copy()))
        return frames

    @staticmethod
    def _agrees(est, exact, sigmas=4.0):
        return abs(est.value - exact) <= sigmas * est.error

    def test_mean_rod_count(self, measure, frames):
        est = estimate([len(c) for c in frames])
        assert est.error > 0
        assert self._agrees(est, measure.expectation(len), sigmas=3.0)

    def test_site_densities_add_up_per_frame(self, frames):
        for config in frames[:500]:
            sample = density(config)
            assert int(sample.n_field.sum()) == len(config)
            assert sample.rho == pytest.approx(len(config) / 16)

    def test_event_probability(self, measure, frames):
        event = EventSpec(center=(1, 1), side=2, target=V)
        event.validate(self.box)
        exact = measure.expectation(lambda c: event_indicator(c, event))
        assert 0 < exact < 1
        assert self._agrees(event_probability(frames, event), exact)

    def test_pair_correlation(self, measure, frames):
        region = self.box.bulk_bounds()
        rho = measure.expectation(bulk_density)
        for result in pair_correlation(frames, [(1, 0), (1, 1), (0, 3)]):
            sep = result.separation
            pair = measure.expectation(lambda c: pair_product_average(c.centers != 0, region, sep))
            assert self._agrees(result.pair, pair)
            assert self._agrees(result.truncated, pair - rho * rho)

    def test_connected_site_correlation(self, measure, frames):
        for result in cluster_property_probe(frames, "n", "n", [(1, 0), (0, 2)]):
            disp = result.displacement
            parts = [
                measure.expectation(lambda c, i=i: connected_products(site_field(c), site_field(c), disp)[i])
                for i in range(3)
            ]
            assert self._agrees(result.connected, parts[0] - parts[1] * parts[2])
