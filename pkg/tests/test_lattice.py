import numpy as np
import numpy.testing as npt
import pytest

from core.errors import InvariantViolation, LatticeError, RejectedMoveError
from core.lattice import (
    BoundaryCondition,
    BoxSpec,
    Containment,
    Orientation,
    Rod,
    RodConfig,
    apply_rod,
    footprint,
    in_peel,
    is_compatible,
    regime_epsilon,
    remove_rod,
)

H, V = Orientation.HORIZONTAL, Orientation.VERTICAL


class TestGeometry:
    @pytest.mark.parametrize(
        "k, expected",
        [
            (2, [(5, 5), (6, 5)]),
            (3, [(4, 5), (5, 5), (6, 5)]),
            (4, [(4, 5), (5, 5), (6, 5), (7, 5)]),
        ],
    )
    def test_horizontal_footprint_around_center(self, k, expected):
        box = BoxSpec(L=16, k=k)
        assert footprint(Rod(H, 5, 5), box) == expected

    def test_vertical_footprint_runs_along_y(self):
        box = BoxSpec(L=16, k=3)
        assert footprint(Rod(V, 5, 5), box) == [(5, 4), (5, 5), (5, 6)]

    def test_box_rejects_short_rods(self):
        with pytest.raises(LatticeError):
            BoxSpec(L=8, k=1)

    def test_rectangular_box(self):
        box = BoxSpec(L=4, k=2, height=1)
        assert (box.L, box.Ly, box.area) == (4, 1, 4)
        assert not box.is_square

    def test_peel(self, plus_box):
        assert in_peel((0, 10), plus_box)
        assert in_peel((3, 10), plus_box)
        assert not in_peel((4, 10), plus_box)
        assert not in_peel((10, 10), plus_box)
        with pytest.raises(LatticeError):
            in_peel((20, 0), plus_box)

    def test_bulk_bounds(self, plus_box):
        assert plus_box.bulk_bounds() == (4, 16, 4, 16)
        assert BoxSpec(L=20, k=2).bulk_bounds() == (0, 20, 0, 20)

    def test_transposed_box_swaps_sides_and_bc(self):
        box = BoxSpec(L=6, k=2, bc=BoundaryCondition.PLUS, height=10)
        t = box.transposed()
        assert (t.L, t.Ly, t.bc) == (10, 6, BoundaryCondition.MINUS)


class TestRegime:
    def test_epsilon_takes_the_larger_term(self):
        r = regime_epsilon(0.01, 10, epsilon0=0.5, k0=7)
        assert r.epsilon == pytest.approx(np.exp(-1.0))
        assert r.in_regime

    def test_outside_regime(self):
        r = regime_epsilon(0.1, 10, epsilon0=0.5, k0=7)
        assert r.epsilon == pytest.approx(1.0)
        assert not r.in_regime

    def test_short_rods_never_in_regime(self):
        assert not regime_epsilon(0.01, 4, epsilon0=0.5, k0=7).in_regime

    def test_thresholds_come_from_env(self, monkeypatch):
        monkeypatch.setenv("KMER_EPSILON0", "0.2")
        monkeypatch.setenv("KMER_K0", "3")
        r = regime_epsilon(0.01, 10)
        assert (r.epsilon0, r.k0) == (0.2, 3)
        assert not r.in_regime

    def test_negative_activity(self):
        with pytest.raises(LatticeError):
            regime_epsilon(-0.1, 4)


class TestRodConfig:
    def test_small_examples(self):
        config = apply_rod(RodConfig(BoxSpec(L=8, k=2)), Rod(H, 0, 0))
        assert not is_compatible(config, Rod(V, 1, 0))
        assert is_compatible(config, Rod(H, 2, 0))
        assert len(remove_rod(config, Rod(H, 0, 0))) == 0

    def test_compatibility_matches_brute_force(self):
        box = BoxSpec(L=12, k=3)
        rng = np.random.default_rng(17)
        for o1, x1, y1, o2, x2, y2 in rng.integers(0, 12, size=(2000, 6)).tolist():
            a = Rod(H if o1 % 2 else V, x1, y1)
            b = Rod(H if o2 % 2 else V, x2, y2)
            config = RodConfig.from_rods(box, [a])
            disjoint = not set(footprint(a, box)) & set(footprint(b, box))
            assert is_compatible(config, b) == disjoint

    def test_apply_then_remove_restores_indexes(self):
        box = BoxSpec(L=10, k=3)
        config = RodConfig(box)
        blank = config.occupancy.copy()
        rod = Rod(H, 4, 4)
        config.apply(rod)
        assert rod in config
        assert config.owner_of((3, 4)) is not None
        assert config.centers[4, 4] == 1
        config.remove(rod)
        npt.assert_array_equal(config.occupancy, blank)
        assert not config.centers.any()
        assert len(config) == 0

    def test_overlap_is_rejected_without_mutation(self):
        box = BoxSpec(L=10, k=3)
        config = RodConfig.from_rods(box, [Rod(H, 4, 4)])
        before = config.occupancy.copy()
        with pytest.raises(RejectedMoveError):
            config.apply(Rod(V, 5, 5))
        npt.assert_array_equal(config.occupancy, before)
        assert len(config) == 1

    def test_removing_absent_rod(self):
        config = RodConfig(BoxSpec(L=10, k=3))
        with pytest.raises(RejectedMoveError):
            config.remove(Rod(H, 1, 1))

    def test_crossing_rods_are_incompatible(self):
        box = BoxSpec(L=10, k=3)
        config = RodConfig.from_rods(box, [Rod(H, 4, 4)])
        assert not config.is_compatible(Rod(V, 4, 5))
        assert config.is_compatible(Rod(V, 4, 6))

    def test_containment_modes(self):
        center = RodConfig(BoxSpec(L=4, k=3))
        full = RodConfig(BoxSpec(L=4, k=3, containment=Containment.FULLY_CONTAINED))
        edge_rod = Rod(H, 0, 1)
        assert center.is_compatible(edge_rod)
        assert not full.is_compatible(edge_rod)
        assert full.is_compatible(Rod(H, 1, 1))
        assert not center.is_compatible(Rod(H, 4, 1))

    def test_plus_bc_forbids_vertical_rods_in_peel(self, plus_box):
        config = RodConfig(plus_box)
        assert not config.is_compatible(Rod(V, 2, 10))
        assert config.is_compatible(Rod(H, 2, 10))
        assert config.is_compatible(Rod(V, 10, 10))

    def test_replace_moves_in_place(self):
        box = BoxSpec(L=10, k=3)
        config = RodConfig.from_rods(box, [Rod(H, 4, 4)])
        config.replace(Rod(H, 4, 4), Rod(V, 4, 4))
        assert config.rods == [Rod(V, 4, 4)]
        assert (config.n_horizontal, config.n_vertical) == (0, 1)
        config.check_invariants()

    def test_counters_track_orientations(self):
        box = BoxSpec(L=12, k=2)
        config = RodConfig.from_rods(box, [Rod(H, 0, 0), Rod(H, 0, 2), Rod(V, 5, 5)])
        assert (config.n_horizontal, config.n_vertical) == (2, 1)

    def test_transposed_reflects_every_rod(self):
        box = BoxSpec(L=12, k=2, bc=BoundaryCondition.PLUS)
        config = RodConfig.from_rods(box, [Rod(H, 1, 3), Rod(V, 6, 7)])
        t = config.transposed()
        t.check_invariants()
        assert t.box.bc is BoundaryCondition.MINUS
        assert t.key() == frozenset({Rod(V, 3, 1), Rod(H, 7, 6)})
        npt.assert_array_equal(t.centers, -config.centers.T)

    def test_copy_is_independent(self):
        box = BoxSpec(L=8, k=2)
        config = RodConfig.from_rods(box, [Rod(H, 1, 1)])
        other = config.copy()
        other.apply(Rod(H, 4, 4))
        assert len(config) == 1
        assert other.key() != config.key()

    def test_invariant_check_detects_corruption(self):
        box = BoxSpec(L=8, k=2)
        config = RodConfig.from_rods(box, [Rod(H, 1, 1)])
        config.check_invariants()
        config.occupancy[5, 5] = 99
        with pytest.raises(InvariantViolation):
            config.check_invariants()

    def test_random_apply_and_remove_keep_the_occupancy_grid(self):
        box = BoxSpec(L=16, k=3)
        config = RodConfig(box)
        rng = np.random.default_rng(31)
        applied = removed = 0
        for step in range(10_000):
            if len(config) and rng.random() < 0.4:
                remove_rod(config, config.rod_at(int(rng.integers(len(config)))))
                removed += 1
            else:
                o, x, y = rng.integers(0, 16, size=3).tolist()
                rod = Rod(H if o % 2 else V, x, y)
                if is_compatible(config, rod):
                    apply_rod(config, rod)
                    applied += 1
            if step % 1000 == 999:
                config.check_invariants()
        assert applied > 1000 and removed > 1000
        config.check_invariants()
        fresh = RodConfig.from_rods(box, config.sorted_rods())
        npt.assert_array_equal(config.occupancy >= 0, fresh.occupancy >= 0)
        npt.assert_array_equal(config.centers, fresh.centers)
        for rod in config:
            owners = {config.owner_of(site) for site in footprint(rod, box)}
            assert len(owners) == 1 and None not in owners
