import numpy as np
import pytest

from confreach.geometry import (Box, cells_from_cuts, complete_tiling, get_nonempty_boxes, locate, locate_scan,
                                repair_cuts, uniform_partition)

DOMAIN2 = Box([0.0, 0.0], [3.0, 4.0])
CUTS_2x3 = (np.array([1.0, 2.0]), np.array([1.0, 2.0, 3.0]))


class TestCells:
    def test_two_by_three_cuts_give_twelve_cells(self):
        assert len(cells_from_cuts(CUTS_2x3, DOMAIN2)) == 12

    def test_no_cuts_is_domain(self):
        cells = cells_from_cuts((np.empty(0), np.empty(0)), DOMAIN2)
        assert cells == [DOMAIN2]

    def test_single_bisection(self):
        cells = cells_from_cuts((np.array([0.0]),), Box([-1.0], [1.0]))
        assert cells == [Box([-1.0], [0.0]), Box([0.0], [1.0])]

    @pytest.mark.parametrize("cut", [-1.0, 1.0, 2.0])
    def test_cut_outside_interior_rejected(self, cut):
        with pytest.raises(ValueError):
            cells_from_cuts((np.array([cut]),), Box([-1.0], [1.0]))

    def test_every_point_in_exactly_one_cell(self, rng):
        part = uniform_partition(DOMAIN2, [2, 3])
        pts = rng.uniform(DOMAIN2.lo, DOMAIN2.hi, size=(10_000, 2))
        # include points exactly on cuts and on the outer boundary
        pts[:4] = [[1.0, 1.0], [3.0, 4.0], [0.0, 0.0], [2.0, 4.0]]
        for p in pts[:2000]:
            locate_scan(part, p)
        assert np.all(locate(part, pts) >= 0)


def _fig3_states():
    # seven occupied cells of the 3x4 grid: the two top corner cells and
    # three others stay empty
    occupied = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (1, 3)]
    return np.array([[i + 0.5, j + 0.5] for i, j in occupied])


class TestNonEmpty:
    def test_seven_occupied_cells(self):
        part = get_nonempty_boxes(CUTS_2x3, _fig3_states(), DOMAIN2)
        assert part.n_regions == 7
        assert not part.is_tiling

    def test_clustered_data_gives_one_region(self, rng):
        pts = rng.uniform([0.1, 0.1], [0.9, 0.9], size=(50, 2))
        assert get_nonempty_boxes(CUTS_2x3, pts, DOMAIN2).n_regions == 1

    def test_uniform_data_fills_all_cells(self, rng):
        pts = rng.uniform(DOMAIN2.lo, DOMAIN2.hi, size=(5000, 2))
        part = get_nonempty_boxes(CUTS_2x3, pts, DOMAIN2)
        assert part.n_regions == 12 and part.is_tiling

    def test_each_region_holds_a_point(self, rng):
        pts = rng.uniform(DOMAIN2.lo, DOMAIN2.hi, size=(30, 2))
        part = get_nonempty_boxes(CUTS_2x3, pts, DOMAIN2)
        ids = locate(part, pts)
        assert set(ids.tolist()) == set(range(part.n_regions))


class TestTiling:
    def test_identity_without_empty_cells(self):
        part = uniform_partition(DOMAIN2, [2, 3])
        done = complete_tiling(part, np.zeros(12))
        assert np.array_equal(done.cell_region, part.cell_region)

    def test_fig3_layout_covers_domain(self, rng):
        part = get_nonempty_boxes(CUTS_2x3, _fig3_states(), DOMAIN2)
        done = complete_tiling(part, np.arange(7) * 0.1)
        assert done.is_tiling and done.n_regions == 7
        pts = rng.uniform(DOMAIN2.lo, DOMAIN2.hi, size=(10_000, 2))
        ids = locate(done, pts)
        assert ids.min() >= 0 and ids.max() < 7

    def test_empty_cell_joins_lowest_bound_neighbour(self):
        dom = Box([0.0], [3.0])
        part = get_nonempty_boxes((np.array([1.0, 2.0]),), np.array([[0.5], [2.5]]), dom)
        done = complete_tiling(part, [0.3, 0.1])
        assert locate(done, np.array([1.5])) == 1
        done = complete_tiling(part, [0.1, 0.3])
        assert locate(done, np.array([1.5])) == 0

    def test_tie_goes_to_lowest_id(self):
        dom = Box([0.0], [3.0])
        part = get_nonempty_boxes((np.array([1.0, 2.0]),), np.array([[0.5], [2.5]]), dom)
        assert locate(complete_tiling(part, [0.2, 0.2]), np.array([1.5])) == 0


class TestLocate:
    def test_interior_cut_goes_up(self):
        part = uniform_partition(Box([-1.0], [1.0]), [1])
        assert locate(part, np.array([0.0])) == 1

    def test_domain_max_corner(self):
        part = uniform_partition(DOMAIN2, [2, 3])
        assert locate(part, np.array([3.0, 4.0])) == 11

    def test_outside_domain_raises(self):
        part = uniform_partition(DOMAIN2, [2, 3])
        with pytest.raises(LookupError):
            locate(part, np.array([3.5, 1.0]))

    def test_matches_scan(self, rng):
        pts = rng.uniform(DOMAIN2.lo, DOMAIN2.hi, size=(2000, 2))
        part = complete_tiling(get_nonempty_boxes(CUTS_2x3, _fig3_states(), DOMAIN2), np.linspace(0, 1, 7))
        fast = locate(part, pts)
        assert all(fast[i] == locate_scan(part, p) for i, p in enumerate(pts))

    def test_partition_roundtrip(self):
        part = complete_tiling(get_nonempty_boxes(CUTS_2x3, _fig3_states(), DOMAIN2), np.linspace(0, 1, 7))
        again = type(part).from_dict(part.to_dict())
        assert np.array_equal(again.cell_region, part.cell_region)


class TestRepairCuts:
    dom = Box([0.0], [1.0])

    def test_duplicate_replaced(self, rng):
        (cu,) = repair_cuts((np.array([0.3, 0.3, 0.7]),), self.dom, rng)
        assert len(cu) == 3 and 0.3 in cu and 0.7 in cu
        assert np.all(np.diff(cu) > 0)

    def test_sorted(self, rng):
        (cu,) = repair_cuts((np.array([0.7, 0.3]),), self.dom, rng)
        assert cu.tolist() == [0.3, 0.7]

    def test_endpoint_replaced_by_interior(self, rng):
        (cu,) = repair_cuts((np.array([0.0, 0.5]),), self.dom, rng)
        assert len(cu) == 2 and 0.5 in cu and np.all((cu > 0) & (cu < 1))

    def test_near_duplicates_collapse(self, rng):
        (cu,) = repair_cuts((np.array([0.4, 0.4 + 1e-12]),), self.dom, rng)
        assert len(cu) == 2 and np.min(np.diff(cu)) > 1e-9
