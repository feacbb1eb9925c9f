import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from confreach.conformal import (GlobalBound, TimewiseBound, augmented_quantile, cp_quantile, empirical_coverage,
                                 load_bound, min_feasible_alpha, region_scores, regional_bounds, save_bound,
                                 timewise_baseline)
from confreach.geometry import Box, get_nonempty_boxes, uniform_partition

from oracles import first_coord, make_dataset

LINE = Box([0.0], [1.0])


def sort_oracle(scores, alpha):
    z = sorted(scores)
    k = math.ceil(round((len(z) + 1) * (1 - alpha), 9))
    return math.inf if k > len(z) else z[k - 1]


class TestQuantile:
    def test_forced_index(self):
        assert cp_quantile(np.arange(1, 20), 0.05) == 19

    def test_index_past_end_is_inf(self):
        assert cp_quantile(np.arange(10), 0.01) == math.inf

    def test_rank_181_of_200(self, rng):
        z = rng.uniform(size=200)
        assert cp_quantile(z, 0.1) == np.sort(z)[180]

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            cp_quantile([], 0.1)

    @settings(max_examples=300)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60), st.floats(0.001, 0.999))
    def test_matches_sort_oracle(self, scores, alpha):
        assert cp_quantile(scores, alpha) == sort_oracle(scores, alpha)

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5), st.floats(0.0, 0.4))
    def test_monotone_in_level(self, scores, alpha, extra):
        a2 = max(alpha - extra, 1e-3)
        assert cp_quantile(scores, alpha) <= cp_quantile(scores, a2)

    @settings(max_examples=200)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.01, 0.5), st.floats(0, 2))
    def test_monotone_under_large_new_score(self, scores, alpha, bump):
        q = cp_quantile(scores, alpha)
        if math.isfinite(q):
            assert cp_quantile(scores + [q + bump], alpha) >= q

    def test_augmented_nineteen_scores(self):
        # with +inf appended the 0.05 level needs index 20 of 20 -> +inf;
        # the 0.10 level lands on the largest finite score
        z = np.arange(1, 20) / 10
        assert augmented_quantile(z, 0.05) == math.inf
        assert augmented_quantile(z, 0.10) == pytest.approx(1.9)

    @pytest.mark.parametrize("n", [1, 5, 19, 100, 1500])
    def test_min_feasible_alpha_is_feasible(self, n):
        a = min_feasible_alpha(n)
        assert math.isfinite(augmented_quantile(np.ones(n), a))
        assert augmented_quantile(np.ones(n), a / 1.1 * 0.99) == math.inf

    def test_min_feasible_alpha_n1500(self):
        assert min_feasible_alpha(1500) == pytest.approx(1.1 * 2 / 1502)

    def test_exchangeability(self, rng):
        n_cal, n_test, alpha, trials = 99, 50, 0.1, 10_000
        cal = rng.standard_normal((trials, n_cal))
        k = math.ceil((n_cal + 1) * (1 - alpha))
        q = np.sort(cal, axis=1)[:, k - 1]
        fresh = rng.standard_normal((trials, n_test))
        miss = (fresh > q[:, None]).mean()
        assert miss <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / (n_test * trials))


def _three_trajectories():
    # region [0, 0.5) visited by trajectories 0 and 2 only
    states = np.array([[[0.1], [0.2], [0.3]], [[0.6], [0.7], [0.8]], [[0.9], [0.4], [0.45]]])
    errors = np.array([[0.1, 0.4, 0.2], [0.5, 0.5, 0.5], [0.9, 0.3, 0.1]])
    return make_dataset(states, errors, LINE)


class TestRegionScores:
    def test_hand_enumeration(self):
        ds = _three_trajectories()
        lower = region_scores(ds, [Box([0.0], [0.5])], first_coord)
        upper = region_scores(ds, [Box([0.5], [1.0])], first_coord)
        np.testing.assert_allclose(np.sort(lower), [0.3, 0.4])
        np.testing.assert_allclose(np.sort(upper), [0.5, 0.9])

    def test_unvisited_region_contributes_nothing(self):
        assert region_scores(_three_trajectories(), [Box([0.95], [1.0])], first_coord).size == 0

    def test_at_most_one_score_per_pair(self, rng):
        states = rng.uniform(size=(40, 6, 1))
        ds = make_dataset(states, rng.uniform(0, 0.1, size=(40, 6)), LINE)
        part = uniform_partition(LINE, [3])
        total = sum(region_scores(ds, r.boxes, first_coord).size for r in part.regions)
        visits = sum(len(set(np.minimum((s[:, 0] * 4).astype(int), 3))) for s in states)
        assert total == visits


class TestRegionalBounds:
    def test_single_region_is_plain_quantile(self, rng):
        states = rng.uniform(size=(1500, 5, 1))
        errors = np.abs(rng.standard_normal((1500, 5))) * 0.1
        ds = make_dataset(states, errors, LINE)
        part = uniform_partition(LINE, [0])
        gb = regional_bounds(ds, part, [0.05], first_coord)
        assert gb.etas[0] == cp_quantile(np.append(ds.errors(first_coord).max(axis=1), np.inf), 0.05)

    def test_tiny_alpha_is_infinite(self):
        ds = _three_trajectories()
        gb = regional_bounds(ds, uniform_partition(LINE, [1]), [0.1, 0.1], first_coord)
        assert gb.infinite_regions == [0, 1]

    def test_sum_over_alpha_rejected(self):
        with pytest.raises(ValueError):
            regional_bounds(_three_trajectories(), uniform_partition(LINE, [1]), [0.05, 0.05], first_coord, alpha=0.05)

    def test_roundtrip(self, tmp_path, rng):
        ds = make_dataset(rng.uniform(size=(300, 4, 1)), rng.uniform(0, 0.1, (300, 4)), LINE)
        gb = regional_bounds(ds, uniform_partition(LINE, [1]), [0.025, 0.025], first_coord)
        save_bound(gb, tmp_path / "b.json")
        again = load_bound(tmp_path / "b.json")
        assert isinstance(again, GlobalBound)
        np.testing.assert_array_equal(again.etas, gb.etas)


class TestTimewise:
    def test_constant_errors(self, rng):
        ds = make_dataset(rng.uniform(size=(500, 4, 1)), np.full((500, 4), 0.2), LINE)
        np.testing.assert_allclose(timewise_baseline(ds, 0.05, first_coord).steps, 0.2)

    def test_per_step_level(self):
        tb = TimewiseBound(np.zeros(91), 0.05)
        assert tb.alpha_step == pytest.approx(0.05 / 91)

    def test_tracks_per_step_quantile(self, rng):
        sig = np.linspace(0.01, 0.1, 5)
        n = 4000
        errors = np.abs(rng.standard_normal((n, 5))) * sig
        ds = make_dataset(rng.uniform(size=(n, 5, 1)), errors, LINE)
        b = timewise_baseline(ds, 0.05, first_coord).steps
        # the 1 - 0.01 two-sided normal quantile is about 2.576
        np.testing.assert_allclose(b / sig, 2.576, rtol=0.1)


class TestCoverage:
    def _data(self, rng):
        return make_dataset(rng.uniform(size=(200, 4, 1)), rng.normal(0, 0.01, (200, 4)), LINE)

    def test_infinite_bound_covers_all(self, rng):
        assert empirical_coverage(self._data(rng), TimewiseBound(np.full(4, np.inf), 0.05), first_coord) == 1.0

    def test_zero_bound_covers_none(self, rng):
        assert empirical_coverage(self._data(rng), TimewiseBound(np.zeros(4), 0.05), first_coord) == 0.0

    def test_calibrated_coverage(self, rng):
        part = get_nonempty_boxes((np.array([0.5]),), np.array([[0.1], [0.9]]), LINE)

        def draw(n):
            states = rng.uniform(size=(n, 10, 1))
            sig = np.where(states[..., 0] < 0.5, 0.01, 0.1)
            return make_dataset(states, rng.standard_normal((n, 10)) * sig, LINE)

        covs = []
        for _ in range(5):
            gb = regional_bounds(draw(1500), part, [0.025, 0.025], first_coord)
            covs.append(empirical_coverage(draw(2000), gb, first_coord))
        # single runs scatter by about 0.005 around the nominal level
        assert np.mean(covs) >= 0.95 - 3 * math.sqrt(0.05 * 0.95 / 10_000)
        assert min(covs) >= 0.92
