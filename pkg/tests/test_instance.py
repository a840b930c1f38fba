import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tspheat.instance import (Instance, InstanceFormatError, brute_force_optimum, generate_instance,
                              greedy_nearest_neighbor, read_instance, read_tour, tour_length,
                              validate_tour, write_instance, write_tour)

SQUARE = Instance([(0, 0), (1, 0), (1, 1), (0, 1)])


def naive_optimum(inst):
    best = math.inf
    for perm in itertools.permutations(range(1, inst.n)):
        best = min(best, tour_length(inst, (0,) + perm))
    return best


class TestGenerate:
    def test_same_seed_same_instance(self):
        a = generate_instance(100, random_state=1)
        b = generate_instance(100, random_state=1)
        assert np.array_equal(a.coords, b.coords)

    def test_points_in_unit_square(self):
        inst = generate_instance(500, random_state=3)
        assert inst.coords.min() >= 0 and inst.coords.max() < 1

    def test_large_sample_mean(self):
        inst = generate_instance(10_000, random_state=42)
        assert abs(inst.coords[:, 0].mean() - 0.5) <= 0.02

    @pytest.mark.parametrize("n", [0, 2])
    def test_too_small(self, n):
        with pytest.raises(ValueError):
            generate_instance(n, random_state=0)

    def test_coords_read_only(self):
        with pytest.raises(ValueError):
            SQUARE.coords[0, 0] = 5.0

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            Instance([(0, 0), (1, np.nan), (0, 1)])


class TestTourLength:
    def test_square_perimeter(self):
        assert tour_length(SQUARE, [0, 1, 2, 3]) == 4.0

    def test_coincident_points(self):
        assert tour_length(Instance([(0.3, 0.3)] * 5), range(5)) == 0.0

    def test_crossing_tour(self):
        inst = Instance([(0, 0), (1, 1), (1, 0), (0, 1)])
        assert tour_length(inst, [0, 1, 2, 3]) == pytest.approx(2 + 2 * math.sqrt(2), abs=1e-12)

    @pytest.mark.parametrize("bad", [[0, 1, 2], [0, 1, 2, 2], [0, 1, 2, 4], [0, 1, 2, -1]])
    def test_rejects_non_permutation(self, bad):
        with pytest.raises(ValueError):
            tour_length(SQUARE, bad)

    def test_validate_accepts_integral_floats(self):
        assert validate_tour([0.0, 2.0, 1.0, 3.0], 4).tolist() == [0, 2, 1, 3]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 40), st.integers(0, 2**32 - 1), st.integers(0, 100))
    def test_rotation_and_reversal_invariant(self, n, seed, shift):
        inst = generate_instance(n, random_state=seed)
        order = np.random.default_rng(seed).permutation(n).tolist()
        base = tour_length(inst, order)
        s = shift % n
        assert tour_length(inst, order[s:] + order[:s]) == pytest.approx(base, rel=1e-12)
        assert tour_length(inst, order[::-1]) == pytest.approx(base, rel=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(3, 30), st.integers(0, 2**32 - 1))
    def test_lower_bound_by_closest_pair(self, n, seed):
        inst = generate_instance(n, random_state=seed)
        order = np.random.default_rng(seed + 1).permutation(n)
        c = inst.coords
        d = np.hypot(*(c[:, None, :] - c[None, :, :]).transpose(2, 0, 1))
        dmin = d[~np.eye(n, dtype=bool)].min()
        assert tour_length(inst, order) >= n * dmin - 1e-12


class TestBruteForce:
    def test_square(self):
        tour, length = brute_force_optimum(SQUARE)
        assert length == 4.0
        assert tour == [0, 1, 2, 3]

    def test_collinear(self):
        inst = Instance([(x, 0.0) for x in (0.0, 0.25, 0.5, 0.75, 1.0)])
        assert brute_force_optimum(inst)[1] == pytest.approx(2.0, abs=1e-12)

    def test_matches_naive_enumeration(self):
        inst = generate_instance(9, random_state=3)
        assert brute_force_optimum(inst)[1] == pytest.approx(naive_optimum(inst), abs=1e-12)

    def test_oracle_value_seed3(self):
        inst = generate_instance(9, random_state=3)
        tour, length = brute_force_optimum(inst)
        assert tour[0] == 0 and tour[1] < tour[-1]
        assert length == pytest.approx(2.727641135908524, abs=1e-12)

    def test_too_large(self):
        with pytest.raises(ValueError):
            brute_force_optimum(generate_instance(13, random_state=0))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(4, 8), st.integers(0, 2**32 - 1))
    def test_no_tour_is_shorter(self, n, seed):
        inst = generate_instance(n, random_state=seed)
        best = brute_force_optimum(inst)[1]
        rng = np.random.default_rng(seed)
        for _ in range(20):
            assert best <= tour_length(inst, rng.permutation(n)) + 1e-12
        assert best <= tour_length(inst, greedy_nearest_neighbor(inst)) + 1e-12


class TestGreedy:
    def test_square(self):
        assert tour_length(SQUARE, greedy_nearest_neighbor(SQUARE, 0)) == 4.0

    def test_triangle_any_start(self):
        tri = Instance([(0, 0), (1, 0), (0.5, math.sqrt(3) / 2)])
        lengths = {round(tour_length(tri, greedy_nearest_neighbor(tri, s)), 12) for s in range(3)}
        assert lengths == {3.0}

    def test_trivial_bound(self):
        inst = generate_instance(50, random_state=9)
        tour = greedy_nearest_neighbor(inst)
        c = inst.coords[tour]
        longest = np.hypot(*(c - np.roll(c, -1, axis=0)).T).max()
        assert tour_length(inst, tour) >= 2 * longest - 1e-12

    def test_ties_go_to_lowest_index(self):
        inst = Instance([(0.5, 0.5), (0.5, 0.6), (0.4, 0.5), (0.5, 0.4), (0.6, 0.5)])
        assert greedy_nearest_neighbor(inst, 0)[1] == 1

    def test_start_out_of_range(self):
        with pytest.raises(ValueError):
            greedy_nearest_neighbor(SQUARE, 4)


class TestFiles:
    def test_instance_round_trip(self, tmp_path):
        inst = generate_instance(20, random_state=1)
        write_instance(inst, tmp_path / "a.txt")
        back = read_instance(tmp_path / "a.txt")
        assert np.array_equal(back.coords, inst.coords)

    def test_count_mismatch(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("n 5\n" + "0.1 0.2\n" * 4)
        with pytest.raises(InstanceFormatError, match="count mismatch"):
            read_instance(p)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("count 3\n0 0\n1 1\n0 1\n")
        with pytest.raises(InstanceFormatError, match="malformed header"):
            read_instance(p)

    def test_nonfinite(self, tmp_path):
        p = tmp_path / "bad.txt"
        p.write_text("n 3\n0 0\ninf 1\n0 1\n")
        with pytest.raises(InstanceFormatError, match="non-finite"):
            read_instance(p)

    def test_tsplib_normalized(self, tmp_path):
        p = tmp_path / "tri.tsp"
        p.write_text("NAME: tri\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\n"
                     "NODE_COORD_SECTION\n1 10 20\n2 30 20\n3 10 30\nEOF\n")
        inst = read_instance(p)
        assert inst.name == "tri"
        assert np.allclose(inst.coords, [[0, 0], [1, 0], [0, 0.5]])
        assert inst.offset == (10.0, 20.0) and inst.scale == 20.0
        length = tour_length(inst, [0, 1, 2])
        assert inst.to_original_units(length) == pytest.approx(20 + 10 + math.hypot(20, 10))

    def test_tsplib_wrong_metric(self, tmp_path):
        p = tmp_path / "x.tsp"
        p.write_text("NAME: x\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: GEO\nNODE_COORD_SECTION\n1 0 0\n2 1 1\n3 0 1\nEOF\n")
        with pytest.raises(InstanceFormatError, match="EUC_2D"):
            read_instance(p)

    def test_tour_round_trip(self, tmp_path):
        write_tour([2, 0, 1, 3], 3.25, tmp_path / "t.tour")
        assert read_tour(tmp_path / "t.tour") == ([2, 0, 1, 3], 3.25)

    def test_tour_count_mismatch(self, tmp_path):
        p = tmp_path / "t.tour"
        p.write_text("n 4\n0 1 2\nlength 1.0\n")
        with pytest.raises(InstanceFormatError, match="count mismatch"):
            read_tour(p)
