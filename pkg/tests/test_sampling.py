import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tspheat.heatmap import HeatMap, SurrogateProvider, UniformProvider, prune_unpromising
from tspheat.instance import Instance, InstanceFormatError, generate_instance
from tspheat.sampling import (AccumulatedMap, CoverageCounters, DegenerateSampleError,
                              SubGraphSample, build_global_heatmap, convert_subgraph, default_m,
                              dump_trace, extract_subgraph, merge_from_dir, merge_submaps)

# frozen from a reference run; guards against silent changes in sampling order
FROZEN_EDGES = 224
FROZEN_MASS = 25.533723958333333

COLLINEAR = Instance([(0.0, 0.5), (0.25, 0.5), (0.5, 0.5), (0.75, 0.5), (1.0, 0.5)])


def test_default_m():
    assert default_m(9) == 9
    assert default_m(100) == 20
    assert default_m(101) == 50
    assert default_m(10_000) == 50


class TestCounters:
    def test_vertex_and_edge_counts(self):
        c = CoverageCounters(5)
        c.record(np.array([0, 1, 2]))
        c.record(np.array([2, 1, 4]), weight=3)
        assert c.vertex.tolist() == [1, 4, 4, 0, 3]
        assert c.edge_count(1, 2) == 4
        assert c.edge_count(2, 1) == 4
        assert c.edge_count(0, 4) == 0
        assert c.edge_count(3, 3) == 0
        assert c.n_samples == 2


class TestExtract:
    def test_whole_graph(self):
        c = CoverageCounters(5)
        s = extract_subgraph(COLLINEAR, c, 5, np.random.default_rng(0))
        assert sorted(s.members.tolist()) == [0, 1, 2, 3, 4]
        assert c.vertex.tolist() == [1] * 5
        extract_subgraph(COLLINEAR, c, 5, np.random.default_rng(1))
        assert c.vertex.min() == 2

    def test_nearest_members_around_center(self):
        # seed 11 draws vertex 0 among the five equally uncovered vertices
        s = extract_subgraph(COLLINEAR, CoverageCounters(5), 3, np.random.default_rng(11))
        assert s.center == 0
        assert sorted(s.members.tolist()) == [0, 1, 2]

    def test_center_is_least_covered(self):
        c = CoverageCounters(5)
        c.record(np.array([0, 1, 2, 3]))
        s = extract_subgraph(COLLINEAR, c, 2, np.random.default_rng(5))
        assert s.center == 4 and sorted(s.members.tolist()) == [3, 4]

    def test_degenerate_leaves_counters(self):
        inst = Instance([(0.2, 0.2), (0.2, 0.2), (0.2, 0.2), (0.9, 0.9)])
        c = CoverageCounters(4)
        c.record(np.array([3]))
        with pytest.raises(DegenerateSampleError):
            extract_subgraph(inst, c, 2, np.random.default_rng(0))
        assert c.vertex.tolist() == [0, 0, 0, 1]

    def test_bad_m(self):
        with pytest.raises(ValueError):
            extract_subgraph(COLLINEAR, CoverageCounters(5), 6, np.random.default_rng(0))


class TestConvert:
    def _sample(self, inst):
        members = np.arange(inst.n)
        pts = inst.coords
        lo = pts.min(axis=0)
        return SubGraphSample(0, members, lo[0], lo[1], float((pts.max(axis=0) - lo).max()))

    def test_hand_example(self):
        inst = Instance([(0.2, 0.2), (0.6, 0.2), (0.2, 0.4)])
        s = self._sample(inst)
        assert s.scale == pytest.approx(2.5)
        assert np.allclose(convert_subgraph(inst, s), [[0, 0], [1, 0], [0, 0.5]], atol=1e-15)

    def test_identity_on_unit_square(self):
        inst = Instance([(0, 0), (1, 1), (0.3, 0.7)])
        s = self._sample(inst)
        assert s.scale == 1.0
        assert np.array_equal(convert_subgraph(inst, s), inst.coords)

    def test_vertical_segment(self):
        inst = Instance([(0.4, 0.1), (0.4, 0.6), (0.4, 0.3)])
        s = self._sample(inst)
        assert s.scale == 2.0
        out = convert_subgraph(inst, s)
        assert np.all(out[:, 0] == 0)
        assert np.allclose(out[:, 1], [0.0, 1.0, 0.4], rtol=0, atol=1e-15)

    def test_degenerate(self):
        inst = Instance([(0.5, 0.5)] * 3)
        with pytest.raises(DegenerateSampleError):
            convert_subgraph(inst, self._sample(inst))


class TestMerge:
    def test_average_and_single(self):
        members = np.array([0, 1, 2])
        acc, c = AccumulatedMap(4), CoverageCounters(4)
        for p01 in (0.3, 0.5):
            c.record(members)
            acc.add(members, HeatMap(3, {(0, 1): p01, (1, 2): 0.9, (0, 2): 0.9}))
        c.record(np.array([2, 3]))
        acc.add(np.array([2, 3]), HeatMap(2, {(0, 1): 0.7}))
        coords = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        hm = merge_submaps(acc, c, coords, epsilon=0.0)
        assert hm.get(0, 1) == pytest.approx(0.4, abs=1e-15)
        assert hm.get(2, 3) == 0.7
        assert hm.get(1, 3) == 0.0

    def test_zero_entries_count_in_denominator(self):
        acc, c = AccumulatedMap(3), CoverageCounters(3)
        members = np.array([0, 1, 2])
        c.record(members)
        acc.add(members, HeatMap(3, {(0, 1): 0.6, (1, 2): 0.5, (0, 2): 0.5}))
        c.record(members)
        acc.add(members, HeatMap(3, {(1, 2): 0.5, (0, 2): 0.5}))
        hm = merge_submaps(acc, c, np.eye(3)[:, :2], epsilon=0.0)
        assert hm.get(0, 1) == pytest.approx(0.3)

    def test_submap_size_checked(self):
        with pytest.raises(ValueError):
            AccumulatedMap(4).add(np.array([0, 1, 2]), HeatMap(2, {(0, 1): 0.5}))


class TestBuild:
    def test_whole_instance_single_sample(self):
        inst = generate_instance(12, random_state=0)
        trace = []
        hm = build_global_heatmap(inst, SurrogateProvider(), m=12, omega=1, random_state=0, trace=trace)
        assert len(trace) == 1
        converted = trace[0].converted
        direct = prune_unpromising(SurrogateProvider()(converted), inst.coords)
        assert hm == direct

    def test_whole_instance_weighted(self):
        inst = generate_instance(9, random_state=1)
        c = CoverageCounters(9)
        a = build_global_heatmap(inst, SurrogateProvider(), m=9, omega=5, random_state=0, counters=c)
        b = build_global_heatmap(inst, SurrogateProvider(), m=9, omega=1, random_state=0)
        assert c.vertex.tolist() == [5] * 9
        assert a == b

    def test_coverage_reaches_omega(self):
        inst = generate_instance(50, random_state=2)
        c = CoverageCounters(50)
        build_global_heatmap(inst, SurrogateProvider(), m=20, omega=5, random_state=3, counters=c)
        assert c.vertex.min() >= 5

    def test_deterministic(self):
        inst = generate_instance(120, random_state=4)
        a = build_global_heatmap(inst, SurrogateProvider(), random_state=7)
        b = build_global_heatmap(inst, SurrogateProvider(), random_state=7)
        assert a == b

    def test_frozen_oracle(self):
        inst = generate_instance(30, random_state=5)
        hm = build_global_heatmap(inst, SurrogateProvider(), m=10, omega=3, random_state=0)
        assert len(hm) == FROZEN_EDGES
        assert sum(p for _, _, p in hm.items()) == pytest.approx(FROZEN_MASS, abs=1e-12)

    def test_providers_share_support_on_whole_graph(self):
        inst = generate_instance(15, random_state=6)
        s = build_global_heatmap(inst, SurrogateProvider(), m=15, omega=1, random_state=0)
        u = build_global_heatmap(inst, UniformProvider(), m=15, omega=1, random_state=0)
        assert set(s.entries) == set(u.entries)

    @pytest.mark.parametrize("kwargs", [dict(m=1), dict(m=31), dict(omega=0)])
    def test_bad_arguments(self, kwargs):
        with pytest.raises(ValueError):
            build_global_heatmap(generate_instance(30, random_state=0), SurrogateProvider(), **kwargs)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(8, 80), st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_probabilities_and_coverage(self, n, seed, omega):
        inst = generate_instance(n, random_state=seed)
        c = CoverageCounters(n)
        m = min(n, 10)
        hm = build_global_heatmap(inst, SurrogateProvider(), m=m, omega=omega, random_state=seed, counters=c)
        assert c.vertex.min() >= omega
        assert all(0 < p <= 0.5 for _, _, p in hm.items())
        assert all(hm.degree(v) >= 2 for v in range(n))


class TestTraceFiles:
    def test_dump_and_merge_round_trip(self, tmp_path):
        inst = generate_instance(40, random_state=8)
        trace = []
        hm = build_global_heatmap(inst, SurrogateProvider(), m=15, omega=2, random_state=1, trace=trace)
        dump_trace(trace, inst, tmp_path, 15, 2)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["samples"]) == len(trace)
        assert merge_from_dir(inst, tmp_path) == hm

    def test_external_overwrite_is_used(self, tmp_path):
        inst = generate_instance(6, random_state=9)
        trace = []
        build_global_heatmap(inst, SurrogateProvider(), m=6, omega=1, random_state=0, trace=trace)
        dump_trace(trace, inst, tmp_path, 6, 1)
        (tmp_path / "sub_00000.heat").write_text("n 6\n0 1 0.9\n")
        hm = merge_from_dir(inst, tmp_path, epsilon=1e-4)
        members = trace[0].sample.members
        assert hm.get(members[0], members[1]) == 0.9

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InstanceFormatError, match="manifest"):
            merge_from_dir(generate_instance(5, random_state=0), tmp_path)
