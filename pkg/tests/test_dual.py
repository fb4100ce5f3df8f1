import numpy as np
import pytest

from drfgmm import (
    AffinityMatrix,
    ConfigError,
    DataError,
    LatentConstraints,
    SeedingFailure,
    connected_components,
    load_constraints,
    mutual_exclusion,
    save_constraints,
    seed_constraints,
    threshold_filter,
)


def affinity_from_edges(n, edges, weight=0.9):
    """Symmetric matrix with unit diagonal and the given undirected edges."""
    vals = np.zeros((n, n))
    np.fill_diagonal(vals, 1.0)
    for i, j in edges:
        vals[i, j] = vals[j, i] = weight
    return AffinityMatrix(vals)


def components_oracle(n, edges):
    """Union-find over the same edges, then remap ids by first occurrence."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j in edges:
        parent[find(i)] = find(j)
    roots = [find(i) for i in range(n)]
    seen = {}
    return np.array([seen.setdefault(r, len(seen)) for r in roots])


class TestThresholdFilter:
    def test_keeps_strong_and_zeroes_weak(self):
        vals = np.array([[1.0, 0.9, 0.3],
                         [0.9, 1.0, 0.8],
                         [0.3, 0.8, 1.0]])
        out = threshold_filter(AffinityMatrix(vals), 0.8)
        expected = np.array([[1.0, 0.9, 0.0],
                             [0.9, 1.0, 0.8],
                             [0.0, 0.8, 1.0]])
        np.testing.assert_array_equal(out.values, expected)

    def test_exact_threshold_survives(self):
        vals = np.eye(2)
        vals[0, 1] = vals[1, 0] = 0.8
        out = threshold_filter(AffinityMatrix(vals), 0.8)
        assert out.values[0, 1] == 0.8

    def test_threshold_zero_keeps_everything(self):
        gen = np.random.default_rng(1)
        raw = gen.uniform(0.1, 0.9, size=(4, 4))
        vals = (raw + raw.T) / 2.0
        np.fill_diagonal(vals, 1.0)
        aff = AffinityMatrix(vals)
        np.testing.assert_array_equal(threshold_filter(aff, 0.0).values, vals)

    def test_threshold_is_idempotent(self):
        gen = np.random.default_rng(2)
        raw = gen.uniform(0.0, 1.0, size=(6, 6))
        vals = (raw + raw.T) / 2.0
        np.fill_diagonal(vals, 1.0)
        once = threshold_filter(AffinityMatrix(vals), 0.7)
        twice = threshold_filter(once, 0.7)
        np.testing.assert_array_equal(twice.values, once.values)

    def test_diagonal_pinned_to_one(self):
        out = threshold_filter(AffinityMatrix(np.eye(3)), 0.99)
        np.testing.assert_array_equal(np.diag(out.values), np.ones(3))

    def test_out_of_range_threshold_rejected(self):
        with pytest.raises(ConfigError):
            threshold_filter(AffinityMatrix(np.eye(2)), 1.5)


class TestConnectedComponents:
    def test_no_edges_gives_singletons(self):
        aff = affinity_from_edges(4, [])
        np.testing.assert_array_equal(connected_components(aff), [0, 1, 2, 3])

    def test_one_chain(self):
        aff = affinity_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        np.testing.assert_array_equal(connected_components(aff), [0, 0, 0, 0])

    def test_two_groups_with_interleaved_ids(self):
        aff = affinity_from_edges(6, [(0, 2), (2, 4), (1, 3), (3, 5)])
        np.testing.assert_array_equal(connected_components(aff), [0, 1, 0, 1, 0, 1])

    def test_matches_union_find_oracle_on_random_graphs(self):
        gen = np.random.default_rng(23)
        for _ in range(40):
            n = int(gen.integers(2, 25))
            m = int(gen.integers(0, n * 2))
            edges = [(int(gen.integers(n)), int(gen.integers(n))) for _ in range(m)]
            edges = [(i, j) for i, j in edges if i != j]
            aff = affinity_from_edges(n, edges)
            np.testing.assert_array_equal(connected_components(aff),
                                          components_oracle(n, edges))


class TestSeedConstraints:
    def test_two_clear_groups(self):
        aff = affinity_from_edges(7, [(0, 1), (1, 2), (3, 4), (4, 5), (5, 6)])
        cons = seed_constraints(aff, 2, 3)
        # the 4-sample group outranks the 3-sample group
        np.testing.assert_array_equal(cons.assignments, [1, 1, 1, 0, 0, 0, 0])

    def test_small_components_stay_free(self):
        aff = affinity_from_edges(8, [(0, 1), (1, 2), (3, 4), (4, 5), (6, 7)])
        cons = seed_constraints(aff, 2, 3)
        np.testing.assert_array_equal(cons.assignments, [0, 0, 0, 1, 1, 1, -1, -1])

    def test_size_tie_prefers_earlier_first_member(self):
        aff = affinity_from_edges(6, [(2, 4), (1, 3), (3, 5)])
        # components: {0}, {1,3,5}, {2,4}; sizes 1, 3, 2
        cons = seed_constraints(aff, 2, 2)
        np.testing.assert_array_equal(cons.assignments, [-1, 0, 1, 0, 1, 0])

    def test_equal_sizes_rank_by_first_member(self):
        aff = affinity_from_edges(6, [(3, 5), (0, 1)])
        # two 2-groups {0,1} and {3,5}: earlier first member wins rank 0
        cons = seed_constraints(aff, 2, 2)
        np.testing.assert_array_equal(cons.assignments, [0, 0, -1, 1, -1, 1])

    def test_failure_reports_counts(self):
        aff = affinity_from_edges(5, [(0, 1)])
        with pytest.raises(SeedingFailure) as err:
            seed_constraints(aff, 3, 2)
        assert err.value.needed == 3
        assert err.value.achieved == 1
        assert err.value.min_component == 2

    def test_bad_arguments_rejected(self):
        aff = affinity_from_edges(3, [])
        with pytest.raises(ConfigError):
            seed_constraints(aff, 0, 1)
        with pytest.raises(ConfigError):
            seed_constraints(aff, 1, 0)

    def test_component_seeds_never_conflict(self):
        # after component-based seeding every strong edge stays inside one
        # group, so the exclusion pass must change nothing
        gen = np.random.default_rng(31)
        for _ in range(25):
            n = int(gen.integers(6, 30))
            m = int(gen.integers(0, n))
            edges = [(int(gen.integers(n)), int(gen.integers(n))) for _ in range(m)]
            edges = [(i, j) for i, j in edges if i != j]
            aff = affinity_from_edges(n, edges)
            sizes = np.bincount(connected_components(aff))
            k = min(2, int((sizes >= 2).sum()))
            if k < 1:
                continue
            cons = seed_constraints(aff, k, 2)
            after = mutual_exclusion(aff, cons)
            np.testing.assert_array_equal(after.assignments, cons.assignments)


class TestMutualExclusion:
    def test_bridge_sample_released(self):
        # 1 and 2 are adjacent but fixed to different groups: both go free
        aff = affinity_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        cons = LatentConstraints(np.array([0, 0, 1, 1]), 2)
        out = mutual_exclusion(aff, cons)
        np.testing.assert_array_equal(out.assignments, [0, -1, -1, 1])

    def test_decisions_are_simultaneous(self):
        # a star: center 0 fixed to group 0, leaves fixed to 0 and 1.
        # the center sees both groups and is released; leaf 1 sees only the
        # original center tag, so it must stay (release is not cascaded)
        aff = affinity_from_edges(3, [(0, 1), (0, 2)])
        cons = LatentConstraints(np.array([0, 0, 1]), 2)
        out = mutual_exclusion(aff, cons)
        np.testing.assert_array_equal(out.assignments, [-1, 0, 1])

    def test_free_samples_unaffected(self):
        aff = affinity_from_edges(4, [(0, 1), (1, 2), (2, 3)])
        cons = LatentConstraints(np.array([-1, -1, -1, -1]), 2)
        out = mutual_exclusion(aff, cons)
        np.testing.assert_array_equal(out.assignments, cons.assignments)

    def test_single_group_neighborhood_kept(self):
        aff = affinity_from_edges(3, [(0, 1), (1, 2)])
        cons = LatentConstraints(np.array([0, 0, 0]), 1)
        out = mutual_exclusion(aff, cons)
        np.testing.assert_array_equal(out.assignments, [0, 0, 0])

    def test_size_mismatch_rejected(self):
        aff = affinity_from_edges(3, [])
        with pytest.raises(DataError):
            mutual_exclusion(aff, LatentConstraints(np.array([0, 1]), 2))

    def test_no_cross_group_adjacency_afterwards(self):
        gen = np.random.default_rng(77)
        for _ in range(25):
            n = int(gen.integers(4, 20))
            m = int(gen.integers(0, 2 * n))
            edges = [(int(gen.integers(n)), int(gen.integers(n))) for _ in range(m)]
            edges = [(i, j) for i, j in edges if i != j]
            aff = affinity_from_edges(n, edges)
            assign = gen.integers(-1, 3, size=n)
            out = mutual_exclusion(aff, LatentConstraints(assign, 3))
            adj = (aff.values > 0.0) & ~np.eye(n, dtype=bool)
            fixed = out.assignments >= 0
            for i in range(n):
                if not fixed[i]:
                    continue
                tags = out.assignments[adj[i] & fixed]
                assert np.unique(tags).size <= 1 or np.all(tags == out.assignments[i])


class TestLatentConstraints:
    def test_component_sizes(self):
        cons = LatentConstraints(np.array([0, 0, 1, -1, 2, 2, 2]), 3)
        np.testing.assert_array_equal(cons.component_sizes(), [2, 1, 3])

    def test_out_of_range_ids_rejected(self):
        with pytest.raises(DataError):
            LatentConstraints(np.array([0, 3]), 2)
        with pytest.raises(DataError):
            LatentConstraints(np.array([-2]), 2)

    def test_json_round_trip(self, tmp_path):
        cons = LatentConstraints(np.array([0, -1, 1, 1]), 2)
        path = tmp_path / "c.json"
        save_constraints(cons, path)
        back = load_constraints(path, 2)
        np.testing.assert_array_equal(back.assignments, cons.assignments)
        assert back.num_components == 2

    def test_list_form_uses_free_marker(self):
        cons = LatentConstraints(np.array([0, -1]), 1)
        assert cons.to_list() == [0, "free"]

    def test_load_rejects_non_array(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": 1}')
        with pytest.raises(DataError):
            load_constraints(path, 2)
