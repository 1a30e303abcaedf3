import math

import numpy as np
import pytest

from hctree.cluster import build_tree
from hctree.embed import hash_embed
from hctree.errors import BadK, DimensionMismatch, ZeroNorm
from hctree.search import SearchOptions, bfs_search, node_distances, retrieve, topk_baseline
from hctree.vectorspace import cosine_distance

from oracles import exhaustive_argmin, literal_bfs_search, topk_by_inner_product


def unit(deg):
    r = math.radians(deg)
    return (math.cos(r), math.sin(r))


@pytest.fixture(scope="module")
def tree3():
    return build_tree([unit(0), unit(30), unit(90)], texts=["a", "b", "c"])


class TestBfsSearch:
    def test_leaf_hit(self, tree3):
        node, d = bfs_search(tree3, unit(90))
        assert node == 3 and d == pytest.approx(0, abs=1e-12)

    def test_internal_hit(self, tree3):
        node, d = bfs_search(tree3, unit(15))
        assert node == 4 and d == pytest.approx(0, abs=1e-12)

    def test_single_leaf(self):
        assert bfs_search(build_tree([(3.0, 4.0)]), (-1.0, 0.5))[0] == 1

    def test_dim_mismatch(self, tree3):
        with pytest.raises(DimensionMismatch):
            bfs_search(tree3, (1.0, 0.0, 0.0))

    def test_zero_query(self, tree3):
        with pytest.raises(ZeroNorm):
            bfs_search(tree3, (0.0, 0.0))

    def test_ancestor_wins_tie(self):
        t = build_tree([(1, 0), (1, 0), (0, 1), (0, 1)])
        first, low, tied = exhaustive_argmin(t, (1.0, 0.0))
        assert tied == {1, 2, 5} and first == 5
        assert bfs_search(t, (1.0, 0.0)) == (5, 0.0)
        assert literal_bfs_search(t, (1.0, 0.0))[0] == 5

    def test_distance_matches_representative(self):
        t = build_tree(np.random.default_rng(0).standard_normal((20, 6)))
        q = np.random.default_rng(1).standard_normal(6)
        node, d = bfs_search(t, q)
        assert abs(d - cosine_distance(q, t.representatives[node - 1])) <= 1e-12

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_literal_walk(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 128))
        t = build_tree(rng.standard_normal((n, 8)))
        q = rng.standard_normal(8)
        got, d = bfs_search(t, q)
        want, _ = literal_bfs_search(t, q)
        if got != want:  # only possible for a float near-tie
            assert abs(d - cosine_distance(q, t.representatives[want - 1])) < 1e-12

    def test_exclude_root(self):
        t = build_tree([(1, 0), (0, 1)])
        assert bfs_search(t, (1.0, 1.0))[0] == 3
        assert bfs_search(t, (1.0, 1.0), exclude_root=True)[0] == 1


class TestRetrieve:
    def test_leaf(self, tree3):
        r = retrieve(tree3, unit(90))
        assert r.chunks == [(3, "c")] and not r.refined

    def test_subtree(self, tree3):
        r = retrieve(tree3, unit(15))
        assert r.best_node_id == 4 and r.chunk_ids == [1, 2]

    def test_root_with_refinement(self):
        rng = np.random.default_rng(5)
        vs = rng.standard_normal((10, 4))
        q = vs.sum(axis=0)  # nearest to the root representative
        t = build_tree(vs)
        assert bfs_search(t, q)[0] == t.root_id
        r = retrieve(t, q, SearchOptions(mips_refine=3))
        assert r.refined and r.best_node_id == t.root_id
        want = topk_by_inner_product(vs, q, 3)
        assert r.chunk_ids == [c for c, _ in want]
        np.testing.assert_allclose(r.scores, [s for _, s in want], atol=1e-12)

    def test_refinement_not_applied_when_small(self, tree3):
        r = retrieve(tree3, unit(15), SearchOptions(mips_refine=5))
        assert not r.refined and r.chunk_ids == [1, 2]

    def test_mips_ties_by_chunk_id(self):
        t = build_tree([(1, 0), (1, 0), (1, 0), (0, 1)])
        r = retrieve(t, (1.0, 1.0), SearchOptions(mips_refine=2))
        assert r.chunk_ids == [1, 2]

    def test_bad_m(self):
        with pytest.raises(ValueError):
            SearchOptions(mips_refine=0)

    @pytest.mark.parametrize("seed", range(10))
    def test_adaptive_granularity(self, seed):
        vs = np.array([hash_embed(f"g{seed}-{i}", 16, seed) for i in range(40)])
        t = build_tree(vs)
        for i, v in enumerate(vs, start=1):
            r = retrieve(t, v)
            assert r.chunk_ids == [i] and r.best_node_id == i
            d = node_distances(t, v)
            assert (np.delete(d, i - 1) > 0).all()

    @pytest.mark.parametrize("seed", range(10))
    def test_refined_subset_and_query_scale(self, seed):
        rng = np.random.default_rng(seed)
        t = build_tree(rng.standard_normal((50, 8)))
        q = rng.standard_normal(8)
        opts = SearchOptions(mips_refine=4)
        full, refined = retrieve(t, q), retrieve(t, q, opts)
        assert set(refined.chunk_ids) <= set(full.chunk_ids)
        scaled = retrieve(t, 7.5 * q, opts)
        assert scaled.best_node_id == refined.best_node_id
        assert scaled.chunk_ids == refined.chunk_ids
        assert retrieve(t, q, opts) == refined

    def test_to_dict(self, tree3):
        d = retrieve(tree3, unit(15)).to_dict()
        assert d["best_node_id"] == 4 and [c["chunk_id"] for c in d["chunks"]] == [1, 2]


class TestTopK:
    vs = np.array([[1.0, 0], [0, 1], [0.6, 0.8], [-1, 0]])

    def test_all(self):
        got = topk_baseline(self.vs, (1.0, 0.0), 4)
        assert [c for c, _ in got] == [1, 3, 2, 4]

    def test_exact_match(self):
        assert topk_baseline(self.vs, (0.6, 0.8), 1)[0][0] == 3

    def test_ties_by_id(self):
        assert [c for c, _ in topk_baseline(self.vs, (0.0, 0.0), 4)] == [1, 2, 3, 4]

    def test_custom_ids(self):
        assert topk_baseline(self.vs, (1.0, 0.0), 1, chunk_ids=[9, 8, 7, 6]) == [(9, 1.0)]

    @pytest.mark.parametrize("k", [0, 5, -1])
    def test_bad_k(self, k):
        with pytest.raises(BadK):
            topk_baseline(self.vs, (1.0, 0.0), k)

    def test_matches_oracle(self):
        rng = np.random.default_rng(2)
        vs, q = rng.standard_normal((30, 5)), rng.standard_normal(5)
        got = topk_baseline(vs, q, 7)
        want = topk_by_inner_product(vs, q, 7)
        assert [c for c, _ in got] == [c for c, _ in want]
