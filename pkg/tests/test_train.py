import numpy as np
import pytest

from neognn import model as M
from neognn import train as T
from neognn.errors import DataError
from neognn.graph import build_graph
from neognn.metrics import spearman
from neognn import heuristics as H

from conftest import er_graph


def small_split(g, seed=0):
    ds, tg = T.split_edges(g, (0.8, 0.1, 0.1), seed)
    return ds, tg


class TestNegatives:
    def test_complete_graph_rejected(self, triangle):
        with pytest.raises(DataError):
            T.sample_negatives(triangle, 1, 0)

    def test_path_only_non_edge(self, path3):
        np.testing.assert_array_equal(T.sample_negatives(path3, 1, 0), [[0, 2]])

    def test_deterministic(self):
        g = er_graph(40, 0.1, seed=1)
        a = T.sample_negatives(g, 50, 7)
        b = T.sample_negatives(g, 50, 7)
        np.testing.assert_array_equal(a, b)

    def test_distinct_non_edges(self):
        g = er_graph(30, 0.3, seed=2)
        negs = T.sample_negatives(g, 200, 3)
        assert np.all(negs[:, 0] < negs[:, 1])
        assert len({tuple(p) for p in negs.tolist()}) == 200
        assert not any(g.has_edge(u, v) for u, v in negs)

    def test_exclusion_and_dense_fallback(self):
        # 6 nodes, 15 pairs, 12 edges, 3 non-edges: sampling all of them needs the fallback
        g = build_graph([(i, j) for i in range(6) for j in range(i + 1, 6) if (i, j) not in {(0, 1), (2, 3), (4, 5)}])
        negs = T.sample_negatives(g, 3, 0, max_rounds=1)
        assert {tuple(p) for p in negs.tolist()} == {(0, 1), (2, 3), (4, 5)}
        assert sorted(T.sample_negatives(g, 2, 0, exclude=[(1, 0)]).tolist()) == [[2, 3], [4, 5]]
        with pytest.raises(DataError):
            T.sample_negatives(g, 3, 0, exclude=[(1, 0)])


class TestSplit:
    def test_ratios(self):
        g = build_graph([(i, j) for i in range(20) for j in range(i + 1, 20)][:100], num_nodes=20)
        assert g.num_edges == 100
        ds, tg = T.split_edges(g, (0.8, 0.1, 0.1), 0)
        assert (len(ds.train_pos), len(ds.valid_pos), len(ds.test_pos)) == (80, 10, 10)
        assert tg.num_edges == 80
        ds.check_disjoint()
        T.leakage_guard(tg, ds)

    def test_same_seed_same_split(self):
        g = er_graph(30, 0.2, seed=0)
        a, _ = T.split_edges(g, (0.85, 0.05, 0.10), 3)
        b, _ = T.split_edges(g, (0.85, 0.05, 0.10), 3)
        for f in ("train_pos", "valid_pos", "test_pos", "valid_neg", "test_neg"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))

    def test_empty_split_rejected(self, triangle):
        with pytest.raises(DataError):
            T.split_edges(triangle, (0.9, 0.05, 0.05), 0)
        with pytest.raises(DataError):
            T.split_edges(triangle, (0.5, 0.5, 0.5), 0)

    def test_leakage_guard(self):
        g = er_graph(30, 0.2, seed=0)
        ds, _ = T.split_edges(g, (0.8, 0.1, 0.1), 0)
        with pytest.raises(DataError, match="leakage"):
            T.leakage_guard(g, ds)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        params = {"w": np.arange(4.0)}
        opt = T.Adam(lr=0.1)
        for _ in range(5):
            opt.step(params, {"w": np.zeros(4)})
        np.testing.assert_array_equal(params["w"], np.arange(4.0))

    def test_first_step_size(self):
        params = {"w": np.array([1.0, -1.0])}
        T.Adam(lr=0.1).step(params, {"w": np.array([3.0, -0.5])})
        np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-7)

    def test_frozen(self):
        params = {"a": np.ones(2), "b": np.ones(2)}
        T.Adam(lr=0.1).step(params, {"a": np.ones(2), "b": np.ones(2)}, frozen={"a"})
        np.testing.assert_array_equal(params["a"], 1.0)
        assert np.all(params["b"] < 1.0)

    def test_quadratic_converges(self):
        params = {"x": np.array([5.0, -3.0])}
        opt = T.Adam(lr=0.1)
        for _ in range(500):
            opt.step(params, {"x": 2 * params["x"]})
        assert np.abs(params["x"]).max() < 1e-2


class TestTrain:
    CFG = M.ModelConfig(use_gcn=False, hops=1, hidden=8)

    def _six_node(self):
        # the training positive (0, 2) closes the triangle 0-1-2, so it has a common neighbour
        tg = build_graph([(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5)], num_nodes=6)
        ds = T.SplitDataset(np.array([[0, 2]]), np.array([[1, 3]]), np.zeros((0, 2), np.int64),
                            np.array([[0, 5]]), np.zeros((0, 2), np.int64), 6)
        return tg, ds

    def test_zero_epochs_returns_init(self):
        tg, ds = self._six_node()
        init = M.init_params(self.CFG, 6, seed=1)
        params, log = T.train(tg, None, ds, T.TrainConfig(epochs=0), init)
        for k in init.tensors:
            np.testing.assert_array_equal(params.tensors[k], init.tensors[k])
        assert log.epochs == []

    def test_single_edge_loss_descends(self):
        tg, ds = self._six_node()
        init = M.init_params(self.CFG, 6, seed=1)
        cfg = T.TrainConfig(epochs=200, learning_rate=1e-2, patience=1000, negatives_per_positive=0)
        _, log = T.train(tg, None, ds, cfg, init)
        assert len(log.epochs) == 200
        # each logged loss is taken before that epoch's update, so epoch 1 is the initial loss
        assert log.epochs[0][1] == M.loss([(0, 2, 1)], M.make_context(tg, self.CFG), init)
        assert log.epochs[-1][1] < log.epochs[0][1]

    def test_bit_identical_runs(self):
        g = er_graph(30, 0.2, seed=4)
        ds, tg = small_split(g)
        cfg = M.ModelConfig(hops=2, hidden=6, gcn_layers=2, gcn_hidden=8, embedding_dim=8, predictor_hidden=8)
        init = M.init_params(cfg, 30, seed=0)
        tc = T.TrainConfig(epochs=5, batch_size=16, learning_rate=1e-2)
        a, la = T.train(tg, None, ds, tc, init)
        b, lb = T.train(tg, None, ds, tc, init)
        assert la.epochs == lb.epochs
        for k in a.tensors:
            np.testing.assert_array_equal(a.tensors[k], b.tensors[k])

    def test_best_checkpoint_not_worse_than_init(self):
        g = er_graph(40, 0.15, seed=5)
        ds, tg = small_split(g, 1)
        init = M.init_params(self.CFG, 40, seed=2)
        params, log = T.train(tg, None, ds, T.TrainConfig(epochs=10, batch_size=32, learning_rate=1e-2), init)
        assert log.best_metric >= log.initial_metric
        ctx = M.make_context(tg, self.CFG)
        got = T.evaluate(T.predict(params, ctx, ds.valid_pos), T.predict(params, ctx, ds.valid_neg), "auc")
        assert got == log.best_metric

    def test_early_stopping(self):
        g = er_graph(30, 0.2, seed=6)
        ds, tg = small_split(g)
        init = M.init_params(self.CFG, 30)
        _, log = T.train(tg, None, ds, T.TrainConfig(epochs=50, learning_rate=1e-9, patience=2), init)
        assert len(log.epochs) < 50

    def test_frozen_prefix(self):
        g = er_graph(30, 0.2, seed=6)
        ds, tg = small_split(g)
        cfg = M.ModelConfig(hops=1, hidden=6, gcn_layers=2, gcn_hidden=8, embedding_dim=8, predictor_hidden=8)
        init = M.init_params(cfg, 30, seed=0)
        tc = T.TrainConfig(epochs=10, batch_size=16, learning_rate=1e-2, frozen=("gcn",))
        params, log = T.train(tg, None, ds, tc, init)
        assert log.best_epoch > 0
        for k in init.tensors:
            changed = not np.array_equal(params.tensors[k], init.tensors[k])
            if k.startswith("gcn."):
                assert not changed, k
        assert not np.array_equal(params.tensors["predictor.w1"], init.tensors["predictor.w1"])

    def test_metric_names(self):
        assert T.parse_metric("Hits@20") == ("hits", 20)
        with pytest.raises(ValueError):
            T.parse_metric("precision")


class TestFitHeuristic:
    def test_uniform_degree_cn(self):
        # circulant graph, all degrees 4, CN takes several distinct values
        n = 24
        g = build_graph([(i, (i + d) % n) for i in range(n) for d in (1, 2)], num_nodes=n)
        cfg = M.ModelConfig(use_gcn=False, hops=1, hidden=8)
        init = M.init_params(cfg, n, seed=0)
        tc = T.TrainConfig(epochs=150, batch_size=64, learning_rate=1e-2)
        params, losses = T.fit_heuristic(g, "cn", init, tc)
        assert losses[-1] < losses[0]
        pairs = np.array([(u, v) for u in range(n) for v in range(u + 1, n)])
        fitted = M.structural_scores(params, M.make_context(g, cfg), pairs)
        assert spearman(fitted, H.score_all_pairs(g, "cn", pairs)) == pytest.approx(1.0, abs=1e-12)

    def test_aa_fifty_nodes(self):
        g = er_graph(50, 0.15, seed=3)
        cfg = M.ModelConfig(use_gcn=False, hops=1, hidden=16)
        tc = T.TrainConfig(epochs=300, batch_size=128, learning_rate=1e-2, fit_pairs_per_edge=2)
        params, _ = T.fit_heuristic(g, "aa", M.init_params(cfg, 50, seed=0), tc)
        held = T.sample_negatives(g, 300, np.random.default_rng(99))
        fitted = M.structural_scores(params, M.make_context(g, cfg), held)
        assert spearman(fitted, H.score_all_pairs(g, "aa", held)) >= 0.95

    def test_zero_pairs_rejected(self, triangle):
        init = M.init_params(M.ModelConfig(use_gcn=False), 3)
        with pytest.raises(DataError):
            T.fit_heuristic(triangle, "cn", init, T.TrainConfig(epochs=1), pairs=np.zeros((0, 2)))

    def test_needs_structural_only_model(self, triangle):
        with pytest.raises(ValueError):
            T.fit_heuristic(triangle, "cn", M.init_params(M.ModelConfig(gcn_hidden=4, embedding_dim=4), 3),
                            T.TrainConfig(epochs=1))
