import json

import numpy as np
import pytest

from neognn import cli
from neognn.graph import build_graph, format_edge_list
from neognn.metrics import auc, hits_at_k

from conftest import er_graph

# tiny splits have fewer negatives than the reported Hits@K cut-offs
pytestmark = pytest.mark.filterwarnings("ignore:k=.* exceeds")


def write_graph(path, g):
    path.write_text(format_edge_list(g.edges, g.num_nodes))
    return str(path)


@pytest.fixture
def graph_file(tmp_path):
    return write_graph(tmp_path / "graph.txt", er_graph(40, 0.15, seed=0))


@pytest.fixture
def split_dir(tmp_path, graph_file):
    out = tmp_path / "split"
    assert cli.main(["split", "--graph", graph_file, "--out", str(out), "--seed", "1"]) == 0
    return out


def tiny_train_args(split_dir, out, *extra):
    return [
        "train", "--train", str(split_dir / "train.txt"), "--valid", str(split_dir / "valid.txt"),
        "--test", str(split_dir / "test.txt"), "--valid-neg", str(split_dir / "valid_neg.txt"),
        "--test-neg", str(split_dir / "test_neg.txt"), "--out", str(out), "--epochs", "3",
        "--batch-size", "32", "--hidden", "6", "--gcn-layers", "2", "--gcn-hidden", "8",
        "--embedding-dim", "8", "--predictor-hidden", "8", *extra,
    ]


class TestHeuristic:
    def test_k4_aa(self, tmp_path, capsys):
        g = build_graph([(i, j) for i in range(4) for j in range(i + 1, 4)])
        gf = write_graph(tmp_path / "k4.txt", g)
        (tmp_path / "pairs.txt").write_text("0 1\n0 2\n0 3\n1 2\n1 3\n2 3\n")
        assert cli.main(["heuristic", "--kind", "aa", "--graph", gf, "--pairs", str(tmp_path / "pairs.txt")]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 6
        for line in lines:
            assert f"{float(line.split()[2]):.6f}" == "1.820478"

    def test_unknown_kind_is_usage_error(self, tmp_path, graph_file):
        (tmp_path / "p.txt").write_text("0 1\n")
        assert cli.main(["heuristic", "--kind", "nope", "--graph", graph_file, "--pairs", str(tmp_path / "p.txt")]) == 2

    def test_bad_pair_is_data_error(self, tmp_path, graph_file, capsys):
        (tmp_path / "p.txt").write_text("0 1\n0 400\n")
        assert cli.main(["heuristic", "--kind", "cn", "--graph", graph_file, "--pairs", str(tmp_path / "p.txt")]) == 3
        assert "p.txt:2" in capsys.readouterr().err


class TestSplit:
    def test_files_and_counts(self, split_dir):
        counts = {r: len((split_dir / f"{r}.txt").read_text().split("\n")) for r in ("train", "valid", "test")}
        assert counts["train"] > counts["test"] > counts["valid"]
        manifest = json.loads((split_dir / "manifest.json").read_text())
        assert manifest["seed"] == 1 and "graph" in manifest["inputs"]

    def test_same_seed_identical_files(self, tmp_path, graph_file, split_dir):
        other = tmp_path / "again"
        cli.main(["split", "--graph", graph_file, "--out", str(other), "--seed", "1"])
        for name in ("train.txt", "valid.txt", "test.txt", "valid_neg.txt", "test_neg.txt"):
            assert (split_dir / name).read_bytes() == (other / name).read_bytes()

    def test_empty_split_is_data_error(self, tmp_path):
        gf = write_graph(tmp_path / "tri.txt", build_graph([(0, 1), (1, 2), (0, 2)]))
        assert cli.main(["split", "--graph", gf, "--out", str(tmp_path / "o")]) == 3


class TestTrain:
    def test_two_runs_identical(self, tmp_path, split_dir):
        for run in ("a", "b"):
            assert cli.main(tiny_train_args(split_dir, tmp_path / run, "--mode", "no-gcn", "--seed", "0")) == 0
        for name in ("checkpoint.npz", "metrics.txt", "scores_test.txt", "train_log.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_gcn_mode_outputs(self, tmp_path, split_dir):
        out = tmp_path / "run"
        assert cli.main(tiny_train_args(split_dir, out)) == 0
        metrics = dict(line.split("=", 1) for line in (out / "metrics.txt").read_text().splitlines())
        assert {"test_auc", "test_mrr", "test_hits@20", "alpha"} <= set(metrics)
        assert 0.0 < float(metrics["alpha"]) < 1.0
        manifest = json.loads((out / "manifest.json").read_text())
        assert set(manifest["outputs"]) == {"checkpoint", "metrics", "scores_test", "train_log"}

    def test_pretrained_gcn_frozen(self, tmp_path, split_dir):
        from neognn.model import load_checkpoint

        assert cli.main(tiny_train_args(split_dir, tmp_path / "pre")) == 0
        pre = tmp_path / "pre" / "checkpoint.npz"
        assert cli.main(tiny_train_args(split_dir, tmp_path / "ft", "--pretrained-gcn", str(pre),
                                        "--freeze-gcn", "true", "--seed", "5")) == 0
        a, _ = load_checkpoint(pre)
        b, _ = load_checkpoint(tmp_path / "ft" / "checkpoint.npz")
        for name in a.tensors:
            if name.startswith(("gcn.", "predictor.")) or name == "embedding":
                np.testing.assert_array_equal(a.tensors[name], b.tensors[name])

    def test_config_file_and_override(self, tmp_path, split_dir):
        conf = tmp_path / "run.conf"
        conf.write_text("# defaults for this run\nhops = 1\nbeta = 0.3\nmode = no-gcn\nepochs = 2\n")
        out = tmp_path / "o"
        assert cli.main(tiny_train_args(split_dir, out, "--config", str(conf), "--beta", "0.7")) == 0
        resolved = json.loads((out / "manifest.json").read_text())["resolved_config"]
        assert resolved["hops"] == 1 and resolved["beta"] == 0.7 and resolved["mode"] == "no-gcn"

    def test_unknown_config_key(self, tmp_path, split_dir):
        conf = tmp_path / "bad.conf"
        conf.write_text("colour = blue\n")
        assert cli.main(tiny_train_args(split_dir, tmp_path / "o", "--config", str(conf))) == 2

    def test_missing_file_is_data_error(self, tmp_path, split_dir):
        args = tiny_train_args(split_dir, tmp_path / "o")
        args[args.index("--valid") + 1] = str(tmp_path / "nope.txt")
        assert cli.main(args) == 3

    def test_negatives_sampled_when_absent(self, tmp_path, split_dir):
        args = tiny_train_args(split_dir, tmp_path / "o", "--mode", "no-gcn")
        for flag in ("--valid-neg", "--test-neg"):
            i = args.index(flag)
            del args[i:i + 2]
        assert cli.main(args) == 0

    def test_power_cache_reused(self, tmp_path, split_dir):
        cache = tmp_path / "cache"
        for run in ("a", "b"):
            assert cli.main(tiny_train_args(split_dir, tmp_path / run, "--mode", "no-gcn",
                                            "--cache-dir", str(cache))) == 0
        assert len(list(cache.glob("powers-*.zip"))) == 1
        assert (tmp_path / "a" / "checkpoint.npz").read_bytes() == (tmp_path / "b" / "checkpoint.npz").read_bytes()

    def test_bad_hyperparameter_is_usage_error(self, tmp_path, split_dir):
        assert cli.main(tiny_train_args(split_dir, tmp_path / "o", "--hops", "0")) == 2


def test_cached_series_matches_fresh(tmp_path):
    g = er_graph(30, 0.2, seed=3)
    fresh = cli.power_series(g.adjacency, 3, 0.5, 0.0)
    cli.cached_power_series(g.adjacency, 3, 0.5, 0.0, tmp_path)
    loaded = cli.cached_power_series(g.adjacency, 3, 0.5, 0.0, tmp_path)
    np.testing.assert_array_equal(loaded.combined.to_dense(), fresh.combined.to_dense())


class TestEval:
    def test_passthrough(self, tmp_path, capsys):
        (tmp_path / "scores.txt").write_text("0 1 0.9\n1 2 0.15\n0 2 0.1\n2 3 0.2\n")
        (tmp_path / "pos.txt").write_text("0 1\n2 1\n")
        (tmp_path / "neg.txt").write_text("0 2\n2 3\n")
        rc = cli.main(["eval", "--scores", str(tmp_path / "scores.txt"), "--pos", str(tmp_path / "pos.txt"),
                       "--neg", str(tmp_path / "neg.txt"), "--metrics", "auc,hits@1,mrr"])
        assert rc == 0
        out = capsys.readouterr().out
        vals = dict(line.split() for line in out.splitlines()[:3])
        assert float(vals["auc"]) == pytest.approx(auc([0.9, 0.15], [0.1, 0.2]))
        assert float(vals["hits@1"]) == pytest.approx(hits_at_k([0.9, 0.15], [0.1, 0.2], 1))
        assert float(vals["mrr"]) == pytest.approx((1 + 0.5) / 2)

    def test_missing_score(self, tmp_path):
        (tmp_path / "scores.txt").write_text("0 1 0.9\n")
        (tmp_path / "pos.txt").write_text("0 1\n")
        (tmp_path / "neg.txt").write_text("0 2\n")
        assert cli.main(["eval", "--scores", str(tmp_path / "scores.txt"), "--pos", str(tmp_path / "pos.txt"),
                         "--neg", str(tmp_path / "neg.txt")]) == 3


class TestFitHeuristicAndCorr:
    def test_fit_heuristic_outputs(self, tmp_path, graph_file, capsys):
        out = tmp_path / "fit"
        rc = cli.main(["fit-heuristic", "--kind", "cn", "--graph", graph_file, "--out", str(out), "--hops", "1",
                       "--epochs", "20", "--hidden", "8", "--num-test-pairs", "100"])
        assert rc == 0
        assert capsys.readouterr().out.startswith("spearman=")
        assert (out / "fitted_scores.txt").read_text().startswith("u v fitted heuristic")

    def test_analyze_corr(self, tmp_path, capsys):
        gf = write_graph(tmp_path / "p.txt", build_graph([(0, 1), (1, 2), (2, 3)]))
        assert cli.main(["analyze-corr", "--graph", gf, "--k", "2"]) == 0
        assert capsys.readouterr().out.startswith("corr(A, A')=")

    def test_degenerate_corr_is_numeric_failure(self, tmp_path):
        gf = write_graph(tmp_path / "t.txt", build_graph([(0, 1), (1, 2), (0, 2)]))
        assert cli.main(["analyze-corr", "--graph", gf]) == 4


def test_no_subcommand_is_usage_error():
    assert cli.main([]) == 2
