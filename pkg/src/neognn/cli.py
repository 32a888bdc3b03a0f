"""Command-line entry point: ``neognn <subcommand> ...``.

Every subcommand accepts ``--config FILE`` holding flat ``key = value``
lines whose keys are the long flag names; explicit flags win over the file.
Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
import time
import zipfile
from pathlib import Path

import numpy as np
from filelock import FileLock

from . import __version__
from . import heuristics as H
from .errors import DataError, NumericError, UndefinedMetricError
from .graph import PowerSeries, SparseMatrix, format_edge_list, power_series, read_edge_list, read_pair_array
from .io import atomic_write_bytes, atomic_write_text, file_digest, format_scores, read_config, read_features, read_scores
from .metrics import EvalReport, adjacency_correlation, spearman
from .model import ModelConfig, init_params, load_checkpoint, make_context, save_checkpoint, structural_scores
from .train import SplitDataset, TrainConfig, evaluate, fit_heuristic, parse_metric, predict, sample_negatives, split_edges, train

log = logging.getLogger("neognn")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# --- power-series cache -------------------------------------------------------

def _series_to_bytes(series):
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", compression=zipfile.ZIP_STORED) as zf:
        meta = {"hops": series.hops, "beta": series.beta, "tau": series.tau}
        zf.writestr(zipfile.ZipInfo("meta.json", (1980, 1, 1, 0, 0, 0)), json.dumps(meta, sort_keys=True))
        for l, m in enumerate(series.matrices):
            for part in ("row_offsets", "col_indices", "values"):
                arr = io.BytesIO()
                np.lib.format.write_array(arr, getattr(m, part), allow_pickle=False)
                zf.writestr(zipfile.ZipInfo(f"{l}.{part}.npy", (1980, 1, 1, 0, 0, 0)), arr.getvalue())
    return buf.getvalue()


def _series_from_file(path, n):
    from .graph import add_scaled

    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        mats = []
        for l in range(meta["hops"]):
            parts = {p: np.lib.format.read_array(io.BytesIO(zf.read(f"{l}.{p}.npy")))
                     for p in ("row_offsets", "col_indices", "values")}
            mats.append(SparseMatrix(n, n, parts["row_offsets"], parts["col_indices"], parts["values"]))
    combined = mats[0]
    for l in range(2, meta["hops"] + 1):
        w = float(meta["beta"]) ** (l - 1)
        if w != 0.0:
            combined = add_scaled(combined, mats[l - 1], w)
    return PowerSeries(meta["hops"], meta["beta"], meta["tau"], tuple(mats), combined)


def cached_power_series(adjacency, hops, beta, tau, cache_dir):
    """Adjacency powers keyed on disk by ``(graph digest, L, beta, tau)``; ``None`` disables caching."""
    if cache_dir is None:
        return power_series(adjacency, hops, beta, tau)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = f"powers-{adjacency.digest()[:16]}-L{hops}-b{beta!r}-t{tau!r}.zip"
    path = cache_dir / key
    with FileLock(str(path) + ".lock"):
        if path.exists():
            return _series_from_file(path, adjacency.num_rows)
        series = power_series(adjacency, hops, beta, tau)
        atomic_write_bytes(path, _series_to_bytes(series))
        return series


# --- argument handling --------------------------------------------------------

def _csv_floats(s):
    return tuple(float(x) for x in str(s).replace("/", ",").split(","))


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {s!r}")


def _add_model_flags(p):
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--lambdas", type=_csv_floats, default=(1.0, 1.0, 1.0))
    p.add_argument("--f-edge", default="mlp")
    p.add_argument("--f-node", default="mlp")
    p.add_argument("--g-phi", default="mlp")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--hidden-act", default="relu")
    p.add_argument("--out-act", default="identity")
    p.add_argument("--feature-input", default="adjacency")
    p.add_argument("--binarize", type=_bool, default=True)
    p.add_argument("--gcn-layers", type=int, default=3)
    p.add_argument("--gcn-hidden", type=int, default=256)
    p.add_argument("--embedding-dim", type=int, default=256)
    p.add_argument("--predictor", default="mlp")
    p.add_argument("--predictor-hidden", type=int, default=256)


def _add_train_flags(p, lr):
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--adam-betas", type=_csv_floats, default=(0.9, 0.999))
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--neg-ratio", type=int, default=1, help="training negatives per positive")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--metric", default="auc", help="auc, mrr or hits@K")
    p.add_argument("--cache-dir", default=None, help="directory for cached adjacency powers")


def build_parser():
    parser = argparse.ArgumentParser(prog="neognn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="flat key = value file; flags override it")
        p.add_argument("--log-level", default="WARNING")
        return p

    p = command("split", "partition an edge list into train/valid/test files")
    p.add_argument("--graph", required=True)
    p.add_argument("--ratios", type=_csv_floats, default=(0.85, 0.05, 0.10))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--neg-ratio", type=int, default=1, help="held-out negatives per held-out positive")
    p.add_argument("--merge", default="sum", choices=("sum", "binary"))
    p.add_argument("--out", required=True)

    p = command("heuristic", "score node pairs with a classical heuristic")
    p.add_argument("--kind", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--weighted", type=_bool, default=False)
    p.add_argument("--katz-beta", type=float, default=0.05)
    p.add_argument("--katz-hops", type=int, default=5)
    p.add_argument("--damping", type=float, default=0.85)
    p.add_argument("--pagerank-iters", type=int, default=100)
    p.add_argument("--simrank-decay", type=float, default=0.8)
    p.add_argument("--simrank-iters", type=int, default=5)
    p.add_argument("--out", default=None, help="write scores here instead of stdout")

    p = command("train", "train the link predictor on a split")
    p.add_argument("--train", required=True, help="training edge list (the message-passing graph)")
    p.add_argument("--valid", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--valid-neg", default=None)
    p.add_argument("--test-neg", default=None)
    p.add_argument("--features", default=None, help="node feature matrix; default: learnable embeddings")
    p.add_argument("--mode", default="gcn", choices=("gcn", "no-gcn"))
    p.add_argument("--pretrained-gcn", default=None, help="checkpoint whose GCN tensors warm-start this run")
    p.add_argument("--freeze-gcn", type=_bool, default=False)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p, 1e-3)

    p = command("fit-heuristic", "fit the structural branch to a heuristic's scores")
    p.add_argument("--kind", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--test-pairs", default=None, help="held-out pairs for the Spearman report")
    p.add_argument("--num-test-pairs", type=int, default=1000)
    p.add_argument("--out", required=True)
    _add_model_flags(p)
    _add_train_flags(p, 1e-2)

    p = command("eval", "rank metrics from a score file and split files")
    p.add_argument("--scores", required=True)
    p.add_argument("--pos", required=True)
    p.add_argument("--neg", required=True)
    p.add_argument("--metrics", default="auc,mrr,hits@20,hits@50,hits@100")
    p.add_argument("--out", default=None)

    p = command("analyze-corr", "correlation between A and its multi-hop indicator")
    p.add_argument("--graph", required=True)
    p.add_argument("--k", type=int, default=2)
    return parser


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        conf = read_config(args.config)
        dests = {a.dest: a for a in sub._actions}
        unknown = set(conf) - set(dests)
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {sorted(unknown)}")
        defaults = {}
        for k, raw in conf.items():
            action = dests[k]
            defaults[k] = action.type(raw) if action.type is not None else raw
        sub.set_defaults(**defaults)
        for a in sub._actions:
            if a.dest in defaults:
                a.required = False
        args = parser.parse_args(argv)
    return args


def _model_config(args, use_gcn):
    return ModelConfig(
        hops=args.hops, beta=args.beta, tau=args.tau, lambdas=tuple(args.lambdas),
        f_edge=args.f_edge, f_node=args.f_node, g_phi=args.g_phi, hidden=args.hidden,
        hidden_act=args.hidden_act, out_act=args.out_act, feature_input=args.feature_input,
        binarize=args.binarize, use_gcn=use_gcn, gcn_layers=args.gcn_layers, gcn_hidden=args.gcn_hidden,
        embedding_dim=args.embedding_dim, predictor=args.predictor, predictor_hidden=args.predictor_hidden,
    )


def _train_config(args, frozen=()):
    if len(args.adam_betas) != 2:
        raise UsageError("--adam-betas takes two comma-separated numbers")
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        adam_beta1=args.adam_betas[0], adam_beta2=args.adam_betas[1], adam_eps=args.adam_eps,
        negatives_per_positive=args.neg_ratio, seed=args.seed, patience=args.patience,
        metric=args.metric, frozen=frozen,
    )


def _manifest(args, argv, inputs, timings, outputs):
    resolved = {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items())}
    return json.dumps({
        "version": __version__,
        "command_line": ["neognn", *argv],
        "resolved_config": resolved,
        "seed": resolved.get("seed"),
        "inputs": {k: file_digest(v) for k, v in sorted(inputs.items()) if v},
        "outputs": {k: file_digest(v) for k, v in sorted(outputs.items())},
        "timing_seconds": timings,
    }, indent=1, sort_keys=True) + "\n"


# --- subcommands --------------------------------------------------------------

def cmd_split(args, argv):
    g = read_edge_list(args.graph, merge=args.merge)
    ds, _ = split_edges(g, args.ratios, args.seed, args.neg_ratio)
    out = Path(args.out)
    files = {}
    for role in ("train", "valid", "test"):
        files[role] = out / f"{role}.txt"
        atomic_write_text(files[role], format_edge_list(getattr(ds, f"{role}_pos"), g.num_nodes))
    for role in ("valid", "test"):
        files[f"{role}_neg"] = out / f"{role}_neg.txt"
        atomic_write_text(files[f"{role}_neg"], format_edge_list(getattr(ds, f"{role}_neg"), g.num_nodes))
    atomic_write_text(out / "manifest.json", _manifest(args, argv, {"graph": args.graph}, {}, files))
    print(f"train={len(ds.train_pos)} valid={len(ds.valid_pos)} test={len(ds.test_pos)} "
          f"valid_neg={len(ds.valid_neg)} test_neg={len(ds.test_neg)}")
    return 0


def cmd_heuristic(args, argv):
    g = read_edge_list(args.graph)
    pairs = read_pair_array(args.pairs, g.num_nodes)
    params = H.HeuristicParams(
        katz_beta=args.katz_beta, katz_hops=args.katz_hops, damping=args.damping,
        pagerank_iters=args.pagerank_iters, simrank_decay=args.simrank_decay,
        simrank_iters=args.simrank_iters, weighted=args.weighted,
    )
    scores = H.score_all_pairs(g, args.kind, pairs, params)
    text = format_scores(pairs, scores)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def _load_split(args, g, rng):
    n = g.num_nodes
    valid = read_pair_array(args.valid, n)
    test = read_pair_array(args.test, n)
    held = np.concatenate([valid, test])
    valid_neg = read_pair_array(args.valid_neg, n) if args.valid_neg else \
        sample_negatives(g, len(valid), rng, exclude=held)
    test_neg = read_pair_array(args.test_neg, n) if args.test_neg else \
        sample_negatives(g, len(test), rng, exclude=np.concatenate([held, valid_neg]))
    ds = SplitDataset(g.edges.copy(), valid, test, valid_neg, test_neg, n)
    ds.check_disjoint()
    return ds


def _report_table(rows):
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value:.6f}" for name, value in rows) + "\n"


def cmd_train(args, argv):
    timings = {}
    g = read_edge_list(args.train)
    features = read_features(args.features, g.num_nodes) if args.features else None
    use_gcn = args.mode == "gcn"
    cfg = _model_config(args, use_gcn)
    frozen = ("gcn", "embedding", "predictor") if (args.pretrained_gcn and args.freeze_gcn) else ()
    tcfg = _train_config(args, frozen)
    ds = _load_split(args, g, np.random.default_rng([args.seed, 1]))

    t0 = time.perf_counter()
    adj = g.binary_adjacency() if cfg.binarize else g.adjacency
    series = cached_power_series(adj, cfg.hops, cfg.beta, cfg.tau, args.cache_dir)
    ctx = make_context(g, cfg, features, series)
    timings["precompute_powers"] = time.perf_counter() - t0

    init = init_params(cfg, g.num_nodes, None if features is None else features.shape[1], args.seed)
    if args.pretrained_gcn:
        if not use_gcn:
            raise UsageError("--pretrained-gcn needs --mode gcn")
        pre, _ = load_checkpoint(args.pretrained_gcn)
        for name in init.tensors:
            if name.startswith(("gcn.", "predictor.")) or name == "embedding":
                if name not in pre.tensors or pre.tensors[name].shape != init.tensors[name].shape:
                    raise DataError(f"pretrained checkpoint lacks a matching tensor {name}", args.pretrained_gcn)
                init.tensors[name] = pre.tensors[name].copy()

    t0 = time.perf_counter()
    params, history = train(g, features, ds, tcfg, init, context=ctx)
    timings["train"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    s_pos = predict(params, ctx, ds.test_pos)
    s_neg = predict(params, ctx, ds.test_neg)
    rows = []
    for m in ("auc", "mrr", "hits@20", "hits@50", "hits@100"):
        rows.append((f"test_{m}", evaluate(s_pos, s_neg, m)))
    rows.append(("valid_best", history.best_metric))
    rows.append(("alpha", params.alpha))
    timings["eval"] = time.perf_counter() - t0

    out = Path(args.out)
    files = {
        "checkpoint": out / "checkpoint.npz",
        "metrics": out / "metrics.txt",
        "scores_test": out / "scores_test.txt",
        "train_log": out / "train_log.txt",
    }
    save_checkpoint(files["checkpoint"], params, {"best_epoch": history.best_epoch, "seed": args.seed})
    atomic_write_text(files["metrics"], "".join(f"{k}={v!r}\n" for k, v in rows))
    atomic_write_text(files["scores_test"], format_scores(np.concatenate([ds.test_pos, ds.test_neg]),
                                                          np.concatenate([s_pos, s_neg])))
    atomic_write_text(files["train_log"], "epoch loss valid_metric\n" + "".join(
        f"{e} {l!r} {m!r}\n" for e, l, m in history.epochs))
    inputs = {"train": args.train, "valid": args.valid, "test": args.test, "valid_neg": args.valid_neg,
              "test_neg": args.test_neg, "features": args.features, "pretrained_gcn": args.pretrained_gcn}
    atomic_write_text(out / "manifest.json", _manifest(args, argv, inputs, timings, files))
    sys.stdout.write(_report_table(rows))
    return 0


def cmd_fit_heuristic(args, argv):
    g = read_edge_list(args.graph)
    cfg = _model_config(args, use_gcn=False)
    tcfg = _train_config(args)
    series = cached_power_series(g.binary_adjacency() if cfg.binarize else g.adjacency,
                                 cfg.hops, cfg.beta, cfg.tau, args.cache_dir)
    ctx = make_context(g, cfg, None, series)
    init = init_params(cfg, g.num_nodes, None, args.seed)
    t0 = time.perf_counter()
    params, losses = fit_heuristic(g, args.kind, init, tcfg, context=ctx)
    elapsed = time.perf_counter() - t0
    if args.test_pairs:
        held = read_pair_array(args.test_pairs, g.num_nodes)
    else:
        held = sample_negatives(g, args.num_test_pairs, np.random.default_rng([args.seed, 2]))
    fitted = structural_scores(params, ctx, held)
    target = H.score_all_pairs(g, args.kind, held)
    rho = spearman(fitted, target)
    out = Path(args.out)
    files = {"checkpoint": out / "checkpoint.npz", "metrics": out / "metrics.txt",
             "scores": out / "fitted_scores.txt"}
    save_checkpoint(files["checkpoint"], params, {"fit_kind": H.HeuristicKind.parse(args.kind).value})
    atomic_write_text(files["metrics"], f"spearman={rho!r}\nfinal_mse={losses[-1] if losses else float('nan')!r}\n")
    atomic_write_text(files["scores"], "u v fitted heuristic\n" + "".join(
        f"{u} {v} {a!r} {b!r}\n" for (u, v), a, b in zip(held.tolist(), fitted.tolist(), target.tolist())))
    atomic_write_text(out / "manifest.json", _manifest(args, argv, {"graph": args.graph, "test_pairs": args.test_pairs},
                                                       {"fit": elapsed}, files))
    print(f"spearman={rho:.6f}")
    return 0


def cmd_eval(args, argv):
    scores = read_scores(args.scores)
    pos = read_pair_array(args.pos)
    neg = read_pair_array(args.neg)

    def lookup(pairs, path):
        out = np.empty(len(pairs))
        for i, (u, v) in enumerate(pairs.tolist()):
            if (u, v) not in scores:
                raise DataError(f"no score for pair ({u}, {v}) listed in {path}", args.scores)
            out[i] = scores[(u, v)]
        return out

    s_pos, s_neg = lookup(pos, args.pos), lookup(neg, args.neg)
    rows, lines = [], []
    for m in [x.strip() for x in args.metrics.split(",") if x.strip()]:
        kind, k = parse_metric(m)
        value = evaluate(s_pos, s_neg, m)
        rows.append((m, value))
        lines += EvalReport(m, value, k=k, num_pos=len(pos), num_neg=len(neg)).as_lines()
    text = _report_table(rows) + "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return 0


def cmd_analyze_corr(args, argv):
    g = read_edge_list(args.graph)
    rho = adjacency_correlation(g, args.k)
    print(f"corr(A, A')={rho!r} k={args.k} nodes={g.num_nodes} edges={g.num_edges}")
    return 0


COMMANDS = {
    "split": cmd_split,
    "heuristic": cmd_heuristic,
    "train": cmd_train,
    "fit-heuristic": cmd_fit_heuristic,
    "eval": cmd_eval,
    "analyze-corr": cmd_analyze_corr,
}


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    except (UsageError, argparse.ArgumentTypeError) as exc:
        print(f"neognn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"neognn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"neognn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"neognn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, UndefinedMetricError) as exc:
        print(f"neognn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"neognn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
