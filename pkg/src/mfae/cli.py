"""Command-line front end: ``mfae split | train | eval | render | analyze | table``.

Exit codes: 0 success, 2 usage, 3 parse error, 4 numerical divergence,
5 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .dropout_analysis import gap_report_csv, random_instance, surrogate_gap_report
from .evaluation import EmptyEvaluation, EvalReport, csv_row, evaluate, render_adjacency
from .graph import (
    EdgeListParseError,
    SplitResult,
    format_edge_list,
    parse_edge_list,
    read_edge_list,
    split_train_test,
)
from .models import load_params, save_params, score_matrix
from .presets import DEFAULT_K, PRESETS, TRAINABLE, baseline_scorer, fit_preset, get_preset, \
    model_scorer, preset_config
from .training import ConfigError, TrainingDiverged

log = logging.getLogger("mfae")

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4, 5


class UsageError(Exception):
    pass


def _write(path: Path, data: str | bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(path, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(data)


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def manifest_path_for(train_path: Path) -> Path:
    return train_path.with_name("manifest.json")


def load_split(train_path, test_path, manifest=None) -> SplitResult:
    """Read a train/test pair written by ``mfae split``.

    The manifest's node list fixes the dense labelling so both graphs share
    it, including nodes isolated in the training graph. Without a manifest
    the labels are taken in first-appearance order over train then test.
    """
    train_path, test_path = Path(train_path), Path(test_path)
    manifest = Path(manifest) if manifest else manifest_path_for(train_path)
    seed = 0
    if manifest.exists():
        meta = json.loads(manifest.read_text())
        id_map = {int(lab): k for k, lab in enumerate(meta["nodes"])}
        seed = int(meta.get("seed", 0))
    else:
        joint = parse_edge_list(train_path.read_bytes() + b"\n" + test_path.read_bytes())
        id_map = joint.id_map
    return SplitResult(read_edge_list(train_path, id_map), read_edge_list(test_path, id_map), seed)


def cmd_split(args) -> int:
    g = read_edge_list(args.input)
    split = split_train_test(g, args.fraction, args.seed)
    out = Path(args.out)
    header = f"split of {Path(args.input).name}: fraction={args.fraction} seed={args.seed}"
    _write(out / "train.txt", format_edge_list(split.train, header + " (train)"))
    _write(out / "test.txt", format_edge_list(split.test, header + " (test)"))
    manifest = {
        "source": Path(args.input).name, "fraction": args.fraction, "seed": args.seed,
        "num_nodes": g.num_nodes, "total_edges": g.num_edges,
        "train_edges": split.train.num_edges, "test_edges": split.test.num_edges,
        "nodes": list(g.labels),
    }
    _write(out / "manifest.json", _dump_json(manifest))
    print(_dump_json({k: v for k, v in manifest.items() if k != "nodes"}), end="")
    return EXIT_OK


def _config_defaults(args) -> dict:
    if not getattr(args, "config", None):
        return {}
    with open(args.config, encoding="utf-8") as fh:
        return json.load(fh)


def _train_cfg(args, preset: str, file_cfg: dict):
    flag_map = {
        "learning_rate": args.lr, "max_epochs": args.epochs, "keep_prob_hidden": args.keep_hidden,
        "keep_prob_input": args.keep_input, "neg_samples_per_node": args.neg_per_node,
        "eta": args.eta, "weight_decay": args.weight_decay, "seed": args.seed, "rho": args.rho,
    }
    train_keys = {"learning_rate", "max_epochs", "keep_prob_hidden", "keep_prob_input",
                  "neg_samples_per_node", "neg_ratio", "eta", "weight_decay", "seed",
                  "convergence_tol", "convergence_window", "rho"}
    merged = {k: v for k, v in file_cfg.items() if k in train_keys}
    merged.update({k: v for k, v in flag_map.items() if v is not None})
    return preset_config(preset, **merged)


def cmd_train(args) -> int:
    file_cfg = _config_defaults(args)
    preset = args.preset or file_cfg.get("preset")
    if preset is None:
        raise UsageError("--preset is required")
    pr = get_preset(preset)
    if not pr.trainable:
        raise UsageError(f"baseline has no training phase: {preset}")
    if args.seed is None and "seed" in file_cfg:
        args.seed = file_cfg["seed"]
    train_path = args.train or file_cfg.get("train")
    if train_path is None:
        raise UsageError("--train is required")
    test_path = args.test or file_cfg.get("test")
    if test_path:
        g_train = load_split(train_path, test_path).train
    else:
        manifest = manifest_path_for(Path(train_path))
        id_map = None
        if manifest.exists():
            id_map = {int(l): k for k, l in enumerate(json.loads(manifest.read_text())["nodes"])}
        g_train = read_edge_list(train_path, id_map)
    cfg = _train_cfg(args, preset, file_cfg)
    k = args.k_latent or file_cfg.get("k_latent") or DEFAULT_K
    tied = args.tied if args.tied is not None else file_cfg.get("tied")
    out = Path(args.out or file_cfg.get("out") or ".")
    try:
        params, report = fit_preset(preset, g_train, cfg, k=k, tied=tied, progress=True)
    except TrainingDiverged as exc:
        _write(out / "divergence.json", _dump_json(exc.diagnostic()))
        print(_dump_json(exc.diagnostic()), file=sys.stderr, end="")
        return EXIT_DIVERGED
    out.mkdir(parents=True, exist_ok=True)
    save_params(out / "model.ckpt", params)
    doc = {
        "preset": preset, "k_latent": k, "tied": params.tied, "num_nodes": params.N,
        "config": cfg.to_dict(), "report": report.to_dict(include_timing=False),
    }
    _write(out / "train_report.json", _dump_json(doc))
    _write(out / "timing.json", _dump_json({"wall_time": report.wall_time}))
    log.info("trained %s in %.1fs (%d epochs)", preset, report.wall_time, report.epochs_run)
    print(_dump_json(doc), end="")
    return EXIT_OK


def _append_csv(path: Path, row: str) -> None:
    new = not path.exists() or path.stat().st_size == 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8", newline="") as fh:
        if new:
            fh.write("dataset,model,prec@10,auc,nodes_evaluated,seed\n")
        fh.write(row)


def _scorer_for(args, split: SplitResult):
    if args.checkpoint:
        params = load_params(args.checkpoint)
        if params.N != split.train.num_nodes:
            raise ConfigError(f"checkpoint has N={params.N} but the split has "
                              f"{split.train.num_nodes} nodes")
        return model_scorer(params, split.train), args.model or "checkpoint"
    if args.preset in ("AA", "RW"):
        return baseline_scorer(args.preset, split.train, restart=args.restart), args.preset
    raise UsageError("eval needs --checkpoint or --preset AA|RW")


def cmd_eval(args) -> int:
    split = load_split(args.train, args.test)
    scorer, model = _scorer_for(args, split)
    report = evaluate(scorer, split, k=args.k)
    seed = args.seed if args.seed is not None else split.seed
    report.meta = {"dataset": args.dataset or Path(args.train).parent.name, "model": model,
                   "seed": seed}
    text = report.to_json()
    if args.out:
        _write(Path(args.out), text)
    if args.csv:
        _append_csv(Path(args.csv), csv_row(report, report.meta["dataset"], model, seed))
    print(text, end="")
    return EXIT_OK


def cmd_render(args) -> int:
    if args.checkpoint:
        params = load_params(args.checkpoint)
        g = read_edge_list(args.train, _split_id_map(args.train))
        if g.num_nodes != params.N:
            raise ConfigError(f"checkpoint has N={params.N} but the graph has {g.num_nodes} nodes")
        scores = score_matrix(params, g)
    elif args.graph:
        scores = read_edge_list(args.graph, _split_id_map(args.graph)).dense_adjacency()
    else:
        raise UsageError("render needs --checkpoint with --train, or --graph")
    _write(Path(args.out), render_adjacency(scores, args.threshold, args.stride))
    return EXIT_OK


def _split_id_map(path):
    manifest = manifest_path_for(Path(path))
    if manifest.exists():
        return {int(l): k for k, l in enumerate(json.loads(manifest.read_text())["nodes"])}
    return None


def cmd_analyze(args) -> int:
    case = args.case.upper()
    scales = [float(s) for s in args.scales.split(",")]
    if case == "MF":
        params, A = random_instance("MF", args.seed, args.nodes, k=args.k_latent or 3)
    else:
        params, A = random_instance("AE_INPUT", args.seed, args.nodes, max_degree=args.max_degree)
    rows = surrogate_gap_report(case, params, A, scales)
    text = gap_report_csv(rows)
    if args.out:
        _write(Path(args.out), text)
    print(text, end="")
    return EXIT_OK


def cmd_table(args) -> int:
    """Split once, fit every trainable preset, evaluate all presets, append CSV rows."""
    g = read_edge_list(args.input)
    split = split_train_test(g, args.fraction, args.seed)
    dataset = args.dataset or Path(args.input).stem
    out = Path(args.out)
    rows = []
    for name in args.presets.split(","):
        pr = get_preset(name)
        if pr.trainable:
            cfg = preset_config(name, learning_rate=args.lr, max_epochs=args.epochs, seed=args.seed)
            params, _ = fit_preset(name, split.train, cfg, k=args.k_latent or DEFAULT_K,
                                   tied=args.tied)
            scorer = model_scorer(params, split.train)
        else:
            scorer = baseline_scorer(name, split.train)
        report = evaluate(scorer, split, k=args.k)
        rows.append(csv_row(report, dataset, name, args.seed))
        log.info("%s auc=%.4f prec@%d=%.4f", name, report.auc, args.k, report.prec_at_k)
    for row in rows:
        _append_csv(out, row)
    print("".join(rows), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfae", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("split", help="random edge split into train/test edge lists")
    s.add_argument("--input", required=True)
    s.add_argument("--fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="train a model preset")
    t.add_argument("--config", help="JSON file with ExperimentConfig keys")
    t.add_argument("--train")
    t.add_argument("--test")
    t.add_argument("--preset", choices=list(PRESETS))
    t.add_argument("--k-latent", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--keep-hidden", type=float)
    t.add_argument("--keep-input", type=float)
    t.add_argument("--neg-per-node", type=int)
    t.add_argument("--eta", help="'auto' or a number")
    t.add_argument("--weight-decay", type=float)
    t.add_argument("--rho", type=float)
    tie = t.add_mutually_exclusive_group()
    tie.add_argument("--tied", dest="tied", action="store_true", default=None)
    tie.add_argument("--untied", dest="tied", action="store_false")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="output directory")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint or a baseline on a split")
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--checkpoint")
    e.add_argument("--preset", choices=["AA", "RW"])
    e.add_argument("--model", help="model name written to the CSV row")
    e.add_argument("--dataset")
    e.add_argument("--restart", type=float, default=0.5)
    e.add_argument("--k", type=int, default=10)
    e.add_argument("--seed", type=int)
    e.add_argument("--out", help="JSON report path")
    e.add_argument("--csv", help="CSV file to append a metrics row to")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="PGM image of thresholded predictions or a graph")
    r.add_argument("--checkpoint")
    r.add_argument("--train")
    r.add_argument("--graph")
    r.add_argument("--threshold", type=float, default=0.5)
    r.add_argument("--stride", type=int, default=5)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    a = sub.add_parser("analyze", help="exact vs second-order dropout objective gaps")
    a.add_argument("--case", choices=["MF", "AE_INPUT"], default="MF")
    a.add_argument("--nodes", type=int, default=4)
    a.add_argument("--k-latent", type=int, default=3)
    a.add_argument("--max-degree", type=int)
    a.add_argument("--scales", default="1,0.5,0.25,0.125")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out")
    a.set_defaults(func=cmd_analyze)

    tb = sub.add_parser("table", help="split, fit and evaluate several presets on one dataset")
    tb.add_argument("--input", required=True)
    tb.add_argument("--presets", default=",".join(["MF+AE", "AEd", "AE2", "MFd", "MF2", "RW", "AA"]))
    tb.add_argument("--fraction", type=float, default=0.1)
    tb.add_argument("--k-latent", type=int)
    tb.add_argument("--epochs", type=int)
    tb.add_argument("--lr", type=float)
    tb.add_argument("--tied", dest="tied", action="store_true", default=None)
    tb.add_argument("--untied", dest="tied", action="store_false")
    tb.add_argument("--k", type=int, default=10)
    tb.add_argument("--seed", type=int, default=0)
    tb.add_argument("--dataset")
    tb.add_argument("--out", required=True, help="CSV file to append rows to")
    tb.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mfae: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EdgeListParseError, json.JSONDecodeError) as exc:
        print(f"mfae: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TrainingDiverged as exc:
        print(f"mfae: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"mfae: I/O error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, KeyError, ValueError, EmptyEvaluation) as exc:
        print(f"mfae: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
