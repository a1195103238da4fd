"""Command-line interface: one subcommand per workflow stage, files in between.

Exit codes: 0 on success, 2 on invalid input or configuration, 1 on any
other error. Every output is JSON except the plain-text evaluation tables.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .data import DataError, load_topology, save_topology
from .features import FeatureMatrix
from .khbn import KhbnModel
from .khbn.model import fingerprint
from .logtpl import TemplateTree
from .pipeline import (
    LogModel,
    PipelineCache,
    PipelineConfig,
    Toggles,
    featurize,
    fit_embeddings,
    fit_patterns,
    fit_templates,
    kpi_reports,
    load_corpus,
    predict,
    split_matrix,
    train_model,
)
from .tsdetect import AnomalyReport

logger = logging.getLogger("rcakit")


class UsageError(ValueError):
    """Invalid input or configuration; maps to exit code 2."""


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def _read_json(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{p}: no such file")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: malformed JSON ({exc})") from exc


def load_config(args) -> PipelineConfig:
    """Config file (if any) with ``--seed`` applied on top."""
    cfg = PipelineConfig()
    if args.config:
        try:
            cfg = PipelineConfig.from_dict(_read_json(args.config))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{args.config}: {exc}") from exc
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _need_dir(path) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise UsageError(f"{p}: no such directory")
    return p


def _load_matrix(path) -> FeatureMatrix:
    try:
        return FeatureMatrix.from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed feature matrix ({exc})") from exc


def _load_model(path) -> KhbnModel:
    try:
        return KhbnModel.from_dict(_read_json(path))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed model ({exc})") from exc


def _check_model_features(model: KhbnModel, m: FeatureMatrix) -> None:
    missing = [f for f in model.feature_ids if f not in set(m.feature_ids)]
    if missing:
        raise UsageError(
            f"model features do not match the feature matrix (model {fingerprint(model.feature_ids)}, "
            f"matrix {fingerprint(m.feature_ids)}; {len(missing)} model feature(s) absent, e.g. {missing[0]!r})"
        )


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: PipelineConfig) -> None:
    from .synth import BENCHMARK_SIZES, generate, platform_spec

    platforms = sorted(BENCHMARK_SIZES) if args.platform == "all" else [args.platform]
    for pid in platforms:
        if pid not in BENCHMARK_SIZES:
            raise UsageError(f"unknown platform {pid!r}; choose from {', '.join(sorted(BENCHMARK_SIZES))}")
        n_normal, n_faults = BENCHMARK_SIZES[pid]
        corpus = generate(platform_spec(pid, cfg.seed), max(1, int(round(n_normal * args.scale))), n_faults)
        corpus.write(args.out / pid)
        logger.info("%s: %d windows, %d log lines", pid, len(corpus.windows), len(corpus.logs))


def cmd_detect(args, cfg: PipelineConfig) -> None:
    corpus = load_corpus(_need_dir(args.corpus))
    reports = kpi_reports(corpus.series, corpus.windows, cfg.detection)
    _write_json(args.out / "reports.json", [r.to_dict() for r in reports])


def cmd_templates(args, cfg: PipelineConfig) -> None:
    corpus = load_corpus(_need_dir(args.corpus))
    tree, _ = fit_templates([r.message for r in corpus.logs], cfg.max_leaves)
    _write_json(args.out / "templates.json", tree.to_dict())


def cmd_cluster(args, cfg: PipelineConfig) -> None:
    tree = TemplateTree.from_dict(_read_json(args.templates))
    tree.freeze()
    table = fit_embeddings(tree, cfg)
    patterns = fit_patterns(tree, table, cfg)
    model = LogModel(tree, table, patterns, [])
    _write_json(args.out / "log_model.json", model.to_dict())
    _write_json(args.out / "patterns.json", {"theta": patterns.theta, "patterns": patterns.to_dict()["patterns"]})


def cmd_featurize(args, cfg: PipelineConfig) -> None:
    corpus = load_corpus(_need_dir(args.corpus))
    log_model = LogModel.from_dict(_read_json(args.log_model))
    log_model.tree.freeze()
    reports = None
    if args.reports:
        reports = [AnomalyReport.from_dict(d) for d in _read_json(args.reports)]
    m, topo = featurize(corpus, cfg, Toggles(), PipelineCache(), log_model, reports)
    _write_json(args.out / "matrix.json", m.to_dict())
    save_topology(topo, args.out / "topology.json")


def cmd_train(args, cfg: PipelineConfig) -> None:
    m = _load_matrix(args.matrix)
    topo = load_topology(args.topology)
    tr, _ = split_matrix(m, cfg.train_fraction, cfg.seed)
    model, _ = train_model(tr, topo, cfg)
    _write_json(args.out / "model.json", model.to_dict())


def cmd_infer(args, cfg: PipelineConfig) -> None:
    model = _load_model(args.model)
    m = _load_matrix(args.matrix)
    _check_model_features(model, m)
    if args.window is not None:
        rows = [i for i, w in enumerate(m.windows) if w.start == args.window]
        if not rows:
            raise UsageError(f"no window starts at {args.window}")
    else:
        rows = [i for i, w in enumerate(m.windows) if w.polarity == "negative"]
    sub = m.rows(rows).restrict(model.feature_ids)
    floor = cfg.confidence_floor if args.config else model.confidence_floor
    out = []
    for w, d in zip(sub.windows, model.infer_matrix(sub, floor)):
        out.append({"window": [w.start, w.end], "diagnosis": d.to_dict()})
    _write_json(args.out / "diagnoses.json", out)


def cmd_eval(args, cfg: PipelineConfig) -> None:
    from .eval import evaluate, format_table

    model = _load_model(args.model)
    m = _load_matrix(args.matrix)
    _check_model_features(model, m)
    _, te = split_matrix(m, cfg.train_fraction, cfg.seed)
    diags = predict(model, te)
    if not diags:
        raise UsageError("the test split has no negative samples")
    report = evaluate([(d.top_type, w.label[1]) for w, d in diags])
    _write_json(args.out / "eval.json", report.to_dict())
    (args.out / "eval.txt").write_text(format_table({"model": {"report": report, "nodes": model.node_count}}), encoding="utf-8")


def cmd_ablate(args, cfg: PipelineConfig) -> None:
    from .eval import format_table, run_ablation

    corpus = load_corpus(_need_dir(args.corpus))
    rows = run_ablation(corpus, cfg)
    for name, r in rows.items():
        logger.info("%s: %.2f s", name, r["seconds"])
    table = {name: {"report": r["report"], "nodes": r["nodes"]} for name, r in rows.items()}
    _write_json(args.out / "ablation.json", {name: {"report": r["report"].to_dict(), "nodes": r["nodes"]} for name, r in table.items()})
    (args.out / "ablation.txt").write_text(format_table(table), encoding="utf-8")


def cmd_transfer(args, cfg: PipelineConfig) -> None:
    from .eval import transfer_experiment

    root = _need_dir(args.corpora)
    corpora = {p.name: load_corpus(p) for p in sorted(root.iterdir()) if p.is_dir()}
    if args.target not in corpora:
        raise UsageError(f"target platform {args.target!r} not found under {root}")
    if len(corpora) < 2:
        raise UsageError("pooling needs at least two platform directories")
    shared = [s for s in args.shared.split(",") if s]
    res = transfer_experiment(corpora, args.target, shared, cfg)
    doc = {}
    for name, r in res.items():
        doc[name] = {
            "shared": r["report"].to_dict() if r["report"] else None,
            "overall": r["overall"].to_dict(),
            "train_negatives": r["train_negatives"],
        }
    _write_json(args.out / "transfer.json", doc)


COMMANDS = {
    "synth": (cmd_synth, "generate a benchmark corpus"),
    "detect": (cmd_detect, "anomaly reports for every window"),
    "templates": (cmd_templates, "fit the log template tree"),
    "cluster": (cmd_cluster, "embed templates and cluster them into patterns"),
    "featurize": (cmd_featurize, "binary feature matrix over every window"),
    "train": (cmd_train, "train the diagnosis network on the training split"),
    "infer": (cmd_infer, "diagnose fault windows"),
    "eval": (cmd_eval, "evaluate a model on the test split"),
    "ablate": (cmd_ablate, "ablation table for one platform"),
    "transfer": (cmd_transfer, "pooled training of shared modules across platforms"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcakit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file with every tunable")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=True, type=Path, help="output directory")
        if name == "synth":
            p.add_argument("--platform", default="all", help="platform id or 'all'")
            p.add_argument("--scale", type=float, default=1.0, help="fraction of normal windows to generate")
        if name in ("detect", "templates", "featurize", "ablate"):
            p.add_argument("--corpus", required=True, help="directory with metrics.jsonl, logs.txt, topology.json, windows.json")
        if name == "cluster":
            p.add_argument("--templates", required=True, help="templates.json from the templates command")
        if name == "featurize":
            p.add_argument("--log-model", required=True, help="log_model.json from the cluster command")
            p.add_argument("--reports", help="reports.json from the detect command (recomputed if absent)")
        if name == "train":
            p.add_argument("--topology", required=True, help="topology.json from the featurize command")
        if name in ("train", "infer", "eval"):
            p.add_argument("--matrix", required=True, help="matrix.json from the featurize command")
        if name in ("infer", "eval"):
            p.add_argument("--model", required=True, help="model.json from the train command")
        if name == "infer":
            p.add_argument("--window", type=int, help="start timestamp of one window (default: every fault window)")
        if name == "transfer":
            p.add_argument("--corpora", required=True, help="directory with one corpus subdirectory per platform")
            p.add_argument("--target", required=True, help="platform to evaluate")
            p.add_argument("--shared", default="host,network", help="comma-separated shared module ids")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "scale", 1.0) <= 0 or getattr(args, "scale", 1.0) > 1:
            raise UsageError("--scale must lie in (0, 1]")
        cfg = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](args, cfg)
    except (UsageError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # model/feature mismatches and precondition failures from the library
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report, do not dump a traceback
        logger.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
