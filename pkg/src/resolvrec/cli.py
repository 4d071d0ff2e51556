"""Command-line interface: ``resolvrec <subcommand>``.

Exit codes: 0 success, 1 domain error, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

import numpy as np

from .config import AppConfig, load_config
from .corpus import CleanPolicy, TicketRecord, clean, load_csv, write_csv
from .errors import ResolvRecError

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (overridden by $RESOLV_REC_CONFIG)")
    p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="resolvrec", description="Ticket resolution recommender.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load and clean a ticket CSV")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", help="write the cleaned corpus as CSV")
    p.add_argument("--require-resolution", action="store_true")

    p = sub.add_parser("cluster", help="synthesize resolution ids by clustering resolution text")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("kmeans", "gmm"))
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k-sweep", action="store_true", help="report silhouette for k in [2, 20]")
    p.add_argument("--out", help="write the labelled corpus as CSV")

    p = sub.add_parser("train", help="train a model bundle")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True, help="bundle path (.rrb)")
    p.add_argument("--seed", type=int, help="master seed")

    p = sub.add_parser("evaluate", help="evaluate a bundle on a labelled CSV")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)

    p = sub.add_parser("predict", help="recommend resolutions for one ticket")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--incident-id")
    p.add_argument("--threshold", type=float)
    p.add_argument("--top-n", type=int)
    p.add_argument("--fallback-k", type=int)

    p = sub.add_parser("similar", help="nearest training tickets by cosine similarity")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--k", type=int)

    p = sub.add_parser("drift", help="topic drift of recent tickets against the training baseline")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--threshold", type=float)

    p = sub.add_parser("export-metrics", help="write the dashboard feed JSON")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--input", help="labelled CSV to evaluate; default: the bundle's stored holdout evaluation")
    p.add_argument("--out", required=True)
    p.add_argument("--timestamp", help="fixed generated_at value (reproducible output)")

    p = sub.add_parser("serve", help="run the HTTP API")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--log", help="prediction log path (JSON Lines)")
    return parser


# ---- rendering --------------------------------------------------------------


def _emit(args, payload: Any, lines: Sequence[str]) -> None:
    if args.json:
        json.dump(payload, sys.stdout, ensure_ascii=False, sort_keys=True)
        sys.stdout.write("\n")
    else:
        for line in lines:
            print(line)


def _table(rows: Sequence[Sequence[Any]], header: Sequence[str]) -> list[str]:
    cells = [[str(h) for h in header]] + [[f"{c:.4f}" if isinstance(c, float) else str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    out = [fmt.format(*cells[0]), fmt.format(*("-" * w for w in widths))]
    return out + [fmt.format(*r) for r in cells[1:]]


# ---- commands ---------------------------------------------------------------


def _config(args) -> AppConfig:
    return load_config(args.config)


def cmd_ingest(args) -> int:
    cfg = _config(args)
    corpus = load_csv(args.input, cfg.corpus.csv_format())
    cleaned, report = clean(corpus, CleanPolicy(require_resolution=args.require_resolution))
    if args.out:
        write_csv(cleaned, args.out, cfg.corpus.csv_format())
    payload = {
        "n_in": report.n_in,
        "n_out": report.n_out,
        "dropped": dict(report.dropped),
        "label_space": list(cleaned.label_space) if cleaned.label_space else None,
        "n_dated": sum(1 for r in cleaned if r.submit_date is not None),
        "output": args.out,
    }
    lines = [f"records in: {report.n_in}", f"records kept: {report.n_out}"]
    lines += [f"dropped ({k}): {v}" for k, v in sorted(report.dropped.items())]
    lines.append(f"labels: {len(cleaned.label_space or ())}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_cluster(args) -> int:
    from .cluster import ResolutionClusterer, assign_resolution_ids, k_sweep, silhouette

    cfg = _config(args).override("cluster", method=args.method, k=args.k, seed=args.seed)
    c = cfg.cluster
    corpus, _ = clean(load_csv(args.input, cfg.corpus.csv_format()), CleanPolicy(require_resolution=True))
    seed = cfg.seed("cluster")
    if args.k_sweep:
        clusterer = ResolutionClusterer("kmeans", 2, seed, cfg.text.min_df, cfg.text.max_df_ratio,
                                        (1, cfg.text.ngram_max), cfg.text.mode)
        X = clusterer.vectorize([r.resolution_text for r in corpus])
        sweep = k_sweep(X, range(2, 21), seed)
        _emit(args, {"sweep": sweep}, _table([(s["k"], s["silhouette"], s["inertia"]) for s in sweep],
                                             ("k", "silhouette", "inertia")))
        return EXIT_OK
    labeling, clusterer = assign_resolution_ids(corpus, c.method, c.k, seed, cfg.text.min_df, cfg.text.max_df_ratio,
                                                return_clusterer=True, n_init=c.n_init, features=c.features,
                                                ngram_range=(1, cfg.text.ngram_max))
    assigned = np.array(clusterer.labels_)
    sil = silhouette(clusterer.features_, assigned) if len(set(clusterer.labels_)) > 1 else None
    if args.out:
        write_csv(corpus.with_labels(labeling.assignment), args.out, cfg.corpus.csv_format())
    payload = {"method": c.method, "k": c.k, "seed": seed, "sizes": dict(labeling.sizes), "silhouette": sil,
               "output": args.out}
    lines = _table([(l, n) for l, n in sorted(labeling.sizes.items())], ("label", "size"))
    lines.append(f"silhouette: {sil:.4f}" if sil is not None else "silhouette: undefined")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_train(args) -> int:
    from .engine import save_bundle, train_pipeline

    cfg = _config(args).override("train", seed=args.seed)
    corpus = load_csv(args.input, cfg.corpus.csv_format())
    bundle = train_pipeline(corpus, cfg, progress=(lambda s: print(f"[{s}]", file=sys.stderr)) if not args.json else None)
    save_bundle(bundle, args.out)
    s = bundle.summary
    holdout = s.get("holdout")
    payload = {
        "bundle_path": args.out,
        "bundle_version": bundle.bundle_version,
        "n_train": s["n_train"],
        "n_test": s["n_test"],
        "label_space": list(bundle.label_space),
        "synthetic_labels": bundle.labeling is not None,
        "oof_accuracy": s["oof_accuracy"],
        "holdout": {k: holdout[k] for k in ("accuracy", "macro_precision", "macro_recall", "macro_f1",
                                            "base_accuracy", "n_evaluated")} if holdout else None,
    }
    lines = [f"bundle: {args.out} (version {bundle.bundle_version})",
             f"train/test: {s['n_train']}/{s['n_test']}  labels: {bundle.C}"
             + ("  (synthetic)" if bundle.labeling is not None else "")]
    if holdout:
        lines.append(f"holdout accuracy {holdout['accuracy']:.4f}  macro P {holdout['macro_precision']:.4f}"
                     f"  macro R {holdout['macro_recall']:.4f}")
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .engine import evaluate, load_bundle

    bundle = load_bundle(args.model)
    cfg = bundle.config if not args.config else _config(args)
    report = evaluate(bundle, load_csv(args.input, cfg.corpus.csv_format()))
    lines = _table([(s.label, s.precision, s.recall, s.f1, s.support) for s in report.per_label],
                   ("label", "precision", "recall", "f1", "support"))
    lines.append(f"accuracy {report.accuracy:.4f}  macro P {report.macro_precision:.4f}  "
                 f"macro R {report.macro_recall:.4f}  n={report.n_evaluated}")
    _emit(args, report.to_dict(), lines)
    return EXIT_OK


def cmd_predict(args) -> int:
    from .engine import load_bundle, predict

    bundle = load_bundle(args.model)
    ticket = TicketRecord(args.incident_id or "<cli>", args.text)
    result = predict(bundle, ticket, args.threshold, args.top_n, args.fallback_k)
    top_n = args.top_n or bundle.config.inference.top_n
    lines = [f"top resolution: {result.top.resolution_id}  ({result.top.probability:.4f})  {result.top.resolution_text}",
             f"confidence (top-{top_n} sum): {result.confidence:.4f}" + ("  LOW CONFIDENCE" if result.low_confidence else "")]
    lines += _table([(r.resolution_id, r.probability) for r in result.ranked[:top_n]], ("resolution_id", "probability"))
    if result.fallback:
        lines.append("similar past tickets:")
        lines += _table([(n.incident_id, n.similarity, n.resolution_text) for n in result.fallback],
                        ("incident_id", "similarity", "resolution"))
    payload = result.to_dict()
    if args.incident_id is None:
        payload["incident_id"] = None
    _emit(args, payload, lines)
    return EXIT_OK


def cmd_similar(args) -> int:
    from .engine import knn_similar, load_bundle

    bundle = load_bundle(args.model)
    neighbors = knn_similar(bundle, args.text, args.k)
    payload = {"neighbors": [{"incident_id": n.incident_id, "similarity": n.similarity,
                              "resolution_text": n.resolution_text} for n in neighbors],
               "bundle_version": bundle.bundle_version}
    _emit(args, payload, _table([(n.incident_id, n.similarity, n.resolution_text) for n in neighbors],
                                ("incident_id", "similarity", "resolution")))
    return EXIT_OK


def cmd_drift(args) -> int:
    from .engine import drift_score, load_bundle

    bundle = load_bundle(args.model)
    recent = load_csv(args.input, bundle.config.corpus.csv_format())
    report = drift_score(bundle, recent, args.threshold)
    lines = [f"js divergence: {report.js_divergence:.6f} (threshold {report.threshold})",
             f"window: {report.window_size}  baseline: {report.baseline_size}",
             f"retrain recommended: {'yes' if report.retrain_recommended else 'no'}"]
    _emit(args, report.to_dict(), lines)
    return EXIT_OK


def cmd_export_metrics(args) -> int:
    from .dashboard import export_metrics
    from .engine import evaluate, load_bundle

    bundle = load_bundle(args.model)
    if args.input:
        report = evaluate(bundle, load_csv(args.input, bundle.config.corpus.csv_format()))
    else:
        report = bundle.summary.get("holdout")
        if report is None:
            raise ResolvRecError("bundle has no stored evaluation; pass --input")
    feed = export_metrics(bundle, report, args.out, generated_at=args.timestamp)
    _emit(args, feed, [f"wrote {args.out}", f"labels: {len(feed['per_label_accuracy'])}",
                       f"accuracy: {feed['overall']['accuracy']:.4f}"])
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    cfg = _config(args)
    serve(args.model, args.host or cfg.service.host, cfg.service.port if args.port is None else args.port,
          args.log or cfg.service.log_path)
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "cluster": cmd_cluster,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "similar": cmd_similar,
    "drift": cmd_drift,
    "export-metrics": cmd_export_metrics,
    "serve": cmd_serve,
}


def cli_run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except ResolvRecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(cli_run())


if __name__ == "__main__":
    main()
