"""Command-line front end.

Subcommands: ingest, train, eval, tune-threshold, roc, user-study,
group-study. Every report path writes delimited tables (plus a JSON report
where a single record makes sense) and renders a matching PNG figure.
Reruns with identical inputs and seeds reproduce byte-identical outputs.

Exit codes: 0 success, 2 validation failure, 3 training failure, 4 I/O
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, align, analysis, evaluation, mfcc, plots
from .dataset import (
    Dataset, DatasetError, EmbeddingRecord, load_dataset, load_sequences,
    load_traits, make_split, write_dataset, write_sequences,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_TRAINING = 3
EXIT_IO = 4

SOURCE_FIELDS = (
    "record_id", "modality", "class_label", "object_id",
    "speaker_id", "split", "source_path",
)

logger = logging.getLogger(__name__)


def _out_dir(args) -> Path:
    # Environment override is the only env-var hook.
    override = os.environ.get("SPEECHGROUND_OUT_DIR")
    out = Path(override) if override else Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_header(args, seed) -> list[str]:
    echo = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return [
        f"# speechground {__version__}",
        f"# seed: {seed}",
        f"# config: {json.dumps(echo, sort_keys=True, default=str)}",
    ]


def _write_tsv(path, header_lines, columns, rows) -> None:
    lines = list(header_lines)
    lines.append("\t".join(columns))
    for row in rows:
        lines.append("\t".join(str(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _load_sources(path):
    base = Path(path).parent
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if tuple(header.split("\t")) != SOURCE_FIELDS:
            raise DatasetError(f"{path}: bad sources header {header!r}")
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != len(SOURCE_FIELDS):
                raise DatasetError(f"{path}:{lineno}: expected {len(SOURCE_FIELDS)} fields")
            row = dict(zip(SOURCE_FIELDS, parts))
            src = Path(row["source_path"])
            row["source_path"] = src if src.is_absolute() else base / src
            rows.append(row)
    return rows


def cmd_ingest(args) -> int:
    out = _out_dir(args)
    sources = _load_sources(args.sources)
    config = mfcc.MfccConfig(
        n_coeffs=args.mfcc_coeffs, n_mels=args.mfcc_mels,
        window=args.mfcc_window, hop=args.mfcc_hop,
    )
    records = []
    sequences = {}
    for row in sources:
        src = row["source_path"]
        if src.suffix == ".npy":
            vector = np.load(src)
            if vector.ndim != 1:
                raise DatasetError(f"{src}: expected a 1-D vector, got shape {vector.shape}")
        elif src.suffix == ".wav":
            if args.featurize != "mfcc":
                raise DatasetError(f"{src}: WAV sources need --featurize mfcc")
            seq = mfcc.extract_mfcc(mfcc.read_wav(src), config)
            vector = mfcc.mean_pool(seq)
            if args.write_sequences:
                sequences[row["record_id"]] = seq.frames.astype(np.float32)
        else:
            raise DatasetError(f"{src}: unsupported source type {src.suffix!r}")
        records.append(
            EmbeddingRecord(
                record_id=row["record_id"],
                modality=row["modality"],
                class_label=row["class_label"],
                object_id=row["object_id"],
                speaker_id=row["speaker_id"] or None,
                split=row["split"] or "unassigned",
                vector=np.asarray(vector, dtype=np.float32),
            )
        )
    dataset = Dataset(records)
    if args.split_ratios:
        ratios = tuple(float(x) for x in args.split_ratios.split(","))
        dataset = dataset.with_split(make_split(dataset, ratios, args.seed))
    write_dataset(dataset, out / "manifest.tsv", out / "vectors.f32")
    if sequences:
        write_sequences(out / "sequences.sgseq", sequences)
    summary = dataset.summary()
    print(json.dumps(summary, sort_keys=True, indent=2))
    return EXIT_OK


def _train_config(args) -> align.TrainConfig:
    return align.TrainConfig(
        margin=args.margin,
        epochs=args.epochs,
        base_lr=args.base_lr,
        lr_decay_epochs=args.lr_decay_epochs,
        batch_size=args.batch_size,
        triplets_per_epoch=args.triplets_per_epoch,
        seed=args.seed,
        language_arch=args.language_arch,
        hidden1=args.hidden1,
        hidden2=args.hidden2,
        projection_dim=args.projection_dim,
        lstm_hidden=args.lstm_hidden,
        lstm_tail=args.lstm_tail,
    )


def _load_data(args):
    dataset = load_dataset(args.manifest, args.vectors)
    seq_store = load_sequences(args.sequences) if getattr(args, "sequences", None) else None
    return dataset, seq_store


def _split_ids(dataset, split, modality):
    ids = [r.record_id for r in dataset.select(modality=modality, split=split)]
    if not ids:
        raise DatasetError(f"no {modality} records in split {split!r}")
    return ids


def cmd_train(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    config = _train_config(args)
    manifold, history = align.train(dataset, config, seq_store=seq_store)
    align.save_manifold(out / "manifold.sgmf", manifold)
    align.write_loss_curve(out / "loss_curve.tsv", history)
    plots.save_loss_curve(history, out / "loss_curve.png")
    print(f"trained {config.epochs} epochs; final mean loss "
          f"{history[-1].mean_loss:.6f}; artifacts in {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    manifold = align.load_manifold(args.manifold)
    report = evaluation.evaluate(
        manifold, dataset,
        test_query_ids=_split_ids(dataset, args.test_split, "language"),
        test_vision_ids=_split_ids(dataset, args.test_split, "vision"),
        val_query_ids=_split_ids(dataset, args.val_split, "language"),
        val_vision_ids=_split_ids(dataset, args.val_split, "vision"),
        repeats=args.repeats, seed=args.seed, seq_store=seq_store,
    )
    report.metadata = {
        "version": __version__,
        "manifold": str(args.manifold),
        "manifold_seed": manifold.seed,
        "test_split": args.test_split,
        "val_split": args.val_split,
    }
    _write_json(out / "report.json", report.to_dict())
    header = _report_header(args, args.seed)
    _write_tsv(out / "roc_points.tsv", header, ("fpr", "tpr"),
               [(repr(f), repr(t)) for f, t in report.roc_points])
    plots.save_roc_curve(report.roc_points, report.auc, out / "roc_curve.png")
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK


def cmd_tune_threshold(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    manifold = align.load_manifold(args.manifold)
    t_star, sweep = evaluation.tune_threshold(
        manifold, dataset,
        _split_ids(dataset, args.split, "language"),
        _split_ids(dataset, args.split, "vision"),
        seed=args.seed, seq_store=seq_store,
    )
    header = _report_header(args, args.seed)
    _write_tsv(out / "threshold_sweep.tsv", header, ("threshold", "f1"),
               [(f"{t:.2f}", repr(f)) for t, f in sweep])
    plots.save_threshold_sweep(sweep, t_star, out / "f1_vs_threshold.png")
    best_f1 = dict(sweep)[t_star]
    _write_json(out / "threshold.json", {
        "tuned_threshold": t_star, "f1": best_f1, "split": args.split,
        "seed": args.seed, "version": __version__,
    })
    print(f"tuned threshold t* = {t_star:.2f} (validation F1 {best_f1:.4f})")
    return EXIT_OK


def cmd_roc(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    manifold = align.load_manifold(args.manifold)
    points, auc = evaluation.roc_curve(
        manifold, dataset,
        _split_ids(dataset, args.split, "language"),
        _split_ids(dataset, args.split, "vision"),
        seed=args.seed, seq_store=seq_store,
    )
    header = _report_header(args, args.seed)
    _write_tsv(out / "roc_points.tsv", header, ("fpr", "tpr"),
               [(repr(f), repr(t)) for f, t in points])
    plots.save_roc_curve(points, auc, out / "roc_curve.png")
    _write_json(out / "roc.json", {"auc": auc, "split": args.split,
                                   "seed": args.seed, "version": __version__})
    print(f"AUC = {auc:.4f} over {len(points)} ROC points")
    return EXIT_OK


def cmd_user_study(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    traits = load_traits(args.traits)
    config = _train_config(args)
    results = analysis.per_user_study(dataset, traits, config,
                                      eval_repeats=args.eval_repeats,
                                      seq_store=seq_store)
    header = _report_header(args, args.seed)
    _write_tsv(
        out / "user_results.tsv", header,
        ("speaker_id", "n_train", "n_test", "triplet_mrr", "subset_mrr"),
        [(r.speaker_id, r.n_train, r.n_test, repr(r.triplet_mrr), repr(r.subset_mrr))
         for r in results],
    )
    rows = analysis.trait_correlations(results, metric=args.metric)
    _write_tsv(
        out / "trait_correlations.tsv", header, ("trait", "r", "n"),
        [(row.trait, "undefined" if row.r is None else repr(row.r), row.n)
         for row in rows],
    )
    plots.save_trait_correlations(rows, out / "trait_correlations.png",
                                  metric=args.metric)
    print(f"user study: {len(results)} eligible users; reports in {out}")
    return EXIT_OK


def cmd_group_study(args) -> int:
    out = _out_dir(args)
    dataset, seq_store = _load_data(args)
    traits = load_traits(args.traits)
    config = _train_config(args)
    results = analysis.group_study(dataset, traits, args.trait, config,
                                   eval_repeats=args.eval_repeats,
                                   seq_store=seq_store)
    header = _report_header(args, args.seed)
    header.append(f"# equal train/test counts per group: "
                  f"{results[0].n_train}/{results[0].n_test}")
    _write_tsv(
        out / "group_results.tsv", header,
        ("group", "n_train", "n_test", "triplet_mrr", "triplet_mrr_std",
         "subset_mrr", "subset_mrr_std"),
        [(r.group, r.n_train, r.n_test, repr(r.triplet_mrr), repr(r.triplet_mrr_std),
          repr(r.subset_mrr), repr(r.subset_mrr_std)) for r in results],
    )
    plots.save_group_mrr(results, args.trait, out / "group_mrr.png")
    print(f"group study over {args.trait!r}: {len(results)} groups; reports in {out}")
    return EXIT_OK


def _add_data_args(p, sequences=True):
    p.add_argument("--manifest", required=True, help="dataset manifest (TSV)")
    p.add_argument("--vectors", required=True, help="float32 vector container")
    if sequences:
        p.add_argument("--sequences", default=None,
                       help="sequential-feature sidecar (LSTM path)")


def _add_train_args(p):
    p.add_argument("--margin", type=float, default=0.4)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--base-lr", type=float, default=1e-3)
    p.add_argument("--lr-decay-epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--triplets-per-epoch", type=int, default=None)
    p.add_argument("--language-arch", choices=("mlp", "lstm"), default="mlp")
    p.add_argument("--hidden1", type=int, default=2048)
    p.add_argument("--hidden2", type=int, default=1536)
    p.add_argument("--projection-dim", type=int, default=1024)
    p.add_argument("--lstm-hidden", type=int, default=64)
    p.add_argument("--lstm-tail", type=int, default=32)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="speechground",
        description="Cross-modal manifold alignment: ingest embeddings, train, "
                    "evaluate retrieval/threshold metrics, run speaker-trait studies.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build manifest + vector container from sources")
    p.add_argument("--sources", required=True,
                   help="TSV of record metadata and .npy/.wav source paths")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--featurize", choices=("none", "mfcc"), default="none")
    p.add_argument("--write-sequences", action="store_true",
                   help="also write the MFCC sequence sidecar for the LSTM path")
    p.add_argument("--mfcc-coeffs", type=int, default=13)
    p.add_argument("--mfcc-mels", type=int, default=26)
    p.add_argument("--mfcc-window", type=float, default=0.025)
    p.add_argument("--mfcc-hop", type=float, default=0.010)
    p.add_argument("--split-ratios", default=None,
                   help="train,val,test ratios, e.g. 0.79,0.10,0.11")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a manifold on the train split")
    _add_data_args(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_train_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="full evaluation of a trained manifold")
    _add_data_args(p)
    p.add_argument("--manifold", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--test-split", default="test")
    p.add_argument("--val-split", default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("tune-threshold", help="sweep the distance threshold on a split")
    _add_data_args(p)
    p.add_argument("--manifold", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_tune_threshold)

    p = sub.add_parser("roc", help="ROC curve and AUC on a split")
    _add_data_args(p)
    p.add_argument("--manifold", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("user-study", help="per-user training + trait correlations")
    _add_data_args(p)
    p.add_argument("--traits", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-repeats", type=int, default=5)
    p.add_argument("--metric", choices=("subset", "triplet"), default="subset")
    _add_train_args(p)
    p.set_defaults(func=cmd_user_study)

    p = sub.add_parser("group-study", help="equal-size trait-group training study")
    _add_data_args(p)
    p.add_argument("--traits", required=True)
    p.add_argument("--trait", required=True, choices=sorted(analysis.GROUPINGS))
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-repeats", type=int, default=5)
    _add_train_args(p)
    p.set_defaults(func=cmd_group_study)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except align.TrainingDivergedError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (DatasetError, mfcc.AudioFormatError, analysis.GroupStudyError,
            ValueError, KeyError) as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O failed: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
