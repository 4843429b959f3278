"""Operator command line.

Five commands cover the life of a model: ``ingest`` turns a raw transaction
log into a funnel store, ``train`` fits a model and writes a checkpoint,
``evaluate`` compares it against the frequency baseline, ``predict`` decodes
one customer's next basket, and ``anomaly`` scores every funnel for
behavior breaks.

Every run resolves one configuration (YAML file, then ``--set`` overrides,
then specific flags; later wins), writes all artifacts under a run-stamped
output directory, and drops a ``config_echo.json`` there so the run can be
reproduced exactly.

Exit codes: 0 success, 2 configuration, 3 data, 4 training failure,
5 checkpoint/store incompatibility.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime
from pathlib import Path

from .anomaly import detect
from .checkpoint import load_checkpoint
from .config import (RunConfig, anomaly_config, load_run_config, model_config,
                     schema_config, train_run_config)
from .data import assemble_funnels, build_vocab, parse_transactions, split_train_validation
from .embeddings import load_warm
from .errors import (CompatibilityError, ConfigError, DataError, FunnelLensError,
                     TrainingError)
from .evaluation import evaluate_model, evaluate_predictor, frequency_baseline, tte_evaluate
from .model import ModelParams, funnel_state, init_params, nsd_decode_greedy, predict_days
from .store import load_dataset, save_dataset
from .training import train

logger = logging.getLogger(__name__)

EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    TrainingError: 4,
    CompatibilityError: 5,
}


def _resolve_out_dir(config: RunConfig, command: str) -> Path:
    if config.out_dir:
        out = Path(config.out_dir)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        out = Path(config.runs_root) / f"{command}-{stamp}-seed{config.seed}"
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(config: RunConfig, command: str, out: Path) -> None:
    payload = {"command": command, "out_dir": str(out)}
    payload.update(config.echo())
    with open(out / "config_echo.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"config echo -> {out / 'config_echo.json'}")


def _require(value, dotted: str, hint: str):
    if not value:
        raise ConfigError(f"'{dotted}' is required {hint}")
    return value


def _load_store(config: RunConfig):
    path = _require(config.data.store, "data.store", "(point it at an ingested funnel store)")
    return load_dataset(path)


def _load_model(config: RunConfig, vocab, funnels) -> ModelParams:
    path = _require(config.checkpoint, "checkpoint", "(point it at a trained model file)")
    params, _ = load_checkpoint(path)
    if params.config.vocab_size != len(vocab):
        raise CompatibilityError(
            f"checkpoint was trained over a vocabulary of {params.config.vocab_size}, "
            f"store holds {len(vocab)}"
        )
    if params.config.user_count < len(funnels):
        raise CompatibilityError(
            f"checkpoint has {params.config.user_count} user rows, store holds "
            f"{len(funnels)} customers"
        )
    return params


def cmd_ingest(config: RunConfig, out: Path) -> int:
    raw = _require(config.data.input, "data.input", "(the raw transaction log to ingest)")
    records, stats = parse_transactions(raw, schema_config(config))
    vocab = build_vocab(records)
    funnels = assemble_funnels(records, vocab)
    store_path = out / "funnels.lensdata"
    save_dataset(store_path, vocab, funnels)
    summary = {
        "input": str(raw),
        "rows_read": stats.n_rows,
        "records": stats.n_records,
        "malformed_rows": stats.n_malformed,
        "funnels": len(funnels),
        "sessions": sum(len(f.sessions) for f in funnels),
        "vocab_size": len(vocab),
        "store": str(store_path),
    }
    from .reporting import write_json

    write_json(out / "ingest_summary.json", summary)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return 0


def _item_table(config: RunConfig, vocab, item_dim: int):
    scenario = config.train.scenario
    if scenario == "cold":
        return None
    path = _require(config.model.item_embeddings, "model.item_embeddings",
                    f"for the '{scenario}' scenario")
    return load_warm(path, vocab, item_dim, fine_tune=(scenario == "warm"), seed=config.seed)


def cmd_train(config: RunConfig, out: Path) -> int:
    vocab, funnels = _load_store(config)
    train_funnels, pairs = split_train_validation(
        funnels, holdout_fraction=config.data.holdout_fraction,
        seed=config.seed, min_sessions=config.data.min_sessions,
    )
    mcfg = model_config(config, vocab_size=len(vocab), user_count=len(funnels))
    table = _item_table(config, vocab, mcfg.item_dim)
    params = init_params(mcfg, seed=config.seed, item_table=table)
    run = train_run_config(config)
    checkpoint_path = out / "model.ckpt"
    report = train(run, params, train_funnels, validation=pairs,
                   checkpoint_path=str(checkpoint_path))

    from .reporting import save_loss_curve, training_summary, write_json

    write_json(out / "train_report.json", training_summary(report))
    save_loss_curve(report, out / "loss_curve.png")
    print(f"trained {report.epochs_run} epochs over {report.n_slices} slices "
          f"from {report.n_funnels} funnels ({report.wall_seconds:.1f}s)"
          + (" [stopped early]" if report.stopped_early else ""))
    print(f"final train loss {report.epoch_losses[-1]:.6f}"
          + (f", validation loss {report.validation_losses[-1]:.6f}"
             if report.validation_losses else ""))
    print(f"checkpoint -> {checkpoint_path}")
    return 0


def cmd_evaluate(config: RunConfig, out: Path) -> int:
    vocab, funnels = _load_store(config)
    params = _load_model(config, vocab, funnels)
    train_funnels, pairs = split_train_validation(
        funnels, holdout_fraction=config.data.holdout_fraction,
        seed=config.seed, min_sessions=config.data.min_sessions,
    )
    k = config.evaluate.k_max
    label = config.model.preset or "lens-model"
    model_report = evaluate_model(params, pairs, k_max=k, label=label)
    baseline_report = evaluate_predictor(
        frequency_baseline(train_funnels, k=k), pairs, k_max=k, label="frequency-baseline")
    tte_report = tte_evaluate(params, pairs)

    from .reporting import (evaluation_table, save_metric_bars, tte_summary,
                            write_json, write_text)

    table = evaluation_table([model_report, baseline_report])
    print(table)
    print(f"time-to-event: MAE {tte_report.mae_days:.3f} days over {tte_report.n_evaluated} customers")
    write_text(out / "metrics.txt", table)
    write_json(out / "metrics.json", {
        "next_basket": [model_report.table_row(), baseline_report.table_row()],
        "k_max": k,
        "n_evaluated": model_report.n_evaluated,
        "n_skipped": model_report.n_skipped,
        "time_to_event": tte_summary(tte_report),
    })
    save_metric_bars([model_report, baseline_report], out / "metric_bars.png")
    return 0


def cmd_predict(config: RunConfig, out: Path, client_id: str, n_items: int | None) -> int:
    vocab, funnels = _load_store(config)
    params = _load_model(config, vocab, funnels)
    funnel = next((f for f in funnels if f.client_id == client_id), None)
    if funnel is None:
        raise DataError(f"unknown client '{client_id}'")
    state = funnel_state(params, funnel)
    items = nsd_decode_greedy(params, state, k_max=n_items)
    days = float(predict_days(params, state).data[0])

    names = [vocab.item_at(i) for i in items]
    print(f"client {client_id}: {len(funnel.sessions)} sessions on record")
    print("predicted next basket:")
    if names:
        for name in names:
            print(f"  {name}")
    else:
        print("  (empty: the decoder stopped immediately)")
    print(f"estimated days to next purchase: {days:.2f}")

    from .reporting import write_json

    write_json(out / "prediction.json", {
        "client_id": client_id,
        "predicted_items": names,
        "estimated_days_to_next": days,
    })
    return 0


def cmd_anomaly(config: RunConfig, out: Path) -> int:
    vocab, funnels = _load_store(config)
    params = _load_model(config, vocab, funnels)
    report = detect(params, funnels, anomaly_config(config))

    from .reporting import anomaly_csv, save_score_histogram, write_json, write_text

    write_text(out / "anomaly.csv", anomaly_csv(report))
    flagged = [v for v in report.verdicts if v.flagged]
    write_json(out / "anomaly_summary.json", {
        "n_scored": len(report.verdicts),
        "n_excluded": report.n_excluded,
        "n_clusters": report.n_clusters,
        "cluster_sizes": report.cluster_sizes,
        "silhouette": report.silhouette,
        "threshold": report.threshold,
        "n_flagged": len(flagged),
        "flagged_clients": [v.client_id for v in flagged],
    })
    save_score_histogram(report, out / "anomaly_scores.png")
    print(f"scored {len(report.verdicts)} funnels in {report.n_clusters} clusters "
          f"({report.n_excluded} too short); {len(flagged)} flagged at threshold {report.threshold}")
    for v in flagged:
        print(f"  {v.client_id}: score {v.score:.2f}, distance {v.distance:.3f}, cluster {v.cluster}")
    print(f"verdicts -> {out / 'anomaly.csv'}")
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        dest="overrides", help="override one config entry, e.g. train.epochs=5")
    parser.add_argument("--seed", type=int, help="master seed for the whole run")
    parser.add_argument("--out", help="output directory (default: stamped under the runs root)")
    parser.add_argument("--workers", type=int, help="worker count (reserved, currently sequential)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="funnellens",
        description="Purchase-funnel modeling: next-basket prediction, "
                    "time-to-event regression, and behavior-break detection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a raw transaction log into a funnel store")
    p.add_argument("--input", help="raw delimited transaction file")
    _add_common(p)

    p = sub.add_parser("train", help="fit a model on an ingested store")
    p.add_argument("--store", help="funnel store produced by ingest")
    p.add_argument("--preset", help="model preset (lens1000, lens2000)")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a checkpoint against the frequency baseline")
    p.add_argument("--store", help="funnel store produced by ingest")
    p.add_argument("--checkpoint", help="model file produced by train")
    _add_common(p)

    p = sub.add_parser("predict", help="decode one customer's next basket")
    p.add_argument("client_id", help="customer to predict for")
    p.add_argument("--store", help="funnel store produced by ingest")
    p.add_argument("--checkpoint", help="model file produced by train")
    p.add_argument("--items", type=int, help="decode cap (default: model's own)")
    _add_common(p)

    p = sub.add_parser("anomaly", help="cluster funnels and flag behavior breaks")
    p.add_argument("--store", help="funnel store produced by ingest")
    p.add_argument("--checkpoint", help="model file produced by train")
    _add_common(p)

    return parser


def _config_from_args(args) -> RunConfig:
    pairs = []
    for entry in args.overrides:
        key, sep, value = entry.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got '{entry}'")
        pairs.append((key.strip(), value))
    config = load_run_config(args.config, overrides=pairs)

    # specific flags win over --set and the file
    if args.seed is not None:
        config.seed = args.seed
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {args.workers}")
        config.workers = args.workers
    if args.out:
        config.out_dir = args.out
    if getattr(args, "input", None):
        config.data.input = args.input
    if getattr(args, "store", None):
        config.data.store = args.store
    if getattr(args, "checkpoint", None):
        config.checkpoint = args.checkpoint
    if getattr(args, "preset", None):
        config.model.preset = args.preset
    return config


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("matplotlib").setLevel(logging.WARNING)
    args = build_parser().parse_args(argv)
    try:
        config = _config_from_args(args)
        out = _resolve_out_dir(config, args.command)
        _echo_config(config, args.command, out)
        if args.command == "ingest":
            return cmd_ingest(config, out)
        if args.command == "train":
            return cmd_train(config, out)
        if args.command == "evaluate":
            return cmd_evaluate(config, out)
        if args.command == "predict":
            return cmd_predict(config, out, args.client_id, args.items)
        if args.command == "anomaly":
            return cmd_anomaly(config, out)
        raise ConfigError(f"unknown command '{args.command}'")
    except FunnelLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES.items():
            if isinstance(exc, klass):
                return code
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
