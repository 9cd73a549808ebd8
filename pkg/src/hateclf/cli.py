"""Command-line entry point: prep, split, train, eval, report, convert-weights.

Every command reads an optional JSON run config; flags given on the command
line override it.  Failures print ``{"code": ..., "message": ...}`` to stderr
and exit with status 1.  Usage errors exit with argparse's status 2.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import torch

from . import __version__
from .corpus import (
    DAVIDSON_COLUMNS,
    SCHEMES,
    SPLITS,
    WASEEM_COLUMNS,
    ColumnConfig,
    Corpus,
    SplitSpec,
    TweetRecord,
    class_counts,
    compare_to_published_splits,
    format_distribution,
    load_davidson,
    load_waseem,
    merge_corpora,
    read_manifest,
    stratified_split,
    synthetic_corpus,
    write_manifest,
)
from .encoder import EncoderConfig, build_mini, build_vocab
from .encoder.model import default_dtype
from .encoder.pretrained import convert_state_dict, load_pretrained
from .errors import InvalidConfig, IoFailure, MalformedRow, PipelineError, SchemeMismatch
from .eval_report import MetricsReport, confusion, error_table, metrics, render_report
from .heads import KINDS, ClassificationHead, HeadConfig, predict
from .reference import PUBLISHED_SCORES
from .text_prep import NormalizerConfig, normalize
from .trainer import (
    Classifier,
    TrainConfig,
    encode_corpus,
    load_checkpoint,
    predict_probs,
    save_checkpoint,
    train,
    write_jsonl,
)

log = logging.getLogger("hateclf")

DEFAULT_CONFIG: dict[str, Any] = {
    "dataset": "waseem",
    "paths": {"data": [], "weights": None, "vocab": None},
    "columns": {},
    "normalizer": {},
    "backend": "mini",
    "encoder": {},
    "head": {"kind": "linear"},
    "train": {},
    "split": {"seed": 0, "ratios": [0.8, 0.1, 0.1]},
    "out": "run",
}


# ---------------------------------------------------------------- config


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_config(args: argparse.Namespace) -> dict:
    """JSON config over defaults, then command-line flags over both."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if getattr(args, "config", None):
        try:
            user = json.loads(Path(args.config).read_text())
        except OSError as e:
            raise IoFailure(f"cannot read config {args.config}: {e}") from e
        except json.JSONDecodeError as e:
            raise InvalidConfig(f"{args.config}: invalid JSON: {e}") from e
        cfg = _deep_merge(cfg, user)
    if getattr(args, "dataset", None):
        cfg["dataset"] = args.dataset
    if getattr(args, "backend", None):
        cfg["backend"] = args.backend
    if getattr(args, "head", None):
        cfg["head"]["kind"] = args.head
    if getattr(args, "seed", None) is not None:
        cfg["split"]["seed"] = args.seed
        cfg["train"]["seed"] = args.seed
        cfg["head"]["seed"] = args.seed
    if getattr(args, "freeze_encoder", False):
        cfg["train"]["freeze_encoder"] = True
    if getattr(args, "out", None):
        cfg["out"] = args.out
    if getattr(args, "data", None):
        cfg["paths"]["data"] = list(args.data)
    return cfg


def validate_config(cfg: dict, need_data: bool = True) -> None:
    if cfg["dataset"] not in SCHEMES:
        raise InvalidConfig(f"dataset must be one of {sorted(SCHEMES)}, got {cfg['dataset']!r}")
    if cfg["backend"] not in ("mini", "pretrained"):
        raise InvalidConfig(f"backend must be mini or pretrained, got {cfg['backend']!r}")
    if cfg["head"].get("kind") not in KINDS:
        raise InvalidConfig(f"head kind must be one of {KINDS}, got {cfg['head'].get('kind')!r}")
    n_classes = cfg["head"].get("num_classes", len(SCHEMES[cfg["dataset"]].classes))
    if n_classes != len(SCHEMES[cfg["dataset"]].classes):
        raise InvalidConfig(f"head num_classes {n_classes} does not match scheme {cfg['dataset']}")
    data = _data_entries(cfg)
    if need_data and not data:
        raise InvalidConfig("no input data: set paths.data in the config or pass --data")
    for entry in data:
        if not Path(entry["path"]).is_file():
            raise IoFailure(f"data file not found: {entry['path']}")
    if cfg["backend"] == "pretrained":
        for key in ("weights", "vocab"):
            p = cfg["paths"].get(key)
            if not p or not Path(p).exists():
                raise InvalidConfig(f"pretrained backend needs paths.{key} (got {p!r})")
    # construct once so bad values fail before any compute
    TrainConfig.from_dict(cfg["train"])
    SplitSpec(tuple(cfg["split"].get("ratios", (0.8, 0.1, 0.1))), int(cfg["split"].get("seed", 0)))
    NormalizerConfig.from_dict(cfg["normalizer"])


def _data_entries(cfg: dict) -> list[dict]:
    entries = []
    for item in cfg["paths"].get("data") or []:
        entries.append({"path": item} if isinstance(item, str) else dict(item))
    return entries


def _write_config(cfg: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- data


def load_dataset(cfg: dict) -> Corpus:
    """Load (and for Waseem, merge in order) every configured data file."""
    name = cfg["dataset"]
    entries = _data_entries(cfg)
    if name == "davidson":
        cols = ColumnConfig.from_dict(cfg["columns"], **asdict(DAVIDSON_COLUMNS))
        corpora = [load_davidson(e["path"], cols) for e in entries]
    else:
        cols = ColumnConfig.from_dict(cfg["columns"], **asdict(WASEEM_COLUMNS))
        corpora = [load_waseem(e["path"], e.get("variant", "hovy16"), cols) for e in entries]
    corpus = corpora[0]
    for other in corpora[1:]:
        corpus = merge_corpora(corpus, other)
    return corpus.normalized(NormalizerConfig.from_dict(cfg["normalizer"]))


def _split_from_manifest(corpus: Corpus, rows) -> dict[str, Corpus]:
    index = corpus.by_id()
    ids: dict[str, list[str]] = {s: [] for s in SPLITS}
    for rid, split, label in rows:
        if label not in corpus.scheme.classes:
            raise SchemeMismatch(f"manifest label {label!r} is not in scheme {corpus.scheme.name}")
        if rid not in index:
            raise MalformedRow(f"manifest id {rid!r} not found in the data")
        if split not in ids:
            raise MalformedRow(f"manifest split {split!r} unknown")
        ids[split].append(rid)
    return {s: corpus.subset(v) for s, v in ids.items()}


def make_splits(cfg: dict, corpus: Corpus) -> dict[str, Corpus]:
    spec = SplitSpec(tuple(cfg["split"].get("ratios", (0.8, 0.1, 0.1))), int(cfg["split"].get("seed", 0)))
    return dict(zip(SPLITS, stratified_split(corpus, spec)))


def _write_split_manifests(splits: dict[str, Corpus], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, c in splits.items():
        write_manifest(out / f"{name}.csv", {name: c})


# ---------------------------------------------------------------- commands


def cmd_prep(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    norm = NormalizerConfig.from_dict(cfg["normalizer"])
    text_col = args.text_col or cfg["columns"].get("text_col", "text")
    src = sys.stdin if args.input in (None, "-") else None
    try:
        fh_in = src or open(args.input, newline="", encoding="utf-8")
    except OSError as e:
        raise IoFailure(f"cannot read {args.input}: {e}") from e
    with fh_in:
        reader = csv.reader(fh_in)
        header = next(reader, None)
        if header is None:
            raise MalformedRow(f"{args.input or '-'}: no header row")
        if text_col not in header:
            raise MalformedRow(f"{args.input or '-'}: missing text column {text_col!r} (header: {header})")
        col = header.index(text_col)
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise MalformedRow(
                    f"{args.input or '-'}: row {reader.line_num} has {len(row)} columns, expected {len(header)}"
                )
            row[col] = normalize(row[col], norm).text
            rows.append(row)

    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)

    if args.output in (None, "-"):
        emit(sys.stdout)
    else:
        try:
            with open(args.output, "w", newline="", encoding="utf-8") as fh:
                emit(fh)
        except OSError as e:
            raise IoFailure(f"cannot write {args.output}: {e}") from e
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    if args.ratios:
        cfg["split"]["ratios"] = list(args.ratios)
    if args.counts:
        validate_config(cfg, need_data=False)
        corpus = synthetic_corpus(SCHEMES[cfg["dataset"]], args.counts)
    else:
        validate_config(cfg)
        corpus = load_dataset(cfg)
    splits = make_splits(cfg, corpus)
    out = Path(cfg["out"])
    _write_split_manifests(splits, out)
    _write_config(cfg, out)
    counts = {s: class_counts(c) for s, c in splits.items()}
    print(format_distribution(corpus.scheme, counts))
    if args.compare:
        for check in compare_to_published_splits(corpus.scheme, counts):
            if check.status != "match":
                print(f"{check.status}: {check.split}/{check.label} got {check.got}, published {check.expected}")
    return 0


def _build_backend(cfg: dict, train_texts: Sequence[str]):
    dtype = default_dtype()
    if cfg["backend"] == "pretrained":
        encoder, vocab = load_pretrained(cfg["paths"]["weights"], cfg["paths"]["vocab"], dtype=dtype)
        return encoder, vocab
    vocab = build_vocab(train_texts, max_size=int(cfg["encoder"].get("vocab_max_size", 2000)))
    enc_cfg = EncoderConfig.from_dict({"seed": cfg["train"].get("seed", 0), **cfg["encoder"], "vocab_size": len(vocab)})
    return build_mini(enc_cfg, dtype), vocab


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    validate_config(cfg)
    out = Path(cfg["out"])
    corpus = load_dataset(cfg)
    if args.manifests:
        rows = [r for s in SPLITS for r in read_manifest(Path(args.manifests) / f"{s}.csv")]
        splits = _split_from_manifest(corpus, rows)
    else:
        splits = make_splits(cfg, corpus)
    encoder, vocab = _build_backend(cfg, [r.normalized_text for r in splits["train"].records])
    enc_cfg = encoder.config
    head_cfg = HeadConfig.from_dict({
        **cfg["head"],
        "num_classes": len(corpus.scheme.classes),
        "hidden": enc_cfg.hidden_size,
        "num_layers": enc_cfg.num_layers,
    })
    dtype = next(encoder.parameters()).dtype
    head = ClassificationHead(head_cfg, dtype=dtype)
    train_cfg = TrainConfig.from_dict(cfg["train"])

    _write_config(cfg, out)
    _write_split_manifests(splits, out)
    log_path = out / "log.jsonl"
    log_path.write_text("")

    def on_epoch(rec):
        write_jsonl(log_path, {"event": "epoch", "epoch": rec.epoch, "train_loss": rec.train_loss,
                               "val_loss": rec.val_loss, "val_f1": rec.val_f1, "seconds": rec.seconds})

    ckpt, history = train(encoder, head, splits["train"], splits["validation"], vocab, train_cfg, on_epoch)
    save_checkpoint(out / "checkpoint", ckpt)
    history.write_csv(out / "history.csv")
    write_jsonl(log_path, {"event": "done", "epochs": len(history), "checkpoint": str(out / "checkpoint")})
    print(f"trained {head_cfg.kind} head for {len(history)} epochs; checkpoint at {out / 'checkpoint'}")
    return 0


def _write_predictions(path: Path, corpus: Corpus, preds, probs) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "gold", "predicted"] + [f"p_{c}" for c in corpus.scheme.classes] + ["text"])
        for r, p, pr in zip(corpus.records, preds, probs):
            w.writerow([r.id, corpus.label_name(r), corpus.scheme.classes[int(p)]]
                       + [repr(float(x)) for x in pr] + [r.raw_text])


def _emit_bundle(corpus: Corpus, preds, probs, out: Path, limit: Optional[int]) -> MetricsReport:
    golds = [r.label for r in corpus.records]
    report = metrics(preds, golds, corpus.scheme)
    cm = confusion(preds, golds, corpus.scheme)
    errors = error_table(corpus, preds, probs, limit)
    render_report(report, cm, errors, out)
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_config(args)
    validate_config(cfg)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.scheme != cfg["dataset"]:
        raise SchemeMismatch(f"checkpoint was trained on {ckpt.scheme}, data is {cfg['dataset']}")
    scheme = SCHEMES[ckpt.scheme]
    rows = read_manifest(args.manifest)
    bad = sorted({label for _, _, label in rows} - set(scheme.classes))
    if bad:
        raise SchemeMismatch(f"manifest labels {bad} are not in checkpoint scheme {ckpt.scheme} {scheme.classes}")
    corpus = load_dataset(cfg)
    wanted = [rid for rid, split, _ in rows if args.split == "all" or split == args.split]
    index = corpus.by_id()
    missing = [rid for rid in wanted if rid not in index]
    if missing:
        raise MalformedRow(f"{len(missing)} manifest ids not found in the data, e.g. {missing[:3]}")
    test = corpus.subset(wanted)

    encoder, head, vocab = ckpt.build()
    model = Classifier(encoder, head)
    ids, mask, _ = encode_corpus(test, vocab, ckpt.train_config.max_len)
    probs = predict_probs(model, ids, mask).numpy()
    preds = predict(probs) if len(probs) else np.zeros(0, dtype=np.int64)

    out = Path(cfg["out"])
    _write_config(cfg, out)
    _write_predictions(out / "predictions.csv", test, preds, probs)
    report = _emit_bundle(test, preds, probs, out, args.limit_errors)
    print(f"weighted P {report.weighted_precision:.4f}  R {report.weighted_recall:.4f}  "
          f"F1 {report.weighted_f1:.4f}  accuracy {report.accuracy:.4f}  (n={len(test)})")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    """Re-render the bundle from a predictions.csv and compare to the published table."""
    cfg = resolve_config(args)
    src = Path(args.predictions)
    try:
        with open(src, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise IoFailure(f"cannot read {src}: {e}") from e
    scheme = SCHEMES[cfg["dataset"]]
    bad = sorted({r["gold"] for r in rows} | {r["predicted"] for r in rows})
    bad = [b for b in bad if b not in scheme.classes]
    if bad:
        raise SchemeMismatch(f"labels {bad} are not in scheme {scheme.name}")
    corpus = Corpus(scheme, tuple(
        TweetRecord(id=r["id"], raw_text=r.get("text", ""), label=scheme.index(r["gold"])) for r in rows
    ))
    preds = np.array([scheme.index(r["predicted"]) for r in rows], dtype=np.int64)
    probs = np.array([[float(r[f"p_{c}"]) for c in scheme.classes] for r in rows]).reshape(len(rows), -1)
    out = Path(cfg["out"])
    report = _emit_bundle(corpus, preds, probs, out, args.limit_errors)
    def pct(v):
        return f"{v:>8.1f}" if v is not None else f"{'-':>8}"

    print(f"{'method':<20}{'P%':>8}{'R%':>8}{'F1%':>8}")
    for (method, dataset), (p, r, f) in PUBLISHED_SCORES.items():
        if dataset == scheme.name:
            print(f"{method:<20}{pct(p)}{pct(r)}{pct(f)}")
    mine = (report.weighted_precision, report.weighted_recall, report.weighted_f1)
    print(f"{'this run':<20}" + "".join(pct(100 * v) for v in mine))
    return 0


def cmd_convert_weights(args: argparse.Namespace) -> int:
    try:
        state = torch.load(args.source, map_location="cpu", weights_only=True)
    except (OSError, RuntimeError) as e:
        raise IoFailure(f"cannot read {args.source}: {e}") from e
    if isinstance(state, dict) and "state_dict" in state:
        state = state["state_dict"]
    convert_state_dict(state, args.out)
    print(f"wrote archive to {args.out}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--dataset", choices=sorted(SCHEMES))
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--data", action="append", help="data CSV (repeatable; overrides paths.data)")
    common.add_argument("-v", "--verbose", action="store_true")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--backend", choices=["mini", "pretrained"])
    model.add_argument("--head", choices=list(KINDS))
    model.add_argument("--freeze-encoder", action="store_true")

    errors = argparse.ArgumentParser(add_help=False)
    errors.add_argument("--limit-errors", type=int, default=None, metavar="N")

    p = argparse.ArgumentParser(prog="hateclf", description="Hate-speech classification pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("prep", parents=[common], help="normalize the text column of a CSV")
    sp.add_argument("input", nargs="?", help="input CSV (default or '-': stdin)")
    sp.add_argument("output", nargs="?", help="output CSV (default or '-': stdout)")
    sp.add_argument("--text-col")
    sp.set_defaults(func=cmd_prep)

    sp = sub.add_parser("split", parents=[common], help="stratified train/validation/test manifests")
    sp.add_argument("--ratios", type=float, nargs=3, metavar=("TRAIN", "VAL", "TEST"))
    sp.add_argument("--counts", type=int, nargs="+", metavar="N",
                    help="split labelled dummies with these per-class totals instead of data")
    sp.add_argument("--compare", action="store_true", help="list cells that differ from the published table")
    sp.set_defaults(func=cmd_split)

    sp = sub.add_parser("train", parents=[common, model], help="fine-tune encoder + head")
    sp.add_argument("--manifests", help="directory with train/validation/test.csv from `split`")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", parents=[common, errors], help="score a checkpoint on a manifest")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", default="test", choices=list(SPLITS) + ["all"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", parents=[common, errors], help="re-render a report from predictions.csv")
    sp.add_argument("predictions")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("convert-weights", help="torch state dict → named-tensor archive")
    sp.add_argument("source")
    sp.add_argument("out")
    sp.set_defaults(func=cmd_convert_weights)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except PipelineError as e:
        print(json.dumps(e.to_dict()), file=sys.stderr)
        return 1
    except ValueError as e:
        print(json.dumps({"code": "invalid_input", "message": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
