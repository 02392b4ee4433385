"""Command-line entry point: ``mirnet {ingest,train,xval,predict}``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import evaluation as E
from . import model as M
from . import ptb, wfdb
from .errors import EmptyDataError
from .seeding import derive_seed
from .trainer import TrainConfig, fit
from .weights import WeightFileError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_EMPTY = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    epochs: int = 20
    batch_size: int = 32
    lr: float = 0.001
    out_dir: str = "."
    fold: int = 0
    folds: int = 5

    def train_config(self):
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, seed=self.seed, lr=self.lr)

    def echo(self):
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def read_config_file(path):
    """``key = value`` lines; ``#`` starts a comment. Dashes in keys are allowed."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key=value")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if key not in _FIELD_TYPES:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        try:
            values[key] = _CASTS[_FIELD_TYPES[key]](value.strip())
        except ValueError:
            raise ConfigError(f"{path}:{n}: invalid value for {key}: {value.strip()!r}") from None
    return values


def resolve_config(args):
    cfg = RunConfig()
    if args.config:
        cfg = replace(cfg, **read_config_file(args.config))
    overrides = {name: getattr(args, name) for name in _FIELD_TYPES if getattr(args, name, None) is not None}
    cfg = replace(cfg, **overrides)
    if cfg.epochs < 1 or cfg.batch_size < 1 or cfg.lr <= 0 or cfg.folds < 2:
        raise ConfigError("epochs and batch size must be >= 1, lr > 0, folds >= 2")
    if not 0 <= cfg.fold < cfg.folds:
        raise ConfigError(f"fold must lie in [0, {cfg.folds - 1}]")
    return cfg


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def cmd_ingest(args, cfg):
    result = ptb.ingest(args.index)
    ptb.write_dataset(args.output, result.segments)
    print(f"accepted records: {len(result.records)}")
    print(f"rejected records: {len(result.rejected)}")
    for reason, count in result.rejection_counts().items():
        print(f"  {reason}: {count}")
    print("subjects per class:")
    for name, count in result.subjects_per_class().items():
        print(f"  {name}: {count}")
    print(f"segments written: {len(result.segments)} -> {args.output}")


def _split_arrays(segments, cfg):
    X, y, subjects = ptb.stack_segments(segments)
    plan = ptb.make_splits(ptb.subject_classes(segments), fold_count=cfg.folds, seed=cfg.seed)[cfg.fold]
    masks = [np.isin(subjects, part) for part in (plan.train, plan.val, plan.test)]
    return X, y, masks


def cmd_train(args, cfg):
    segments = ptb.read_dataset(args.dataset)
    if not segments:
        raise EmptyDataError(f"{args.dataset} holds no segments")
    X, y, (train, val, _) = _split_arrays(segments, cfg)
    if not train.any():
        raise EmptyDataError("the training split is empty")
    params = M.init_model(derive_seed(cfg.seed, "init"))
    log = (lambda h: print(f"epoch {h['epoch']}: loss {h['train_loss']:.4f}"
                           + ("" if h["val_accuracy"] is None else f", val acc {h['val_accuracy']:.2f}%"),
                           file=sys.stderr))
    params, history = fit(params, X[train], y[train], cfg.train_config(),
                          X[val] if val.any() else None, y[val] if val.any() else None, log=log)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    M.save_weights(params, out / "weights.mirn")
    _write_json(out / "history.json", {"config": cfg.echo(), "history": history})
    print(f"wrote {out / 'weights.mirn'} and {out / 'history.json'}")


def cmd_xval(args, cfg):
    segments = ptb.read_dataset(args.dataset)
    log = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    summary, reports = E.run_cross_validation(segments, cfg.train_config(), seed=cfg.seed,
                                              fold_count=cfg.folds, log=log)
    summary.config = cfg.echo()
    E.write_reports(cfg.out_dir, summary, reports)
    print(f"mean accuracy {summary.mean_accuracy:.2f}% +/- {summary.ci95_half_width:.2f} (95% CI)")


def _load_predict_input(path):
    path = Path(path)
    if path.is_file() and path.read_bytes()[:4] == ptb.DATASET_MAGIC:
        return ptb.read_dataset(path)
    header, signal = wfdb.read_record(path)
    label = ptb.label_record(header)
    label = 0 if isinstance(label, ptb.Rejected) else int(label)
    leads = ptb.downsample_10x(ptb.select_leads(header, signal))
    record = ptb.EcgRecord(path.parent.name or header.record_name, header.record_name, leads, label)
    return ptb.segment(record)


def cmd_predict(args, cfg):
    params = M.load_weights(args.weights)
    segments = _load_predict_input(args.input)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["subject", "segment", "predicted", *(f"p_{name}" for name in M.CLASS_NAMES)])
    if not segments:
        return
    X, _, subjects = ptb.stack_segments(segments)
    probs = M.predict_proba(params, X)
    seen = {}
    for subject, row in zip(subjects, probs):
        index = seen.get(subject, 0)
        seen[subject] = index + 1
        writer.writerow([subject, index, M.CLASS_NAMES[int(np.argmax(row))], *(f"{p:.12f}" for p in row)])


def build_parser():
    parser = argparse.ArgumentParser(prog="mirnet", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--batch-size", dest="batch_size", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--out-dir", dest="out_dir")
    common.add_argument("--fold", type=int, help="split used by train (default 0)")
    common.add_argument("--folds", type=int, help="number of folds (default 5)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="WFDB records -> dataset file")
    p.add_argument("index", help="text file listing record paths, one per line")
    p.add_argument("output", help="dataset file to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", parents=[common], help="train on one subject split")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("xval", parents=[common], help="cross-validate and write reports")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_xval)

    p = sub.add_parser("predict", parents=[common], help="per-segment predictions as CSV")
    p.add_argument("weights")
    p.add_argument("input", help="dataset file or WFDB record path (without extension)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (wfdb.WfdbError, ptb.DatasetFileError, ptb.MissingLeadsError, WeightFileError, OSError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except EmptyDataError as exc:
        print(f"no data: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
