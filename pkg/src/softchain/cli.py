"""Command-line front end: gen-data, train, eval, check, decode.

Exit codes: 0 success, 1 usage error, 2 data/schema/config error,
3 differential-check failure.  All randomness flows from explicit seeds
in config files or flags; no subcommand mutates its input files.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .check import run_check
from .data import GeneratorConfig, generate_split, read_instances, write_instances
from .errors import (
    ConfigError,
    ContractViolation,
    DegenerateDistribution,
    DivergenceError,
    SchemaError,
)
from .scoring import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .training import TrainConfig, decode_labels, evaluate, predicted_boxes, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise SchemaError(f"{path}: no such file") from exc
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc


def _config_from_mapping(cls, mapping, source):
    """Build a config dataclass, rejecting unknown keys."""
    if not isinstance(mapping, dict):
        raise ConfigError(f"{source}: expected an object of config keys")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown keys {unknown}")
    return cls(**mapping)


def _cmd_gen_data(args) -> int:
    raw = _load_json(args.config)
    if not isinstance(raw, dict):
        raise ConfigError(f"{args.config}: expected a JSON object")
    counts = {"n_train": 2000, "n_val": 200, "n_test": 200}
    gen_keys = dict(raw)
    for name in counts:
        if name in gen_keys:
            counts[name] = int(gen_keys.pop(name))
    cfg = _config_from_mapping(GeneratorConfig, gen_keys, args.config)
    os.makedirs(args.out, exist_ok=True)
    for split, count in (
        ("train", counts["n_train"]),
        ("val", counts["n_val"]),
        ("test", counts["n_test"]),
    ):
        instances = generate_split(cfg, split, count)
        path = os.path.join(args.out, f"{split}.jsonl")
        write_instances(path, instances)
        print(f"wrote {count} instances to {path}")
    return EXIT_OK


def _split_train_config(raw, source):
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: expected a JSON object")
    raw = dict(raw)
    model_section = raw.pop("model_config", {})
    cfg = _config_from_mapping(TrainConfig, raw, source)
    mode = "none" if cfg.model == "non-crf" else cfg.transition_mode
    model_section = dict(model_section)
    model_section["transition_mode"] = mode
    model_cfg = _config_from_mapping(ModelConfig, model_section, source)
    return cfg, model_cfg


def _cmd_train(args) -> int:
    cfg, model_cfg = _split_train_config(_load_json(args.config), args.config)
    if args.jobs is not None:
        cfg = dataclasses.replace(cfg, jobs=args.jobs)
    train_set = read_instances(os.path.join(args.data, "train.jsonl"))
    val_path = os.path.join(args.data, "val.jsonl")
    val_set = read_instances(val_path) if os.path.exists(val_path) else []
    if train_set:
        first = train_set[0]
        model_cfg = dataclasses.replace(
            model_cfg,
            d_text=first.phrase_feats.shape[1],
            d_vis=first.region_feats.shape[1],
            d_ctx=first.context_feats.shape[1]
            if first.context_feats is not None
            else model_cfg.d_ctx,
        )
    params = init_params(model_cfg, np.random.default_rng(cfg.seed))
    report = train(train_set, cfg, params, val_instances=val_set)
    best = report.best_params if report.best_params is not None else params
    save_checkpoint(args.out, best)
    report_path = args.out + ".report.jsonl"
    with open(report_path, "w", encoding="utf-8") as fh:
        for record in report.records:
            fh.write(json.dumps(record, sort_keys=True))
            fh.write("\n")
    if report.best_val_accuracy is not None:
        print(
            f"best snapshot: iteration {report.best_iteration}, "
            f"val accuracy {report.best_val_accuracy:.4f}"
        )
    print(f"wrote checkpoint to {args.out} and report to {report_path}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    instances = read_instances(args.data)
    params = load_checkpoint(args.ckpt)
    acc = evaluate(
        instances, params, decoder=args.decoder, regress=not args.no_regress
    )
    print(f"{acc:.4f}")
    return EXIT_OK


def _cmd_decode(args) -> int:
    instances = read_instances(args.data)
    params = load_checkpoint(args.ckpt)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for inst in instances:
            labels, cache = decode_labels(inst, params, args.decoder)
            boxes = predicted_boxes(
                inst, params, labels, cache=cache, regress=not args.no_regress
            )
            for t in range(inst.T):
                record = {
                    "id": inst.id,
                    "phrase": t,
                    "label": int(labels[t]),
                    "box": [float(v) for v in boxes[t]],
                }
                out.write(json.dumps(record))
                out.write("\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _cmd_check(args) -> int:
    report = run_check(
        trials=args.trials, max_t=args.max_t, max_k=args.max_k, seed=args.seed
    )
    for name in sorted(report.worst):
        print(f"{name}: worst relative error {report.worst[name]:.3e}")
    if report.ok:
        print(f"all {report.trials} trials within tolerance")
        return EXIT_OK
    for failure in report.failures:
        print(f"FAIL {failure}", file=sys.stderr)
    return EXIT_CHECK


def build_parser() -> _Parser:
    parser = _Parser(prog="softchain")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="emit train/val/test instance files")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model, write report + checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="print grounding accuracy of a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--decoder", choices=("viterbi", "smoothing"), default="viterbi")
    p.add_argument("--no-regress", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("check", help="differential test: DP vs oracle vs FD")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--max-t", type=int, default=5)
    p.add_argument("--max-k", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("decode", help="emit per-phrase predicted boxes")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--decoder", choices=("viterbi", "smoothing"), default="viterbi")
    p.add_argument("--no-regress", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_decode)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        SchemaError,
        ConfigError,
        ContractViolation,
        DegenerateDistribution,
        DivergenceError,
        FileNotFoundError,
        TypeError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())
