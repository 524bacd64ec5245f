"""Command-line entry point: ``actdst <command> [flags]``."""

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .corpus import CorpusError, example_to_record, load_dialogues, make_examples
from .evaluation import (
    ablation_from_checkpoints,
    ablation_run,
    check_ablation_pair,
    export_attention,
    joint_goal_accuracy,
    predict_examples,
    slot_goal_accuracy,
    write_metrics,
    write_predictions,
)
from .multiwoz import convert_multiwoz
from .ontology import OntologyError, load_ontology, ontology_from_dict
from .training import ConfigError, RunConfig, TrainingDiverged, composite_gradient_check, load_config, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_MISSING_FILE = 3
EXIT_CONFIG = 4
EXIT_DATA = 5
EXIT_CHECKPOINT = 6
EXIT_DIVERGED = 7
EXIT_CHECK_FAILED = 8

CACHE_ENV = "ACTDST_CACHE"
GRADCHECK_TOLERANCE = 1e-4

logger = logging.getLogger("actdst")


class JsonLinesFormatter(logging.Formatter):
    def format(self, record):
        payload = getattr(record, "record", None) or {"message": record.getMessage()}
        return json.dumps({"level": record.levelname, "logger": record.name, **payload})


def _setup_logging(verbose):
    package = logging.getLogger("actdst")
    package.setLevel(logging.INFO if verbose else logging.WARNING)
    if not any(getattr(h, "_actdst_stderr", False) for h in package.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler._actdst_stderr = True
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        package.addHandler(handler)
    for h in package.handlers:
        if getattr(h, "_actdst_stderr", False):
            h.setLevel(logging.INFO if verbose else logging.ERROR)


def _attach_warning_log(path):
    handler = logging.FileHandler(path, mode="w", encoding="utf-8")
    handler.setLevel(logging.WARNING)
    handler.setFormatter(JsonLinesFormatter())
    logging.getLogger("actdst").addHandler(handler)
    return handler


def _out_dir(args, default):
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    if args.config is None:
        raise ConfigError("--config is required")
    return load_config(
        args.config,
        seed=getattr(args, "seed", None),
        slot_policy=getattr(args, "policy", None),
        ontology=getattr(args, "ontology", None),
        act_attention=False if getattr(args, "no_act_attention", False) else None,
    )


def _ontology_for(config):
    if not config.ontology:
        raise ConfigError("no ontology: pass --ontology or set 'ontology' in the config")
    return load_ontology(config.ontology, config.slot_policy)


def _split_path(data, config):
    if data in ("train", "dev", "test"):
        path = getattr(config, data)
        if not path:
            raise ConfigError(f"split {data!r} has no path in the run config")
        return path
    return data


def cmd_convert(args):
    splits = convert_multiwoz(args.data)
    out = _out_dir(args, "data")
    for name, records in splits.items():
        (out / f"{name}.json").write_text(json.dumps(records, indent=1), encoding="utf-8")
        print(f"{name}: {len(records)} dialogues -> {out / (name + '.json')}")


def cmd_prepare(args):
    config = _config(args)
    ontology = _ontology_for(config)
    out = _out_dir(args, os.environ.get(CACHE_ENV, "cache"))
    for split in ("train", "dev", "test"):
        path = args.data if (args.data and split == "train") else getattr(config, split)
        if not path:
            continue
        dialogues = load_dialogues(path, ontology, config.strip_act_domain)
        examples = make_examples(dialogues, ontology, config.context_cap, config.span_choice)
        target = out / f"{split}.examples.jsonl"
        with open(target, "w", encoding="utf-8") as fh:
            for ex in examples:
                fh.write(json.dumps(example_to_record(ex)) + "\n")
        print(f"{split}: {len(examples)} turn examples -> {target}")


def cmd_train(args):
    config = _config(args)
    ontology = _ontology_for(config)
    out = _out_dir(args, "run")
    train_path = args.data or config.train
    if not train_path:
        raise ConfigError("no training data: pass --data or set 'train' in the config")
    handler = _attach_warning_log(out / "warnings.jsonl")
    try:
        train_dialogues = load_dialogues(train_path, ontology, config.strip_act_domain)
        dev_dialogues = load_dialogues(config.dev, ontology, config.strip_act_domain) if config.dev else None
        result = train(config, train_dialogues, ontology, dev_dialogues, log_path=out / "metrics.jsonl")
    finally:
        logging.getLogger("actdst").removeHandler(handler)
        handler.close()
    path = save_checkpoint(result.checkpoint, out / "checkpoint.pt")
    print(json.dumps({"checkpoint": str(path), "epoch": result.checkpoint.epoch, **result.checkpoint.metrics}))


def _load_for_eval(args):
    ckpt = load_checkpoint(args.checkpoint)
    if args.ontology:
        config = RunConfig.from_dict(ckpt.config)
        ontology = load_ontology(args.ontology, config.slot_policy)
    else:
        ontology = ontology_from_dict(ckpt.ontology)
    ckpt.check_ontology(ontology)
    return ckpt, ontology


def _predict(args):
    ckpt, ontology = _load_for_eval(args)
    config = RunConfig.from_dict(ckpt.config)
    path = _split_path(args.data, config)
    dialogues = load_dialogues(path, ontology, config.strip_act_domain)
    examples = make_examples(dialogues, ontology, config.context_cap, config.span_choice)
    model = ckpt.build_model(ontology)
    predictions = predict_examples(model, examples, max_len=config.max_len)
    return examples, predictions


def cmd_evaluate(args):
    examples, predictions = _predict(args)
    golds = [ex.gold_state for ex in examples]
    metrics = {
        "joint": joint_goal_accuracy(predictions, golds) if golds else 0.0,
        "slot": slot_goal_accuracy(predictions, golds) if golds else 0.0,
        "n_turns": len(examples),
    }
    out = _out_dir(args, "eval")
    write_metrics(out / "metrics.json", metrics)
    write_predictions(out / "predictions.jsonl", examples, predictions)
    print(json.dumps(metrics))


def cmd_predict(args):
    examples, predictions = _predict(args)
    target = Path(args.out or "predictions.jsonl")
    target.parent.mkdir(parents=True, exist_ok=True)
    write_predictions(target, examples, predictions)
    print(f"{len(examples)} turns -> {target}")


def cmd_ablate(args):
    out = _out_dir(args, "ablation")
    if args.checkpoint:
        if not args.ablated_checkpoint:
            raise ConfigError("--checkpoint needs --ablated-checkpoint")
        ckpt_with = load_checkpoint(args.checkpoint)
        ontology = ontology_from_dict(ckpt_with.ontology)
        ckpt_without = load_checkpoint(args.ablated_checkpoint, ontology)
        config = RunConfig.from_dict(ckpt_with.config)
        dev = load_dialogues(_split_path(args.data or "dev", config), ontology, config.strip_act_domain)
        report = ablation_from_checkpoints(ckpt_with, ckpt_without, dev, ontology)
    else:
        config_with = _config(args)
        if args.ablated_config:
            config_without = load_config(
                args.ablated_config, seed=args.seed, slot_policy=args.policy, ontology=args.ontology
            )
        else:
            config_without = dataclasses.replace(config_with, act_attention=False)
        try:
            check_ablation_pair(config_with, config_without)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        ontology = _ontology_for(config_with)
        train_dialogues = load_dialogues(config_with.train, ontology, config_with.strip_act_domain)
        dev = load_dialogues(_split_path(args.data or "dev", config_with), ontology, config_with.strip_act_domain)
        report = ablation_run(config_with, config_without, train_dialogues, dev, ontology)
    write_metrics(out / "ablation.json", report.to_dict())
    (out / "ablation.txt").write_text(report.table() + "\n", encoding="utf-8")
    print(report.table())


def cmd_export_attention(args):
    ckpt, ontology = _load_for_eval(args)
    model = ckpt.build_model(ontology)
    acts = [a.strip() for a in args.acts.split(",") if a.strip()]
    target = Path(args.out or "act_attention.csv")
    target.parent.mkdir(parents=True, exist_ok=True)
    try:
        export = export_attention(model, acts, args.context, csv_path=target, image_path=args.image)
    except KeyError as exc:
        raise CorpusError(str(exc)) from exc
    print(f"{len(export.acts)} acts x {len(export.slots)} slots -> {target}")


def cmd_gradcheck(args):
    worst = 0.0
    lines = []
    for i in range(args.instances):
        report = composite_gradient_check(seed=(args.seed or 0) + i)
        for loss, errors in report.items():
            name, err = max(errors.items(), key=lambda kv: kv[1])
            worst = max(worst, err)
            lines.append({"instance": i, "loss": loss, "max_rel_error": err, "worst_tensor": name})
    if args.out:
        Path(args.out).write_text("\n".join(json.dumps(x) for x in lines) + "\n", encoding="utf-8")
    ok = worst < GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} over {args.instances} instances: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def build_parser():
    parser = argparse.ArgumentParser(prog="actdst", description="Act-aware dialogue state tracking")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, flags):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        if "config" in flags:
            p.add_argument("--config", help="run config (JSON)")
        if "data" in flags:
            p.add_argument("--data", help="dialogue file, split name (train/dev/test) or raw corpus dir")
        if "ontology" in flags:
            p.add_argument("--ontology", help="ontology file (overrides the config / checkpoint)")
        if "checkpoint" in flags:
            p.add_argument("--checkpoint", help="checkpoint file")
        if "out" in flags:
            p.add_argument("--out", help="output file or directory")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        if "policy" in flags:
            p.add_argument(
                "--policy", choices=["all_cat", "all_noncat", "hybrid"], help="slot partition policy"
            )
        if "no_act_attention" in flags:
            p.add_argument("--no-act-attention", action="store_true", help="disable the act attention layer")
        return p

    p = add("convert", cmd_convert, "convert raw MultiWOZ 2.1 files into dialogue files", {"data", "out"})
    p = add("prepare", cmd_prepare, "cache turn examples for every split", {"config", "data", "ontology", "out", "policy"})
    p = add(
        "train",
        cmd_train,
        "train a model and keep the best-dev checkpoint",
        {"config", "data", "ontology", "out", "seed", "policy", "no_act_attention"},
    )
    p = add("evaluate", cmd_evaluate, "joint/slot goal accuracy of a checkpoint", {"checkpoint", "data", "ontology", "out"})
    p = add("predict", cmd_predict, "dump per-slot predictions", {"checkpoint", "data", "ontology", "out"})
    p = add(
        "ablate",
        cmd_ablate,
        "compare models with and without act attention",
        {"config", "data", "ontology", "checkpoint", "out", "seed", "policy"},
    )
    p.add_argument("--ablated-config", help="config of the act-free model (default: --config with act attention off)")
    p.add_argument("--ablated-checkpoint", help="checkpoint of the act-free model (with --checkpoint)")
    p = add("export-attention", cmd_export_attention, "export act-attention weights per slot", {"checkpoint", "ontology", "out"})
    p.add_argument("--acts", required=True, help="comma-separated simulated act sequence, e.g. Request,Welcome")
    p.add_argument("--context", default="i need some help .", help="user utterance used as the dialogue context")
    p.add_argument("--image", help="also write a heat map image here")
    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient check of the model equations", {"out", "seed"})
    p.add_argument("--instances", type=int, default=20, help="number of random instances")
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    _setup_logging(args.verbose)
    try:
        code = args.func(args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OntologyError, CorpusError) as exc:
        print(f"error: bad data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except CheckpointError as exc:
        print(f"error: checkpoint: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK if code is None else code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
