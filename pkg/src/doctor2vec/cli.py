"""``doctor2vec`` command line: generate, train, evaluate, transfer, predict, inspect.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, load_config
from .corpus_io import load_corpus, save_corpus
from .errors import CalibrationError, CheckpointError, TrainingDivergedError, ValidationError
from .experiment import (
    MODEL_KINDS,
    ExperimentResult,
    ExperimentSpec,
    MetricReport,
    evaluate,
    fit_model,
    make_splits,
    run_experiment,
    write_results,
)
from .memnet import predict_enrollment
from .syngen import bin_distribution, generate_corpus

log = logging.getLogger("doctor2vec")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p):
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", help="global seed (falls back to D2V_SEED, then 0)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser():
    parser = _Parser(prog="doctor2vec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("generate", help="write a synthetic corpus")
    _common(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one model on the standard split")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--model", choices=MODEL_KINDS)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--results", help="results CSV (appended)")
    p.add_argument("--log", help="write the per-epoch training log as JSON lines")

    p = sub.add_parser("evaluate", help="multi-seed experiment on the standard split")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--model", help="model kind or comma-separated kinds")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--results")

    p = sub.add_parser("transfer", help="train on one region of trials, test on another")
    _common(p)
    p.add_argument("--corpus")
    p.add_argument("--mode", choices=("country", "disease"), required=True)
    p.add_argument("--train-filter", required=True, help="e.g. country=US")
    p.add_argument("--test-filter", required=True, help="e.g. country=ZA")
    p.add_argument("--model", help="model kind or comma-separated kinds")
    p.add_argument("--seeds")
    p.add_argument("--results")

    p = sub.add_parser("predict", help="score one doctor-trial pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--doctor", required=True)
    p.add_argument("--trial", required=True)
    p.add_argument("--top", type=int, default=3, help="number of top-attended patients to list")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("inspect", help="summarize a corpus and/or checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--ckpt")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _overrides(args, **mapping):
    out = {}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.seed is not None:
        out["seed"] = args.seed
    for key, value in mapping.items():
        if value is not None:
            out[key] = value
    return out


def _config(args, **mapping):
    cfg = load_config(args.config, _overrides(args, **mapping))
    log.info("config hash %s\n%s", cfg.hash(), cfg.dumps().rstrip())
    return cfg


def _require(cfg, key, flag):
    if not cfg[key]:
        raise ConfigError(f"missing required path: pass {flag} or set {key}")
    return cfg[key]


def _emit(obj):
    print(json.dumps(obj, sort_keys=True, separators=(",", ":")))


def _models(cfg):
    kinds = [k.strip() for k in str(cfg["experiment.model"]).split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad or not kinds:
        raise ConfigError(f"unknown model kind(s) {bad}; choose from {', '.join(MODEL_KINDS)}")
    return kinds


# ------------------------------------------------------------------ commands
def cmd_generate(args):
    cfg = _config(args, **{"paths.corpus": args.out})
    corpus = generate_corpus(cfg.gen_config())
    save_corpus(corpus, args.out)
    _emit({"corpus": args.out, "doctors": len(corpus.doctors), "trials": len(corpus.trials),
           "samples": len(corpus.samples),
           "bin_distribution": [round(float(x), 4) for x in bin_distribution(corpus.samples)]})


def cmd_train(args):
    cfg = _config(args, **{"paths.corpus": args.corpus, "experiment.model": args.model,
                           "paths.checkpoint": args.out, "paths.results": args.results})
    corpus = load_corpus(_require(cfg, "paths.corpus", "--corpus"))
    kind = _models(cfg)[0]
    seed = cfg["seed"]
    spec = ExperimentSpec(model=kind, seeds=(seed,), model_config=cfg.model_config(),
                          train_config=cfg.train_config())
    train_s, val_s, test_s = make_splits(spec, corpus, seed)
    model, train_log = fit_model(kind, corpus, train_s, val_s, spec.model_config, spec.train_config, seed)
    metrics = evaluate(model, val_s, test_s)
    metrics.pop("per_class_pr_auc")
    if cfg["paths.checkpoint"]:
        save_checkpoint(model, cfg["paths.checkpoint"], metrics={**metrics, "seed": seed})
    if args.log:
        Path(args.log).write_text("".join(json.dumps(e, sort_keys=True) + "\n" for e in train_log))
    if cfg["paths.results"]:
        report = MetricReport(kind, "standard", seed, config_hash=spec.config_hash(), **metrics)
        mean = {k: float(getattr(report, k)) for k in ("pr_auc", "precision", "recall", "r2", "mse", "n_test")}
        write_results(cfg["paths.results"], [ExperimentResult(spec, [report], mean, {})], append=True)
    _emit({"model": kind, "seed": seed, "checkpoint": cfg["paths.checkpoint"],
           **{k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in metrics.items()}})


def _run(cfg, mode):
    corpus = load_corpus(_require(cfg, "paths.corpus", "--corpus"))
    results = []
    for kind in _models(cfg):
        spec = ExperimentSpec(model=kind, mode=mode, seeds=cfg["experiment.seeds"],
                              train_filter=cfg["experiment.train_filter"], test_filter=cfg["experiment.test_filter"],
                              model_config=cfg.model_config(), train_config=cfg.train_config())
        res = run_experiment(spec, corpus)
        results.append(res)
        _emit({"model": kind, "mode": mode, "seeds": list(spec.seeds),
               "pr_auc_mean": res.mean["pr_auc"], "pr_auc_std": res.std["pr_auc"],
               "r2_mean": res.mean["r2"], "mse_mean": res.mean["mse"]})
    if cfg["paths.results"]:
        write_results(cfg["paths.results"], results)
    return results


def cmd_evaluate(args):
    cfg = _config(args, **{"paths.corpus": args.corpus, "experiment.model": args.model,
                           "experiment.seeds": args.seeds, "paths.results": args.results})
    _run(cfg, "standard")


def cmd_transfer(args):
    cfg = _config(args, **{"paths.corpus": args.corpus, "experiment.model": args.model,
                           "experiment.seeds": args.seeds, "paths.results": args.results,
                           "experiment.train_filter": args.train_filter,
                           "experiment.test_filter": args.test_filter})
    _run(cfg, f"transfer_{args.mode}")


def cmd_predict(args):
    model, header = load_checkpoint(args.ckpt)
    corpus = load_corpus(args.corpus)
    model.bind(corpus)
    if model.kind == "doctor2vec":
        probs, rate, attention = predict_enrollment(model, args.doctor, args.trial)
    else:
        if args.doctor not in corpus.doctor_index or args.trial not in corpus.trial_index:
            raise ValidationError(f"unknown doctor {args.doctor!r} or trial {args.trial!r}")
        out = model.forward(np.array([corpus.doctor_index[args.doctor]]), np.array([corpus.trial_index[args.trial]]))
        probs, rate, attention = out.probs.data[0], float(out.rate.data[0]), None
    result = {"doctor": args.doctor, "trial": args.trial, "model": model.kind,
              "probs": [float(p) for p in probs], "predicted_bin": int(np.argmax(probs)), "rate": rate,
              "attention": None, "top_patients": None}
    if attention is not None:
        kept = model.data.kept_patients(corpus.doctor_index[args.doctor])
        result["attention"] = [float(a) for a in attention]
        order = np.argsort(-attention, kind="stable")[: args.top]
        result["top_patients"] = [{"patient": int(kept[i]), "weight": float(attention[i])} for i in order]
    _emit(result)


def cmd_inspect(args):
    if not args.corpus and not args.ckpt:
        raise ConfigError("inspect needs --corpus and/or --ckpt")
    out = {}
    if args.corpus:
        c = load_corpus(args.corpus)
        n_visits = [len(p.visits) for d in c.doctors for p in d.patients]
        out["corpus"] = {
            "doctors": len(c.doctors), "trials": len(c.trials), "samples": len(c.samples),
            "patients": len(n_visits), "visits": int(sum(n_visits)),
            "vocab_sizes": [len(c.vocab.diagnosis), len(c.vocab.procedure), len(c.vocab.medication)],
            "categories": {k: list(v) for k, v in c.categories.items()},
            "bin_distribution": [round(float(x), 4) for x in bin_distribution(c.samples)],
            "seed": c.seed,
        }
    if args.ckpt:
        model, header = load_checkpoint(args.ckpt)
        out["checkpoint"] = {"model_kind": header["model_kind"], "config_hash": header["config_hash"],
                             "format_version": header["format_version"], "metrics": header["metrics"],
                             "parameters": int(sum(a.size for a in model.state_arrays().values())),
                             "blocks": header["n_blocks"]}
    _emit(out)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate,
            "transfer": cmd_transfer, "predict": cmd_predict, "inspect": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, CalibrationError, TrainingDivergedError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
