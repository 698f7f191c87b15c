"""Seeded experiment runner for the standard split and the transfer settings."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import BASELINE_KINDS, LogRegBaseline, MedianBaseline, make_baseline
from .datamodel import split_by_trials, split_trial_disjoint
from .errors import ValidationError
from .memnet import Doctor2Vec, ModelConfig, TrainConfig, predict, sample_targets, train
from .metrics import calibrate_threshold, macro_pr_auc, mse_score, precision_recall, r2_score

log = logging.getLogger(__name__)

MODES = ("standard", "transfer_country", "transfer_disease")
MODEL_KINDS = ("doctor2vec",) + BASELINE_KINDS
CSV_FIELDS = ("model", "mode", "seed", "pr_auc", "precision", "recall", "r2", "mse", "n_test", "config_hash")


@dataclass(frozen=True)
class TrialFilter:
    """``key=value`` or ``key=v1|v2`` over a trial's categorical fields."""

    key: str
    values: tuple

    @classmethod
    def parse(cls, text):
        key, sep, rest = str(text).partition("=")
        values = tuple(v.strip() for v in rest.split("|") if v.strip())
        if not sep or not key.strip() or not values:
            raise ValidationError(f"filter {text!r} must look like key=value or key=v1|v2")
        return cls(key.strip(), values)

    def matches(self, trial):
        if self.key not in trial.categorical:
            raise ValidationError(f"trials have no categorical field {self.key!r}")
        return trial.categorical[self.key] in self.values

    def __str__(self):
        return f"{self.key}={'|'.join(self.values)}"


@dataclass
class ExperimentSpec:
    model: str = "doctor2vec"
    mode: str = "standard"
    seeds: tuple = tuple(range(10))
    train_filter: str | None = None
    test_filter: str | None = None
    model_config: ModelConfig = field(default_factory=ModelConfig)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    split: tuple = (0.7, 0.2, 0.1)
    transfer_val_fraction: float = 0.15

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.model not in MODEL_KINDS:
            raise ValidationError(f"unknown model {self.model!r}; choose from {', '.join(MODEL_KINDS)}")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        if not self.seeds:
            raise ValidationError("at least one seed is required")
        if self.mode != "standard" and (not self.train_filter or not self.test_filter):
            raise ValidationError("transfer modes need both a train filter and a test filter")

    def to_dict(self):
        d = asdict(self)
        d.pop("seeds")
        return d

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class MetricReport:
    model: str
    mode: str
    seed: int
    pr_auc: float
    precision: float
    recall: float
    r2: float
    mse: float
    n_test: int
    config_hash: str
    per_class_pr_auc: tuple = ()
    train_log: list = field(default_factory=list, repr=False)

    def row(self):
        return [self.model, self.mode, self.seed] + [_fmt(getattr(self, k)) for k in CSV_FIELDS[3:8]] + [
            self.n_test, self.config_hash]


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    reports: list
    mean: dict
    std: dict
    models: list = field(default_factory=list, repr=False)

    def agg_row(self):
        r = self.reports[0]
        return [r.model, r.mode, "agg"] + [_fmt(self.mean[k]) for k in CSV_FIELDS[3:8]] + [
            _fmt(self.mean["n_test"]), r.config_hash]


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if not np.isfinite(x) else repr(round(x, 12))


# ------------------------------------------------------------------- splits
def make_splits(spec, corpus, seed):
    """(train, validation, test) sample tuples for one seed."""
    if spec.mode == "standard":
        train_s, test_s, val_s = split_trial_disjoint(corpus, spec.split, seed)
        return train_s, val_s, test_s
    f_train = TrialFilter.parse(spec.train_filter)
    f_test = TrialFilter.parse(spec.test_filter)
    train_trials = [t.trial_id for t in corpus.trials if f_train.matches(t)]
    test_trials = [t.trial_id for t in corpus.trials if f_test.matches(t)]
    overlap = sorted(set(train_trials) & set(test_trials))
    if overlap:
        raise ValidationError(f"train filter {f_train} and test filter {f_test} both select {len(overlap)} "
                              f"trials (e.g. {overlap[0]}); transfer regions must be disjoint")
    if len(train_trials) < 2 or not test_trials:
        raise ValidationError(f"filters select {len(train_trials)} train and {len(test_trials)} test trials")
    pool = [s for s in corpus.samples if s.trial_id in set(train_trials)]
    frac = spec.transfer_val_fraction
    train_s, val_s = split_by_trials(pool, train_trials, (1.0 - frac, frac), seed)
    test_s = tuple(s for s in corpus.samples if s.trial_id in set(test_trials))
    if not train_s or not val_s:
        raise ValidationError("transfer training region is too small for a validation split")
    return train_s, val_s, test_s


# ------------------------------------------------------------------- models
def fit_model(kind, corpus, train_s, val_s, model_config, train_config, seed):
    """Build and fit one model; returns (model, training log)."""
    tc = TrainConfig(**{**train_config.to_dict(), "seed": seed})
    if kind == "doctor2vec":
        model = Doctor2Vec.for_corpus(corpus, ModelConfig(**{**model_config.to_dict(), "seed": seed}))
        return model, train(model, train_s, val_s, tc).log
    model = make_baseline(kind, corpus, train_s, seed=seed)
    if isinstance(model, MedianBaseline):
        return model, []
    if isinstance(model, LogRegBaseline):
        return model, [{"iteration": i, "train_loss": v} for i, v in enumerate(model.fit(train_s))]
    return model, train(model, train_s, val_s, tc).log


def _safe(fn, *args):
    try:
        return fn(*args)
    except ValidationError:
        return float("nan")


def evaluate(model, val_s, test_s):
    """Macro PR-AUC on probabilities, calibrated precision/recall, R^2 and MSE on rates."""
    val_probs, _ = predict(model, val_s)
    val_bins, _ = sample_targets(val_s)
    thresholds = calibrate_threshold(val_probs, val_bins)
    probs, rates = predict(model, test_s)
    bins, true_rates = sample_targets(test_s)
    try:
        macro, per_class = macro_pr_auc(probs, bins)
    except ValidationError:
        macro, per_class = float("nan"), np.full(probs.shape[1], np.nan)
    pr = precision_recall(thresholds.decide(probs), bins)
    return {
        "pr_auc": macro,
        "per_class_pr_auc": tuple(float(x) for x in per_class),
        "precision": pr.macro_precision,
        "recall": pr.macro_recall,
        "r2": _safe(r2_score, rates, true_rates),
        "mse": mse_score(rates, true_rates),
        "n_test": len(test_s),
    }


def run_experiment(spec, corpus, keep_models=False):
    """Train and evaluate ``spec.model`` once per seed; mean and sample std over seeds."""
    reports, models = [], []
    chash = spec.config_hash()
    for seed in spec.seeds:
        train_s, val_s, test_s = make_splits(spec, corpus, seed)
        model, train_log = fit_model(spec.model, corpus, train_s, val_s, spec.model_config, spec.train_config, seed)
        m = evaluate(model, val_s, test_s)
        reports.append(MetricReport(spec.model, spec.mode, seed, config_hash=chash, train_log=train_log, **m))
        log.info("%s %s seed %d: pr_auc %.4f r2 %.4f", spec.model, spec.mode, seed, m["pr_auc"], m["r2"])
        if keep_models:
            models.append(model)
    keys = CSV_FIELDS[3:9]
    values = {k: np.array([getattr(r, k) for r in reports], dtype=float) for k in keys}
    mean = {k: float(np.mean(v)) for k, v in values.items()}
    std = {k: float(np.std(v, ddof=1)) if v.size > 1 else 0.0 for k, v in values.items()}
    return ExperimentResult(spec, reports, mean, std, models)


# ------------------------------------------------------------------ results
def provenance(results):
    hashes = ",".join(sorted({r.reports[0].config_hash for r in results}))
    seeds = ",".join(sorted({str(s) for r in results for s in r.spec.seeds}, key=int))
    return (f"# provenance config_hash={hashes} seeds={seeds} doctor2vec={__version__} "
            f"numpy={np.__version__} python={platform.python_version()}")


def results_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for res in results:
        for r in res.reports:
            w.writerow(r.row())
        w.writerow(res.agg_row())
    buf.write(provenance(results) + "\n")
    return buf.getvalue()


def write_results(path, results, append=False):
    """Write (or append to) a results CSV; appended blocks skip the header when it matches."""
    path = Path(path)
    text = results_csv(results)
    if append and path.exists() and path.stat().st_size:
        first = path.read_text(encoding="utf-8").splitlines()[0]
        if first != ",".join(CSV_FIELDS):
            raise ValidationError(f"{path} is not a results file (unexpected header)")
        with path.open("a", encoding="utf-8") as fh:
            fh.write(text.split("\n", 1)[1])
    else:
        path.write_text(text, encoding="utf-8")
    return path


def read_results(path):
    """Data rows of a results CSV as dicts (comment lines skipped)."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    return [r for r in rows if r["model"] != "model"]
