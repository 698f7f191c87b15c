"""Doctors, patients, visits, trials and the enrollment-label pipeline.

Multi-hot code vectors are stored as sorted index tuples and expanded on
demand; every container is immutable once built.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import ValidationError

N_BINS = 5
BIN_EDGES = (0.2, 0.4, 0.6, 0.8)
BIN_CENTERS = (0.1, 0.3, 0.5, 0.7, 0.9)
CODE_KINDS = ("diagnosis", "procedure", "medication")


@dataclass(frozen=True)
class CodeVocabulary:
    diagnosis: tuple
    procedure: tuple
    medication: tuple

    def __post_init__(self):
        seen = set()
        for kind in CODE_KINDS:
            codes = getattr(self, kind)
            object.__setattr__(self, kind, tuple(codes))
            if len(set(codes)) != len(codes):
                raise ValidationError(f"duplicate {kind} codes")
            if seen & set(codes):
                raise ValidationError("code namespaces must be disjoint")
            seen |= set(codes)

    @property
    def sizes(self):
        return len(self.diagnosis), len(self.procedure), len(self.medication)

    @property
    def total(self):
        return sum(self.sizes)

    def all_codes(self):
        """Codes in visit-vector order: diagnosis, then procedure, then medication."""
        return self.diagnosis + self.procedure + self.medication


@dataclass(frozen=True)
class Visit:
    diagnosis: tuple
    procedure: tuple
    medication: tuple
    time_index: int

    def __post_init__(self):
        for kind in CODE_KINDS:
            object.__setattr__(self, kind, tuple(sorted(int(i) for i in getattr(self, kind))))
        if not (self.diagnosis or self.procedure or self.medication):
            raise ValidationError("a visit needs at least one code")
        if self.time_index < 0:
            raise ValidationError("time_index must be non-negative")

    def check(self, vocab):
        for kind, size in zip(CODE_KINDS, vocab.sizes):
            idx = getattr(self, kind)
            if len(set(idx)) != len(idx) or (idx and (idx[0] < 0 or idx[-1] >= size)):
                raise ValidationError(f"{kind} index out of range for vocabulary of {size}")

    def flat_indices(self, vocab):
        nd, np_, _ = vocab.sizes
        return (self.diagnosis
                + tuple(i + nd for i in self.procedure)
                + tuple(i + nd + np_ for i in self.medication))

    def multi_hot(self, vocab):
        v = np.zeros(vocab.total)
        v[list(self.flat_indices(vocab))] = 1.0
        return v


@dataclass(frozen=True)
class Patient:
    visits: tuple

    def __post_init__(self):
        object.__setattr__(self, "visits", tuple(self.visits))
        if not self.visits:
            raise ValidationError("a patient needs at least one visit")
        times = [v.time_index for v in self.visits]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValidationError("visit time_index must be strictly increasing")


@dataclass(frozen=True)
class DoctorRecord:
    doctor_id: str
    patients: tuple
    static_features: tuple
    # planted ground truth; only the generator and its oracle read these
    topic_mixture: tuple | None = None
    origin: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "patients", tuple(self.patients))
        object.__setattr__(self, "static_features", tuple(float(x) for x in self.static_features))
        if self.topic_mixture is not None:
            object.__setattr__(self, "topic_mixture", tuple(float(x) for x in self.topic_mixture))
        if not self.patients:
            raise ValidationError(f"doctor {self.doctor_id} has no patients")


@dataclass(frozen=True)
class Enrollment:
    randomized: int
    discontinued: int
    window: float

    @property
    def rate(self):
        return compute_enrollment_rate(self.randomized, self.discontinued, self.window)


@dataclass(frozen=True)
class Trial:
    trial_id: str
    categorical: MappingProxyType
    text_tokens: tuple
    raw_enrollments: MappingProxyType
    topic_vector: tuple | None = None
    origin: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "categorical", MappingProxyType(dict(self.categorical)))
        object.__setattr__(self, "raw_enrollments", MappingProxyType(dict(self.raw_enrollments)))
        object.__setattr__(self, "text_tokens", tuple(self.text_tokens))
        if self.topic_vector is not None:
            object.__setattr__(self, "topic_vector", tuple(float(x) for x in self.topic_vector))
        if not self.text_tokens:
            raise ValidationError(f"trial {self.trial_id} has no text tokens")

    def one_hots(self, categories):
        """One one-hot vector per categorical field, in schema order."""
        out = []
        for name, values in categories.items():
            value = self.categorical.get(name)
            if value not in values:
                raise ValidationError(f"trial {self.trial_id}: unknown {name} value {value!r}")
            v = np.zeros(len(values))
            v[values.index(value)] = 1.0
            out.append(v)
        return out


@dataclass(frozen=True)
class EnrollmentLabel:
    raw_rate: float
    normalized_rate: float
    bin: int

    def __post_init__(self):
        if bin_rate(self.normalized_rate) != self.bin:
            raise ValidationError("bin inconsistent with normalized rate")


@dataclass(frozen=True)
class Sample:
    doctor_id: str
    trial_id: str
    label: EnrollmentLabel


@dataclass(frozen=True)
class Corpus:
    vocab: CodeVocabulary
    categories: MappingProxyType
    static_feature_names: tuple
    doctors: tuple
    trials: tuple
    samples: tuple
    seed: int = 0
    doctor_index: MappingProxyType = field(init=False, repr=False, compare=False)
    trial_index: MappingProxyType = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cats = {name: tuple(values) for name, values in dict(self.categories).items()}
        object.__setattr__(self, "categories", MappingProxyType(cats))
        for name in ("static_feature_names", "doctors", "trials", "samples"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "doctor_index",
                           MappingProxyType({d.doctor_id: i for i, d in enumerate(self.doctors)}))
        object.__setattr__(self, "trial_index",
                           MappingProxyType({t.trial_id: i for i, t in enumerate(self.trials)}))
        if len(self.doctor_index) != len(self.doctors) or len(self.trial_index) != len(self.trials):
            raise ValidationError("duplicate doctor or trial ids")

    def doctor(self, doctor_id):
        try:
            return self.doctors[self.doctor_index[doctor_id]]
        except KeyError:
            raise ValidationError(f"unknown doctor {doctor_id!r}") from None

    def trial(self, trial_id):
        try:
            return self.trials[self.trial_index[trial_id]]
        except KeyError:
            raise ValidationError(f"unknown trial {trial_id!r}") from None

    @property
    def categorical_dim(self):
        return sum(len(v) for v in self.categories.values())

    def validate(self):
        """Check every cross-entity invariant; raises ValidationError."""
        n_static = len(self.static_feature_names)
        for d in self.doctors:
            if len(d.static_features) != n_static:
                raise ValidationError(f"doctor {d.doctor_id}: static feature length mismatch")
            for p in d.patients:
                for v in p.visits:
                    v.check(self.vocab)
        for t in self.trials:
            t.one_hots(self.categories)
            for doc in t.raw_enrollments:
                self.doctor(doc)
        for s in self.samples:
            self.doctor(s.doctor_id)
            trial = self.trial(s.trial_id)
            if s.doctor_id not in trial.raw_enrollments:
                raise ValidationError(f"sample {s.doctor_id}/{s.trial_id} has no enrollment record")
        return True


# ------------------------------------------------------------ label pipeline
def compute_enrollment_rate(randomized, discontinued, window):
    """(randomized - discontinued) / window."""
    if not window > 0:
        raise ValidationError("enrollment window must be positive")
    if discontinued < 0 or discontinued > randomized:
        raise ValidationError("need 0 <= discontinued <= randomized")
    return (randomized - discontinued) / window


def normalize_rates(rates):
    """Min-max scale one trial's rates to [0, 1]; all-equal input maps to 0.5."""
    r = np.asarray(rates, dtype=np.float64)
    if r.size == 0:
        raise ValidationError("a trial needs at least one investigator")
    lo, hi = r.min(), r.max()
    if hi == lo:
        return np.full(r.shape, 0.5)
    return np.clip((r - lo) / (hi - lo), 0.0, 1.0)


def bin_rate(normalized_rate):
    """Five classes [0,.2) [.2,.4) [.4,.6) [.6,.8) [.8,1]."""
    x = float(normalized_rate)
    if not (0.0 <= x <= 1.0) or math.isnan(x):
        raise ValidationError(f"normalized rate {x} outside [0, 1]")
    for b, edge in enumerate(BIN_EDGES):
        if x < edge:
            return b
    return N_BINS - 1



def label_trial(trial):
    """Map doctor_id -> EnrollmentLabel for one trial's investigators."""
    doctors = list(trial.raw_enrollments)
    raw = [trial.raw_enrollments[d].rate for d in doctors]
    norm = normalize_rates(raw)
    return {d: EnrollmentLabel(float(r), float(n), bin_rate(n)) for d, r, n in zip(doctors, raw, norm)}


def build_samples(trials):
    out = []
    for t in trials:
        for doctor_id, label in label_trial(t).items():
            out.append(Sample(doctor_id, t.trial_id, label))
    return tuple(out)


def encode_static(years_of_practice, specialty, education, specialties, educations):
    """[years / 50] + one-hot specialty + one-hot education level."""
    if specialty not in specialties or education not in educations:
        raise ValidationError("unknown specialty or education level")
    vec = [years_of_practice / 50.0]
    vec += [1.0 if s == specialty else 0.0 for s in specialties]
    vec += [1.0 if e == education else 0.0 for e in educations]
    return tuple(vec)


def split_trial_disjoint(corpus, ratios=(0.7, 0.2, 0.1), seed=0, samples=None):
    """Partition samples by trial into (train, test, validation).

    Trial counts are round(n * ratio) for train and test, validation takes
    the remainder.  ``samples`` defaults to all corpus samples.
    """
    samples = corpus.samples if samples is None else tuple(samples)
    trial_ids = sorted({s.trial_id for s in samples}, key=lambda t: corpus.trial_index[t])
    if len(trial_ids) < 10:
        raise ValidationError(f"need at least 10 trials to split, got {len(trial_ids)}")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValidationError("ratios must be three non-negative numbers summing to 1")
    return split_by_trials(samples, trial_ids, ratios, seed)


def split_by_trials(samples, trial_ids, ratios, seed):
    rng = np.random.default_rng(seed)
    order = [trial_ids[i] for i in rng.permutation(len(trial_ids))]
    n = len(order)
    cuts = []
    acc = 0
    for r in ratios[:-1]:
        acc += int(round(n * r))
        cuts.append(min(acc, n))
    groups = [set(order[:cuts[0]])]
    for a, b in zip(cuts, cuts[1:] + [n]):
        groups.append(set(order[a:b]))
    return tuple(tuple(s for s in samples if s.trial_id in g) for g in groups)
