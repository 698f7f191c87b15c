"""Synthetic corpora with a planted doctor-trial affinity.

Every doctor has a primary specialty topic, an optional secondary specialty
and a general-practice background topic; each patient belongs to exactly
one of them.  Primary-practice levels are stratified per topic, and the
first doctor of each topic practises it exclusively so that every trial's
best investigator has affinity 1.  Trials have a single specialty topic.
The planted affinity is the cosine between the doctor's realized
patient-topic mixture and the trial's topic vector, and raw enrollment
rates are that affinity plus Gaussian noise.

Investigators are chosen per trial so that the normalized labels follow the
target bin distribution; the result is rejected and redrawn when any class
misses its target by more than ``tolerance``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .datamodel import (
    N_BINS,
    CodeVocabulary,
    Corpus,
    DoctorRecord,
    Enrollment,
    Patient,
    Trial,
    Visit,
    build_samples,
    encode_static,
)
from .errors import CalibrationError, ValidationError

DEFAULT_BIN_DISTRIBUTION = (0.12, 0.33, 0.37, 0.12, 0.06)

BACKGROUND = "general_practice"
TOPIC_KEYWORDS = {
    "cardiology": ["cardiac", "heart", "arrhythmia", "hypertension", "myocardial", "coronary",
                   "stent", "atrial", "fibrillation", "angina", "lipid", "statin"],
    "oncology": ["tumor", "carcinoma", "metastatic", "chemotherapy", "lymphoma", "radiotherapy",
                 "cisplatin", "gemcitabine", "neoplasm", "biopsy", "remission", "oncologic"],
    "neurology": ["alzheimer", "dementia", "amyloid", "cognitive", "neuropathy", "seizure",
                  "epilepsy", "parkinson", "stroke", "migraine", "neuronal", "sclerosis"],
    "endocrinology": ["diabetes", "insulin", "glycemic", "hba1c", "thyroid", "metformin",
                      "obesity", "glucose", "pancreatic", "hormone", "adrenal", "endocrine"],
    "pulmonology": ["asthma", "copd", "pulmonary", "fibrosis", "lung", "inhaler", "bronchial",
                    "respiratory", "spirometry", "oxygen", "idiopathic", "airway"],
    "gastroenterology": ["crohn", "colitis", "bowel", "inflammatory", "hepatic", "liver",
                         "gastric", "ulcer", "colon", "endoscopy", "cirrhosis", "intestinal"],
    "rheumatology": ["arthritis", "rheumatoid", "lupus", "joint", "autoimmune", "psoriatic",
                     "gout", "methotrexate", "synovitis", "vasculitis", "spondylitis", "tendon"],
    "infectious_disease": ["hiv", "hepatitis", "antiviral", "vaccine", "bacterial", "sepsis",
                           "antibiotic", "infection", "viral", "pneumonia", "tuberculosis", "fungal"],
}
BOILERPLATE = ["inclusion", "criteria", "exclusion", "adults", "aged", "years", "informed",
               "consent", "pregnant", "women", "excluded", "patients", "must", "have", "history",
               "diagnosed", "prior", "treatment", "study", "participants", "eligible", "within",
               "months", "documented", "willing"]
PHASES = ("I", "II", "III", "IV")
STUDY_TYPES = ("interventional", "observational")
EDUCATIONS = ("MD", "DO", "MBBS", "MD_PhD")
DAYS = 7 * 365
RATE_SCALE = 10.0  # subjects per month at affinity 1


@dataclass
class GenConfig:
    n_doctors: int = 200
    n_trials: int = 50
    n_patients_per_doctor: tuple = (8, 16)
    n_visits_per_patient: tuple = (2, 5)
    vocab_sizes: tuple = (120, 40, 120)
    n_topics: int = 4
    noise_std: float = 0.05
    seed: int = 0
    target_bin_distribution: tuple | None = DEFAULT_BIN_DISTRIBUTION
    investigators_per_trial: tuple = (30, 50)
    mean_codes_per_visit: tuple = (4.23, 1.23, 9.36)
    max_codes_per_visit: tuple = (56, 18, 56)
    background: bool = True
    specialties_per_doctor: int = 2
    code_leakage: float = 0.1
    countries: tuple = ("US",)
    country_weights: tuple | None = None
    tolerance: float = 0.05
    max_retries: int = 25

    def __post_init__(self):
        for name in ("n_patients_per_doctor", "n_visits_per_patient", "vocab_sizes",
                     "investigators_per_trial", "mean_codes_per_visit", "max_codes_per_visit",
                     "countries"):
            setattr(self, name, tuple(getattr(self, name)))
        if self.target_bin_distribution is not None:
            self.target_bin_distribution = tuple(float(x) for x in self.target_bin_distribution)
        if self.country_weights is not None:
            self.country_weights = tuple(float(x) for x in self.country_weights)
        self.validate()

    def validate(self):
        if min(self.n_doctors, self.n_trials, self.n_topics) < 1:
            raise ValidationError("counts must be positive")
        for name in ("n_patients_per_doctor", "n_visits_per_patient", "investigators_per_trial"):
            lo, hi = getattr(self, name)
            if not 1 <= lo <= hi:
                raise ValidationError(f"{name} must be a range 1 <= lo <= hi")
        if len(self.vocab_sizes) != 3 or min(self.vocab_sizes) < 1:
            raise ValidationError("vocab_sizes needs three positive sizes")
        if self.specialties_per_doctor not in (1, 2):
            raise ValidationError("specialties_per_doctor must be 1 or 2")
        if self.noise_std < 0 or not 0 <= self.code_leakage <= 1:
            raise ValidationError("noise_std must be >= 0 and code_leakage in [0, 1]")
        t = self.target_bin_distribution
        if t is not None and (len(t) != N_BINS or min(t) < 0 or abs(sum(t) - 1.0) > 1e-9):
            raise ValidationError("target_bin_distribution must be 5 non-negative floats summing to 1")
        w = self.country_weights
        if w is not None and (len(w) != len(self.countries) or min(w) < 0 or sum(w) <= 0):
            raise ValidationError("country_weights must match countries")

    def to_dict(self):
        return asdict(self)

    def fingerprint(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TopicModel:
    """Per-topic code distributions; topic 0 is the background when enabled."""

    names: tuple
    code_probs: tuple  # one (n_topics_total, vocab_size) array per code kind
    specialty_offset: int
    keywords: dict = field(default_factory=dict)

    @property
    def specialties(self):
        return self.names[self.specialty_offset:]


def topic_names(n_topics):
    known = list(TOPIC_KEYWORDS)
    return tuple(known[i] if i < len(known) else f"topic{i + 1}" for i in range(n_topics))


def build_topic_model(config, rng):
    specialties = topic_names(config.n_topics)
    names = ((BACKGROUND,) if config.background else ()) + specialties
    probs = []
    for size in config.vocab_sizes:
        p = np.full((len(names), size), config.code_leakage / size)
        for t, block in enumerate(np.array_split(np.arange(size), len(names))):
            if block.size == 0:
                p[t] = 1.0 / size
                continue
            p[t, block] += (1.0 - config.code_leakage) * rng.dirichlet(np.ones(block.size))
        probs.append(p / p.sum(axis=1, keepdims=True))
    keywords = {name: TOPIC_KEYWORDS.get(name, [f"{name}kw{i}" for i in range(12)]) for name in specialties}
    return TopicModel(names, tuple(probs), 1 if config.background else 0, keywords)


def cosine_affinity(mixture, topic_vector):
    a = np.asarray(mixture, dtype=np.float64)
    b = np.asarray(topic_vector, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError("topic vectors of different dimension")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(min(max(a @ b / (na * nb), 0.0), 1.0))


def planted_affinity(doctor, trial):
    """Ground-truth relevance in [0, 1] for a doctor and trial of the same generated corpus."""
    if doctor.topic_mixture is None or trial.topic_vector is None:
        raise ValidationError("entities carry no planted topics")
    if doctor.origin is None or doctor.origin != trial.origin:
        raise ValidationError("doctor and trial come from different corpora")
    return cosine_affinity(doctor.topic_mixture, trial.topic_vector)


def _largest_remainder(n, weights):
    w = np.asarray(weights, dtype=np.float64)
    raw = n * w / w.sum()
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts


def _make_visit(rng, topic, time_index, config, topics):
    while True:
        codes = []
        for kind, mean, cap in zip(range(3), config.mean_codes_per_visit, config.max_codes_per_visit):
            p = topics.code_probs[kind][topic]
            n = min(int(rng.poisson(mean)), cap, p.size)
            codes.append(rng.choice(p.size, size=n, replace=False, p=p) if n else ())
        if any(len(c) for c in codes):
            return Visit(codes[0], codes[1], codes[2], time_index)


def _stratified_levels(rng, topics_of_doctors, n_topics):
    """Per-doctor positions in [0, 1], spread evenly over the bins within each specialty."""
    weights = np.full(N_BINS, 1.0 / N_BINS)
    levels = np.zeros(len(topics_of_doctors))
    for t in range(n_topics):
        members = np.flatnonzero(topics_of_doctors == t)
        bins = np.repeat(np.arange(N_BINS), _largest_remainder(members.size, weights))
        levels[members] = (rng.permutation(bins) + rng.uniform(size=members.size)) / N_BINS
    return levels


def _practice_counts(k, primary_level, secondary_level):
    """Patients per (primary, secondary, background) so cosines approximate the levels.

    Counts proportional to (c_a, c_b, c_bg) with c_a^2 + c_b^2 + c_bg^2 = 1 give a
    mixture whose cosine with the primary topic is c_a and with the secondary c_b.
    """
    c_a = min(max(primary_level, 0.02), 0.999)
    c_b = secondary_level * math.sqrt(1.0 - c_a * c_a)
    c_bg = math.sqrt(max(1.0 - c_a * c_a - c_b * c_b, 0.0))
    return _largest_remainder(k, [c_a, c_b, c_bg])


def _make_doctor(rng, idx, config, topics, origin, topic, level, anchor=False):
    """One doctor whose primary specialty is ``topic``.

    With a background topic each doctor also gets a random secondary specialty
    (when ``specialties_per_doctor`` is 2) and general-practice patients.
    ``anchor`` forces a pure practice in the primary specialty (affinity 1).
    """
    n_all = len(topics.names)
    off = topics.specialty_offset
    k = int(rng.integers(config.n_patients_per_doctor[0], config.n_patients_per_doctor[1] + 1))
    if config.background and not anchor:
        others = [t for t in range(config.n_topics) if t != topic]
        second = int(rng.choice(others)) if others and config.specialties_per_doctor > 1 else topic
        sec_level = rng.uniform() if second != topic else 0.0
        counts = _practice_counts(k, level, sec_level)
        patient_topics = np.repeat([off + topic, off + second, 0], counts)[rng.permutation(k)]
    else:
        patient_topics = np.full(k, off + topic)
    patients = []
    for topic in patient_topics:
        t = int(rng.integers(config.n_visits_per_patient[0], config.n_visits_per_patient[1] + 1))
        days = np.sort(rng.choice(DAYS, size=t, replace=False))
        patients.append(Patient(tuple(_make_visit(rng, int(topic), int(d), config, topics) for d in days)))
    mixture = np.bincount(patient_topics, minlength=n_all) / k
    static = encode_static(int(rng.integers(1, 41)), topics.names[int(np.argmax(mixture))],
                           EDUCATIONS[int(rng.integers(len(EDUCATIONS)))], topics.names, EDUCATIONS)
    return DoctorRecord(f"D{idx:04d}", tuple(patients), static, tuple(mixture), origin)


def _make_trial_shell(rng, idx, topic, config, topics):
    name = topics.names[topic]
    weights = config.country_weights or (1.0,) * len(config.countries)
    country = config.countries[rng.choice(len(config.countries), p=np.asarray(weights) / sum(weights))]
    words = list(rng.choice(BOILERPLATE, size=int(rng.integers(8, 13))))
    words += list(rng.choice(topics.keywords[name], size=int(rng.integers(6, 11))))
    others = [s for s in topics.specialties if s != name]
    if others and rng.uniform() < 0.5:
        words.append(str(rng.choice(topics.keywords[others[int(rng.integers(len(others)))]])))
    words = [str(w) for w in np.array(words)[rng.permutation(len(words))]]
    cats = {
        "phase": PHASES[int(rng.integers(len(PHASES)))],
        "area": name,
        "country": str(country),
        "study_type": STUDY_TYPES[int(rng.integers(len(STUDY_TYPES)))],
    }
    vec = np.zeros(len(topics.names))
    vec[topic] = 1.0
    return f"T{idx:04d}", cats, tuple(words), tuple(vec)


def _select_investigators(rng, affinity, n, target):
    """Pick ``n`` doctors whose min-max scaled affinities follow ``target`` bin shares.

    The extremes are always taken.  Each bin is filled by random draws among
    doctors whose scaled affinity falls in it; a shortfall is filled with the
    unused doctors nearest to that bin's center.
    """
    n_doc = affinity.size
    if target is None:
        return [int(i) for i in rng.choice(n_doc, size=n, replace=False)]
    lo, hi = affinity.min(), affinity.max()
    if hi == lo:
        return [int(i) for i in rng.choice(n_doc, size=n, replace=False)]
    scaled = (affinity - lo) / (hi - lo)
    bins = np.minimum((scaled * N_BINS).astype(int), N_BINS - 1)
    counts = _largest_remainder(n, target)
    used = np.zeros(n_doc, dtype=bool)
    chosen = []
    for pick, b in ((int(np.argmax(affinity)), N_BINS - 1), (int(np.argmin(affinity)), 0)):
        used[pick] = True
        chosen.append(pick)
        counts[b] = max(counts[b] - 1, 0)
    for b in range(N_BINS):
        pool = np.flatnonzero((bins == b) & ~used)
        take = rng.permutation(pool)[: counts[b]]
        used[take] = True
        chosen.extend(int(i) for i in take)
        center = (b + 0.5) / N_BINS
        for _ in range(counts[b] - take.size):
            if used.all():
                break
            dist = np.where(used, np.inf, np.abs(scaled - center))
            pick = int(np.argmin(dist + 1e-9 * rng.uniform(size=n_doc)))
            used[pick] = True
            chosen.append(pick)
    return chosen


def bin_distribution(samples):
    counts = np.bincount([s.label.bin for s in samples], minlength=N_BINS)
    return counts / max(len(samples), 1)


def generate_corpus(config=None):
    """Generate a corpus (see module docstring); deterministic in ``config.seed``."""
    config = config or GenConfig()
    config.validate()
    rng = np.random.default_rng(config.seed)
    origin = config.fingerprint()
    topics = build_topic_model(config, rng)
    nd, npr, nm = config.vocab_sizes
    vocab = CodeVocabulary(tuple(f"DX{i:04d}" for i in range(nd)),
                           tuple(f"PR{i:04d}" for i in range(npr)),
                           tuple(f"RX{i:04d}" for i in range(nm)))
    # specialties are balanced; the first doctor of each specialty is a pure-practice
    # anchor so that every trial's top affinity is 1
    doctor_topics = (np.arange(config.n_doctors) % config.n_topics)[rng.permutation(config.n_doctors)]
    levels = _stratified_levels(rng, doctor_topics, config.n_topics)
    seen = set()
    doctors = []
    for i, t in enumerate(doctor_topics):
        doctors.append(_make_doctor(rng, i + 1, config, topics, origin, int(t), levels[i],
                                    anchor=int(t) not in seen))
        seen.add(int(t))
    trial_topics = (np.arange(config.n_trials) % config.n_topics)[rng.permutation(config.n_trials)]
    shells = [_make_trial_shell(rng, l + 1, topics.specialty_offset + int(t), config, topics)
              for l, t in enumerate(trial_topics)]
    mixtures = np.array([d.topic_mixture for d in doctors])
    target = config.target_bin_distribution
    achieved = None
    for _ in range(config.max_retries):
        trials = []
        for trial_id, cats, words, vec in shells:
            affinity = np.clip(mixtures @ np.asarray(vec) / np.linalg.norm(mixtures, axis=1), 0.0, 1.0)
            lo, hi = config.investigators_per_trial
            n = min(int(rng.integers(lo, hi + 1)), config.n_doctors)
            picked = _select_investigators(rng, affinity, n, target)
            window = round(float(rng.uniform(6.0, 24.0)), 1)
            enrollments = {}
            for d in picked:
                rate = affinity[d] + (rng.normal(0.0, config.noise_std) if config.noise_std > 0 else 0.0)
                net = int(round(min(max(rate, 0.0), 1.0) * RATE_SCALE * window))
                dropped = int(rng.poisson(0.1 * net))
                enrollments[doctors[d].doctor_id] = Enrollment(net + dropped, dropped, window)
            trials.append(Trial(trial_id, cats, words, enrollments, vec, origin))
        samples = build_samples(trials)
        achieved = bin_distribution(samples)
        if target is None or np.all(np.abs(achieved - np.asarray(target)) <= config.tolerance):
            break
    else:
        raise CalibrationError(
            f"bin distribution {np.round(achieved, 3).tolist()} missed target {list(target)} "
            f"after {config.max_retries} attempts", achieved=achieved)
    categories = {"phase": PHASES, "area": topics.specialties, "country": config.countries,
                  "study_type": STUDY_TYPES}
    static_names = ("years_of_practice",) + tuple(f"specialty={n}" for n in topics.names) + tuple(
        f"education={e}" for e in EDUCATIONS)
    corpus = Corpus(vocab, categories, static_names, doctors, trials, samples, seed=config.seed)
    corpus.validate()
    return corpus
