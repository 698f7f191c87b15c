"""Reference predictors: median, logistic regression, MLP, LSTM and DeepMatch-style.

Every predictor exposes ``forward(doc_idx, trial_idx) -> Output`` over a bound
corpus, so the memnet training loop and ``predict`` work unchanged for the
trainable ones.  Fitted preprocessing (tf-idf vocabulary, top codes,
standardization statistics) lives in ``fitted_state()`` so checkpoints can
restore it without refitting.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass

import numpy as np

from . import numcore as nc
from .datamodel import BIN_CENTERS, N_BINS, bin_rate
from .encoders import trial_onehots
from .errors import ContractError, TrainingDivergedError, ValidationError
from .memnet import Output, sample_indices, sample_targets

AREA = "area"


# ------------------------------------------------------------------ features
class TfidfVectorizer:
    """Raw term counts times idf = ln((1 + N) / (1 + df)) + 1, then L2-normalized."""

    def __init__(self, vocabulary=(), idf=()):
        self.vocabulary = tuple(vocabulary)
        self.idf = np.asarray(idf, dtype=np.float64)
        self.index = {tok: i for i, tok in enumerate(self.vocabulary)}

    @classmethod
    def fit(cls, documents):
        documents = [list(d) for d in documents]
        if not documents:
            raise ValidationError("tf-idf needs at least one document")
        df = Counter(tok for doc in documents for tok in set(doc))
        vocab = sorted(df)
        n = len(documents)
        return cls(vocab, [math.log((1 + n) / (1 + df[t])) + 1.0 for t in vocab])

    def transform(self, tokens):
        v = np.zeros(len(self.vocabulary))
        for tok in tokens:
            i = self.index.get(tok)
            if i is not None:
                v[i] += 1.0
        v *= self.idf
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v

    def state(self):
        return {"vocabulary": list(self.vocabulary), "idf": self.idf.tolist()}


def doctor_code_counts(doctor, vocab):
    """Occurrences of every flat code index over all of a doctor's visits."""
    counts = np.zeros(vocab.total, dtype=np.int64)
    for p in doctor.patients:
        for v in p.visits:
            np.add.at(counts, list(v.flat_indices(vocab)), 1)
    return counts


def top_codes(corpus, n=50):
    """Flat indices of the ``n`` most frequent codes; ties broken by code string."""
    total = np.zeros(corpus.vocab.total, dtype=np.int64)
    for d in corpus.doctors:
        total += doctor_code_counts(d, corpus.vocab)
    names = corpus.vocab.all_codes()
    order = sorted(range(len(names)), key=lambda i: (-total[i], names[i]))
    return np.array(sorted(order[: min(n, len(order))]), dtype=np.intp)


class BaselineFeatures:
    """Doctor code counts, trial one-hots and trial tf-idf for a corpus."""

    def __init__(self, corpus, tfidf):
        self.corpus = corpus
        self.counts = np.array([doctor_code_counts(d, corpus.vocab) for d in corpus.doctors])
        self.trial_cat = np.array([trial_onehots(t, corpus.categories) for t in corpus.trials])
        self.trial_tfidf = np.array([tfidf.transform(t.text_tokens) for t in corpus.trials])

    def flat(self, doc_idx, trial_idx):
        return np.concatenate([self.counts[doc_idx], self.trial_cat[trial_idx], self.trial_tfidf[trial_idx]],
                              axis=1).astype(np.float64)


def _train_trials(corpus, train_samples):
    ids = sorted({s.trial_id for s in train_samples})
    return [corpus.trial(t) for t in ids]


def expected_rate(probs):
    """Rate implied by class probabilities: sum_c p_c * center_c."""
    return np.asarray(probs) @ np.asarray(BIN_CENTERS)


# -------------------------------------------------------------------- median
class MedianBaseline:
    kind = "median"

    def __init__(self):
        self.area_medians = {}
        self.global_median = None
        self.data = None

    def fit(self, corpus, train_samples):
        if not train_samples:
            raise ValidationError("median baseline needs a non-empty training set")
        by_area = {}
        for s in train_samples:
            by_area.setdefault(corpus.trial(s.trial_id).categorical[AREA], []).append(s.label.normalized_rate)
        self.area_medians = {a: float(np.median(r)) for a, r in sorted(by_area.items())}
        self.global_median = float(np.median([s.label.normalized_rate for s in train_samples]))
        self.bind(corpus)
        return self

    def bind(self, corpus, train_samples=None):
        self.data = _Bound(corpus)
        return self

    def rate_for(self, area):
        if self.global_median is None:
            raise ContractError("median baseline used before fit")
        return self.area_medians.get(area, self.global_median)

    def forward(self, doc_idx, trial_idx):
        trials = self.data.corpus.trials
        rates = np.array([self.rate_for(trials[l].categorical[AREA]) for l in trial_idx])
        probs = np.zeros((len(rates), N_BINS))
        probs[np.arange(len(rates)), [bin_rate(r) for r in rates]] = 1.0
        return Output(nc.Tensor(probs), nc.Tensor(rates))

    def init_args(self):
        return {}

    def fitted_state(self):
        return {"area_medians": self.area_medians, "global_median": self.global_median}

    def load_fitted_state(self, state):
        self.area_medians = dict(state["area_medians"])
        self.global_median = state["global_median"]

    def parameters(self):
        return {}

    def state_arrays(self):
        return {}

    def load_arrays(self, arrays):
        if arrays:
            raise ContractError("median baseline has no parameter blocks")


class _Bound:
    def __init__(self, corpus):
        self.corpus = corpus


# ------------------------------------------------- shared trainable plumbing
class _FeatureModel(nc.Module):
    """Fits tf-idf and standardization on training data, then serves features."""

    def __init__(self):
        self.data = None
        self.fitted = None

    def bind(self, corpus, train_samples=None):
        if self.fitted is None:
            if not train_samples:
                raise ValidationError(f"{self.kind} baseline needs training samples to fit its features")
            self.fitted = self._fit_state(corpus, train_samples)
        self.tfidf = TfidfVectorizer(self.fitted["tfidf"]["vocabulary"], self.fitted["tfidf"]["idf"])
        self.data = BaselineFeatures(corpus, self.tfidf)
        self._check_dims()
        return self

    def _fit_state(self, corpus, train_samples):
        tfidf = TfidfVectorizer.fit(t.text_tokens for t in _train_trials(corpus, train_samples))
        return {"tfidf": tfidf.state()}

    def _check_dims(self):
        pass

    def fitted_state(self):
        return self.fitted

    def load_fitted_state(self, state):
        self.fitted = state

    def _standardizer(self, rows):
        mu = rows.mean(axis=0)
        sd = rows.std(axis=0)
        return {"mean": mu.tolist(), "std": np.where(sd > 0, sd, 1.0).tolist()}

    @staticmethod
    def _standardize(x, stats):
        return (x - np.asarray(stats["mean"])) / np.asarray(stats["std"])


def _heads(model, z):
    probs = nc.softmax(model.classifier(z), axis=1)
    rate = nc.sigmoid(model.regressor(z)).reshape(z.shape[0])
    return Output(probs, rate)


def _flat_dim(corpus, tfidf_vocab):
    return corpus.vocab.total + corpus.categorical_dim + len(tfidf_vocab)


# -------------------------------------------------------------------- logreg
@dataclass
class LogRegConfig:
    inverse_l2: float = 1.2
    iterations: int = 300
    learning_rate: float = 0.05
    seed: int = 0


class _FlatFeatureModel(_FeatureModel):
    """Standardized [doctor code counts; trial one-hots; trial tf-idf] rows."""

    def _fit_state(self, corpus, train_samples):
        state = super()._fit_state(corpus, train_samples)
        tfidf = TfidfVectorizer(state["tfidf"]["vocabulary"], state["tfidf"]["idf"])
        feats = BaselineFeatures(corpus, tfidf)
        state["standardize"] = self._standardizer(feats.flat(*sample_indices(corpus, train_samples)))
        return state

    def _check_dims(self):
        if _flat_dim(self.data.corpus, self.tfidf.vocabulary) != self.n_features:
            raise ValidationError("feature width does not match the fitted model")

    def features(self, doc_idx, trial_idx):
        return self._standardize(self.data.flat(doc_idx, trial_idx), self.fitted["standardize"])


class LogRegBaseline(_FlatFeatureModel):
    """Multinomial logistic regression on standardized flat features, L2-penalized."""

    kind = "logreg"

    def __init__(self, n_features, config=None, zero_init=False):
        super().__init__()
        self.config = config or LogRegConfig()
        rng = np.random.default_rng(self.config.seed)
        self.linear = nc.Linear(n_features, N_BINS, rng)
        if zero_init:
            self.linear.W.data[...] = 0.0
        self.n_features = n_features

    def init_args(self):
        return {"n_features": self.n_features, "config": asdict(self.config)}

    def logits(self, x):
        return self.linear(x)

    def forward(self, doc_idx, trial_idx):
        probs = nc.softmax(self.logits(self.features(doc_idx, trial_idx)), axis=1)
        return Output(probs, nc.Tensor(expected_rate(probs.data)))

    def fit(self, train_samples):
        """Full-batch Adam on mean cross-entropy + ||W||^2 / (2 C n)."""
        if not train_samples:
            raise ValidationError("no training samples")
        cfg = self.config
        x = self.features(*sample_indices(self.data.corpus, train_samples))
        y, _ = sample_targets(train_samples)
        penalty = 1.0 / (2.0 * cfg.inverse_l2 * len(y))
        opt = nc.Adam(self.parameters(), learning_rate=cfg.learning_rate, decay=0.0)
        history = []
        for it in range(cfg.iterations):
            probs = nc.softmax(self.logits(x), axis=1)
            loss = nc.cross_entropy(probs, y) + nc.tsum(self.linear.W * self.linear.W) * penalty
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(f"logistic regression loss became {value} at iteration {it}")
            history.append(value)
            nc.backward(loss)
            opt.step()
        return history


# ----------------------------------------------------------------------- mlp
MLP_SIZES = (512, 512, 512, 256, 128, 64)


class MLPBaseline(_FlatFeatureModel):
    """Flat features through a ReLU MLP, then affine softmax and sigmoid rate heads."""

    kind = "mlp"

    def __init__(self, n_features, sizes=MLP_SIZES, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.body = nc.MLP((n_features,) + tuple(sizes), rng)
        self.classifier = nc.Linear(sizes[-1], N_BINS, rng)
        self.regressor = nc.Linear(sizes[-1], 1, rng)
        self.n_features = n_features
        self.sizes = tuple(sizes)
        self.seed = seed

    def init_args(self):
        return {"n_features": self.n_features, "sizes": list(self.sizes), "seed": self.seed}

    def forward(self, doc_idx, trial_idx):
        return _heads(self, nc.relu(self.body(self.features(doc_idx, trial_idx))))


# ---------------------------------------------------------------------- lstm
def doctor_visit_sequence(doctor, vocab):
    """Every visit of every patient, ordered by time index (stable), as a (T, V) array."""
    visits = [v for p in doctor.patients for v in p.visits]
    visits.sort(key=lambda v: v.time_index)
    return np.stack([v.multi_hot(vocab) for v in visits])


class LSTMBaseline(_FeatureModel):
    """Two stacked LSTMs over a doctor's time-ordered visits; last state joins trial features."""

    kind = "lstm"

    def __init__(self, visit_dim, categorical_dim, text_dim, hidden=(128, 128), trial_dim=64, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.layers = [nc.LSTM(n_in, n_out, rng) for n_in, n_out in zip((visit_dim,) + tuple(hidden)[:-1], hidden)]
        self.trial_cat = nc.Linear(categorical_dim, trial_dim, rng)
        self.trial_text = nc.Linear(text_dim, trial_dim, rng)
        head_in = hidden[-1] + 2 * trial_dim
        self.classifier = nc.Linear(head_in, N_BINS, rng)
        self.regressor = nc.Linear(head_in, 1, rng)
        self.dims = (visit_dim, categorical_dim, text_dim)
        self.sizes = {"hidden": list(hidden), "trial_dim": trial_dim, "seed": seed}
        self._sequences = {}

    def init_args(self):
        return dict(zip(("visit_dim", "categorical_dim", "text_dim"), self.dims), **self.sizes)

    def _check_dims(self):
        c = self.data.corpus
        if (c.vocab.total, c.categorical_dim, len(self.tfidf.vocabulary)) != self.dims:
            raise ValidationError("corpus features do not match the fitted model")
        self._sequences = {}

    def sequence(self, d):
        if d not in self._sequences:
            self._sequences[d] = doctor_visit_sequence(self.data.corpus.doctors[d], self.data.corpus.vocab)
        return self._sequences[d]

    def encode_doctors(self, doctors):
        seqs = [self.sequence(int(d)) for d in doctors]
        lengths = np.array([s.shape[0] for s in seqs])
        x = np.zeros((len(seqs), lengths.max(), seqs[0].shape[1]))
        for i, s in enumerate(seqs):
            x[i, : s.shape[0]] = s
        h = x
        for layer in self.layers:
            h = layer(h)
        return h[np.arange(len(seqs)), lengths - 1]

    def forward(self, doc_idx, trial_idx):
        doc_idx = np.asarray(doc_idx, dtype=np.intp)
        trial_idx = np.asarray(trial_idx, dtype=np.intp)
        docs, pos = np.unique(doc_idx, return_inverse=True)
        state = nc.take(self.encode_doctors(docs), pos)
        cat = nc.relu(self.trial_cat(self.data.trial_cat[trial_idx]))
        text = nc.relu(self.trial_text(self.data.trial_tfidf[trial_idx]))
        return _heads(self, nc.concat([state, cat, text], axis=1))


# ----------------------------------------------------------------- deepmatch
class DeepMatchBaseline(_FeatureModel):
    """Top-code counts -> ReLU layer (200); trial one-hots + tf-idf -> ReLU layer (300)."""

    kind = "deepmatch"

    def __init__(self, n_codes, trial_in, doctor_dim=200, trial_dim=300, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.doctor = nc.Linear(n_codes, doctor_dim, rng)
        self.trial = nc.Linear(trial_in, trial_dim, rng)
        self.classifier = nc.Linear(doctor_dim + trial_dim, N_BINS, rng)
        self.regressor = nc.Linear(doctor_dim + trial_dim, 1, rng)
        self.dims = (n_codes, trial_in)
        self.sizes = {"doctor_dim": doctor_dim, "trial_dim": trial_dim, "seed": seed}

    def init_args(self):
        return dict(zip(("n_codes", "trial_in"), self.dims), **self.sizes)

    def _fit_state(self, corpus, train_samples):
        state = super()._fit_state(corpus, train_samples)
        codes = top_codes(corpus, self.dims[0])
        doc, _ = sample_indices(corpus, train_samples)
        counts = np.array([doctor_code_counts(corpus.doctors[d], corpus.vocab)[codes] for d in doc], dtype=float)
        state["codes"] = [corpus.vocab.all_codes()[i] for i in codes]
        state["standardize"] = self._standardizer(counts)
        return state

    def _check_dims(self):
        names = {c: i for i, c in enumerate(self.data.corpus.vocab.all_codes())}
        missing = [c for c in self.fitted["codes"] if c not in names]
        if missing:
            raise ValidationError(f"corpus lacks fitted top codes {missing[:3]}")
        self.code_index = np.array([names[c] for c in self.fitted["codes"]], dtype=np.intp)
        trial_in = self.data.corpus.categorical_dim + len(self.tfidf.vocabulary)
        if (len(self.code_index), trial_in) != self.dims:
            raise ValidationError("corpus features do not match the fitted model")

    def doctor_features(self, doc_idx):
        counts = self.data.counts[doc_idx][:, self.code_index].astype(np.float64)
        return self._standardize(counts, self.fitted["standardize"])

    def forward(self, doc_idx, trial_idx):
        doc_idx = np.asarray(doc_idx, dtype=np.intp)
        trial_idx = np.asarray(trial_idx, dtype=np.intp)
        d = nc.relu(self.doctor(self.doctor_features(doc_idx)))
        t_in = np.concatenate([self.data.trial_cat[trial_idx], self.data.trial_tfidf[trial_idx]], axis=1)
        t = nc.relu(self.trial(t_in))
        return _heads(self, nc.concat([d, t], axis=1))


# ------------------------------------------------------------------ factory
BASELINE_KINDS = ("median", "logreg", "mlp", "lstm", "deepmatch")


def make_baseline(kind, corpus, train_samples, seed=0, top_k=50):
    """Construct a baseline, fit its preprocessing on ``train_samples`` and bind it."""
    if kind == "median":
        return MedianBaseline().fit(corpus, train_samples)
    tfidf = TfidfVectorizer.fit(t.text_tokens for t in _train_trials(corpus, train_samples))
    n_text = len(tfidf.vocabulary)
    if kind == "logreg":
        model = LogRegBaseline(_flat_dim(corpus, tfidf.vocabulary), LogRegConfig(seed=seed))
    elif kind == "mlp":
        model = MLPBaseline(_flat_dim(corpus, tfidf.vocabulary), seed=seed)
    elif kind == "lstm":
        model = LSTMBaseline(corpus.vocab.total, corpus.categorical_dim, n_text, seed=seed)
    elif kind == "deepmatch":
        model = DeepMatchBaseline(min(top_k, corpus.vocab.total), corpus.categorical_dim + n_text, seed=seed)
    else:
        raise ValidationError(f"unknown baseline {kind!r}; choose from {', '.join(BASELINE_KINDS)}")
    return model.bind(corpus, train_samples)


def build_baseline(kind, args):
    """Rebuild an unfitted baseline from ``init_args()`` (used by checkpoints)."""
    args = dict(args)
    if kind == "median":
        return MedianBaseline()
    if kind == "logreg":
        return LogRegBaseline(args["n_features"], LogRegConfig(**args["config"]))
    if kind == "mlp":
        return MLPBaseline(args["n_features"], tuple(args["sizes"]), args["seed"])
    if kind == "lstm":
        return LSTMBaseline(args["visit_dim"], args["categorical_dim"], args["text_dim"],
                            tuple(args["hidden"]), args["trial_dim"], args["seed"])
    if kind == "deepmatch":
        return DeepMatchBaseline(args["n_codes"], args["trial_in"], args["doctor_dim"], args["trial_dim"],
                                 args["seed"])
    raise ValidationError(f"unknown baseline {kind!r}")
