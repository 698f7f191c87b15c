"""Dynamic doctor memory network, prediction heads and the training loop.

A doctor's patients are encoded into memory rows I_f (input MLP), the rows
are generalized by an LSTM run over the patient sequence into M_d, and the
trial query attends over M_d.  The response Doc_emb is the attention-
weighted sum of the I_f rows.  [Doc_emb; Q_emb; Doc_static] feeds an affine
softmax head (5 enrollment bins) and an affine sigmoid head (normalized
rate).
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import numcore as nc
from .datamodel import N_BINS
from .encoders import PatientEncoder, TrialEncoder, make_text_embedder, pad_sequences, trial_onehots
from .errors import ContractError, TrainingDivergedError, ValidationError
from .metrics import macro_pr_auc

log = logging.getLogger(__name__)


@dataclass
class ModelConfig:
    d_h: int = 128
    d_g: int = 124
    cat_layers: tuple = (128, 256, 128, 64)
    mem_layers: tuple = (128, 128, 64)
    text_mode: str = "hashed"
    text_dim: int = 768
    text_path: str | None = None
    k_max: int = 32
    generalization: str = "lstm"
    generalization_iters: int = 1
    seed: int = 0

    def __post_init__(self):
        self.cat_layers = tuple(self.cat_layers)
        self.mem_layers = tuple(self.mem_layers)
        if self.generalization not in ("lstm", "identity"):
            raise ValidationError("generalization must be 'lstm' or 'identity'")
        if min(self.d_h, self.d_g, self.k_max, self.generalization_iters) < 1:
            raise ValidationError("model sizes must be positive")

    @property
    def d_q(self):
        return self.cat_layers[-1]

    @property
    def d_m(self):
        return self.mem_layers[-1]

    def to_dict(self):
        return asdict(self)


L2_SCOPES = ("recurrent", "weights")


def penalized_parameters(params, scope):
    """Kernels under the L2 penalty: LSTM input/recurrent kernels, or every weight matrix."""
    if scope == "recurrent":
        return [p for name, p in params.items() if name.endswith((".W_x", ".W_h"))]
    return [p for name, p in params.items() if p.ndim == 2]


def l2_penalty(tensors):
    total = None
    for t in tensors:
        term = nc.tsum(t * t)
        total = term if total is None else total + term
    return total


@dataclass
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 200
    learning_rate: float = 1e-3
    decay: float = 0.02
    seed: int = 0
    class_weight: float = 1.0
    regression_weight: float = 1.0
    l2: float = 0.0
    l2_scope: str = "recurrent"

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 0 or self.learning_rate < 0 or self.l2 < 0:
            raise ValidationError("batch_size must be positive; epochs, learning rate and l2 non-negative")
        if self.l2_scope not in L2_SCOPES:
            raise ValidationError(f"l2_scope must be one of {', '.join(L2_SCOPES)}")

    def to_dict(self):
        return asdict(self)


# Narrower layers and a shorter schedule that fit the default synthetic corpus
# on one CPU core in about two minutes per seed.
DESK_MODEL = dict(d_h=32, d_g=32, cat_layers=(64, 32), mem_layers=(64, 32), text_dim=128)
DESK_TRAIN = dict(max_epochs=60, learning_rate=3e-3)


@dataclass
class Output:
    probs: nc.Tensor  # (B, 5)
    rate: nc.Tensor  # (B,)
    attention: np.ndarray | None = None  # (B, K) over the doctor's memory rows
    attention_mask: np.ndarray | None = None


# ---------------------------------------------------------------- corpus views
class CorpusArrays:
    """Dense per-doctor and per-trial arrays for the memory model."""

    def __init__(self, corpus, k_max, text_embedder):
        self.corpus = corpus
        self.k_max = k_max
        self.visit_dim = corpus.vocab.total
        self.static = np.array([d.static_features for d in corpus.doctors], dtype=np.float64)
        self.trial_cat = np.array([trial_onehots(t, corpus.categories) for t in corpus.trials])
        self.trial_text = np.array([text_embedder(t.text_tokens) for t in corpus.trials])
        self._patients = {}

    def kept_patients(self, d):
        """Indices of the doctor's retained patients: the k_max most recent, record order kept."""
        patients = self.corpus.doctors[d].patients
        if len(patients) <= self.k_max:
            return list(range(len(patients)))
        last = [(p.visits[-1].time_index, i) for i, p in enumerate(patients)]
        return sorted(i for _, i in sorted(last)[-self.k_max:])

    def patient_matrices(self, d):
        if d not in self._patients:
            doc = self.corpus.doctors[d]
            vocab = self.corpus.vocab
            mats = []
            for k in self.kept_patients(d):
                m = np.zeros((len(doc.patients[k].visits), self.visit_dim), dtype=np.uint8)
                for t, v in enumerate(doc.patients[k].visits):
                    m[t, list(v.flat_indices(vocab))] = 1
                mats.append(m)
            self._patients[d] = mats
        return self._patients[d]


def sample_indices(corpus, samples):
    doc = np.array([corpus.doctor_index[s.doctor_id] for s in samples], dtype=np.intp)
    trial = np.array([corpus.trial_index[s.trial_id] for s in samples], dtype=np.intp)
    return doc, trial


def sample_targets(samples):
    return (np.array([s.label.bin for s in samples], dtype=np.intp),
            np.array([s.label.normalized_rate for s in samples], dtype=np.float64))


# ----------------------------------------------------------------- the network
@dataclass
class MemoryBank:
    input_rows: nc.Tensor  # I_f, (D, K, d_m)
    memory_rows: nc.Tensor  # M_d, (D, K, d_m)
    mask: np.ndarray  # (D, K) True where a patient exists


class MemoryNetwork(nc.Module):
    def __init__(self, patient_dim, mem_layers, d_q, rng, generalization="lstm", iterations=1):
        self.input_mlp = nc.MLP((patient_dim,) + tuple(mem_layers), rng)
        d_m = mem_layers[-1]
        self.generalizer = nc.LSTM(d_m, d_m, rng)
        self.W_q = nc.Linear(d_q, d_m, rng, bias=False)
        self.generalization = generalization
        self.iterations = iterations

    def build(self, patient_vectors, slots, mask):
        """Lay out I_f rows as (D, K, d_m) using ``slots`` (row index or -1 per slot)."""
        i_f = self.input_mlp(patient_vectors)
        d_m = i_f.shape[1]
        padded = nc.concat([i_f, np.zeros((1, d_m))], axis=0)
        idx = np.where(slots >= 0, slots, i_f.shape[0])
        rows = nc.take(padded, idx.reshape(-1)).reshape(*slots.shape, d_m)
        memory = rows
        if self.generalization == "lstm":
            for _ in range(self.iterations):
                memory = self.generalizer(memory)
        return MemoryBank(rows, memory, mask)

    def query(self, bank, query, which=None):
        """Attention over memory rows and the response; ``which`` maps queries to banks."""
        q = self.W_q(nc.as_tensor(query))
        if q.ndim != 2:
            raise ContractError("queries must be a (B, d_q) matrix")
        b, d_m = q.shape
        if bank.memory_rows.shape[2] != d_m:
            raise ContractError("query projection and memory widths differ")
        which = np.arange(b) if which is None else np.asarray(which)
        mem = nc.take(bank.memory_rows, which)
        inp = nc.take(bank.input_rows, which)
        k = mem.shape[1]
        scores = nc.matmul(mem, q.reshape(b, d_m, 1)).reshape(b, k)
        attention = nc.softmax(scores, axis=1, mask=bank.mask[which])
        response = nc.matmul(attention.reshape(b, 1, k), inp).reshape(b, d_m)
        return attention, response


class Doctor2Vec(nc.Module):
    kind = "doctor2vec"

    def __init__(self, visit_dim, categorical_dim, static_dim, config=None):
        self.config = config or ModelConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.patient = PatientEncoder(visit_dim, cfg.d_h, cfg.d_g, rng)
        self.trial = TrialEncoder(categorical_dim, cfg.text_dim, cfg.cat_layers, rng)
        self.memory = MemoryNetwork(2 * cfg.d_g, cfg.mem_layers, cfg.d_q, rng,
                                    cfg.generalization, cfg.generalization_iters)
        head_in = cfg.d_m + cfg.d_q + static_dim
        self.classifier = nc.Linear(head_in, N_BINS, rng)
        self.regressor = nc.Linear(head_in, 1, rng)
        self.dims = {"visit_dim": visit_dim, "categorical_dim": categorical_dim, "static_dim": static_dim}
        self.data = None

    @classmethod
    def for_corpus(cls, corpus, config=None):
        model = cls(corpus.vocab.total, corpus.categorical_dim, len(corpus.static_feature_names), config)
        model.bind(corpus)
        return model

    def bind(self, corpus, train_samples=None):
        cfg = self.config
        if corpus.vocab.total != self.dims["visit_dim"] or corpus.categorical_dim != self.dims["categorical_dim"]:
            raise ValidationError("corpus dimensions do not match the model")
        embedder = make_text_embedder(cfg.text_mode, cfg.text_dim, cfg.text_path)
        self.data = CorpusArrays(corpus, cfg.k_max, embedder)
        return self

    def init_args(self):
        return dict(self.dims, config=self.config.to_dict())

    def fitted_state(self):
        return {}

    def load_fitted_state(self, state):
        pass

    def encode_doctors(self, doctors):
        """Memory banks for doctor indices ``doctors`` (in that order)."""
        mats, slots = [], []
        for d in doctors:
            start = len(mats)
            mats.extend(self.data.patient_matrices(int(d)))
            slots.append(list(range(start, len(mats))))
        k = max(len(s) for s in slots)
        slot_arr = np.full((len(doctors), k), -1, dtype=np.intp)
        for i, s in enumerate(slots):
            slot_arr[i, : len(s)] = s
        visits, lengths = pad_sequences(mats)
        pooled, _ = self.patient(visits, lengths)
        return self.memory.build(pooled, slot_arr, slot_arr >= 0)

    def encode_trials(self, trials):
        return self.trial(self.data.trial_cat[trials], self.data.trial_text[trials])

    def forward(self, doc_idx, trial_idx):
        if self.data is None:
            raise ContractError("bind the model to a corpus before calling forward")
        doc_idx = np.asarray(doc_idx, dtype=np.intp)
        trial_idx = np.asarray(trial_idx, dtype=np.intp)
        docs, doc_pos = np.unique(doc_idx, return_inverse=True)
        trials, trial_pos = np.unique(trial_idx, return_inverse=True)
        bank = self.encode_doctors(docs)
        q = nc.take(self.encode_trials(trials), trial_pos)
        attention, doc_emb = self.memory.query(bank, q, doc_pos)
        z = nc.concat([doc_emb, q, self.data.static[doc_idx]], axis=1)
        probs = nc.softmax(self.classifier(z), axis=1)
        rate = nc.sigmoid(self.regressor(z)).reshape(len(doc_idx))
        return Output(probs, rate, attention.data, bank.mask[doc_pos])


# ---------------------------------------------------------- single-pair views
def build_memory(model, doctor_id):
    d = model.data.corpus.doctor_index[doctor_id]
    with nc.no_grad():
        return model.encode_doctors(np.array([d]))


def query_memory(model, bank, query):
    with nc.no_grad():
        attention, response = model.memory.query(bank, np.atleast_2d(query), np.zeros(1, dtype=np.intp))
    return attention.data[0], response.data[0]


def predict_enrollment(model, doctor_id, trial_id):
    """(class probabilities, predicted normalized rate, attention over patients)."""
    corpus = model.data.corpus
    if doctor_id not in corpus.doctor_index or trial_id not in corpus.trial_index:
        raise ValidationError(f"unknown doctor {doctor_id!r} or trial {trial_id!r}")
    with nc.no_grad():
        out = model.forward([corpus.doctor_index[doctor_id]], [corpus.trial_index[trial_id]])
    att = None if out.attention is None else out.attention[0][out.attention_mask[0]]
    return out.probs.data[0], float(out.rate.data[0]), att


# ------------------------------------------------------------------- training
def compute_loss(output, bins, rates, class_weight=1.0, regression_weight=1.0):
    """Mean categorical cross-entropy plus mean squared error on the rate head."""
    if len(bins) == 0:
        raise ContractError("empty batch")
    loss = nc.cross_entropy(output.probs, bins) * class_weight
    if regression_weight:
        loss = loss + nc.mse(output.rate, rates) * regression_weight
    return loss


def predict(model, samples, chunk=256):
    """Class probabilities (N, 5) and rates (N,) without recording gradients."""
    doc, trial = sample_indices(model.data.corpus, samples)
    probs, rates = [], []
    with nc.no_grad():
        for i in range(0, len(doc), chunk):
            out = model.forward(doc[i:i + chunk], trial[i:i + chunk])
            probs.append(out.probs.data)
            rates.append(out.rate.data)
    if not probs:
        return np.zeros((0, N_BINS)), np.zeros(0)
    return np.concatenate(probs), np.concatenate(rates)


def evaluate_loss(model, samples, config, chunk=256):
    doc, trial = sample_indices(model.data.corpus, samples)
    bins, rates = sample_targets(samples)
    total = 0.0
    with nc.no_grad():
        for i in range(0, len(doc), chunk):
            out = model.forward(doc[i:i + chunk], trial[i:i + chunk])
            loss = compute_loss(out, bins[i:i + chunk], rates[i:i + chunk],
                                config.class_weight, config.regression_weight)
            total += loss.item() * len(bins[i:i + chunk])
    return total / len(doc)


def validation_score(model, samples):
    if not samples:
        return float("nan")
    probs, _ = predict(model, samples)
    bins, _ = sample_targets(samples)
    try:
        return macro_pr_auc(probs, bins)[0]
    except ValidationError:
        return float("nan")


@dataclass
class TrainResult:
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_score: float = float("nan")


@contextmanager
def _divergence_guard(params, epoch):
    """Report contract failures caused by non-finite parameters as divergence."""
    try:
        yield
    except ContractError as exc:
        bad = sorted(n for n, p in params.items() if not np.all(np.isfinite(p.data)))
        if not bad:
            raise
        raise TrainingDivergedError(f"non-finite parameters {bad[:3]} at epoch {epoch}") from exc


def train(model, train_samples, val_samples, config=None):
    """Mini-batch Adam; keeps the parameters with the best validation macro PR-AUC.

    ``log[0]`` holds the loss of the initial parameters over the training set,
    ``log[e]`` the mean mini-batch loss of epoch ``e``.
    """
    config = config or TrainConfig()
    train_samples = list(train_samples)
    if not train_samples:
        raise ValidationError("no training samples")
    params = model.parameters()
    penalized = penalized_parameters(params, config.l2_scope) if config.l2 > 0 else []
    opt = nc.Adam(params, learning_rate=config.learning_rate, decay=config.decay)
    rng = np.random.default_rng(config.seed)
    doc, trial = sample_indices(model.data.corpus, train_samples)
    bins, rates = sample_targets(train_samples)
    result = TrainResult()
    best = model.state_arrays()
    with _divergence_guard(params, 0):
        score = validation_score(model, val_samples)
        initial_loss = evaluate_loss(model, train_samples, config)
    result.best_score = score
    result.log.append({"epoch": 0, "train_loss": initial_loss,
                       "val_pr_auc": score, "learning_rate": opt.learning_rate})
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(doc))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            with _divergence_guard(params, epoch):
                out = model.forward(doc[idx], trial[idx])
                loss = compute_loss(out, bins[idx], rates[idx], config.class_weight, config.regression_weight)
            value = loss.item()  # logged without the penalty so epoch 0 and later epochs compare
            if penalized:
                loss = loss + l2_penalty(penalized) * config.l2
            if not np.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            nc.backward(loss)
            opt.step()
            total += value * len(idx)
        opt.end_epoch()
        with _divergence_guard(params, epoch):
            score = validation_score(model, val_samples)
        entry = {"epoch": epoch, "train_loss": total / len(doc), "val_pr_auc": score,
                 "learning_rate": opt.learning_rate}
        result.log.append(entry)
        log.info("epoch %d loss %.5f val_pr_auc %.4f", epoch, entry["train_loss"], score)
        if np.isfinite(score) and (not np.isfinite(result.best_score) or score > result.best_score):
            result.best_score = score
            result.best_epoch = epoch
            best = model.state_arrays()
    model.load_arrays(best)
    return result
