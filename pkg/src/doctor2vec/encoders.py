"""Patient (visit -> bi-LSTM -> attention) and trial (categorical MLP x text) encoders."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ContractError, ValidationError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a_64(token):
    h = FNV_OFFSET
    for byte in token.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


class HashedTextEmbedder:
    """Signed feature hashing of tokens, L2-normalized.

    bucket = fnv1a_64(token) mod output_dim; the sign is -1 when bit 63 of
    the same hash is set.  Stable across runs and platforms.
    """

    mode = "hashed"

    def __init__(self, output_dim=768):
        self.output_dim = int(output_dim)

    def __call__(self, tokens):
        if not tokens:
            raise ValidationError("cannot embed an empty token list")
        v = np.zeros(self.output_dim)
        for tok in tokens:
            h = fnv1a_64(tok)
            v[h % self.output_dim] += -1.0 if (h >> 63) & 1 else 1.0
        norm = np.linalg.norm(v)
        return v / norm if norm > 0 else v


class PrecomputedTextEmbedder:
    """Mean of per-token vectors; unknown tokens are skipped."""

    mode = "precomputed"

    def __init__(self, vectors, output_dim):
        self.output_dim = int(output_dim)
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        for k, v in self.vectors.items():
            if v.shape != (self.output_dim,):
                raise ValidationError(f"vector for {k!r} has shape {v.shape}")

    @classmethod
    def from_file(cls, path):
        """Read ``#dim<TAB>n`` then ``token<TAB>f1 f2 ... fn`` lines."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or not lines[0].startswith("#dim\t"):
            raise ValidationError(f"{path}: missing '#dim<TAB>n' header")
        dim = int(lines[0].split("\t", 1)[1])
        vectors = {}
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            token, _, rest = line.partition("\t")
            values = [float(x) for x in rest.split()]
            if len(values) != dim:
                raise ValidationError(f"{path}:{lineno}: expected {dim} values, got {len(values)}")
            vectors[token] = values
        return cls(vectors, dim)

    def __call__(self, tokens):
        known = [self.vectors[t] for t in tokens if t in self.vectors]
        if not known:
            raise ValidationError("no token has a precomputed vector")
        return np.mean(known, axis=0)


def make_text_embedder(mode="hashed", output_dim=768, path=None):
    if mode == "hashed":
        return HashedTextEmbedder(output_dim)
    if mode == "precomputed":
        if path is None:
            raise ValidationError("precomputed text embedder needs an embedding file")
        return PrecomputedTextEmbedder.from_file(path)
    raise ValidationError(f"unknown text embedder mode {mode!r}")


def pad_sequences(seqs):
    """Stack (T_i, d) arrays into a zero-padded (n, max T, d) array plus lengths."""
    lengths = np.array([s.shape[0] for s in seqs], dtype=np.intp)
    out = np.zeros((len(seqs), int(lengths.max()), seqs[0].shape[1]))
    for i, s in enumerate(seqs):
        out[i, : s.shape[0]] = s
    return out, lengths


class PatientEncoder(nc.Module):
    """h_t = W_emb v_t; g = biLSTM(h); alpha = softmax(w . g_t); I = sum_t alpha_t g_t.

    The score has no bias: softmax ignores a shift shared by every step.
    """

    def __init__(self, visit_dim, d_h, d_g, rng):
        self.visit_dim = visit_dim
        self.W_emb = nc.Linear(visit_dim, d_h, rng, bias=False)
        self.forward_lstm = nc.LSTM(d_h, d_g, rng)
        self.backward_lstm = nc.LSTM(d_h, d_g, rng)
        self.attention = nc.Linear(2 * d_g, 1, rng, bias=False)

    @property
    def output_dim(self):
        return 2 * self.forward_lstm.n_hidden

    def embed_visits(self, visits):
        visits = nc.as_tensor(visits)
        if visits.shape[-1] != self.visit_dim:
            raise ContractError(f"visit vectors have {visits.shape[-1]} entries, expected {self.visit_dim}")
        return self.W_emb(visits)

    def __call__(self, visits, lengths):
        """Encode a padded (n, T, visit_dim) batch; returns I (n, 2 d_g) and alpha (n, T)."""
        x = np.asarray(visits, dtype=np.float64)
        if x.ndim != 3:
            raise ContractError("expected (patients, visits, visit_dim)")
        n, steps, _ = x.shape
        lengths = np.asarray(lengths)
        if np.any(lengths < 1) or np.any(lengths > steps):
            raise ContractError("every patient needs between 1 and T visits")
        h = self.embed_visits(x.reshape(n * steps, -1)).reshape(n, steps, -1)
        fwd = self.forward_lstm(h)
        bwd = nc.reverse_padded(self.backward_lstm(nc.reverse_padded(h, lengths)), lengths)
        g = nc.concat([fwd, bwd], axis=2)
        scores = self.attention(g.reshape(n * steps, self.output_dim)).reshape(n, steps)
        mask = np.arange(steps)[None, :] < lengths[:, None]
        alpha = nc.softmax(scores, axis=1, mask=mask)
        pooled = nc.matmul(alpha.reshape(n, 1, steps), g).reshape(n, self.output_dim)
        return pooled, alpha


class TrialEncoder(nc.Module):
    """Q = (W_ci MLP(one-hots) + b_ci) * (W_ti text + b_ti)."""

    def __init__(self, categorical_dim, text_dim, cat_layers, rng):
        self.categorical_dim = categorical_dim
        self.text_dim = text_dim
        self.categorical = nc.MLP((categorical_dim,) + tuple(cat_layers), rng)
        d_q = cat_layers[-1]
        self.W_ci = nc.Linear(d_q, d_q, rng)
        self.W_ti = nc.Linear(text_dim, d_q, rng)

    @property
    def output_dim(self):
        return self.W_ci.W.shape[1]

    def embed_categorical(self, onehots):
        x = nc.as_tensor(onehots)
        if x.shape[-1] != self.categorical_dim:
            raise ContractError(f"categorical input has {x.shape[-1]} entries, expected {self.categorical_dim}")
        return self.categorical(x)

    def __call__(self, onehots, text):
        text = nc.as_tensor(text)
        if text.shape[-1] != self.text_dim:
            raise ContractError(f"text embedding has {text.shape[-1]} entries, expected {self.text_dim}")
        return fuse_trial(self.embed_categorical(onehots), text, self)


def fuse_trial(cat_emb, text_emb, encoder):
    a = encoder.W_ci(cat_emb)
    b = encoder.W_ti(text_emb)
    if a.shape != b.shape:
        raise ContractError(f"projected trial factors differ in shape: {a.shape} vs {b.shape}")
    return a * b


# ---- single-entity conveniences over the batched modules ----------------------
def visit_matrix(patient, vocab):
    return np.stack([v.multi_hot(vocab) for v in patient.visits])


def embed_visit(visit, vocab, encoder):
    with nc.no_grad():
        return encoder.embed_visits(visit.multi_hot(vocab)).data


def encode_patient(patient, vocab, encoder):
    """Returns (I(k), attention over visits) as arrays."""
    x = visit_matrix(patient, vocab)
    with nc.no_grad():
        pooled, alpha = encoder(x[None], [x.shape[0]])
    return pooled.data[0], alpha.data[0]


def trial_onehots(trial, categories):
    return np.concatenate(trial.one_hots(categories))


def embed_trial_categorical(trial, categories, encoder):
    with nc.no_grad():
        return encoder.embed_categorical(trial_onehots(trial, categories)).data


def embed_trial_text(trial, embedder):
    return embedder(trial.text_tokens)
