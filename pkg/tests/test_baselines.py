"""Median, logistic regression, LSTM and DeepMatch-style baselines."""

import dataclasses
from collections import Counter

import numpy as np
import pytest
from scipy.special import expit

from doctor2vec.baselines import (
    AREA,
    DeepMatchBaseline,
    LogRegBaseline,
    LogRegConfig,
    MedianBaseline,
    TfidfVectorizer,
    doctor_visit_sequence,
    make_baseline,
    top_codes,
)
from doctor2vec.datamodel import EnrollmentLabel, Patient, Visit, bin_rate
from doctor2vec.errors import ValidationError
from doctor2vec.memnet import sample_indices, sample_targets


def _with_rate(sample, rate):
    return dataclasses.replace(sample, label=EnrollmentLabel(rate, rate, bin_rate(rate)))


def _trials_by_area(corpus):
    out = {}
    for t in corpus.trials:
        out.setdefault(t.categorical[AREA], []).append(t.trial_id)
    return out


def _train_split(corpus, n_train=9):
    ids = [t.trial_id for t in corpus.trials][:n_train]
    return [s for s in corpus.samples if s.trial_id in ids]


def _replace_doctor(corpus, d, **changes):
    doctors = list(corpus.doctors)
    doctors[d] = dataclasses.replace(doctors[d], **changes)
    return dataclasses.replace(corpus, doctors=tuple(doctors))


class TestMedian:
    def _fit(self, corpus, rates):
        areas = _trials_by_area(corpus)
        area = sorted(areas)[0]
        samples = [s for s in corpus.samples if s.trial_id in areas[area]][: len(rates)]
        return MedianBaseline().fit(corpus, [_with_rate(s, r) for s, r in zip(samples, rates)]), area

    def test_area_median(self, small_corpus):
        model, area = self._fit(small_corpus, [0.1, 0.5, 0.9])
        assert model.rate_for(area) == 0.5

    def test_unseen_area_uses_global_median(self, small_corpus):
        model, _ = self._fit(small_corpus, [0.1, 0.5, 0.9])
        assert model.rate_for("no-such-area") == 0.5

    def test_constant_rates(self, small_corpus):
        samples = [_with_rate(s, 0.3) for s in small_corpus.samples]
        model = MedianBaseline().fit(small_corpus, samples)
        out = model.forward(*sample_indices(small_corpus, samples))
        np.testing.assert_array_equal(out.rate.data, 0.3)
        assert np.all(out.probs.data.argmax(axis=1) == bin_rate(0.3))

    def test_sample_order_invariance(self, small_corpus):
        samples = list(small_corpus.samples)
        a = MedianBaseline().fit(small_corpus, samples)
        b = MedianBaseline().fit(small_corpus, samples[::-1])
        assert a.fitted_state() == b.fitted_state()

    def test_empty_training_set(self, small_corpus):
        with pytest.raises(ValidationError):
            MedianBaseline().fit(small_corpus, [])


class TestTfidf:
    def test_idf_and_normalization(self):
        vec = TfidfVectorizer.fit([["a", "b"], ["a"]])
        assert vec.vocabulary == ("a", "b")
        np.testing.assert_allclose(vec.idf, [1.0, np.log(1.5) + 1.0])
        x = vec.transform(["a", "a", "b", "zzz"])
        np.testing.assert_allclose(x, np.array([2.0, np.log(1.5) + 1.0]) / np.hypot(2.0, np.log(1.5) + 1.0))

    def test_unknown_tokens_only(self):
        np.testing.assert_array_equal(TfidfVectorizer.fit([["a"]]).transform(["q"]), [0.0])


class TestLogReg:
    def test_zero_init_zero_iterations_is_uniform(self, small_corpus):
        train = _train_split(small_corpus)
        tmp = make_baseline("logreg", small_corpus, train)
        model = LogRegBaseline(tmp.n_features, LogRegConfig(iterations=0), zero_init=True).bind(small_corpus, train)
        assert model.fit(train) == []
        np.testing.assert_array_equal(model.forward(*sample_indices(small_corpus, train)).probs.data, 0.2)

    def test_separable_toy_set_fits_exactly(self, small_corpus):
        train = _train_split(small_corpus)
        doc, trial = sample_indices(small_corpus, train)
        bins, _ = sample_targets(train)
        lookup = {(d, t): b for d, t, b in zip(doc, trial, bins)}
        tmp = make_baseline("logreg", small_corpus, train)
        model = LogRegBaseline(2, LogRegConfig(iterations=300, inverse_l2=1e6))
        model.data = tmp.data
        # one class per direction on a circle is linearly separable
        angle = {c: 2 * np.pi * c / 5 for c in range(5)}
        model.features = lambda d, t: np.array([[np.cos(angle[lookup[k]]), np.sin(angle[lookup[k]])]
                                                for k in zip(d, t)])
        model.fit(train)
        pred = model.forward(doc, trial).probs.data.argmax(axis=1)
        np.testing.assert_array_equal(pred, bins)

    def test_stronger_penalty_shrinks_weights(self, small_corpus):
        train = _train_split(small_corpus)
        tmp = make_baseline("logreg", small_corpus, train)
        norms = []
        for c in (10.0, 0.1, 0.001):
            model = LogRegBaseline(tmp.n_features, LogRegConfig(inverse_l2=c, iterations=200)).bind(small_corpus, train)
            model.fit(train)
            norms.append(np.linalg.norm(model.linear.W.data))
        assert norms[0] > norms[1] > norms[2]

    def test_deterministic(self, small_corpus):
        train = _train_split(small_corpus)
        runs = []
        for _ in range(2):
            model = make_baseline("logreg", small_corpus, train, seed=4)
            runs.append(model.fit(train))
        assert runs[0] == runs[1]


def _one_step_lstm(layer, x):
    hsz = layer.n_hidden
    z = x @ layer.W_x.data + layer.b.data
    i, o = expit(z[:hsz]), expit(z[2 * hsz: 3 * hsz])
    return o * np.tanh(i * np.tanh(z[3 * hsz:]))


class TestLSTMBaseline:
    def test_single_visit_doctor(self, small_corpus):
        visit = small_corpus.doctors[0].patients[0].visits[0]
        corpus = _replace_doctor(small_corpus, 0, patients=(Patient((visit,)),))
        model = make_baseline("lstm", corpus, _train_split(corpus), seed=1)
        got = model.encode_doctors([0]).data[0]
        h = visit.multi_hot(corpus.vocab)
        for layer in model.layers:
            h = _one_step_lstm(layer, h)
        np.testing.assert_allclose(got, h, atol=1e-12)

    def test_visits_in_time_order(self, small_corpus):
        seq = doctor_visit_sequence(small_corpus.doctors[1], small_corpus.vocab)
        visits = [(v.time_index, k, v) for k, v in
                  enumerate(v for p in small_corpus.doctors[1].patients for v in p.visits)]
        expected = np.stack([v.multi_hot(small_corpus.vocab) for _, _, v in sorted(visits, key=lambda x: x[:2])])
        np.testing.assert_array_equal(seq, expected)

    def test_deterministic(self, small_corpus):
        train = _train_split(small_corpus)
        idx = sample_indices(small_corpus, train[:6])
        a = make_baseline("lstm", small_corpus, train, seed=2).forward(*idx).probs.data
        b = make_baseline("lstm", small_corpus, train, seed=2).forward(*idx).probs.data
        assert a.tobytes() == b.tobytes()


def _brute_top(corpus, n):
    counts = Counter()
    for d in corpus.doctors:
        for p in d.patients:
            for v in p.visits:
                for kind in ("diagnosis", "procedure", "medication"):
                    codes = getattr(corpus.vocab, kind)
                    counts.update(codes[i] for i in getattr(v, kind))
    names = corpus.vocab.all_codes()
    ranked = sorted(names, key=lambda c: (-counts[c], c))
    return set(ranked[:n]), counts, ranked


class TestDeepMatch:
    @pytest.mark.parametrize("n", [5, 10, 30])
    def test_top_codes_match_brute_force(self, small_corpus, n):
        expected, _, _ = _brute_top(small_corpus, n)
        names = small_corpus.vocab.all_codes()
        assert {names[i] for i in top_codes(small_corpus, n)} == expected

    def test_tie_at_cutoff_is_lexicographic(self, small_corpus):
        _, counts, ranked = _brute_top(small_corpus, 1)
        n = next(k for k in range(1, len(ranked)) if counts[ranked[k - 1]] == counts[ranked[k]])
        names = small_corpus.vocab.all_codes()
        chosen = {names[i] for i in top_codes(small_corpus, n)}
        assert ranked[n - 1] in chosen and ranked[n] not in chosen and ranked[n - 1] < ranked[n]

    def test_codes_outside_top_set_do_not_matter(self, small_corpus):
        train = _train_split(small_corpus)
        model = make_baseline("deepmatch", small_corpus, train, top_k=10, seed=0)
        assert isinstance(model, DeepMatchBaseline)
        kept = set(model.fitted["codes"])
        outside = next(i for i, c in enumerate(small_corpus.vocab.diagnosis) if c not in kept)
        doc = small_corpus.doctors[0]
        extra = Patient((Visit((outside,), (), (), 0), Visit((outside,), (), (), 1)))
        changed = _replace_doctor(small_corpus, 0, patients=doc.patients + (extra,))
        idx = (np.zeros(3, dtype=np.intp), np.arange(3))
        before = model.forward(*idx).probs.data
        after = model.bind(changed).forward(*idx).probs.data
        assert before.tobytes() == after.tobytes()

    def test_deterministic(self, small_corpus):
        train = _train_split(small_corpus)
        idx = sample_indices(small_corpus, train[:6])
        a = make_baseline("deepmatch", small_corpus, train, seed=3).forward(*idx).probs.data
        b = make_baseline("deepmatch", small_corpus, train, seed=3).forward(*idx).probs.data
        assert a.tobytes() == b.tobytes()


class TestFactory:
    def test_unknown_kind(self, small_corpus):
        with pytest.raises(ValidationError):
            make_baseline("forest", small_corpus, _train_split(small_corpus))

    @pytest.mark.parametrize("kind", ["median", "logreg", "mlp", "lstm", "deepmatch"])
    def test_outputs_are_distributions(self, small_corpus, kind):
        train = _train_split(small_corpus)
        out = make_baseline(kind, small_corpus, train).forward(*sample_indices(small_corpus, train[:5]))
        np.testing.assert_allclose(out.probs.data.sum(axis=1), 1.0, atol=1e-12)
        assert np.all((out.rate.data >= 0) & (out.rate.data <= 1))
