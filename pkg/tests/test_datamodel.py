"""Label pipeline, containers, splits and the corpus file format."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doctor2vec.corpus_io import dumps, load_corpus, loads, save_corpus
from doctor2vec.datamodel import (
    CodeVocabulary,
    Patient,
    Visit,
    bin_rate,
    compute_enrollment_rate,
    encode_static,
    label_trial,
    normalize_rates,
    split_trial_disjoint,
)
from doctor2vec.errors import ValidationError
from doctor2vec.syngen import GenConfig, generate_corpus


class TestEnrollmentRate:
    @pytest.mark.parametrize("args, expected", [((12, 2, 5.0), 2.0), ((7, 7, 3.0), 0.0), ((5, 1, 0.5), 8.0)])
    def test_examples(self, args, expected):
        assert compute_enrollment_rate(*args) == expected

    @pytest.mark.parametrize("args", [(5, 1, 0.0), (5, 1, -1.0), (3, 4, 1.0), (3, -1, 1.0)])
    def test_invalid(self, args):
        with pytest.raises(ValidationError):
            compute_enrollment_rate(*args)


class TestNormalize:
    def test_examples(self):
        np.testing.assert_array_equal(normalize_rates([2.0, 0.0, 1.0]), [1.0, 0.0, 0.5])
        np.testing.assert_array_equal(normalize_rates([3.0]), [0.5])
        np.testing.assert_array_equal(normalize_rates([4.0, 4.0]), [0.5, 0.5])

    @given(st.lists(st.floats(0, 1e4), min_size=1, max_size=40))
    @settings(max_examples=300, deadline=None)
    def test_range_and_extremes(self, rates):
        out = normalize_rates(rates)
        assert np.all((out >= 0) & (out <= 1))
        if len(set(rates)) >= 2:
            assert out.min() == 0.0 and out.max() == 1.0
        order = np.argsort(rates, kind="stable")
        assert np.all(np.diff(out[order]) >= 0)


class TestBins:
    @pytest.mark.parametrize("x, b", [(0.45, 2), (0.2, 1), (1.0, 4), (0.0, 0), (0.19999, 0), (0.8, 4), (0.6, 3)])
    def test_boundaries(self, x, b):
        assert bin_rate(x) == b

    @pytest.mark.parametrize("x", [-0.01, 1.01, float("nan")])
    def test_out_of_range(self, x):
        with pytest.raises(ValidationError):
            bin_rate(x)

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_order_preserving(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert bin_rate(lo) <= bin_rate(hi)


class TestContainers:
    def test_visit_multi_hot_order(self):
        vocab = CodeVocabulary(("d0", "d1"), ("p0",), ("m0", "m1", "m2"))
        v = Visit((1,), (0,), (2, 0), 0)
        np.testing.assert_array_equal(v.multi_hot(vocab), [0, 1, 1, 1, 0, 1])

    def test_empty_visit_rejected(self):
        with pytest.raises(ValidationError):
            Visit((), (), (), 0)

    def test_visit_times_must_increase(self):
        with pytest.raises(ValidationError):
            Patient((Visit((0,), (), (), 3), Visit((1,), (), (), 3)))

    def test_vocab_namespaces_disjoint(self):
        with pytest.raises(ValidationError):
            CodeVocabulary(("a",), ("a",), ())

    def test_static_encoding(self):
        vec = encode_static(25, "b", "MD", ("a", "b"), ("MD", "DO"))
        assert vec == (0.5, 0.0, 1.0, 1.0, 0.0)


class TestSplits:
    def test_ten_trials_give_7_2_1(self, small_corpus):
        sub = [t.trial_id for t in small_corpus.trials[:10]]
        samples = [s for s in small_corpus.samples if s.trial_id in sub]
        parts = split_trial_disjoint(small_corpus, seed=4, samples=samples)
        assert [len({s.trial_id for s in p}) for p in parts] == [7, 2, 1]

    def test_disjoint_complete_deterministic(self, corpus):
        parts = split_trial_disjoint(corpus, seed=9)
        ids = [{s.trial_id for s in p} for p in parts]
        assert not (ids[0] & ids[1] or ids[0] & ids[2] or ids[1] & ids[2])
        assert sum(len(p) for p in parts) == len(corpus.samples)
        assert parts == split_trial_disjoint(corpus, seed=9)
        n = len(corpus.trials)
        for k, r in zip(ids, (0.7, 0.2, 0.1)):
            assert abs(len(k) - n * r) <= 1

    def test_too_few_trials(self, small_corpus):
        sub = {t.trial_id for t in small_corpus.trials[:9]}
        with pytest.raises(ValidationError):
            split_trial_disjoint(small_corpus, samples=[s for s in small_corpus.samples if s.trial_id in sub])


class TestLabels:
    def test_labels_from_raw_enrollments(self, corpus):
        for t in corpus.trials[:10]:
            labels = label_trial(t)
            norm = np.array([l.normalized_rate for l in labels.values()])
            raw = [l.raw_rate for l in labels.values()]
            if len(set(raw)) > 1:
                assert norm.min() == 0.0 and norm.max() == 1.0
            assert all(bin_rate(l.normalized_rate) == l.bin for l in labels.values())


class TestCorpusFile:
    def test_save_load_save_identical(self, corpus, tmp_path):
        path = tmp_path / "c.jsonl"
        save_corpus(corpus, path)
        first = path.read_bytes()
        again = load_corpus(path)
        save_corpus(again, tmp_path / "d.jsonl")
        assert (tmp_path / "d.jsonl").read_bytes() == first
        assert again.vocab == corpus.vocab and again.samples == corpus.samples

    def test_header_first(self, small_corpus):
        head = dumps(small_corpus).splitlines()[0]
        assert '"format_version":1' in head and '"kind":"header"' in head

    def test_unknown_version_rejected(self, small_corpus):
        text = dumps(small_corpus).replace('"format_version":1', '"format_version":99', 1)
        with pytest.raises(ValidationError):
            loads(text)

    def test_generated_corpus_validates(self):
        c = generate_corpus(GenConfig(n_doctors=30, n_trials=10, target_bin_distribution=None, seed=2))
        assert c.validate()
