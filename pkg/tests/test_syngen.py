"""Planted-signal generator: calibration, determinism and the affinity oracle."""

import numpy as np
import pytest

from doctor2vec.corpus_io import dumps
from doctor2vec.datamodel import DoctorRecord, Patient, Trial, Visit
from doctor2vec.errors import CalibrationError, ValidationError
from doctor2vec.syngen import (
    DEFAULT_BIN_DISTRIBUTION,
    GenConfig,
    bin_distribution,
    build_topic_model,
    generate_corpus,
    planted_affinity,
)

PATIENTS = (Patient((Visit((0,), (), (), 0),)),)


def _doctor(mixture, origin="x"):
    return DoctorRecord("D", PATIENTS, (), mixture, origin)


def _trial(vector, origin="x"):
    return Trial("T", {}, ("w",), {}, vector, origin)


class TestGenerateCorpus:
    def test_same_seed_byte_identical(self):
        cfg = dict(n_doctors=40, n_trials=12, target_bin_distribution=None)
        a = dumps(generate_corpus(GenConfig(seed=5, **cfg)))
        assert a == dumps(generate_corpus(GenConfig(seed=5, **cfg)))
        assert a != dumps(generate_corpus(GenConfig(seed=6, **cfg)))

    def test_mean_diagnosis_codes(self, corpus):
        counts = [len(v.diagnosis) for d in corpus.doctors for p in d.patients for v in p.visits]
        assert abs(np.mean(counts) - 4.23) <= 0.5

    def test_code_count_maxima(self, corpus):
        visits = [v for d in corpus.doctors for p in d.patients for v in p.visits]
        assert max(len(v.diagnosis) for v in visits) <= 56
        assert max(len(v.procedure) for v in visits) <= 18

    def test_bin_distribution_calibrated(self, corpus):
        achieved = bin_distribution(corpus.samples)
        assert np.all(np.abs(achieved - np.array(DEFAULT_BIN_DISTRIBUTION)) <= 0.05)

    def test_single_topic_no_noise_is_all_bin_2(self):
        c = generate_corpus(GenConfig(n_doctors=20, n_trials=5, n_topics=1, noise_std=0.0, background=False,
                                      investigators_per_trial=(5, 8), target_bin_distribution=None, seed=1))
        assert {s.label.bin for s in c.samples} == {2}
        assert {s.label.normalized_rate for s in c.samples} == {0.5}

    def test_noise_free_rates_follow_affinity(self):
        c = generate_corpus(GenConfig(n_doctors=60, n_trials=10, noise_std=0.0, seed=4,
                                      target_bin_distribution=None))
        for t in c.trials:
            docs = list(t.raw_enrollments)
            aff = np.array([planted_affinity(c.doctor(d), t) for d in docs])
            rate = np.array([t.raw_enrollments[d].rate for d in docs])
            for i in range(len(docs)):
                for j in range(len(docs)):
                    # enrollment counts are rounded, so only clearly separated pairs are ordered
                    if aff[i] > aff[j] + 0.02:
                        assert rate[i] >= rate[j]

    def test_calibration_failure_reports_distribution(self):
        cfg = GenConfig(n_doctors=20, n_trials=4, investigators_per_trial=(3, 3), max_retries=2, seed=0,
                        target_bin_distribution=(0.0, 0.0, 0.0, 0.0, 1.0), tolerance=0.01)
        with pytest.raises(CalibrationError) as err:
            generate_corpus(cfg)
        assert err.value.achieved is not None and len(err.value.achieved) == 5

    @pytest.mark.parametrize("kwargs", [dict(n_doctors=0), dict(target_bin_distribution=(0.5, 0.5, 0, 0, 0.1)),
                                        dict(n_visits_per_patient=(3, 2)), dict(noise_std=-1.0)])
    def test_invalid_config(self, kwargs):
        with pytest.raises(ValidationError):
            GenConfig(**kwargs)

    def test_topic_probabilities_normalized(self):
        topics = build_topic_model(GenConfig(), np.random.default_rng(0))
        for kind in topics.code_probs:
            assert np.all(kind >= 0)
            np.testing.assert_allclose(kind.sum(axis=1), 1.0, atol=1e-12)

    def test_countries_follow_weights(self):
        c = generate_corpus(GenConfig(n_doctors=40, n_trials=40, countries=("US", "ZA"), country_weights=(1, 0),
                                      target_bin_distribution=None))
        assert {t.categorical["country"] for t in c.trials} == {"US"}


class TestPlantedAffinity:
    def test_identical(self):
        assert planted_affinity(_doctor((0.0, 1.0, 0.0)), _trial((0.0, 1.0, 0.0))) == 1.0

    def test_orthogonal(self):
        assert planted_affinity(_doctor((1.0, 0.0, 0.0)), _trial((0.0, 1.0, 0.0))) == 0.0

    def test_halfway_is_equidistant(self):
        d = _doctor((0.0, 0.5, 0.5))
        a = planted_affinity(d, _trial((0.0, 1.0, 0.0)))
        b = planted_affinity(d, _trial((0.0, 0.0, 1.0)))
        assert abs(a - b) <= 1e-12

    def test_foreign_corpus_rejected(self):
        with pytest.raises(ValidationError):
            planted_affinity(_doctor((1.0, 0.0), "a"), _trial((1.0, 0.0), "b"))

    def test_range_in_generated_corpus(self, corpus):
        for t in corpus.trials[:5]:
            aff = [planted_affinity(corpus.doctor(d), t) for d in t.raw_enrollments]
            assert min(aff) >= 0.0 and max(aff) == pytest.approx(1.0)
