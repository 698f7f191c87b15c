"""Line-delimited JSON corpus files.

Layout, one record per line:

    {"kind": "header", "format_version": 1, "seed": ..., "counts": {...}}
    {"kind": "vocab", ...}
    {"kind": "doctor", ...}   followed by that doctor's {"kind": "patient", ...} lines
    {"kind": "trial", ...}
    {"kind": "sample", ...}

Keys are sorted and separators compact, so save -> load -> save is
byte-identical.  Multi-hot code vectors are written as sorted index lists.
"""

from __future__ import annotations

import json
from pathlib import Path

from .datamodel import (
    CodeVocabulary,
    Corpus,
    DoctorRecord,
    Enrollment,
    EnrollmentLabel,
    Patient,
    Sample,
    Trial,
    Visit,
)
from .errors import ValidationError

FORMAT_VERSION = 1


def _line(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def iter_records(corpus):
    counts = {
        "doctors": len(corpus.doctors),
        "patients": sum(len(d.patients) for d in corpus.doctors),
        "trials": len(corpus.trials),
        "samples": len(corpus.samples),
    }
    yield {"kind": "header", "format_version": FORMAT_VERSION, "seed": corpus.seed, "counts": counts}
    v = corpus.vocab
    yield {
        "kind": "vocab",
        "diagnosis": list(v.diagnosis),
        "procedure": list(v.procedure),
        "medication": list(v.medication),
        "categories": [[name, list(values)] for name, values in corpus.categories.items()],
        "static_features": list(corpus.static_feature_names),
    }
    for d in corpus.doctors:
        yield {
            "kind": "doctor",
            "doctor_id": d.doctor_id,
            "n_patients": len(d.patients),
            "static_features": list(d.static_features),
            "topic_mixture": None if d.topic_mixture is None else list(d.topic_mixture),
            "origin": d.origin,
        }
        for k, p in enumerate(d.patients):
            yield {
                "kind": "patient",
                "doctor_id": d.doctor_id,
                "index": k,
                "visits": [
                    {"t": vis.time_index, "dx": list(vis.diagnosis), "px": list(vis.procedure),
                     "rx": list(vis.medication)}
                    for vis in p.visits
                ],
            }
    for t in corpus.trials:
        yield {
            "kind": "trial",
            "trial_id": t.trial_id,
            "categorical": [[name, t.categorical[name]] for name in corpus.categories],
            "text_tokens": list(t.text_tokens),
            "raw_enrollments": [[doc, e.randomized, e.discontinued, e.window]
                                for doc, e in t.raw_enrollments.items()],
            "topic_vector": None if t.topic_vector is None else list(t.topic_vector),
            "origin": t.origin,
        }
    for s in corpus.samples:
        yield {
            "kind": "sample",
            "doctor_id": s.doctor_id,
            "trial_id": s.trial_id,
            "raw_rate": s.label.raw_rate,
            "normalized_rate": s.label.normalized_rate,
            "bin": s.label.bin,
        }


def dumps(corpus):
    return "".join(_line(r) + "\n" for r in iter_records(corpus))


def save_corpus(corpus, path):
    Path(path).write_text(dumps(corpus), encoding="utf-8")


def loads(text):
    header = None
    vocab_rec = None
    doctors, trials, samples = [], [], []
    pending = None  # (record, patients) of the doctor being read

    def flush():
        rec, patients = pending
        if len(patients) != rec["n_patients"]:
            raise ValidationError(f"doctor {rec['doctor_id']}: expected {rec['n_patients']} patients")
        doctors.append(DoctorRecord(rec["doctor_id"], patients, rec["static_features"],
                                    rec.get("topic_mixture"), rec.get("origin")))

    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            kind = rec["kind"]
            if header is None:
                if kind != "header":
                    raise ValidationError("first record must be the header")
                if rec.get("format_version") != FORMAT_VERSION:
                    raise ValidationError(f"unsupported format_version {rec.get('format_version')!r}")
                header = rec
            elif kind == "vocab":
                vocab_rec = rec
            elif kind == "doctor":
                if pending is not None:
                    flush()
                pending = (rec, [])
            elif kind == "patient":
                if pending is None or pending[0]["doctor_id"] != rec["doctor_id"]:
                    raise ValidationError("patient record outside its doctor block")
                if rec["index"] != len(pending[1]):
                    raise ValidationError("patient records out of order")
                pending[1].append(Patient(tuple(
                    Visit(v["dx"], v["px"], v["rx"], v["t"]) for v in rec["visits"])))
            elif kind == "trial":
                trials.append(Trial(
                    rec["trial_id"],
                    {name: value for name, value in rec["categorical"]},
                    rec["text_tokens"],
                    {doc: Enrollment(int(r), int(d), float(w)) for doc, r, d, w in rec["raw_enrollments"]},
                    rec.get("topic_vector"),
                    rec.get("origin"),
                ))
            elif kind == "sample":
                samples.append(Sample(rec["doctor_id"], rec["trial_id"], EnrollmentLabel(
                    float(rec["raw_rate"]), float(rec["normalized_rate"]), int(rec["bin"]))))
            else:
                raise ValidationError(f"unknown record kind {kind!r}")
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"line {lineno}: malformed record ({exc})") from None
    if header is None or vocab_rec is None:
        raise ValidationError("corpus file lacks a header or vocab record")
    if pending is not None:
        flush()
    corpus = Corpus(
        vocab=CodeVocabulary(vocab_rec["diagnosis"], vocab_rec["procedure"], vocab_rec["medication"]),
        categories={name: tuple(values) for name, values in vocab_rec["categories"]},
        static_feature_names=tuple(vocab_rec["static_features"]),
        doctors=doctors,
        trials=trials,
        samples=samples,
        seed=header["seed"],
    )
    counts = header["counts"]
    actual = {"doctors": len(doctors), "patients": sum(len(d.patients) for d in doctors),
              "trials": len(trials), "samples": len(samples)}
    if counts != actual:
        raise ValidationError(f"header counts {counts} do not match contents {actual}")
    corpus.validate()
    return corpus


def load_corpus(path):
    return loads(Path(path).read_text(encoding="utf-8"))
