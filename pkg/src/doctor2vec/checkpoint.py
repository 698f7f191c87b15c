"""Binary checkpoint container for Doctor2Vec and the baselines.

Layout::

    D2VCKPT\\n
    <header JSON>\\n            format_version, model_kind, init_args, config_hash,
                                metrics, fitted_state, n_blocks
    repeated n_blocks times:
        <block JSON>\\n         {"name", "shape", "nbytes"}
        <nbytes of little-endian float64>
    END\\n

Saving writes a temporary file and renames it into place.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .baselines import build_baseline
from .errors import CheckpointError
from .memnet import Doctor2Vec, ModelConfig

MAGIC = b"D2VCKPT\n"
END = b"END\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def config_hash(kind, init_args):
    return hashlib.sha256(_canonical({"kind": kind, "init_args": init_args}).encode()).hexdigest()[:16]


def build_model(kind, init_args):
    """Construct an unbound, unfitted model of ``kind`` from its ``init_args()``."""
    if kind == Doctor2Vec.kind:
        args = dict(init_args)
        return Doctor2Vec(args["visit_dim"], args["categorical_dim"], args["static_dim"],
                          ModelConfig(**args["config"]))
    return build_baseline(kind, init_args)


def _json_safe(metrics):
    out = {}
    for k, v in (metrics or {}).items():
        v = float(v) if isinstance(v, (float, np.floating)) else v
        out[k] = None if isinstance(v, float) and not np.isfinite(v) else v
    return out


def dumps(model, metrics=None):
    init_args = model.init_args()
    arrays = model.state_arrays()
    header = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "init_args": init_args,
        "config_hash": config_hash(model.kind, init_args),
        "metrics": _json_safe(metrics),
        "fitted_state": model.fitted_state(),
        "n_blocks": len(arrays),
    }
    parts = [MAGIC, _canonical(header).encode() + b"\n"]
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype=_DTYPE).tobytes()
        parts.append(_canonical({"name": name, "shape": list(arr.shape), "nbytes": len(raw)}).encode() + b"\n")
        parts.append(raw)
    parts.append(END)
    return b"".join(parts)


def save_checkpoint(model, path, metrics=None):
    blob = dumps(model, metrics)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _readline(blob, pos, what):
    end = blob.find(b"\n", pos)
    if end < 0:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return blob[pos:end], end + 1


def loads(blob):
    """Returns (model, header).  The model is unbound; call ``model.bind(corpus)``."""
    if not blob.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    line, pos = _readline(blob, len(MAGIC), "header")
    try:
        header = json.loads(line)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"corrupt header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {header.get('format_version')!r}")
    kind, init_args = header["model_kind"], header["init_args"]
    if config_hash(kind, init_args) != header["config_hash"]:
        raise CheckpointError("config hash does not match the stored model configuration")
    model = build_model(kind, init_args)
    expected = {name: arr.shape for name, arr in model.state_arrays().items()}
    arrays = {}
    for _ in range(header["n_blocks"]):
        line, pos = _readline(blob, pos, "block header")
        meta = json.loads(line)
        name, shape, nbytes = meta["name"], tuple(meta["shape"]), meta["nbytes"]
        if name not in expected:
            raise CheckpointError(f"block {name!r} does not belong to a {kind} model")
        if shape != expected[name]:
            raise CheckpointError(f"block {name!r} has shape {shape}, model expects {expected[name]}")
        if nbytes != int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize or pos + nbytes > len(blob):
            raise CheckpointError(f"block {name!r} is truncated or has a wrong byte count")
        arrays[name] = np.frombuffer(blob, dtype=_DTYPE, count=nbytes // _DTYPE.itemsize,
                                     offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if blob[pos:] != END:
        raise CheckpointError("missing end marker or trailing bytes")
    missing = sorted(set(expected) - set(arrays))
    if missing:
        raise CheckpointError(f"checkpoint lacks blocks {missing}")
    model.load_arrays(arrays)
    model.load_fitted_state(header["fitted_state"])
    return model, header


def load_checkpoint(path):
    return loads(Path(path).read_bytes())
