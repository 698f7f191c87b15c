"""Finite-difference verification of tape gradients."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .tensor import Tensor, backward


def _value(f):
    out = f()
    data = out.data if isinstance(out, Tensor) else np.asarray(out, dtype=np.float64)
    if data.size != 1:
        raise ContractError("finite_diff_check needs a scalar-valued function")
    return float(data.reshape(-1)[0])


def analytic_gradients(f, params):
    for p in params.values():
        p.zero_grad()
    backward(f())
    return {name: p.grad.copy() for name, p in params.items()}


def finite_diff_check(f, params, epsilon=1e-4, return_details=False):
    """Max over all parameter entries of |analytic - numeric| / (|analytic| + |numeric| + 1e-12).

    ``f`` takes no arguments and builds a fresh forward pass over ``params``
    (a name -> Tensor mapping) each call.  Numeric derivatives use the
    five-point central stencil, whose truncation error is O(epsilon**4).
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ContractError("epsilon must lie in [1e-7, 1e-3]")
    first, second = _value(f), _value(f)
    if first != second:
        raise ContractError(f"function is not deterministic: {first!r} != {second!r}")
    analytic = analytic_gradients(f, params)
    worst = 0.0
    details = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        num = np.zeros(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            vals = []
            for step in (2.0, 1.0, -1.0, -2.0):
                flat[i] = orig + step * epsilon
                vals.append(_value(f))
            flat[i] = orig
            # differences first, so a locally constant f gives exactly zero
            num[i] = (8.0 * (vals[1] - vals[2]) - (vals[0] - vals[3])) / (12.0 * epsilon)
        ana = analytic[name].reshape(-1)
        rel = np.abs(ana - num) / (np.abs(ana) + np.abs(num) + 1e-12)
        err = float(rel.max()) if rel.size else 0.0
        details[name] = err
        worst = max(worst, err)
    for p in params.values():
        p.zero_grad()
    return (worst, details) if return_details else worst
