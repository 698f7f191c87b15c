"""Parameter containers and the layers the models are assembled from."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from . import tensor as T
from .tensor import Tensor


def xavier_uniform(rng, shape):
    """Uniform in +-sqrt(6 / (fan_in + fan_out)); fan_in/out are the first/last dims."""
    fan_in, fan_out = shape[0], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


class Module:
    """Collects trainable tensors from attributes, in definition order."""

    def parameters(self, prefix=""):
        found = {}
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                found[prefix + key] = value
            elif isinstance(value, Module):
                found.update(value.parameters(f"{prefix}{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        found.update(item.parameters(f"{prefix}{key}.{i}."))
        return found

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_arrays(self, arrays):
        params = self.parameters()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ContractError(f"parameter names differ: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if arrays[name].shape != p.shape:
                raise ContractError(f"shape mismatch for {name}: {arrays[name].shape} vs {p.shape}")
        for name, p in params.items():
            p.data[...] = arrays[name]

    def n_parameters(self):
        return sum(p.size for p in self.parameters().values())


class Linear(Module):
    def __init__(self, n_in, n_out, rng, bias=True):
        self.W = parameter(xavier_uniform(rng, (n_in, n_out)))
        self.b = parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x):
        y = T.matmul(x, self.W)
        return y + self.b if self.b is not None else y


class MLP(Module):
    """Stack of Linear layers with ReLU between them; the last layer stays affine."""

    def __init__(self, sizes, rng):
        if len(sizes) < 2:
            raise ContractError("MLP needs at least input and output sizes")
        self.layers = [Linear(a, b, rng) for a, b in zip(sizes[:-1], sizes[1:])]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.relu(x)
        return x


class LSTM(Module):
    """Single-direction LSTM over (batch, time, features); gate order i, f, o, g.

    Sequences shorter than the time axis must be padded at the end; outputs at
    padded steps are meaningless and have to be masked by the caller.
    """

    def __init__(self, n_in, n_hidden, rng):
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.W_x = parameter(xavier_uniform(rng, (n_in, 4 * n_hidden)))
        self.W_h = parameter(xavier_uniform(rng, (n_hidden, 4 * n_hidden)))
        self.b = parameter(np.zeros(4 * n_hidden))

    def __call__(self, x):
        x = T.as_tensor(x)
        if x.ndim != 3 or x.shape[2] != self.n_in:
            raise ContractError(f"LSTM expects (batch, time, {self.n_in}), got {x.shape}")
        n, steps, _ = x.shape
        hsz = self.n_hidden
        xz = (T.matmul(x.reshape(n * steps, self.n_in), self.W_x) + self.b).reshape(n, steps, 4 * hsz)
        h = c = None
        outputs = []
        for t in range(steps):
            z = xz[:, t, :]
            if h is not None:
                z = z + T.matmul(h, self.W_h)
            gates = T.sigmoid(z[:, : 3 * hsz])
            cand = T.tanh(z[:, 3 * hsz:])
            i, f, o = gates[:, :hsz], gates[:, hsz: 2 * hsz], gates[:, 2 * hsz:]
            c = i * cand if c is None else f * c + i * cand
            h = o * T.tanh(c)
            outputs.append(h)
        return T.stack(outputs, axis=1)


def reverse_padded(x, lengths):
    """Reverse each sequence of a (batch, time, d) tensor within its own length.

    Padding stays at the end, so the result can feed a forward LSTM; applying
    it twice restores the original order.
    """
    x = T.as_tensor(x)
    n, steps = x.shape[0], x.shape[1]
    idx = np.arange(n * steps).reshape(n, steps)
    for r, length in enumerate(lengths):
        idx[r, :length] = idx[r, :length][::-1]
    flat = x.reshape(n * steps, *x.shape[2:])
    return T.take(flat, idx.reshape(-1)).reshape(x.shape)
