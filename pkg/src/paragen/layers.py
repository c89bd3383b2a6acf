"""Parameter containers and the linear/embedding/LSTM building blocks.

All parameters live in float64 and are registered, in a fixed creation order,
inside a ParamCollection. Initialization draws from a single seeded generator
in registration order, so a given seed always produces identical parameters.
Weights are uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; the LSTM forget-gate
bias is then overwritten with 1.0.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .tensor import (
    Tensor, add, lookup, matmul, mul, reshape, sigmoid, tanh, transpose,
    ShapeMismatchError,
)


class ParamCollection:
    """Ordered name -> Tensor registry: the unit of init, update, and checkpointing."""

    def __init__(self, name: str):
        self.name = name
        self._params: dict[str, Tensor] = {}

    def register(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r} in collection {self.name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def n_values(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def digest(self) -> str:
        """Byte-level fingerprint of all parameter values, order-sensitive."""
        h = hashlib.sha1()
        for name, t in self._params.items():
            h.update(name.encode())
            h.update(t.data.tobytes())
        return h.hexdigest()


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


class LinearLayer:
    """y = W x + b with W of shape [out, in], b of shape [out]."""

    def __init__(self, coll: ParamCollection, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = coll.register(f"{name}.weight", uniform_init(rng, (out_dim, in_dim), in_dim))
        self.bias = coll.register(f"{name}.bias", uniform_init(rng, (out_dim,), in_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(self.weight, x), self.bias)

    def score_rows(self, xs: Tensor) -> Tensor:
        """Apply a single-output layer to a batch of row vectors: [n, in] -> [n]."""
        if self.out_dim != 1:
            raise ShapeMismatchError("score_rows requires a single-output layer")
        col = matmul(xs, transpose(self.weight))          # [n, 1]
        return reshape(add(col, self.bias), (xs.shape[0],))


class EmbeddingTable:
    """Learned rows, one per vocabulary entry: shape [vocab, dim]."""

    def __init__(self, coll: ParamCollection, name: str, vocab_size: int, dim: int,
                 rng: np.random.Generator):
        self.vocab_size = vocab_size
        self.dim = dim
        self.rows = coll.register(f"{name}.rows", uniform_init(rng, (vocab_size, dim), dim))

    def __call__(self, ids) -> Tensor:
        return lookup(self.rows, ids)


_GATES = ("input", "forget", "output", "cell")


class LstmCell:
    """A standard LSTM cell.

    i, f, o = sigmoid(W x + U h + b) gate-wise; g = tanh(W x + U h + b);
    c' = f * c + i * g; h' = o * tanh(c'). The forget bias starts at 1.0 so the
    cell initially remembers.
    """

    def __init__(self, coll: ParamCollection, name: str, input_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.w: dict[str, Tensor] = {}
        self.u: dict[str, Tensor] = {}
        self.b: dict[str, Tensor] = {}
        for gate in _GATES:
            self.w[gate] = coll.register(f"{name}.w_{gate}",
                                         uniform_init(rng, (hidden_dim, input_dim), input_dim))
            self.u[gate] = coll.register(f"{name}.u_{gate}",
                                         uniform_init(rng, (hidden_dim, hidden_dim), hidden_dim))
            self.b[gate] = coll.register(f"{name}.b_{gate}",
                                         uniform_init(rng, (hidden_dim,), hidden_dim))
        self.b["forget"].data[:] = 1.0

    def _gate(self, name: str, x: Tensor, h: Tensor) -> Tensor:
        return add(add(matmul(self.w[name], x), matmul(self.u[name], h)), self.b[name])

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        if x.shape != (self.input_dim,):
            raise ShapeMismatchError(
                f"lstm step: input shape {x.shape}, expected ({self.input_dim},)")
        i = sigmoid(self._gate("input", x, h))
        f = sigmoid(self._gate("forget", x, h))
        o = sigmoid(self._gate("output", x, h))
        g = tanh(self._gate("cell", x, h))
        c2 = add(mul(f, c), mul(i, g))
        h2 = mul(o, tanh(c2))
        return h2, c2


def lstm_step(cell: LstmCell, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    """Functional form of LstmCell.step."""
    return cell.step(x, h, c)
