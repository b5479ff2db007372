"""Small dense Q-network with C two-way output heads, in plain numpy.

Layout: ``num_layers`` dense layers, ReLU on the hidden ones, a linear
output of width 2C. Output unit ``2c + a`` holds Q(s, a) for content c.
Everything is float64 so gradient checks stay tight.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np


@dataclass
class LayerParams:
    layer_index: int
    weights: np.ndarray
    biases: np.ndarray

    def copy(self) -> "LayerParams":
        return LayerParams(self.layer_index, self.weights.copy(), self.biases.copy())


class QNetwork:
    def __init__(
        self,
        num_contents: int,
        hidden_width: int = 128,
        num_layers: int = 6,
        seed: Optional[int] = 0,
        rng: Optional[np.random.Generator] = None,
    ):
        if num_contents < 1 or hidden_width < 1 or num_layers < 1:
            raise ValueError("num_contents, hidden_width and num_layers must be positive")
        self.num_contents = num_contents
        self.hidden_width = hidden_width
        self.num_layers = num_layers
        self.seed = seed
        self.dims = [2 * num_contents] + [hidden_width] * (num_layers - 1) + [2 * num_contents]
        rng = rng if rng is not None else np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    def parameters(self) -> list[np.ndarray]:
        """Flat view order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def copy(self) -> "QNetwork":
        clone = QNetwork.__new__(QNetwork)
        clone.__dict__.update(self.__dict__)
        clone.dims = list(self.dims)
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone

    def same_architecture(self, other: "QNetwork") -> bool:
        return self.dims == other.dims

    # -- forward / backward -------------------------------------------------

    def _check_input(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=np.float64)
        if states.ndim == 1:
            states = states[None, :]
        if states.ndim != 2 or states.shape[1] != self.input_dim:
            raise ValueError(f"state dimension must be {self.input_dim}, got {states.shape[-1]}")
        return states

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        last = self.num_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(z if i == last else np.maximum(z, 0.0))
        return acts

    def forward_batch(self, states) -> np.ndarray:
        """Head Q-values, shape (batch, C, 2)."""
        x = self._check_input(states)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < self.num_layers - 1:
                np.maximum(x, 0.0, out=x)
        return x.reshape(x.shape[0], self.num_contents, 2)

    def forward(self, state) -> np.ndarray:
        """Head Q-values of one state, shape (C, 2)."""
        return self.forward_batch(state)[0]

    def loss(self, states, actions, targets) -> float:
        q = self.forward_batch(states)
        chosen = _chosen(q, actions)
        return float(np.mean((np.asarray(targets, dtype=np.float64) - chosen) ** 2))

    def backward(self, states, actions, targets) -> tuple[float, list[np.ndarray]]:
        """Loss and exact gradients of the multi-head TD loss.

        loss = mean over batch and heads of (y_c - Q_c(s, a_c))^2. Only the
        chosen sub-action's output unit of each head gets an error signal.
        Gradients come back in ``parameters()`` order.
        """
        x = self._check_input(states)
        actions = np.asarray(actions, dtype=np.int64).reshape(x.shape[0], self.num_contents)
        targets = np.asarray(targets, dtype=np.float64).reshape(x.shape[0], self.num_contents)
        if not np.all(np.isfinite(targets)):
            raise FloatingPointError("non-finite TD targets")
        acts = self._activations(x)
        batch, heads = targets.shape
        out = acts[-1].reshape(batch, heads, 2)
        chosen = np.take_along_axis(out, actions[:, :, None], axis=2)[:, :, 0]
        err = targets - chosen
        loss = float(np.mean(err ** 2))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss in backward pass")

        delta = np.zeros_like(out)
        np.put_along_axis(delta, actions[:, :, None], (-2.0 / (batch * heads) * err)[:, :, None], axis=2)
        delta = delta.reshape(batch, 2 * heads)

        grads: list[np.ndarray] = [None] * (2 * self.num_layers)
        for i in range(self.num_layers - 1, -1, -1):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.weights[i].T) * (acts[i] > 0)
        return loss, grads

    # -- federated exchange --------------------------------------------------

    def export_layers(self, indices: Iterable[int]) -> list[LayerParams]:
        out = []
        for i in sorted(set(indices)):
            if not 0 <= i < self.num_layers:
                raise IndexError(f"layer index {i} out of range 0..{self.num_layers - 1}")
            out.append(LayerParams(i, self.weights[i].copy(), self.biases[i].copy()))
        return out

    def import_layers(self, params: Sequence[LayerParams]) -> "QNetwork":
        for p in params:
            i = p.layer_index
            if not 0 <= i < self.num_layers:
                raise IndexError(f"layer index {i} out of range 0..{self.num_layers - 1}")
            if p.weights.shape != self.weights[i].shape or p.biases.shape != self.biases[i].shape:
                raise ValueError(f"shape mismatch importing layer {i}")
        for p in params:
            self.weights[p.layer_index] = np.array(p.weights, dtype=np.float64, copy=True)
            self.biases[p.layer_index] = np.array(p.biases, dtype=np.float64, copy=True)
        return self

    # -- checkpoints -------------------------------------------------------------

    def to_bytes(self) -> bytes:
        header = {
            "num_layers": self.num_layers,
            "dims": self.dims,
            "seed": self.seed,
            "num_contents": self.num_contents,
            "hidden_width": self.hidden_width,
        }
        arrays = {"header": np.frombuffer(json.dumps(header).encode(), dtype=np.uint8)}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            arrays[f"w{i}"] = np.ascontiguousarray(w)
            arrays[f"b{i}"] = np.ascontiguousarray(b)
        buf = io.BytesIO()
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "QNetwork":
        with np.load(io.BytesIO(blob)) as data:
            header = json.loads(data["header"].tobytes().decode())
            net = cls.__new__(cls)
            net.num_contents = header["num_contents"]
            net.hidden_width = header["hidden_width"]
            net.num_layers = header["num_layers"]
            net.seed = header["seed"]
            net.dims = list(header["dims"])
            net.weights = [data[f"w{i}"].copy() for i in range(net.num_layers)]
            net.biases = [data[f"b{i}"].copy() for i in range(net.num_layers)]
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            if w.shape != (net.dims[i], net.dims[i + 1]) or b.shape != (net.dims[i + 1],):
                raise ValueError(f"checkpoint layer {i} does not match header dims")
        return net


def _chosen(q: np.ndarray, actions) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64).reshape(q.shape[0], q.shape[1])
    return np.take_along_axis(q, actions[:, :, None], axis=2)[:, :, 0]


def forward(net: QNetwork, state) -> np.ndarray:
    return net.forward(state)


def backward(net: QNetwork, states, actions, targets) -> tuple[float, list[np.ndarray]]:
    return net.backward(states, actions, targets)


class SGD:
    """theta <- theta - lr * grad."""

    def __init__(self, learning_rate: float = 0.002):
        if not learning_rate > 0:
            raise ValueError("learning rate must be positive")
        self.learning_rate = learning_rate

    def step(self, net: QNetwork, grads: Sequence[np.ndarray]) -> QNetwork:
        params = net.parameters()
        _check_grad_shapes(params, grads)
        for p, g in zip(params, grads):
            p -= self.learning_rate * g
        return net


class Adam:
    def __init__(self, learning_rate: float = 0.002, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not learning_rate > 0:
            raise ValueError("learning rate must be positive")
        self.learning_rate = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Optional[list[np.ndarray]] = None
        self.v: Optional[list[np.ndarray]] = None

    def step(self, net: QNetwork, grads: Sequence[np.ndarray]) -> QNetwork:
        params = net.parameters()
        _check_grad_shapes(params, grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        corr1 = 1.0 - self.beta1 ** self.t
        corr2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + self.eps)
        return net


def make_optimizer(name: str, learning_rate: float):
    if name == "sgd":
        return SGD(learning_rate)
    if name == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {name!r} (expected 'sgd' or 'adam')")


def _check_grad_shapes(params, grads) -> None:
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("gradient shapes do not match the network")


def apply_gradients(net: QNetwork, grads, optimizer) -> QNetwork:
    return optimizer.step(net, grads)


def soft_update(target: QNetwork, online: QNetwork, tau: float) -> QNetwork:
    """target <- tau * online + (1 - tau) * target, in place.

    Written as target + tau * (online - target) so that equal networks stay
    bitwise equal for every tau.
    """
    if not target.same_architecture(online):
        raise ValueError("soft update needs identical architectures")
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if tau == 0.0:
        return target
    for t, o in zip(target.parameters(), online.parameters()):
        if tau == 1.0:
            t[...] = o
        else:
            t += tau * (o - t)
    return target


def grad_check(
    net: QNetwork,
    states,
    actions,
    targets,
    eps: float = 1e-5,
    grads: Optional[Sequence[np.ndarray]] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``grads`` lets a caller check a gradient other than the network's own
    (fault injection). The network is restored before returning.
    """
    if grads is None:
        _, grads = net.backward(states, actions, targets)
    worst = 0.0
    for p, g in zip(net.parameters(), grads):
        flat_p = p.reshape(-1)
        flat_g = np.asarray(g).reshape(-1)
        for j in range(flat_p.size):
            orig = flat_p[j]
            flat_p[j] = orig + eps
            up = net.loss(states, actions, targets)
            flat_p[j] = orig - eps
            down = net.loss(states, actions, targets)
            flat_p[j] = orig
            numeric = (up - down) / (2.0 * eps)
            analytic = flat_g[j]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


def random_probe(net: QNetwork, batch: int, rng: np.random.Generator, scale: float = 0.05, margin: float = 1e-3):
    """A random (states, actions, targets) batch for gradient checks.

    Targets sit a small random offset away from the current outputs. Keeping
    the loss small keeps the round-off of central differences (which scales
    with the loss value) well under the 1e-8 denominator floor, so that
    near-zero gradient entries are compared meaningfully. States whose hidden
    pre-activations come within ``margin`` of a ReLU kink are redrawn, since
    a finite difference across a kink does not estimate the derivative.
    """
    states = np.empty((batch, net.input_dim))
    for i in range(batch):
        for _ in range(1000):
            x = rng.normal(size=net.input_dim)
            if _clear_of_kinks(net, x, margin):
                break
        states[i] = x
    actions = rng.integers(0, 2, size=(batch, net.num_contents))
    chosen = np.take_along_axis(net.forward_batch(states), actions[..., None], axis=2)[..., 0]
    targets = chosen + rng.normal(scale=scale, size=chosen.shape)
    return states, actions, targets


def _clear_of_kinks(net: QNetwork, state, margin: float) -> bool:
    x = np.asarray(state, dtype=np.float64)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = x @ w + b
        if np.any(np.abs(z) < margin):
            return False
        x = np.maximum(z, 0.0)
    return True
