"""Fully connected tanh network trained by online backpropagation with momentum.

Parameters live in one flat float64 vector. Layer ``l`` (``n_in -> n_out``)
occupies ``n_out * n_in`` row-major weights followed by ``n_out`` biases.
The hot loops are compiled with numba; everything else is plain numpy.

Parameter file format (text, one token group per line)::

    mlp-params 1
    layers 3 4 1
    <one float per line, repr precision, in flat-vector order>
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from numba import njit

from .features import PixelFeatureSet
from .image_core import NormalizedPlane

FILE_MAGIC = "mlp-params"
FILE_VERSION = 1


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training diverged (non-finite loss) at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


@dataclass
class MlpNetwork:
    layer_sizes: tuple
    params: np.ndarray
    velocity: np.ndarray = field(default=None)

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        self.params = np.ascontiguousarray(self.params, dtype=np.float64)
        if self.params.size != param_count(self.layer_sizes):
            raise ValueError(f"expected {param_count(self.layer_sizes)} parameters, "
                             f"got {self.params.size}")
        if self.velocity is None:
            self.velocity = np.zeros_like(self.params)

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def _offsets(self, layer: int) -> tuple[int, int, int]:
        off = 0
        for i in range(layer):
            off += self.layer_sizes[i + 1] * (self.layer_sizes[i] + 1)
        n_in, n_out = self.layer_sizes[layer], self.layer_sizes[layer + 1]
        return off, n_in, n_out

    def weights(self, layer: int) -> np.ndarray:
        """View of the ``(n_out, n_in)`` weight matrix of ``layer``."""
        off, n_in, n_out = self._offsets(layer)
        return self.params[off:off + n_out * n_in].reshape(n_out, n_in)

    def biases(self, layer: int) -> np.ndarray:
        off, n_in, n_out = self._offsets(layer)
        return self.params[off + n_out * n_in:off + n_out * (n_in + 1)]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.layer_sizes, self.params.copy(), self.velocity.copy())


def param_count(layer_sizes: Sequence[int]) -> int:
    return sum(layer_sizes[i + 1] * (layer_sizes[i] + 1) for i in range(len(layer_sizes) - 1))


def init_network(layer_sizes: Sequence[int], seed: int = 0) -> MlpNetwork:
    """Uniform [-0.5, 0.5] weights and biases, zero momentum."""
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ValueError(f"need at least two layers of positive size, got {list(layer_sizes)}")
    rng = np.random.default_rng(seed)
    return MlpNetwork(sizes, rng.uniform(-0.5, 0.5, param_count(sizes)))


# -- compiled kernels ----------------------------------------------------------


@njit(cache=True)
def _forward_into(params, sizes, x, acts):
    # acts holds every layer's activations back to back, input first
    n0 = sizes[0]
    for i in range(n0):
        acts[i] = x[i]
    off = 0
    a_off = 0
    for l in range(sizes.shape[0] - 1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        b_off = off + n_out * n_in
        o_off = a_off + n_in
        for j in range(n_out):
            z = params[b_off + j]
            row = off + j * n_in
            for i in range(n_in):
                z += params[row + i] * acts[a_off + i]
            acts[o_off + j] = np.tanh(z)
        off = b_off + n_out
        a_off = o_off


@njit(cache=True)
def _backward_into(params, sizes, target, acts, deltas, grad):
    # grad <- dE/dparams for E = 0.5 * sum((y - d)^2); returns E
    n_layers = sizes.shape[0] - 1
    a_off = 0
    for l in range(n_layers):
        a_off += sizes[l]
    n_out = sizes[n_layers]
    err = 0.0
    for j in range(n_out):
        y = acts[a_off + j]
        diff = y - target[j]
        err += 0.5 * diff * diff
        deltas[a_off + j] = diff * (1.0 - y * y)

    off = 0
    for l in range(n_layers):
        off += sizes[l + 1] * (sizes[l] + 1)
    for l in range(n_layers - 1, -1, -1):
        n_in = sizes[l]
        n_out = sizes[l + 1]
        off -= n_out * (n_in + 1)
        in_off = a_off - n_in
        b_off = off + n_out * n_in
        for i in range(n_in):
            deltas[in_off + i] = 0.0
        for j in range(n_out):
            d = deltas[a_off + j]
            grad[b_off + j] = d
            row = off + j * n_in
            for i in range(n_in):
                grad[row + i] = d * acts[in_off + i]
                deltas[in_off + i] += params[row + i] * d
        if l > 0:
            for i in range(n_in):
                a = acts[in_off + i]
                deltas[in_off + i] *= 1.0 - a * a
        a_off = in_off
    return err


@njit(cache=True)
def _predict(params, sizes, inputs, out):
    n_act = 0
    for l in range(sizes.shape[0]):
        n_act += sizes[l]
    acts = np.empty(n_act)
    n_out = sizes[sizes.shape[0] - 1]
    o_off = n_act - n_out
    for p in range(inputs.shape[0]):
        _forward_into(params, sizes, inputs[p], acts)
        for j in range(n_out):
            out[p, j] = acts[o_off + j]


@njit(cache=True)
def _train(params, velocity, sizes, inputs, targets, lr, momentum, epochs, curve):
    # returns -1 on success, else the 1-based epoch at which the loss went non-finite
    n_act = 0
    for l in range(sizes.shape[0]):
        n_act += sizes[l]
    acts = np.empty(n_act)
    deltas = np.empty(n_act)
    grad = np.empty(params.shape[0])
    n_out = sizes[sizes.shape[0] - 1]
    o_off = n_act - n_out
    n = inputs.shape[0]
    for e in range(epochs):
        for p in range(n):
            _forward_into(params, sizes, inputs[p], acts)
            _backward_into(params, sizes, targets[p], acts, deltas, grad)
            for k in range(params.shape[0]):
                velocity[k] = momentum * velocity[k] - lr * grad[k]
                params[k] += velocity[k]
        sq = 0.0
        for p in range(n):
            _forward_into(params, sizes, inputs[p], acts)
            for j in range(n_out):
                diff = acts[o_off + j] - targets[p, j]
                sq += diff * diff
        mse = sq / (n * n_out)
        curve[e] = mse
        if not np.isfinite(mse):
            return e + 1
    return -1


# -- public API ------------------------------------------------------------------


def _sizes(net: MlpNetwork) -> np.ndarray:
    return np.asarray(net.layer_sizes, dtype=np.int64)


def _as_matrix(values, width: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, width)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ValueError(f"{what} arity mismatch: expected {width} columns, got shape {arr.shape}")
    return np.ascontiguousarray(arr)


def forward(net: MlpNetwork, x) -> np.ndarray:
    """Output activations for a single input vector."""
    return forward_activations(net, x)[-1]


def forward_activations(net: MlpNetwork, x) -> list[np.ndarray]:
    """Every layer's activation vector, input included."""
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.n_inputs:
        raise ValueError(f"input arity mismatch: network takes {net.n_inputs}, got {x.size}")
    acts = np.empty(sum(net.layer_sizes))
    _forward_into(net.params, _sizes(net), x, acts)
    return np.split(acts, np.cumsum(net.layer_sizes)[:-1])


def gradients(net: MlpNetwork, x, target) -> tuple[float, np.ndarray]:
    """Loss ``0.5 * sum((y - d)^2)`` and its gradient w.r.t. the flat parameters."""
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    target = np.ascontiguousarray(target, dtype=np.float64).reshape(-1)
    if x.size != net.n_inputs or target.size != net.n_outputs:
        raise ValueError("input/target arity mismatch")
    sizes = _sizes(net)
    acts = np.empty(int(sizes.sum()))
    deltas = np.empty_like(acts)
    grad = np.empty_like(net.params)
    _forward_into(net.params, sizes, x, acts)
    err = _backward_into(net.params, sizes, target, acts, deltas, grad)
    return float(err), grad


def predict(net: MlpNetwork, inputs) -> np.ndarray:
    """Raw outputs, shape ``(samples, n_outputs)``."""
    inputs = _as_matrix(inputs, net.n_inputs, "input")
    out = np.empty((inputs.shape[0], net.n_outputs))
    _predict(net.params, _sizes(net), inputs, out)
    return out


def predict_image(net: MlpNetwork, features: PixelFeatureSet) -> NormalizedPlane:
    """Evaluate every pixel and lay the outputs out row-major, clamped to [0, 1]."""
    out = predict(net, features.vectors)
    return NormalizedPlane(np.clip(out, 0.0, 1.0).reshape(features.height, features.width,
                                                          net.n_outputs))


def train(net: MlpNetwork, inputs, targets, cfg: TrainConfig) -> tuple[MlpNetwork, np.ndarray]:
    """Online backpropagation, samples visited in index order every epoch.

    Each step applies ``dw = -lr * grad + momentum * dw_prev``. Returns a new
    trained network and the per-epoch mean squared error over the training
    set (averaged over samples and outputs).
    """
    if isinstance(inputs, PixelFeatureSet):
        inputs = inputs.vectors
    x = _as_matrix(inputs, net.n_inputs, "input")
    d = _as_matrix(targets, net.n_outputs, "target")
    if x.shape[0] != d.shape[0]:
        raise ValueError(f"{x.shape[0]} inputs but {d.shape[0]} targets")
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if d.min() < 0.0 or d.max() > 1.0:
        raise ValueError("targets must lie in [0, 1]")
    trained = net.copy()
    curve = np.full(cfg.epochs, np.nan)
    bad = _train(trained.params, trained.velocity, _sizes(trained), x, d,
                 float(cfg.learning_rate), float(cfg.momentum), int(cfg.epochs), curve)
    if bad >= 0:
        raise TrainingDivergedError(bad)
    return trained, curve


# -- persistence -----------------------------------------------------------------


def dumps(net: MlpNetwork) -> str:
    lines = [f"{FILE_MAGIC} {FILE_VERSION}", "layers " + " ".join(map(str, net.layer_sizes))]
    lines.extend(repr(float(v)) for v in net.params)
    return "\n".join(lines) + "\n"


def loads(text: str) -> MlpNetwork:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0].split() != [FILE_MAGIC, str(FILE_VERSION)]:
        raise ValueError(f"not a version {FILE_VERSION} parameter file")
    head = lines[1].split() if len(lines) > 1 else []
    if not head or head[0] != "layers":
        raise ValueError("missing 'layers' line")
    sizes = tuple(int(t) for t in head[1:])
    values = np.array([float(t) for t in lines[2:]])
    if not np.all(np.isfinite(values)):
        raise ValueError("parameter file contains non-finite values")
    return MlpNetwork(sizes, values)


def save_network(net: MlpNetwork, path: Union[str, Path]) -> None:
    Path(path).write_text(dumps(net))


def load_network(path: Union[str, Path]) -> MlpNetwork:
    return loads(Path(path).read_text())
