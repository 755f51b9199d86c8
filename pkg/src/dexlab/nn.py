"""Small deterministic MLPs with hand-written backprop, Adam and Polyak averaging.

Parameters live in one flat float64 vector laid out layer by layer as
(weight matrix of shape (out, in), row-major; bias of shape (out,)).
Every function accepts a single input vector or a batch of row vectors.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError, UsageError

HIDDEN_ACTIVATIONS = ("relu",)
OUTPUT_ACTIVATIONS = ("identity", "tanh")
DEFAULT_HIDDEN = (256, 256, 256)

CKPT_MAGIC = b"DEXCKPT"
CKPT_VERSION = 1


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "relu"
    output_activation: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ConfigurationError(f"invalid layer sizes {sizes}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")

    @classmethod
    def actor(cls, in_dim: int, out_dim: int, hidden=DEFAULT_HIDDEN) -> "MlpSpec":
        return cls((in_dim, *hidden, out_dim), "relu", "tanh")

    @classmethod
    def critic(cls, in_dim: int, hidden=DEFAULT_HIDDEN) -> "MlpSpec":
        return cls((in_dim, *hidden, 1), "relu", "identity")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum(s[i] * s[i + 1] + s[i + 1] for i in range(len(s) - 1))

    def layer_slices(self):
        """Yield (weight_slice, weight_shape, bias_slice) per layer."""
        s = self.layer_sizes
        off = 0
        for i in range(len(s) - 1):
            n_in, n_out = s[i], s[i + 1]
            w = slice(off, off + n_in * n_out)
            off += n_in * n_out
            b = slice(off, off + n_out)
            off += n_out
            yield w, (n_out, n_in), b


def _layers(spec: MlpSpec, params: np.ndarray):
    if params.shape != (spec.n_params,):
        raise ConfigurationError(
            f"parameter vector of length {params.shape} does not match spec ({spec.n_params},)"
        )
    return [(params[w].reshape(shape), params[b]) for w, shape, b in spec.layer_slices()]


def init_params(spec: MlpSpec, rng: np.random.Generator) -> np.ndarray:
    """Uniform fan-in initialisation in [-1/sqrt(fan_in), 1/sqrt(fan_in)]."""
    params = np.empty(spec.n_params, dtype=np.float64)
    for w, shape, b in spec.layer_slices():
        bound = 1.0 / np.sqrt(shape[1])
        params[w] = rng.uniform(-bound, bound, size=shape[0] * shape[1])
        params[b] = rng.uniform(-bound, bound, size=shape[0])
    return params


@dataclass
class ForwardCache:
    spec: MlpSpec
    weights: list
    inputs: list  # input to each layer
    pre: list  # pre-activation of each layer
    output: np.ndarray
    squeeze: bool = False


def mlp_forward(spec: MlpSpec, params: np.ndarray, x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    h = x[None, :] if squeeze else x
    if h.ndim != 2 or h.shape[1] != spec.in_dim:
        raise ConfigurationError(f"input of shape {x.shape} does not match input dim {spec.in_dim}")
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite network input")
    layers = _layers(spec, params)
    inputs, pre, weights = [], [], []
    last = len(layers) - 1
    for i, (W, b) in enumerate(layers):
        inputs.append(h)
        weights.append(W)
        z = h @ W.T + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
        elif spec.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache = ForwardCache(spec, weights, inputs, pre, h, squeeze)
    return (h[0] if squeeze else h), cache


def mlp_backward(spec: MlpSpec, cache: ForwardCache, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of sum(upstream * output) w.r.t. the parameters and the input.

    For batched inputs the parameter gradient is summed over the batch.
    """
    if cache.spec != spec:
        raise UsageError("forward cache was produced by a different network spec")
    g = np.asarray(upstream, dtype=np.float64)
    if cache.squeeze:
        g = g[None, :]
    if g.shape != cache.output.shape:
        raise UsageError(f"upstream of shape {np.shape(upstream)} does not match output {cache.output.shape}")

    grads = np.empty(spec.n_params, dtype=np.float64)
    slices = list(spec.layer_slices())
    last = len(slices) - 1
    if spec.output_activation == "tanh":
        g = g * (1.0 - cache.output * cache.output)
    for i in range(last, -1, -1):
        if i < last:
            g = g * (cache.pre[i] > 0.0)
        w_sl, shape, b_sl = slices[i]
        grads[w_sl] = (g.T @ cache.inputs[i]).ravel()
        grads[b_sl] = g.sum(axis=0)
        g = g @ cache.weights[i]
    return grads, (g[0] if cache.squeeze else g)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, n: int, learning_rate: float = 1e-3, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, learning_rate, **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam descent step. Inputs are not modified."""
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ConfigurationError("parameter, gradient and moment lengths differ")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(f"non-finite gradient at index {int(bad[0])}")
    b1, b2 = state.beta1, state.beta2
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grads
    v = b2 * state.second_moment + (1.0 - b2) * (grads * grads)
    m_hat = m / (1.0 - b1**t)
    v_hat = v / (1.0 - b2**t)
    new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(m, v, t, state.learning_rate, b1, b2, state.epsilon)
    return new_params, new_state


def polyak_update(target: np.ndarray, online: np.ndarray, rate: float) -> np.ndarray:
    """Return rate * target + (1 - rate) * online.

    Evaluated as target + (1 - rate) * (online - target) so that equal inputs
    are an exact fixed point.
    """
    if target.shape != online.shape:
        raise ConfigurationError("target and online parameter lengths differ")
    if rate == 1.0:
        return target.copy()
    if rate == 0.0:
        return online.copy()
    return target + (1.0 - rate) * (online - target)


# checkpoints -----------------------------------------------------------------

_ACT_CODES = {"identity": 0, "tanh": 1}


def save_checkpoint(path, spec: MlpSpec, params: np.ndarray) -> None:
    """Header: magic, u32 version, u32 output activation, u32 n_sizes, u32 sizes.
    Body: float64 little-endian parameters."""
    if params.shape != (spec.n_params,):
        raise ConfigurationError("parameters do not match spec")
    sizes = spec.layer_sizes
    header = CKPT_MAGIC + struct.pack(
        f"<III{len(sizes)}I", CKPT_VERSION, _ACT_CODES[spec.output_activation], len(sizes), *sizes
    )
    Path(path).write_bytes(header + params.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[MlpSpec, np.ndarray]:
    data = Path(path).read_bytes()
    n = len(CKPT_MAGIC)
    if data[:n] != CKPT_MAGIC:
        raise ConfigurationError(f"{path}: not a checkpoint file")
    version, act, n_sizes = struct.unpack_from("<III", data, n)
    if version != CKPT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {version}")
    off = n + 12
    sizes = struct.unpack_from(f"<{n_sizes}I", data, off)
    off += 4 * n_sizes
    act_name = {v: k for k, v in _ACT_CODES.items()}[act]
    spec = MlpSpec(tuple(sizes), "relu", act_name)
    params = np.frombuffer(data, dtype="<f8", offset=off).astype(np.float64)
    if params.shape != (spec.n_params,):
        raise ConfigurationError(f"{path}: truncated parameter block")
    return spec, params


@dataclass
class Network:
    """A spec bundled with its parameter vector; convenience for callers."""

    spec: MlpSpec
    params: np.ndarray = field(repr=False)

    def __call__(self, x) -> np.ndarray:
        return mlp_forward(self.spec, self.params, x)[0]
