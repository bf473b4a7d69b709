"""Minimal feed-forward classifier with explicit gradients.

The model is an MLP with ReLU hidden layers and a linear output layer.
All parameters live in a single flat float64 vector so the federation
layer can average, checkpoint, and diff models as plain arrays.

Parameter layout (fixed contract): for each layer in order, the weight
matrix of shape (fan_in, fan_out) flattened row-major, followed by the
bias vector of length fan_out.  Layer l maps activations via
``h @ W_l + b_l``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import NS_INIT, stream

CHECKPOINT_MAGIC = b"FNTD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    num_classes: int
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError(f"hidden dims must be >= 1, got {self.hidden_dims}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = (self.input_dim, *self.hidden_dims, self.num_classes)
        return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_shapes())


@dataclass
class Batch:
    features: np.ndarray  # (B, input_dim) float64
    labels: np.ndarray  # (B,) int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ValueError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"feature rows ({self.features.shape[0]}) != label count ({self.labels.shape[0]})"
            )


def unpack_params(config: MlpConfig, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of (weight, bias) per layer into the flat vector."""
    params = np.asarray(params)
    if params.shape != (config.param_count(),):
        raise ValueError(
            f"parameter vector has length {params.shape}, config implies {config.param_count()}"
        )
    layers = []
    off = 0
    for fan_in, fan_out in config.layer_shapes():
        w = params[off : off + fan_in * fan_out].reshape(fan_in, fan_out)
        off += fan_in * fan_out
        b = params[off : off + fan_out]
        off += fan_out
        layers.append((w, b))
    return layers


def init_params(config: MlpConfig, seed: int) -> np.ndarray:
    """Fan-in scaled uniform weights on [-1/sqrt(fan_in), 1/sqrt(fan_in)]; zero biases.

    Deterministic: same (config, seed) gives a bit-identical vector.
    """
    rng = stream(seed, NS_INIT)
    params = np.zeros(config.param_count(), dtype=np.float64)
    for i, (w, _b) in enumerate(unpack_params(config, params)):
        bound = 1.0 / np.sqrt(w.shape[0])
        w[...] = rng.uniform(-bound, bound, size=w.shape)
    return params


def _check_features(config: MlpConfig, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != config.input_dim:
        raise ValueError(
            f"features shape {features.shape} incompatible with input_dim {config.input_dim}"
        )
    return features


def forward(config: MlpConfig, params: np.ndarray, features: np.ndarray) -> np.ndarray:
    """Logits matrix (rows x num_classes)."""
    return forward_with_activations(config, params, features)[0]


def forward_with_activations(
    config: MlpConfig, params: np.ndarray, features: np.ndarray
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the post-ReLU output of every hidden layer."""
    h = _check_features(config, features)
    layers = unpack_params(config, params)
    hidden = []
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        hidden.append(h)
    w, b = layers[-1]
    return h @ w + b, hidden


def backward(
    config: MlpConfig, params: np.ndarray, batch: Batch, dl_dlogits: np.ndarray
) -> np.ndarray:
    """Gradient of the mean-over-batch loss w.r.t. the flat parameter vector.

    `dl_dlogits` holds per-sample logit gradients (B x num_classes); the
    1/B averaging happens here.
    """
    x = _check_features(config, batch.features)
    dl_dlogits = np.asarray(dl_dlogits, dtype=np.float64)
    if dl_dlogits.shape != (x.shape[0], config.num_classes):
        raise ValueError(
            f"dl_dlogits shape {dl_dlogits.shape} != ({x.shape[0]}, {config.num_classes})"
        )
    layers = unpack_params(config, params)

    # Forward, keeping pre-activation inputs of every layer.
    inputs = [x]
    h = x
    for w, b in layers[:-1]:
        h = np.maximum(h @ w + b, 0.0)
        inputs.append(h)

    grad = np.zeros_like(np.asarray(params, dtype=np.float64))
    glayers = unpack_params(config, grad)
    nb = x.shape[0]
    delta = dl_dlogits / nb
    for li in range(len(layers) - 1, -1, -1):
        w, _b = layers[li]
        gw, gb = glayers[li]
        gw[...] = inputs[li].T @ delta
        gb[...] = delta.sum(axis=0)
        if li > 0:
            # ReLU derivative: post-activation output > 0 iff pre-activation > 0.
            delta = (delta @ w.T) * (inputs[li] > 0.0)
    return grad


def sgd_momentum_step(
    params: np.ndarray,
    grad: np.ndarray,
    velocity: np.ndarray,
    lr: float,
    momentum: float,
    weight_decay: float,
) -> tuple[np.ndarray, np.ndarray]:
    """One classical momentum-SGD step with coupled L2 weight decay.

    g' = grad + weight_decay * params
    v' = momentum * v + g'
    params' = params - lr * v'

    lr = 0 is allowed and leaves the parameters unchanged.
    """
    if not (lr >= 0.0):
        raise ValueError(f"lr must be >= 0, got {lr}")
    if not (0.0 <= momentum < 1.0):
        raise ValueError(f"momentum must be in [0, 1), got {momentum}")
    if weight_decay < 0.0:
        raise ValueError(f"weight_decay must be >= 0, got {weight_decay}")
    params = np.asarray(params, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if not (np.isfinite(params).all() and np.isfinite(grad).all()):
        raise ValueError("non-finite parameters or gradient")
    g = grad + weight_decay * params if weight_decay != 0.0 else grad
    new_velocity = momentum * velocity + g
    return params - lr * new_velocity, new_velocity


def lr_at_round(lr0: float, t: int, decay: float = 0.99) -> float:
    """Geometric decay per round: lr0 * decay**t (default factor 0.99)."""
    if not (lr0 >= 0.0):
        raise ValueError(f"lr0 must be >= 0, got {lr0}")
    if t < 0:
        raise ValueError(f"round index must be >= 0, got {t}")
    return lr0 * decay**t


def save_params(path, params: np.ndarray) -> None:
    """Binary checkpoint: magic 'FNTD', u32 version, u64 length, f64 values (little-endian)."""
    params = np.asarray(params, dtype=np.float64)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", params.size))
        f.write(params.astype("<f8").tobytes())


def load_params(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        (length,) = struct.unpack("<Q", f.read(8))
        data = f.read(length * 8)
        if len(data) != length * 8:
            raise ValueError("truncated checkpoint file")
        return np.frombuffer(data, dtype="<f8").astype(np.float64)
