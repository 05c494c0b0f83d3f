"""Conditioned MLP noise predictor with hand-rolled reverse-mode gradients.

The network maps concat(x_t, c, time_embedding(t / t_max)) through tanh
hidden layers to a linear prediction of the noise that produced x_t. All
parameters live in one flat float64 vector so the optimizer, checkpoints,
and finite-difference probes share the same storage layout:

    for each layer, W raveled row-major (out, in), then b (out,).

Checkpoint byte layout (little-endian):

    bytes 0..7    magic b"PDCKPT01"
    bytes 8..11   uint32 header length n
    bytes 12..    n bytes of UTF-8 JSON: {"version", "arch", "seed",
                  "theta_len", optional "meta"}
    then          theta_len * 8 bytes, float64 array theta

All arithmetic is 64-bit.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"PDCKPT01"
CHECKPOINT_VERSION = 1


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required."""


class CheckpointFormatError(RuntimeError):
    """Checkpoint bytes do not match the documented layout."""


@dataclass(frozen=True)
class MLPArch:
    """Shape record for the denoiser: sizes, activation, and the timestep
    horizon t_max used to normalize the sinusoidal time embedding."""

    d: int
    d_c: int
    time_emb_dim: int = 8
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    t_max: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.d_c < 0:
            raise ValueError(f"d_c must be >= 0, got {self.d_c}")
        if self.time_emb_dim < 2 or self.time_emb_dim % 2 != 0:
            raise ValueError(f"time_emb_dim must be even and >= 2, got {self.time_emb_dim}")
        if any(h < 1 for h in self.hidden):
            raise ValueError(f"hidden widths must be >= 1, got {self.hidden}")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.t_max < 1:
            raise ValueError(f"t_max must be >= 1, got {self.t_max}")

    @property
    def input_dim(self) -> int:
        return self.d + self.d_c + self.time_emb_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        sizes = [self.input_dim, *self.hidden, self.d]
        return [(sizes[i + 1], sizes[i]) for i in range(len(sizes) - 1)]

    def param_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes())

    def as_dict(self) -> dict:
        return {
            "d": self.d,
            "d_c": self.d_c,
            "time_emb_dim": self.time_emb_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "t_max": self.t_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPArch":
        return cls(
            d=int(d["d"]),
            d_c=int(d["d_c"]),
            time_emb_dim=int(d["time_emb_dim"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            activation=str(d["activation"]),
            t_max=int(d["t_max"]),
        )


@dataclass
class DenoiserParams:
    """Flat parameter vector plus the arch that gives it shape."""

    theta: np.ndarray
    arch: MLPArch

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64)
        if self.theta.ndim != 1 or self.theta.shape[0] != self.arch.param_count():
            raise ValueError(
                f"theta length {self.theta.shape} does not match arch count {self.arch.param_count()}"
            )
        if not np.all(np.isfinite(self.theta)):
            raise NumericError("non-finite entries in theta")

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.theta.copy(), self.arch)


@dataclass
class GradVector:
    """Flat gradient, same layout and length as the associated theta."""

    g: np.ndarray

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.ndim != 1:
            raise ValueError("gradient must be a flat vector")
        if not np.all(np.isfinite(self.g)):
            raise NumericError("non-finite entries in gradient")


def time_embedding(t, t_max: int, dim: int) -> np.ndarray:
    """Sinusoidal embedding of t/t_max: columns [sin, cos] at frequencies 2^j.

    Accepts a scalar timestep or an integer array; returns (dim,) or (B, dim).
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    u = t_arr / float(t_max)
    half = dim // 2
    freqs = 2.0 ** np.arange(half)
    ang = 2.0 * np.pi * u[:, None] * freqs[None, :]
    emb = np.empty((t_arr.shape[0], dim), dtype=np.float64)
    emb[:, 0::2] = np.sin(ang)
    emb[:, 1::2] = np.cos(ang)
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        return emb[0]
    return emb


def unpack_params(params: DenoiserParams) -> list[tuple[np.ndarray, np.ndarray]]:
    """Views of theta as per-layer (W, b); no copies."""
    layers = []
    off = 0
    for out, inp in params.arch.layer_shapes():
        w = params.theta[off : off + out * inp].reshape(out, inp)
        off += out * inp
        b = params.theta[off : off + out]
        off += out
        layers.append((w, b))
    return layers


def init_params(arch: MLPArch, rng: np.random.Generator) -> DenoiserParams:
    """Zero-mean normal weights scaled by 1/sqrt(fan_in); zero biases."""
    chunks = []
    for out, inp in arch.layer_shapes():
        w = rng.standard_normal((out, inp)) / math.sqrt(inp)
        chunks.append(w.ravel())
        chunks.append(np.zeros(out))
    return DenoiserParams(np.concatenate(chunks), arch)


def _as_batch(x, dim: int, name: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        if a.shape[0] != dim:
            raise ValueError(f"{name} has dimension {a.shape[0]}, expected {dim}")
        return a[None, :], True
    if a.ndim == 2:
        if a.shape[1] != dim:
            raise ValueError(f"{name} has dimension {a.shape[1]}, expected {dim}")
        return a, False
    raise ValueError(f"{name} must be 1-D or 2-D, got shape {a.shape}")


def _forward_cached(params: DenoiserParams, x_t: np.ndarray, t, c: np.ndarray):
    """Batched forward pass; returns (eps_hat, activations) where activations
    holds the input to every layer (post-tanh for hidden layers)."""
    arch = params.arch
    emb = np.atleast_2d(time_embedding(t, arch.t_max, arch.time_emb_dim))
    b = x_t.shape[0]
    if emb.shape[0] == 1 and b > 1:
        emb = np.broadcast_to(emb, (b, arch.time_emb_dim))
    if c.shape[0] == 1 and b > 1:
        c = np.broadcast_to(c, (b, arch.d_c))
    h = np.concatenate([x_t, c, emb], axis=1)
    layers = unpack_params(params)
    acts = [h]
    for w, bias in layers[:-1]:
        h = np.tanh(h @ w.T + bias)
        acts.append(h)
    w, bias = layers[-1]
    y = h @ w.T + bias
    return y, acts


def forward(params: DenoiserParams, x_t, t, c) -> np.ndarray:
    """eps_hat = MLP(concat(x_t, c, time_embedding(t))). Accepts single
    vectors or (B, ·) batches with a scalar or per-row t."""
    arch = params.arch
    xb, single_x = _as_batch(x_t, arch.d, "x_t")
    cb, _ = _as_batch(c, arch.d_c, "c")
    if cb.shape[0] not in (1, xb.shape[0]):
        raise ValueError(f"batch mismatch: x_t rows {xb.shape[0]}, c rows {cb.shape[0]}")
    y, _ = _forward_cached(params, xb, t, cb)
    return y[0] if single_x else y


def backward_batch(params: DenoiserParams, x_t: np.ndarray, t, c: np.ndarray,
                   upstream: np.ndarray) -> np.ndarray:
    """Flat gradient of sum_b <upstream_b, eps_hat_b> w.r.t. theta.

    Matrix-product accumulation over the batch is a fixed-shape reduction,
    so results do not depend on any outer chunking.
    """
    arch = params.arch
    _, acts = _forward_cached(params, x_t, t, c)
    layers = unpack_params(params)
    grads: list[np.ndarray | None] = [None] * (2 * len(layers))
    delta = upstream
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[2 * i] = (delta.T @ acts[i]).ravel()
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ w) * (1.0 - acts[i] ** 2)
    return np.concatenate(grads)


def backward(params: DenoiserParams, x_t, t, c, upstream) -> GradVector:
    """Reverse-mode gradient of <upstream, eps_hat(x_t, t, c)> w.r.t. theta."""
    arch = params.arch
    xb, _ = _as_batch(x_t, arch.d, "x_t")
    cb, _ = _as_batch(c, arch.d_c, "c")
    ub, _ = _as_batch(upstream, arch.d, "upstream")
    if xb.shape[0] != 1 or ub.shape[0] != 1:
        raise ValueError("backward takes a single sample; use backward_batch for batches")
    return GradVector(backward_batch(params, xb, t, cb, ub))


def sgd_step(params: DenoiserParams, grad: GradVector, lr: float) -> DenoiserParams:
    """theta <- theta - lr * g. lr = 0 is a no-op."""
    g = grad.g if isinstance(grad, GradVector) else np.asarray(grad, dtype=np.float64)
    if g.shape != params.theta.shape:
        raise ValueError(f"gradient length {g.shape} does not match theta {params.theta.shape}")
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient entries")
    if lr < 0:
        raise ValueError(f"lr must be >= 0, got {lr}")
    return DenoiserParams(params.theta - lr * g, params.arch)


class Sgd:
    """Plain SGD with optional momentum; momentum state kept here so params
    stay immutable values."""

    def __init__(self, lr: float, momentum: float = 0.0):
        if lr < 0:
            raise ValueError("lr must be >= 0")
        if not 0.0 <= momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        self.lr = lr
        self.momentum = momentum
        self._velocity: np.ndarray | None = None

    def step(self, params: DenoiserParams, grad: np.ndarray, lr: float | None = None) -> DenoiserParams:
        g = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient entries")
        eta = self.lr if lr is None else lr
        if self.momentum == 0.0:
            return DenoiserParams(params.theta - eta * g, params.arch)
        if self._velocity is None:
            self._velocity = np.zeros_like(params.theta)
        self._velocity = self.momentum * self._velocity + g
        return DenoiserParams(params.theta - eta * self._velocity, params.arch)


def pairwise_sum(values: list[np.ndarray] | list[float]):
    """Sum a list by a fixed-shape binary tree, independent of how leaves
    might later be computed in parallel."""
    items = list(values)
    if not items:
        raise ValueError("pairwise_sum of empty list")
    while len(items) > 1:
        nxt = []
        for i in range(0, len(items) - 1, 2):
            nxt.append(items[i] + items[i + 1])
        if len(items) % 2 == 1:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def save_checkpoint(path, params: DenoiserParams, seed: int | None = None,
                    meta: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "arch": params.arch.as_dict(),
        "seed": seed,
        "theta_len": int(params.theta.shape[0]),
    }
    if meta:
        header["meta"] = meta
    hj = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = CHECKPOINT_MAGIC + struct.pack("<I", len(hj)) + hj
    blob += params.theta.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> tuple[DenoiserParams, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    (hlen,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + hlen:
        raise CheckpointFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointFormatError(f"{path}: unreadable header: {e}") from e
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointFormatError(
            f"{path}: checkpoint version {header.get('version')} unsupported "
            f"(this build reads version {CHECKPOINT_VERSION})"
        )
    arch = MLPArch.from_dict(header["arch"])
    n = int(header["theta_len"])
    body = raw[12 + hlen :]
    if len(body) != 8 * n:
        raise CheckpointFormatError(f"{path}: theta payload is {len(body)} bytes, expected {8 * n}")
    theta = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return DenoiserParams(theta, arch), header
