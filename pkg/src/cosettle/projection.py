"""Projection head: a linear (or two-layer tanh MLP) map followed by LayerNorm.

Tokens are the rows of the input array; the last axis is the feature axis.
Forward and backward passes are written out by hand; ``project_backward``
returns exact gradients of the forward map for any upstream gradient.

Checkpoint layout (little-endian)::

    4 bytes  magic "CSPW"
    u32      version (1)
    u8       variant (0 = linear, 1 = MLP)
    u32      d
    f64[]    parameters, then eps_ln
               linear: weight (d*d, row-major), ln_gain (d), ln_bias (d)
               MLP:    weight1 (d*d), weight2 (d*d), ln_gain (d), ln_bias (d)
"""

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, FormatError, ParameterError, ShapeError

CHECKPOINT_MAGIC = b"CSPW"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sIBI")

DEFAULT_EPS_LN = 1e-6
DEFAULT_INIT_STD = 0.02


@dataclass(frozen=True)
class LinearProjection:
    """``g(z) = LayerNorm(W z)`` with learnable gain and bias.

    ``bypass_ln`` turns the head into the bare linear map ``W z``; the gain
    and bias are then unused and receive zero gradient.
    """

    weight: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    eps_ln: float = DEFAULT_EPS_LN
    bypass_ln: bool = False

    variant = "linear"
    param_names = ("weight", "ln_gain", "ln_bias")

    def __post_init__(self):
        _validate(self, ("weight",))

    @property
    def dim(self):
        return self.weight.shape[0]


@dataclass(frozen=True)
class MlpProjection:
    """``g(z) = LayerNorm(W2 tanh(W1 z))``."""

    weight1: np.ndarray
    weight2: np.ndarray
    ln_gain: np.ndarray
    ln_bias: np.ndarray
    eps_ln: float = DEFAULT_EPS_LN
    bypass_ln: bool = False

    variant = "mlp"
    param_names = ("weight1", "weight2", "ln_gain", "ln_bias")

    def __post_init__(self):
        _validate(self, ("weight1", "weight2"))

    @property
    def dim(self):
        return self.weight1.shape[0]


def _validate(params, weight_names):
    d = None
    for name in params.param_names:
        arr = np.asarray(getattr(params, name), dtype=np.float64)
        object.__setattr__(params, name, arr)
        if not np.all(np.isfinite(arr)):
            raise ParameterError(f"{name} has non-finite entries")
    for name in weight_names:
        w = getattr(params, name)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"{name} must be square, got {w.shape}")
        if d is None:
            d = w.shape[0]
        elif w.shape[0] != d:
            raise ShapeError(f"{name} has size {w.shape[0]}, expected {d}")
    for name in ("ln_gain", "ln_bias"):
        if getattr(params, name).shape != (d,):
            raise ShapeError(f"{name} must have shape ({d},)")
    if not params.eps_ln > 0:
        raise ParameterError("eps_ln must be positive")


def param_arrays(params):
    return {name: getattr(params, name) for name in params.param_names}


def with_arrays(params, arrays):
    """Copy of ``params`` with some parameter arrays replaced."""
    return replace(params, **arrays)


def init_linear(dim, rng, init_std=DEFAULT_INIT_STD, eps_ln=DEFAULT_EPS_LN, bypass_ln=False):
    """Identity plus small Gaussian noise; unit gain, zero bias."""
    w = np.eye(dim) + init_std * rng.standard_normal((dim, dim))
    return LinearProjection(w, np.ones(dim), np.zeros(dim), eps_ln, bypass_ln)


def init_mlp(dim, rng, init_std=DEFAULT_INIT_STD, eps_ln=DEFAULT_EPS_LN, bypass_ln=False):
    w1 = np.eye(dim) + init_std * rng.standard_normal((dim, dim))
    w2 = np.eye(dim) + init_std * rng.standard_normal((dim, dim))
    return MlpProjection(w1, w2, np.ones(dim), np.zeros(dim), eps_ln, bypass_ln)


def init_projection(variant, dim, rng, **kwargs):
    if variant == "linear":
        return init_linear(dim, rng, **kwargs)
    if variant == "mlp":
        return init_mlp(dim, rng, **kwargs)
    raise ParameterError(f"unknown projection variant {variant!r}")


@dataclass(frozen=True)
class ForwardCache:
    params: object
    input_shape: tuple
    x: np.ndarray
    hidden: np.ndarray  # tanh activations (MLP only)
    y: np.ndarray  # pre-normalization output
    y_hat: np.ndarray  # normalized, pre-affine
    inv_std: np.ndarray


@dataclass
class GradBundle:
    """Parameter gradients keyed like ``param_names`` plus the input gradient."""

    params: dict
    input: np.ndarray


def layer_norm_stats(y, eps):
    mean = y.mean(axis=-1, keepdims=True)
    centered = y - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def project_forward(params, grid):
    """Apply the head to every token of ``grid`` (shape ``(..., d)``)."""
    x = np.asarray(grid, dtype=np.float64)
    if x.shape[-1] != params.dim:
        raise ShapeError(f"input feature size {x.shape[-1]} != projection dim {params.dim}")
    shape = x.shape
    x = x.reshape(-1, shape[-1])
    if params.variant == "linear":
        hidden = None
        y = x @ params.weight.T
    else:
        hidden = np.tanh(x @ params.weight1.T)
        y = hidden @ params.weight2.T
    if params.bypass_ln:
        y_hat, inv_std = y, None
        out = y
    else:
        y_hat, inv_std = layer_norm_stats(y, params.eps_ln)
        out = y_hat * params.ln_gain + params.ln_bias
    cache = ForwardCache(params, shape, x, hidden, y, y_hat, inv_std)
    return out.reshape(shape), cache


def project_backward(params, cache, upstream):
    """Gradients of ``sum(upstream * out)`` w.r.t. every parameter and the input."""
    if cache.params is not params:
        raise ContractError("forward cache was produced with different parameters")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != cache.input_shape:
        raise ContractError(f"upstream shape {g.shape} does not match forward output {cache.input_shape}")
    g = g.reshape(-1, params.dim)
    grads = {}
    if params.bypass_ln:
        grads["ln_gain"] = np.zeros(params.dim)
        grads["ln_bias"] = np.zeros(params.dim)
        dy = g
    else:
        grads["ln_gain"] = np.sum(g * cache.y_hat, axis=0)
        grads["ln_bias"] = np.sum(g, axis=0)
        dyh = g * params.ln_gain
        dy = cache.inv_std * (
            dyh
            - dyh.mean(axis=-1, keepdims=True)
            - cache.y_hat * np.mean(dyh * cache.y_hat, axis=-1, keepdims=True)
        )
    if params.variant == "linear":
        grads["weight"] = dy.T @ cache.x
        dx = dy @ params.weight
    else:
        grads["weight2"] = dy.T @ cache.hidden
        dh = (dy @ params.weight2) * (1.0 - cache.hidden**2)
        grads["weight1"] = dh.T @ cache.x
        dx = dh @ params.weight1
    ordered = {name: grads[name] for name in params.param_names}
    return GradBundle(ordered, dx.reshape(cache.input_shape))


def core_jacobian(params, z=None):
    """Jacobian of the map before LayerNorm at point ``z`` (``W`` for the linear head)."""
    if params.variant == "linear":
        return params.weight
    a = np.tanh(params.weight1 @ np.asarray(z, dtype=np.float64))
    return params.weight2 @ ((1.0 - a * a)[:, None] * params.weight1)


# --- checkpoints ------------------------------------------------------------


def save_checkpoint(path, params):
    tag = 0 if params.variant == "linear" else 1
    body = [np.asarray(a, dtype="<f8").ravel() for a in param_arrays(params).values()]
    body.append(np.array([params.eps_ln], dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_CKPT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, tag, params.dim))
        fh.write(np.concatenate(body).tobytes())


def load_checkpoint(path):
    buf = Path(path).read_bytes()
    if len(buf) < 4 or buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad magic, expected b'CSPW'", 0)
    if len(buf) < _CKPT_HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, tag, d = _CKPT_HEADER.unpack_from(buf, 0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if tag not in (0, 1):
        raise FormatError(f"unknown variant tag {tag}", 8)
    if d < 1:
        raise FormatError("d must be positive", 9)
    n_weights = 1 if tag == 0 else 2
    count = n_weights * d * d + 2 * d + 1
    start = _CKPT_HEADER.size
    if len(buf) < start + 8 * count:
        raise FormatError(f"truncated parameters: need {8 * count} bytes", start)
    if len(buf) > start + 8 * count:
        raise FormatError("trailing bytes", start + 8 * count)
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=start).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        raise FormatError("non-finite parameter", start + 8 * int(bad[0]))
    pos = 0
    weights = []
    for _ in range(n_weights):
        weights.append(flat[pos : pos + d * d].reshape(d, d))
        pos += d * d
    gain = flat[pos : pos + d]
    bias = flat[pos + d : pos + 2 * d]
    eps = float(flat[pos + 2 * d])
    if tag == 0:
        return LinearProjection(weights[0], gain, bias, eps)
    return MlpProjection(weights[0], weights[1], gain, bias, eps)
