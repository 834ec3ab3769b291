"""Positional encodings, positional-encoding augmentation (PEA) and the shortcut probe.

PEA resizes the positional grid by a factor ``1 + alpha`` with bilinear
interpolation and crops a random window of the original size back out. The
backward frame of a palindrome is encoded with the augmented grid, so exact
position matching no longer closes the cycle.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import SyntheticModelSpec, frame_offset, generate_corpus
from .errors import FormatError, ParameterError, ShapeError
from .metrics import cycle_accuracy
from .objective import cycle_loss
from .optim import OptimizerState, adamw_step
from .projection import init_linear, param_arrays, project_backward, project_forward, with_arrays

PROBE_SETTINGS = ("irrelevant", "shuffled", "normal")


@dataclass(frozen=True)
class PositionalGrid:
    """Positional encodings for an ``n_h x n_w`` token grid; ``values`` is ``(n_h * n_w, dim)``."""

    values: np.ndarray
    n_h: int
    n_w: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        if v.ndim != 2 or v.shape[0] != self.n_h * self.n_w:
            raise ShapeError(f"values {v.shape} do not fit a {self.n_h}x{self.n_w} grid")
        if not np.all(np.isfinite(v)):
            raise ShapeError("positional grid has non-finite entries")

    @property
    def dim(self):
        return self.values.shape[1]

    def as_image(self):
        return self.values.reshape(self.n_h, self.n_w, self.dim)

    def scaled(self, factor):
        return PositionalGrid(self.values * factor, self.n_h, self.n_w)


def _axis_encoding(pos, size):
    n_freq = (size + 1) // 2
    omega = 1.0 / 10000.0 ** (np.arange(n_freq) / n_freq)
    angles = np.outer(pos, omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)[:, :size]


def sinusoidal_grid(n_h, n_w, dim):
    """2-D sine/cosine encoding: rows in the first ``dim/2`` features, columns in the rest.

    Each half is ``[sin(p w_0), ..., sin(p w_K), cos(p w_0), ..., cos(p w_K)]``
    with geometric frequencies ``w_k = 10000^(-k/K)``.
    """
    if dim % 2 or dim < 4:
        raise ParameterError(f"dim must be even and >= 4, got {dim}")
    half = dim // 2
    rows, cols = np.meshgrid(np.arange(n_h), np.arange(n_w), indexing="ij")
    enc = np.concatenate(
        [_axis_encoding(rows.ravel(), half), _axis_encoding(cols.ravel(), half)], axis=1
    )
    return PositionalGrid(enc, n_h, n_w)


def _resize_axis(img, out, axis):
    size = img.shape[axis]
    src = (np.arange(out) + 0.5) * (size / out) - 0.5
    src = np.clip(src, 0.0, size - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, size - 1)
    w = src - i0
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = out
    return a + w.reshape(shape) * (b - a)


def bilinear_resize(img, out_h, out_w):
    """Half-pixel-centred bilinear resize of an ``(H, W, C)`` array with edge clamping.

    Written as ``a + w (b - a)`` so constant inputs are reproduced exactly.
    """
    return _resize_axis(_resize_axis(img, out_h, 0), out_w, 1)


def augmented_size(side, alpha):
    # tolerance keeps e.g. 1.1 * 10 from rounding up to 12
    return int(math.ceil((1.0 + alpha) * side - 1e-9))


def pea_augment(grid, alpha, rng):
    """Resize to ``ceil((1 + alpha) * side)`` per axis, then take a random crop of the original size."""
    if not alpha >= 0:
        raise ParameterError(f"alpha must be non-negative, got {alpha}")
    h2 = augmented_size(grid.n_h, alpha)
    w2 = augmented_size(grid.n_w, alpha)
    oy = int(rng.integers(0, h2 - grid.n_h + 1))
    ox = int(rng.integers(0, w2 - grid.n_w + 1))
    if (h2, w2) == (grid.n_h, grid.n_w):
        return PositionalGrid(grid.values.copy(), grid.n_h, grid.n_w)
    big = bilinear_resize(grid.as_image(), h2, w2)
    crop = big[oy : oy + grid.n_h, ox : ox + grid.n_w]
    return PositionalGrid(crop.reshape(-1, grid.dim), grid.n_h, grid.n_w)


def local_distances(grid, radius=2):
    """Encoding distances of every position pair at offset ``(dy, dx)`` with ``max(|dy|, |dx|) <= radius``.

    Each unordered pair appears once, grouped by offset. Used to check that
    augmentation keeps the local geometry of the grid in rank order; adjacent
    pairs alone are useless for that because a sinusoidal grid gives every
    adjacent pair the same distance.
    """
    img = grid.as_image()
    h, w = grid.n_h, grid.n_w
    out = []
    for dy in range(radius + 1):
        for dx in range(-radius, radius + 1):
            if dy == 0 and dx <= 0:
                continue
            x0, x1 = max(0, -dx), w - max(0, dx)
            if dy >= h or x1 <= x0:
                continue
            a = img[: h - dy, x0:x1]
            b = img[dy:, x0 + dx : x1 + dx]
            out.append(np.linalg.norm(a - b, axis=-1).ravel())
    return np.concatenate(out) if out else np.zeros(0)


_PE_HEADER = struct.Struct("<4sIIII")


def write_positional(path, grid):
    """Store a grid as magic ``CSPE``, version, dim, n_h, n_w, then float32 values."""
    with open(path, "wb") as fh:
        fh.write(_PE_HEADER.pack(b"CSPE", 1, grid.dim, grid.n_h, grid.n_w))
        fh.write(np.ascontiguousarray(grid.values, dtype="<f4").tobytes())


def read_positional(path):
    buf = Path(path).read_bytes()
    if buf[:4] != b"CSPE":
        raise FormatError("bad magic, expected b'CSPE'", 0)
    if len(buf) < _PE_HEADER.size:
        raise FormatError("truncated header", len(buf))
    _, version, dim, n_h, n_w = _PE_HEADER.unpack_from(buf, 0)
    if version != 1:
        raise FormatError(f"unsupported version {version}", 4)
    count = dim * n_h * n_w
    if len(buf) != _PE_HEADER.size + 4 * count:
        raise FormatError("payload size does not match header", _PE_HEADER.size)
    vals = np.frombuffer(buf, dtype="<f4", count=count, offset=_PE_HEADER.size)
    return PositionalGrid(vals.astype(np.float64).reshape(n_h * n_w, dim), n_h, n_w)


# --- shortcut probe -------------------------------------------------------------


@dataclass
class ProbeConfig:
    """Synthetic instance and optimizer settings for :func:`shortcut_probe`.

    Frames follow the :mod:`cosettle.data` generative model with isotropic
    covariances: ``spread`` for patch/video spread and ``frame_noise`` for the
    same-patch temporal difference. The defaults make temporal noise swamp the
    per-patch content so a shuffled intermediate frame carries no usable
    correspondence, while the scaled positional grid is strong enough to be
    found within a few steps. Batches of 16 keep the per-step accuracy curve
    from being dominated by sampling noise.
    """

    alpha: float = 0.0
    temperature: float = 0.03
    steps: int = 500
    lr: float = 1e-2
    dim: int = 64
    n_h: int = 7
    n_w: int = 7
    videos: int = 16
    frames: int = 4
    batch_size: int = 16
    spread: float = 1.0
    frame_noise: float = 64.0
    pos_scale: float = 48.0
    delta: float = 0.15
    seed: int = 0


@dataclass
class ShortcutProbeReport:
    setting: str
    steps: int
    loss: list = field(default_factory=list)
    identity_accuracy: list = field(default_factory=list)

    def to_json(self):
        return json.dumps(
            {"setting": self.setting, "steps": self.steps, "loss": self.loss,
             "identity_accuracy": self.identity_accuracy},
            sort_keys=True,
        )


def _probe_inputs(setting, corpus, v, rng, k):
    video = corpus[v]
    t1 = int(rng.integers(0, video.num_frames - k))
    t2 = t1 + k
    z1 = video.frames[t1]
    if setting == "normal":
        z2 = video.frames[t2]
    elif setting == "shuffled":
        z2 = video.frames[t2][rng.permutation(video.num_patches)]
    else:
        other = (v + 1 + int(rng.integers(0, len(corpus) - 1))) % len(corpus)
        z2 = corpus[other].frames[t2]
    return z1, z2


def shortcut_probe(setting, config=None):
    """Train a linear+LayerNorm head with the cycle loss alone and track identity accuracy.

    ``setting`` picks the intermediate frame: ``"normal"`` (true next frame),
    ``"shuffled"`` (its patches randomly permuted) or ``"irrelevant"`` (a frame
    of a different video). Forward and intermediate frames get the plain
    positional grid; the backward frame gets a PEA-augmented one when
    ``config.alpha > 0``. Step ``s`` of the report holds the batch loss and
    accuracy evaluated before the ``s``-th update.
    """
    if setting not in PROBE_SETTINGS:
        raise ParameterError(f"setting must be one of {PROBE_SETTINGS}, got {setting!r}")
    cfg = config or ProbeConfig()
    rng = np.random.default_rng(cfg.seed)
    spec = SyntheticModelSpec(
        dim=cfg.dim, n_h=cfg.n_h, n_w=cfg.n_w, frames_per_video=cfg.frames,
        videos=cfg.videos, intra_cov=cfg.frame_noise, inter_cov=cfg.spread, seed=cfg.seed,
    )
    corpus = generate_corpus(spec)
    k = frame_offset(cfg.delta, cfg.frames)
    pos = sinusoidal_grid(cfg.n_h, cfg.n_w, cfg.dim).scaled(cfg.pos_scale)
    params = init_linear(cfg.dim, rng)
    state = OptimizerState.zeros_like(param_arrays(params))

    report = ShortcutProbeReport(setting=setting, steps=cfg.steps)
    for _ in range(cfg.steps):
        videos = rng.integers(0, len(corpus), size=cfg.batch_size)
        grads = {name: np.zeros_like(a) for name, a in param_arrays(params).items()}
        loss = acc = 0.0
        for v in videos:
            z1, z2 = _probe_inputs(setting, corpus, int(v), rng, k)
            pos_b = pea_augment(pos, cfg.alpha, rng) if cfg.alpha > 0 else pos
            outs = [project_forward(params, x) for x in (z1 + pos.values, z2 + pos.values, z1 + pos_b.values)]
            res = cycle_loss(outs[0][0], outs[1][0], outs[2][0], cfg.temperature)
            loss += res.value
            acc += cycle_accuracy(res.pair)
            for (_, cache), up in zip(outs, (res.grad_forward, res.grad_intermediate, res.grad_backward)):
                for name, g in project_backward(params, cache, up).params.items():
                    grads[name] += g
        b = float(cfg.batch_size)
        report.loss.append(loss / b)
        report.identity_accuracy.append(acc / b)
        grads = {name: g / b for name, g in grads.items()}
        new_arrays, state = adamw_step(param_arrays(params), grads, state, cfg.lr)
        params = with_arrays(params, new_arrays)
    return report
