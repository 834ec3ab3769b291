"""Synthetic embedding corpora, palindrome frame sampling and the corpus file format.

A frame is an ``(N, d)`` float64 array of patch embeddings, patches in
row-major order over an ``n_h x n_w`` grid. A video stacks ``T`` such frames.

Generative model for synthetic corpora (video ``m``, patch ``i``, frame ``t``)::

    z[m, t, i] = c[m] + b[m, i] + e[m, t, i]
    c[m]    ~ N(0, inter_cov)      video mean
    b[m, i] ~ N(0, inter_cov)      patch spread around the video mean
    e[m, t, i] ~ N(0, intra_cov / 2)

so the same patch in two different frames differs by a vector with covariance
exactly ``intra_cov``. Video means (averaged over all patches and frames) have

    Cov(zbar) = (1 + 1/N) inter_cov + intra_cov / (2 N T)

and the difference of two independent video means has twice that covariance
(see :func:`video_mean_difference_cov`).

All generated values are rounded to float32 before being widened back to
float64, so a corpus survives the float32 file format bit-exactly.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

MAGIC = b"CSEB"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
_VIDEO_ID = struct.Struct("<Q")


@dataclass
class VideoEmbeddingSequence:
    """Frozen-encoder output for one video: ``frames`` has shape ``(T, N, d)``."""

    frames: np.ndarray
    n_h: int
    n_w: int
    video_id: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ShapeError(f"frames must be (T, N, d), got {self.frames.shape}")
        t, n, d = self.frames.shape
        if self.n_h * self.n_w != n or n < 1 or d < 1:
            raise ShapeError(f"grid {self.n_h}x{self.n_w} does not match {n} patches")
        if t < 2:
            raise ShapeError(f"a video needs at least 2 frames, got {t}")
        if not np.all(np.isfinite(self.frames)):
            raise ShapeError("frames contain non-finite values")

    @property
    def num_frames(self):
        return self.frames.shape[0]

    @property
    def num_patches(self):
        return self.frames.shape[1]

    @property
    def dim(self):
        return self.frames.shape[2]


@dataclass
class SyntheticModelSpec:
    dim: int
    n_h: int
    n_w: int
    frames_per_video: int
    videos: int
    intra_cov: np.ndarray
    inter_cov: np.ndarray
    seed: int = 0

    def __post_init__(self):
        for name in ("dim", "n_h", "n_w", "frames_per_video", "videos"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"{name} must be >= 1")
        self.intra_cov = _as_cov(self.intra_cov, self.dim, "intra_cov")
        self.inter_cov = _as_cov(self.inter_cov, self.dim, "inter_cov")


@dataclass
class ClipSample:
    """One palindrome ``t1 -> t2 -> t1``; forward and backward hold the same raw frame."""

    forward_frame: np.ndarray
    intermediate_frame: np.ndarray
    backward_frame: np.ndarray
    t1: int
    t2: int
    video_id: int = 0


def _as_cov(cov, dim, name):
    c = np.asarray(cov, dtype=np.float64)
    if c.ndim == 0:
        c = float(c) * np.eye(dim)
    elif c.ndim == 1:
        c = np.diag(c)
    if c.shape != (dim, dim):
        raise ParameterError(f"{name} must be {dim}x{dim}, got {c.shape}")
    if not np.all(np.isfinite(c)) or not np.allclose(c, c.T, rtol=0, atol=1e-12 * max(1.0, np.abs(c).max())):
        raise ParameterError(f"{name} must be finite and symmetric")
    c = 0.5 * (c + c.T)
    w = np.linalg.eigvalsh(c)
    if w.min() < -1e-10 * max(1.0, np.abs(w).max()):
        raise ParameterError(f"{name} is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return c


def psd_factor(cov):
    """Return ``L`` with ``L @ L.T == cov`` for a PSD matrix (eigen-based, handles rank deficiency)."""
    w, u = np.linalg.eigh(cov)
    return u * np.sqrt(np.clip(w, 0.0, None))


def video_mean_difference_cov(spec):
    """Closed-form ``E[(zbar_a - zbar_b)(zbar_a - zbar_b)^T]`` for :func:`generate_corpus`."""
    n = spec.n_h * spec.n_w
    t = spec.frames_per_video
    return 2.0 * ((1.0 + 1.0 / n) * spec.inter_cov + spec.intra_cov / (2.0 * n * t))


def generate_corpus(spec):
    """Draw a synthetic corpus; the same ``spec.seed`` gives bit-identical output."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_h * spec.n_w
    d = spec.dim
    t = spec.frames_per_video
    inter = psd_factor(spec.inter_cov)
    noise = psd_factor(spec.intra_cov / 2.0)

    corpus = []
    for m in range(spec.videos):
        center = rng.standard_normal(d) @ inter.T
        spread = rng.standard_normal((n, d)) @ inter.T
        eps = rng.standard_normal((t, n, d)) @ noise.T
        frames = (center + spread + eps).astype(np.float32).astype(np.float64)
        corpus.append(VideoEmbeddingSequence(frames, spec.n_h, spec.n_w, video_id=m))
    return corpus


def frame_offset(delta, num_frames):
    """Temporal offset ``k = max(1, round(delta * T))`` clamped to ``T - 1`` (half rounds up)."""
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"delta must lie in (0, 1), got {delta}")
    if num_frames < 2:
        raise ParameterError(f"need at least 2 frames, got {num_frames}")
    k = int(np.floor(delta * num_frames + 0.5))
    return min(max(1, k), num_frames - 1)


def sample_pair(video, delta, rng):
    """Sample ``t1`` uniformly and set ``t2 = t1 + k``; see :func:`frame_offset`."""
    k = frame_offset(delta, video.num_frames)
    t1 = int(rng.integers(0, video.num_frames - k))
    t2 = t1 + k
    z1 = video.frames[t1]
    return ClipSample(
        forward_frame=z1.copy(),
        intermediate_frame=video.frames[t2].copy(),
        backward_frame=z1.copy(),
        t1=t1,
        t2=t2,
        video_id=video.video_id,
    )


def stack_frames(corpus):
    """Stack a homogeneous corpus into one ``(M, T, N, d)`` array."""
    check_homogeneous(corpus)
    return np.stack([v.frames for v in corpus])


def check_homogeneous(corpus):
    if not corpus:
        raise ParameterError("corpus is empty")
    first = corpus[0]
    for v in corpus[1:]:
        if v.frames.shape != first.frames.shape or (v.n_h, v.n_w) != (first.n_h, first.n_w):
            raise ShapeError(
                f"video {v.video_id} has shape {v.frames.shape} on a {v.n_h}x{v.n_w} grid, "
                f"expected {first.frames.shape} on {first.n_h}x{first.n_w}"
            )
    return first.frames.shape


# --- file format -----------------------------------------------------------
#
#   offset  type      field
#   0       4 bytes   magic "CSEB"
#   4       u32       version (1)
#   8       u32       dim
#   12      u32       n_h
#   16      u32       n_w
#   20      u32       frames_per_video
#   24      u32       n_videos
#   28      per video: u64 video_id, then T*N*dim float32 in (frame, patch, feature) order
#
# Everything is little-endian.


def write_corpus(path, corpus):
    if not corpus:
        raise ParameterError("cannot write an empty corpus")
    t, n, d = check_homogeneous(corpus)
    first = corpus[0]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, d, first.n_h, first.n_w, t, len(corpus)))
        for v in corpus:
            fh.write(_VIDEO_ID.pack(int(v.video_id)))
            fh.write(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())


def read_corpus(path):
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        if len(buf) < 4 or buf[:4] != MAGIC:
            raise FormatError("bad magic, expected b'CSEB'", 0)
        raise FormatError("truncated header", len(buf))
    magic, version, d, n_h, n_w, t, m = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    for offset, name, value in ((8, "dim", d), (12, "n_h", n_h), (16, "n_w", n_w), (24, "n_videos", m)):
        if value < 1:
            raise FormatError(f"{name} must be positive, got {value}", offset)
    if t < 2:
        raise FormatError(f"frames_per_video must be >= 2, got {t}", 20)

    n = n_h * n_w
    payload = t * n * d * 4
    offset = _HEADER.size
    corpus = []
    for _ in range(m):
        if offset + _VIDEO_ID.size + payload > len(buf):
            raise FormatError("truncated video record", offset)
        (vid,) = _VIDEO_ID.unpack_from(buf, offset)
        values = np.frombuffer(buf, dtype="<f4", count=t * n * d, offset=offset + _VIDEO_ID.size)
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise FormatError("non-finite value", offset + _VIDEO_ID.size + 4 * int(bad[0]))
        frames = values.astype(np.float64).reshape(t, n, d)
        corpus.append(VideoEmbeddingSequence(frames, n_h, n_w, video_id=vid))
        offset += _VIDEO_ID.size + payload
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes", offset)
    return corpus
