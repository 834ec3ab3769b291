"""Distance-based trade-off metrics between inter-video separability and intra-video consistency.

Distances between two grids are patch-averaged L2 norms: ``(1/N) sum_i ||u_i - v_i||``.
Inter-video distances compare middle frames (index ``T // 2``) of different
videos; intra-video distances compare frames ``(t, t + k)`` of one video with
the same temporal offset rule used for training.
"""

from dataclasses import asdict, dataclass, field

import numpy as np

from .data import check_homogeneous, frame_offset
from .errors import ParameterError
from .numerics import softmax_rows
from .objective import CorrelationPair
from .projection import project_forward

DEFAULT_GAMMA = 0.3

# Per-model scale factors D_intra^ori / D_inter^ori reported for sixteen
# image encoders (with and without the trained head).
REPORTED_GAMMAS = (
    0.1855, 0.3289, 0.2283, 0.2645, 0.3365, 0.3876, 0.2489, 0.3737,
    0.3321, 0.3053, 0.2817, 0.3084, 0.3378, 0.3505, 0.2730, 0.2916,
)
REPORTED_AVERAGE_GAMMA = 0.3021


@dataclass
class TradeoffMetrics:
    d_inter_ori: float
    r_inter: float
    d_inter: float
    d_intra_ori: float
    d_intra: float
    gamma: float
    margin: float
    cyc_acc: float
    inter_degenerate: bool = False
    intra_degenerate_videos: int = 0

    def to_dict(self):
        return asdict(self)


def grid_distance(u, v):
    """Patch-averaged L2 distance; broadcasts over leading axes."""
    return np.mean(np.linalg.norm(u - v, axis=-1), axis=-1)


def corpus_representation(corpus, projection=None, positional=None, frames=None):
    """``(M, T', N, d)`` array of (positional-encoded, optionally projected) frames.

    ``positional`` is an ``(N, d)`` array added to every frame before projection;
    ``frames`` optionally selects frame indices.
    """
    check_homogeneous(corpus)
    x = np.stack([v.frames if frames is None else v.frames[frames] for v in corpus])
    if positional is not None:
        x = x + np.asarray(positional, dtype=np.float64)
    if projection is not None:
        x, _ = project_forward(projection, x)
    return x


def inter_video_distance(corpus, projection=None, positional=None, chunk=64):
    """Return ``(d_inter_ori, r_inter, d_inter, degenerate)``.

    ``d_inter`` is the mean pairwise middle-frame distance divided by twice
    the largest distance of any video to the per-patch center. A corpus with
    zero radius is flagged degenerate and gets ``d_inter = 0``.
    """
    if len(corpus) < 2:
        raise ParameterError("inter-video distance needs at least two videos")
    mid = corpus[0].num_frames // 2
    z = corpus_representation(corpus, projection, positional, frames=[mid])[:, 0]
    m = z.shape[0]
    total = 0.0
    for start in range(0, m, chunk):
        block = z[start : start + chunk]
        dists = grid_distance(block[:, None], z[None, :])  # (b, M)
        rows = np.arange(start, start + block.shape[0])
        mask = np.arange(m)[None, :] > rows[:, None]
        total += float(np.sum(dists[mask]))
    d_ori = 2.0 * total / (m * (m - 1))
    # shift by one video first so identical videos give an exactly zero radius
    z = z - z[:1]
    center = z.mean(axis=0)
    r_inter = float(np.max(grid_distance(z, center[None])))
    if r_inter == 0.0:
        return d_ori, 0.0, 0.0, True
    return d_ori, r_inter, d_ori / (2.0 * r_inter), False


def frame_pairs(num_frames, delta):
    k = frame_offset(delta, num_frames)
    return [(t, t + k) for t in range(num_frames - k)]


def intra_video_distance(corpus, delta, projection=None, positional=None):
    """Return ``(per_video_normalized, d_intra, d_intra_ori, degenerate_count)``.

    Each video's mean pair distance is divided by twice its radius (largest
    patch-averaged distance of a frame to the per-video mean frame over the
    frames used). Videos with zero radius contribute 0 and are counted.
    """
    check_homogeneous(corpus)
    pairs = frame_pairs(corpus[0].num_frames, delta)
    used = sorted({t for pair in pairs for t in pair})
    x = corpus_representation(corpus, projection, positional)  # (M, T, N, d)
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    per_pair = grid_distance(x[:, a], x[:, b])  # (M, P)
    ori = per_pair.mean(axis=1)
    xs = x[:, used]
    xs = xs - xs[:, :1]  # exact zeros for static videos
    mean_frame = xs.mean(axis=1, keepdims=True)
    radius = grid_distance(xs, mean_frame).max(axis=1)
    degenerate = radius == 0.0
    normalized = np.where(degenerate, 0.0, ori / np.where(degenerate, 1.0, 2.0 * radius))
    return normalized, float(normalized.mean()), float(ori.mean()), int(degenerate.sum())


def scale_factor_gamma(models):
    """``mean(intra_ori) / mean(inter_ori)`` across ``(d_intra_ori, d_inter_ori)`` pairs."""
    models = list(models)
    if not models:
        raise ParameterError("need at least one model")
    intra = np.array([m[0] for m in models], dtype=np.float64)
    inter = np.array([m[1] for m in models], dtype=np.float64)
    if np.any(inter <= 0):
        raise ParameterError("inter-video distances must be positive")
    return float(intra.mean() / inter.mean())


def margin(d_inter, d_intra, gamma=DEFAULT_GAMMA):
    return d_inter - gamma * d_intra


def cycle_accuracy(pair):
    """Fraction of patches whose most likely two-step destination is themselves.

    Ties in the argmax resolve to the smallest column index.
    """
    chain = pair.forward @ pair.backward
    return float(np.mean(np.argmax(chain, axis=1) == np.arange(chain.shape[0])))


def corpus_cycle_accuracy(corpus, delta, temperature, projection=None, positional=None):
    """Mean cycle accuracy over every video and every ``(t, t + k)`` frame pair."""
    pairs = frame_pairs(corpus[0].num_frames, delta)
    x = corpus_representation(corpus, projection, positional)
    accs = []
    for video in x:
        for t1, t2 in pairs:
            fwd = softmax_rows(video[t1] @ video[t2].T, temperature)
            bwd = softmax_rows(video[t2] @ video[t1].T, temperature)
            accs.append(cycle_accuracy(CorrelationPair(fwd, bwd)))
    return float(np.mean(accs))


def evaluate(corpus, delta, temperature, projection=None, positional=None, gamma=DEFAULT_GAMMA):
    """All trade-off metrics for one representation of ``corpus``."""
    d_inter_ori, r_inter, d_inter, inter_deg = inter_video_distance(corpus, projection, positional)
    _, d_intra, d_intra_ori, intra_deg = intra_video_distance(corpus, delta, projection, positional)
    acc = corpus_cycle_accuracy(corpus, delta, temperature, projection, positional)
    return TradeoffMetrics(
        d_inter_ori=d_inter_ori,
        r_inter=r_inter,
        d_inter=d_inter,
        d_intra_ori=d_intra_ori,
        d_intra=d_intra,
        gamma=gamma,
        margin=margin(d_inter, d_intra, gamma),
        cyc_acc=acc,
        inter_degenerate=inter_deg,
        intra_degenerate_videos=intra_deg,
    )
