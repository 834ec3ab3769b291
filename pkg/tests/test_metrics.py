import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cosettle.data import SyntheticModelSpec, VideoEmbeddingSequence, generate_corpus
from cosettle.errors import ParameterError
from cosettle.metrics import (
    DEFAULT_GAMMA,
    REPORTED_AVERAGE_GAMMA,
    REPORTED_GAMMAS,
    corpus_cycle_accuracy,
    cycle_accuracy,
    evaluate,
    inter_video_distance,
    intra_video_distance,
    margin,
    scale_factor_gamma,
)
from cosettle.objective import CorrelationPair


def _corpus(seed=0, videos=6, **kw):
    base = dict(dim=6, n_h=2, n_w=3, frames_per_video=5, videos=videos, intra_cov=0.5, inter_cov=1.0, seed=seed)
    base.update(kw)
    return generate_corpus(SyntheticModelSpec(**base))


def _video(frames, vid=0):
    frames = np.asarray(frames, dtype=float)
    return VideoEmbeddingSequence(frames, 1, frames.shape[1], video_id=vid)


def test_identical_videos_degenerate():
    v = _corpus(videos=1)[0]
    d_ori, r, d, degenerate = inter_video_distance([v, v, v])
    assert (d_ori, r, d, degenerate) == (0.0, 0.0, 0.0, True)


def test_two_point_inter_geometry():
    shift = np.array([2.0, 0.0, 0.0])
    base = np.random.default_rng(0).standard_normal((3, 4, 3))
    a, b = _video(base, 0), _video(base + shift, 1)
    d_ori, r, d, degenerate = inter_video_distance([a, b])
    assert d_ori == pytest.approx(2.0) and r == pytest.approx(1.0) and d == pytest.approx(1.0)
    assert not degenerate


def test_inter_normalized_in_unit_interval_large_corpus():
    corpus = _corpus(videos=1000, dim=4, n_h=2, n_w=2, frames_per_video=2)
    _, _, d, _ = inter_video_distance(corpus)
    assert 0.0 < d <= 1.0


def test_static_video_contributes_zero():
    frame = np.random.default_rng(1).standard_normal((4, 3))
    per_video, d_intra, _, degenerate = intra_video_distance([_video(np.stack([frame] * 6))], 0.15)
    assert per_video[0] == 0.0 and d_intra == 0.0 and degenerate == 1


def test_two_frame_intra_geometry():
    f0 = np.random.default_rng(2).standard_normal((4, 3))
    video = _video(np.stack([f0, f0 + np.array([0.0, 2.0, 0.0])]))
    per_video, d_intra, d_ori, degenerate = intra_video_distance([video], 0.15)
    assert d_ori == pytest.approx(2.0) and per_video[0] == pytest.approx(1.0) and degenerate == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_per_video_values_in_unit_interval(seed):
    per_video, *_ = intra_video_distance(_corpus(seed), 0.3)
    assert np.all((per_video >= 0) & (per_video <= 1.0 + 1e-12))


def test_gamma_scalars_and_reported_average():
    assert scale_factor_gamma([(1.0, 2.0)]) == 0.5
    assert scale_factor_gamma([(0.3, 0.7)] * 4) == pytest.approx(0.3 / 0.7)
    assert len(REPORTED_GAMMAS) == 16
    assert float(np.mean(REPORTED_GAMMAS)) == pytest.approx(REPORTED_AVERAGE_GAMMA, abs=5e-5)
    with pytest.raises(ParameterError):
        scale_factor_gamma([])


def test_margin_table_rows():
    assert margin(0.3122, 0.1131, 0.3) == pytest.approx(0.2783, abs=5e-5)
    assert margin(0.5073, 0.1834, 0.3) == pytest.approx(0.4523, abs=5e-5)
    assert margin(0.42, 0.0, 0.7) == 0.42
    assert DEFAULT_GAMMA == 0.3


def test_cycle_accuracy_rules():
    assert cycle_accuracy(CorrelationPair(np.eye(3), np.eye(3))) == 1.0
    uniform = np.full((4, 4), 0.25)
    assert cycle_accuracy(CorrelationPair(uniform, uniform)) == 0.25
    rng = np.random.default_rng(3)
    a = rng.random((5, 5))
    b = rng.random((5, 5))
    acc = cycle_accuracy(CorrelationPair(a / a.sum(1, keepdims=True), b / b.sum(1, keepdims=True)))
    assert 0.0 <= acc <= 1.0


def test_evaluate_invariants():
    m = evaluate(_corpus(4), 0.3, 0.5)
    assert m.d_inter == pytest.approx(m.d_inter_ori / (2 * m.r_inter), abs=1e-15)
    assert abs(m.margin - (m.d_inter - m.gamma * m.d_intra)) <= 1e-12
    assert 0.0 <= m.cyc_acc <= 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100), st.floats(0.1, 10.0))
def test_translation_and_scale_invariance(seed, shift, scale):
    corpus = _corpus(seed)
    ref = evaluate(corpus, 0.3, 0.5)
    moved = [_video(v.frames + shift, v.video_id) for v in corpus]
    m = evaluate([VideoEmbeddingSequence(v.frames, 2, 3, v.video_id) for v in moved], 0.3, 0.5)
    for key in ("d_inter_ori", "d_inter", "d_intra_ori", "d_intra", "margin"):
        assert getattr(m, key) == pytest.approx(getattr(ref, key), rel=1e-9, abs=1e-9)
    scaled = [VideoEmbeddingSequence(v.frames * scale, 2, 3, v.video_id) for v in corpus]
    s = evaluate(scaled, 0.3, 0.5)
    for key in ("d_inter", "d_intra", "margin"):
        assert getattr(s, key) == pytest.approx(getattr(ref, key), rel=1e-9, abs=1e-12)


def test_cycle_accuracy_scaling_with_temperature():
    corpus = _corpus(5)
    c = 3.0
    scaled = [VideoEmbeddingSequence(v.frames * c, 2, 3, v.video_id) for v in corpus]
    assert corpus_cycle_accuracy(scaled, 0.3, 0.5 * c * c) == corpus_cycle_accuracy(corpus, 0.3, 0.5)


def test_single_video_rejected():
    with pytest.raises(ParameterError):
        inter_video_distance(_corpus(videos=1))
