import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepmovesort.features import (
    FeatureStats, TimedBox, destandardize_input, extract_input, extract_target, fit_stats,
    input_features, raw_differences,
)
from deepmovesort.geometry import BoundingBox

ID = FeatureStats.identity()


def tb(frame, x, y, w, h):
    return TimedBox(frame, BoundingBox(x, y, w, h))


def test_single_observation_row():
    f = extract_input([tb(3, 0.1, 0.2, 0.3, 0.4)], ID)
    assert f.shape == (1, 13)
    np.testing.assert_allclose(f[0], [0.1, 0.2, 0.3, 0.4] + [0.0] * 9)


def test_difference_channel_unit_gap():
    f = extract_input([tb(1, 0.1, 0.1, 0.2, 0.2), tb(2, 0.2, 0.1, 0.2, 0.2)], ID)
    np.testing.assert_allclose(f[1, 4:8], [0.1, 0, 0, 0], atol=1e-12)


def test_difference_channel_divided_by_gap():
    f = extract_input([tb(1, 0.1, 0.1, 0.2, 0.2), tb(3, 0.2, 0.1, 0.2, 0.2)], ID)
    np.testing.assert_allclose(f[1, 4:8], [0.05, 0, 0, 0], atol=1e-12)


def test_relative_time_and_layout():
    f = extract_input([tb(1, 0.1, 0.1, 0.2, 0.2), tb(4, 0.4, 0.1, 0.2, 0.2)], ID)
    assert f[-1, 12] == 0.0 and f[0, 12] == -3.0
    np.testing.assert_allclose(f[0, 8:12], [-0.1, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(f[-1, 8:12], 0.0)


def test_input_errors():
    with pytest.raises(ValueError):
        extract_input([], ID)
    with pytest.raises(ValueError):
        extract_input([tb(2, 0.1, 0.1, 0.2, 0.2), tb(2, 0.2, 0.1, 0.2, 0.2)], ID)
    with pytest.raises(ValueError):
        extract_input([tb(1, 50.0, 0.1, 0.2, 0.2)], ID)
    with pytest.raises(ValueError):
        TimedBox(-1, BoundingBox(0, 0, 1, 1))


def test_target_examples():
    last = tb(10, 0.5, 0.5, 0.1, 0.1)
    t = extract_target(last, [tb(11, 0.6, 0.5, 0.1, 0.1)], ID)
    np.testing.assert_allclose(t[0], [0.1, 0, 0, 0, 1], atol=1e-12)
    t = extract_target(last, [tb(11, 0.5, 0.5, 0.1, 0.1), tb(13, 0.5, 0.5, 0.1, 0.1)], ID)
    np.testing.assert_allclose(t[:, :4], 0.0)
    np.testing.assert_allclose(t[:, 4], [1, 3])
    with pytest.raises(ValueError):
        extract_target(last, [tb(10, 0.5, 0.5, 0.1, 0.1)], ID)


def test_fit_stats_closed_form():
    w1 = (np.array([0.0, 1.0]), np.array([[0.1, 0.1, 0.2, 0.2], [0.1, 0.1, 0.2, 0.2]]))
    w2 = (np.array([0.0, 1.0]), np.array([[0.1, 0.1, 0.2, 0.2], [0.3, 0.1, 0.2, 0.2]]))
    s = fit_stats([w1, w2])
    assert s.diff_mean[0] == pytest.approx(0.1)
    assert s.diff_std[0] == pytest.approx(0.1)
    assert s.diff_std[1] == pytest.approx(1e-8)


def test_fit_stats_constant_and_permutation():
    w = (np.array([0.0, 1.0, 2.0]), np.tile([0.1, 0.2, 0.3, 0.4], (3, 1)))
    s = fit_stats([w, w])
    np.testing.assert_allclose(s.diff_mean, 0.0)
    np.testing.assert_allclose(s.diff_std, 1e-8)
    rng = np.random.default_rng(0)
    ws = [(np.arange(4.0), rng.uniform(0.1, 0.5, (4, 4))) for _ in range(5)]
    a, b = fit_stats(ws), fit_stats(ws[::-1])
    for k, v in a.to_dict().items():
        np.testing.assert_allclose(v, b.to_dict()[k], rtol=1e-12)
    with pytest.raises(ValueError):
        fit_stats([w])


histories = st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 5), min_size=n - 1, max_size=n - 1),
    st.lists(st.lists(st.floats(0.05, 0.9), min_size=4, max_size=4), min_size=n, max_size=n),
))


def _arrays(h):
    gaps, boxes = h
    return np.concatenate([[0.0], np.cumsum(gaps)]).astype(float), np.array(boxes)


@given(histories, st.floats(0.01, 3.0), st.floats(-1.0, 1.0))
def test_destandardize_round_trip(h, std, mean):
    frames, boxes = _arrays(h)
    stats = FeatureStats(np.full(4, mean), np.full(4, std), np.full(4, -mean), np.full(4, 2 * std))
    f = input_features(frames, boxes, stats)
    raw = destandardize_input(f, stats)
    ref = input_features(frames, boxes, ID)
    np.testing.assert_allclose(raw[1:, 4:8], ref[1:, 4:8], atol=1e-9)
    np.testing.assert_allclose(raw[:-1, 8:12], ref[:-1, 8:12], atol=1e-9)


@given(histories, st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4))
def test_translation_covariance(h, shift):
    frames, boxes = _arrays(h)
    a = input_features(frames, boxes, ID)
    b = input_features(frames, boxes + np.array(shift), ID)
    np.testing.assert_allclose(b[:, 4:], a[:, 4:], atol=1e-9)
    np.testing.assert_allclose(b[:, :4] - a[:, :4], np.tile(shift, (len(frames), 1)), atol=1e-12)


@given(histories)
def test_doubling_gaps_halves_differences(h):
    frames, boxes = _arrays(h)
    np.testing.assert_allclose(raw_differences(2 * frames, boxes), raw_differences(frames, boxes) / 2, atol=1e-12)
