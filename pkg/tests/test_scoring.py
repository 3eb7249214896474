import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from dora.errors import ConfigError
from dora.layers import DoraLinear, LayerId, MatrixKind, prune
from dora.scoring import raw_scores, update_layer, update_smoothed

LID = LayerId(0, MatrixKind.VALUE)


def layer_from(a_cols, b_rows, gates):
    a = np.array(a_cols, dtype=float).T
    b = np.array(b_rows, dtype=float)
    layer = DoraLinear(np.zeros((a.shape[0], b.shape[1])), len(gates), LID)
    layer.A.value[:] = a
    layer.B.value[:] = b
    layer.c.value[0] = gates
    return layer


def random_layer(rng, rank=None):
    rank = rank or int(rng.integers(1, 7))
    layer = DoraLinear(rng.normal(size=(6, 5)), rank, LID, rng)
    layer.c.value[0] = rng.normal(size=rank)
    return layer


def test_single_component_scores_one(rng):
    for _ in range(100):
        assert raw_scores(random_layer(rng, rank=1)).tolist() == [1.0]


def test_single_live_component_among_pruned_scores_one(rng):
    for _ in range(20):
        layer = random_layer(rng, rank=4)
        for comp in layer.components[1:]:
            prune(comp)
        assert raw_scores(layer).tolist() == [1.0, 0.0, 0.0, 0.0]


def test_anti_aligned_doubling_can_raise_other_scores():
    # doubling the first gate cancels part of the second update
    layer = layer_from([[1, 0], [1, 0]], [[-1, 0], [3, 0]], [1.0, 1.0])
    before = raw_scores(layer)
    layer.c.value[0, 0] = 2.0
    assert raw_scores(layer)[1] > before[1]


def test_identical_components_split_evenly():
    layer = layer_from([[1, 2], [1, 2]], [[0.5, -1, 3], [0.5, -1, 3]], [0.7, 0.7])
    assert np.allclose(raw_scores(layer), [0.5, 0.5], atol=1e-15)


def test_orthogonal_norms_three_and_four():
    layer = layer_from([[1, 0], [0, 1]], [[3, 0], [0, 4]], [1.0, 1.0])
    d1 = np.outer([1, 0], [3, 0])
    d2 = np.outer([0, 1], [0, 4])
    expected = [np.linalg.norm(d1) / np.linalg.norm(d1 + d2), np.linalg.norm(d2) / np.linalg.norm(d1 + d2)]
    assert np.allclose(expected, [0.6, 0.8])
    assert np.allclose(raw_scores(layer), expected, atol=1e-15)


def test_zero_total_update_scores_zero(rng):
    layer = DoraLinear(rng.normal(size=(4, 4)), 3, LID, rng)
    assert raw_scores(layer).tolist() == [0.0, 0.0, 0.0]


def test_scores_sum_at_least_one_on_random_layers(rng):
    for _ in range(100):
        layer = random_layer(rng)
        assert raw_scores(layer).sum() >= 1 - 1e-9


def test_pruned_component_scores_zero(rng):
    layer = random_layer(rng, rank=4)
    prune(layer.components[2])
    s = raw_scores(layer)
    assert s[2] == 0.0 and s.sum() >= 1 - 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 6))
def test_doubling_a_gate_shifts_share_to_it(seed, rank):
    rng = np.random.default_rng(seed)
    layer = random_layer(rng, rank)
    before = raw_scores(layer)
    own = layer.components[0].delta()
    rest = layer.delta_matrix() - own
    # the shared denominator only grows when the component is not anti-aligned with the rest
    assume(np.sum(own * rest) >= 0 and np.linalg.norm(own) > 1e-9)
    layer.c.value[0, 0] *= 2
    after = raw_scores(layer)
    assert after[0] > before[0]
    assert np.all(after[1:] < before[1:])


def test_ema_beta_zero_tracks_raw(rng):
    layer = random_layer(rng, rank=2)
    comp = layer.components[0]
    for s in [0.3, 0.9, 0.1]:
        assert update_smoothed(comp, s, 0.0) == s


def test_ema_hand_value(rng):
    comp = random_layer(rng, rank=1).components[0]
    update_smoothed(comp, 0.5, 0.9)  # first event seeds the average
    assert update_smoothed(comp, 0.7, 0.9) == pytest.approx(0.52, abs=1e-15)


def test_ema_constant_stream_converges_monotonically(rng):
    layer = random_layer(rng, rank=1)
    update_layer(layer, np.array([0.1]), 0.9)
    prev = 0.1
    for _ in range(200):
        cur = update_layer(layer, np.array([0.8]), 0.9)[0]
        assert prev <= cur <= 0.8
        prev = cur
    assert prev == pytest.approx(0.8, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 5), min_size=1, max_size=40), st.floats(0, 0.999))
def test_ema_stays_within_history_range(stream, beta):
    layer = DoraLinear(np.zeros((2, 2)), 1, LID)
    for s in stream:
        v = update_layer(layer, np.array([s]), beta)[0]
        # tolerance absorbs one rounding step of the convex combination
        assert min(stream) - 1e-12 <= v <= max(stream) + 1e-12


def test_ema_strictly_decays_for_pruned_component(rng):
    layer = random_layer(rng, rank=3)
    update_layer(layer, raw_scores(layer), 0.9)
    prune(layer.components[1])
    prev = layer.smoothed[1]
    for _ in range(5):
        update_layer(layer, raw_scores(layer), 0.9)
        assert layer.smoothed[1] < prev
        prev = layer.smoothed[1]


@pytest.mark.parametrize("beta", [-0.1, 1.0, 1.5])
def test_bad_beta_rejected(rng, beta):
    with pytest.raises(ConfigError, match="beta"):
        update_smoothed(random_layer(rng).components[0], 0.5, beta)
