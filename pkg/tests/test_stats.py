import numpy as np
import pytest

from noisedesk import (
    ANIME_LATENT_MEANS,
    ANIME_LATENT_SAMPLE_COUNT,
    ANIME_LATENT_STDS,
    ChannelStats,
    DegenerateChannelError,
    ParameterError,
    SD1_LEGACY_SCALE,
    SDXL_LEGACY_SCALE,
    denormalize,
    legacy_denormalize,
    legacy_normalize,
    normalize,
    welford_update,
)


def _stats_of(stream):
    """stream: (channels, n) array folded in one observation at a time"""
    state = ChannelStats(stream.shape[0])
    for i in range(stream.shape[1]):
        state.update(stream[:, i:i + 1])
    return state


# ---------------------------------------------------------------- streaming

def test_textbook_stream():
    state = ChannelStats(1)
    for x in (1.0, 2.0, 3.0):
        state.update(np.array([x]))
    assert state.counts[0] == 3
    assert state.means[0] == 2.0
    assert state.m2s[0] == 2.0
    assert state.stds[0] == 1.0


def test_streaming_matches_two_pass_oracle():
    rng = np.random.default_rng(42)
    data = rng.normal(3.0, 2.5, (4, 100_000))
    state = ChannelStats(4)
    for chunk in np.array_split(data, 57, axis=1):
        state.update(chunk)
    np.testing.assert_allclose(state.means, data.mean(axis=1), rtol=0, atol=1e-10)
    np.testing.assert_allclose(state.stds, data.std(axis=1, ddof=1), rtol=0, atol=1e-10)


def test_single_and_batched_updates_agree():
    rng = np.random.default_rng(1)
    data = rng.standard_normal((3, 257))
    one_at_a_time = _stats_of(data)
    batched = ChannelStats(3).update(data)
    np.testing.assert_allclose(batched.means, one_at_a_time.means, atol=1e-12)
    np.testing.assert_allclose(batched.m2s, one_at_a_time.m2s, atol=1e-10)


def test_update_accepts_multidim_observations():
    rng = np.random.default_rng(2)
    latents = rng.standard_normal((4, 8, 8))
    state = ChannelStats(4).update(latents)
    np.testing.assert_allclose(state.means, latents.reshape(4, -1).mean(axis=1), atol=1e-12)
    assert state.counts[0] == 64


def test_empty_update_is_a_no_op():
    state = ChannelStats(2).update(np.ones((2, 3)))
    before = (state.counts.copy(), state.means.copy(), state.m2s.copy())
    state.update(np.empty((2, 0)))
    np.testing.assert_array_equal(state.counts, before[0])
    np.testing.assert_array_equal(state.means, before[1])
    np.testing.assert_array_equal(state.m2s, before[2])


def test_merge_exact_on_integer_streams():
    a = ChannelStats(1).update(np.array([[1.0, 3.0]]))
    b = ChannelStats(1).update(np.array([[5.0, 7.0]]))
    a.merge(b)
    assert a.counts[0] == 4
    assert a.means[0] == 4.0
    assert a.m2s[0] == 20.0  # sum of squared deviations of [1,3,5,7]

    whole = ChannelStats(1).update(np.array([[1.0, 3.0, 5.0, 7.0]]))
    assert whole.means[0] == a.means[0]
    assert whole.m2s[0] == a.m2s[0]


def test_merge_associative_within_tolerance():
    rng = np.random.default_rng(5)
    chunks = [rng.normal(1.0, 2.0, (2, n)) for n in (11, 300, 7)]
    left = ChannelStats(2).update(chunks[0]).merge(ChannelStats(2).update(chunks[1]))
    left.merge(ChannelStats(2).update(chunks[2]))
    bc = ChannelStats(2).update(chunks[1]).merge(ChannelStats(2).update(chunks[2]))
    right = ChannelStats(2).update(chunks[0]).merge(bc)
    np.testing.assert_allclose(left.means, right.means, atol=1e-9)
    np.testing.assert_allclose(left.stds, right.stds, atol=1e-9)


def test_permutation_invariance():
    rng = np.random.default_rng(8)
    data = rng.normal(-2.0, 5.0, (3, 4001))
    shuffled = data[:, rng.permutation(data.shape[1])]
    a = _stats_of(data[:, :200]).update(data[:, 200:])
    b = _stats_of(shuffled[:, :200]).update(shuffled[:, 200:])
    np.testing.assert_allclose(a.means, b.means, atol=1e-9)
    np.testing.assert_allclose(a.stds, b.stds, atol=1e-9)


def test_merge_into_empty_state():
    data = np.arange(10.0).reshape(1, 10)
    filled = ChannelStats(1).update(data)
    empty = ChannelStats(1)
    empty.merge(filled)
    assert empty.counts[0] == 10
    assert empty.means[0] == filled.means[0]


def test_from_moments_round_trip():
    rng = np.random.default_rng(11)
    data = rng.normal(0.5, 1.5, (4, 999))
    measured = ChannelStats(4).update(data)
    rebuilt = ChannelStats.from_moments(measured.means, measured.stds,
                                        int(measured.counts[0]))
    np.testing.assert_allclose(rebuilt.m2s, measured.m2s, rtol=1e-12)
    np.testing.assert_array_equal(rebuilt.counts, measured.counts)


def test_validation_errors():
    with pytest.raises(ParameterError):
        ChannelStats(0)
    state = ChannelStats(2)
    with pytest.raises(ParameterError):
        state.update(np.zeros((3, 4)))
    with pytest.raises(ParameterError):
        state.merge(ChannelStats(3))
    with pytest.raises(ParameterError):
        _ = state.stds  # zero observations
    with pytest.raises(ParameterError):
        _ = ChannelStats(2).update(np.ones((2, 1))).stds  # one observation
    with pytest.raises(ParameterError):
        ChannelStats.from_moments([1.0], [1.0], count=1)
    with pytest.raises(ParameterError):
        ChannelStats.from_moments([1.0, 2.0], [1.0], count=10)


def test_welford_update_alias():
    state = ChannelStats(1)
    out = welford_update(state, np.array([[1.0, 2.0]]))
    assert out is state
    assert state.counts[0] == 2


# ------------------------------------------------------------ normalization

def test_reference_fixture_summary():
    assert np.mean(ANIME_LATENT_STDS) == pytest.approx(7.4467, abs=1e-12)
    assert 1.0 / np.mean(ANIME_LATENT_STDS) == pytest.approx(0.1343, abs=1e-4)
    assert ANIME_LATENT_MEANS.shape == ANIME_LATENT_STDS.shape == (4,)
    assert ANIME_LATENT_SAMPLE_COUNT == 78224


def test_normalize_round_trip():
    stats = ChannelStats.from_moments(ANIME_LATENT_MEANS, ANIME_LATENT_STDS,
                                      ANIME_LATENT_SAMPLE_COUNT)
    rng = np.random.default_rng(3)
    latent = rng.normal(0, 8, (4, 16, 16))
    back = denormalize(normalize(latent, stats), stats)
    np.testing.assert_allclose(back, latent, atol=1e-12)


def test_normalize_with_measured_stats_standardizes():
    rng = np.random.default_rng(9)
    stream = rng.normal(4.0, 7.0, (4, 50_000))
    stats = ChannelStats(4).update(stream)
    z = normalize(stream, stats)
    np.testing.assert_allclose(z.mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=1, ddof=1), 1.0, atol=1e-9)


def test_normalize_hand_values():
    stats = ChannelStats.from_moments([1.0, -1.0], [2.0, 4.0], count=10)
    z = normalize(np.array([[3.0], [7.0]]), stats)
    np.testing.assert_allclose(z, [[1.0], [2.0]])


def test_degenerate_channel_rejected():
    stats = ChannelStats.from_moments([1.0, 2.0], [1.0, 0.0], count=10)
    with pytest.raises(DegenerateChannelError):
        normalize(np.ones((2, 3)), stats)
    with pytest.raises(DegenerateChannelError):
        denormalize(np.ones((2, 3)), stats)


def test_normalize_channel_mismatch():
    stats = ChannelStats.from_moments([0.0], [1.0], count=10)
    with pytest.raises(ParameterError):
        normalize(np.ones((2, 3)), stats)


def test_legacy_scaling():
    assert SDXL_LEGACY_SCALE == 0.13025
    assert SD1_LEGACY_SCALE == 0.18215
    x = np.array([1.0, -2.0, 3.0])
    np.testing.assert_allclose(legacy_normalize(x), x * 0.13025)
    np.testing.assert_allclose(legacy_normalize(x, SD1_LEGACY_SCALE), x * 0.18215)
    np.testing.assert_allclose(legacy_denormalize(legacy_normalize(x)), x, atol=1e-15)
