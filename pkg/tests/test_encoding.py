import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snnhw.encoding import (
    IntensityGrid,
    PGMError,
    SpikeFileError,
    SpikeTrain,
    counter_uniforms,
    normalize_image,
    parse_pgm,
    rate_encode,
    rate_encode_batch,
    read_pgm,
    read_spikes,
    resize_nearest,
    spike_rate,
    spikes_from_bytes,
    spikes_to_bytes,
    write_pgm,
    write_spikes,
)


def test_normalize_examples():
    g = normalize_image(np.array([[0, 255, 128]], dtype=np.uint8))
    assert g.values[0, 0] == 0.0
    assert g.values[0, 1] == 1.0
    assert g.values[0, 2] == pytest.approx(128 / 255)
    assert g.values[0, 2] == pytest.approx(0.50196, abs=1e-5)


def test_normalize_rejects_empty():
    with pytest.raises(ValueError):
        normalize_image(np.zeros((0, 0), dtype=np.uint8))


def test_intensity_grid_range_checked():
    with pytest.raises(ValueError):
        IntensityGrid(np.array([[1.5]]))


def test_extreme_intensities_are_deterministic():
    tr = rate_encode(np.array([0.0, 1.0]), 500, seed=11)
    assert tr.bits[:, 0].sum() == 0
    assert tr.bits[:, 1].sum() == 500


def test_half_intensity_rate_and_regression():
    tr = rate_encode(np.array([0.5]), 10_000, seed=2024)
    ones = int(tr.bits.sum())
    assert 4853 <= ones <= 5147
    # pinned value for this seed; changes only if the generator changes
    assert ones == 4989


def test_zero_timesteps_rejected():
    with pytest.raises(ValueError):
        rate_encode(np.array([0.5]), 0, seed=0)


def test_determinism_and_seed_sensitivity():
    g = normalize_image(np.arange(64, dtype=np.uint8).reshape(8, 8) * 4)
    a = rate_encode(g, 25, seed=5)
    assert a == rate_encode(g, 25, seed=5)
    assert a != rate_encode(g, 25, seed=6)


def test_bits_independent_of_grid_layout():
    # counter-based: a pixel's bits depend on (seed, t, index) only
    p = np.linspace(0, 1, 30)
    full = rate_encode(p, 12, seed=9).bits
    prefix = rate_encode(p[:10], 12, seed=9).bits
    assert np.array_equal(full[:, :10], prefix)
    longer = rate_encode(p, 20, seed=9).bits
    assert np.array_equal(longer[:12], full)


def test_batch_matches_single():
    rng = np.random.default_rng(0)
    p = rng.uniform(size=(4, 9))
    seeds = [3, 99, 2**63 + 5, 0]
    b = rate_encode_batch(p, 7, seeds)
    for k in range(4):
        assert np.array_equal(b[k], rate_encode(p[k], 7, seeds[k]).bits)


def test_row_major_layout():
    img = np.zeros((3, 4), dtype=np.uint8)
    img[1, 2] = 255
    tr = rate_encode(normalize_image(img), 5, seed=0)
    on = np.flatnonzero(tr.bits.sum(axis=0))
    assert on.tolist() == [1 * 4 + 2]


def test_uniforms_in_unit_interval():
    u = counter_uniforms([1, 2, 3], 50, 40)
    assert u.shape == (3, 50, 40)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 0.99), st.integers(0, 2**32))
def test_rate_within_three_sigma_mostly(p, seed):
    # 3-sigma bound fails with probability ~0.3%; widen to 5 sigma for a per-example check
    T = 4000
    rate = spike_rate(rate_encode(np.array([p]), T, seed))[0]
    assert abs(rate - p) <= 5 * np.sqrt(p * (1 - p) / T)


def test_brighter_pixels_fire_more():
    p = np.array([0.1, 0.3, 0.6, 0.9])
    rates = spike_rate(rate_encode(p, 5000, seed=1))
    assert np.all(np.diff(rates) > 0)


def test_spike_rate_examples():
    assert np.all(spike_rate(SpikeTrain(np.zeros((6, 3), dtype=np.uint8))) == 0)
    assert np.all(spike_rate(SpikeTrain(np.ones((6, 3), dtype=np.uint8))) == 1)
    bits = np.zeros((8, 1), dtype=np.uint8)
    bits[[0, 3, 5]] = 1
    assert spike_rate(SpikeTrain(bits))[0] == 3 / 8


def test_spike_train_validates_entries():
    with pytest.raises(ValueError):
        SpikeTrain(np.array([[0, 2]]))


# -- file formats -------------------------------------------------------------------


def test_spkt_layout_by_hand():
    bits = np.array([[1, 0, 1], [1, 1, 0], [0, 0, 1]], dtype=np.uint8)
    data = spikes_to_bytes(SpikeTrain(bits))
    assert len(data) == 16 + 2
    assert data[:4] == b"SPKT"
    assert data[4:6] == (1).to_bytes(2, "little")
    assert data[6:10] == (3).to_bytes(4, "little")
    assert data[10:14] == (3).to_bytes(4, "little")
    # linear bits 1,0,1,1,1,0,0,0 | 1 packed LSB first
    assert data[16] == 0b00011101
    assert data[17] == 0b00000001


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 2**31))
def test_spkt_round_trip(T, N, seed):
    tr = SpikeTrain(np.random.default_rng(seed).integers(0, 2, (T, N)).astype(np.uint8))
    assert spikes_from_bytes(spikes_to_bytes(tr)) == tr


def test_spkt_errors(tmp_path):
    good = spikes_to_bytes(SpikeTrain(np.ones((3, 3), dtype=np.uint8)))
    with pytest.raises(SpikeFileError, match="magic"):
        spikes_from_bytes(b"XXXX" + good[4:])
    with pytest.raises(SpikeFileError):
        spikes_from_bytes(good[:-1])
    with pytest.raises(SpikeFileError):
        spikes_from_bytes(good[:10])
    path = tmp_path / "s.spkt"
    write_spikes(path, SpikeTrain(np.eye(4, dtype=np.uint8)))
    assert read_spikes(path) == SpikeTrain(np.eye(4, dtype=np.uint8))


def test_pgm_round_trip(tmp_path):
    img = np.arange(35, dtype=np.uint8).reshape(5, 7)
    write_pgm(tmp_path / "a.pgm", img)
    assert np.array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_with_comments():
    data = b"P5\n# made by hand\n2 2\n# max\n255\n" + bytes([0, 1, 2, 3])
    assert parse_pgm(data).tolist() == [[0, 1], [2, 3]]


@pytest.mark.parametrize(
    "data, offset",
    [
        (b"P2\n2 2\n255\n" + bytes(4), 0),
        (b"P5\nx 2\n255\n" + bytes(4), 3),
        (b"P5\n2 2\n65535\n" + bytes(8), 7),
        (b"P5\n2 2\n255\n" + bytes(3), 11),
    ],
)
def test_pgm_errors_carry_offset(data, offset):
    with pytest.raises(PGMError) as exc:
        parse_pgm(data)
    assert exc.value.offset == offset
    assert f"byte offset {offset}" in str(exc.value)


def test_resize_nearest():
    img = np.arange(16).reshape(4, 4)
    assert resize_nearest(img, 2, 2).tolist() == [[0, 2], [8, 10]]
    assert resize_nearest(img, 8, 8)[7, 7] == 15
    assert resize_nearest(img, 4, 4) is img
