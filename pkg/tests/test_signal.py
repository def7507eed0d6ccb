import numpy as np
import pytest

from spine_drill.signal import (
    SHIPPED_BASES,
    EmptyNeighbourhoodError,
    InvalidBandError,
    SignalTooShortError,
    UnknownBasisError,
    band_energy,
    band_reconstruct,
    denoise,
    denoise_metrics,
    dwt_decompose,
    rank_scores,
    select_basis,
    shipped_bases,
    wavelet_basis,
)

ALL_BANDS = {1, 2, 3, 4, 5, 6, "a"}


def breathing_trace(seed=0, noise=0.2, duration=30.0, fs=8.0):
    rng = np.random.default_rng(seed)
    t = np.arange(0, duration, 1 / fs)
    tv = 250 * (1 - np.cos(2 * np.pi * t / 4.7))
    clean = 0.008 * tv
    return t, tv, clean, clean + rng.normal(0, noise, len(t))


@pytest.mark.parametrize("name", SHIPPED_BASES)
def test_filter_bank_invariants(name):
    basis = wavelet_basis(name)
    for f in (basis.dec_lo, basis.dec_hi, basis.rec_lo, basis.rec_hi):
        assert len(f) % 2 == 0
    if basis.orthogonal:
        np.testing.assert_allclose(basis.rec_lo, basis.dec_lo[::-1], atol=1e-15)
        np.testing.assert_allclose(basis.rec_hi, basis.dec_hi[::-1], atol=1e-15)

    impulse = np.zeros(64)
    impulse[20] = 1.0
    dec = dwt_decompose(impulse, basis, 6)
    np.testing.assert_allclose(band_reconstruct(dec, ALL_BANDS), impulse, atol=1e-10)


def test_unknown_basis():
    with pytest.raises(UnknownBasisError):
        wavelet_basis("nope3")


@pytest.mark.parametrize("basis", shipped_bases(), ids=SHIPPED_BASES)
def test_perfect_reconstruction(basis):
    rng = np.random.default_rng(1)
    tolerance = 1e-8 if basis.orthogonal else 1e-6
    for length in (64, 100, 240):
        for _ in range(30):
            signal = rng.normal(size=length)
            dec = dwt_decompose(signal, basis, 6)
            assert dec.original_length == length
            assert len(dec.details) == 6
            error = np.abs(band_reconstruct(dec, ALL_BANDS) - signal).max()
            assert error < tolerance


def test_coefficient_lengths_follow_symmetric_mode():
    basis = wavelet_basis("db5")
    dec = dwt_decompose(np.ones(240), basis, 3)
    filter_length = len(basis.dec_lo)
    n = 240
    for level in (1, 2, 3):
        n = (n + filter_length - 1) // 2
        assert len(dec.detail(level)) == n
    assert len(dec.approx) == n


@pytest.mark.parametrize("name", ["db5", "coif4", "coif5"])
def test_constant_signal_has_no_detail(name):
    dec = dwt_decompose(np.full(240, 3.7), wavelet_basis(name), 6)
    for detail in dec.details:
        assert np.abs(detail).max() < 1e-9


def test_breathing_energy_sits_in_level_four():
    t = np.arange(2048) / 8.0
    dec = dwt_decompose(np.sin(2 * np.pi * 0.33 * t), wavelet_basis("db5"), 6)
    energy = band_energy(dec)
    assert energy[4] >= 0.7
    assert sum(energy.values()) == pytest.approx(1.0)


def test_signal_too_short():
    with pytest.raises(SignalTooShortError):
        dwt_decompose(np.zeros(63), wavelet_basis("db5"), 6)
    dwt_decompose(np.zeros(64), wavelet_basis("db5"), 6)


def test_band_reconstruct_edges():
    _, _, _, raw = breathing_trace()
    dec = dwt_decompose(raw, wavelet_basis("coif4"), 6)
    assert np.all(band_reconstruct(dec, set()) == 0)
    assert len(band_reconstruct(dec, {4})) == len(raw)
    with pytest.raises(InvalidBandError):
        band_reconstruct(dec, {7})
    with pytest.raises(InvalidBandError):
        band_reconstruct(dec, {0})
    with pytest.raises(InvalidBandError):
        band_reconstruct(dec, {"d4"})


def test_band_reconstruct_is_linear():
    _, _, _, raw = breathing_trace(seed=4)
    dec = dwt_decompose(raw, wavelet_basis("db5"), 6)
    combined = band_reconstruct(dec, {3, 4, 5})
    separate = sum(band_reconstruct(dec, {level}) for level in (3, 4, 5))
    np.testing.assert_allclose(combined, separate, atol=1e-10)

    low, high = {"a", 6, 5, 4}, {3, 2, 1}
    np.testing.assert_allclose(
        band_reconstruct(dec, low) + band_reconstruct(dec, high),
        band_reconstruct(dec, ALL_BANDS),
        atol=1e-10,
    )


def test_denoise_defaults_to_the_breathing_bands():
    _, _, _, raw = breathing_trace(seed=2)
    basis = wavelet_basis("db5")
    np.testing.assert_allclose(
        denoise(raw, basis), band_reconstruct(dwt_decompose(raw, basis, 6), {3, 4, 5})
    )


def test_metrics_of_a_perfect_fit():
    rng = np.random.default_rng(0)
    tv = rng.uniform(0, 500, 5000)
    clean = 0.008 * tv
    wide = denoise_metrics(clean, clean, tv)
    assert wide.nsr == 0.0
    # A single-valued function of tv spreads only as far as the neighbourhood is wide.
    assert wide.w_max <= 0.008 * 2 * 0.02 * tv.max() + 1e-12
    narrow = denoise_metrics(clean, clean, tv, delta_tv=0.5)
    assert narrow.w_max <= 0.008 + 1e-12
    assert narrow.w_max < wide.w_max


def test_nsr_estimates_the_injected_noise():
    _, tv, clean, _ = breathing_trace()
    sigma = 0.2
    expected = sigma**2 / np.mean(clean**2)
    estimates = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        raw = clean + rng.normal(0, sigma, len(clean))
        estimates.append(denoise_metrics(raw, clean, tv).nsr)
    within = sum(abs(e - expected) <= 0.2 * expected for e in estimates)
    assert within >= 45
    assert np.mean(estimates) == pytest.approx(expected, rel=0.05)


def test_metrics_need_some_neighbourhood():
    tv = np.full(100, 10.0)
    signal = np.ones(100)
    with pytest.raises(EmptyNeighbourhoodError):
        denoise_metrics(signal, signal, tv, delta_tv=0.1, probes=np.array([100.0, 200.0]))
    with pytest.raises(ValueError):
        denoise_metrics(signal, signal[:-1], tv)
    with pytest.raises(ValueError):
        denoise_metrics(signal, signal, tv, delta_tv=0.0)


def test_rank_scores_normalises_each_metric():
    z = np.array([[1.0, 10.0, 5.0], [2.0, 20.0, 5.0], [3.0, 0.0, 5.0]])
    scores = rank_scores(z, (0.5, 0.5, 0.0))
    np.testing.assert_allclose(scores, [0.25, 0.75, 0.5])
    np.testing.assert_allclose(rank_scores(z * [7.0, 0.1, 3.0], (0.5, 0.5, 0.0)), scores)
    with pytest.raises(ValueError):
        rank_scores(z, (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        rank_scores(z, (1.5, -0.5, 0.0))


def test_single_candidate_wins():
    _, tv, _, raw = breathing_trace()
    basis = wavelet_basis("coif5")
    best, table = select_basis(raw, tv, [basis])
    assert best is basis
    assert list(table.index) == ["coif5"]


def test_selection_matches_exhaustive_rescoring():
    _, tv, _, raw = breathing_trace(seed=9, noise=0.3)
    candidates = shipped_bases()
    weights = (0.5, 0.3, 0.2)
    best, table = select_basis(raw, tv, candidates, weights)

    z = []
    for basis in candidates:
        m = denoise_metrics(raw, denoise(raw, basis), tv)
        z.append([m.nsr, m.w_max, m.w_mean])
    z = np.array(z)
    normalised = (z - z.min(axis=0)) / (z.max(axis=0) - z.min(axis=0))
    expected = candidates[int(np.argmin(normalised @ np.array(weights)))]

    assert best.name == expected.name
    np.testing.assert_allclose(table[["nsr", "w_max", "w_mean"]].to_numpy(), z)


def test_dominating_candidate_wins_for_any_weights():
    z = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])
    for weights in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0.2, 0.3, 0.5)]:
        assert int(np.argmin(rank_scores(z, weights))) == 0
