import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcpredict import features as F
from bcpredict.errors import (
    AudioTooShort,
    BadMagic,
    InsufficientContext,
    TruncatedFile,
    UnsupportedSampleRate,
    VersionMismatch,
)


def naive_power_dft(frames, nfft):
    """O(n^2) DFT of zero-padded rows, bins 0..nfft/2."""
    n = np.arange(frames.shape[1])[:, None]
    k = np.arange(nfft // 2 + 1)[None, :]
    basis = np.exp(-2j * np.pi * n * k / nfft)
    spec = frames @ basis
    return np.abs(spec) ** 2


def random_audio(rng, ms, rate=8000, scale=3000):
    n = rate * ms // 1000
    return F.PcmAudio(rng.integers(-scale, scale, size=n).astype(np.int16), rate)


@pytest.mark.parametrize("rate", [8000, 16000])
def test_two_seconds_gives_198_frames(rate):
    audio = F.PcmAudio(np.zeros(2 * rate, dtype=np.int16), rate)
    assert F.mfcc(audio).shape == (198, 13)


@pytest.mark.parametrize("ms", [25, 26, 34, 35, 100, 999, 1000, 2000, 10000])
def test_frame_count_formula(ms):
    for rate in (8000, 16000):
        n = rate * ms // 1000
        assert F.n_frames_for(n, rate) == (ms - 25) // 10 + 1


def test_fft_matches_naive_dft(rng):
    worst = 0.0
    for i in range(100):
        rate = (8000, 16000)[i % 2]
        audio = random_audio(rng, 1000, rate)
        _, _, nfft = F.frame_geometry(rate)
        frames = F.frame_signal(audio.samples, rate) * np.hamming(rate * 25 // 1000)
        fast = F.power_spectrum(frames, nfft)
        slow = naive_power_dft(frames, nfft)
        rel = np.max(np.abs(fast - slow), axis=1) / np.max(np.abs(slow), axis=1)
        worst = max(worst, rel.max())
    assert worst <= 1e-6


def test_silence_is_constant():
    out = F.mfcc(F.PcmAudio(np.zeros(8000, dtype=np.int16), 8000))
    assert np.all(out == out[0])
    # DCT of a constant log-energy vector: only c0 survives
    assert out[0, 0] == pytest.approx(math.sqrt(26) * math.log(1e-10), rel=1e-12)
    np.testing.assert_allclose(out[0, 1:], 0.0, atol=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([8000, 16000]))
def test_hop_shift_equivariance(seed, rate):
    rng = np.random.default_rng(seed)
    audio = random_audio(rng, 500, rate)
    hop = rate * 10 // 1000
    a = F.mfcc(audio)
    b = F.mfcc(F.PcmAudio(audio.samples[hop:], rate))
    np.testing.assert_allclose(b, a[1:1 + len(b)], rtol=0, atol=1e-9)


@pytest.mark.parametrize("alpha", [2, 4])
def test_amplitude_scaling_moves_only_c0(rng, alpha):
    audio = random_audio(rng, 500, 8000, scale=4000)
    a = F.mfcc(audio)
    b = F.mfcc(F.PcmAudio((audio.samples.astype(np.int32) * alpha).astype(np.int16), 8000))
    np.testing.assert_allclose(b[:, 0] - a[:, 0], math.sqrt(26) * 2 * math.log(alpha), atol=1e-6)
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-6)


def test_mel_filters_cover_spectrum():
    for rate in (8000, 16000):
        _, _, nfft = F.frame_geometry(rate)
        fb = F.mel_filterbank(rate, nfft)
        assert fb.shape == (26, nfft // 2 + 1)
        assert np.all(fb.max(axis=1) > 0)
        assert np.all(fb <= 1.0)


def test_dct_is_orthonormal():
    D = F.dct_matrix(26, 26)
    np.testing.assert_allclose(D @ D.T, np.eye(26), atol=1e-12)


def test_audio_errors():
    with pytest.raises(UnsupportedSampleRate):
        F.mfcc(F.PcmAudio(np.zeros(1000, dtype=np.int16), 44100))
    with pytest.raises(AudioTooShort):
        F.mfcc(F.PcmAudio(np.zeros(199, dtype=np.int16), 8000))
    with pytest.raises(AudioTooShort):
        F.mfcc(F.PcmAudio(np.zeros(0, dtype=np.int16), 8000))


def test_wav_roundtrip(tmp_path, rng):
    audio = random_audio(rng, 300, 16000)
    F.write_wav(tmp_path / "x.wav", audio)
    back = F.read_wav(tmp_path / "x.wav")
    assert back.sample_rate == 16000
    np.testing.assert_array_equal(back.samples, audio.samples)


# -- windows -------------------------------------------------------------------

def test_window_at_2000ms():
    feats = np.arange(998 * 13, dtype=float).reshape(998, 13)  # 10 s
    w = F.extract_window(feats, 2000, 198)
    assert w.values.shape == (198, 13)
    starts = np.arange(198) * 10
    np.testing.assert_array_equal(w.values[:, 0], feats[starts // 10, 0])
    assert starts[-1] == 1970 and starts[-1] + 25 <= 2000


def test_window_too_early():
    with pytest.raises(InsufficientContext):
        F.extract_window(np.zeros((998, 13)), 100, 198)


def test_window_48_frames():
    w = F.extract_window(np.zeros((998, 13)), 5000, 48)
    assert w.values.shape == (48, 13)


@settings(max_examples=50, deadline=None)
@given(st.integers(25, 10000), st.integers(1, 200))
def test_window_frames_end_before_t(t, n):
    feats = np.arange(998, dtype=float)[:, None] * np.ones(13)
    try:
        w = F.extract_window(feats, t, n)
    except InsufficientContext:
        assert (t - 25) // 10 + 1 < n
        return
    last = int(w.values[-1, 0])
    assert last * 10 + 25 <= t < (last + 1) * 10 + 25 or last == 997
    assert np.all(np.diff(w.values[:, 0]) == 1)


# -- cache ---------------------------------------------------------------------

def test_cache_empty(tmp_path):
    F.cache_write(tmp_path / "e.bcmf", np.zeros((0, 13)))
    assert (tmp_path / "e.bcmf").stat().st_size == 14
    assert F.cache_read(tmp_path / "e.bcmf").shape == (0, 13)


def test_cache_roundtrip_f32(tmp_path, rng):
    x = rng.normal(size=(198, 13))
    F.cache_write(tmp_path / "x.bcmf", x)
    back = F.cache_read(tmp_path / "x.bcmf")
    np.testing.assert_array_equal(back, x.astype(np.float32))
    F.cache_write(tmp_path / "y.bcmf", back)
    assert (tmp_path / "x.bcmf").read_bytes() == (tmp_path / "y.bcmf").read_bytes()


def test_cache_header_layout(tmp_path):
    F.cache_write(tmp_path / "h.bcmf", np.ones((2, 13)))
    raw = (tmp_path / "h.bcmf").read_bytes()
    assert raw[:4] == b"BCMF"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:10], "little") == 2
    assert int.from_bytes(raw[10:14], "little") == 13
    assert len(raw) == 14 + 2 * 13 * 4


def test_cache_errors(tmp_path, rng):
    p = tmp_path / "c.bcmf"
    F.cache_write(p, rng.normal(size=(5, 13)))
    raw = bytearray(p.read_bytes())
    bad = bytearray(raw)
    bad[:4] = b"XXXX"
    (tmp_path / "bad").write_bytes(bad)
    with pytest.raises(BadMagic):
        F.cache_read(tmp_path / "bad")
    ver = bytearray(raw)
    ver[4] = 9
    (tmp_path / "ver").write_bytes(ver)
    with pytest.raises(VersionMismatch):
        F.cache_read(tmp_path / "ver")
    (tmp_path / "short").write_bytes(raw[:-3])
    with pytest.raises(TruncatedFile):
        F.cache_read(tmp_path / "short")
    (tmp_path / "hdr").write_bytes(raw[:8])
    with pytest.raises(TruncatedFile):
        F.cache_read(tmp_path / "hdr")
