"""MFCC extraction, model-input windowing and the binary feature cache.

Framing: 25 ms frames every 10 ms. Per frame the pipeline is pre-emphasis
(0.97, applied within the frame) -> Hamming window -> power spectrum with an
FFT of the next power of two -> 26 HTK-mel triangular filters over
0..Nyquist -> natural log floored at 1e-10 -> orthonormal DCT-II, keeping
c0..c12.
"""
from __future__ import annotations

import os
import struct
import tempfile
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    AudioTooShort,
    BadMagic,
    InsufficientContext,
    TruncatedFile,
    UnsupportedSampleRate,
    VersionMismatch,
)

SUPPORTED_RATES = (8000, 16000)
FRAME_MS = 25
HOP_MS = 10
PREEMPHASIS = 0.97
N_MEL = 26
N_COEFFS = 13
LOG_FLOOR = 1e-10


@dataclass
class PcmAudio:
    samples: np.ndarray  # int16
    sample_rate: int
    channel_id: str = ""

    @property
    def duration_ms(self) -> float:
        return 1000.0 * len(self.samples) / self.sample_rate


@dataclass
class FeatureWindow:
    values: np.ndarray  # (n_frames, n_coeffs)
    end_time_ms: float

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_coeffs(self) -> int:
        return self.values.shape[1]


def read_wav(path, channel_id: str | None = None) -> PcmAudio:
    """Load a mono PCM-16 WAV file; the sample rate comes from its header."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * wf.getsampwidth()}-bit")
        if wf.getnchannels() != 1:
            raise ValueError(f"{path}: expected mono audio, got {wf.getnchannels()} channels")
        rate = wf.getframerate()
        data = wf.readframes(wf.getnframes())
    samples = np.frombuffer(data, dtype="<i2").astype(np.int16)
    return PcmAudio(samples, rate, channel_id if channel_id is not None else Path(path).stem)


def write_wav(path, audio: PcmAudio) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(audio.sample_rate)
        wf.writeframes(np.asarray(audio.samples, dtype="<i2").tobytes())


def frame_geometry(sample_rate: int) -> tuple[int, int, int]:
    """(frame_len, hop, nfft) in samples for a supported rate."""
    if sample_rate not in SUPPORTED_RATES:
        raise UnsupportedSampleRate(f"sample rate {sample_rate} not in {SUPPORTED_RATES}")
    frame_len = sample_rate * FRAME_MS // 1000
    hop = sample_rate * HOP_MS // 1000
    nfft = 1 << (frame_len - 1).bit_length()
    return frame_len, hop, nfft


def n_frames_for(n_samples: int, sample_rate: int) -> int:
    frame_len, hop, _ = frame_geometry(sample_rate)
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def frame_signal(samples, sample_rate: int) -> np.ndarray:
    frame_len, hop, _ = frame_geometry(sample_rate)
    x = np.asarray(samples, dtype=np.float64)
    n = n_frames_for(len(x), sample_rate)
    if n == 0:
        raise AudioTooShort(f"{len(x)} samples is shorter than one {frame_len}-sample frame")
    idx = np.arange(frame_len)[None, :] + hop * np.arange(n)[:, None]
    return x[idx]


def power_spectrum(frames: np.ndarray, nfft: int) -> np.ndarray:
    """|rfft|^2 of each row, zero-padded to ``nfft``."""
    spec = np.fft.rfft(frames, n=nfft, axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, nfft: int, n_filters: int = N_MEL) -> np.ndarray:
    """(n_filters, nfft//2 + 1) triangular weights, evaluated at bin centres."""
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_filters + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs[None, :] - lo) / (mid - lo)
    down = (hi - freqs[None, :]) / (hi - mid)
    return np.clip(np.minimum(up, down), 0.0, None)


def dct_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Orthonormal DCT-II basis, shape (n_out, n_in)."""
    k = np.arange(n_out)[:, None]
    n = np.arange(n_in)[None, :]
    m = np.sqrt(2.0 / n_in) * np.cos(np.pi * k * (2 * n + 1) / (2 * n_in))
    m[0] /= np.sqrt(2.0)
    return m


def mfcc(audio: PcmAudio) -> np.ndarray:
    """13 MFCCs per 10 ms frame; returns (n_frames, 13) float64."""
    if len(audio.samples) == 0:
        raise AudioTooShort("empty audio")
    _, _, nfft = frame_geometry(audio.sample_rate)
    frames = frame_signal(audio.samples, audio.sample_rate)
    emph = frames.copy()
    emph[:, 1:] -= PREEMPHASIS * frames[:, :-1]
    emph *= np.hamming(frames.shape[1])
    power = power_spectrum(emph, nfft)
    fbank = power @ mel_filterbank(audio.sample_rate, nfft).T
    logmel = np.log(np.maximum(fbank, LOG_FLOOR))
    return logmel @ dct_matrix(N_MEL, N_COEFFS).T


def extract_window(features, t_ms: float, n_frames: int) -> FeatureWindow:
    """The ``n_frames`` latest frames whose end (start + 25 ms) is <= ``t_ms``."""
    features = np.asarray(features)
    if t_ms < FRAME_MS:
        raise InsufficientContext(f"no frame ends at or before {t_ms} ms")
    last = min(int((t_ms - FRAME_MS) // HOP_MS), len(features) - 1)
    first = last - n_frames + 1
    if first < 0:
        raise InsufficientContext(
            f"need {n_frames} frames ending by {t_ms} ms, only {last + 1} available")
    return FeatureWindow(np.array(features[first:last + 1], dtype=np.float64), float(t_ms))


def window_end_ms(n_frames: int) -> int:
    """Smallest prediction time whose window starts at frame 0."""
    return HOP_MS * (n_frames - 1) + FRAME_MS


# -- cache -----------------------------------------------------------------

CACHE_MAGIC = b"BCMF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def cache_write(path, features) -> None:
    """Write a (n_frames, n_coeffs) matrix as little-endian f32, atomically."""
    arr = np.asarray(features, dtype=np.float64)
    if arr.size == 0:
        arr = arr.reshape(0, arr.shape[1] if arr.ndim == 2 else N_COEFFS)
    n, d = arr.shape
    payload = _HEADER.pack(CACHE_MAGIC, CACHE_VERSION, n, d) + arr.astype("<f4").tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cache_read(path) -> np.ndarray:
    """Inverse of ``cache_write``; returns float32 (n_frames, n_coeffs)."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        if not data.startswith(CACHE_MAGIC[: len(data)]):
            raise BadMagic(f"{path}: not a feature cache")
        raise TruncatedFile(f"{path}: header truncated")
    magic, version, n, d = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise VersionMismatch(f"{path}: version {version}, expected {CACHE_VERSION}")
    need = _HEADER.size + 4 * n * d
    if len(data) < need:
        raise TruncatedFile(f"{path}: {len(data)} bytes, expected {need}")
    return np.frombuffer(data, dtype="<f4", count=n * d, offset=_HEADER.size).reshape(n, d).copy()


def cache_path(cache_dir, audio_path) -> Path:
    return Path(cache_dir) / (Path(audio_path).stem + ".bcmf")
