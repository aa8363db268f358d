"""Log mel-band energy features from PCM audio."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

FRAME_LENGTH = 0.040
FRAME_SHIFT = 0.020
N_BANDS = 64
ENERGY_FLOOR = 1e-10

FEATURE_MAGIC = b"LMEF"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class FeatureMap:
    values: np.ndarray  # (D, T)
    frame_length: float = FRAME_LENGTH
    frame_shift: float = FRAME_SHIFT

    @property
    def num_bands(self) -> int:
        return self.values.shape[0]

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


def frame_samples(seconds: float, sample_rate: int) -> int:
    return int(round(seconds * sample_rate))


def num_frames(n_samples: int, frame_len: int, hop: int) -> int:
    """Number of full frames: floor((N - L) / H) + 1, or 0 when N < L."""
    if n_samples < frame_len:
        return 0
    return (n_samples - frame_len) // hop + 1


def hann(n: int) -> np.ndarray:
    # periodic Hann, the usual choice for short-time spectra
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def frame_signal(clip: AudioClip, frame_length: float = FRAME_LENGTH,
                 frame_shift: float = FRAME_SHIFT) -> np.ndarray:
    """Split a clip into Hann-windowed frames, shape ``(T, L)``."""
    sr = clip.sample_rate
    L = frame_samples(frame_length, sr)
    H = frame_samples(frame_shift, sr)
    if L < 1 or H < 1:
        raise ValueError("frame length and shift must span at least one sample")
    n = len(clip.samples)
    T = num_frames(n, L, H)
    if T == 0:
        raise ValueError(f"clip of {n} samples is shorter than one frame ({L} samples)")
    idx = np.arange(L)[None, :] + H * np.arange(T)[:, None]
    return np.asarray(clip.samples, dtype=np.float64)[idx] * hann(L)


def power_spectrum(frames: np.ndarray) -> np.ndarray:
    """|DFT|^2 over bins 0..floor(L/2), along the last axis."""
    spec = np.fft.rfft(np.asarray(frames, dtype=np.float64), axis=-1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_bands: int, frame_len: int, sample_rate: int,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular HTK-mel filters with unit peak, shape ``(n_bands, L//2 + 1)``."""
    fmax = sample_rate / 2.0 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_bands + 2))
    freqs = np.arange(frame_len // 2 + 1) * sample_rate / frame_len
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def log_mel_energy(spectrum: np.ndarray, filterbank: np.ndarray,
                   floor: float = ENERGY_FLOOR) -> np.ndarray:
    """log(max(filterbank . spectrum, floor)); ``spectrum`` is ``(..., bins)``."""
    energy = np.asarray(spectrum) @ filterbank.T
    return np.log(np.maximum(energy, floor))


def extract(clip: AudioClip, n_bands: int = N_BANDS, frame_length: float = FRAME_LENGTH,
            frame_shift: float = FRAME_SHIFT, floor: float = ENERGY_FLOOR) -> FeatureMap:
    frames = frame_signal(clip, frame_length, frame_shift)
    fb = mel_filterbank(n_bands, frames.shape[1], clip.sample_rate)
    values = log_mel_energy(power_spectrum(frames), fb, floor).T
    return FeatureMap(np.ascontiguousarray(values), frame_length, frame_shift)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def read_wav(path: str | Path) -> AudioClip:
    """Read 16-bit PCM or 32-bit float WAV as mono samples in [-1, 1]."""
    sr, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return AudioClip(samples, int(sr))


def write_wav(path: str | Path, clip: AudioClip) -> None:
    pcm = np.clip(np.round(np.asarray(clip.samples) * 32768.0), -32768, 32767).astype("<i2")
    wavfile.write(str(path), clip.sample_rate, pcm)


def write_feature_map(path: str | Path, fmap: FeatureMap) -> None:
    """16-byte header (magic, D, T, float width in bytes) then row-major float64 LE."""
    d, t = fmap.values.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<III", d, t, 8))
        fh.write(np.ascontiguousarray(fmap.values, dtype="<f8").tobytes())


def read_feature_map(path: str | Path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != FEATURE_MAGIC:
        raise ValueError(f"{path}: not a feature map file")
    d, t, width = struct.unpack("<III", raw[4:16])
    dtype = {4: "<f4", 8: "<f8"}.get(width)
    if dtype is None:
        raise ValueError(f"{path}: unsupported float width {width}")
    values = np.frombuffer(raw[16:], dtype=dtype)
    if values.size != d * t:
        raise ValueError(f"{path}: expected {d * t} values, found {values.size}")
    return FeatureMap(values.reshape(d, t).astype(np.float64))
