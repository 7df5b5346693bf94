"""Log-mel frames and utterance-level functionals.

Framing: 30 ms Hann window, 10 ms shift, 40 triangular mel filters on the
HTK mel scale spanning 0 Hz to Nyquist, natural log with a 1e-10 floor.
Frames that would overrun the signal are dropped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window

from .errors import InputError
from .featmat import FeatureMatrix, as_array

N_MELS = 40
WINDOW_S = 0.030
SHIFT_S = 0.010
LOG_FLOOR = 1e-10
PAD_VALUE = float(np.log(LOG_FLOOR))
SEGMENT_FRAMES = 500
DELTA_WINDOW = 2
N_FUNCTIONALS = 600


@dataclass
class LogMelFrames:
    """A (T, 40) log-mel matrix; rows past ``n_valid`` are padding."""

    frames: np.ndarray
    sample_rate: int = 16000
    n_valid: int | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.n_valid is None:
            self.n_valid = self.frames.shape[0]

    @property
    def valid(self) -> np.ndarray:
        return self.frames[: self.n_valid]


@dataclass
class UtteranceFeatures:
    vector: np.ndarray
    kind: str
    utterance_id: str = ""


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(sample_rate: int, n_fft: int, n_mels: int = N_MELS) -> np.ndarray:
    """Triangular filters, shape (n_mels, n_fft//2 + 1), peaks equally spaced in mel."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2))
    freqs = np.arange(n_fft // 2 + 1) * sample_rate / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def frame_params(sample_rate: int) -> tuple[int, int, int]:
    """(window length, hop, FFT size) in samples."""
    win = int(round(WINDOW_S * sample_rate))
    hop = int(round(SHIFT_S * sample_rate))
    n_fft = 1 << (win - 1).bit_length()
    return win, hop, n_fft


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a 16-bit integer or 32-bit float mono WAV as float64 samples."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        data = data.astype(np.float64)
    else:
        raise InputError(f"{path}: unsupported sample format {data.dtype}")
    return data, int(rate)


def wav_to_logmel(audio: np.ndarray, sample_rate: int) -> LogMelFrames:
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 2 and audio.shape[1] == 1:
        audio = audio[:, 0]
    if audio.ndim != 1:
        raise InputError(f"expected mono audio, got array of shape {audio.shape}")
    if audio.size == 0:
        raise InputError("empty audio")
    if sample_rate < 8000:
        raise InputError(f"sample rate {sample_rate} Hz is below 8 kHz")
    win, hop, n_fft = frame_params(sample_rate)
    if audio.size < win:
        raise InputError(f"audio has {audio.size} samples, shorter than one {win}-sample window")
    n_frames = (audio.size - win) // hop + 1
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    spec = np.fft.rfft(audio[idx] * get_window("hann", win), n=n_fft, axis=1)
    power = spec.real**2 + spec.imag**2
    energies = power @ mel_filterbank(sample_rate, n_fft).T
    return LogMelFrames(np.log(np.maximum(energies, LOG_FLOOR)), sample_rate)


def segment_5s(frames: LogMelFrames, rng: np.random.Generator, length: int = SEGMENT_FRAMES) -> LogMelFrames:
    """Crop or pad to exactly ``length`` frames (500 frames = 5 s at a 10 ms shift).

    Longer inputs get a uniformly random crop; shorter ones are padded at
    the end with the log floor, and ``n_valid`` remembers the real length.
    """
    x = frames.valid
    T = x.shape[0]
    if T < 1:
        raise InputError("no frames to segment")
    if T == length:
        return LogMelFrames(x.copy(), frames.sample_rate, T)
    if T < length:
        out = np.full((length, x.shape[1]), PAD_VALUE)
        out[:T] = x
        return LogMelFrames(out, frames.sample_rate, T)
    start = int(rng.integers(0, T - length + 1))
    return LogMelFrames(x[start : start + length].copy(), frames.sample_rate, length)


def deltas(x: np.ndarray, window: int = DELTA_WINDOW) -> np.ndarray:
    """Regression deltas over time with replicated edge frames."""
    T = x.shape[0]
    padded = np.pad(x, ((window, window), (0, 0)), mode="edge")
    num = sum(n * (padded[window + n : window + n + T] - padded[window - n : window - n + T]) for n in range(1, window + 1))
    return num / (2.0 * sum(n * n for n in range(1, window + 1)))


def four_moments(x: np.ndarray) -> np.ndarray:
    """Mean, variance, skewness and (non-excess) kurtosis per column.

    Population moments; skewness and kurtosis are 0 for constant columns.
    """
    mean = x.mean(axis=0)
    c = x - mean
    var = np.mean(c * c, axis=0)
    m3 = np.mean(c**3, axis=0)
    m4 = np.mean(c**4, axis=0)
    flat = var <= 1e-12
    safe = np.where(flat, 1.0, var)
    skew = np.where(flat, 0.0, m3 / safe**1.5)
    kurt = np.where(flat, 0.0, m4 / safe**2)
    return np.concatenate([mean, var, skew, kurt])


def functionals_600(frames: LogMelFrames, utterance_id: str = "") -> UtteranceFeatures:
    """600-dim utterance vector from the real (unpadded) frames.

    Layout, each block 40 wide: mean, variance, skewness, kurtosis, min, max,
    range of the static frames (280), then the four moments of the first
    order deltas (160) and of the second order deltas (160).
    """
    x = frames.valid
    if x.shape[0] < 3:
        raise InputError(f"need at least 3 frames for functionals, got {x.shape[0]}")
    lo, hi = x.min(axis=0), x.max(axis=0)
    d1 = deltas(x)
    d2 = deltas(d1)
    vec = np.concatenate([four_moments(x), lo, hi, hi - lo, four_moments(d1), four_moments(d2)])
    return UtteranceFeatures(vec, "logmel600", utterance_id)


def zscore_fit_apply(matrix):
    """Column-wise z-score with sample std (N-1); constant columns become 0.

    Returns ``(normalized, mean, std)`` where ``normalized`` has the type of
    the input (FeatureMatrix or array).
    """
    x = as_array(matrix)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InputError("z-scoring needs at least 2 rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    flat = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    out = np.where(flat, 0.0, (x - mean) / np.where(flat, 1.0, std))
    if isinstance(matrix, FeatureMatrix):
        out = matrix.with_values(out)
    return out, mean, std
