"""Mel-frequency cepstral coefficients from raw PCM audio.

Pipeline: pre-emphasis -> framing -> Hann window -> DFT magnitude ->
mel filterbank -> log (floored) -> orthonormal DCT-II -> first n_coeffs.

The mel scale is the classic 2595*log10(1 + f/700); triangle filter weights
are evaluated at FFT bin center frequencies without integer-bin snapping.
Everything is a pure function of (samples, config), so extraction is
deterministic and safe to parallelize across clips.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass

import numpy as np

REQUIRED_SAMPLE_RATE = 16000


class AudioFormatError(ValueError):
    """Unsupported sample rate, sample width, or empty/too-short clip."""


@dataclass(frozen=True)
class MfccConfig:
    n_coeffs: int = 13
    n_mels: int = 26
    window: float = 0.025  # seconds
    hop: float = 0.010  # seconds
    pre_emphasis: float = 0.97
    log_floor: float = 1e-10
    fmin: float = 0.0
    fmax: float | None = None  # defaults to Nyquist

    def __post_init__(self):
        if self.n_coeffs > self.n_mels:
            raise ValueError("n_coeffs must not exceed n_mels")
        if self.window < self.hop:
            raise ValueError("window must be >= hop")


@dataclass(frozen=True)
class AudioClip:
    """Mono samples in [-1, 1] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if len(self.samples) == 0:
            raise AudioFormatError("empty clip")
        if self.sample_rate != REQUIRED_SAMPLE_RATE:
            raise AudioFormatError(
                f"sample rate must be {REQUIRED_SAMPLE_RATE} Hz, got {self.sample_rate}"
            )

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class MfccSequence:
    """Frames of cepstral coefficients plus the framing geometry."""

    frames: np.ndarray  # (n_frames, n_coeffs)
    frame_len: float  # seconds
    frame_hop: float  # seconds

    @property
    def n_coeffs(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> AudioClip:
    """Read uncompressed 16-bit PCM WAV; stereo is downmixed by averaging."""
    with wave.open(str(path), "rb") as wf:
        n_channels = wf.getnchannels()
        width = wf.getsampwidth()
        rate = wf.getframerate()
        n_frames = wf.getnframes()
        if width != 2:
            raise AudioFormatError(f"{path}: only 16-bit PCM supported, got width {width}")
        if n_channels not in (1, 2):
            raise AudioFormatError(f"{path}: expected mono or stereo, got {n_channels} channels")
        raw = wf.readframes(n_frames)
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    if n_channels == 2:
        samples = samples.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=samples, sample_rate=rate)


def frame_count(n_samples: int, window_samples: int, hop_samples: int) -> int:
    if n_samples < window_samples:
        raise AudioFormatError(
            f"clip of {n_samples} samples shorter than one window ({window_samples})"
        )
    return (n_samples - window_samples) // hop_samples + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int, fmin: float,
                   fmax: float) -> np.ndarray:
    """Triangular filters (n_mels, n_fft//2 + 1), evaluated at bin centers."""
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    fbank = np.zeros((n_mels, bin_freqs.size))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fbank[m] = np.maximum(0.0, np.minimum(rising, falling))
    return fbank


def dct_matrix(n_coeffs: int, n_mels: int) -> np.ndarray:
    """Orthonormal DCT-II rows: (n_coeffs, n_mels)."""
    k = np.arange(n_coeffs)[:, None]
    m = np.arange(n_mels)[None, :]
    mat = np.cos(np.pi * k * (2 * m + 1) / (2 * n_mels)) * np.sqrt(2.0 / n_mels)
    mat[0] /= np.sqrt(2.0)
    return mat


def extract_mfcc(clip: AudioClip, config: MfccConfig = MfccConfig()) -> MfccSequence:
    """Extract the MFCC sequence for one clip.

    Frame count is floor((N - window) / hop) + 1; trailing samples that do
    not fill a window are dropped. Raises AudioFormatError for clips shorter
    than one window.
    """
    sr = clip.sample_rate
    win = int(round(config.window * sr))
    hop = int(round(config.hop * sr))
    n_frames = frame_count(len(clip.samples), win, hop)

    x = np.asarray(clip.samples, dtype=np.float64)
    emphasized = np.concatenate([x[:1], x[1:] - config.pre_emphasis * x[:-1]])

    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = emphasized[idx] * np.hanning(win)

    n_fft = 1
    while n_fft < win:
        n_fft *= 2
    magnitude = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))

    fmax = config.fmax if config.fmax is not None else sr / 2.0
    fbank = mel_filterbank(config.n_mels, n_fft, sr, config.fmin, fmax)
    mel_energies = magnitude @ fbank.T
    log_mel = np.log(np.maximum(mel_energies, config.log_floor))

    coeffs = log_mel @ dct_matrix(config.n_coeffs, config.n_mels).T
    return MfccSequence(frames=coeffs, frame_len=config.window, frame_hop=config.hop)


def mean_pool(seq: MfccSequence) -> np.ndarray:
    """Per-coefficient arithmetic mean across frames."""
    if seq.frames.shape[0] == 0:
        raise ValueError("cannot pool an empty sequence")
    return seq.frames.mean(axis=0, dtype=np.float64)
