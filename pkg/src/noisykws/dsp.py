"""Waveform transforms, the log-mel frontend and feature masking.

Every function here is pure: given the same inputs (and the same
``numpy.random.Generator`` state, where one is taken) it returns the same
output, so the functions can be called from any number of loader workers.
Waveforms are kept in float64 so that SNR arithmetic is exact to well below
a micro-decibel; feature maps are float32.
"""

from __future__ import annotations

import logging
import math
import wave
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy import signal
from scipy.io import wavfile

if TYPE_CHECKING:
    from .dataio import NoiseBank

logger = logging.getLogger(__name__)

SAMPLE_RATE = 16000


class AudioDecodeError(ValueError):
    """Raised when a file cannot be read as PCM WAV."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError(f"AudioClip expects 1-D samples, got shape {x.shape}")
        object.__setattr__(self, "samples", x)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class MelConfig:
    window_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 64
    fft_size: int = 512
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    # 1.0 = magnitude spectrum, 2.0 = power spectrum
    power: float = 1.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.fft_size < self.win_length:
            raise ValueError(
                f"fft_size {self.fft_size} is shorter than the window ({self.win_length} samples)"
            )
        if not (0 <= self.fmin < self.fmax <= self.sample_rate / 2):
            raise ValueError(f"need 0 <= fmin < fmax <= {self.sample_rate / 2}, got {self.fmin}, {self.fmax}")
        if self.n_mels <= 0 or self.log_floor <= 0:
            raise ValueError("n_mels and log_floor must be positive")

    @property
    def win_length(self) -> int:
        return int(round(self.window_ms * self.sample_rate / 1000))

    @property
    def hop_length(self) -> int:
        return int(round(self.hop_ms * self.sample_rate / 1000))

    def n_frames(self, n_samples: int) -> int:
        return 1 + (n_samples - self.win_length) // self.hop_length


@dataclass
class AugmentPolicy:
    """Parameter ranges for the per-view augmentation chain.

    Mask widths are counted in feature frames (time) and mel bins (frequency).
    """

    snr_range_db: tuple[float, float] = (-10.0, 30.0)
    shift_range_ms: tuple[float, float] = (-100.0, 100.0)
    speed_range: tuple[float, float] = (0.90, 1.10)
    n_time_masks: int = 2
    n_freq_masks: int = 2
    max_time_mask: int = 25
    max_freq_mask: int = 7
    mask_value: float = 0.0
    speed: bool = True
    shift: bool = True
    noise: bool = True
    mask: bool = True
    clamp: bool = False

    def __post_init__(self):
        for name in ("snr_range_db", "shift_range_ms", "speed_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: low {lo} > high {hi}")
            setattr(self, name, (float(lo), float(hi)))
        for name in ("n_time_masks", "n_freq_masks", "max_time_mask", "max_freq_mask"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def disabled(cls) -> "AugmentPolicy":
        return cls(speed=False, shift=False, noise=False, mask=False)


# ---------------------------------------------------------------------------
# waveform I/O


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float64) / float(2 ** (8 * data.dtype.itemsize - 1))
    return data.astype(np.float64)


def resample(samples: np.ndarray, orig_rate: int, new_rate: int) -> np.ndarray:
    if orig_rate == new_rate:
        return samples
    g = math.gcd(int(orig_rate), int(new_rate))
    return signal.resample_poly(samples, new_rate // g, orig_rate // g)


def decode_wav(path: str | Path, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Read a PCM WAV file as a mono clip at ``sample_rate``.

    Channels are averaged; other sample rates are converted with a
    polyphase band-limited resampler.
    """
    try:
        rate, data = wavfile.read(str(path))
    except (ValueError, OSError, EOFError, wave.Error) as exc:
        raise AudioDecodeError(f"cannot decode {path}: {exc}") from exc
    x = _to_float(np.asarray(data))
    if x.ndim == 2:
        x = x.mean(axis=1)
    x = resample(x, rate, sample_rate)
    if not np.all(np.isfinite(x)):
        raise AudioDecodeError(f"cannot decode {path}: non-finite samples")
    return AudioClip(x, sample_rate)


@lru_cache(maxsize=512)
def _decode_cached(path: str, mtime_ns: int, sample_rate: int) -> AudioClip:
    return decode_wav(path, sample_rate)


def decode_wav_cached(path: str | Path, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """``decode_wav`` with an LRU cache keyed on path and modification time."""
    p = Path(path)
    return _decode_cached(str(p), p.stat().st_mtime_ns, sample_rate)


def write_wav(path: str | Path, clip: AudioClip) -> None:
    """Write 16-bit PCM. Clips with peak above 1 are scaled down, not clipped."""
    x = clip.samples
    peak = float(np.max(np.abs(x))) if len(x) else 0.0
    if peak > 1.0:
        logger.warning("peak %.3f exceeds full scale in %s; scaling by 1/peak", peak, path)
        x = x / peak
    pcm = np.round(x * 32767.0).astype(np.int16)
    wavfile.write(str(path), clip.sample_rate, pcm)


# ---------------------------------------------------------------------------
# waveform transforms


def fit_duration(clip: AudioClip, target: float = 1.0) -> AudioClip:
    """Right-pad with zeros or keep the first ``target`` seconds."""
    n = int(round(target * clip.sample_rate))
    x = clip.samples
    if len(x) >= n:
        out = x[:n].copy()
    else:
        out = np.zeros(n)
        out[: len(x)] = x
    return AudioClip(out, clip.sample_rate)


def rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(x))))


def mix_at_snr(speech: AudioClip, noise: AudioClip, snr_db: float) -> tuple[AudioClip, float]:
    """Add ``noise`` to ``speech`` scaled so that the full-clip SNR is ``snr_db``.

    Returns the mixture and the gain applied to the noise. The mixture is not
    renormalised.
    """
    if len(speech) != len(noise) or speech.sample_rate != noise.sample_rate:
        raise ValueError(
            f"speech ({len(speech)} @ {speech.sample_rate} Hz) and noise "
            f"({len(noise)} @ {noise.sample_rate} Hz) must match in length and rate"
        )
    rs, rn = rms(speech.samples), rms(noise.samples)
    if rs <= 0 or rn <= 0:
        raise ValueError(f"degenerate input: rms(speech)={rs}, rms(noise)={rn}")
    gain = (rs / rn) * 10.0 ** (-snr_db / 20.0)
    return AudioClip(speech.samples + gain * noise.samples, speech.sample_rate), gain


def time_shift(clip: AudioClip, shift_ms: float) -> AudioClip:
    """Circular shift; positive moves content later in time."""
    if abs(shift_ms) > clip.duration * 1000:
        raise ValueError(f"shift {shift_ms} ms exceeds clip duration {clip.duration * 1000} ms")
    k = int(round(shift_ms * clip.sample_rate / 1000))
    return AudioClip(np.roll(clip.samples, k), clip.sample_rate)


def speed_perturb(clip: AudioClip, rate: float) -> AudioClip:
    """Play back at ``rate`` times the original speed (pitch changes too).

    Output length is ``round(len / rate)``; the resampling is band-limited
    (Fourier domain).
    """
    if not 0.5 < rate < 2.0:
        raise ValueError(f"speed rate {rate} outside (0.5, 2.0)")
    if rate == 1.0:
        return clip
    n_out = int(round(len(clip) / rate))
    return AudioClip(signal.resample(clip.samples, n_out), clip.sample_rate)


# ---------------------------------------------------------------------------
# features


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(cfg: MelConfig) -> np.ndarray:
    """The ``n_mels + 2`` corner frequencies (Hz); band k peaks at edges[k + 1]."""
    return mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax), cfg.n_mels + 2))


@lru_cache(maxsize=16)
def _filterbank(n_mels: int, fft_size: int, sample_rate: int, fmin: float, fmax: float) -> np.ndarray:
    cfg = MelConfig(n_mels=n_mels, fft_size=fft_size, sample_rate=sample_rate, fmin=fmin, fmax=fmax)
    edges = mel_band_edges(cfg)
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def mel_filterbank(cfg: MelConfig) -> np.ndarray:
    """Triangular HTK-scale filters, shape ``(n_mels, fft_size // 2 + 1)``."""
    return _filterbank(cfg.n_mels, cfg.fft_size, cfg.sample_rate, cfg.fmin, cfg.fmax)


def log_mel(clip: AudioClip, cfg: MelConfig | None = None) -> np.ndarray:
    """Log mel filterbank energies, shape ``(frames, n_mels)``, float32.

    Frames are taken without centre padding, so a 1 s clip at 16 kHz with a
    25 ms window and 10 ms hop gives 98 frames.
    """
    cfg = cfg or MelConfig()
    if clip.sample_rate != cfg.sample_rate:
        raise ValueError(f"clip rate {clip.sample_rate} != frontend rate {cfg.sample_rate}")
    win, hop = cfg.win_length, cfg.hop_length
    if len(clip) < win:
        raise ValueError(f"clip of {len(clip)} samples is shorter than one window ({win})")
    frames = np.lib.stride_tricks.sliding_window_view(clip.samples, win)[::hop]
    window = signal.get_window("hann", win)
    spec = np.abs(np.fft.rfft(frames * window, n=cfg.fft_size, axis=-1))
    if cfg.power != 1.0:
        spec = spec**cfg.power
    energies = spec @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, cfg.log_floor)).astype(np.float32)


@dataclass(frozen=True)
class MaskBlock:
    axis: int  # 0 = time frames, 1 = mel bins
    start: int
    width: int


def sample_mask_blocks(shape: tuple[int, int], rng: np.random.Generator, policy: AugmentPolicy) -> list[MaskBlock]:
    n_frames, n_mels = shape
    blocks = []
    for axis, count, max_w, size in (
        (0, policy.n_time_masks, policy.max_time_mask, n_frames),
        (1, policy.n_freq_masks, policy.max_freq_mask, n_mels),
    ):
        for _ in range(count):
            w = int(rng.integers(0, min(max_w, size) + 1))
            start = int(rng.integers(0, size - w + 1))
            blocks.append(MaskBlock(axis, start, w))
    return blocks


def apply_mask_blocks(features: np.ndarray, blocks: list[MaskBlock], value: float = 0.0) -> np.ndarray:
    out = np.array(features, copy=True)
    for b in blocks:
        if b.axis == 0:
            out[b.start : b.start + b.width, :] = value
        else:
            out[:, b.start : b.start + b.width] = value
    return out


def spec_mask(features: np.ndarray, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Time and frequency block masking; returns a new array."""
    blocks = sample_mask_blocks(features.shape, rng, policy)
    return apply_mask_blocks(features, blocks, policy.mask_value)


@dataclass
class ViewParams:
    """Random parameters drawn for one augmented view (for logging/debug)."""

    speed: float = 1.0
    shift_ms: float = 0.0
    snr_db: float = math.inf
    noise_gain: float = 0.0
    masks: list[MaskBlock] = field(default_factory=list)


def augment_waveform(
    clip: AudioClip,
    bank: "NoiseBank | None",
    rng: np.random.Generator,
    policy: AugmentPolicy,
    duration: float = 1.0,
    params: ViewParams | None = None,
) -> AudioClip:
    """Waveform half of the view pipeline: speed, fit, shift, noise."""
    from .dataio import sample_noise_segment

    params = params if params is not None else ViewParams()
    if policy.speed:
        params.speed = float(rng.uniform(*policy.speed_range))
        clip = speed_perturb(clip, params.speed)
    clip = fit_duration(clip, duration)
    if policy.shift:
        params.shift_ms = float(rng.uniform(*policy.shift_range_ms))
        clip = time_shift(clip, params.shift_ms)
    if policy.noise:
        if bank is None:
            raise ValueError("noise augmentation is enabled but no noise bank was given")
        noise = sample_noise_segment(bank, duration, rng)
        params.snr_db = float(rng.uniform(*policy.snr_range_db))
        clip, params.noise_gain = mix_at_snr(clip, noise, params.snr_db)
        if policy.clamp:
            clip = AudioClip(np.clip(clip.samples, -1.0, 1.0), clip.sample_rate)
    return clip


def augment_view(
    clip: AudioClip,
    bank: "NoiseBank | None",
    rng: np.random.Generator,
    policy: AugmentPolicy,
    mel: MelConfig | None = None,
    params: ViewParams | None = None,
) -> np.ndarray:
    """Produce one augmented feature map of ``clip``.

    Order: speed perturbation, fit to 1 s, circular time shift, noise mixing
    at a random SNR, log-mel, then time/frequency masking. Disabled stages
    draw no random numbers.
    """
    mel = mel or MelConfig()
    params = params if params is not None else ViewParams()
    wav = augment_waveform(clip, bank, rng, policy, params=params)
    feats = log_mel(wav, mel)
    if policy.mask:
        params.masks = sample_mask_blocks(feats.shape, rng, policy)
        feats = apply_mask_blocks(feats, params.masks, policy.mask_value)
    return feats
