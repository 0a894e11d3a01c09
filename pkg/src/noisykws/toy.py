"""Synthetic keyword corpus and colored-noise bank for smoke runs.

Each "keyword" is a voiced burst whose spectral peak traces a class
pattern (rising chirp, falling chirp, double burst, warbled tone), with
per-utterance jitter in pitch, timing, level and resonance width. The corpus is written in the Speech Commands layout, including
``validation_list.txt`` and ``testing_list.txt``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip, write_wav

TOY_CLASSES = ("rise", "fall", "double", "warble")
NOISE_COLORS = {"white": 0.0, "pink": 1.0, "brown": 2.0, "band": None}


def _voiced(formant: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Harmonic series on a low, drifting f0, shaped by a resonance that follows ``formant``."""
    n = len(formant)
    f0 = rng.uniform(100, 220) * (1 + 0.05 * np.sin(2 * np.pi * rng.uniform(1, 3) * np.arange(n) / SAMPLE_RATE))
    phase = 2 * np.pi * np.cumsum(f0) / SAMPLE_RATE
    bw = rng.uniform(300, 550)
    k = np.arange(1, int(5000 / f0.min()) + 1)[:, None]
    partial = k * f0
    gain = np.exp(-0.5 * ((partial - formant) / bw) ** 2) + 0.05 / k
    gain[partial >= SAMPLE_RATE / 2 - 500] = 0.0
    return (gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi, size=k.shape))).sum(axis=0)


def keyword_waveform(label: str, rng: np.random.Generator, duration: float = 1.0) -> np.ndarray:
    """One utterance: a voiced burst whose resonance traces the class pattern, over a faint noise floor."""
    n = int(duration * SAMPLE_RATE)
    length = int(rng.uniform(0.5, 0.8) * SAMPLE_RATE)
    onset = int(rng.integers(0, n - length))
    t = np.arange(length) / SAMPLE_RATE
    span = length / SAMPLE_RATE
    pitch = rng.uniform(0.85, 1.15)
    if label == "rise":
        f = pitch * (400 + 1400 * t / span)
    elif label == "fall":
        f = pitch * (1800 - 1400 * t / span)
    elif label == "double":
        f = np.full(length, pitch * 900.0)
    elif label == "warble":
        f = pitch * (1200 + 250 * np.sin(2 * np.pi * rng.uniform(6, 10) * t))
    else:
        raise ValueError(f"unknown toy class {label!r}")
    x = _voiced(f, rng)
    env = np.sin(np.pi * t / span) ** 0.5
    if label == "double":
        gap = (t > 0.4 * span) & (t < 0.6 * span)
        env = env * ~gap
    out = np.zeros(n)
    out[onset : onset + length] = x * env
    out = rng.uniform(0.1, 0.4) * out / np.max(np.abs(out))
    # recordings are never digitally silent
    return out + rng.normal(0.0, 3e-4, n)


def colored_noise(color: str, n: int, rng: np.random.Generator) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1 / SAMPLE_RATE)
    beta = NOISE_COLORS[color]
    if beta is None:
        lo = rng.uniform(200, 600)
        shaping = ((f > lo) & (f < lo + rng.uniform(1000, 2000))).astype(float)
    else:
        shaping = np.where(f > 0, np.maximum(f, 20.0) ** (-beta / 2), 0.0)
    x = np.fft.irfft(spec * shaping, n)
    return 0.3 * x / np.max(np.abs(x))


@dataclass
class ToyPaths:
    corpus: Path
    noise_train: Path
    noise_eval: Path


def make_toy_dataset(
    root: str | Path,
    n_train: int = 48,
    n_val: int = 12,
    n_test: int = 50,
    n_noise: int = 8,
    seed: int = 0,
) -> ToyPaths:
    """Write the corpus and the train/eval noise banks under ``root``; counts are per class/color."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    corpus = root / "corpus"
    val_list, test_list = [], []
    for label in TOY_CLASSES:
        (corpus / label).mkdir(parents=True, exist_ok=True)
        for i in range(n_train + n_val + n_test):
            rel = f"{label}/{label}_{i:04d}.wav"
            write_wav(corpus / rel, AudioClip(keyword_waveform(label, rng)))
            if n_train <= i < n_train + n_val:
                val_list.append(rel)
            elif i >= n_train + n_val:
                test_list.append(rel)
    (corpus / "validation_list.txt").write_text("\n".join(val_list) + "\n")
    (corpus / "testing_list.txt").write_text("\n".join(test_list) + "\n")

    dirs = {}
    for part in ("train", "eval"):
        d = root / f"noise_{part}"
        d.mkdir(parents=True, exist_ok=True)
        for color in NOISE_COLORS:
            for i in range(n_noise):
                n = int(rng.uniform(1.5, 3.0) * SAMPLE_RATE)
                write_wav(d / f"{color}_{i:03d}.wav", AudioClip(colored_noise(color, n, rng)))
        dirs[part] = d
    return ToyPaths(corpus, dirs["train"], dirs["eval"])


TOY_CATEGORY_MAP = {f"{c}_*": c for c in NOISE_COLORS}
