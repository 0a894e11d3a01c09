"""Noise x SNR accuracy grids, embedding export and 2-D projection."""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .dataio import Manifest, ManifestEntry, NoiseBank, sample_noise_segment
from .dsp import MelConfig, decode_wav, fit_duration, log_mel, mix_at_snr

CLEAN = math.inf


class EvaluationError(RuntimeError):
    pass


@dataclass
class NoiseSource:
    """A named noise condition; ``bank=None`` means clean audio."""

    name: str
    bank: NoiseBank | None = None
    category: str | None = None

    @property
    def is_clean(self) -> bool:
        return self.bank is None


@dataclass
class EvalSpec:
    sources: list[NoiseSource]
    snrs_db: list[float] = field(default_factory=lambda: [-10.0, -5.0, 0.0, 20.0])
    seed: int = 0
    split: str = "test"
    batch_size: int = 256

    def __post_init__(self):
        if not self.sources:
            raise ValueError("EvalSpec needs at least one noise source")
        if not self.snrs_db and any(not s.is_clean for s in self.sources):
            raise ValueError("snrs_db must be non-empty when a noisy source is evaluated")

    def cells(self) -> list[tuple[NoiseSource, float]]:
        out = []
        for src in self.sources:
            out.extend([(src, CLEAN)] if src.is_clean else [(src, float(s)) for s in self.snrs_db])
        return out


def _snr_key(snr: float) -> str:
    return "clean" if math.isinf(snr) else repr(float(snr))


def clip_rng(seed: int, clip_id: str, source: str, snr: float) -> np.random.Generator:
    """Noise draw for one test clip in one cell; every model sees the same draw."""
    tag = zlib.crc32(f"{clip_id}|{source}|{_snr_key(snr)}".encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag]))


def clean_features(entry_or_path: ManifestEntry | str | Path, mel: MelConfig | None = None) -> np.ndarray:
    path = entry_or_path.path if isinstance(entry_or_path, ManifestEntry) else entry_or_path
    return log_mel(fit_duration(decode_wav(path)), mel)


def condition_features(path: Path, clip_id: str, source: NoiseSource, snr: float, seed: int,
                       mel: MelConfig | None = None) -> np.ndarray:
    """Features of one clip under one evaluation condition, no training augmentation."""
    clip = fit_duration(decode_wav(path))
    if not source.is_clean and not math.isinf(snr):
        rng = clip_rng(seed, clip_id, source.name, snr)
        noise = sample_noise_segment(source.bank, clip.duration, rng, source.category)
        clip, _ = mix_at_snr(clip, noise, snr)
    return log_mel(clip, mel)


Predictor = Callable[[torch.Tensor], "torch.Tensor | np.ndarray"]


@torch.no_grad()
def predict_logits(model: Predictor, features: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Run ``model`` (a module or any features -> logits callable) in inference mode."""
    if isinstance(model, torch.nn.Module):
        model.eval()
    outs = []
    for i in range(0, len(features), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(features[i : i + batch_size], dtype=np.float32))
        out = model(x)
        outs.append(out.detach().cpu().numpy() if isinstance(out, torch.Tensor) else np.asarray(out))
    return np.concatenate(outs) if outs else np.zeros((0, 0))


@dataclass
class AccuracyGrid:
    """Counts per (noise source, SNR) cell; clean cells use SNR = inf."""

    counts: dict[tuple[str, float], tuple[int, int]] = field(default_factory=dict)

    def add(self, source: str, snr: float, correct: int, n: int) -> None:
        self.counts[(source, float(snr))] = (int(correct), int(n))

    def accuracy(self, source: str, snr: float) -> float:
        correct, n = self.counts[(source, float(snr))]
        return correct / n

    @property
    def sources(self) -> list[str]:
        return list(dict.fromkeys(k[0] for k in self.counts))

    def snrs(self, source: str) -> list[float]:
        return [k[1] for k in self.counts if k[0] == source]

    def __eq__(self, other):
        return isinstance(other, AccuracyGrid) and self.counts == other.counts

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["noise_source", "snr_db", "n", "correct", "accuracy"])
            for (src, snr), (correct, n) in self.counts.items():
                w.writerow([src, _snr_key(snr), n, correct, repr(correct / n)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "AccuracyGrid":
        grid = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                snr = CLEAN if row["snr_db"] == "clean" else float(row["snr_db"])
                grid.add(row["noise_source"], snr, int(row["correct"]), int(row["n"]))
        return grid

    def to_text(self, row_label: str = "model") -> str:
        """Fixed-width table: one column group per noise source, one column per SNR."""
        groups = [(src, self.snrs(src)) for src in self.sources]
        col = 7
        head1 = [f"{'':<16}"]
        head2 = [f"{'':<16}"]
        row = [f"{row_label:<16}"]
        for src, snrs in groups:
            width = col * len(snrs)
            head1.append(f"{src[:width - 1]:^{width}}|")
            head2.append("".join(f"{('Clean' if math.isinf(s) else f'{s:g}'):>{col}}" for s in snrs) + "|")
            row.append("".join(f"{self.accuracy(src, s):>{col}.3f}" for s in snrs) + "|")
        return "\n".join(["".join(head1), "".join(head2), "".join(row)])


def evaluate_grid(
    model: Predictor,
    manifest: Manifest,
    spec: EvalSpec,
    mel: MelConfig | None = None,
    classes: Sequence[str] | None = None,
) -> AccuracyGrid:
    """Accuracy of ``model`` on the evaluation split under every noise condition.

    Clips are fit to 1 s and mixed with one seeded noise segment at exactly
    the cell's SNR; no masking, shifting or speed change is applied.
    """
    entries = manifest.split(spec.split)
    if not entries:
        raise EvaluationError(f"split {spec.split!r} is empty; nothing to evaluate")
    index = {c: i for i, c in enumerate(classes or manifest.classes)}
    targets = np.array([index[e.label] for e in entries])
    ids = [manifest.relpath(e) for e in entries]
    grid = AccuracyGrid()
    for source, snr in spec.cells():
        feats = np.stack([
            condition_features(e.path, cid, source, snr, spec.seed, mel) for e, cid in zip(entries, ids)
        ])
        logits = predict_logits(model, feats, spec.batch_size)
        if logits.shape[0] == 0:
            raise EvaluationError(f"empty cell ({source.name}, {snr})")
        grid.add(source.name, snr, int((logits.argmax(axis=1) == targets).sum()), len(entries))
    return grid


# ---------------------------------------------------------------------------
# embeddings


@dataclass
class EmbeddingDump:
    vectors: np.ndarray
    labels: list[str]
    clip_ids: list[str]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.vectors) == len(self.labels) == len(self.clip_ids)):
            raise ValueError("embedding rows, labels and clip ids must have equal counts")

    def save(self, path: str | Path) -> None:
        """Write ``<path>.npy`` (float32 matrix), ``<path>.jsonl`` and ``<path>.meta.json``."""
        base = Path(path)
        np.save(base.with_suffix(".npy"), self.vectors.astype(np.float32))
        with open(base.with_suffix(".jsonl"), "w", encoding="utf-8") as fh:
            for i, (label, cid) in enumerate(zip(self.labels, self.clip_ids)):
                fh.write(json.dumps({"row": i, "clip_id": cid, "label": label}) + "\n")
        with open(base.with_suffix(".meta.json"), "w", encoding="utf-8") as fh:
            json.dump(self.metadata, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingDump":
        base = Path(path)
        vectors = np.load(base.with_suffix(".npy"))
        with open(base.with_suffix(".jsonl"), encoding="utf-8") as fh:
            rows = [json.loads(line) for line in fh if line.strip()]
        meta_path = base.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(vectors, [r["label"] for r in rows], [r["clip_id"] for r in rows], meta)


@torch.no_grad()
def export_embeddings(
    model,
    manifest: Manifest,
    source: NoiseSource,
    snr: float,
    path: str | Path | None = None,
    mel: MelConfig | None = None,
    seed: int = 0,
    split: str = "test",
    checkpoint_id: str = "",
    batch_size: int = 256,
) -> EmbeddingDump:
    """Latent vectors (pre-classifier bottleneck) of every clip in ``split``."""
    entries = manifest.split(split)
    if not entries:
        raise EvaluationError(f"split {split!r} is empty")
    ids = [manifest.relpath(e) for e in entries]
    feats = np.stack([condition_features(e.path, cid, source, snr, seed, mel) for e, cid in zip(entries, ids)])
    model.eval()
    vecs = []
    for i in range(0, len(feats), batch_size):
        vecs.append(model.encode(torch.from_numpy(feats[i : i + batch_size])).cpu().numpy())
    meta = {"checkpoint": checkpoint_id, "noise_source": source.name, "snr_db": _snr_key(snr),
            "seed": seed, "split": split}
    dump = EmbeddingDump(np.concatenate(vecs), [e.label for e in entries], ids, meta)
    if path is not None:
        dump.save(path)
    return dump


def project_2d(data: EmbeddingDump | np.ndarray, method: str = "pca") -> np.ndarray:
    """Project rows onto their top two principal axes."""
    if method != "pca":
        raise ValueError(f"unsupported projection {method!r}")
    x = np.asarray(data.vectors if isinstance(data, EmbeddingDump) else data, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError(f"need at least 3 points, got shape {x.shape}")
    xc = x - x.mean(axis=0)
    _, s, vt = np.linalg.svd(xc, full_matrices=False)
    tol = max(x.shape) * np.finfo(np.float64).eps * (s[0] if s.size else 0.0)
    if s.size < 2 or s[1] <= tol:
        raise ValueError("degenerate covariance: points span fewer than 2 dimensions")
    return xc @ vt[:2].T


def save_projection(path: str | Path, coords: np.ndarray, labels: Iterable[str]) -> None:
    """Tab-separated ``x, y, label`` rows, readable by common plotting/projector tools."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x\ty\tlabel\n")
        for (x, y), label in zip(coords, labels):
            fh.write(f"{float(x)!r}\t{float(y)!r}\t{label}\n")
