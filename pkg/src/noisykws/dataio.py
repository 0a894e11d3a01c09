"""Keyword corpus and noise bank ingestion.

The keyword corpus layout is one sub-directory per keyword holding WAV files,
with optional ``validation_list.txt`` / ``testing_list.txt`` files at the
root naming clips by their path relative to the root (the Speech Commands
convention). Noise banks are any directory tree of WAV files.
"""

from __future__ import annotations

import fnmatch
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dsp import SAMPLE_RATE, AudioClip, AudioDecodeError, decode_wav, decode_wav_cached

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
PARTITIONS = ("train", "eval")
AUDIO_SUFFIXES = (".wav",)
BACKGROUND_DIR = "_background_noise_"


class DataError(RuntimeError):
    """Fatal problem with a corpus or noise bank on disk."""


@dataclass(frozen=True)
class ClassSubset:
    name: str
    members: tuple[str, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError(f"class subset {self.name!r} is empty")
        if len(set(members)) != len(members):
            raise ValueError(f"class subset {self.name!r} has duplicate members")
        object.__setattr__(self, "members", members)

    def __len__(self):
        return len(self.members)


COMMANDS_10 = ClassSubset("10", ("up", "down", "left", "right", "yes", "no", "on", "off", "go", "stop"))
COMMANDS_35 = ClassSubset(
    "35",
    (
        "backward", "bed", "bird", "cat", "dog", "down", "eight", "five", "follow",
        "forward", "four", "go", "happy", "house", "learn", "left", "marvin", "nine",
        "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop", "three",
        "tree", "two", "up", "visual", "wow", "yes", "zero",
    ),
)


def corpus_classes(root: str | Path) -> ClassSubset:
    """Every keyword directory under ``root``, sorted (a "custom" subset)."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root {root} does not exist")
    names = sorted(
        p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith((".", "_"))
    )
    return ClassSubset("custom", tuple(names))


@dataclass
class ManifestEntry:
    path: Path
    label: str
    split: str = "train"

    def __post_init__(self):
        self.path = Path(self.path)
        if self.split not in SPLITS:
            raise ValueError(f"invalid split {self.split!r} for {self.path}")


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    classes: list[str]
    root: Path | None = None
    sample_rate: int = SAMPLE_RATE
    skipped: list[str] = field(default_factory=list)

    def __post_init__(self):
        known = set(self.classes)
        seen = set()
        for e in self.entries:
            if e.label not in known:
                raise ValueError(f"label {e.label!r} of {e.path} is not in classes")
            if e.path in seen:
                raise ValueError(f"duplicate clip path {e.path}")
            seen.add(e.path)

    def __len__(self):
        return len(self.entries)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def split_counts(self) -> dict[str, int]:
        return {s: sum(e.split == s for e in self.entries) for s in SPLITS}

    def label_index(self, label: str) -> int:
        return self.classes.index(label)

    def relpath(self, entry: ManifestEntry) -> str:
        if self.root is None:
            return entry.path.as_posix()
        return entry.path.relative_to(self.root).as_posix()


@dataclass
class NoiseEntry:
    path: Path
    category: str = "uncategorized"
    partition: str = "train"
    duration: float = 0.0

    def __post_init__(self):
        self.path = Path(self.path)
        if self.partition not in PARTITIONS:
            raise ValueError(f"invalid partition {self.partition!r} for {self.path}")


@dataclass
class NoiseBank:
    entries: list[NoiseEntry]
    sample_rate: int = SAMPLE_RATE
    # preloaded waveforms by path; bypasses disk reads when present
    audio: dict[Path, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.entries)

    @property
    def total_duration(self) -> float:
        return float(sum(e.duration for e in self.entries))

    @property
    def categories(self) -> list[str]:
        return sorted({e.category for e in self.entries})

    def select(self, category: str | None = None, partition: str | None = None) -> "NoiseBank":
        keep = [
            e for e in self.entries
            if (category is None or e.category == category)
            and (partition is None or e.partition == partition)
        ]
        return NoiseBank(keep, self.sample_rate, {e.path: self.audio[e.path] for e in keep if e.path in self.audio})

    def load(self, entry: NoiseEntry) -> np.ndarray:
        if entry.path in self.audio:
            return self.audio[entry.path]
        return decode_wav_cached(entry.path, self.sample_rate).samples

    def preload(self) -> "NoiseBank":
        for e in self.entries:
            if e.path not in self.audio:
                self.audio[e.path] = decode_wav(e.path, self.sample_rate).samples
        return self

    @classmethod
    def from_arrays(cls, clips: Mapping[str, np.ndarray], category: str = "uncategorized",
                    partition: str = "train", sample_rate: int = SAMPLE_RATE) -> "NoiseBank":
        """In-memory bank; keys act as clip paths."""
        entries, audio = [], {}
        for name in sorted(clips):
            x = np.asarray(clips[name], dtype=np.float64)
            if x.size == 0:
                raise DataError(f"noise clip {name} is empty")
            p = Path(name)
            entries.append(NoiseEntry(p, category, partition, x.size / sample_rate))
            audio[p] = x
        return cls(entries, sample_rate, audio)


# ---------------------------------------------------------------------------


def _audio_files(root: Path) -> list[Path]:
    return sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in AUDIO_SUFFIXES),
        key=lambda p: p.as_posix(),
    )


def _probe(path: Path) -> int | None:
    """Number of samples in a decodable file, else None."""
    try:
        return len(decode_wav(path))
    except AudioDecodeError as exc:
        logger.warning("skipping %s", exc)
        return None


def scan_keyword_corpus(root: str | Path, subset: ClassSubset, verify: bool = True) -> Manifest:
    """Enumerate ``root/<class>/*.wav`` for every class in ``subset``.

    Entries are ordered lexicographically by path and all start in the
    train split. Undecodable files are skipped with a warning and listed
    in ``Manifest.skipped``.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"corpus root {root} does not exist")
    missing = [c for c in subset.members if not (root / c).is_dir()]
    if missing:
        raise DataError(f"missing class directories under {root}: {', '.join(missing)}")
    entries, skipped = [], []
    for cls in subset.members:
        for path in _audio_files(root / cls):
            if verify and not _probe(path):
                skipped.append(path.relative_to(root).as_posix())
                continue
            entries.append(ManifestEntry(path, cls))
    entries.sort(key=lambda e: e.path.as_posix())
    if skipped:
        logger.warning("skipped %d undecodable files under %s", len(skipped), root)
    return Manifest(entries, list(subset.members), root, skipped=skipped)


def read_file_list(path: str | Path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def assign_splits(manifest: Manifest, val_list: Iterable[str], test_list: Iterable[str]) -> Manifest:
    """Tag entries named in the validation/test lists; everything else is train."""
    val, test = set(val_list), set(test_list)
    overlap = val & test
    if overlap:
        raise DataError(f"{len(overlap)} paths are in both validation and test lists, e.g. {min(overlap)}")
    rel = {manifest.relpath(e): e for e in manifest.entries}
    unknown = (val | test) - rel.keys()
    if unknown:
        logger.warning("%d listed paths are not in the manifest, e.g. %s", len(unknown), min(unknown))
    entries = []
    for r, e in rel.items():
        split = "val" if r in val else "test" if r in test else "train"
        entries.append(ManifestEntry(e.path, e.label, split))
    return Manifest(entries, list(manifest.classes), manifest.root, manifest.sample_rate, list(manifest.skipped))


def assign_official_splits(manifest: Manifest) -> Manifest:
    """Use ``validation_list.txt`` / ``testing_list.txt`` under the corpus root, if present."""
    root = manifest.root
    lists = []
    for name in ("validation_list.txt", "testing_list.txt"):
        p = root / name if root is not None else None
        lists.append(read_file_list(p) if p is not None and p.exists() else set())
    return assign_splits(manifest, *lists)


def _category_for(path: Path, root: Path, category_map: Mapping[str, str]) -> str:
    rel = path.relative_to(root).as_posix()
    for pattern, category in category_map.items():
        if fnmatch.fnmatch(path.name, pattern) or fnmatch.fnmatch(rel, pattern):
            return category
    return "uncategorized"


def scan_noise_bank(root: str | Path, category_map: Mapping[str, str] | None = None,
                    partition: str = "train") -> NoiseBank:
    """Collect every decodable WAV under ``root`` into a noise bank.

    ``category_map`` maps glob patterns (matched against the file name or
    the path relative to ``root``) to category names; the first matching
    pattern wins.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"noise root {root} does not exist")
    if partition not in PARTITIONS:
        raise ValueError(f"partition must be one of {PARTITIONS}, got {partition!r}")
    category_map = dict(category_map or {})
    entries = []
    for path in _audio_files(root):
        n = _probe(path)
        if not n:
            continue
        entries.append(NoiseEntry(path, _category_for(path, root, category_map), partition, n / SAMPLE_RATE))
    if not entries:
        raise DataError(f"no decodable audio under {root}")
    return NoiseBank(entries)


def sample_noise_segment(bank: NoiseBank, duration: float, rng: np.random.Generator,
                         category: str | None = None) -> AudioClip:
    """Draw a contiguous ``duration``-second noise segment.

    The clip is chosen uniformly, then the start offset uniformly over the
    valid range. Clips shorter than ``duration`` are tiled cyclically.
    """
    pool = bank.entries if category is None else [e for e in bank.entries if e.category == category]
    if not pool:
        what = "noise bank is empty" if category is None else f"no noise clips in category {category!r}"
        raise DataError(what)
    n = int(round(duration * bank.sample_rate))
    entry = pool[int(rng.integers(len(pool)))]
    x = bank.load(entry)
    if len(x) < n:
        return AudioClip(np.resize(x, n), bank.sample_rate)
    start = int(rng.integers(0, len(x) - n + 1))
    return AudioClip(x[start : start + n].copy(), bank.sample_rate)


# ---------------------------------------------------------------------------
# JSON-lines persistence


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            fh.write(json.dumps({"path": str(e.path), "label": e.label, "split": e.split}, ensure_ascii=False) + "\n")


def load_manifest(path: str | Path, classes: Sequence[str] | None = None) -> Manifest:
    """Read a JSON-lines manifest.

    Without ``classes`` the class list is the sorted set of labels present.
    Relative paths resolve against the manifest file's directory.
    """
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            p = Path(rec["path"])
            if not p.is_absolute():
                p = path.parent / p
            entries.append(ManifestEntry(p, rec["label"], rec.get("split", "train")))
    if classes is None:
        classes = sorted({e.label for e in entries})
    root = None
    if entries:
        root = Path(os.path.commonpath([str(e.path.parent.parent) for e in entries]))
    return Manifest(entries, list(classes), root)


def save_noise_bank(bank: NoiseBank, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in bank.entries:
            fh.write(json.dumps({"path": str(e.path), "category": e.category, "partition": e.partition},
                                ensure_ascii=False) + "\n")


def load_noise_bank(path: str | Path) -> NoiseBank:
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            p = Path(rec["path"])
            if not p.is_absolute():
                p = path.parent / p
            n = _probe(p)
            if not n:
                raise DataError(f"noise clip {p} listed in {path} is missing or empty")
            entries.append(NoiseEntry(p, rec.get("category", "uncategorized"), rec.get("partition", "train"), n / SAMPLE_RATE))
    if not entries:
        raise DataError(f"noise bank {path} is empty")
    return NoiseBank(entries)
