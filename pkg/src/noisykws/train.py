"""Dual-view supervised training with the contrastive regularizer.

Reproducibility: the shuffle of epoch ``e`` is drawn from
``SeedSequence([seed, 0, e])`` and view ``v`` of batch ``b`` from
``SeedSequence([seed, 1, e, b, v])``, so the data stream does not depend on
worker scheduling or on where a run was resumed.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from .dataio import Manifest, NoiseBank
from .dsp import AugmentPolicy, MelConfig, augment_view, decode_wav
from .evaluate import clean_features, predict_logits
from .i2cr import EmbeddingBatch, LossBreakdown, LossConfig, RampSchedule, REGULARIZERS, total_loss
from .model import EncoderConfig, KWSModel, build_model

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_FIELDS = ("epoch", "step", "lr", "alpha", "ce", "i2cr", "total")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 128
    lr_init: float = 5e-4
    lr_min: float = 1e-12
    epochs: int = 100
    seed: int = 0
    regularizer: str = "i2cr"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: float | None = None
    num_workers: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not 0 <= self.lr_min <= self.lr_init:
            raise ValueError("need 0 <= lr_min <= lr_init")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        self.betas = (float(self.betas[0]), float(self.betas[1]))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Cosine annealing from ``lr_init`` (step 0) to ``lr_min`` (step total_steps)."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    # convex-combination form hits both endpoints exactly
    w = 0.5 * (1.0 - math.cos(math.pi * step / total_steps))
    return (1.0 - w) * cfg.lr_init + w * cfg.lr_min


# ---------------------------------------------------------------------------
# data


@dataclass
class Sample:
    clip_id: str
    label: int
    path: Path


@dataclass
class Batch:
    features: np.ndarray  # (2B, frames, mels)
    labels: np.ndarray  # (2B,)
    view_of: np.ndarray  # (2B,) index into the epoch's sample list
    epoch: int = 0
    index: int = 0


def train_samples(manifest: Manifest, split: str = "train") -> list[Sample]:
    index = {c: i for i, c in enumerate(manifest.classes)}
    return [Sample(manifest.relpath(e), index[e.label], e.path) for e in manifest.split(split)]


def epoch_batches(n_samples: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """A fresh without-replacement partition of ``range(n_samples)``; the last batch may be short."""
    order = np.random.default_rng(np.random.SeedSequence([seed, 0, epoch])).permutation(n_samples)
    return [order[i : i + batch_size] for i in range(0, n_samples, batch_size)]


def view_rng(seed: int, epoch: int, batch: int, view: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, epoch, batch, view]))


def make_batch(
    samples: Sequence[Sample],
    indices: Sequence[int],
    bank: NoiseBank | None,
    policy: AugmentPolicy,
    mel: MelConfig,
    seed: int,
    epoch: int = 0,
    batch_index: int = 0,
    views: int = 2,
    executor: ThreadPoolExecutor | None = None,
) -> Batch:
    """Augment each sample ``views`` times; views of one sample are adjacent."""
    jobs = [(int(i), k) for i in indices for k in range(views)]

    def one(view: int) -> np.ndarray:
        i = jobs[view][0]
        rng = view_rng(seed, epoch, batch_index, view)
        return augment_view(decode_wav(samples[i].path), bank, rng, policy, mel)

    views_idx = range(len(jobs))
    feats = list(executor.map(one, views_idx)) if executor else [one(v) for v in views_idx]
    return Batch(
        np.stack(feats),
        np.array([samples[i].label for i, _ in jobs], dtype=np.int64),
        np.array([i for i, _ in jobs], dtype=np.int64),
        epoch,
        batch_index,
    )


def iter_epoch(samples, bank, policy, mel, cfg: TrainConfig, epoch: int, executor=None) -> Iterator[Batch]:
    for b, idx in enumerate(epoch_batches(len(samples), cfg.batch_size, cfg.seed, epoch)):
        yield make_batch(samples, idx, bank, policy, mel, cfg.seed, epoch, b, executor=executor)


# ---------------------------------------------------------------------------
# state


@dataclass
class TrainState:
    model: KWSModel
    optimizer: torch.optim.Optimizer
    classes: list[str]
    epoch: int = 0  # completed epochs
    global_step: int = 0
    best_val_acc: float = -1.0
    best_epoch: int = -1
    best_params: dict | None = field(default=None, repr=False)
    seed: int = 0


def init_state(enc: EncoderConfig, classes: Sequence[str], cfg: TrainConfig) -> TrainState:
    model = build_model(enc, len(classes), seed=cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_init, betas=cfg.betas, eps=cfg.eps,
                           weight_decay=cfg.weight_decay)
    return TrainState(model, opt, list(classes), seed=cfg.seed)


def train_step(
    state: TrainState,
    batch: Batch,
    cfg: TrainConfig,
    ramp: RampSchedule,
    loss_cfg: LossConfig,
    total_steps: int,
) -> LossBreakdown:
    """One forward/backward/Adam update; mutates ``state`` and returns the loss record."""
    lr = lr_at(state.global_step, total_steps, cfg)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    model = state.model
    model.train()
    x = torch.from_numpy(batch.features)
    labels = torch.from_numpy(batch.labels)
    h = model.encode(x)
    logits = model.classify(h)
    emb = EmbeddingBatch(model.project(h), labels, torch.from_numpy(batch.view_of))
    loss, parts = total_loss(logits, labels, emb, state.epoch, ramp, loss_cfg, cfg.regularizer)
    if not torch.isfinite(loss):
        raise TrainingDiverged(
            f"non-finite loss {parts} at epoch {batch.epoch} batch {batch.index}; "
            f"view seeds are SeedSequence([{cfg.seed}, 1, {batch.epoch}, {batch.index}, view])"
        )
    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if cfg.grad_clip:
        torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
    state.optimizer.step()
    state.global_step += 1
    return parts


def validation_accuracy(model, feats: np.ndarray, targets: np.ndarray) -> float:
    if len(targets) == 0:
        return float("nan")
    return float((predict_logits(model, feats).argmax(axis=1) == targets).mean())


def _metric_row(epoch, step, lr, parts: LossBreakdown) -> list[str]:
    return [str(epoch), str(step), repr(lr), repr(parts.alpha), repr(parts.ce), repr(parts.i2cr), repr(parts.total)]


def fit(
    state: TrainState,
    manifest: Manifest,
    bank: NoiseBank | None,
    cfg: TrainConfig,
    policy: AugmentPolicy | None = None,
    mel: MelConfig | None = None,
    loss_cfg: LossConfig | None = None,
    ramp: RampSchedule | None = None,
    out_dir: str | Path | None = None,
    until: int | None = None,
) -> TrainState:
    """Train from ``state.epoch`` to ``until`` (default ``cfg.epochs``).

    Schedules always span ``cfg.epochs``, so stopping early and resuming
    from the checkpoint replays the uninterrupted run step for step.

    Keeps the parameters with the best clean validation accuracy in
    ``state.best_params``. With ``out_dir`` it appends to ``metrics.csv``
    (per step) and ``epochs.csv`` (per epoch), and writes ``last.pt`` and
    ``best.pt`` checkpoints.
    """
    policy = policy or AugmentPolicy()
    mel = mel or MelConfig()
    loss_cfg = loss_cfg or LossConfig()
    ramp = ramp or RampSchedule(total_epochs=cfg.epochs)
    samples = train_samples(manifest)
    if len(samples) < cfg.batch_size:
        raise ValueError(f"{len(samples)} training clips is fewer than batch_size {cfg.batch_size}")
    steps_per_epoch = math.ceil(len(samples) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    stop = cfg.epochs if until is None else min(until, cfg.epochs)

    index = {c: i for i, c in enumerate(state.classes)}
    val = manifest.split("val")
    val_feats = np.stack([clean_features(e, mel) for e in val]) if val else np.zeros((0,))
    val_targets = np.array([index[e.label] for e in val], dtype=np.int64)

    out = Path(out_dir) if out_dir is not None else None
    step_fh = epoch_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fresh = state.global_step == 0
        step_fh = open(out / "metrics.csv", "w" if fresh else "a", newline="", encoding="utf-8")
        epoch_fh = open(out / "epochs.csv", "w" if fresh else "a", newline="", encoding="utf-8")
        if fresh:
            csv.writer(step_fh).writerow(METRIC_FIELDS)
            csv.writer(epoch_fh).writerow(["epoch", "val_accuracy"])
    executor = ThreadPoolExecutor(cfg.num_workers) if cfg.num_workers > 0 else None
    try:
        while state.epoch < stop:
            epoch = state.epoch
            for batch in iter_epoch(samples, bank, policy, mel, cfg, epoch, executor):
                step = state.global_step
                lr = lr_at(step, total_steps, cfg)
                parts = train_step(state, batch, cfg, ramp, loss_cfg, total_steps)
                if step_fh:
                    csv.writer(step_fh).writerow(_metric_row(epoch, step, lr, parts))
            acc = validation_accuracy(state.model, val_feats, val_targets)
            state.epoch += 1
            logger.info("epoch %d: val_accuracy=%.4f", epoch, acc)
            if epoch_fh:
                csv.writer(epoch_fh).writerow([str(epoch), repr(acc)])
            # ties go to the later (longer-trained) epoch
            if not math.isnan(acc) and acc >= state.best_val_acc:
                state.best_val_acc, state.best_epoch = acc, epoch
                state.best_params = copy.deepcopy(state.model.state_dict())
                if out is not None:
                    save_checkpoint(state, out / "best.pt", train_cfg=cfg)
            if out is not None:
                save_checkpoint(state, out / "last.pt", train_cfg=cfg)
    finally:
        for fh in (step_fh, epoch_fh):
            if fh:
                fh.close()
        if executor:
            executor.shutdown()
    return state


def best_model(state: TrainState) -> KWSModel:
    """A copy of the model carrying the best-validation parameters (or the current ones)."""
    model = copy.deepcopy(state.model)
    if state.best_params is not None:
        model.load_state_dict(state.best_params)
    return model.eval()


# ---------------------------------------------------------------------------
# checkpoints


def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(state: TrainState, path: str | Path, train_cfg: TrainConfig | None = None) -> None:
    """Write ``path`` (torch archive) and ``path.with_suffix('.json')`` (metadata)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    model = state.model
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "encoder_cfg": model.cfg.to_dict(),
        "n_classes": model.n_classes,
        "proj_dim": model.cfg.proj_dim,
        "classes": state.classes,
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_val_acc": state.best_val_acc,
        "best_epoch": state.best_epoch,
        "seed": state.seed,
        "train_cfg": asdict(train_cfg) if train_cfg else None,
    }
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "model": model.state_dict(),
            "optimizer": state.optimizer.state_dict(),
            "best_params": state.best_params,
            "torch_rng": torch.get_rng_state(),
        },
        path,
    )
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path, n_classes: int | None = None, restore_rng: bool = True) -> TrainState:
    path = Path(path)
    meta_path = _sidecar(path)
    if not path.exists() or not meta_path.exists():
        raise CheckpointError(f"checkpoint {path} or its metadata {meta_path} is missing")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    blob = torch.load(path, map_location="cpu", weights_only=True)
    for where, version in (("metadata", meta.get("format_version")), ("archive", blob.get("format_version"))):
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint {where} version {version} does not match supported version {CHECKPOINT_VERSION}"
            )
    if n_classes is not None and meta["n_classes"] != n_classes:
        raise CheckpointError(f"checkpoint has {meta['n_classes']} classes, expected {n_classes}")
    model = KWSModel(EncoderConfig(**meta["encoder_cfg"]), meta["n_classes"])
    model.load_state_dict(blob["model"])
    tc = meta.get("train_cfg") or {}
    opt = torch.optim.Adam(model.parameters(), lr=tc.get("lr_init", 5e-4), betas=tuple(tc.get("betas", (0.9, 0.999))),
                           eps=tc.get("eps", 1e-8), weight_decay=tc.get("weight_decay", 0.0))
    opt.load_state_dict(blob["optimizer"])
    if restore_rng:
        torch.set_rng_state(blob["torch_rng"])
    return TrainState(
        model, opt, list(meta["classes"]), meta["epoch"], meta["global_step"], meta["best_val_acc"],
        meta.get("best_epoch", -1), blob.get("best_params"), meta.get("seed", 0),
    )
