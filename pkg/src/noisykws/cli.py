"""Command-line entry point: ``noisykws {train,evaluate,export-embeddings,mix-demo,make-manifest}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .config import ConfigError, dump_config, load_config, override
from .dsp import AudioClip, decode_wav, mix_at_snr, write_wav
from .evaluate import EvalSpec, NoiseSource, evaluate_grid, export_embeddings, project_2d, save_projection
from .train import fit, init_state, load_checkpoint, save_checkpoint

logger = logging.getLogger("noisykws")

ROW_LABELS = {"none": "(Base)", "intra": "(Intra Reg.)", "i2cr": "(I2CR Reg.)"}


class UsageError(Exception):
    """Bad flags or config; exit code 2."""


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _category_map(text: str | None) -> dict[str, str]:
    out = {}
    for item in (text or "").split(","):
        if not item.strip():
            continue
        pattern, sep, category = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"category map items look like 'pattern=category', got {item!r}")
        out[pattern.strip()] = category.strip()
    return out


def _subset(args) -> dataio.ClassSubset:
    if args.subset == "10":
        return dataio.COMMANDS_10
    if args.subset == "35":
        return dataio.COMMANDS_35
    if args.classes:
        return dataio.ClassSubset("custom", tuple(c.strip() for c in args.classes.split(",") if c.strip()))
    if not args.data_dir:
        raise UsageError("--subset custom needs --classes or --data-dir")
    return dataio.corpus_classes(args.data_dir)


def _manifest(args) -> dataio.Manifest:
    if args.manifest:
        classes = None if args.subset == "custom" and not args.classes else list(_subset(args).members)
        return dataio.load_manifest(args.manifest, classes)
    if not args.data_dir:
        raise UsageError("need --manifest or --data-dir")
    return dataio.assign_official_splits(dataio.scan_keyword_corpus(args.data_dir, _subset(args)))


def _config(args):
    cfg = load_config(args.config)
    cfg = override(cfg, "train", seed=args.seed, epochs=getattr(args, "epochs", None),
                   batch_size=getattr(args, "batch_size", None), regularizer=getattr(args, "regularizer", None))
    cfg = override(cfg, "model", arch=getattr(args, "encoder", None))
    cfg = override(cfg, "eval", snrs_db=getattr(args, "snrs", None), seed=args.seed)
    # the regularizer weight ramps over the whole run
    return override(cfg, "ramp", total_epochs=cfg.train.epochs)


def _run_dir(args, cfg) -> Path:
    return Path(args.out_dir) / cfg.train.regularizer


def _checkpoint(args, cfg) -> Path:
    if args.checkpoint:
        return Path(args.checkpoint)
    for candidate in (_run_dir(args, cfg) / "best.pt", Path(args.out_dir) / "best.pt"):
        if candidate.exists():
            return candidate
    raise UsageError(f"no checkpoint given and none found under {args.out_dir}")


def _noise_sources(args, cfg, partition: str = "eval") -> list[NoiseSource]:
    sources = []
    cmap = _category_map(args.category_map) if args.category_map else cfg.eval.category_map
    for d in args.noise_dir or []:
        bank = dataio.scan_noise_bank(d, cmap, partition)
        if cmap:
            sources.extend(NoiseSource(c, bank, c) for c in bank.categories)
        else:
            sources.append(NoiseSource(Path(d).name, bank))
    return sources


# ---------------------------------------------------------------------------


def cmd_make_manifest(args) -> int:
    manifest = dataio.assign_official_splits(dataio.scan_keyword_corpus(args.data_dir, _subset(args)))
    out = Path(args.out or Path(args.out_dir) / "manifest.jsonl")
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.save_manifest(manifest, out)
    counts = manifest.split_counts()
    print(f"{out}: {len(manifest)} clips, {len(manifest.classes)} classes, "
          f"train/val/test = {counts['train']}/{counts['val']}/{counts['test']}, skipped {len(manifest.skipped)}")
    for d in args.noise_dir or []:
        bank = dataio.scan_noise_bank(d, _category_map(args.category_map), args.partition)
        bank_out = out.with_name(f"noise_{Path(d).name}.jsonl")
        dataio.save_noise_bank(bank, bank_out)
        print(f"{bank_out}: {len(bank)} noise clips, {bank.total_duration:.1f} s")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = _manifest(args)
    bank = None
    if cfg.augment.noise:
        if not args.noise_dir:
            raise UsageError("noise augmentation is enabled; pass --noise-dir (or disable augment.noise)")
        banks = [dataio.scan_noise_bank(d, cfg.eval.category_map, "train") for d in args.noise_dir]
        bank = dataio.NoiseBank([e for b in banks for e in b.entries])
    run = _run_dir(args, cfg)
    run.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, run / "config.yaml")
    if args.resume:
        state = load_checkpoint(args.resume, n_classes=len(manifest.classes))
    else:
        state = init_state(cfg.model, manifest.classes, cfg.train)
    state = fit(state, manifest, bank, cfg.train, cfg.augment, cfg.mel, cfg.loss, cfg.ramp, out_dir=run)
    if state.best_params is None:
        save_checkpoint(state, run / "best.pt", train_cfg=cfg.train)
    print(f"trained {state.epoch} epochs, best val accuracy {state.best_val_acc:.4f} "
          f"(epoch {state.best_epoch}); outputs in {run}")
    return 0


def _eval_model(args, cfg):
    state = load_checkpoint(_checkpoint(args, cfg), restore_rng=False)
    return state, state.model.eval()


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    state, model = _eval_model(args, cfg)
    manifest = _manifest(args)
    sources = _noise_sources(args, cfg)
    if cfg.eval.include_clean and not args.no_clean:
        sources.append(NoiseSource("clean"))
    if not sources:
        raise UsageError("nothing to evaluate: pass --noise-dir or enable the clean condition")
    spec = EvalSpec(sources, cfg.eval.snrs_db, cfg.eval.seed, cfg.eval.split, cfg.eval.batch_size)
    grid = evaluate_grid(model, manifest, spec, cfg.mel, classes=state.classes)
    out = Path(args.out) if args.out else _run_dir(args, cfg) / "grid.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.to_csv(out)
    table = grid.to_text(ROW_LABELS[cfg.train.regularizer])
    out.with_suffix(".txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_export(args) -> int:
    cfg = _config(args)
    state, model = _eval_model(args, cfg)
    manifest = _manifest(args)
    sources = _noise_sources(args, cfg)
    source = sources[0] if sources else NoiseSource("clean")
    snr = float("inf") if source.is_clean else args.snr
    base = Path(args.out) if args.out else _run_dir(args, cfg) / f"embeddings_{source.name}"
    base.parent.mkdir(parents=True, exist_ok=True)
    dump = export_embeddings(model, manifest, source, snr, base, cfg.mel, cfg.eval.seed,
                             cfg.eval.split, checkpoint_id=str(_checkpoint(args, cfg)))
    save_projection(base.with_suffix(".pca.tsv"), project_2d(dump), dump.labels)
    print(f"{len(dump.labels)} embeddings -> {base.with_suffix('.npy')}")
    return 0


def cmd_mix_demo(args) -> int:
    speech = decode_wav(args.speech)
    bank = dataio.NoiseBank.from_arrays({str(args.noise): decode_wav(args.noise).samples})
    rng = np.random.default_rng(args.seed or 0)
    noise = dataio.sample_noise_segment(bank, speech.duration, rng)
    noise = AudioClip(noise.samples[: len(speech)])
    mixed, gain = mix_at_snr(speech, noise, args.snr)
    out = Path(args.out or Path(args.out_dir) / "mix_demo.wav")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_wav(out, mixed)
    print(f"snr={args.snr:g} dB gain={float(gain)!r} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisykws", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out-dir", default="runs")
        if data:
            p.add_argument("--data-dir", help="corpus root (one directory per keyword)")
            p.add_argument("--manifest", help="JSON-lines manifest instead of --data-dir")
            p.add_argument("--subset", choices=["10", "35", "custom"], default="custom")
            p.add_argument("--classes", help="comma-separated class list for --subset custom")
            p.add_argument("--noise-dir", action="append", help="noise directory (repeatable)")
            p.add_argument("--category-map", help="noise categories as 'pattern=category,...'")

    p = sub.add_parser("make-manifest", help="scan a corpus into a JSON-lines manifest")
    common(p)
    p.add_argument("--out")
    p.add_argument("--partition", choices=dataio.PARTITIONS, default="train")
    p.set_defaults(func=cmd_make_manifest)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--encoder", choices=["conv_residual", "attention"])
    p.add_argument("--regularizer", choices=["none", "intra", "i2cr"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("evaluate", cmd_evaluate, "noise x SNR accuracy grid"),
                                 ("export-embeddings", cmd_export, "dump latent vectors")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--checkpoint")
        p.add_argument("--encoder", choices=["conv_residual", "attention"])
        p.add_argument("--regularizer", choices=["none", "intra", "i2cr"])
        p.add_argument("--out")
        if name == "evaluate":
            p.add_argument("--snrs", type=_floats, help="comma-separated SNRs in dB, e.g. -10,-5,0,20")
            p.add_argument("--no-clean", action="store_true")
        else:
            p.add_argument("--snr", type=float, default=0.0)
        p.set_defaults(func=func)

    p = sub.add_parser("mix-demo", help="write one SNR-mixed WAV for listening")
    common(p, data=False)
    p.add_argument("--speech", required=True)
    p.add_argument("--noise", required=True)
    p.add_argument("--snr", type=float, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_mix_demo)
    return parser


def _join_negative_values(argv: list[str]) -> list[str]:
    # argparse reads "--snrs -10,-5" as two flags
    out, i = [], 0
    while i < len(argv):
        if argv[i] in ("--snrs", "--snr") and i + 1 < len(argv):
            out.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(_join_negative_values(list(sys.argv[1:] if argv is None else argv)))
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (dataio.DataError, OSError, ValueError, RuntimeError) as exc:
        print(f"{parser.prog} {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
