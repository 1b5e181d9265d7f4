"""Command-line entry point: corpus generation, training, evaluation, diagnostics.

Exit codes are a stable contract for scripting: 0 success, 2 usage/config/
input problems, 3 numerical failure during training, 4 corrupt checkpoint.
Stdout carries machine-parseable payloads (JSON or CSV); logs go to stderr.

Configuration files are flat ``key = value`` lines with ``#`` comments;
command-line flags override file values, unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import data as D
from . import training as T

EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_CORRUPT = 4


class ConfigError(ValueError):
    pass


def _parse_bool(s: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


CONFIG_KEYS: dict[str, type] = {
    "features_dir": str,
    "captions": str,
    "splits_dir": str,
    "out_dir": str,
    "stage": str,
    "reconstructor": str,
    "lambda": float,
    "optimizer": str,
    "batch_size": int,
    "patience": int,
    "max_epochs": int,
    "seed": int,
    "hidden_dim": int,
    "embed_dim": int,
    "attn_dim": int,
    "min_count": int,
    "adadelta_rho": float,
    "adadelta_eps": float,
    "adam_lr": float,
    "adam_beta1": float,
    "adam_beta2": float,
    "adam_eps": float,
    "mask_padded_frames": bool,
    "mask_reserved_tokens": bool,
    "local_valid_rows_only": bool,
    "cider_variant": str,
}


def parse_config_file(path) -> dict:
    values: dict = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{line_no}: expected key = value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        typ = CONFIG_KEYS[key]
        try:
            values[key] = _parse_bool(value) if typ is bool else typ(value)
        except (ValueError, ConfigError) as e:
            raise ConfigError(f"{path}:{line_no}: bad value for {key}: {e}")
    return values


def _merged_settings(args) -> dict:
    settings = parse_config_file(args.config) if getattr(args, "config", None) else {}
    flag_map = {
        "features_dir": "features_dir",
        "captions": "captions",
        "splits_dir": "splits_dir",
        "out_dir": "out_dir",
        "stage": "stage",
        "reconstructor": "reconstructor",
        "lam": "lambda",
        "optimizer": "optimizer",
        "batch_size": "batch_size",
        "patience": "patience",
        "max_epochs": "max_epochs",
        "seed": "seed",
        "hidden_dim": "hidden_dim",
        "embed_dim": "embed_dim",
        "attn_dim": "attn_dim",
        "min_count": "min_count",
        "adam_lr": "adam_lr",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            settings[key] = value
    return settings


def _require_path(p, kind: str, directory: bool = False) -> Path:
    p = Path(p)
    ok = p.is_dir() if directory else p.is_file()
    if not ok:
        raise ConfigError(f"{kind} not found: {p}")
    return p


def _train_config(settings: dict) -> T.TrainConfig:
    cfg_fields = {f.name for f in dataclasses.fields(T.TrainConfig)}
    kwargs = {}
    for key, value in settings.items():
        name = "lam" if key == "lambda" else key
        if name in cfg_fields:
            kwargs[name] = value
    try:
        return T.TrainConfig(**kwargs)
    except T.TrainError as e:
        raise ConfigError(str(e))


def _load_splits(splits_dir) -> D.Splits:
    splits_dir = _require_path(splits_dir, "splits dir", directory=True)
    parts = {}
    for name in ("train", "val", "test"):
        parts[name] = D.read_split_file(_require_path(splits_dir / f"{name}.txt", "split file"))
    return D.Splits(**parts)


def _load_training_corpus(settings: dict) -> tuple[D.Corpus, D.Splits]:
    for key in ("features_dir", "captions", "splits_dir"):
        if key not in settings:
            raise ConfigError(f"missing required setting {key!r}")
    features_dir = _require_path(settings["features_dir"], "features dir", directory=True)
    captions = _require_path(settings["captions"], "captions file")
    splits = _load_splits(settings["splits_dir"])
    corpus = D.load_corpus(
        features_dir, captions, splits.train, min_count=settings.get("min_count", 1)
    )
    return corpus, splits


# --- commands ----------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    if args.num_videos < 1:
        raise ConfigError(f"--num-videos must be >= 1, got {args.num_videos}")
    if args.dim < 8:
        raise ConfigError(f"--dim must be >= 8, got {args.dim}")
    features, captions, vocab = D.gen_synthetic(
        args.seed, args.num_videos, args.dim, noise_sigma=args.noise_sigma
    )
    try:
        D.write_corpus(args.out, features, captions, vocab)
    except OSError as e:
        raise ConfigError(f"cannot write to {args.out}: {e}")
    print(f"wrote {args.num_videos} videos to {args.out}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    settings = _merged_settings(args)
    corpus, splits = _load_training_corpus(settings)
    out_dir = Path(settings.get("out_dir", "."))
    out_dir.mkdir(parents=True, exist_ok=True)
    config = _train_config(settings)
    trainer = T.Trainer(config, corpus, splits)
    log_path = out_dir / "train_log.csv"
    if not log_path.exists():
        log_path.write_text(T.EPOCH_CSV_HEADER + "\n")

    def progress(entry: T.EpochEntry) -> None:
        print(
            f"[{entry.stage}] epoch {entry.epoch}: total {entry.total_loss:.6f} "
            f"xe {entry.ed_loss:.6f} recon {entry.recon_loss:.6f} "
            f"val_cider {entry.val_cider:.6f}",
            file=sys.stderr,
        )
        with open(log_path, "a") as f:
            f.write(T.epoch_csv_line(entry) + "\n")

    result = trainer.train(progress=progress)
    ckpt_path = out_dir / "checkpoint.rcnc"
    T.save_checkpoint(result.checkpoint, ckpt_path)
    print(
        json.dumps(
            {
                "checkpoint": str(ckpt_path),
                "epochs": result.checkpoint.epoch,
                "best_val_cider": result.best_val_cider,
            }
        )
    )
    return 0


def _load_checkpoint_arg(path) -> T.Checkpoint:
    _require_path(path, "checkpoint")
    return T.load_checkpoint(path)


def _eval_corpus(args, ckpt: T.Checkpoint) -> D.Corpus:
    settings = _merged_settings(args)
    for key in ("features_dir", "captions"):
        if key not in settings:
            raise ConfigError(f"missing required setting {key!r}")
    features_dir = _require_path(settings["features_dir"], "features dir", directory=True)
    captions = _require_path(settings["captions"], "captions file")
    return D.load_corpus_with_vocab(features_dir, captions, ckpt.vocab)


def _splits_from_settings(settings: dict) -> D.Splits:
    if "splits_dir" not in settings:
        raise ConfigError("missing required setting 'splits_dir'")
    return _load_splits(settings["splits_dir"])


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint_arg(args.checkpoint)
    corpus = _eval_corpus(args, ckpt)
    splits = _splits_from_settings(_merged_settings(args))
    ids = getattr(splits, args.split)
    report = T.evaluate(ckpt, corpus, ids, beam=args.beam)
    print(report.to_json())
    return 0


def cmd_caption(args) -> int:
    ckpt = _load_checkpoint_arg(args.checkpoint)
    vf = D.read_features(_require_path(args.features, "feature file"))
    decoder, _ = T.models_from_checkpoint(ckpt)
    tokens = decoder.beam_search(D.sample_frames(vf), beam=args.beam)
    words = [
        ckpt.vocab.id_to_token[t] for t in tokens if t >= len(D.RESERVED)
    ]
    print(" ".join(words))
    return 0


def cmd_diagnose(args) -> int:
    ckpt = _load_checkpoint_arg(args.checkpoint)
    corpus = _eval_corpus(args, ckpt)
    splits = _splits_from_settings(_merged_settings(args))
    ids = getattr(splits, args.split)
    if not ids:
        raise ConfigError(f"split {args.split!r} is empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "hidden_states.csv"
    try:
        scalar = T.hidden_diagnostic(ckpt, corpus, ids, csv_path)
    except T.TrainError as e:
        raise ConfigError(str(e))
    print(repr(scalar))
    print(f"wrote {csv_path}", file=sys.stderr)
    return 0


def cmd_lambda_sweep(args) -> int:
    """Train once with cross-entropy, then fine-tune per lambda and score."""
    settings = _merged_settings(args)
    corpus, splits = _load_training_corpus(settings)
    try:
        lambdas = [float(s) for s in args.lambdas.split(",") if s.strip() != ""]
    except ValueError as e:
        raise ConfigError(f"bad --lambdas list: {e}")
    if not lambdas:
        raise ConfigError("--lambdas list is empty")
    base = _train_config({**settings, "stage": "xe"})
    warm = T.Trainer(base, corpus, splits)
    warm.run_stage("xe")
    decoder_params = {
        n: v for n, v in warm.snapshot_params().items() if n.startswith("decoder.")
    }
    reconstructor = settings.get("reconstructor", "global")
    if reconstructor == "none":
        raise ConfigError("lambda sweep needs a reconstructor (global, local, or joint)")
    lines = ["lambda,bleu4,rougeL,cider"]
    for lam in lambdas:
        cfg = _train_config(
            {**settings, "stage": "joint", "reconstructor": reconstructor, "lambda": lam}
        )
        trainer = T.Trainer(cfg, corpus, splits)
        T.restore_params(trainer.decoder.parameters(), decoder_params)
        trainer.run_stage("joint")
        ckpt = T.Checkpoint(
            vocab=corpus.vocab,
            config=trainer.config,
            epoch=trainer.epoch_counter,
            best_val_cider=0.0,
            params=trainer.snapshot_params(),
        )
        report = T.evaluate(ckpt, corpus, splits.val, beam=5)
        lines.append(f"{lam!r},{report.bleu4!r},{report.rougeL!r},{report.cider!r}")
        print(f"lambda {lam}: val cider {report.cider:.6f}", file=sys.stderr)
    csv_text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(csv_text)
    print(csv_text, end="")
    return 0


# --- argument parsing ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recap",
        description="Video captioning with feature-reconstruction regularization",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synthetic", help="write a deterministic synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--num-videos", type=int, required=True)
    g.add_argument("--dim", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--noise-sigma", type=float, default=0.05)
    g.set_defaults(func=cmd_gen_synthetic)

    def add_corpus_flags(p, with_splits=True):
        p.add_argument("--config")
        p.add_argument("--features-dir", dest="features_dir")
        p.add_argument("--captions")
        if with_splits:
            p.add_argument("--splits-dir", dest="splits_dir")

    t = sub.add_parser("train", help="run the staged training pipeline")
    add_corpus_flags(t)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--stage", choices=["xe", "joint", "rl", "rl-joint"])
    t.add_argument("--reconstructor", choices=["none", "global", "local", "joint"])
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--optimizer", choices=["auto", "adadelta", "adam"])
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--max-epochs", dest="max_epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    t.add_argument("--embed-dim", dest="embed_dim", type=int)
    t.add_argument("--attn-dim", dest="attn_dim", type=int)
    t.add_argument("--min-count", dest="min_count", type=int)
    t.add_argument("--adam-lr", dest="adam_lr", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=["train", "val", "test"], default="test")
    e.add_argument("--beam", type=int, default=5)
    add_corpus_flags(e)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("caption", help="caption one feature file")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--features", required=True)
    c.add_argument("--beam", type=int, default=5)
    c.set_defaults(func=cmd_caption)

    d = sub.add_parser("diagnose", help="hidden-state discrepancy diagnostic")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--split", choices=["train", "val", "test"], default="val")
    d.add_argument("--out", required=True)
    add_corpus_flags(d)
    d.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("lambda-sweep", help="train across a lambda list, emit CSV")
    add_corpus_flags(s)
    s.add_argument("--lambdas", default="0,0.1,0.2,0.5,1.0")
    s.add_argument("--reconstructor", choices=["global", "local", "joint"])
    s.add_argument("--out")
    s.add_argument("--stage")  # accepted for config symmetry; sweep fixes its own stages
    s.add_argument("--lambda", dest="lam", type=float, help=argparse.SUPPRESS)
    s.add_argument("--seed", type=int)
    s.add_argument("--max-epochs", dest="max_epochs", type=int)
    s.add_argument("--patience", type=int)
    s.add_argument("--batch-size", dest="batch_size", type=int)
    s.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    s.add_argument("--embed-dim", dest="embed_dim", type=int)
    s.add_argument("--min-count", dest="min_count", type=int)
    s.set_defaults(func=cmd_lambda_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except T.NumericsError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except T.CheckpointError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CORRUPT
    except (ConfigError, D.CorpusError, T.TrainError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
