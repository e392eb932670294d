"""Command-line front end.

Subcommands: train, eval, sweep-gamma, recommend, timing, synth. A flat
``key = value`` config file can seed any run; explicit flags win over the
file, which wins over dataset presets, which win over defaults. Exit codes:
0 ok, 2 config error, 3 data error, 4 numeric divergence, 5 checkpoint
error. Set TRENDREC_LOG to debug/info/warning to control verbosity.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SuccessorRule,
    generate_mixture_dataset,
    generate_successor_dataset,
    load_dataset,
    Vocabulary,
    write_native,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    NonFiniteError,
    TrainingDivergedError,
    VocabMismatchError,
)
from .losses import LossConfig
from .metrics import evaluate
from .model import ModelConfig, forward_session, init_params, param_count
from .optim import Adam
from .train import TrainConfig, fit, train_epoch, write_metric_log

log = logging.getLogger("trendrec")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4
EXIT_CHECKPOINT = 5

# per-dataset presets mirroring the published protocol
DATASET_PRESETS = {
    "tmall": {"gamma": 2.0},
    "retailrocket": {"gamma": 6.0},
}

_SETTING_TYPES = {
    "train_file": str,
    "test_file": str,
    "out_dir": str,
    "format": str,
    "dataset": str,
    "embed_dim": int,
    "ffn_dim": int,
    "max_len": int,
    "dropout_rate": float,
    "score_temperature": float,
    "gamma": float,
    "factor_in_grad": bool,
    "learning_rate": float,
    "epochs": int,
    "batch_size": int,
    "seed": int,
}

_DEFAULTS = {
    "format": "auto",
    "embed_dim": 100,
    "ffn_dim": None,
    "max_len": 50,
    "dropout_rate": 0.2,
    "score_temperature": 1.0,
    "gamma": 2.0,
    "factor_in_grad": False,
    "learning_rate": 0.001,
    "epochs": 50,
    "batch_size": 100,
    "seed": 0,
    "out_dir": "runs/latest",
}


def _coerce(key: str, raw: str):
    kind = _SETTING_TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r} expects a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc


def read_config_file(path) -> dict:
    """Parse the flat ``key = value`` format; '#' starts a comment."""
    settings = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, raw = stripped.split("=", 1)
            settings[key.strip()] = _coerce(key.strip(), raw)
    return settings


def resolve_settings(args, flag_names) -> dict:
    """defaults < dataset preset < config file < explicit flags."""
    settings = dict(_DEFAULTS)
    file_settings = {}
    if getattr(args, "config", None):
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        file_settings = read_config_file(args.config)
    dataset = getattr(args, "dataset", None) or file_settings.get("dataset")
    if dataset:
        preset = DATASET_PRESETS.get(dataset.lower())
        if preset is None:
            raise ConfigError(
                f"unknown dataset preset {dataset!r}; known: {sorted(DATASET_PRESETS)}"
            )
        settings.update(preset)
    settings.update(file_settings)
    for flag in flag_names:
        value = getattr(args, flag, None)
        if value is not None:
            settings[flag] = value
    return settings


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing required {what}")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _build_configs(settings, num_items):
    model_cfg = ModelConfig(
        num_items=num_items,
        embed_dim=settings["embed_dim"],
        max_len=settings["max_len"],
        dropout_rate=settings["dropout_rate"],
        score_temperature=settings["score_temperature"],
        ffn_dim=settings["ffn_dim"],
    )
    train_cfg = TrainConfig(
        learning_rate=settings["learning_rate"],
        epochs=settings["epochs"],
        batch_size=settings["batch_size"],
        seed=settings["seed"],
    )
    loss_cfg = LossConfig(gamma=settings["gamma"], factor_in_grad=settings["factor_in_grad"])
    return model_cfg, train_cfg, loss_cfg


def _validate_train_settings(settings) -> tuple[Path, Path]:
    """Full validation before any data is touched or artifact written."""
    train_file = _require_file(settings.get("train_file"), "train_file")
    test_file = _require_file(settings.get("test_file"), "test_file")
    _build_configs(settings, num_items=1)
    return train_file, test_file


def _load_splits(settings, train_file, test_file):
    train_ds, vocab = load_dataset(
        train_file, format=settings["format"], max_len=settings["max_len"], split="train"
    )
    test_ds, _ = load_dataset(
        test_file, format=settings["format"], vocab=vocab,
        max_len=settings["max_len"], split="test",
    )
    return train_ds, test_ds, vocab


def _write_manifest(out_dir: Path, command, settings, inputs):
    manifest = {
        "command": command,
        "package_version": __version__,
        "config": {k: settings[k] for k in sorted(settings) if k in _SETTING_TYPES or k in settings},
        "seed": settings["seed"],
        "inputs": {name: {"path": str(p), "sha256": _sha256_file(p)} for name, p in inputs.items()},
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _train_once(settings, train_ds, test_ds, echo=True):
    model_cfg, train_cfg, loss_cfg = _build_configs(settings, train_ds.num_items)
    on_epoch = (lambda row: print(row.display(), flush=True)) if echo else None
    return fit(train_ds, test_ds, model_cfg, train_cfg, loss_cfg, on_epoch=on_epoch), model_cfg, train_cfg, loss_cfg


def cmd_train(args) -> int:
    flags = ("train_file", "test_file", "out_dir", "format", "embed_dim", "ffn_dim",
             "max_len", "dropout_rate", "score_temperature", "gamma", "factor_in_grad",
             "learning_rate", "epochs", "batch_size", "seed")
    settings = resolve_settings(args, flags)
    train_file, test_file = _validate_train_settings(settings)

    train_ds, test_ds, vocab = _load_splits(settings, train_file, test_file)
    log.info("loaded %d train / %d test samples over %d items",
             len(train_ds), len(test_ds), train_ds.num_items)

    result, model_cfg, train_cfg, loss_cfg = _train_once(settings, train_ds, test_ds)

    out_dir = Path(settings["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    vocab.save(out_dir / "vocab.txt")
    state = {
        "best_epoch": result.best_epoch,
        "best_mrr_at_20": result.best_mrr20,
        "seed": settings["seed"],
        "vocab_sha256": vocab.content_hash(),
    }
    save_checkpoint(
        out_dir / "best.ckpt", result.best_params, model_cfg,
        train_config=vars(train_cfg).copy(), loss_config=loss_cfg, state=state,
    )
    write_metric_log(result.rows, out_dir / "metrics.csv")
    _write_manifest(out_dir, "train", settings, {"train_file": train_file, "test_file": test_file})
    print(f"best epoch {result.best_epoch} (MRR@20 {result.best_mrr20:.4f}); "
          f"artifacts in {out_dir}")
    return EXIT_OK


def _load_bundle_and_vocab(args):
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    vocab_path = _require_file(args.vocab, "vocab file")
    try:
        vocab = Vocabulary.load(vocab_path)
    except OSError as exc:
        raise DataError(f"cannot read vocab: {exc}") from exc
    bundle = load_checkpoint(ckpt_path)
    stored_hash = bundle.state.get("vocab_sha256")
    if stored_hash is not None and stored_hash != vocab.content_hash():
        raise VocabMismatchError(
            "vocabulary file does not match the one this checkpoint was trained with"
        )
    if len(vocab) != bundle.model_config.num_items:
        raise VocabMismatchError(
            f"vocabulary has {len(vocab)} items, checkpoint expects {bundle.model_config.num_items}"
        )
    return bundle, vocab


def cmd_eval(args) -> int:
    bundle, vocab = _load_bundle_and_vocab(args)
    test_file = _require_file(args.test_file, "test_file")
    test_ds, _ = load_dataset(
        test_file, format=args.format or "auto", vocab=vocab,
        max_len=bundle.model_config.max_len, split="test",
    )
    report = evaluate(bundle.params, bundle.model_config, test_ds, ks=(10, 20))
    print(f"{report.p_at[10] * 100:.2f}, {report.mrr_at[10] * 100:.2f}, "
          f"{report.p_at[20] * 100:.2f}, {report.mrr_at[20] * 100:.2f}")
    return EXIT_OK


def cmd_sweep_gamma(args) -> int:
    flags = ("train_file", "test_file", "format", "embed_dim", "ffn_dim", "max_len",
             "dropout_rate", "score_temperature", "factor_in_grad",
             "learning_rate", "epochs", "batch_size", "seed")
    settings = resolve_settings(args, flags)
    try:
        gammas = [float(tok) for tok in args.gammas.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --gammas list: {exc}") from exc
    if not gammas:
        raise ConfigError("--gammas needs at least one value")
    if not any(g == 0.0 for g in gammas):
        gammas.append(0.0)  # the plain cross-entropy reference row
    for g in gammas:
        if g < 0:
            raise ConfigError(f"gamma must be nonnegative, got {g}")
    train_file, test_file = _validate_train_settings(settings)
    train_ds, test_ds, _ = _load_splits(settings, train_file, test_file)

    rows = ["gamma,p_at_10,mrr_at_10,p_at_20,mrr_at_20,status"]
    for gamma in gammas:
        run_settings = dict(settings, gamma=gamma)
        try:
            result, model_cfg, _, _ = _train_once(run_settings, train_ds, test_ds, echo=False)
            report = evaluate(result.best_params, model_cfg, test_ds, ks=(10, 20))
            rows.append(
                f"{gamma:g},{report.p_at[10]:.6f},{report.mrr_at[10]:.6f},"
                f"{report.p_at[20]:.6f},{report.mrr_at[20]:.6f},ok"
            )
        except (ConfigError, DataError, TrainingDivergedError, NonFiniteError) as exc:
            log.warning("gamma %g failed: %s", gamma, exc)
            rows.append(f"{gamma:g},,,,,failed")
    output = "\n".join(rows) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(output, encoding="utf-8")
    print(output, end="")
    return EXIT_OK


def cmd_recommend(args) -> int:
    bundle, vocab = _load_bundle_and_vocab(args)
    if args.k < 1:
        raise ConfigError(f"k must be >= 1, got {args.k}")
    tokens = args.items.split()
    if not tokens:
        raise DataError("no session items given")
    items = [vocab.lookup(tok) for tok in tokens]
    trace = forward_session(items, bundle.params, bundle.model_config)
    scores = trace.scores
    order = np.lexsort((np.arange(scores.size), -scores))
    for internal in order[: args.k]:
        print(f"{vocab.original(int(internal))}, {scores[internal]:.17g}")
    return EXIT_OK


def cmd_timing(args) -> int:
    flags = ("train_file", "format", "embed_dim", "ffn_dim", "max_len",
             "dropout_rate", "score_temperature", "gamma", "factor_in_grad",
             "learning_rate", "epochs", "batch_size", "seed")
    settings = resolve_settings(args, flags)
    if args.train_file is not None:
        train_file = _require_file(settings.get("train_file"), "train_file")
        train_ds, _ = load_dataset(
            train_file, format=settings["format"], max_len=settings["max_len"], split="train"
        )
    else:
        if args.num_items is None:
            raise ConfigError("timing needs --train-file or --num-items for synthetic data")
        if args.num_items < 2:
            raise ConfigError("--num-items must be >= 2")
        rng = np.random.default_rng(settings["seed"])
        rule = SuccessorRule.cyclic(args.num_items)
        train_ds = generate_successor_dataset(rule, args.sessions, rng, split="train")
    model_cfg, train_cfg, loss_cfg = _build_configs(settings, train_ds.num_items)
    print(f"trainable_parameters: {param_count(model_cfg)}")

    rng = np.random.default_rng(train_cfg.seed)
    params = init_params(model_cfg, rng)
    optimizer = Adam(params.tensors(), learning_rate=train_cfg.learning_rate,
                     beta1=train_cfg.adam_beta1, beta2=train_cfg.adam_beta2, eps=train_cfg.adam_eps)
    epochs = max(args.timing_epochs, 1)
    seconds = []
    for _ in range(epochs):
        tick = time.perf_counter()
        stats = train_epoch(train_ds, params, optimizer, model_cfg, loss_cfg,
                            train_cfg.batch_size, rng)
        seconds.append(time.perf_counter() - tick)
        print(f"epoch_seconds: {seconds[-1]:.3f} samples_per_sec: {stats.samples_per_sec:.1f}")
    print(f"mean_seconds_per_epoch: {sum(seconds) / len(seconds):.3f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.sessions < 1 or args.test_sessions < 0:
        raise ConfigError("session counts must be positive")
    rng = np.random.default_rng(args.seed)
    if args.kind == "successor":
        if args.num_items < 2:
            raise ConfigError("--num-items must be >= 2")
        rule = SuccessorRule.cyclic(args.num_items, noise=args.noise)
        train_ds = generate_successor_dataset(
            rule, args.sessions, rng, min_len=args.min_len, max_len=args.max_session_len, split="train"
        )
        test_ds = generate_successor_dataset(
            rule, args.test_sessions or args.sessions, rng,
            min_len=args.min_len, max_len=args.max_session_len, split="test",
        )
    elif args.kind == "mixture":
        train_ds = generate_mixture_dataset(
            args.sessions, rng, hard_fraction=args.hard_fraction,
            min_len=args.min_len, max_len=args.max_session_len, split="train",
        )
        test_ds = generate_mixture_dataset(
            args.test_sessions or args.sessions, rng, hard_fraction=args.test_hard_fraction,
            min_len=args.min_len, max_len=args.max_session_len, split="test",
        )
    else:
        raise ConfigError(f"unknown synthetic kind {args.kind!r}")
    Path(args.train_out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.test_out).parent.mkdir(parents=True, exist_ok=True)
    write_native(args.train_out, train_ds)
    write_native(args.test_out, test_ds)
    print(f"wrote {len(train_ds)} train and {len(test_ds)} test samples "
          f"over {train_ds.num_items} items")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trendrec", description=__doc__)
    parser.add_argument("--version", action="version", version=f"trendrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_model_flags(p):
        p.add_argument("--embed-dim", dest="embed_dim", type=int)
        p.add_argument("--ffn-dim", dest="ffn_dim", type=int)
        p.add_argument("--max-len", dest="max_len", type=int)
        p.add_argument("--dropout", dest="dropout_rate", type=float)
        p.add_argument("--temperature", dest="score_temperature", type=float)
        p.add_argument("--gamma", dest="gamma", type=float)
        p.add_argument("--factor-in-grad", dest="factor_in_grad", action="store_const", const=True)
        p.add_argument("--lr", dest="learning_rate", type=float)
        p.add_argument("--epochs", dest="epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--seed", dest="seed", type=int)

    p_train = sub.add_parser("train", help="train a model and write artifacts")
    p_train.add_argument("--config")
    p_train.add_argument("--dataset", help="preset name (tmall or retailrocket)")
    p_train.add_argument("--train-file", dest="train_file")
    p_train.add_argument("--test-file", dest="test_file")
    p_train.add_argument("--out-dir", dest="out_dir")
    p_train.add_argument("--format", dest="format", choices=("auto", "native", "pickle"))
    add_common_model_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--vocab", required=True)
    p_eval.add_argument("--test-file", dest="test_file", required=True)
    p_eval.add_argument("--format", dest="format", choices=("auto", "native", "pickle"))
    p_eval.set_defaults(func=cmd_eval)

    p_sweep = sub.add_parser("sweep-gamma", help="train once per gamma and tabulate metrics")
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--dataset")
    p_sweep.add_argument("--gammas", required=True, help="comma-separated gamma values")
    p_sweep.add_argument("--train-file", dest="train_file")
    p_sweep.add_argument("--test-file", dest="test_file")
    p_sweep.add_argument("--format", dest="format", choices=("auto", "native", "pickle"))
    p_sweep.add_argument("--out", help="also write the CSV table to this path")
    add_common_model_flags(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep_gamma)

    p_rec = sub.add_parser("recommend", help="top-K next items for a session")
    p_rec.add_argument("--checkpoint", required=True)
    p_rec.add_argument("--vocab", required=True)
    p_rec.add_argument("--items", required=True, help="whitespace-separated item tokens")
    p_rec.add_argument("--k", type=int, default=10)
    p_rec.set_defaults(func=cmd_recommend)

    p_time = sub.add_parser("timing", help="report parameter count and seconds per epoch")
    p_time.add_argument("--config")
    p_time.add_argument("--train-file", dest="train_file")
    p_time.add_argument("--format", dest="format", choices=("auto", "native", "pickle"))
    p_time.add_argument("--num-items", dest="num_items", type=int,
                        help="catalog size for on-the-fly synthetic data")
    p_time.add_argument("--sessions", type=int, default=200,
                        help="synthetic session count when no train file is given")
    p_time.add_argument("--timing-epochs", dest="timing_epochs", type=int, default=1)
    add_common_model_flags(p_time)
    p_time.set_defaults(func=cmd_timing)

    p_synth = sub.add_parser("synth", help="generate synthetic train/test files")
    p_synth.add_argument("--kind", choices=("successor", "mixture"), default="successor")
    p_synth.add_argument("--num-items", dest="num_items", type=int, default=20)
    p_synth.add_argument("--sessions", type=int, default=500)
    p_synth.add_argument("--test-sessions", dest="test_sessions", type=int, default=0)
    p_synth.add_argument("--noise", type=float, default=0.0)
    p_synth.add_argument("--hard-fraction", dest="hard_fraction", type=float, default=0.02)
    p_synth.add_argument("--test-hard-fraction", dest="test_hard_fraction", type=float, default=0.3)
    p_synth.add_argument("--min-len", dest="min_len", type=int, default=2)
    p_synth.add_argument("--max-session-len", dest="max_session_len", type=int, default=8)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--train-out", dest="train_out", required=True)
    p_synth.add_argument("--test-out", dest="test_out", required=True)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    level = os.environ.get("TRENDREC_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergedError, NonFiniteError) as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
