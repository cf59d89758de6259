"""Command-line surface: preprocess, train, eval, predict, gradcheck.

Defaults come from the dataclass configs, a sectioned key-value config
file can override them, and command-line flags win over both. Exit codes:
0 success, 1 runtime failure, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import embeddings as emb
from . import metrics as mx
from . import model as m
from . import preprocess as pp
from . import train as tr
from .corpus import CorpusError, LABEL_ORDER, Split, corpus_stats, load_dataset, split_train_validation

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INPUT = 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# config plumbing


def _parse_dims(text: str) -> tuple:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise CliError(f"cannot parse layer sizes from {text!r} (want e.g. 128,128)")


def _opt_int(text: str):
    return int(text) if text.strip() else None


def _opt_float(text: str):
    return float(text) if text.strip() else None


_MODEL_KEYS = {
    "embed_dim": int,
    "hidden_size": int,
    "window_size": int,
    "fc_dims": _parse_dims,
    "num_labels": int,
    "variant": str,
}
_TRAIN_KEYS = {
    "lr0": float,
    "decay": float,
    "epochs": _opt_int,
    "batch_size": int,
    "dropout": float,
    "class_weights": str,  # mode or explicit list, resolved after data loads
    "seed": int,
    "val_fraction": float,
    "grad_clip": _opt_float,
}


def _read_config_file(path: Path) -> dict:
    """Sectioned key=value file -> {'model': {...}, 'train': {...}, 'paths': {...}}."""
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except FileNotFoundError:
        raise CliError(f"no such config file: {path}")
    except configparser.Error as exc:
        raise CliError(f"bad config file {path}: {exc}")
    out = {"model": {}, "train": {}, "paths": {}}
    for section in parser.sections():
        if section not in out:
            raise CliError(f"{path}: unknown config section [{section}]")
        keys = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS}.get(section)
        for key, raw in parser.items(section):
            if section == "paths":
                out["paths"][key] = raw
                continue
            if key not in keys:
                raise CliError(f"{path}: unknown key {key!r} in [{section}]")
            try:
                out[section][key] = keys[key](raw)
            except ValueError:
                raise CliError(f"{path}: bad value {raw!r} for {key}")
    return out


_FLAG_TO_MODEL = {
    "variant": "variant",
    "embed_dim": "embed_dim",
    "hidden_size": "hidden_size",
    "window_size": "window_size",
    "fc_dims": "fc_dims",
}
_FLAG_TO_TRAIN = {
    "seed": "seed",
    "epochs": "epochs",
    "lr": "lr0",
    "decay": "decay",
    "batch_size": "batch_size",
    "dropout": "dropout",
    "val_fraction": "val_fraction",
    "grad_clip": "grad_clip",
    "class_weights": "class_weights",
}


def _build_configs(args):
    """defaults < config file < flags. Returns (ModelConfig, TrainConfig, weight_mode)."""
    file_cfg = {"model": {}, "train": {}, "paths": {}}
    if getattr(args, "config", None):
        file_cfg = _read_config_file(Path(args.config))
    model_kw = dict(file_cfg["model"])
    train_kw = dict(file_cfg["train"])
    for flag, field_name in _FLAG_TO_MODEL.items():
        value = getattr(args, flag, None)
        if value is not None:
            model_kw[field_name] = _parse_dims(value) if flag == "fc_dims" else value
    for flag, field_name in _FLAG_TO_TRAIN.items():
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[field_name] = value

    weight_mode = str(train_kw.pop("class_weights", "uniform")).strip()
    try:
        mcfg = m.ModelConfig(**model_kw)
        tcfg = tr.TrainConfig(**train_kw)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad configuration: {exc}")
    if weight_mode not in ("uniform", "inverse-frequency"):
        try:
            weights = tuple(float(x) for x in weight_mode.split(","))
            tcfg = dataclasses.replace(tcfg, class_weights=weights)
        except ValueError as exc:
            raise CliError(f"bad class_weights {weight_mode!r}: {exc}")
        weight_mode = "explicit"
    return mcfg, tcfg, weight_mode, file_cfg["paths"]


def _data_dir(paths_cfg: dict) -> "Path | None":
    raw = os.environ.get("DIALOGLOW_DATA_DIR") or paths_cfg.get("data_dir")
    return Path(raw) if raw else None


def _resolve_input(raw: str, data_dir: "Path | None") -> Path:
    p = Path(raw)
    if p.exists():
        return p
    if data_dir is not None and not p.is_absolute():
        candidate = data_dir / p
        if candidate.exists():
            return candidate
    raise CliError(f"no such file: {raw}")


def _config_echo(mcfg, tcfg) -> dict:
    return {
        "model": dataclasses.asdict(mcfg),
        "train": dataclasses.asdict(tcfg) if tcfg is not None else None,
    }


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _split(name: str) -> Split:
    try:
        return Split(name)
    except ValueError:
        raise CliError(f"unknown split {name!r}")


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    data_dir = _data_dir({})
    path = _resolve_input(args.data, data_dir)
    ds = load_dataset(path, _split(args.split))
    vocab = tr.vocab_from_dataset(ds, min_count=args.min_count)
    stats = corpus_stats(ds, pp.prepare)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")

    run_cfg = {"min_count": args.min_count, "split": args.split, "version": __version__}
    encoded = {
        "config": run_cfg,
        "vocab_sha256": pp.vocab_content_sha256(vocab),
        "dialogues": [
            {
                "id": d.id,
                "utterances": [
                    {
                        "speaker": u.speaker_id,
                        "gold": str(u.gold),
                        "token_ids": vocab.encode(pp.prepare(u.raw_text)),
                    }
                    for u in d.utterances
                ],
            }
            for d in ds.dialogues
        ],
    }
    _write_json(out / "encoded.json", encoded)
    _write_json(
        out / "stats.json",
        {
            "config": run_cfg,
            "dialogues": stats.dialogues,
            "utterances": stats.utterances,
            "unique_tokens": stats.unique_tokens,
            "label_histogram": {str(k): v for k, v in stats.label_histogram.items()},
            "label_percentages": {str(k): v for k, v in stats.label_percentages().items()},
        },
    )
    print(
        f"{stats.dialogues} dialogues, {stats.utterances} utterances, "
        f"{stats.unique_tokens} unique tokens -> {out}"
    )
    return EXIT_OK


def _epoch_printer(row):
    def pct(x):
        return "    -" if x is None else f"{100.0 * x:5.1f}"

    print(
        f"epoch {row['epoch']:>3}  lr {row['lr']:.6f}  "
        f"loss {row['train_loss']:.4f}  WA {pct(row['val_wa'])}  UWA {pct(row['val_uwa'])}"
    )


def cmd_train(args) -> int:
    mcfg, tcfg, weight_mode, paths_cfg = _build_configs(args)
    data_dir = _data_dir(paths_cfg)
    ds = load_dataset(_resolve_input(args.data, data_dir), _split(args.split))

    if args.val is not None:
        train_ds = ds
        val_ds = load_dataset(_resolve_input(args.val, data_dir), Split.VALIDATION)
    else:
        # Carve validation out first so the vocab never sees held-out text.
        train_ds, val_ds = split_train_validation(ds, tcfg.val_fraction, tcfg.seed)
        if not val_ds.dialogues:
            val_ds = train_ds
    if not train_ds.dialogues:
        raise CliError("validation split consumed every training dialogue")

    if weight_mode == "inverse-frequency":
        tcfg = dataclasses.replace(tcfg, class_weights=tr.inverse_frequency_weights(train_ds))

    vocab = tr.vocab_from_dataset(train_ds, min_count=args.min_count)
    if args.embeddings is not None:
        table = emb.load_pretrained(
            _resolve_input(args.embeddings, data_dir),
            vocab,
            dim=mcfg.embed_dim,
            seed=tcfg.seed,
            trainable=not args.freeze_embeddings,
        )
        print(f"embeddings: {table.vocab_size - table.oov_count - 1} rows loaded, {table.oov_count} randomized")
    else:
        table = emb.random_table(vocab, mcfg.embed_dim, seed=tcfg.seed, trainable=not args.freeze_embeddings)

    on_epoch = None if args.quiet else _epoch_printer
    try:
        result = tr.train(train_ds, vocab, table, mcfg, tcfg, val_ds=val_ds, on_epoch=on_epoch)
    except ValueError as exc:
        # optimizer fail-fast (non-finite loss/gradient) is a runtime failure
        raise CliError(f"training aborted: {exc}", code=EXIT_RUNTIME)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    tr.save_checkpoint(result.best, out / "checkpoint.bin")
    history = {
        "config": _config_echo(result.best.model_config, tcfg),
        "version": __version__,
        "history": result.history,
    }
    _write_json(out / "history.json", history)
    best = result.best.metadata["epoch"]
    uwa = result.history[best]["val_uwa"]
    shown = "-" if uwa is None else f"{100.0 * uwa:.1f}"
    print(f"best epoch {best} (UWA {shown}) -> {out / 'checkpoint.bin'}")
    return EXIT_OK


def _load_model(args):
    data_dir = _data_dir({})
    ckpt_path = _resolve_input(args.checkpoint, data_dir)
    ckpt = tr.load_checkpoint(ckpt_path)
    vocab_path = Path(args.vocab) if args.vocab else ckpt_path.parent / "vocab.txt"
    if not vocab_path.exists():
        raise CliError(f"vocab file not found: {vocab_path} (pass --vocab)")
    file_hash = pp.vocab_sha256(vocab_path)
    if file_hash != ckpt.vocab_sha256:
        raise CliError(
            f"vocab hash mismatch: checkpoint was trained with {ckpt.vocab_sha256[:12]}..., "
            f"{vocab_path} hashes to {file_hash[:12]}..."
        )
    vocab = pp.Vocab.load(vocab_path)
    cfg, params = tr.params_from_checkpoint(ckpt)
    return ckpt, vocab, cfg, params


def cmd_eval(args) -> int:
    ckpt, vocab, cfg, params = _load_model(args)
    ds = load_dataset(_resolve_input(args.data, _data_dir({})), _split(args.split))
    report = tr.evaluate_dataset(ds, vocab, params, cfg)
    print(report.table())
    blob = {
        "config": {"model": dataclasses.asdict(cfg), "train": ckpt.metadata.get("train_config")},
        "version": __version__,
        "report": report.to_json_dict(),
    }
    if args.out:
        _write_json(Path(args.out), blob)
    else:
        print(json.dumps(blob, indent=2, sort_keys=True))
    return EXIT_OK


def _read_prediction_input(path: Path):
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON: {exc}")
    if not isinstance(doc, list):
        raise CliError(f"{path}: expected a top-level array of dialogues")
    for di, dlg in enumerate(doc):
        if not isinstance(dlg, list):
            raise CliError(f"{path}: dialogue {di} is not an array")
        for ui, u in enumerate(dlg):
            if not isinstance(u, dict) or not isinstance(u.get("utterance"), str):
                raise CliError(
                    f"{path}: dialogue {di} utterance {ui} needs an 'utterance' string field"
                )
    return doc


def cmd_predict(args) -> int:
    ckpt, vocab, cfg, params = _load_model(args)
    path = _resolve_input(args.input, _data_dir({}))
    doc = _read_prediction_input(path)

    annotated = []
    for dlg in doc:
        ids = [vocab.encode(pp.prepare(u["utterance"])) for u in dlg]
        labels = []
        for start in range(0, len(ids), cfg.window_size):
            chunk = ids[start : start + cfg.window_size]
            logits = m.forward_window(chunk, params, cfg)
            labels += [str(LABEL_ORDER[i]) for i in mx.predict(logits.data)]
        annotated.append(
            [{**u, "predicted_emotion": label} for u, label in zip(dlg, labels)]
        )

    rendered = json.dumps(annotated, indent=2) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(rendered, encoding="utf-8")
        # Keep the prediction schema pure; provenance rides in a sidecar.
        _write_json(
            out.with_name(out.name + ".meta.json"),
            {
                "config": {"model": dataclasses.asdict(cfg), "train": ckpt.metadata.get("train_config")},
                "version": __version__,
                "vocab_sha256": ckpt.vocab_sha256,
            },
        )
        n = sum(len(dlg) for dlg in annotated)
        print(f"{n} utterances annotated -> {out}")
    else:
        sys.stdout.write(rendered)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    started = time.monotonic()
    cfg = m.ModelConfig(
        embed_dim=8, hidden_size=4, window_size=3, fc_dims=(8,),
        num_labels=8, dropout_p=0.0, variant="sa-bilstm",
    )
    vocab = pp.build_vocab([["red", "green", "blue", "amber", "plum"]])
    table = emb.random_table(vocab, cfg.embed_dim, seed=args.seed)
    params = m.ModelParams.init(cfg, table, seed=args.seed)
    ids = [
        vocab.encode(["red", "green", "blue", "amber", "plum"]),
        vocab.encode(["green", "plum", "red"]),
        vocab.encode(["blue"]),
    ]
    golds = [0, 1, 3]
    weights = [1.0, 1.0, 1.0]

    def f():
        return ad.weighted_nll(m.forward_window(ids, params, cfg), golds, weights)

    err = ad.grad_check(f, list(params.named_tensors().values()))
    elapsed = time.monotonic() - started
    ok = err < args.tolerance
    print(
        f"max relative error {err:.3e} over every parameter coordinate "
        f"({elapsed:.1f}s) -> {'ok' if ok else 'FAIL'} at tolerance {args.tolerance:g}"
    )
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialoglow",
        description="Utterance-level emotion classification for dialogues.",
    )
    parser.add_argument("--version", action="version", version=f"dialoglow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean, tokenize, and encode a dialogue corpus")
    p.add_argument("data", help="dialogue JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--split", default="train", help="split name for dialogue ids")
    p.add_argument("--min-count", type=int, default=1, help="drop rarer tokens from the vocab")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model and write checkpoint + history")
    p.add_argument("data", help="training dialogue JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="sectioned key=value config file")
    p.add_argument("--variant", choices=m.VARIANTS)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--dropout", type=float)
    p.add_argument("--embed-dim", type=int, dest="embed_dim")
    p.add_argument("--hidden-size", type=int, dest="hidden_size")
    p.add_argument("--window-size", type=int, dest="window_size")
    p.add_argument("--fc-dims", dest="fc_dims", help="comma-separated hidden layer sizes")
    p.add_argument("--val", help="explicit validation JSON (skips the internal split)")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--grad-clip", type=float, dest="grad_clip")
    p.add_argument(
        "--class-weights", dest="class_weights",
        help="'uniform', 'inverse-frequency', or 8 comma-separated values",
    )
    p.add_argument("--embeddings", help="pretrained word vector text file")
    p.add_argument("--freeze-embeddings", action="store_true")
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--split", default="train")
    p.add_argument("--quiet", action="store_true", help="suppress per-epoch rows")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint against a labeled dataset")
    p.add_argument("checkpoint")
    p.add_argument("data")
    p.add_argument("--vocab", help="vocab file (default: next to the checkpoint)")
    p.add_argument("--split", default="test")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="annotate dialogues with predicted emotions")
    p.add_argument("checkpoint")
    p.add_argument("input", help="dialogue JSON, gold labels optional")
    p.add_argument("--vocab", help="vocab file (default: next to the checkpoint)")
    p.add_argument("--out", help="output JSON path (default: stdout)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference check on a toy configuration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (CorpusError, tr.CheckpointError, emb.EmbeddingError, mx.MetricsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FileNotFoundError as exc:
        print(f"error: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
