"""Training loop and its supporting pieces.

Covers the weighted cross-entropy loss, bias-corrected Adam with a
per-epoch decayed learning rate, the two batching regimes (flat
utterance batches for the plain encoder, one dialogue per step for the
attentive variant), evaluation helpers, and a self-describing binary
checkpoint format. Everything is seeded; two runs with the same seed
produce byte-identical checkpoints and histories.
"""

from __future__ import annotations

import dataclasses
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import metrics as mx
from . import model as m
from .corpus import CONSIDERED_LABELS, LABEL_INDEX, LABEL_ORDER, Dataset, split_train_validation, split_windows
from .embeddings import EmbeddingTable
from .preprocess import Vocab, prepare, vocab_content_sha256

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_EPOCHS = {"bilstm": 10, "sa-bilstm": 20}

CHECKPOINT_MAGIC = b"DGLW"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt, or incompatible checkpoint files."""


@dataclass
class TrainConfig:
    lr0: float = 2e-4
    decay: float = 0.99
    epochs: "int | None" = None  # None picks the per-variant default
    batch_size: int = 16  # flat-batch variant only; attentive steps one dialogue
    dropout: float = 0.3
    class_weights: tuple = (1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0)
    seed: int = 0
    val_fraction: float = 0.1
    grad_clip: "float | None" = None

    def __post_init__(self):
        self.class_weights = tuple(float(w) for w in self.class_weights)
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise ValueError(f"decay must be in (0, 1], got {self.decay}")
        if self.epochs is not None and self.epochs < 1:
            raise ValueError(f"epochs must be at least 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be positive, got {self.grad_clip}")
        if len(self.class_weights) != len(LABEL_ORDER):
            raise ValueError(
                f"class_weights needs {len(LABEL_ORDER)} entries, got {len(self.class_weights)}"
            )
        if any(w < 0 for w in self.class_weights):
            raise ValueError("class weights must be non-negative")
        n = len(CONSIDERED_LABELS)
        if any(w != 0.0 for w in self.class_weights[n:]):
            raise ValueError("weights for labels outside the considered set must be exactly zero")

    def epochs_for(self, variant: str) -> int:
        return self.epochs if self.epochs is not None else DEFAULT_EPOCHS[variant]


def learning_rate(lr0: float, decay: float, epoch: int) -> float:
    return lr0 * decay**epoch


def weighted_cross_entropy(logits, golds, class_weights) -> ad.Tensor:
    """Cross-entropy averaged by the per-utterance weight sum.

    Weights come from the gold label's entry in class_weights, so labels
    outside the considered set (weight 0) sit in the batch for context
    without contributing loss or gradient.
    """
    cw = np.asarray(class_weights, dtype=np.float64)
    weights = [cw[g] for g in golds]
    return ad.weighted_nll(logits, list(golds), weights)


class AdamState:
    """First/second-moment accumulators keyed like the parameter dict."""

    def __init__(self, named_params: dict):
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in named_params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in named_params.items()}


def adam_step(named_params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place.

    Parameters missing from grads are treated as zero-gradient (their
    moments still decay). The epsilon sits outside the square root.
    """
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name, p in named_params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for {name!r}")
        mom = state.m[name] = ADAM_BETA1 * state.m[name] + (1.0 - ADAM_BETA1) * g
        var = state.v[name] = ADAM_BETA2 * state.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        step = lr * (mom / bc1) / (np.sqrt(var / bc2) + ADAM_EPS)
        p.data = p.data - step


def clip_gradients(grads: dict, limit: float) -> float:
    """Scale the whole gradient down when its global norm exceeds limit."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > limit:
        factor = limit / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


def inverse_frequency_weights(ds: Dataset) -> tuple:
    """Considered-class weights proportional to 1/count, mean-normalized to 1.

    Classes absent from the dataset get weight 0 (there is nothing to
    reweight), as do the never-considered labels.
    """
    n = len(CONSIDERED_LABELS)
    counts = [0] * n
    for d in ds.dialogues:
        for u in d.utterances:
            gi = LABEL_INDEX[u.gold]
            if gi < n:
                counts[gi] += 1
    present = [c for c in counts if c > 0]
    if not present:
        raise ValueError("no considered-label utterances to derive weights from")
    mean_count = sum(present) / len(present)
    weights = [mean_count / c if c > 0 else 0.0 for c in counts]
    return tuple(weights) + (0.0,) * (len(LABEL_ORDER) - n)


# ---------------------------------------------------------------------------
# checkpoint container


@dataclass
class Checkpoint:
    model_config: m.ModelConfig
    tensors: dict
    vocab_sha256: str
    metadata: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    directory = []
    payload = bytearray()
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        directory.append({"name": name, "shape": list(arr.shape), "offset": len(payload)})
        payload += arr.tobytes()
    header = {
        "model_config": dataclasses.asdict(ckpt.model_config),
        "vocab_sha256": ckpt.vocab_sha256,
        "metadata": ckpt.metadata,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    buf += struct.pack("<Q", len(hbytes))
    buf += hbytes
    buf += payload
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < 20:
        raise CheckpointError(f"{path}: too short to be a checkpoint")
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic bytes)")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt or truncated")
    (hlen,) = struct.unpack_from("<Q", data, 8)
    header_end = 16 + hlen
    header = json.loads(data[16:header_end].decode("utf-8"))
    payload = data[header_end : len(data) - 4]
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        tensors[entry["name"]] = arr.reshape(shape).astype(np.float64)
    mc = dict(header["model_config"])
    mc["fc_dims"] = tuple(mc["fc_dims"])
    return Checkpoint(
        model_config=m.ModelConfig(**mc),
        tensors=tensors,
        vocab_sha256=header["vocab_sha256"],
        metadata=header["metadata"],
    )


def params_from_checkpoint(ckpt: Checkpoint):
    """Rebuild (ModelConfig, ModelParams) from a loaded checkpoint."""
    cfg = ckpt.model_config
    emb_meta = ckpt.metadata.get("embedding", {})
    trainable = bool(emb_meta.get("trainable", True))
    expected = ["embedding", "lstm_fwd.w", "lstm_fwd.b", "lstm_bwd.w", "lstm_bwd.b"]
    expected += [f"fc{i}.{part}" for i in range(len(cfg.fc_dims)) for part in ("w", "b")]
    expected += ["out.w", "out.b"]
    missing = [name for name in expected if name not in ckpt.tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {', '.join(missing)}")

    def t(name, grad=True):
        return ad.Tensor(ckpt.tensors[name], requires_grad=grad)

    table = EmbeddingTable(
        weights=t("embedding", grad=trainable),
        dim=cfg.embed_dim,
        oov_count=int(emb_meta.get("oov_count", 0)),
        trainable=trainable,
    )
    params = m.ModelParams(
        embedding=table,
        lstm_fwd=m.LstmDirection(w=t("lstm_fwd.w"), b=t("lstm_fwd.b")),
        lstm_bwd=m.LstmDirection(w=t("lstm_bwd.w"), b=t("lstm_bwd.b")),
        fc=[(t(f"fc{i}.w"), t(f"fc{i}.b")) for i in range(len(cfg.fc_dims))],
        out_w=t("out.w"),
        out_b=t("out.b"),
    )
    return cfg, params


# ---------------------------------------------------------------------------
# evaluation helpers


def vocab_from_dataset(ds: Dataset, min_count: int = 1) -> Vocab:
    from .preprocess import build_vocab

    corpus = (prepare(u.raw_text) for d in ds.dialogues for u in d.utterances)
    return build_vocab(corpus, min_count=min_count)


def _encode_window(window, vocab: Vocab):
    ids = [vocab.encode(prepare(u.raw_text)) for u in window.utterances]
    golds = [LABEL_INDEX[u.gold] for u in window.utterances]
    return ids, golds


def encode_dataset(ds: Dataset, vocab: Vocab, window_size: int):
    """Per-dialogue window encodings: [[(ids_list, gold_list), ...], ...]."""
    out = []
    for d in ds.dialogues:
        out.append([_encode_window(w, vocab) for w in split_windows(d, window_size)])
    return out


def _score_windows(windows, params, cfg):
    """(wa, uwa) over pre-encoded windows, or (None, None) if nothing scored."""
    preds, golds = [], []
    for ids_list, gs in windows:
        logits = m.forward_window(ids_list, params, cfg)
        preds += mx.predict(logits.data)
        golds += gs
    cm = mx.confusion(preds, golds)
    if cm.total == 0:
        return None, None
    return mx.wa(cm), mx.uwa(cm)


def evaluate_dataset(ds: Dataset, vocab: Vocab, params, cfg) -> mx.EvalReport:
    preds, golds = [], []
    for dlg in encode_dataset(ds, vocab, cfg.window_size):
        for ids_list, gs in dlg:
            logits = m.forward_window(ids_list, params, cfg)
            preds += mx.predict(logits.data)
            golds += gs
    return mx.report(preds, golds)


def predict_dataset(ds: Dataset, vocab: Vocab, params, cfg):
    """Predicted labels per dialogue, aligned with ds.dialogues order."""
    out = []
    for dlg in encode_dataset(ds, vocab, cfg.window_size):
        labels = []
        for ids_list, _ in dlg:
            logits = m.forward_window(ids_list, params, cfg)
            labels += [LABEL_ORDER[i] for i in mx.predict(logits.data)]
        out.append(labels)
    return out


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list


def _optimize_step(windows, params, cfg, trainable, state, lr, cw, rng, grad_clip):
    """Forward/backward/update over one step's windows. None if nothing weighted."""
    golds = [g for _, gs in windows for g in gs]
    if float(np.sum(cw[golds])) == 0.0:
        return None
    with ad.Tape() as tape:
        parts = [
            m.forward_window(ids, params, cfg, train=True, rng=rng) for ids, _ in windows
        ]
        logits = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
        loss = weighted_cross_entropy(logits, golds, cw)
        grads = ad.backward(tape, loss)
    by_name = {name: grads[t] for name, t in trainable.items() if t in grads}
    if grad_clip is not None:
        clip_gradients(by_name, grad_clip)
    adam_step(trainable, by_name, state, lr)
    return float(loss.data)


def train(
    ds: Dataset,
    vocab: Vocab,
    table: EmbeddingTable,
    mcfg: m.ModelConfig,
    tcfg: TrainConfig,
    val_ds: "Dataset | None" = None,
    on_epoch=None,
) -> TrainResult:
    """Train from scratch on ds; deterministic given tcfg.seed.

    When val_ds is absent, a seeded fraction of ds is held out; with
    val_fraction 0 the (unshuffled) training set doubles as the scoring
    set, which is exactly what an overfitting check wants.
    """
    cfg = dataclasses.replace(mcfg, dropout_p=tcfg.dropout)
    if val_ds is None:
        train_ds, val_ds = split_train_validation(ds, tcfg.val_fraction, tcfg.seed)
        if not val_ds.dialogues:
            val_ds = train_ds
    else:
        train_ds = ds
    if not train_ds.dialogues:
        raise ValueError("validation split consumed every training dialogue")

    params = m.ModelParams.init(cfg, table, seed=tcfg.seed)
    trainable = params.trainable_tensors()
    state = AdamState(trainable)
    cw = np.asarray(tcfg.class_weights, dtype=np.float64)
    vocab_hash = vocab_content_sha256(vocab)

    by_dialogue = encode_dataset(train_ds, vocab, cfg.window_size)
    val_windows = [w for dlg in encode_dataset(val_ds, vocab, cfg.window_size) for w in dlg]
    flat = [
        ([ids], [g])
        for dlg in by_dialogue
        for ids_list, gs in dlg
        for ids, g in zip(ids_list, gs)
    ]

    shuffle_rng = ad.seeded_rng(tcfg.seed, stream=1)
    dropout_rng = ad.seeded_rng(tcfg.seed, stream=2)
    epochs = tcfg.epochs_for(cfg.variant)

    history = []
    best = None  # (uwa, epoch, tensor snapshot, history length)
    for epoch in range(epochs):
        lr = learning_rate(tcfg.lr0, tcfg.decay, epoch)
        losses = []
        if cfg.variant == "sa-bilstm":
            # One dialogue per step: all its windows share a single loss.
            for di in shuffle_rng.permutation(len(by_dialogue)):
                loss = _optimize_step(
                    by_dialogue[di], params, cfg, trainable, state, lr, cw,
                    dropout_rng, tcfg.grad_clip,
                )
                if loss is not None:
                    losses.append(loss)
        else:
            # Flat utterance batches; rows are independent for this variant,
            # so a batch is forwarded as window-sized chunks and concatenated.
            order = shuffle_rng.permutation(len(flat))
            for lo in range(0, len(order), tcfg.batch_size):
                batch = [flat[i] for i in order[lo : lo + tcfg.batch_size]]
                chunks = []
                for start in range(0, len(batch), cfg.window_size):
                    group = batch[start : start + cfg.window_size]
                    chunks.append(
                        ([ids for (ids,), _ in group], [g for _, (g,) in group])
                    )
                loss = _optimize_step(
                    chunks, params, cfg, trainable, state, lr, cw,
                    dropout_rng, tcfg.grad_clip,
                )
                if loss is not None:
                    losses.append(loss)

        val_wa, val_uwa = _score_windows(val_windows, params, cfg)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)) if losses else 0.0,
            "val_wa": val_wa,
            "val_uwa": val_uwa,
        }
        history.append(row)
        if on_epoch is not None:
            on_epoch(row)
        if val_uwa is not None and (best is None or val_uwa > best[0]):
            snapshot = {k: t.data.copy() for k, t in params.named_tensors().items()}
            best = (val_uwa, epoch, snapshot, len(history))

    def checkpoint(tensors, epoch, rows):
        return Checkpoint(
            model_config=cfg,
            tensors=tensors,
            vocab_sha256=vocab_hash,
            metadata={
                "epoch": epoch,
                "seed": tcfg.seed,
                "selected_by": "val_uwa",
                "history": rows,
                "train_config": dataclasses.asdict(tcfg),
                "embedding": {"oov_count": table.oov_count, "trainable": table.trainable},
                "tool_version": __version__,
            },
        )

    last_tensors = {k: t.data.copy() for k, t in params.named_tensors().items()}
    last = checkpoint(last_tensors, epochs - 1, history)
    if best is None:
        best_ckpt = last
    else:
        best_ckpt = checkpoint(best[2], best[1], history[: best[3]])
    return TrainResult(best=best_ckpt, last=last, history=history)
