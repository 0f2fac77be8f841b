"""Training protocol: stratified splits, epoch loop with early stopping,
evaluation, and per-token attention inspection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .corpus import EncodedDocument, RawDocument, Vocabulary, encode
from .linalg import EmbeddingTable
from .model import (
    AdamState,
    DivergenceError,
    ModelParams,
    POOLING_MODES,
    _softmax_rows,
    adam_step,
    init_params,
    iter_batches,
    loss_and_grad,
    pool_sequence,
    predict_logits,
)


class TrainError(Exception):
    """Raised for invalid training inputs."""


@dataclass
class TrainConfig:
    """Every pipeline hyperparameter in one validated record."""

    window: int = 5
    embed_dim: int = 300
    seq_len: int = 200
    vocab_cap: int = 10000
    temperature: float = 2.0
    attn_dim: int = 64
    hidden: int = 128
    dropout_p: float = 0.6
    learning_rate: float = 5e-4
    weight_decay: float = 1e-4
    batch_size: int = 64
    patience: int = 5
    max_epochs: int = 50
    val_fraction: float = 0.1
    seed: int = 0
    pooling: str = "attention"

    def __post_init__(self):
        for name in ("window", "embed_dim", "seq_len", "vocab_cap", "attn_dim",
                     "hidden", "batch_size", "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise TrainError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 < self.val_fraction < 1.0:
            raise TrainError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.temperature <= 0.0:
            raise TrainError(f"temperature must be > 0, got {self.temperature}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise TrainError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.pooling not in POOLING_MODES:
            raise TrainError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")

    def with_pooling(self, pooling: str) -> "TrainConfig":
        return replace(self, pooling=pooling)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float | None
    wall_seconds: float


@dataclass
class Checkpoint:
    """Best-epoch parameters plus optimizer state for bit-exact resume."""

    config: TrainConfig
    params: ModelParams
    adam: AdamState
    best_epoch: int
    best_val_acc: float


@dataclass
class AttentionReport:
    """Per-token attention weights with the model's prediction."""

    tokens: list[tuple[str, float]]
    predicted: int
    probs: np.ndarray  # (2,)


def split(
    corpus: list[EncodedDocument], val_fraction: float, seed: int
) -> tuple[list[EncodedDocument], list[EncodedDocument]]:
    """Stratified shuffle split preserving class proportions."""
    if not 0.0 < val_fraction < 1.0:
        raise TrainError(f"val_fraction must be in (0, 1), got {val_fraction}")
    rng = np.random.default_rng(seed)
    train_docs: list[EncodedDocument] = []
    val_docs: list[EncodedDocument] = []
    for label in (0, 1):
        indices = [i for i, doc in enumerate(corpus) if doc.label == label]
        if len(indices) < 2:
            raise TrainError(f"need at least 2 documents of class {label} to split")
        order = rng.permutation(len(indices))
        n_val = int(round(len(indices) * val_fraction))
        if n_val == 0 or n_val == len(indices):
            raise TrainError(
                f"val_fraction {val_fraction} leaves an empty side for class {label}"
            )
        shuffled = [corpus[indices[j]] for j in order]
        val_docs.extend(shuffled[:n_val])
        train_docs.extend(shuffled[n_val:])
    return train_docs, val_docs


def _accuracy(
    docs: list[EncodedDocument],
    embeddings: EmbeddingTable,
    params: ModelParams,
    pooling: str,
    eval_batch: int = 512,
) -> float:
    correct = 0
    for start in range(0, len(docs), eval_batch):
        chunk = docs[start : start + eval_batch]
        logits = predict_logits(chunk, embeddings, params, pooling)
        labels = np.array([d.label for d in chunk])
        correct += int((logits.argmax(axis=-1) == labels).sum())
    return correct / len(docs)


def fit(
    train_set: list[EncodedDocument],
    val_set: list[EncodedDocument],
    embeddings: EmbeddingTable,
    config: TrainConfig,
    test_set: list[EncodedDocument] | None = None,
    log=None,
) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train with per-epoch shuffling and validation-based early stopping.

    Keeps the parameters of the best validation epoch; stops after
    `patience` consecutive epochs without improvement. When a test set is
    given its accuracy is recorded per epoch for convergence reporting but
    never used for model selection.
    """
    if not train_set or not val_set:
        raise TrainError("train and validation sets must be non-empty")
    if embeddings.dim != config.embed_dim:
        raise TrainError(
            f"embedding dim {embeddings.dim} does not match config embed_dim {config.embed_dim}"
        )
    params = init_params(config)
    adam = AdamState.for_params(params)
    records: list[EpochRecord] = []
    best: Checkpoint | None = None
    stale = 0
    n = len(train_set)
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        rng = np.random.default_rng(config.seed + epoch)
        order = rng.permutation(n)
        loss_sum = 0.0
        acc_sum = 0.0
        for batch_idx, batch_indices in enumerate(iter_batches(order, config.batch_size)):
            batch = [train_set[i] for i in batch_indices]
            try:
                loss, grads, acc = loss_and_grad(
                    batch, embeddings, params, config.pooling, config.weight_decay, rng
                )
            except DivergenceError as exc:
                raise DivergenceError(
                    f"{exc} (epoch {epoch}, batch {batch_idx})"
                ) from exc
            adam_step(params, grads, adam, config.learning_rate)
            loss_sum += loss * len(batch)
            acc_sum += acc * len(batch)
        val_acc = _accuracy(val_set, embeddings, params, config.pooling)
        test_acc = (
            _accuracy(test_set, embeddings, params, config.pooling) if test_set else None
        )
        record = EpochRecord(
            epoch=epoch,
            train_loss=loss_sum / n,
            train_acc=acc_sum / n,
            val_acc=val_acc,
            test_acc=test_acc,
            wall_seconds=time.perf_counter() - started,
        )
        records.append(record)
        if log is not None:
            log(record)
        if best is None or val_acc > best.best_val_acc:
            best = Checkpoint(
                config=config,
                params=params.copy(),
                adam=adam.copy(),
                best_epoch=epoch,
                best_val_acc=val_acc,
            )
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    assert best is not None
    return best, records


def evaluate(
    checkpoint: Checkpoint, dataset: list[EncodedDocument], embeddings: EmbeddingTable
) -> float:
    """Eval-mode accuracy of a checkpoint over a dataset."""
    if embeddings.dim != checkpoint.config.embed_dim:
        raise TrainError(
            f"embedding dim {embeddings.dim} does not match checkpoint "
            f"embed_dim {checkpoint.config.embed_dim}"
        )
    if not dataset:
        raise TrainError("cannot evaluate an empty dataset")
    return _accuracy(dataset, embeddings, checkpoint.params, checkpoint.config.pooling)


def inspect_attention(
    checkpoint: Checkpoint,
    embeddings: EmbeddingTable,
    vocab: Vocabulary,
    text: str,
) -> AttentionReport:
    """Per-token attention weights and prediction for a piece of text."""
    if checkpoint.config.pooling != "attention":
        raise TrainError("attention inspection requires an attention-pooling checkpoint")
    doc = encode(RawDocument(text=text, label=0), vocab, checkpoint.config.seq_len)
    x = embeddings.gather(doc.ids)
    result = pool_sequence(x, doc.mask, checkpoint.params.attention, "attention")
    logits = predict_logits([doc], embeddings, checkpoint.params, "attention")[0]
    probs = _softmax_rows(logits[None])[0]
    pairs = [
        (vocab.tokens[int(doc.ids[t])], float(result.alphas[t]))
        for t in range(doc.real_length)
    ]
    return AttentionReport(tokens=pairs, predicted=int(np.argmax(logits)), probs=probs)
