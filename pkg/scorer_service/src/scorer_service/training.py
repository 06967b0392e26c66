"""Training loop: MSE regression with early stopping on validation loss.

Checkpoints land under ``checkpoints/<variant>/<digest>/`` where the digest
is content-addressed from the saved weights, so retraining with identical
inputs reuses the same directory.
"""
from __future__ import annotations

import hashlib
import io
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import torch
from torch import nn

from .model import ModelConfig, PairScorer, Variant


@dataclass(frozen=True)
class TrainSpec:
    variant: Variant = Variant.BIENCODER_SUMREC
    learning_rate: float = 1e-6
    batch_size: int = 32
    max_epochs: int = 10
    patience: int = 3
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)


@dataclass(frozen=True)
class Example:
    left_text: str
    right_text: str
    score: float
    target_speaker: str = "A"


@dataclass
class EpochLoss:
    epoch: int
    train_loss: float
    val_loss: float


@dataclass
class TrainResult:
    epoch_losses: list[EpochLoss]
    best_epoch: int
    checkpoint_dir: Path
    checkpoint_digest: str


def load_examples(path: Path | str) -> list[Example]:
    examples = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            examples.append(
                Example(
                    left_text=rec["left_text"],
                    right_text=rec["right_text"],
                    score=float(rec["score"]),
                    target_speaker=rec.get("target_speaker", "A"),
                )
            )
    return examples


def _batch_loss(model: PairScorer, batch: list[Example], loss_fn: nn.Module) -> torch.Tensor:
    pred = model(
        [e.left_text for e in batch],
        [e.right_text for e in batch],
        [e.target_speaker for e in batch],
    )
    truth = torch.tensor([e.score for e in batch], dtype=pred.dtype)
    return loss_fn(pred, truth)


@torch.no_grad()
def evaluate(model: PairScorer, examples: list[Example], batch_size: int) -> float:
    model.eval()
    loss_fn = nn.MSELoss(reduction="sum")
    total = 0.0
    for i in range(0, len(examples), batch_size):
        total += float(_batch_loss(model, examples[i : i + batch_size], loss_fn))
    return total / len(examples)


def _state_digest(model: PairScorer) -> str:
    buf = io.BytesIO()
    torch.save(model.state_dict(), buf)
    return hashlib.sha256(buf.getvalue()).hexdigest()[:16]


def save_checkpoint(model: PairScorer, root: Path | str) -> tuple[Path, str]:
    digest = _state_digest(model)
    out = Path(root) / model.variant.value / digest
    out.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out / "model.pt")
    (out / "meta.json").write_text(
        json.dumps({"variant": model.variant.value, "model": model.config.to_dict()}, indent=2)
    )
    return out, digest


def load_checkpoint(path: Path | str) -> tuple[PairScorer, str]:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    model = PairScorer(Variant(meta["variant"]), ModelConfig(**meta["model"]))
    model.load_state_dict(torch.load(path / "model.pt", weights_only=True))
    model.eval()
    return model, path.name


def find_latest_checkpoint(root: Path | str, variant: Variant) -> Optional[Path]:
    base = Path(root) / Variant(variant).value
    if not base.is_dir():
        return None
    candidates = [p for p in base.iterdir() if (p / "model.pt").is_file()]
    if not candidates:
        return None
    return max(candidates, key=lambda p: (p / "model.pt").stat().st_mtime)


def train(
    spec: TrainSpec,
    train_examples: list[Example],
    val_examples: list[Example],
    checkpoint_root: Path | str,
    on_epoch: Optional[Callable[[EpochLoss], None]] = None,
    val_loss_fn: Optional[Callable[[int], float]] = None,
) -> TrainResult:
    """Fit a PairScorer, keeping the checkpoint with the lowest validation loss.

    ``val_loss_fn``, when given, replaces the measured validation loss for
    epoch ``n`` — a hook for exercising the early-stopping schedule with a
    scripted curve.
    """
    torch.manual_seed(spec.seed)
    rng = random.Random(spec.seed)
    model = PairScorer(spec.variant, spec.model)
    optimizer = torch.optim.Adafactor(model.parameters(), lr=spec.learning_rate)
    loss_fn = nn.MSELoss()

    best_val = float("inf")
    best_epoch = 0
    best_state: dict = {k: v.clone() for k, v in model.state_dict().items()}
    epoch_losses: list[EpochLoss] = []

    order = list(range(len(train_examples)))
    for epoch in range(1, spec.max_epochs + 1):
        model.train()
        rng.shuffle(order)
        total = 0.0
        for i in range(0, len(order), spec.batch_size):
            batch = [train_examples[j] for j in order[i : i + spec.batch_size]]
            optimizer.zero_grad()
            loss = _batch_loss(model, batch, loss_fn)
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
        train_loss = total / len(train_examples)

        if val_loss_fn is not None:
            val_loss = val_loss_fn(epoch)
        else:
            val_loss = evaluate(model, val_examples, spec.batch_size)

        record = EpochLoss(epoch=epoch, train_loss=train_loss, val_loss=val_loss)
        epoch_losses.append(record)
        if on_epoch is not None:
            on_epoch(record)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        elif epoch - best_epoch >= spec.patience:
            break

    model.load_state_dict(best_state)
    checkpoint_dir, digest = save_checkpoint(model, checkpoint_root)
    return TrainResult(
        epoch_losses=epoch_losses,
        best_epoch=best_epoch,
        checkpoint_dir=checkpoint_dir,
        checkpoint_digest=digest,
    )
