"""Pair-scoring models: a bi-encoder over (speaker text, spot text) pairs.

Two variants share the same skeleton: each side of a pair is encoded
independently, the leading classification vectors are concatenated, and a
linear head maps them to a scalar score.

- ``biencoder_sumrec``: plain token + position embeddings on both sides.
- ``dialogue_direct``: the left side is a speaker-tagged dialogue; a 2-entry
  speaker-embedding table is added to token embeddings, flagging tokens that
  belong to the recommended speaker's utterances.
"""
from __future__ import annotations

import hashlib
import logging
import re
from dataclasses import dataclass
from enum import Enum

import torch
from torch import nn

logger = logging.getLogger(__name__)

CLS_ID = 0
PAD_ID = 1
_RESERVED = 2

_TOKEN_RE = re.compile(r"\w+|\[SEP\]", re.UNICODE)
_UTTERANCE_RE = re.compile(r"^([AB])\s*[:：]\s*(.*)$")


class Variant(str, Enum):
    BIENCODER_SUMREC = "biencoder_sumrec"
    DIALOGUE_DIRECT = "dialogue_direct"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 2048
    dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    max_len: int = 256

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "dim": self.dim,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "max_len": self.max_len,
        }


def tokenize(text: str, vocab_size: int) -> list[int]:
    """Hash-bucket tokenizer: stable ids with no vocabulary file to ship."""
    ids = []
    for tok in _TOKEN_RE.findall(text.lower()):
        digest = hashlib.md5(tok.encode("utf-8")).digest()
        ids.append(_RESERVED + int.from_bytes(digest[:8], "big") % (vocab_size - _RESERVED))
    return ids


def speaker_flags(left_text: str, target_speaker: str, vocab_size: int) -> tuple[list[int], list[int]]:
    """Tokenize a speaker-tagged dialogue, flagging the target speaker's tokens.

    Returns (token ids, flags) of equal length; flag 1 marks tokens drawn from
    an utterance line spoken by ``target_speaker``.
    """
    ids: list[int] = []
    flags: list[int] = []
    current = None
    for line in left_text.splitlines():
        m = _UTTERANCE_RE.match(line.strip())
        if m:
            current = m.group(1)
        line_ids = tokenize(line, vocab_size)
        ids.extend(line_ids)
        flags.extend([1 if current == target_speaker else 0] * len(line_ids))
    return ids, flags


class Encoder(nn.Module):
    """Small bidirectional transformer encoder with a leading classification token."""

    def __init__(self, config: ModelConfig, speaker_table: bool = False):
        super().__init__()
        self.config = config
        self.word = nn.Embedding(config.vocab_size, config.dim, padding_idx=PAD_ID)
        self.position = nn.Embedding(config.max_len, config.dim)
        self.speaker = nn.Embedding(2, config.dim) if speaker_table else None
        layer = nn.TransformerEncoderLayer(
            d_model=config.dim,
            nhead=config.n_heads,
            dim_feedforward=config.dim * 4,
            batch_first=True,
            dropout=0.0,
        )
        self.layers = nn.TransformerEncoder(
            layer, num_layers=config.n_layers, enable_nested_tensor=False
        )

    def embed(self, ids: torch.Tensor, flags: torch.Tensor | None) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device).unsqueeze(0)
        x = self.word(ids) + self.position(positions)
        if self.speaker is not None and flags is not None:
            x = x + self.speaker(flags)
        return x

    def forward(
        self, ids: torch.Tensor, mask: torch.Tensor, flags: torch.Tensor | None = None
    ) -> torch.Tensor:
        x = self.embed(ids, flags)
        x = self.layers(x, src_key_padding_mask=~mask)
        return x[:, 0, :]  # classification-token vector


class PairScorer(nn.Module):
    """Encodes each side of a text pair and regresses a scalar score."""

    def __init__(self, variant: Variant, config: ModelConfig | None = None):
        super().__init__()
        self.variant = Variant(variant)
        self.config = config or ModelConfig()
        self.encoder = Encoder(
            self.config, speaker_table=self.variant is Variant.DIALOGUE_DIRECT
        )
        self.head = nn.Linear(self.config.dim * 2, 1)

    def _prepare(self, texts: list[str], targets: list[str] | None) -> tuple[torch.Tensor, ...]:
        cfg = self.config
        rows, flag_rows = [], []
        for i, text in enumerate(texts):
            if targets is not None:
                ids, flags = speaker_flags(text, targets[i], cfg.vocab_size)
            else:
                ids, flags = tokenize(text, cfg.vocab_size), None
            ids = [CLS_ID] + ids
            flags = None if flags is None else [0] + flags
            if len(ids) > cfg.max_len:
                logger.warning("input of %d tokens truncated to %d", len(ids), cfg.max_len)
                ids = ids[: cfg.max_len]
                flags = None if flags is None else flags[: cfg.max_len]
            rows.append(ids)
            flag_rows.append(flags)
        width = max(len(r) for r in rows)
        ids_t = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        mask_t = torch.zeros((len(rows), width), dtype=torch.bool)
        flags_t = torch.zeros((len(rows), width), dtype=torch.long)
        for i, row in enumerate(rows):
            ids_t[i, : len(row)] = torch.tensor(row)
            mask_t[i, : len(row)] = True
            if flag_rows[i] is not None:
                flags_t[i, : len(flag_rows[i])] = torch.tensor(flag_rows[i])
        return ids_t, mask_t, flags_t

    def forward(
        self,
        left_texts: list[str],
        right_texts: list[str],
        target_speakers: list[str] | None = None,
    ) -> torch.Tensor:
        use_flags = self.variant is Variant.DIALOGUE_DIRECT
        targets = target_speakers or ["A"] * len(left_texts)
        l_ids, l_mask, l_flags = self._prepare(left_texts, targets if use_flags else None)
        r_ids, r_mask, _ = self._prepare(right_texts, None)
        left_vec = self.encoder(l_ids, l_mask, l_flags if use_flags else None)
        right_vec = self.encoder(r_ids, r_mask)
        return self.head(torch.cat([left_vec, right_vec], dim=-1)).squeeze(-1)

    @torch.no_grad()
    def predict(
        self,
        left_texts: list[str],
        right_texts: list[str],
        target_speakers: list[str] | None = None,
    ) -> list[float]:
        """Inference-mode scores, clamped to the valid [1, 5] range."""
        if not left_texts:
            return []
        self.eval()
        raw = self(left_texts, right_texts, target_speakers)
        return [float(v) for v in raw.clamp(1.0, 5.0)]
