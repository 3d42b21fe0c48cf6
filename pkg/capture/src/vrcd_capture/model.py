"""Tiny seeded transformer used as a stand-in predictor.

Randomly initialized, numpy only, deterministic per seed.  It exposes
exactly what capture needs from a real image-conditioned decoder: token
probabilities for every masked position and token-to-image attention
from the final layer, averaged over heads and renormalized over the
image columns.  Nothing here is trained; the point is realistic shapes
and data flow, not realistic text.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Protocol, runtime_checkable

import numpy as np

LOGIT_GAIN = 4.0  # spreads softmax outputs away from uniform


@dataclass(frozen=True, eq=False)
class PredictionBatch:
    """Model outputs for one forward pass.

    token_probs maps each masked position to a vocab-length distribution.
    image_attention maps each masked position to a distribution over
    image tokens, or is None when the model cannot expose attention.
    """

    token_probs: dict[int, np.ndarray]
    image_attention: dict[int, np.ndarray] | None


@runtime_checkable
class MaskedPredictor(Protocol):
    length: int
    num_image_tokens: int
    vocab_size: int

    def predict(self, committed: Mapping[int, int]) -> PredictionBatch: ...


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def _rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt((x * x).mean(axis=-1, keepdims=True) + 1e-6)


class TinyMaskedPredictor:
    """Two-layer multi-head self-attention stack over [image; text] slots."""

    def __init__(
        self,
        length: int = 16,
        num_image_tokens: int = 16,
        vocab_size: int = 50,
        d_model: int = 32,
        num_heads: int = 4,
        num_layers: int = 2,
        seed: int = 0,
        expose_attention: bool = True,
    ) -> None:
        if length < 1 or num_image_tokens < 1 or vocab_size < 2:
            raise ValueError("model dimensions out of range")
        if d_model % num_heads != 0:
            raise ValueError(f"d_model {d_model} not divisible by {num_heads} heads")
        self.length = length
        self.num_image_tokens = num_image_tokens
        self.vocab_size = vocab_size
        self.d_model = d_model
        self.num_heads = num_heads
        self.num_layers = num_layers
        self.seed = seed
        self.expose_attention = expose_attention

        rng = np.random.default_rng(seed)
        scale = 1.0 / math.sqrt(d_model)
        total = num_image_tokens + length
        self._token_emb = rng.normal(0.0, scale, (vocab_size, d_model))
        self._mask_emb = rng.normal(0.0, scale, d_model)
        self._image_emb = rng.normal(0.0, scale, (num_image_tokens, d_model))
        self._pos_emb = rng.normal(0.0, scale, (total, d_model))
        self._layers = [
            {
                name: rng.normal(0.0, scale, (d_model, d_model))
                for name in ("q", "k", "v", "o")
            }
            for _ in range(num_layers)
        ]
        self._out_proj = rng.normal(0.0, scale, (d_model, vocab_size))

    def _attention_block(
        self, x: np.ndarray, layer: dict[str, np.ndarray]
    ) -> tuple[np.ndarray, np.ndarray]:
        heads = self.num_heads
        dk = self.d_model // heads
        total = x.shape[0]

        def split(m: np.ndarray) -> np.ndarray:
            # (total, d) -> (heads, total, dk)
            return m.reshape(total, heads, dk).transpose(1, 0, 2)

        q = split(x @ layer["q"])
        k = split(x @ layer["k"])
        v = split(x @ layer["v"])
        weights = _softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dk))
        mixed = (weights @ v).transpose(1, 0, 2).reshape(total, self.d_model)
        return mixed @ layer["o"], weights

    def predict(self, committed: Mapping[int, int]) -> PredictionBatch:
        for p, token in committed.items():
            if not 0 <= p < self.length:
                raise ValueError(f"committed position {p} outside [0, {self.length})")
            if not 0 <= token < self.vocab_size:
                raise ValueError(f"token id {token} outside vocabulary")
        masked = [p for p in range(self.length) if p not in committed]

        text = np.array(
            [
                self._token_emb[committed[p]] if p in committed else self._mask_emb
                for p in range(self.length)
            ]
        )
        x = np.vstack([self._image_emb, text]) + self._pos_emb
        last_weights = None
        for layer in self._layers:
            update, last_weights = self._attention_block(_rms_norm(x), layer)
            x = x + update
        x = _rms_norm(x)

        n = self.num_image_tokens
        logits = x[n:] @ self._out_proj * LOGIT_GAIN
        probs = _softmax(logits)
        token_probs = {p: probs[p].copy() for p in masked}

        image_attention = None
        if self.expose_attention:
            # final layer, mean over heads, image columns only
            mean = last_weights.mean(axis=0)
            image_attention = {}
            for p in masked:
                row = mean[n + p, :n]
                image_attention[p] = row / row.sum()
        return PredictionBatch(token_probs=token_probs, image_attention=image_attention)
