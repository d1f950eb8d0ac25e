"""Document encoders.

Two implementations share one interface: ``hidden_size`` plus
``encode(texts, pooling) -> (matrix, truncated_count)`` where the matrix
is float32 with one row per text.  ``TransformerEncoder`` wraps a
pretrained model; ``HashingEncoder`` is a dependency-free deterministic
stand-in used offline and in tests.
"""

import hashlib
import logging

import numpy as np

logger = logging.getLogger("trialembed")

DEFAULT_MODEL = "yikuan8/Clinical-Longformer"
OFFLINE_MODEL = "offline-hash"
MAX_TOKENS = 4096
POOLINGS = ("mean", "cls")


class EncoderLoadError(RuntimeError):
    """Model could not be loaded (missing dependency, cache, or network)."""


def _check_pooling(pooling: str):
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


class HashingEncoder:
    """Deterministic feature-hashing encoder.

    Tokens are whitespace-split, hashed into signed buckets, and the
    bucket counts are L2-normalized.  'cls' pooling uses only the first
    separator-delimited segment, mirroring how a CLS token summarizes
    the document head; 'mean' uses every token.  No model download, no
    randomness: the same text always produces the same row.
    """

    def __init__(self, hidden_size: int = 768, max_tokens: int = MAX_TOKENS):
        if hidden_size < 2:
            raise ValueError("hidden_size must be >= 2")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        self.hidden_size = hidden_size
        self.max_tokens = max_tokens

    def _bag(self, tokens) -> np.ndarray:
        row = np.zeros(self.hidden_size, dtype=np.float64)
        for token in tokens:
            digest = hashlib.blake2b(token.encode("utf-8"),
                                     digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            sign = 1.0 if value & 1 == 0 else -1.0
            row[(value >> 1) % self.hidden_size] += sign
        norm = float(np.linalg.norm(row))
        if norm > 0.0:
            row /= norm
        return row

    def encode(self, texts, pooling: str = "mean"):
        _check_pooling(pooling)
        matrix = np.zeros((len(texts), self.hidden_size), dtype=np.float32)
        truncated = 0
        for i, text in enumerate(texts):
            tokens = text.split()
            if len(tokens) > self.max_tokens:
                truncated += 1
                logger.warning("text %d exceeds %d tokens (%d); truncating",
                               i, self.max_tokens, len(tokens))
                tokens = tokens[:self.max_tokens]
            if pooling == "cls":
                head = []
                for token in tokens:
                    if token == "[SEP]":
                        break
                    head.append(token)
                tokens = head
            matrix[i] = self._bag(tokens).astype(np.float32)
        return matrix, truncated


class TransformerEncoder:
    """Pretrained-encoder wrapper (lazy torch/transformers import).

    Runs in eval mode under no_grad, so output is deterministic for a
    fixed model version.  'mean' pools final hidden states under the
    attention mask; 'cls' takes the first token's state.
    """

    def __init__(self, model_id: str = DEFAULT_MODEL,
                 max_tokens: int = MAX_TOKENS, batch_size: int = 8):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        try:
            import torch
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise EncoderLoadError(
                f"transformers/torch unavailable: {exc}") from exc
        try:
            self._tokenizer = AutoTokenizer.from_pretrained(model_id)
            self._model = AutoModel.from_pretrained(model_id)
        except Exception as exc:  # hub/cache/network failures vary widely
            raise EncoderLoadError(
                f"could not load model {model_id!r}: {exc}") from exc
        self._torch = torch
        self._model.eval()
        self.max_tokens = min(max_tokens,
                              getattr(self._model.config,
                                      "max_position_embeddings", max_tokens))
        self.batch_size = batch_size
        self.hidden_size = int(self._model.config.hidden_size)

    def encode(self, texts, pooling: str = "mean"):
        _check_pooling(pooling)
        torch = self._torch
        rows = []
        truncated = 0
        for start in range(0, len(texts), self.batch_size):
            chunk = list(texts[start:start + self.batch_size])
            for j, text in enumerate(chunk):
                n_tokens = len(self._tokenizer(text,
                                               truncation=False)["input_ids"])
                if n_tokens > self.max_tokens:
                    truncated += 1
                    logger.warning(
                        "text %d exceeds %d tokens (%d); truncating",
                        start + j, self.max_tokens, n_tokens)
            batch = self._tokenizer(chunk, truncation=True,
                                    max_length=self.max_tokens, padding=True,
                                    return_tensors="pt")
            with torch.no_grad():
                hidden = self._model(**batch).last_hidden_state
            if pooling == "cls":
                pooled = hidden[:, 0]
            else:
                mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
                pooled = (hidden * mask).sum(1) / mask.sum(1).clamp(min=1.0)
            rows.append(pooled.to(torch.float32).cpu().numpy())
        matrix = (np.concatenate(rows, axis=0) if rows
                  else np.zeros((0, self.hidden_size), dtype=np.float32))
        return matrix, truncated


def load_encoder(model_id: str, max_tokens: int = MAX_TOKENS,
                 batch_size: int = 8):
    if model_id == OFFLINE_MODEL:
        return HashingEncoder(max_tokens=max_tokens)
    return TransformerEncoder(model_id, max_tokens=max_tokens,
                              batch_size=batch_size)
