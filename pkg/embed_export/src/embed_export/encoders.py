"""Text encoders behind a common batched interface.

Two families are provided:

* ``hash:<dim>`` — a deterministic feature-hashing encoder. Each token maps
  to a fixed pseudo-random vector seeded from its digest, pooled over the
  (truncated) token sequence. No model download, fully reproducible; the
  default for offline runs and tests.
* any other identifier — resolved as a Hugging Face model via the optional
  ``transformers`` dependency.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

POOLING_MODES = ("cls", "mean")


@dataclass(frozen=True)
class ExportConfig:
    model: str = "hash:64"
    pooling: str = "mean"
    max_sequence_length: int = 256
    batch_size: int = 32
    normalize: bool = True

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ValueError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.max_sequence_length < 1:
            raise ValueError("max_sequence_length must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class HashingEncoder:
    """Deterministic per-token pseudo-embeddings pooled per text.

    ``cls`` pooling hashes the whole truncated sequence into one vector;
    ``mean`` pooling averages the token vectors. Empty texts map to the
    vector of the empty token so rows are never zero.
    """

    def __init__(self, dim: int, cfg: ExportConfig):
        if dim < 1:
            raise ValueError(f"hash encoder dim must be >= 1, got {dim}")
        self.dim = dim
        self.cfg = cfg
        self.truncated = 0

    @staticmethod
    def _tokens(text: str) -> list[str]:
        return text.split()

    def _vector(self, key: str) -> np.ndarray:
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        seed = int.from_bytes(digest, "little")
        rng = np.random.Generator(np.random.PCG64(seed))
        return rng.standard_normal(self.dim)

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        out = np.empty((len(texts), self.dim), dtype=np.float64)
        limit = self.cfg.max_sequence_length
        for row, text in enumerate(texts):
            tokens = self._tokens(text)
            if len(tokens) > limit:
                tokens = tokens[:limit]
                self.truncated += 1
            if self.cfg.pooling == "cls":
                out[row] = self._vector("\x1f".join(tokens))
            else:
                if tokens:
                    out[row] = np.mean([self._vector(t) for t in tokens], axis=0)
                else:
                    out[row] = self._vector("")
        return out


class TransformersEncoder:
    """Hugging Face encoder with cls or attention-masked mean pooling."""

    def __init__(self, model_id: str, cfg: ExportConfig):
        try:
            import torch  # noqa: F401
            from transformers import AutoModel, AutoTokenizer
        except ImportError as exc:
            raise RuntimeError(
                "transformers/torch are required for non-hash model identifiers; "
                "install the [transformers] extra or use a hash:<dim> model"
            ) from exc
        self._torch = torch
        self.tokenizer = AutoTokenizer.from_pretrained(model_id)
        self.model = AutoModel.from_pretrained(model_id)
        self.model.eval()
        self.dim = int(self.model.config.hidden_size)
        self.cfg = cfg
        self.truncated = 0

    def encode_batch(self, texts: list[str]) -> np.ndarray:
        torch = self._torch
        lengths = [
            len(self.tokenizer(t, truncation=False)["input_ids"]) for t in texts
        ]
        self.truncated += sum(1 for n in lengths if n > self.cfg.max_sequence_length)
        batch = self.tokenizer(
            texts,
            padding=True,
            truncation=True,
            max_length=self.cfg.max_sequence_length,
            return_tensors="pt",
        )
        with torch.no_grad():
            output = self.model(**batch)
        hidden = output.last_hidden_state
        if self.cfg.pooling == "cls":
            pooled = hidden[:, 0]
        else:
            mask = batch["attention_mask"].unsqueeze(-1).to(hidden.dtype)
            pooled = (hidden * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1)
        return pooled.cpu().numpy().astype(np.float64)


def build_encoder(cfg: ExportConfig):
    if cfg.model.startswith("hash:"):
        return HashingEncoder(int(cfg.model.split(":", 1)[1]), cfg)
    return TransformersEncoder(cfg.model, cfg)
