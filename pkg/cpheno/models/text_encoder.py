import hashlib
import json
import logging
import math
import os
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from cpheno.errors import InputError
from cpheno.models.tokenizer import HashingTokenizer

logger = logging.getLogger(__name__)


def _projection(in_features: int, out_features: int) -> nn.Linear:
    # weights far below the default bias: fresh outputs sit close to normalize(bias)
    linear = nn.Linear(in_features, out_features)
    nn.init.normal_(linear.weight, std=0.02 / (math.sqrt(3) * in_features))
    return linear


class TinyTextEncoder(nn.Module):
    """Small transformer text encoder: mean pooling, linear projection, L2 norm"""

    def __init__(
        self,
        vocab_size: int = 8192,
        embed_dim: int = 256,
        hidden_dim: int = 128,
        num_layers: int = 2,
        num_heads: int = 4,
        max_tokens: int = 256,
    ):
        super(TinyTextEncoder, self).__init__()
        self.arch = dict(
            vocab_size=vocab_size,
            embed_dim=embed_dim,
            hidden_dim=hidden_dim,
            num_layers=num_layers,
            num_heads=num_heads,
            max_tokens=max_tokens,
        )
        self.token_embedding = nn.Embedding(vocab_size, hidden_dim)
        self.position_embedding = nn.Embedding(max_tokens, hidden_dim)
        layer = nn.TransformerEncoderLayer(
            d_model=hidden_dim,
            nhead=num_heads,
            dim_feedforward=2 * hidden_dim,
            dropout=0.0,
            batch_first=True,
        )
        self.transformer = nn.TransformerEncoder(layer, num_layers=num_layers, enable_nested_tensor=False)
        self.projection = _projection(hidden_dim, embed_dim)

    @property
    def dim(self) -> int:
        return self.projection.out_features

    def reset_projection(self, embed_dim: int):
        """New randomly initialised output head of a different width"""
        self.projection = _projection(self.projection.in_features, embed_dim)
        self.arch["embed_dim"] = embed_dim

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        positions = torch.arange(ids.shape[1], device=ids.device)
        h = self.token_embedding(ids) + self.position_embedding(positions)[None, :, :]
        h = self.transformer(h, src_key_padding_mask=~mask)
        weights = mask.unsqueeze(-1).to(h.dtype)
        pooled = (h * weights).sum(dim=1) / weights.sum(dim=1).clamp(min=1.0)
        return F.normalize(self.projection(pooled), dim=-1)


def parameter_checksum(module: nn.Module) -> str:
    digest = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


class TextEncoderHandle:
    """
    Text encoder plus tokenizer

    `forward_texts` keeps the autograd graph for training, `encode` is the
    deterministic inference path returning unit-norm numpy rows.
    """

    def __init__(self, module: TinyTextEncoder, tokenizer: HashingTokenizer, batch_size: int = 256):
        self.module = module
        self.tokenizer = tokenizer
        self.batch_size = batch_size

    @classmethod
    def build(cls, knowledge_config, seed: Optional[int] = None) -> "TextEncoderHandle":
        if seed is not None:
            torch.manual_seed(seed)
        module = TinyTextEncoder(
            vocab_size=knowledge_config.vocab_size,
            embed_dim=knowledge_config.embed_dim,
            hidden_dim=knowledge_config.hidden_dim,
            num_layers=knowledge_config.num_layers,
            num_heads=knowledge_config.num_heads,
            max_tokens=knowledge_config.max_tokens,
        )
        tokenizer = HashingTokenizer(knowledge_config.vocab_size, knowledge_config.max_tokens)
        return cls(module, tokenizer)

    @property
    def dim(self) -> int:
        return self.module.dim

    def parameters(self):
        return self.module.parameters()

    def forward_texts(self, texts: Sequence[str]) -> torch.Tensor:
        ids, mask = self.tokenizer(texts)
        return self.module(ids, mask)

    def encode(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            return np.zeros((0, self.dim), dtype=np.float32)
        was_training = self.module.training
        self.module.eval()
        try:
            with torch.no_grad():
                chunks = [
                    self.forward_texts(list(texts[i : i + self.batch_size]))
                    for i in range(0, len(texts), self.batch_size)
                ]
        finally:
            self.module.train(was_training)
        return torch.cat(chunks).cpu().numpy()

    def checksum(self) -> str:
        return parameter_checksum(self.module)

    def save(self, directory: str, metadata: Optional[dict] = None) -> None:
        os.makedirs(directory, exist_ok=True)
        torch.save(self.module.state_dict(), os.path.join(directory, "weights.pt"))
        payload = {"arch": self.module.arch, "tokenizer": self.tokenizer.to_dict()}
        payload.update(metadata or {})
        with open(os.path.join(directory, "encoder.json"), "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)

    @classmethod
    def load(cls, directory: str) -> "TextEncoderHandle":
        meta_path = os.path.join(directory, "encoder.json")
        weights_path = os.path.join(directory, "weights.pt")
        if not os.path.exists(meta_path) or not os.path.exists(weights_path):
            raise InputError(f"not a text encoder checkpoint: {directory}")
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
        module = TinyTextEncoder(**meta["arch"])
        module.load_state_dict(torch.load(weights_path, map_location="cpu"))
        module.eval()
        logger.info(f"Loaded text encoder from {directory}")
        return cls(module, HashingTokenizer(**meta["tokenizer"]))


def embed_texts(encoder, texts: Sequence[str]) -> np.ndarray:
    """Unit-norm embeddings, one row per text, input order"""
    return encoder.encode(list(texts))
