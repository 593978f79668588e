import hashlib
import json
import logging
import os
import threading
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from cpheno.models.text_encoder import TextEncoderHandle

logger = logging.getLogger(__name__)


class TeacherHandle:
    """
    Frozen Stage-1 encoder used as distillation teacher

    Wraps anything exposing `encode(texts) -> unit-norm rows` and `dim`.
    Parameters of a wrapped torch module are frozen and kept in eval mode.
    """

    def __init__(self, encoder):
        self.encoder = encoder
        module = getattr(encoder, "module", None)
        if isinstance(module, torch.nn.Module):
            module.eval()
            for param in module.parameters():
                param.requires_grad = False

    @classmethod
    def load(cls, directory: str) -> "TeacherHandle":
        return cls(TextEncoderHandle.load(directory))

    @property
    def dim(self) -> int:
        return self.encoder.dim

    def encode(self, captions: Sequence[str]) -> np.ndarray:
        with torch.no_grad():
            return np.asarray(self.encoder.encode(list(captions)), dtype=np.float32)

    def checksum(self) -> str:
        if hasattr(self.encoder, "checksum"):
            return self.encoder.checksum()
        return type(self.encoder).__name__


def caption_key(caption: str) -> str:
    return hashlib.sha256(caption.encode("utf-8")).hexdigest()


class TeacherCache:
    """
    Append-only caption -> teacher embedding cache

    Persisted as JSONL when a path is given: a header row
    `{"teacher": checksum, "dim": d}` followed by rows
    `{"key": sha256(caption), "embedding": [...]}`. A file written by another
    teacher or at another width is discarded on load. Lookups are lock-free
    reads, inserts take the lock.
    """

    def __init__(self, teacher: TeacherHandle, path: Optional[str] = None):
        self.teacher = teacher
        self.path = path
        self.header = {"teacher": teacher.checksum(), "dim": int(teacher.dim)}
        self._store: Dict[str, np.ndarray] = {}
        self._lock = threading.Lock()
        if path and os.path.exists(path):
            self._load(path)

    def _load(self, path: str) -> None:
        with open(path, "r", encoding="utf-8") as f:
            rows = [json.loads(line) for line in f if line.strip()]
        if not rows or rows[0] != self.header:
            found = rows[0] if rows and "teacher" in rows[0] else None
            logger.warning(f"Discarding teacher cache {path}: written for {found}, expected {self.header}")
            os.remove(path)
            return
        for row in rows[1:]:
            self._store[row["key"]] = np.asarray(row["embedding"], dtype=np.float32)
        logger.info(f"Loaded {len(self._store)} cached teacher embeddings from {path}")

    def __len__(self):
        return len(self._store)

    def lookup(self, captions: Sequence[str]) -> torch.Tensor:
        keys = [caption_key(c) for c in captions]
        missing = {}
        for key, caption in zip(keys, captions):
            if key not in self._store:
                missing.setdefault(key, caption)
        if missing:
            vectors = self.teacher.encode(list(missing.values()))
            with self._lock:
                new_rows = []
                for key, vector in zip(missing, vectors):
                    if key not in self._store:
                        self._store[key] = vector
                        new_rows.append(key)
                if self.path and new_rows:
                    os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
                    fresh = not os.path.exists(self.path)
                    with open(self.path, "a", encoding="utf-8") as f:
                        if fresh:
                            f.write(json.dumps(self.header) + "\n")
                        for key in new_rows:
                            f.write(json.dumps({"key": key, "embedding": self._store[key].tolist()}) + "\n")
        return torch.from_numpy(np.stack([self._store[k] for k in keys]))
