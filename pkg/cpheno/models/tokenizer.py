import re
import zlib
from typing import List, Sequence, Tuple

import torch

PAD_ID = 0
UNK_ID = 1

_TOKEN = re.compile(r"\w+|[^\w\s]")


class HashingTokenizer:
    """
    Lower-cased word/punctuation tokenizer with hashed ids

    Ids are `2 + crc32(token) % (vocab_size - 2)`, so the Stage-1 encoder and
    any student initialised from it share a vocabulary without fitting one.
    Sequences longer than max_tokens are truncated.
    """

    def __init__(self, vocab_size: int = 8192, max_tokens: int = 256):
        if vocab_size < 3:
            raise ValueError("vocab_size must be at least 3")
        self.vocab_size = vocab_size
        self.max_tokens = max_tokens

    def tokenize(self, text: str) -> List[str]:
        return _TOKEN.findall(text.lower())[: self.max_tokens]

    def token_id(self, token: str) -> int:
        return 2 + zlib.crc32(token.encode("utf-8")) % (self.vocab_size - 2)

    def __call__(self, texts: Sequence[str]) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Returns:
            tuple: (ids LongTensor n x L, mask BoolTensor n x L); empty texts
            become a single UNK token
        """
        rows = [[self.token_id(t) for t in self.tokenize(text)] or [UNK_ID] for text in texts]
        length = max((len(r) for r in rows), default=1)
        ids = torch.full((len(rows), length), PAD_ID, dtype=torch.long)
        mask = torch.zeros((len(rows), length), dtype=torch.bool)
        for i, row in enumerate(rows):
            ids[i, : len(row)] = torch.tensor(row, dtype=torch.long)
            mask[i, : len(row)] = True
        return ids, mask

    def to_dict(self) -> dict:
        return {"vocab_size": self.vocab_size, "max_tokens": self.max_tokens}
