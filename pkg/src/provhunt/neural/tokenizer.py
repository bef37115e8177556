"""Word-level tokenizer with fixed special ids.

Special tokens and ids: ``[CLS]=0``, ``[MASK]=1``, ``[PAD]=2``, ``[UNK]=3``.
Text is split on whitespace; path separators and punctuation become their
own tokens, and a trailing period is split off a word (``b.txt.`` ->
``b.txt`` ``.``) so file names survive intact.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from typing import Iterable, Sequence

import torch

SPECIALS = ("[CLS]", "[MASK]", "[PAD]", "[UNK]")
CLS_ID, MASK_ID, PAD_ID, UNK_ID = range(4)

_TOKEN = re.compile(r"[/\\]|[()\[\]{}\"',;:!?<>]|[^\s/\\()\[\]{}\"',;:!?<>]+")


def split_words(text: str) -> list[str]:
    out = []
    for tok in _TOKEN.findall(text):
        if len(tok) > 1 and tok.endswith("."):
            stem = tok.rstrip(".")
            if stem:
                out.append(stem)
                out.extend("." * (len(tok) - len(stem)))
                continue
        out.append(tok)
    return out


class Tokenizer:
    def __init__(self, vocab: Sequence[str], max_len: int = 256):
        vocab = list(vocab)
        if tuple(vocab[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(vocab)) != len(vocab):
            raise ValueError("vocabulary has duplicate entries")
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        self.vocab = vocab
        self.max_len = max_len
        self.index = {tok: i for i, tok in enumerate(vocab)}

    @classmethod
    def build(cls, texts: Iterable[str], max_len: int = 256, max_size: int | None = None,
              min_freq: int = 1) -> "Tokenizer":
        counts = Counter()
        for text in texts:
            counts.update(split_words(text))
        for s in SPECIALS:
            counts.pop(s, None)
        words = sorted((w for w, c in counts.items() if c >= min_freq), key=lambda w: (-counts[w], w))
        if max_size is not None:
            words = words[: max(0, max_size - len(SPECIALS))]
        return cls(list(SPECIALS) + words, max_len=max_len)

    def __len__(self):
        return len(self.vocab)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.vocab).encode("utf-8")).hexdigest()

    def encode(self, text: str) -> list[int]:
        ids = [CLS_ID] + [self.index.get(w, UNK_ID) for w in split_words(text)]
        return ids[: self.max_len]

    def decode(self, ids: Iterable[int]) -> str:
        skip = {CLS_ID, PAD_ID}
        return " ".join(self.vocab[i] for i in ids if i not in skip)

    def batch(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        """Encode and right-pad; returns ``(ids, pad_mask)`` with True at padding."""
        encoded = [self.encode(t) for t in texts]
        width = max(len(e) for e in encoded)
        ids = torch.full((len(encoded), width), PAD_ID, dtype=torch.long)
        for row, e in enumerate(encoded):
            ids[row, : len(e)] = torch.tensor(e, dtype=torch.long)
        return ids, ids.eq(PAD_ID)
