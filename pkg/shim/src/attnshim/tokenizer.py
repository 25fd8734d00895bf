"""Word-level tokenizer with character offsets.

The analysis side maps label char spans onto token index spans, so every
non-special token must carry exact [start, end) offsets into the prompt.
Ids are stable across runs and machines: words hash into a fixed bucket
space via blake2s, never via salted builtin hash().
"""

import hashlib
import re
from dataclasses import dataclass

BOS_TEXT = "<|start|>"
EOS_TEXT = "<|end|>"
BOS_ID = 0
EOS_ID = 1
N_SPECIAL = 2
WORD_BUCKETS = 4094
VOCAB_SIZE = N_SPECIAL + WORD_BUCKETS

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class Token:
    text: str
    id: int
    start: int | None = None  # char offsets, None for specials
    end: int | None = None
    special: bool = False


def word_id(word: str) -> int:
    digest = hashlib.blake2s(word.encode("utf-8"), digest_size=4).digest()
    return N_SPECIAL + int.from_bytes(digest, "little") % WORD_BUCKETS


def tokenize(text: str) -> list[Token]:
    """Split on whitespace and wrap in BOS/EOS specials."""
    tokens = [Token(BOS_TEXT, BOS_ID, special=True)]
    for m in _WORD_RE.finditer(text):
        tokens.append(Token(m.group(), word_id(m.group()),
                            start=m.start(), end=m.end()))
    tokens.append(Token(EOS_TEXT, EOS_ID, special=True))
    return tokens


def token_ids(tokens: list[Token]) -> list[int]:
    return [t.id for t in tokens]
