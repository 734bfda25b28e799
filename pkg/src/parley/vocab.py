"""Word-level vocabulary with reserved special symbols.

Tokenization is lowercase whitespace splitting. The tokenizer sits behind
these three functions so a subword scheme could be swapped in without
touching callers.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence

from .errors import VocabError

SPECIALS = ("[PAD]", "[CLS]", "[MASK]", "[SOT]", "[BOS]", "[EOS]", "[UNK]")
NUM_SPECIALS = len(SPECIALS)

PAD, CLS, MASK, SOT, BOS, EOS, UNK = range(NUM_SPECIALS)


def tokenize(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Immutable token <-> id bijection; specials pinned to ids 0..6."""

    def __init__(self, content_tokens: Sequence[str]):
        self.id_to_token = list(SPECIALS) + list(content_tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise VocabError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.id_to_token):
            raise VocabError(f"token id {idx} out of range for vocabulary of size {len(self)}")
        return self.id_to_token[idx]

    @staticmethod
    def is_special(idx: int) -> bool:
        return 0 <= idx < NUM_SPECIALS

    @property
    def content_ids(self) -> range:
        return range(NUM_SPECIALS, len(self.id_to_token))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        while tokens and tokens[-1] == "":
            tokens.pop()
        if tuple(tokens[:NUM_SPECIALS]) != SPECIALS:
            raise VocabError(f"vocabulary file {path!r} does not start with the reserved specials")
        return cls(tokens[NUM_SPECIALS:])


def build_vocab(corpus: Iterable[str], min_freq: int = 1,
                max_size: int | None = None) -> Vocabulary:
    """Count lowercased whitespace tokens and keep the most frequent ones.

    Tokens with frequency below ``min_freq`` are dropped; the rest are sorted
    by descending frequency with lexicographic tie-break and truncated so the
    total vocabulary (specials included) does not exceed ``max_size``.
    """
    if min_freq < 1:
        raise VocabError(f"min_freq must be >= 1, got {min_freq}")
    counts: Counter[str] = Counter()
    empty = True
    for utterance in corpus:
        empty = False
        counts.update(tokenize(utterance))
    if empty:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    kept = sorted((tok for tok, c in counts.items() if c >= min_freq),
                  key=lambda tok: (-counts[tok], tok))
    if max_size is not None:
        if max_size < NUM_SPECIALS:
            raise VocabError(f"max_size must be >= {NUM_SPECIALS} to hold the specials")
        kept = kept[:max_size - NUM_SPECIALS]
    return Vocabulary(kept)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Map text to token ids; out-of-vocabulary words become [UNK]."""
    return [vocab.id_of(tok) for tok in tokenize(text)]


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    """Space-join tokens, dropping special symbols except [UNK]."""
    words = []
    for idx in ids:
        idx = int(idx)
        tok = vocab.token_of(idx)
        if vocab.is_special(idx) and idx != UNK:
            continue
        words.append(tok)
    return " ".join(words)
