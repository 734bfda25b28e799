"""Dialog corpus pipeline: pair extraction, span masking, length-sorted batching.

Dataset files are JSON Lines, one object per line:
    {"turns": ["...", ...], "knowledge": ["...", ...]?}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import vocab as V
from .errors import DataError, SchemaError
from .tensor import RngState
from .vocab import Vocabulary

KNOWLEDGE_ROLE = 2  # role id shared by [CLS] and knowledge tokens
DEFAULT_MASK_RATE = 0.15
DEFAULT_SPAN_LEN = 3


@dataclass
class DialogInstance:
    """A multi-turn conversation, optionally preceded by knowledge strings."""
    turns: list[str]
    knowledge: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.turns:
            raise DataError("a dialog instance needs at least one turn")


@dataclass
class ContextResponsePair:
    """One (context, response) training sample with per-token position tags."""
    context_ids: list[int]
    turn_ids: list[int]
    role_ids: list[int]
    response_ids: list[int]  # content ids only; [BOS]/[EOS] are added downstream


@dataclass
class MaskedBatch:
    """Length-padded arrays for a batch of pairs; padding only at tails."""
    context: np.ndarray        # int64 [rows, max_ctx_len]
    turn_ids: np.ndarray       # int64, same shape
    role_ids: np.ndarray       # int64, same shape
    is_pad: np.ndarray         # bool, same shape
    context_lens: np.ndarray   # int64 [rows]
    response: np.ndarray       # int64 [rows, max_resp_len], content ids
    response_lens: np.ndarray  # int64 [rows]
    mask_records: list[list[tuple[int, int]]]  # per row: (position, original id)

    @property
    def num_rows(self) -> int:
        return self.context.shape[0]


def build_context(turns: list[str], knowledge: list[str],
                  vocab: Vocabulary) -> tuple[list[int], list[int], list[int]]:
    """Assemble [CLS] + [SOT]-prefixed knowledge + dialog turns with position tags.

    Turn ids count turns chronologically from 0 (knowledge rides along with
    turn 0). Speaker roles alternate 0/1 counted backwards so the
    last context turn always carries role 1; [CLS] and knowledge carry role 2.
    """
    ids = [V.CLS]
    turn_tags = [0]
    role_tags = [KNOWLEDGE_ROLE]
    for piece in knowledge:
        piece_ids = [V.SOT] + V.encode(piece, vocab)
        ids.extend(piece_ids)
        turn_tags.extend([0] * len(piece_ids))
        role_tags.extend([KNOWLEDGE_ROLE] * len(piece_ids))
    n = len(turns)
    for j, turn in enumerate(turns):
        turn_ids = V.encode(turn, vocab)
        role = 1 if (n - 1 - j) % 2 == 0 else 0
        ids.extend(turn_ids)
        turn_tags.extend([j] * len(turn_ids))
        role_tags.extend([role] * len(turn_ids))
    return ids, turn_tags, role_tags


def extract_pairs(instance: DialogInstance, vocab: Vocabulary) -> list[ContextResponsePair]:
    """Split an n-turn dialog into n-1 (context, response) samples."""
    pairs = []
    for i in range(1, len(instance.turns)):
        ctx, turn_tags, role_tags = build_context(instance.turns[:i], instance.knowledge, vocab)
        pairs.append(ContextResponsePair(
            context_ids=ctx,
            turn_ids=turn_tags,
            role_ids=role_tags,
            response_ids=V.encode(instance.turns[i], vocab),
        ))
    return pairs


def span_seed_count(maskable_len: int, span_len: int, rate: float = DEFAULT_MASK_RATE) -> int:
    """Number of span seeds so that roughly ``rate`` of maskable tokens get masked."""
    return int(round(rate * maskable_len / span_len))


def mask_spans(context_ids: list[int], n_seeds: int, span_len: int, rng: RngState,
               vocab: Vocabulary) -> tuple[list[int], list[tuple[int, int]]]:
    """Corrupt spans of the context for denoising training.

    Seeds are sampled uniformly among non-special positions and extended
    rightward to ``span_len``; the union is clipped to the sequence, special
    positions are skipped, and each selected token is replaced by [MASK]
    (p=0.8), a random content token (p=0.1), or kept (p=0.1). Returns the
    corrupted ids plus (position, original id) records for reconstruction.
    """
    if span_len < 1:
        raise DataError(f"span_len must be >= 1, got {span_len}")
    maskable = [i for i, t in enumerate(context_ids) if not Vocabulary.is_special(t)]
    if not maskable or n_seeds <= 0:
        return list(context_ids), []
    n_seeds = min(n_seeds, len(maskable))
    seeds = rng.choice(maskable, size=n_seeds, replace=False)
    selected = sorted({
        pos for s in seeds for pos in range(int(s), min(int(s) + span_len, len(context_ids)))
        if not Vocabulary.is_special(context_ids[pos])
    })
    corrupted = list(context_ids)
    records = []
    content_lo, content_hi = V.NUM_SPECIALS, len(vocab)
    for pos in selected:
        records.append((pos, context_ids[pos]))
        u = float(rng.uniform())
        if u < 0.8:
            corrupted[pos] = V.MASK
        elif u < 0.9:
            corrupted[pos] = int(rng.integers(content_lo, content_hi))
        # else: keep the original token
    return corrupted, records


def split_short_long(pairs: list[ContextResponsePair],
                     context_len_threshold: int) -> tuple[list[ContextResponsePair],
                                                          list[ContextResponsePair]]:
    """Partition pairs by context length (<= threshold goes to the short side)."""
    if context_len_threshold <= 0:
        raise DataError(f"context length threshold must be positive, got {context_len_threshold}")
    short = [p for p in pairs if len(p.context_ids) <= context_len_threshold]
    long = [p for p in pairs if len(p.context_ids) > context_len_threshold]
    return short, long


def sort_and_batch(pairs: list[ContextResponsePair],
                   max_tokens_per_batch: int) -> list[MaskedBatch]:
    """Stable-sort by context length, then greedily fill token-budgeted batches.

    The budget bounds rows * longest_context_in_batch, which caps the padded
    context matrix size.
    """
    ordered = sorted(pairs, key=lambda p: len(p.context_ids))
    batches: list[list[ContextResponsePair]] = []
    current: list[ContextResponsePair] = []
    for p in ordered:
        length = len(p.context_ids)
        if length > max_tokens_per_batch:
            raise DataError(
                f"pair with context length {length} (index {pairs.index(p)}) exceeds "
                f"the batch token budget {max_tokens_per_batch}")
        # lengths ascend, so the incoming pair sets the batch-wide max
        if current and (len(current) + 1) * length > max_tokens_per_batch:
            batches.append(current)
            current = []
        current.append(p)
    if current:
        batches.append(current)
    return [collate(group) for group in batches]


def collate(pairs: list[ContextResponsePair]) -> MaskedBatch:
    """Pad a group of pairs into rectangular id matrices (pads at the tail)."""
    if not pairs:
        raise DataError("cannot collate an empty group of pairs")
    rows = len(pairs)
    ctx_len = max(len(p.context_ids) for p in pairs)
    resp_len = max((len(p.response_ids) for p in pairs), default=0)
    context = np.full((rows, ctx_len), V.PAD, dtype=np.int64)
    turn_ids = np.zeros((rows, ctx_len), dtype=np.int64)
    role_ids = np.zeros((rows, ctx_len), dtype=np.int64)
    is_pad = np.ones((rows, ctx_len), dtype=bool)
    response = np.full((rows, max(resp_len, 1)), V.PAD, dtype=np.int64)
    ctx_lens = np.zeros(rows, dtype=np.int64)
    resp_lens = np.zeros(rows, dtype=np.int64)
    for r, p in enumerate(pairs):
        L = len(p.context_ids)
        context[r, :L] = p.context_ids
        turn_ids[r, :L] = p.turn_ids
        role_ids[r, :L] = p.role_ids
        is_pad[r, :L] = False
        ctx_lens[r] = L
        T = len(p.response_ids)
        response[r, :T] = p.response_ids
        resp_lens[r] = T
    return MaskedBatch(context, turn_ids, role_ids, is_pad, ctx_lens,
                       response, resp_lens, [[] for _ in range(rows)])


def mask_batch(batch: MaskedBatch, span_len: int, rate: float, rng: RngState,
               vocab: Vocabulary) -> MaskedBatch:
    """Apply span masking to every context row of a batch (pretraining only)."""
    context = batch.context.copy()
    records: list[list[tuple[int, int]]] = []
    for r in range(batch.num_rows):
        L = int(batch.context_lens[r])
        ids = list(batch.context[r, :L])
        maskable = sum(1 for t in ids if not Vocabulary.is_special(int(t)))
        corrupted, recs = mask_spans(
            [int(t) for t in ids], span_seed_count(maskable, span_len, rate),
            span_len, rng, vocab)
        context[r, :L] = corrupted
        records.append(recs)
    return MaskedBatch(context, batch.turn_ids, batch.role_ids, batch.is_pad,
                       batch.context_lens, batch.response, batch.response_lens, records)


def load_jsonl(path: str) -> list[DialogInstance]:
    """Read dialog instances from a JSON Lines file; errors carry line numbers."""
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict) or "turns" not in obj:
                raise SchemaError(f"{path}:{lineno}: missing required field 'turns'")
            turns = obj["turns"]
            if (not isinstance(turns, list) or not turns
                    or not all(isinstance(t, str) for t in turns)):
                raise SchemaError(f"{path}:{lineno}: 'turns' must be a non-empty array of strings")
            knowledge = obj.get("knowledge", [])
            if not isinstance(knowledge, list) or not all(isinstance(k, str) for k in knowledge):
                raise SchemaError(f"{path}:{lineno}: 'knowledge' must be an array of strings")
            instances.append(DialogInstance(turns=turns, knowledge=knowledge))
    return instances
