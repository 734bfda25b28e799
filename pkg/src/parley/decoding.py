"""Response generation: latent sampling plus greedy, beam, and top-K decoding.

The search algorithms are written against a step function
``step_fn(prefix_ids) -> log-prob vector`` so they can be exercised with
hand-built toy models; ``model_step_fn`` adapts a trained model. Only the
main-stream (next-token) logits drive decoding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocab as V
from .data import build_context
from .errors import ConfigError
from .model import DialogModel, EncoderOutput, MemoryVector
from .tensor import RngState, Tensor, no_grad, reparameterize

STRATEGIES = ("greedy", "beam", "topk")
LATENT_MODES = ("prior_network", "standard_normal", "none")


@dataclass
class DecodeConfig:
    strategy: str = "beam"
    beam_size: int = 5
    k: int = 100
    max_len: int = 32
    latent_mode: str = "prior_network"
    length_penalty: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown decode strategy {self.strategy!r}")
        if self.latent_mode not in LATENT_MODES:
            raise ConfigError(f"unknown latent mode {self.latent_mode!r}")
        if self.beam_size < 1 or self.k < 1 or self.max_len < 1:
            raise ConfigError("beam_size, k and max_len must all be >= 1")


def greedy_decode(step_fn, eos_id: int, max_len: int) -> list[int]:
    """Repeatedly append the argmax token (ties break to the lowest id)."""
    tokens: list[int] = []
    for _ in range(max_len):
        nxt = int(np.argmax(step_fn(tokens)))
        if nxt == eos_id:
            break
        tokens.append(nxt)
    return tokens


def beam_search(step_fn, eos_id: int, max_len: int, beam_size: int,
                length_penalty: float = 1.0) -> list[int]:
    """Length-normalized beam search.

    Hypotheses are scored by total log-prob divided by emission count (the
    closing [EOS] counts as an emission) raised to ``length_penalty``.
    Finished hypotheses retire from the beam; the best finished one wins,
    falling back to the best unfinished hypothesis at max_len.
    """
    live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[tuple[int, ...], float, int]] = []
    for _ in range(max_len):
        candidates: list[tuple[tuple[int, ...], float]] = []
        for tokens, logp in live:
            step_logp = step_fn(list(tokens))
            for tok in map(int, _top_ids(step_logp, beam_size)):
                total = logp + float(step_logp[tok])
                if tok == eos_id:
                    finished.append((tokens, total, len(tokens) + 1))
                else:
                    candidates.append((tokens + (tok,), total))
        candidates.sort(key=lambda item: -item[1])
        live = candidates[:beam_size]
        if not live:
            break

    def normalized(logp: float, emissions: int) -> float:
        return logp / (emissions ** length_penalty)

    if finished:
        best = max(finished, key=lambda item: normalized(item[1], item[2]))
        return list(best[0])
    if not live:
        return []
    best_live = max(live, key=lambda item: normalized(item[1], max_len))
    return list(best_live[0])


def topk_sample(step_fn, eos_id: int, max_len: int, k: int, rng: RngState) -> list[int]:
    """Sample each step from the renormalized top-k of the distribution."""
    tokens: list[int] = []
    for _ in range(max_len):
        logp = step_fn(tokens)
        keep = _top_ids(logp, min(k, _num_finite(logp)))
        keep = [int(t) for t in keep]
        logp = np.asarray(logp)
        kept_logp = logp[keep]
        probs = np.exp(kept_logp - kept_logp.max())
        probs /= probs.sum()
        nxt = int(rng.choice(keep, p=probs))
        if nxt == eos_id:
            break
        tokens.append(nxt)
    return tokens


def _top_ids(logp: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties broken toward lower ids."""
    order = np.lexsort((np.arange(len(logp)), -logp))
    return order[:k]


def _num_finite(logp: np.ndarray) -> int:
    return max(1, int(np.isfinite(logp).sum()))


# -- model adapters -----------------------------------------------------------

def sample_latent(model: DialogModel, enc: EncoderOutput, mode: str,
                  rng: RngState) -> Tensor | None:
    """Draw the latent vector used for one whole decoded response."""
    if mode == "none":
        return None
    if not model.config.use_latent:
        raise ConfigError(f"latent mode {mode!r} requires a model with use_latent=true")
    if mode == "standard_normal":
        return Tensor(rng.normal(model.config.latent_size))
    if mode == "prior_network":
        mu, logvar = model.prior_network(enc.h_cls)
        return reparameterize(mu, logvar, rng)
    raise ConfigError(f"unknown latent mode {mode!r}")


def model_step_fn(model: DialogModel, enc: EncoderOutput,
                  memory: MemoryVector | None):
    """Next-token log-prob function over generated prefixes.

    Control symbols that must never be emitted ([PAD], [CLS], [MASK], [SOT],
    [BOS]) are masked out before normalization.
    """
    banned = np.array([V.PAD, V.CLS, V.MASK, V.SOT, V.BOS])

    def step(prefix: list[int]) -> np.ndarray:
        ids = np.array([V.BOS] + list(prefix), dtype=np.int64)
        with no_grad():
            logits = model.decode_streams(ids, enc, memory)[0]
        row = logits.data[-1].copy()
        row[banned] = -np.inf
        shifted = row - row[np.isfinite(row)].max()
        return shifted - np.log(np.exp(np.where(np.isfinite(shifted), shifted, -np.inf)).sum())

    return step


def fit_context(turns: list[str], knowledge: list[str], vocab, config):
    """Build a context that respects the model's position and turn budgets.

    Oldest turns are dropped first; a single oversized turn keeps only its
    most recent tokens.
    """
    turns = list(turns)
    max_turns = config.max_turns
    if len(turns) > max_turns:
        turns = turns[-max_turns:]
    ids, turn_tags, role_tags = build_context(turns, knowledge, vocab)
    while len(ids) > config.max_positions and len(turns) > 1:
        turns = turns[1:]
        ids, turn_tags, role_tags = build_context(turns, knowledge, vocab)
    if len(ids) > config.max_positions:
        overflow = len(ids) - config.max_positions
        words = turns[-1].split()
        turns[-1] = " ".join(words[overflow:])
        ids, turn_tags, role_tags = build_context(turns, knowledge, vocab)
        ids = ids[:config.max_positions]
        turn_tags = turn_tags[:config.max_positions]
        role_tags = role_tags[:config.max_positions]
    return ids, turn_tags, role_tags


def generate_response(model: DialogModel, vocab, turns: list[str], knowledge: list[str],
                      dcfg: DecodeConfig, seed: int | None = None) -> str:
    """Encode the dialog context, sample one latent, decode one response."""
    rng = RngState(dcfg.seed if seed is None else seed)
    ids, turn_tags, role_tags = fit_context(turns, knowledge, vocab, model.config)
    with no_grad():
        enc = model.encode(np.array(ids), turn_tags, role_tags)
        z = sample_latent(model, enc, dcfg.latent_mode, rng)
        memory = model.memory_project(z) if z is not None else None
    step = model_step_fn(model, enc, memory)
    if dcfg.strategy == "greedy":
        out = greedy_decode(step, V.EOS, dcfg.max_len)
    elif dcfg.strategy == "beam":
        out = beam_search(step, V.EOS, dcfg.max_len, dcfg.beam_size, dcfg.length_penalty)
    else:
        out = topk_sample(step, V.EOS, dcfg.max_len, dcfg.k, rng)
    return V.decode(out, vocab)
