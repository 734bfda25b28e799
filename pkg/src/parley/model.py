"""Latent-variable transformer encoder-decoder for dialog response generation.

The encoder reads the dialog context (with turn/role-aware position
information); a prior MLP maps the [CLS] state to a Gaussian over a latent
vector, which is projected to one extra key/value slot that every decoder
self-attention layer can attend; the decoder runs a causal main stream plus
optional future-predicting streams that each emit logits one extra step
ahead. Blocks are pre-norm residual throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .tensor import (RngState, Tensor, concat, gather_cols, layer_norm, masked_fill,
                     matmul, narrow, softmax, take_rows)

NEG_INF = -1e30


@dataclass
class ModelConfig:
    vocab_size: int
    hidden_size: int = 64
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    num_heads: int = 4
    ff_size: int = 128
    latent_size: int = 16
    ngram: int = 2
    max_positions: int = 128
    max_turns: int = 16
    num_roles: int = 3
    use_turn_ape: bool = True
    use_role_ape: bool = True
    use_token_rpe: bool = False
    use_turn_rpe: bool = False
    rpe_num_buckets: int = 16
    rpe_max_distance: int = 64
    free_bits: float = 0.5
    use_latent: bool = True

    def __post_init__(self):
        if self.hidden_size % self.num_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} must be divisible by num_heads {self.num_heads}")
        if self.ngram < 1:
            raise ConfigError(f"ngram must be >= 1, got {self.ngram}")
        if self.use_latent and self.latent_size < 1:
            raise ConfigError(f"latent_size must be >= 1 when use_latent, got {self.latent_size}")
        if self.vocab_size < 8:
            raise ConfigError(f"vocab_size {self.vocab_size} leaves no room beyond the specials")
        if self.num_roles < 3:
            raise ConfigError("num_roles must be >= 3 (two speakers plus knowledge)")
        if self.use_token_rpe or self.use_turn_rpe:
            if self.rpe_num_buckets < 2:
                raise ConfigError(f"rpe_num_buckets must be >= 2, got {self.rpe_num_buckets}")
            if self.rpe_max_distance <= self.rpe_num_buckets // 2:
                raise ConfigError(
                    f"rpe_max_distance {self.rpe_max_distance} must exceed half the bucket "
                    f"count {self.rpe_num_buckets // 2}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


@dataclass
class EncoderOutput:
    hidden: Tensor            # [len, H]
    h_cls: Tensor             # [H]
    is_pad: np.ndarray | None


@dataclass
class MemoryVector:
    key: Tensor               # [H]
    value: Tensor             # [H]


# -- relative position bucketing ----------------------------------------------

def bucket_offsets(offsets, num_buckets: int, max_distance: int) -> np.ndarray:
    """Map signed offsets to buckets in [0, 2*num_buckets).

    The first half of the positive range is exact (|d| < num_buckets // 2),
    the rest is log-spaced up to max_distance and clamped beyond; negative
    offsets occupy a mirrored second block of num_buckets.
    """
    off = np.asarray(offsets, dtype=np.int64)
    negative = off < 0
    n = np.abs(off)
    exact = num_buckets // 2
    with np.errstate(divide="ignore"):
        scaled = (np.log(np.maximum(n, 1) / exact)
                  / math.log(max_distance / exact) * (num_buckets - exact))
    large = np.minimum(exact + scaled.astype(np.int64), num_buckets - 1)
    bucket = np.where(n < exact, n, large)
    return (bucket + negative * num_buckets).astype(np.int64)


def relative_bucket(d_token: int, d_turn: int, config: ModelConfig) -> int:
    """Combined bucket index for a (token offset, turn offset) pair."""
    if not (config.use_token_rpe or config.use_turn_rpe):
        raise ConfigError("relative_bucket requires at least one relative-position flag")
    B, M = config.rpe_num_buckets, config.rpe_max_distance
    tok = int(bucket_offsets(d_token, B, M))
    trn = int(bucket_offsets(d_turn, B, M))
    if config.use_token_rpe and config.use_turn_rpe:
        return tok * (2 * B) + trn
    return tok if config.use_token_rpe else trn


def num_relative_buckets(config: ModelConfig) -> int:
    per_axis = 2 * config.rpe_num_buckets
    return per_axis * per_axis if (config.use_token_rpe and config.use_turn_rpe) else per_axis


def _bucket_matrix(length: int, turn_ids, config: ModelConfig) -> np.ndarray:
    pos = np.arange(length)
    d_token = pos[None, :] - pos[:, None]
    turns = np.asarray(turn_ids, dtype=np.int64)
    d_turn = turns[None, :] - turns[:, None]
    B, M = config.rpe_num_buckets, config.rpe_max_distance
    if config.use_token_rpe and config.use_turn_rpe:
        return bucket_offsets(d_token, B, M) * (2 * B) + bucket_offsets(d_turn, B, M)
    return bucket_offsets(d_token if config.use_token_rpe else d_turn, B, M)


# -- attention ------------------------------------------------------------------

def attention_with_relative_bias(q: Tensor, k: Tensor, v: Tensor,
                                 bias_table: Tensor | None = None,
                                 bucket_matrix: np.ndarray | None = None,
                                 blocked: np.ndarray | None = None) -> Tensor:
    """Single-head scaled dot-product attention with optional key-side bias.

    Scores are q_i . (k_j + a_ij) / sqrt(d) where a_ij is looked up from
    ``bias_table`` by ``bucket_matrix[i, j]``; ``blocked`` marks key positions
    each query must not attend.
    """
    d = q.shape[-1]
    scale = 1.0 / math.sqrt(d)
    scores = matmul(q, k.transpose()) * scale
    if bias_table is not None:
        scores = scores + gather_cols(matmul(q, bias_table.transpose()), bucket_matrix) * scale
    if blocked is not None:
        scores = masked_fill(scores, blocked, NEG_INF)
    return matmul(softmax(scores, axis=-1), v)


class DialogModel:
    """Owns the parameter tensors and the forward computations."""

    def __init__(self, config: ModelConfig, rng: RngState):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._init_params(rng)

    # -- parameters -------------------------------------------------------------

    def _weight(self, name: str, shape, rng: RngState):
        # fan-in scaling keeps activations O(1) at any width
        std = 1.0 / math.sqrt(shape[0])
        self.params[name] = Tensor(rng.normal(shape) * std, requires_grad=True, name=name)

    def _embedding(self, name: str, shape, rng: RngState):
        # rows are looked up, not contracted, so scale by the vector width
        std = 1.0 / math.sqrt(shape[-1])
        self.params[name] = Tensor(rng.normal(shape) * std, requires_grad=True, name=name)

    def _zeros(self, name: str, shape):
        self.params[name] = Tensor(np.zeros(shape), requires_grad=True, name=name)

    def _ones(self, name: str, shape):
        self.params[name] = Tensor(np.ones(shape), requires_grad=True, name=name)

    def _init_attn(self, prefix: str, rng: RngState):
        H = self.config.hidden_size
        for w in ("wq", "wk", "wv", "wo"):
            self._weight(f"{prefix}.{w}", (H, H), rng)
        # no key bias: a shared key offset shifts every score of a query by the
        # same constant, which softmax cancels
        for b in ("bq", "bv", "bo"):
            self._zeros(f"{prefix}.{b}", (H,))

    def _init_block(self, prefix: str, rng: RngState, cross: bool):
        H, F = self.config.hidden_size, self.config.ff_size
        self._ones(f"{prefix}.ln1.g", (H,))
        self._zeros(f"{prefix}.ln1.b", (H,))
        self._init_attn(f"{prefix}.self" if cross else f"{prefix}.attn", rng)
        self._ones(f"{prefix}.ln2.g", (H,))
        self._zeros(f"{prefix}.ln2.b", (H,))
        if cross:
            self._init_attn(f"{prefix}.cross", rng)
            self._ones(f"{prefix}.ln3.g", (H,))
            self._zeros(f"{prefix}.ln3.b", (H,))
        self._weight(f"{prefix}.ff.w1", (H, F), rng)
        self._zeros(f"{prefix}.ff.b1", (F,))
        self._weight(f"{prefix}.ff.w2", (F, H), rng)
        self._zeros(f"{prefix}.ff.b2", (H,))

    def _init_params(self, rng: RngState):
        cfg = self.config
        H, P = cfg.hidden_size, cfg.latent_size
        self._embedding("tok_emb", (cfg.vocab_size, H), rng)
        self._embedding("pos_emb", (cfg.max_positions, H), rng)
        if cfg.use_turn_ape:
            self._embedding("turn_emb", (cfg.max_turns, H), rng)
        if cfg.use_role_ape:
            self._embedding("role_emb", (cfg.num_roles, H), rng)
        if cfg.use_token_rpe or cfg.use_turn_rpe:
            self._embedding("enc.rpe_table", (num_relative_buckets(cfg), cfg.head_dim), rng)
        for i in range(cfg.num_encoder_layers):
            self._init_block(f"enc.{i}", rng, cross=False)
        for i in range(cfg.num_decoder_layers):
            self._init_block(f"dec.{i}", rng, cross=True)
        if cfg.ngram > 1:
            self._embedding("stream_emb", (cfg.ngram - 1, H), rng)
        self._weight("mlm.w1", (H, H), rng)
        self._zeros("mlm.b1", (H,))
        if cfg.use_latent:
            self._weight("prior.w1", (H, H), rng)
            self._zeros("prior.b1", (H,))
            self._weight("prior.w2", (H, 2 * P), rng)
            self._zeros("prior.b2", (2 * P,))
            # no bias here: the memory slot must stay linear in z
            self._weight("mem.w", (P, 2 * H), rng)
            self._weight("bow.w1", (P + H, H), rng)
            self._zeros("bow.b1", (H,))
            self._weight("bow.w2", (H, cfg.vocab_size), rng)
            self._zeros("bow.b2", (cfg.vocab_size,))

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    # -- shared pieces ------------------------------------------------------------

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        return layer_norm(x, self.params[f"{prefix}.g"], self.params[f"{prefix}.b"])

    def _ff(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = (matmul(x, p[f"{prefix}.w1"]) + p[f"{prefix}.b1"]).gelu()
        return matmul(h, p[f"{prefix}.w2"]) + p[f"{prefix}.b2"]

    def _attn(self, prefix: str, q_x: Tensor, kv_x: Tensor,
              blocked: np.ndarray | None,
              memory: MemoryVector | None = None,
              rel: tuple[Tensor, np.ndarray] | None = None) -> Tensor:
        cfg = self.config
        p = self.params
        H, nh, dh = cfg.hidden_size, cfg.num_heads, cfg.head_dim
        q = matmul(q_x, p[f"{prefix}.wq"]) + p[f"{prefix}.bq"]
        k = matmul(kv_x, p[f"{prefix}.wk"])
        v = matmul(kv_x, p[f"{prefix}.wv"]) + p[f"{prefix}.bv"]
        if memory is not None:
            if rel is not None:
                raise ShapeError("relative bias and a memory slot cannot be combined")
            # the latent key/value pair joins the attendable set as one extra slot
            k = concat([memory.key.reshape(1, H), k], axis=0)
            v = concat([memory.value.reshape(1, H), v], axis=0)
            if blocked is not None:
                allow = np.zeros((blocked.shape[0], 1), dtype=bool)
                blocked = np.concatenate([allow, blocked], axis=1)
        heads = []
        for h in range(nh):
            heads.append(attention_with_relative_bias(
                narrow(q, 1, h * dh, dh), narrow(k, 1, h * dh, dh), narrow(v, 1, h * dh, dh),
                bias_table=None if rel is None else rel[0],
                bucket_matrix=None if rel is None else rel[1],
                blocked=blocked))
        return matmul(concat(heads, axis=1), p[f"{prefix}.wo"]) + p[f"{prefix}.bo"]

    # -- embeddings -----------------------------------------------------------------

    def embed_inputs(self, token_ids, turn_ids=None, role_ids=None) -> Tensor:
        """Sum token, absolute-position and (when enabled) turn/role embeddings."""
        cfg = self.config
        ids = np.asarray(token_ids, dtype=np.int64)
        L = len(ids)
        if L > cfg.max_positions:
            raise DataError(f"sequence length {L} exceeds max_positions {cfg.max_positions}")
        _check_ids(ids, cfg.vocab_size, "token")
        e = take_rows(self.params["tok_emb"], ids) + take_rows(self.params["pos_emb"],
                                                               np.arange(L))
        if cfg.use_turn_ape:
            if turn_ids is None:
                raise DataError("turn ids are required when turn embeddings are enabled")
            turns = np.asarray(turn_ids, dtype=np.int64)
            _check_len(turns, L, "turn")
            _check_ids(turns, cfg.max_turns, "turn")
            e = e + take_rows(self.params["turn_emb"], turns)
        if cfg.use_role_ape:
            if role_ids is None:
                raise DataError("role ids are required when role embeddings are enabled")
            roles = np.asarray(role_ids, dtype=np.int64)
            _check_len(roles, L, "role")
            _check_ids(roles, cfg.num_roles, "role")
            e = e + take_rows(self.params["role_emb"], roles)
        return e

    # -- encoder ---------------------------------------------------------------------

    def encode(self, token_ids, turn_ids=None, role_ids=None,
               is_pad: np.ndarray | None = None) -> EncoderOutput:
        cfg = self.config
        x = self.embed_inputs(token_ids, turn_ids, role_ids)
        L = x.shape[0]
        blocked = None
        if is_pad is not None:
            pad = np.asarray(is_pad, dtype=bool)
            _check_len(pad, L, "pad mask")
            blocked = np.broadcast_to(pad, (L, L))
        rel = None
        if cfg.use_token_rpe or cfg.use_turn_rpe:
            if cfg.use_turn_rpe and turn_ids is None:
                raise DataError("turn ids are required when turn-relative bias is enabled")
            buckets = _bucket_matrix(L, turn_ids if turn_ids is not None else np.zeros(L), cfg)
            rel = (self.params["enc.rpe_table"], buckets)
        for i in range(cfg.num_encoder_layers):
            h = self._ln(f"enc.{i}.ln1", x)
            x = x + self._attn(f"enc.{i}.attn", h, h, blocked, rel=rel)
            x = x + self._ff(f"enc.{i}.ff", self._ln(f"enc.{i}.ln2", x))
        h_cls = take_rows(x, np.array([0])).reshape(cfg.hidden_size)
        return EncoderOutput(hidden=x, h_cls=h_cls, is_pad=is_pad)

    # -- latent path -------------------------------------------------------------------

    def prior_network(self, h_cls: Tensor) -> tuple[Tensor, Tensor]:
        """Map the [CLS] state to (mu, log variance) of the latent Gaussian."""
        cfg = self._require_latent("prior_network")
        p = self.params
        h = (matmul(h_cls.reshape(1, cfg.hidden_size), p["prior.w1"]) + p["prior.b1"]).tanh()
        out = (matmul(h, p["prior.w2"]) + p["prior.b2"]).reshape(2 * cfg.latent_size)
        return (narrow(out, 0, 0, cfg.latent_size),
                narrow(out, 0, cfg.latent_size, cfg.latent_size))

    def memory_project(self, z: Tensor) -> MemoryVector:
        """Project the latent vector to the decoder's extra key/value slot."""
        cfg = self._require_latent("memory_project")
        H = cfg.hidden_size
        pair = matmul(z.reshape(1, cfg.latent_size), self.params["mem.w"]).reshape(2 * H)
        return MemoryVector(key=narrow(pair, 0, 0, H), value=narrow(pair, 0, H, H))

    def bow_probs(self, z: Tensor, h_cls: Tensor) -> Tensor:
        """Non-autoregressive distribution over response words from [z ; h_cls]."""
        cfg = self._require_latent("bow_probs")
        p = self.params
        x = concat([z, h_cls]).reshape(1, cfg.latent_size + cfg.hidden_size)
        h = (matmul(x, p["bow.w1"]) + p["bow.b1"]).tanh()
        logits = matmul(h, p["bow.w2"]) + p["bow.b2"]
        return softmax(logits, axis=-1).reshape(cfg.vocab_size)

    def _require_latent(self, op: str) -> ModelConfig:
        if not self.config.use_latent:
            raise ConfigError(f"{op} requires use_latent=true")
        return self.config

    # -- decoder ---------------------------------------------------------------------

    def decode_streams(self, response_in_ids, enc: EncoderOutput,
                       memory: MemoryVector | None = None) -> list[Tensor]:
        """Teacher-forced decoder forward.

        ``response_in_ids`` is the [BOS]-shifted input. Stream 1 is the causal
        main stream (standard next-token logits); stream k>1 reads the main
        stream's states up to each position and predicts the token k-1 steps
        further ahead. Returns one [T, vocab] logits tensor per stream.
        """
        cfg = self.config
        p = self.params
        ids = np.asarray(response_in_ids, dtype=np.int64)
        T = len(ids)
        if T > cfg.max_positions:
            raise DataError(f"response length {T} exceeds max_positions {cfg.max_positions}")
        _check_ids(ids, cfg.vocab_size, "token")
        positions = np.arange(T)
        streams = [take_rows(p["tok_emb"], ids) + take_rows(p["pos_emb"], positions)]
        for k in range(2, cfg.ngram + 1):
            ahead = np.minimum(positions + (k - 1), cfg.max_positions - 1)
            streams.append(take_rows(p["stream_emb"], np.full(T, k - 2))
                           + take_rows(p["pos_emb"], ahead))
        causal = np.triu(np.ones((T, T), dtype=bool), k=1)  # blocked where key > query
        cross_blocked = None
        if enc.is_pad is not None:
            cross_blocked = np.broadcast_to(np.asarray(enc.is_pad, dtype=bool),
                                            (T, len(enc.is_pad)))
        for i in range(cfg.num_decoder_layers):
            main_normed = self._ln(f"dec.{i}.ln1", streams[0])
            updated = [streams[0] + self._attn(f"dec.{i}.self", main_normed, main_normed,
                                               causal, memory=memory)]
            for s in streams[1:]:
                # predicting streams read the pre-update main states; the memory
                # slot reaches them only through the main stream
                q = self._ln(f"dec.{i}.ln1", s)
                updated.append(s + self._attn(f"dec.{i}.self", q, main_normed, causal))
            streams = updated
            streams = [s + self._attn(f"dec.{i}.cross", self._ln(f"dec.{i}.ln2", s),
                                      enc.hidden, cross_blocked)
                       for s in streams]
            streams = [s + self._ff(f"dec.{i}.ff", self._ln(f"dec.{i}.ln3", s))
                       for s in streams]
        head = self.params["tok_emb"].transpose()
        return [matmul(s, head) for s in streams]

    # -- output heads -------------------------------------------------------------------

    def mlm_logits(self, h_x: Tensor) -> Tensor:
        """Masked-token logits; the output projection is the token embedding itself."""
        p = self.params
        single = h_x.ndim == 1
        if single:
            h_x = h_x.reshape(1, self.config.hidden_size)
        h = (matmul(h_x, p["mlm.w1"]) + p["mlm.b1"]).tanh()
        logits = matmul(h, p["tok_emb"].transpose())
        return logits.reshape(self.config.vocab_size) if single else logits


def _check_ids(ids: np.ndarray, bound: int, kind: str):
    if ids.size and (ids.min() < 0 or ids.max() >= bound):
        bad = int(ids.min()) if ids.min() < 0 else int(ids.max())
        raise DataError(f"{kind} id {bad} out of range [0, {bound})")


def _check_len(arr, expected: int, kind: str):
    if len(arr) != expected:
        raise DataError(f"{kind} array length {len(arr)} != sequence length {expected}")
