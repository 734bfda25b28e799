"""Training loop: batch loss assembly, plain SGD with linear warmup, logging.

One epoch walks the short-context batches first, then the long ones, in the
deterministic order produced by length-sorted batching. Every optimizer step
emits one JSON record with the loss breakdown.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import vocab as V
from .config import RunConfig
from .data import (MaskedBatch, extract_pairs, load_jsonl, mask_batch,
                   sort_and_batch, split_short_long)
from .errors import ConfigError, DataError, NumericError
from .losses import (FINETUNE, PRETRAIN, LossBreakdown, loss_bow, loss_kl_free_bits,
                     nll_sum, stream_nll_sums, total_loss)
from .model import DialogModel
from .tensor import RngState, Tensor, no_grad, reparameterize, take_rows
from .vocab import Vocabulary, build_vocab


@dataclass
class CorpusBatches:
    vocab: Vocabulary
    short: list[MaskedBatch]
    long: list[MaskedBatch]

    @property
    def ordered(self) -> list[MaskedBatch]:
        return self.short + self.long


def prepare_corpus(path: str, cfg: RunConfig, vocab: Vocabulary | None = None) -> CorpusBatches:
    """Load a JSONL dialog file and turn it into length-sorted batches."""
    instances = load_jsonl(path)
    if not instances:
        raise DataError(f"{path}: no dialog instances found")
    if vocab is None:
        utterances = [t for inst in instances for t in inst.turns]
        utterances += [k for inst in instances for k in inst.knowledge]
        vocab = build_vocab(utterances, min_freq=cfg.train.min_freq,
                            max_size=cfg.train.max_vocab_size)
    pairs = [p for inst in instances for p in extract_pairs(inst, vocab)]
    if not pairs:
        raise DataError(f"{path}: every instance has a single turn; no training pairs")
    short, long = split_short_long(pairs, cfg.train.short_context_threshold)
    budget = cfg.train.batch_token_budget
    return CorpusBatches(vocab=vocab,
                         short=sort_and_batch(short, budget),
                         long=sort_and_batch(long, budget))


def check_model_fits(batches: CorpusBatches, model_cfg) -> None:
    """Fail early when the corpus needs bigger position/turn tables."""
    max_ctx = max((b.context.shape[1] for b in batches.ordered), default=0)
    max_resp = max((int(b.response_lens.max()) for b in batches.ordered), default=0)
    max_turn = max((int(b.turn_ids.max()) for b in batches.ordered), default=0)
    if max_ctx > model_cfg.max_positions:
        raise ConfigError(f"longest context ({max_ctx} tokens) exceeds "
                          f"model.max_positions={model_cfg.max_positions}")
    if max_resp + 1 > model_cfg.max_positions:
        raise ConfigError(f"longest response ({max_resp} tokens) exceeds "
                          f"model.max_positions={model_cfg.max_positions}")
    if max_turn >= model_cfg.max_turns:
        raise ConfigError(f"deepest dialog turn ({max_turn}) exceeds "
                          f"model.max_turns={model_cfg.max_turns}")


def batch_loss(model: DialogModel, batch: MaskedBatch, mode: str,
               rng: RngState) -> LossBreakdown:
    """Loss breakdown for one batch.

    Masked-span and per-stream reconstruction losses are token means pooled
    over the whole batch; KL and bag-of-words terms are means over rows.
    """
    cfg = model.config
    mask_sum, mask_count = Tensor(0.0), 0
    stream_sums: list[Tensor | None] = [None] * cfg.ngram
    stream_counts = [0] * cfg.ngram
    kl_terms: list[Tensor] = []
    per_dim_terms: list[Tensor] = []
    bow_terms: list[Tensor] = []

    for r in range(batch.num_rows):
        L = int(batch.context_lens[r])
        ctx = batch.context[r, :L]
        enc = model.encode(ctx, batch.turn_ids[r, :L], batch.role_ids[r, :L])

        memory = None
        if cfg.use_latent:
            mu, logvar = model.prior_network(enc.h_cls)
            z = reparameterize(mu, logvar, rng)
            memory = model.memory_project(z)
            kl_r, per_dim_r = loss_kl_free_bits(mu, logvar, cfg.free_bits)
            kl_terms.append(kl_r)
            per_dim_terms.append(per_dim_r)

        T = int(batch.response_lens[r])
        content = batch.response[r, :T]
        dec_input = np.concatenate([[V.BOS], content]).astype(np.int64)
        targets = np.concatenate([content, [V.EOS]]).astype(np.int64)
        streams = model.decode_streams(dec_input, enc, memory)
        for j, (s, c) in enumerate(stream_nll_sums(streams, targets)):
            if c:
                stream_sums[j] = s if stream_sums[j] is None else stream_sums[j] + s
                stream_counts[j] += c

        if cfg.use_latent:
            bow_terms.append(loss_bow(model.bow_probs(z, enc.h_cls), targets))

        if mode == PRETRAIN:
            records = batch.mask_records[r]
            if records:
                positions = np.array([pos for pos, _ in records])
                originals = np.array([orig for _, orig in records])
                logits = model.mlm_logits(take_rows(enc.hidden, positions))
                s, c = nll_sum(logits, originals)
                mask_sum = mask_sum + s
                mask_count += c

    l_mask = mask_sum * (1.0 / mask_count) if mask_count else Tensor(0.0)
    live = [(s, c) for s, c in zip(stream_sums, stream_counts) if c]
    if live:
        l_rc = _mean([s * (1.0 / c) for s, c in live])
    else:
        l_rc = Tensor(0.0)
    l_kl = _mean(kl_terms) if kl_terms else None
    per_dim = _mean(per_dim_terms) if per_dim_terms else None
    l_bow = _mean(bow_terms) if bow_terms else None
    return total_loss(l_rc, mode, cfg.use_latent, l_mask=l_mask if mode == PRETRAIN else None,
                      l_kl=l_kl, l_bow=l_bow, per_dim_kl=per_dim)


def _mean(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = acc + t
    return acc * (1.0 / len(terms))


def sgd_step(model: DialogModel, lr: float) -> None:
    for t in model.params.values():
        if t.grad is not None:
            t.data = t.data - lr * t.grad


def learning_rate_at(step: int, base: float, warmup: int) -> float:
    """Linear warmup to the base rate, constant afterwards; step counts from 1."""
    if warmup <= 0:
        return base
    return base * min(1.0, step / warmup)


def train_model(model: DialogModel, batches: CorpusBatches, cfg: RunConfig, mode: str,
                log_record) -> dict:
    """Run the optimization loop; returns a summary with the best parameters.

    ``log_record`` receives one dict per step. In fine-tuning mode the
    parameters snapshot with the lowest validation loss wins; pretraining
    keeps the final parameters.
    """
    train_cfg = cfg.train
    rng = RngState(train_cfg.seed).fork(1)
    valid_batches = None
    if mode == FINETUNE:
        if cfg.data.valid:
            valid_batches = prepare_corpus(cfg.data.valid, cfg, vocab=batches.vocab).ordered
        else:
            valid_batches = batches.ordered
    step = 0
    best = {"valid_loss": float("inf"), "epoch": 0,
            "params": _snapshot(model)}
    stop = False
    for epoch in range(1, train_cfg.epochs + 1):
        for batch in batches.ordered:
            if mode == PRETRAIN:
                batch = mask_batch(batch, train_cfg.span_len, train_cfg.mask_rate, rng,
                                   batches.vocab)
            model.zero_grad()
            try:
                breakdown = batch_loss(model, batch, mode, rng)
            except NumericError as exc:
                raise NumericError(
                    f"training diverged at step {step + 1}; "
                    f"lower train.learning_rate ({exc})") from exc
            if not np.isfinite(breakdown.total.data):
                raise NumericError(f"non-finite loss at step {step + 1}; "
                                   f"lower train.learning_rate")
            breakdown.total.backward()
            step += 1
            sgd_step(model, learning_rate_at(step, train_cfg.learning_rate,
                                             train_cfg.warmup_steps))
            log_record({"step": step, "epoch": epoch, **breakdown.scalars()})
            if train_cfg.max_steps and step >= train_cfg.max_steps:
                stop = True
                break
        if mode == FINETUNE:
            vloss = validation_loss(model, valid_batches, train_cfg.seed)
            log_record({"step": step, "epoch": epoch, "valid_loss": vloss})
            if vloss < best["valid_loss"]:
                best = {"valid_loss": vloss, "epoch": epoch, "params": _snapshot(model)}
        if stop:
            break
    if mode == FINETUNE:
        _restore(model, best["params"])
        return {"steps": step, "best_epoch": best["epoch"],
                "best_valid_loss": best["valid_loss"]}
    return {"steps": step}


def validation_loss(model: DialogModel, valid_batches: list[MaskedBatch],
                    seed: int) -> float:
    """Mean fine-tuning loss over the validation batches.

    The latent draw is reseeded identically on every call so epoch-to-epoch
    numbers are comparable.
    """
    rng = RngState(seed).fork(2)
    totals = []
    with no_grad():
        for batch in valid_batches:
            totals.append(float(batch_loss(model, batch, FINETUNE, rng).total.data))
    return float(np.mean(totals))


def _snapshot(model: DialogModel) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.params.items()}


def _restore(model: DialogModel, params: dict[str, np.ndarray]) -> None:
    for name, data in params.items():
        model.params[name].data = data.copy()
