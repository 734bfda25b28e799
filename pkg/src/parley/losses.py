"""Training objectives: masked-span, reconstruction, hinged KL, bag-of-words.

Masked-span and reconstruction losses are token means so the terms stay
comparable across batch shapes; the bag-of-words term sums over response
occurrences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError
from .tensor import Tensor, gather_cols, log_softmax, narrow, take_rows
from .vocab import NUM_SPECIALS

BOW_PROB_FLOOR = 1e-12

PRETRAIN = "pretrain"
FINETUNE = "finetune"


@dataclass
class LossBreakdown:
    l_mask: Tensor | None
    l_rc: Tensor
    l_kl: Tensor | None
    l_bow: Tensor | None
    total: Tensor
    per_dim_kl: Tensor | None

    def scalars(self) -> dict[str, float]:
        out = {}
        for key in ("l_mask", "l_rc", "l_kl", "l_bow", "total"):
            value = getattr(self, key)
            if value is not None:
                out[key] = float(value.data)
        return out


def nll_sum(logits: Tensor, target_ids) -> tuple[Tensor, int]:
    """Summed negative log-likelihood of targets under rows of logits."""
    ids = np.asarray(target_ids, dtype=np.int64)
    if logits.ndim != 2 or len(ids) != logits.shape[0]:
        raise ShapeError(f"logits {logits.shape} do not match {len(ids)} targets")
    if len(ids) == 0:
        return Tensor(0.0), 0
    picked = gather_cols(log_softmax(logits, axis=-1), ids[:, None])
    return -picked.sum(), len(ids)


def loss_masked_spans(mlm_logits: Tensor, original_ids) -> Tensor:
    """Mean NLL of the original tokens at masked positions (0 when none)."""
    total, count = nll_sum(mlm_logits, original_ids)
    return total * (1.0 / count) if count else Tensor(0.0)


def stream_nll_sums(stream_logits: list[Tensor], response_ids) -> list[tuple[Tensor, int]]:
    """Per-stream (summed NLL, target count); stream k targets are shifted by k-1."""
    ids = np.asarray(response_ids, dtype=np.int64)
    T = len(ids)
    out = []
    for j, logits in enumerate(stream_logits):
        if logits.shape[0] != T:
            raise ShapeError(f"stream {j + 1} logits rows {logits.shape[0]} != targets {T}")
        valid = T - j
        if valid <= 0:
            out.append((Tensor(0.0), 0))
            continue
        out.append(nll_sum(narrow(logits, 0, 0, valid), ids[j:]))
    return out


def loss_reconstruction(stream_logits: list[Tensor], response_ids) -> Tensor:
    """Teacher-forced NLL averaged over streams that have at least one target."""
    sums = stream_nll_sums(stream_logits, response_ids)
    live = [(s, c) for s, c in sums if c > 0]
    if not live:
        return Tensor(0.0)
    acc = None
    for s, c in live:
        term = s * (1.0 / c)
        acc = term if acc is None else acc + term
    return acc * (1.0 / len(live))


def kl_per_dim(mu: Tensor, logvar: Tensor) -> Tensor:
    """Per-dimension KL(N(mu, sigma^2) || N(0, 1)) = (mu^2 + sigma^2 - log sigma^2 - 1) / 2."""
    return (mu * mu + logvar.exp() - logvar - 1.0) * 0.5


def loss_kl_free_bits(mu: Tensor, logvar: Tensor, lam: float) -> tuple[Tensor, Tensor]:
    """Hinged KL sum: each dimension contributes max(lam, KL_i).

    Dimensions whose KL sits below the floor contribute the constant lam and
    receive exactly zero gradient, which is what stops the posterior from
    collapsing further.
    """
    if not (np.isfinite(mu.data).all() and np.isfinite(logvar.data).all()):
        raise NumericError("loss_kl_free_bits requires finite mu and logvar")
    per = kl_per_dim(mu, logvar)
    return per.clamp_min(lam).sum(), per


def loss_bow(f: Tensor, response_ids, num_specials: int = NUM_SPECIALS) -> Tensor:
    """Negative log-probability of every content token occurrence under f.

    Each occurrence counts separately; special ids are excluded; probabilities
    are floored to keep the log finite.
    """
    content = np.asarray([i for i in np.asarray(response_ids, dtype=np.int64)
                          if i >= num_specials], dtype=np.int64)
    if len(content) == 0:
        return Tensor(0.0)
    picked = take_rows(f, content).clamp_min(BOW_PROB_FLOOR)
    return -picked.log().sum()


def total_loss(l_rc: Tensor, mode: str, use_latent: bool,
               l_mask: Tensor | None = None,
               l_kl: Tensor | None = None,
               l_bow: Tensor | None = None,
               per_dim_kl: Tensor | None = None) -> LossBreakdown:
    """Combine the enabled terms for the given phase.

    Pretraining adds the masked-span loss; fine-tuning drops it. Without the
    latent path the KL and bag-of-words terms disappear as well.
    """
    if mode not in (PRETRAIN, FINETUNE):
        raise ConfigError(f"unknown training mode {mode!r}")
    terms = []
    if mode == PRETRAIN:
        if l_mask is None:
            raise ConfigError("pretraining requires the masked-span loss")
        terms.append(l_mask)
    else:
        l_mask = None
    if use_latent:
        if l_kl is None or l_bow is None:
            raise ConfigError("latent training requires both the KL and bag-of-words losses")
        terms.extend([l_rc, l_kl, l_bow])
    else:
        l_kl = l_bow = per_dim_kl = None
        terms.append(l_rc)
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return LossBreakdown(l_mask=l_mask, l_rc=l_rc, l_kl=l_kl, l_bow=l_bow,
                         total=total, per_dim_kl=per_dim_kl)
