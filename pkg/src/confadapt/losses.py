"""Hybrid CTC + attention training objective, greedy decoding, and TER.

Token id conventions used across the package: id 0 is the CTC blank,
ids 1 and 2 are the decoder start/end sentinels, real tokens start at 3.
References never contain the blank or sentinels.
"""

from __future__ import annotations

import numpy as np

from dataclasses import dataclass

from . import tensor as T
from .tensor import ShapeError, Tensor, no_grad

BLANK_ID = 0
SOS_ID = 1
EOS_ID = 2
FIRST_TOKEN_ID = 3

LOG_ZERO = -1.0e30


class InfeasibleAlignmentError(ValueError):
    """Reference is too long for the available frames under CTC rules."""


@dataclass(frozen=True)
class TokenSeq:
    ids: tuple = ()
    truncated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))

    def __len__(self):
        return len(self.ids)


def _ref_ids(reference):
    ids = reference.ids if isinstance(reference, TokenSeq) else tuple(int(i) for i in reference)
    if any(i == BLANK_ID for i in ids):
        raise ValueError("reference sequences must not contain the blank id")
    return ids


def ctc_min_frames(reference):
    """Minimal frame count admitting a CTC alignment of the reference."""
    ids = _ref_ids(reference)
    repeats = sum(1 for a, b in zip(ids, ids[1:]) if a == b)
    return len(ids) + repeats


def ctc_loss(log_probs, reference):
    """Negative log probability summed over all CTC alignments.

    ``log_probs`` is a (frames, vocab) tensor of per-frame log scores
    (normalized in normal use; the DP itself does not require it).
    """
    if log_probs.ndim != 2:
        raise ShapeError(f"ctc_loss: log_probs must be (frames, vocab), got {log_probs.shape}")
    frames, vocab = log_probs.shape
    ids = _ref_ids(reference)
    if any(i >= vocab for i in ids):
        raise ValueError(f"ctc_loss: reference id out of vocabulary ({vocab})")
    if frames < ctc_min_frames(ids):
        raise InfeasibleAlignmentError(
            f"ctc_loss: {frames} frames cannot align a reference of length {len(ids)} "
            f"(minimum {ctc_min_frames(ids)})"
        )

    # blank-extended label sequence: blank, y1, blank, y2, ..., blank
    ext = [BLANK_ID]
    for i in ids:
        ext.extend((i, BLANK_ID))
    s_len = len(ext)

    # gather per-frame emission scores for the extended labels in one matmul
    onehot = np.zeros((vocab, s_len))
    onehot[ext, np.arange(s_len)] = 1.0
    emit = log_probs @ Tensor(onehot)  # (frames, s_len)

    init_mask = np.arange(s_len) >= 2
    alpha = T.masked_fill(emit[0], init_mask, LOG_ZERO)

    lz1 = Tensor([LOG_ZERO])
    lz2 = Tensor([LOG_ZERO, LOG_ZERO])
    # skip transition s-2 -> s is illegal into blanks and into repeated labels
    no_skip = np.array(
        [ext[s] == BLANK_ID or (s >= 2 and ext[s] == ext[s - 2]) for s in range(s_len)]
    )
    for t in range(1, frames):
        cands = [alpha, T.concat([lz1, alpha[: s_len - 1]])]
        if s_len > 2:
            cands.append(T.masked_fill(T.concat([lz2, alpha[: s_len - 2]]), no_skip, LOG_ZERO))
        alpha = T.logsumexp(T.stack(cands, axis=0), axis=0) + emit[t]

    if s_len > 1:
        total = T.logsumexp(alpha[s_len - 2:], axis=0)
    else:
        total = alpha[0]
    return -total


def attention_ce_loss(decoder_logits, reference, smoothing=0.1):
    """Mean label-smoothed cross-entropy over reference tokens plus EOS.

    ``decoder_logits`` has one row per teacher-forced position, i.e.
    len(reference) + 1 rows, the last predicting the end sentinel.
    """
    ids = _ref_ids(reference)
    targets = list(ids) + [EOS_ID]
    if decoder_logits.ndim != 2 or decoder_logits.shape[0] != len(targets):
        raise ShapeError(
            f"attention_ce_loss: logits shape {decoder_logits.shape} does not match "
            f"{len(targets)} target positions"
        )
    vocab = decoder_logits.shape[1]
    if any(t >= vocab for t in targets):
        raise ValueError(f"attention_ce_loss: target id out of vocabulary ({vocab})")
    q = np.full((len(targets), vocab), smoothing / vocab)
    q[np.arange(len(targets)), targets] += 1.0 - smoothing
    lp = T.log_softmax(decoder_logits, axis=-1)
    return -(lp * Tensor(q)).sum() / len(targets)


def hybrid_loss(ctc, aed, weight=0.3):
    """Interpolate the CTC and attention objectives: w*ctc + (1-w)*aed."""
    w = float(weight)
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"hybrid_loss: weight must be in [0, 1], got {w}")
    ctc = T.as_tensor(ctc)
    aed = T.as_tensor(aed)
    if w == 0.0:
        return aed
    if w == 1.0:
        return ctc
    return ctc * w + aed * (1.0 - w)


def hybrid_batch_loss(ctc_logprobs, enc_lens, dec_logits, token_seqs,
                      ctc_weight=0.3, smoothing=0.1):
    """Mean hybrid loss over a padded batch.

    Per utterance the CTC scores are sliced to the true encoder length and
    the decoder logits to the true token count plus the EOS position.
    """
    if len(token_seqs) == 0:
        raise ValueError("hybrid_batch_loss: empty batch")
    total = None
    for i, ref in enumerate(token_seqs):
        ids = _ref_ids(ref)
        c = ctc_loss(ctc_logprobs[i, : int(enc_lens[i])], ids)
        a = attention_ce_loss(dec_logits[i, : len(ids) + 1], ids, smoothing=smoothing)
        h = hybrid_loss(c, a, ctc_weight)
        total = h if total is None else total + h
    return total / len(token_seqs)


def greedy_decode(model, features, max_len=None):
    """Greedy attention decoding of a single utterance.

    ``model`` must expose ``forward_encoder(features, lens)`` returning
    (enc, enc_lens, ctc_logprobs) and ``forward_decoder(enc, enc_lens,
    tokens_in)`` returning logits. Stops at the end sentinel; if the cap
    is hit first the hypothesis is flagged truncated.
    """
    feats = np.asarray(features, dtype=np.float64)
    with no_grad():
        enc, enc_lens, _ = model.forward_encoder(feats[None], np.array([feats.shape[0]]))
        if max_len is None:
            max_len = int(enc_lens[0]) * 2 + 10
        prefix = [SOS_ID]
        for _ in range(max_len):
            logits = model.forward_decoder(enc, enc_lens, np.array([prefix]))
            nxt = int(np.argmax(logits.data[0, -1]))
            if nxt == EOS_ID:
                return TokenSeq(prefix[1:], truncated=False)
            prefix.append(nxt)
    return TokenSeq(prefix[1:], truncated=True)


def edit_distance(a, b):
    """Levenshtein distance over two token sequences (two-row DP)."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ai in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, bj in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ai != bj))
        prev = cur
    return prev[len(b)]


def token_error_rate(hyp, ref):
    """Edit distance divided by reference length."""
    h = hyp.ids if isinstance(hyp, TokenSeq) else tuple(hyp)
    r = ref.ids if isinstance(ref, TokenSeq) else tuple(ref)
    return edit_distance(h, r) / max(len(r), 1)
