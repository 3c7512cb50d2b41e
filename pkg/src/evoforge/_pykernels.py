"""Pure-Python reference implementations of the hot kernels.

``_speedups.pyx`` mirrors every function here; ``kernels`` picks one at
import time. Both must agree to floating-point round-off.
"""

import math
from collections import Counter

import numpy as np


def char_bleu(pred, ref):
    lp, lr = len(pred), len(ref)
    if lp == 0 and lr == 0:
        return 1.0
    if lp == 0 or lr == 0:
        return 0.0
    n_max = min(4, lp, lr)
    log_sum = 0.0
    for n in range(1, n_max + 1):
        ref_counts = Counter(ref[i:i + n] for i in range(lr - n + 1))
        pred_counts = Counter(pred[i:i + n] for i in range(lp - n + 1))
        matched = sum(min(c, ref_counts[g]) for g, c in pred_counts.items())
        total = lp - n + 1
        log_sum += math.log((matched + 1.0) / (total + 1.0))
    bp = min(1.0, math.exp(1.0 - lr / lp))
    return bp * math.exp(log_sum / n_max)


def _masked_probs(row, nxt_row, temperature):
    legal = np.flatnonzero(nxt_row >= 0)
    z = row[legal] / temperature
    z = np.exp(z - z.max())
    return legal, z / z.sum()


def sample_sequences(logits, dfa_next, start, temperature, uniforms):
    """Draw token sequences by inverse-CDF sampling under the grammar mask.

    Row ``t`` of ``logits`` scores position ``t``. Legal tokens are scanned in
    index order; temperature 0 takes the arg-max (lowest index on ties).
    Returns (tokens padded with -1, lengths).
    """
    n, t_max = uniforms.shape
    out = np.full((n, t_max), -1, dtype=np.int32)
    lengths = np.zeros(n, dtype=np.int32)
    for i in range(n):
        state = start
        t = 0
        while t < t_max:
            nxt_row = dfa_next[state]
            if not (nxt_row >= 0).any():
                break
            if temperature <= 0.0:
                legal = np.flatnonzero(nxt_row >= 0)
                tok = int(legal[np.argmax(logits[t, legal])])
            else:
                legal = np.flatnonzero(nxt_row >= 0)
                z = logits[t, legal] / temperature
                cdf = np.cumsum(np.exp(z - z.max()))
                k = int(np.searchsorted(cdf, uniforms[i, t] * cdf[-1], side="right"))
                tok = int(legal[min(k, len(legal) - 1)])
            out[i, t] = tok
            state = int(nxt_row[tok])
            t += 1
        lengths[i] = t
    return out, lengths


def sequence_logprobs(logits, dfa_next, start, tokens):
    """Per-token log-probabilities (masked softmax, temperature 1); padding gets 0."""
    n, width = tokens.shape
    out = np.zeros((n, width), dtype=np.float64)
    for i in range(n):
        state = start
        for t in range(width):
            tok = tokens[i, t]
            if tok < 0:
                break
            nxt_row = dfa_next[state]
            legal = np.flatnonzero(nxt_row >= 0)
            z = logits[t, legal]
            m = z.max()
            out[i, t] = logits[t, tok] - m - math.log(np.exp(z - m).sum())
            state = int(nxt_row[tok])
    return out


def sequence_dlogits(logits, dfa_next, start, tokens, coef):
    """Gradient of sum_{i,t} coef[i,t] * logp[i,t] with respect to ``logits``."""
    grad = np.zeros_like(logits, dtype=np.float64)
    n, width = tokens.shape
    for i in range(n):
        state = start
        for t in range(width):
            tok = tokens[i, t]
            if tok < 0:
                break
            nxt_row = dfa_next[state]
            c = coef[i, t]
            if c != 0.0:
                legal, p = _masked_probs(logits[t], nxt_row, 1.0)
                grad[t, legal] -= c * p
                grad[t, tok] += c
            state = int(nxt_row[tok])
    return grad


def sample_token(row, nxt_row, temperature, u):
    """One grammar-masked draw from ``row`` by inverse CDF (arg-max at temperature 0)."""
    legal = np.flatnonzero(nxt_row >= 0)
    if temperature <= 0.0:
        return int(legal[np.argmax(row[legal])])
    z = row[legal] / temperature
    cdf = np.cumsum(np.exp(z - z.max()))
    k = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return int(legal[min(k, len(legal) - 1)])
