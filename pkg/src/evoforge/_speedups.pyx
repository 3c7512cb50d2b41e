# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``; same signatures."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


def char_bleu(str pred, str ref):
    cdef Py_ssize_t lp = len(pred), lr = len(ref)
    cdef Py_ssize_t n, n_max, i, total, matched
    cdef double log_sum = 0.0, bp
    cdef dict ref_counts, pred_counts
    if lp == 0 and lr == 0:
        return 1.0
    if lp == 0 or lr == 0:
        return 0.0
    n_max = min(4, lp, lr)
    for n in range(1, n_max + 1):
        ref_counts = {}
        for i in range(lr - n + 1):
            g = ref[i:i + n]
            ref_counts[g] = ref_counts.get(g, 0) + 1
        pred_counts = {}
        for i in range(lp - n + 1):
            g = pred[i:i + n]
            pred_counts[g] = pred_counts.get(g, 0) + 1
        matched = 0
        for g, c in pred_counts.items():
            matched += min(<Py_ssize_t>c, <Py_ssize_t>ref_counts.get(g, 0))
        total = lp - n + 1
        log_sum += log((matched + 1.0) / (total + 1.0))
    bp = min(1.0, exp(1.0 - (<double>lr) / lp))
    return bp * exp(log_sum / n_max)


cdef inline double _row_max(double[:, :] logits, Py_ssize_t t, int[:] nxt, double temperature) nogil:
    cdef Py_ssize_t v
    cdef double m = -1e300
    for v in range(nxt.shape[0]):
        if nxt[v] >= 0 and logits[t, v] / temperature > m:
            m = logits[t, v] / temperature
    return m


def sample_sequences(double[:, :] logits, int[:, :] dfa_next, int start, double temperature,
                     double[:, :] uniforms):
    cdef Py_ssize_t n = uniforms.shape[0], t_max = uniforms.shape[1], V = dfa_next.shape[1]
    out_arr = np.full((n, t_max), -1, dtype=np.int32)
    len_arr = np.zeros(n, dtype=np.int32)
    cdef int[:, :] out = out_arr
    cdef int[:] lengths = len_arr
    cdef Py_ssize_t i, t, v, best, last
    cdef int state, any_legal
    cdef double m, total, target, acc, w, bestv
    with nogil:
        for i in range(n):
            state = start
            t = 0
            while t < t_max:
                any_legal = 0
                for v in range(V):
                    if dfa_next[state, v] >= 0:
                        any_legal = 1
                        break
                if not any_legal:
                    break
                if temperature <= 0.0:
                    best = -1
                    bestv = -1e300
                    for v in range(V):
                        if dfa_next[state, v] >= 0 and (best < 0 or logits[t, v] > bestv):
                            best = v
                            bestv = logits[t, v]
                else:
                    m = _row_max(logits, t, dfa_next[state], temperature)
                    total = 0.0
                    for v in range(V):
                        if dfa_next[state, v] >= 0:
                            total += exp(logits[t, v] / temperature - m)
                    target = uniforms[i, t] * total
                    acc = 0.0
                    best = -1
                    last = -1
                    for v in range(V):
                        if dfa_next[state, v] >= 0:
                            last = v
                            acc += exp(logits[t, v] / temperature - m)
                            if acc > target:
                                best = v
                                break
                    if best < 0:
                        best = last
                out[i, t] = <int>best
                state = dfa_next[state, best]
                t += 1
            lengths[i] = <int>t
    return out_arr, len_arr


def sequence_logprobs(double[:, :] logits, int[:, :] dfa_next, int start, int[:, :] tokens):
    cdef Py_ssize_t n = tokens.shape[0], width = tokens.shape[1], V = dfa_next.shape[1]
    out_arr = np.zeros((n, width), dtype=np.float64)
    cdef double[:, :] out = out_arr
    cdef Py_ssize_t i, t, v
    cdef int state, tok
    cdef double m, total
    with nogil:
        for i in range(n):
            state = start
            for t in range(width):
                tok = tokens[i, t]
                if tok < 0:
                    break
                m = _row_max(logits, t, dfa_next[state], 1.0)
                total = 0.0
                for v in range(V):
                    if dfa_next[state, v] >= 0:
                        total += exp(logits[t, v] - m)
                out[i, t] = logits[t, tok] - m - log(total)
                state = dfa_next[state, tok]
    return out_arr


def sequence_dlogits(double[:, :] logits, int[:, :] dfa_next, int start, int[:, :] tokens,
                     double[:, :] coef):
    cdef Py_ssize_t n = tokens.shape[0], width = tokens.shape[1], V = dfa_next.shape[1]
    grad_arr = np.zeros((logits.shape[0], logits.shape[1]), dtype=np.float64)
    cdef double[:, :] grad = grad_arr
    cdef Py_ssize_t i, t, v
    cdef int state, tok
    cdef double m, total, c
    with nogil:
        for i in range(n):
            state = start
            for t in range(width):
                tok = tokens[i, t]
                if tok < 0:
                    break
                c = coef[i, t]
                if c != 0.0:
                    m = _row_max(logits, t, dfa_next[state], 1.0)
                    total = 0.0
                    for v in range(V):
                        if dfa_next[state, v] >= 0:
                            total += exp(logits[t, v] - m)
                    for v in range(V):
                        if dfa_next[state, v] >= 0:
                            grad[t, v] -= c * exp(logits[t, v] - m) / total
                    grad[t, tok] += c
                state = dfa_next[state, tok]
    return grad_arr


def sample_token(double[:] row, int[:] nxt, double temperature, double u):
    cdef Py_ssize_t V = nxt.shape[0], v, best = -1, last = -1
    cdef double m = -1e300, total = 0.0, acc = 0.0, target
    with nogil:
        if temperature <= 0.0:
            for v in range(V):
                if nxt[v] >= 0 and (best < 0 or row[v] > m):
                    best = v
                    m = row[v]
        else:
            for v in range(V):
                if nxt[v] >= 0 and row[v] / temperature > m:
                    m = row[v] / temperature
            for v in range(V):
                if nxt[v] >= 0:
                    total += exp(row[v] / temperature - m)
            target = u * total
            for v in range(V):
                if nxt[v] >= 0:
                    last = v
                    acc += exp(row[v] / temperature - m)
                    if acc > target:
                        best = v
                        break
            if best < 0:
                best = last
    return <int>best
