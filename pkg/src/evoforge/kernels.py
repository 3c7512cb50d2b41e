"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The Cython module ``_speedups`` is used when it was built; otherwise (or
when ``EVOFORGE_PURE_PYTHON`` is set) the numpy implementations in
``_pykernels`` are used. ``BACKEND`` names the active one.
"""

import os

import numpy as np

from . import _pykernels

if os.environ.get("EVOFORGE_PURE_PYTHON"):
    _impl = _pykernels
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i32(a):
    return np.ascontiguousarray(a, dtype=np.int32)


def char_bleu(pred: str, ref: str, impl=None) -> float:
    impl = impl or _impl
    return impl.char_bleu(str(pred), str(ref))


def sample_sequences(logits, dfa_next, start, temperature, uniforms, impl=None):
    impl = impl or _impl
    return impl.sample_sequences(_f64(logits), _i32(dfa_next), int(start), float(temperature), _f64(uniforms))


def sequence_logprobs(logits, dfa_next, start, tokens, impl=None):
    impl = impl or _impl
    return impl.sequence_logprobs(_f64(logits), _i32(dfa_next), int(start), _i32(tokens))


def sequence_dlogits(logits, dfa_next, start, tokens, coef, impl=None):
    impl = impl or _impl
    return impl.sequence_dlogits(_f64(logits), _i32(dfa_next), int(start), _i32(tokens), _f64(coef))


def sample_token(row, nxt_row, temperature, u, impl=None):
    impl = impl or _impl
    return impl.sample_token(_f64(row), _i32(nxt_row), float(temperature), float(u))
