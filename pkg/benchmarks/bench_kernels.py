"""Time the compiled kernels against the pure-Python fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json]
"""

import argparse
import json
import timeit

import numpy as np

from evoforge import _pykernels, kernels
from evoforge.actions import grammar


def cases(seed=0):
    dfa = grammar()
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(dfa.max_len, dfa.next.shape[1]))
    u = rng.random((16, dfa.max_len))
    toks, _ = kernels.sample_sequences(logits, dfa.next, dfa.start, 1.0, u, impl=_pykernels)
    coef = rng.normal(size=toks.shape)
    row, nxt = logits[0], dfa.next[dfa.start]
    return {
        "char_bleu": lambda impl: kernels.char_bleu("add a green rectangle", "add a red rectangle", impl=impl),
        "sample_sequences": lambda impl: kernels.sample_sequences(logits, dfa.next, dfa.start, 1.0, u, impl=impl),
        "sequence_logprobs": lambda impl: kernels.sequence_logprobs(logits, dfa.next, dfa.start, toks, impl=impl),
        "sequence_dlogits": lambda impl: kernels.sequence_dlogits(logits, dfa.next, dfa.start, toks, coef, impl=impl),
        "sample_token": lambda impl: kernels.sample_token(row, nxt, 1.0, 0.5, impl=impl),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=200)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)
    try:
        from evoforge import _speedups
    except ImportError:
        _speedups = None
    rows = []
    for name, fn in cases().items():
        row = {"kernel": name}
        for label, impl in (("python", _pykernels), ("cython", _speedups)):
            if impl is None:
                row[label] = None
                continue
            best = min(timeit.repeat(lambda: fn(impl), number=args.number, repeat=args.repeat))
            row[label] = best / args.number * 1e6
        row["speedup"] = row["python"] / row["cython"] if row["cython"] else None
        rows.append(row)
    if args.json:
        print(json.dumps({"backend": kernels.BACKEND, "us_per_call": rows}, indent=1))
        return
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':20s} {'python us':>10s} {'cython us':>10s} {'speedup':>8s}")
    for r in rows:
        cy = "n/a" if r["cython"] is None else f"{r['cython']:10.1f}"
        sp = "n/a" if r["speedup"] is None else f"{r['speedup']:7.1f}x"
        print(f"{r['kernel']:20s} {r['python']:10.1f} {cy:>10s} {sp:>8s}")


if __name__ == "__main__":
    main()
