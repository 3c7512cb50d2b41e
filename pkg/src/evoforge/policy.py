"""Policies over the action token grammar.

``ToyPolicy`` is a log-linear autoregressive model. The logits of the next
token are a sum of parameter rows, one per active context feature:

* the screen feature ``s|<screen>`` owns one row per output position; it
  holds grounding (where widgets are) shared by every instruction;
* each instruction feature ``w|<screen>|<stem>|<flag>`` owns one row per
  token prefix, so its preferences are conditioned on what has been
  decoded so far. The flag says whether the stem already appears among the
  observed variable values.

Decoding is constrained by the grammar automaton, so every sample parses.
"""

from __future__ import annotations

import re
import threading
from functools import lru_cache
from typing import Protocol

import numpy as np

from . import kernels
from .actions import VOCAB, Action, ActionType, TokenSequence, grammar, tokenize_action
from .judgment import StateObservation

STOPWORDS = frozenset(
    "a an the to and it its make set with of then in on into for by at as is be "
    "click please this that".split()
)
_SUFFIXES = ("ing", "ed", "es", "s", "e")


@lru_cache(maxsize=4096)
def stem(word: str) -> str:
    w = word.lower()
    for suf in _SUFFIXES:
        if w.endswith(suf) and len(w) - len(suf) >= 3:
            return w[: -len(suf)]
    return w


def content_stems(text: str) -> list[str]:
    out = []
    for w in re.findall(r"[a-z0-9]+", text.lower()):
        if w not in STOPWORDS:
            s = stem(w)
            if s not in out:
                out.append(s)
    return out


class PolicyInterface(Protocol):
    def sample(self, obs: StateObservation, instruction: str, n: int, temperature: float,
               rng: np.random.Generator) -> list[TokenSequence]: ...

    def logprobs(self, obs: StateObservation, instruction: str,
                 seqs: list[TokenSequence]) -> list[np.ndarray]: ...

    def accumulate(self, grads: dict, obs: StateObservation, instruction: str,
                   seqs: list[TokenSequence], coefs: list[np.ndarray]) -> None: ...

    def apply(self, grads: dict, lr: float) -> None: ...

    def snapshot(self) -> "PolicyInterface": ...


def pad(seqs: list[TokenSequence], width: int) -> np.ndarray:
    out = np.full((len(seqs), width), -1, dtype=np.int32)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s.tokens
    return out


_HASH_MASK = (1 << 61) - 1


def extend_prefix_hash(h: int, tok: int) -> int:
    """Hash of a token prefix extended by one token (the empty prefix hashes to 0)."""
    return (h * 1_000_003 + tok + 1) & _HASH_MASK


class ToyPolicy:
    def __init__(self, kinds=None):
        self.kinds = tuple(ActionType(k) for k in kinds) if kinds else None
        self.dfa = grammar(self.kinds)
        self.width = self.dfa.max_len
        self.params: dict[str, np.ndarray] = {}           # screen feature -> (width, V)
        self.prefix: dict[str, dict[int, np.ndarray]] = {}  # instruction feature -> prefix hash -> (V,)
        self.frozen_prefixes: tuple[str, ...] = ()
        self.frozen = False
        self._lock = threading.Lock()
        self._forced = (self.dfa.next >= 0).sum(axis=1) <= 1

    @property
    def shape(self):
        return (self.width, len(VOCAB))

    # ---- features

    def features(self, obs: StateObservation, instruction: str) -> list[str]:
        values = set()
        for _, v in obs.variables:
            values.update(stem(w) for w in re.findall(r"[a-z0-9]+", v.lower()))
        feats = [f"s|{obs.screen_id}"]
        for w in content_stems(instruction):
            feats.append(f"w|{obs.screen_id}|{w}|{int(w in values)}")
        return feats

    @staticmethod
    def is_screen_feature(f: str) -> bool:
        return f.startswith("s|")

    def logits(self, obs: StateObservation, instruction: str) -> np.ndarray:
        """Position-indexed part of the logits (screen features only)."""
        out = np.zeros(self.shape)
        for f in self.features(obs, instruction):
            if self.is_screen_feature(f):
                row = self.params.get(f)
                if row is not None:
                    out += row
        return out

    def _context(self, obs, instruction):
        feats = self.features(obs, instruction)
        tables = [self.prefix.get(f) for f in feats if not self.is_screen_feature(f)]
        return feats, self.logits(obs, instruction), [tb for tb in tables if tb]

    def _sequence_logits(self, base, tables, tokens) -> tuple[np.ndarray, list[int]]:
        """Full logits for one decoded sequence and the prefix hash at each step."""
        out = base.copy()
        hashes = []
        h, state = 0, self.dfa.start
        for t, tok in enumerate(tokens):
            hashes.append(h)
            if not self._forced[state]:
                for tb in tables:
                    row = tb.get(h)
                    if row is not None:
                        out[t] += row
            state = int(self.dfa.next[state, tok])
            h = extend_prefix_hash(h, tok)
        return out, hashes

    # ---- sampling / scoring

    def sample(self, obs, instruction, n=1, temperature=1.0, rng=None) -> list[TokenSequence]:
        rng = rng if rng is not None else np.random.default_rng(0)
        uniforms = rng.random((n, self.width))
        _, base, tables = self._context(obs, instruction)
        nxt = self.dfa.next
        out = []
        for i in range(n):
            toks = []
            h, state = 0, self.dfa.start
            for t in range(self.width):
                if not (nxt[state] >= 0).any():
                    break
                if self._forced[state]:
                    tok = int(np.flatnonzero(nxt[state] >= 0)[0])
                else:
                    row = base[t]
                    if tables:
                        row = row.copy()
                        for tb in tables:
                            r = tb.get(h)
                            if r is not None:
                                row += r
                    tok = kernels.sample_token(row, nxt[state], temperature, uniforms[i, t])
                toks.append(tok)
                state = int(nxt[state, tok])
                h = extend_prefix_hash(h, tok)
            out.append(TokenSequence(tuple(toks)))
        return out

    def act(self, obs, instruction, temperature=0.0, rng=None) -> Action:
        return self.sample(obs, instruction, 1, temperature, rng)[0].action()

    def logprobs(self, obs, instruction, seqs) -> list[np.ndarray]:
        _, base, tables = self._context(obs, instruction)
        out = []
        for s in seqs:
            logits, _ = self._sequence_logits(base, tables, s.tokens)
            lp = kernels.sequence_logprobs(logits, self.dfa.next, self.dfa.start, pad([s], self.width))
            out.append(lp[0, : len(s)].copy())
        return out

    def action_logprob(self, obs, instruction, action: Action) -> float:
        return float(self.logprobs(obs, instruction, [tokenize_action(action)])[0].sum())

    def token_distribution(self, obs, instruction, prefix: TokenSequence, position: int) -> np.ndarray:
        """Full-vocabulary probabilities at ``position`` after ``prefix`` (zeros where illegal)."""
        _, base, tables = self._context(obs, instruction)
        state, h = self.dfa.start, 0
        for t in prefix.tokens[:position]:
            state = int(self.dfa.next[state, t])
            h = extend_prefix_hash(h, t)
        row = base[position].copy()
        for tb in tables:
            r = tb.get(h)
            if r is not None:
                row += r
        legal = self.dfa.next[state] >= 0
        p = np.zeros(len(VOCAB))
        z = np.exp(row[legal] - row[legal].max())
        p[legal] = z / z.sum()
        return p

    # ---- gradients

    def accumulate(self, grads: dict, obs, instruction, seqs, coefs) -> None:
        """Add d(sum_i sum_t coefs[i][t] * logp_i,t)/d(params) into ``grads``.

        Screen features map to (width, V) arrays; instruction feature ``f``
        is stored under ``("prefix", f)`` as a dict from prefix hash to row.
        """
        feats, base, tables = self._context(obs, instruction)
        for s, c in zip(seqs, coefs):
            if not len(s):
                continue
            coef = np.zeros((1, self.width))
            coef[0, : len(c)] = c
            logits, hashes = self._sequence_logits(base, tables, s.tokens)
            d = kernels.sequence_dlogits(logits, self.dfa.next, self.dfa.start, pad([s], self.width), coef)
            for f in feats:
                if self.is_screen_feature(f):
                    if f in grads:
                        grads[f] += d
                    else:
                        grads[f] = d.copy()
                    continue
                rows = grads.setdefault(("prefix", f), {})
                for t, h in enumerate(hashes):
                    if coef[0, t] == 0.0 or not d[t].any():
                        continue
                    if h in rows:
                        rows[h] += d[t]
                    else:
                        rows[h] = d[t].copy()

    def _trainable(self, f: str) -> bool:
        return not (self.frozen_prefixes and f.startswith(self.frozen_prefixes))

    def apply(self, grads: dict, lr: float) -> None:
        """Gradient descent: params -= lr * grads (frozen feature prefixes are skipped)."""
        if self.frozen:
            raise RuntimeError("cannot update a frozen reference snapshot")
        with self._lock:
            for key in sorted(grads, key=str):
                if isinstance(key, tuple):
                    f = key[1]
                    if not self._trainable(f):
                        continue
                    table = self.prefix.setdefault(f, {})
                    for h in sorted(grads[key]):
                        row = table.get(h)
                        if row is None:
                            row = table[h] = np.zeros(len(VOCAB))
                        row -= lr * grads[key][h]
                else:
                    if not self._trainable(key):
                        continue
                    row = self.params.get(key)
                    if row is None:
                        row = self.params[key] = np.zeros(self.shape)
                    row -= lr * grads[key]

    def snapshot(self) -> "ToyPolicy":
        ref = ToyPolicy.__new__(ToyPolicy)
        ref.kinds = self.kinds
        ref.dfa = self.dfa
        ref.width = self.width
        ref._forced = self._forced
        ref.params = {k: v.copy() for k, v in self.params.items()}
        ref.prefix = {f: {h: r.copy() for h, r in tb.items()} for f, tb in self.prefix.items()}
        ref.frozen_prefixes = self.frozen_prefixes
        ref.frozen = True
        ref._lock = threading.Lock()
        return ref

    def copy(self) -> "ToyPolicy":
        out = self.snapshot()
        out.frozen = False
        return out

    # ---- flat views for finite-difference checks

    def parameter_keys(self, obs, instruction, seqs) -> list[tuple]:
        """Every parameter slot that can influence ``seqs`` in this context, created as zeros."""
        feats, base, tables = self._context(obs, instruction)
        keys = []
        for f in feats:
            if self.is_screen_feature(f):
                self.params.setdefault(f, np.zeros(self.shape))
                keys.append(("screen", f))
                continue
            table = self.prefix.setdefault(f, {})
            hs = set()
            for s in seqs:
                hs.update(self._sequence_logits(base, [], s.tokens)[1])
            for h in sorted(hs):
                table.setdefault(h, np.zeros(len(VOCAB)))
                keys.append(("prefix", f, h))
        return keys

    def _slot(self, key):
        return self.params[key[1]] if key[0] == "screen" else self.prefix[key[1]][key[2]]

    def flat(self, keys) -> np.ndarray:
        return np.concatenate([self._slot(k).ravel() for k in keys])

    def set_flat(self, keys, vec) -> None:
        i = 0
        for k in keys:
            slot = self._slot(k)
            slot[...] = vec[i:i + slot.size].reshape(slot.shape)
            i += slot.size

    def flat_grad(self, grads: dict, keys) -> np.ndarray:
        parts = []
        for k in keys:
            if k[0] == "screen":
                g = grads.get(k[1])
                parts.append(np.zeros(self.shape).ravel() if g is None else g.ravel())
            else:
                g = grads.get(("prefix", k[1]), {}).get(k[2])
                parts.append(np.zeros(len(VOCAB)) if g is None else g)
        return np.concatenate(parts)

    # ---- persistence

    def save(self, path) -> None:
        keys = sorted(self.params)
        pre = [(f, h) for f in sorted(self.prefix) for h in sorted(self.prefix[f])]
        kinds = [k.value for k in self.kinds] if self.kinds else []
        with open(path, "wb") as f:
            np.savez(
                f,
                keys=np.array(keys, dtype=str),
                values=np.stack([self.params[k] for k in keys]) if keys else np.zeros((0,) + self.shape),
                prefix_features=np.array([p[0] for p in pre], dtype=str),
                prefix_hashes=np.array([p[1] for p in pre], dtype=np.int64),
                prefix_rows=np.stack([self.prefix[a][b] for a, b in pre]) if pre else np.zeros((0, len(VOCAB))),
                frozen_prefixes=np.array(self.frozen_prefixes, dtype=str),
                kinds=np.array(kinds, dtype=str),
            )

    @classmethod
    def load(cls, path) -> "ToyPolicy":
        with np.load(path) as z:
            kinds = [str(k) for k in z["kinds"]] or None
            pol = cls(kinds)
            for k, v in zip(z["keys"], z["values"]):
                pol.params[str(k)] = np.array(v, dtype=np.float64)
            for f, h, row in zip(z["prefix_features"], z["prefix_hashes"], z["prefix_rows"]):
                pol.prefix.setdefault(str(f), {})[int(h)] = np.array(row, dtype=np.float64)
            pol.frozen_prefixes = tuple(str(p) for p in z["frozen_prefixes"])
        return pol


def grounding_demos(env) -> list[tuple[StateObservation, str, Action]]:
    """``click <label>`` demonstrations at every widget centre of every screen."""
    from .sim_env import EnvState

    demos = []
    for sid, scr in env.screens.items():
        obs = env.observe(EnvState(sid, env.initial_vars))
        for w in scr.widgets:
            demos.append((obs, f"click {w.label}", Action(ActionType.CLICK, point=env.widget_center(sid, w.id))))
    return demos


def pretrain_grounding(policy: ToyPolicy, envs, steps: int = 30, lr: float = 1.0) -> ToyPolicy:
    """Teach widget grounding by behaviour cloning on label-click demonstrations.

    Plays the role of the pre-trained GUI grounding a base agent starts with:
    it knows where labelled widgets are, not what any task requires.
    """
    from .grpo import behavior_cloning_step

    demos = [d for env in envs for d in grounding_demos(env)]
    for _ in range(steps):
        behavior_cloning_step(demos, policy, lr)
    # grounding stays fixed from here on; later training only moves instruction rows
    policy.frozen_prefixes = ("s|",)
    return policy
