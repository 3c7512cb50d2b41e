"""Group-relative policy optimisation with a failure-suppression term.

Positive items (state, instruction, correct action) get a GRPO update: a
group of G actions is sampled from the frozen reference policy, scored
against the correct action with the verifiable reward, standardised within
the group, and plugged into the clipped per-token ratio objective with a KL
penalty. Negative items (a labelled failure action) get the clamped
log-ratio loss that pushes the failure below its reference probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .actions import Action, tokenize_action
from .errors import EmptyBatch, GroupTooSmall, LengthMismatch
from .judgment import StateObservation
from .rewards import ScreenGeometry, reward


def group_advantages(rewards) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards per group, got {r.size}")
    std = r.std()
    if std < 1e-12:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_estimate(logp_ref, logp_theta):
    """exp(d) - 1 - d with d = logp_ref - logp_theta; non-negative, 0 iff equal."""
    d = np.asarray(logp_ref, dtype=np.float64) - np.asarray(logp_theta, dtype=np.float64)
    out = np.expm1(d) - d
    return float(out) if out.ndim == 0 else out


def _check(lp_theta, lp_ref):
    if len(lp_theta) != len(lp_ref):
        raise LengthMismatch(f"{len(lp_theta)} sequences under theta vs {len(lp_ref)} under ref")
    for i, (a, b) in enumerate(zip(lp_theta, lp_ref)):
        if len(a) != len(b):
            raise LengthMismatch(f"sequence {i}: {len(a)} theta log-probs vs {len(b)} ref log-probs")


def grpo_loss_and_grad(lp_theta, lp_ref, advantages, eps=0.2, beta=0.04):
    """Clipped group objective and its derivative w.r.t. each token log-prob under theta.

    loss = -mean_i mean_t [min(rho*A, clip(rho, 1-eps, 1+eps)*A) - beta*KL]
    """
    _check(lp_theta, lp_ref)
    adv = np.asarray(advantages, dtype=np.float64)
    if len(adv) != len(lp_theta):
        raise LengthMismatch(f"{len(adv)} advantages for {len(lp_theta)} sequences")
    total = 0.0
    grads = []
    g = len(lp_theta)
    for lt, lr, a in zip(lp_theta, lp_ref, adv):
        lt = np.asarray(lt, dtype=np.float64)
        lr = np.asarray(lr, dtype=np.float64)
        rho = np.exp(lt - lr)
        unclipped = rho * a
        clipped = np.clip(rho, 1.0 - eps, 1.0 + eps) * a
        surrogate = np.minimum(unclipped, clipped)
        d = lr - lt
        kl = np.expm1(d) - d
        n = len(lt)
        total += -(surrogate - beta * kl).sum() / n
        # the unclipped branch is the one in use whenever it is the smaller
        dsur = np.where(unclipped <= clipped, rho * a, 0.0)
        dkl = -np.expm1(d)  # d KL / d lt = 1 - exp(lr - lt)
        grads.append(-(dsur - beta * dkl) / n / g)
    return total / g, grads


def grpo_loss(lp_theta, lp_ref, advantages, eps=0.2, beta=0.04) -> float:
    return grpo_loss_and_grad(lp_theta, lp_ref, advantages, eps, beta)[0]


def ai_loss_and_grad(lp_theta, lp_ref, clamp=5.0):
    """max(-M, sum_t (logp_theta - logp_ref)) for one failure action, and its token gradient."""
    _check([lp_theta], [lp_ref])
    ratio = float(np.sum(lp_theta) - np.sum(lp_ref))
    if ratio > -clamp:
        return ratio, np.ones(len(lp_theta))
    return -clamp, np.zeros(len(lp_theta))


def ai_loss(lp_theta, lp_ref, clamp=5.0) -> float:
    return ai_loss_and_grad(lp_theta, lp_ref, clamp)[0]


@dataclass(frozen=True)
class TrainingItem:
    obs: StateObservation
    instruction: str
    action: Action
    positive: bool
    geometry: ScreenGeometry = ScreenGeometry(100, 100)


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    eps: float = 0.2
    beta: float = 0.04
    gamma: float = 0.2
    lr: float = 2e-5
    ai_clamp: float = 5.0
    group_temperature: float = 1.0


@dataclass(frozen=True)
class LossReport:
    grpo: float
    ai: float
    total: float
    mean_reward: float
    n_positive: int
    n_negative: int

    def as_dict(self):
        return {
            "L_GRPO": self.grpo,
            "L_AI": self.ai,
            "total": self.total,
            "mean_reward": self.mean_reward,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
        }


def combined_step(batch, policy, ref, cfg: GrpoConfig, rng: np.random.Generator, lr=None,
                  anchor=None) -> LossReport:
    """One update on L_GRPO + gamma * L_AI; each term is averaged over its items.

    ``ref`` samples the groups and is the ratio/KL reference of L_GRPO.
    ``anchor`` (default ``ref``) is the reference of L_AI; passing a policy
    fixed for a whole phase keeps the -M floor meaningful when ``ref`` is
    refreshed every step.
    """
    if not batch:
        raise EmptyBatch("combined_step needs at least one item")
    lr = cfg.lr if lr is None else lr
    anchor = ref if anchor is None else anchor
    pos = [it for it in batch if it.positive]
    neg = [it for it in batch if not it.positive]
    grads: dict = {}
    l_grpo = 0.0
    rewards_seen = []
    for it in pos:
        seqs = ref.sample(it.obs, it.instruction, cfg.group_size, cfg.group_temperature, rng)
        rewards = [reward(s.action(), it.action, it.geometry).total for s in seqs]
        rewards_seen.extend(rewards)
        adv = group_advantages(rewards)
        lt = policy.logprobs(it.obs, it.instruction, seqs)
        lr_ = ref.logprobs(it.obs, it.instruction, seqs)
        loss, g = grpo_loss_and_grad(lt, lr_, adv, cfg.eps, cfg.beta)
        l_grpo += loss / len(pos)
        policy.accumulate(grads, it.obs, it.instruction, seqs, [x / len(pos) for x in g])
    l_ai = 0.0
    for it in neg:
        seq = [tokenize_action(it.action)]
        lt = policy.logprobs(it.obs, it.instruction, seq)[0]
        lr_ = anchor.logprobs(it.obs, it.instruction, seq)[0]
        loss, g = ai_loss_and_grad(lt, lr_, cfg.ai_clamp)
        l_ai += loss / len(neg)
        if cfg.gamma and g.any():
            policy.accumulate(grads, it.obs, it.instruction, seq, [g * cfg.gamma / len(neg)])
    policy.apply(grads, lr)
    mean_r = float(np.mean(rewards_seen)) if rewards_seen else math.nan
    return LossReport(l_grpo, l_ai, l_grpo + cfg.gamma * l_ai, mean_r, len(pos), len(neg))


def bc_loss_and_grad(items, policy):
    """Mean negative sequence log-likelihood of the demonstrated actions."""
    loss = 0.0
    grads: dict = {}
    n = len(items)
    for obs, instruction, action in items:
        seq = [tokenize_action(action)]
        lp = policy.logprobs(obs, instruction, seq)[0]
        loss -= lp.sum() / n
        policy.accumulate(grads, obs, instruction, seq, [np.full(len(lp), -1.0 / n)])
    return loss, grads


def behavior_cloning_step(items, policy, lr: float) -> float:
    """One gradient step maximising sum log pi(a | s, I); returns the pre-step loss."""
    if not items:
        raise EmptyBatch("behaviour cloning needs at least one item")
    loss, grads = bc_loss_and_grad(items, policy)
    policy.apply(grads, lr)
    return loss


def cosine_lr(base: float, step: int, total: int) -> float:
    if total <= 1:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * min(step, total) / total))
