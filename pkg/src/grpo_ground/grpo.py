"""Group-relative policy optimization: advantage normalization, the per-sample
KL estimator, the (optionally difficulty-weighted) surrogate objective, its
exact gradient, and the ascent step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import kernels, policy, response, reward
from .policy import PolicyParams, SampledResponse
from .reward import PhiKind, RewardBreakdown

if TYPE_CHECKING:
    from .env import TaskInstance


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.04
    phi_kind: PhiKind = PhiKind.EXP_COMPLEMENT
    learning_rate: float = 1e-3
    std_epsilon: float = 1e-8
    salvage: bool = True
    # None disables the PPO-style ratio clip; with a single on-policy update
    # per batch the ratio starts at 1 and clipping is inert anyway.
    clip_ratio: float | None = None
    phi_batch_normalize: bool = False
    plain_sgd: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.group_size < 2:
            raise ValueError(f"group_size must be >= 2, got {self.group_size}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")


@dataclass
class GroupRollout:
    task: "TaskInstance"
    responses: list[SampledResponse]
    rewards: list[RewardBreakdown]
    advantages: np.ndarray
    miou: float
    weight: float
    ref_logprobs: np.ndarray  # frozen-reference log-probs, recorded at build time


@dataclass
class StepMetrics:
    step: int
    mean_total_reward: float
    mean_miou: float
    easy_frac: float
    medium_frac: float
    hard_frac: float
    mean_weight: float
    mean_kl: float
    objective: float
    eval_acc_at_05: float | None = None


@dataclass
class AdamState:
    m: PolicyParams
    v: PolicyParams
    t: int = 0


def init_adam_state(params: PolicyParams) -> AdamState:
    return AdamState(m=policy.zeros_like(params), v=policy.zeros_like(params))


def advantages(rewards: list[float] | np.ndarray, std_epsilon: float = 1e-8) -> np.ndarray:
    """Group-normalized advantages: (r - mean) / population std.

    Zero-variance groups (population std <= std_epsilon) yield all zeros.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError(f"advantages need at least 2 rewards, got {r.size}")
    mean = r.mean()
    std = math.sqrt(float(np.mean((r - mean) ** 2)))
    if std <= std_epsilon:
        return np.zeros_like(r)
    return (r - mean) / std


def kl_estimate(logp_theta: float, logp_ref: float) -> float:
    """Per-sample KL estimate rho - log(rho) - 1 with rho = exp(logp_ref - logp_theta).

    Non-negative, zero iff the log-probs coincide, and unbiased for
    KL(pi_theta || pi_ref) under on-policy sampling.
    """
    if not (math.isfinite(logp_theta) and math.isfinite(logp_ref)):
        raise ValueError("kl_estimate requires finite log-probabilities")
    d = logp_ref - logp_theta
    return math.expm1(d) - d


def build_group(task, params_current: PolicyParams, params_ref: PolicyParams,
                config: GrpoConfig, rng: np.random.Generator) -> GroupRollout:
    """Sample N responses for one task, score them, and normalize in-group."""
    responses = policy.sample(params_current, task.features, rng, config.group_size)
    bins = params_current.bins
    parsed = [response.parse(r.rendered, bins) for r in responses]
    rewards = [reward.total_reward(p, task.gt_box, config.salvage) for p in parsed]
    advs = advantages([rb.total for rb in rewards], config.std_epsilon)
    miou = reward.mean_iou(rewards)
    weight = reward.phi(config.phi_kind, miou)
    ref_lp = policy.logprobs_for(params_ref, task.features, responses)
    return GroupRollout(
        task=task,
        responses=responses,
        rewards=rewards,
        advantages=advs,
        miou=miou,
        weight=weight,
        ref_logprobs=ref_lp,
    )


def _clipped_a_terms(ratio: np.ndarray, advs: np.ndarray, weight: float,
                     clip_ratio: float | None) -> np.ndarray:
    raw = ratio * advs
    if clip_ratio is None:
        return weight * raw
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advs
    return weight * np.minimum(raw, clipped)


def _objective_terms(group: GroupRollout, lp_theta: np.ndarray, lp_old: np.ndarray,
                     config: GrpoConfig, weight: float):
    ratio = np.exp(lp_theta - lp_old)
    rho = np.exp(group.ref_logprobs - lp_theta)
    kl = rho - (group.ref_logprobs - lp_theta) - 1.0
    a_terms = _clipped_a_terms(ratio, group.advantages, weight, config.clip_ratio)
    return ratio, rho, kl, a_terms


def grpo_objective(group: GroupRollout, params_theta: PolicyParams, params_old: PolicyParams,
                   params_ref: PolicyParams, config: GrpoConfig) -> float:
    """(1/N) sum_i [ w * ratio_i * A_i - beta * kl_i ] for one group."""
    if len(group.responses) != config.group_size:
        raise ValueError(
            f"group has {len(group.responses)} responses, config expects {config.group_size}"
        )
    x = group.task.features
    lp_theta = policy.logprobs_for(params_theta, x, group.responses)
    lp_old = policy.logprobs_for(params_old, x, group.responses)
    lp_ref = policy.logprobs_for(params_ref, x, group.responses)
    ratio = np.exp(lp_theta - lp_old)
    rho = np.exp(lp_ref - lp_theta)
    kl = rho - (lp_ref - lp_theta) - 1.0
    a_terms = _clipped_a_terms(ratio, group.advantages, group.weight, config.clip_ratio)
    return float(np.mean(a_terms - config.beta * kl))


def _group_grad(group: GroupRollout, params_theta: PolicyParams, lp_old: np.ndarray,
                lp_ref: np.ndarray, config: GrpoConfig, weight: float) -> PolicyParams:
    """Exact gradient of the per-group objective with respect to params_theta.

    d/dtheta of the ratio term is (w * A_i * ratio_i) * dlogp_i; the KL term
    contributes beta * (rho_i - 1) * dlogp_i through both occurrences of
    logp_theta in the estimator.
    """
    x = group.task.features
    X, hidden, logp_c, logp_f = policy._forward_logp(params_theta, x)
    n = len(group.responses)

    lp_theta = np.empty(n)
    fmt_idx = np.empty(n, dtype=np.intp)
    bins = np.empty((n, 4), dtype=np.intp)
    for i, r in enumerate(group.responses):
        fmt_idx[i] = policy._check_tokens(params_theta, r.bins, r.format_token)
        bins[i] = r.bins
        lp_theta[i] = policy._gather_logprob(logp_c[0], logp_f[0], r.bins, int(fmt_idx[i]))

    ratio = np.exp(lp_theta - lp_old)
    rho = np.exp(lp_ref - lp_theta)
    coeff = config.beta * (rho - 1.0)
    a_coeff = weight * group.advantages * ratio
    if config.clip_ratio is not None:
        raw = ratio * group.advantages
        clipped = np.clip(ratio, 1.0 - config.clip_ratio, 1.0 + config.clip_ratio) * group.advantages
        a_coeff = np.where(raw <= clipped, a_coeff, 0.0)
    coeff = (coeff + a_coeff) / n

    # dlogits for sum_i coeff_i * dlogp_i: per head, coeff_i * (onehot_i - p).
    p_c = np.exp(logp_c[0])
    p_f = np.exp(logp_f[0])
    total = coeff.sum()
    dl_c = -total * p_c
    for k in range(4):
        np.add.at(dl_c[k], bins[:, k], coeff)
    dl_f = -total * p_f
    np.add.at(dl_f, fmt_idx, coeff)

    grads = kernels.backward(
        params_theta.w_coord, params_theta.w_fmt, X, hidden, dl_c[None], dl_f[None]
    )
    return PolicyParams(*grads)


def grpo_grad(group: GroupRollout, params_theta: PolicyParams, params_old: PolicyParams,
              params_ref: PolicyParams, config: GrpoConfig) -> PolicyParams:
    """Analytic gradient of grpo_objective with respect to params_theta."""
    if len(group.responses) != config.group_size:
        raise ValueError(
            f"group has {len(group.responses)} responses, config expects {config.group_size}"
        )
    x = group.task.features
    lp_old = policy.logprobs_for(params_old, x, group.responses)
    lp_ref = policy.logprobs_for(params_ref, x, group.responses)
    return _group_grad(group, params_theta, lp_old, lp_ref, config, group.weight)


def _bucket_fractions(groups: list[GroupRollout]) -> tuple[float, float, float]:
    counts = {b: 0 for b in reward.DifficultyBucket}
    for g in groups:
        counts[reward.bucket(g.miou)] += 1
    n = len(groups)
    return (
        counts[reward.DifficultyBucket.EASY] / n,
        counts[reward.DifficultyBucket.MEDIUM] / n,
        counts[reward.DifficultyBucket.HARD] / n,
    )


def grpo_step(params: PolicyParams, groups: list[GroupRollout], opt_state: AdamState,
              config: GrpoConfig, step: int = 0) -> tuple[PolicyParams, AdamState, StepMetrics]:
    """One ascent update from a batch of on-policy groups (in-place on params).

    Groups must have been sampled under the current params; the stored
    logprob_old and ref_logprobs fields supply the old/reference terms.
    """
    if not groups:
        raise ValueError("empty group batch")

    weights = np.array([g.weight for g in groups])
    if config.phi_batch_normalize:
        weights = weights / weights.mean()

    grad = policy.zeros_like(params)
    objective = 0.0
    kl_sum = 0.0
    for g, w in zip(groups, weights):
        lp_old = np.array([r.logprob_old for r in g.responses])
        lp_theta = policy.logprobs_for(params, g.task.features, g.responses)
        ratio, rho, kl, a_terms = _objective_terms(g, lp_theta, lp_old, config, float(w))
        objective += float(np.mean(a_terms - config.beta * kl))
        kl_sum += float(np.mean(kl))
        g_grad = _group_grad(g, params, lp_old, g.ref_logprobs, config, float(w))
        for acc_t, g_t in zip(grad.tensors(), g_grad.tensors()):
            acc_t += g_t
    n_groups = len(groups)
    for t in grad.tensors():
        t /= n_groups
    objective /= n_groups

    lr = config.learning_rate
    if config.plain_sgd:
        for p_t, g_t in zip(params.tensors(), grad.tensors()):
            p_t += lr * g_t
    else:
        opt_state.t += 1
        b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_epsilon
        bc1 = 1.0 - b1 ** opt_state.t
        bc2 = 1.0 - b2 ** opt_state.t
        for p_t, g_t, m_t, v_t in zip(
            params.tensors(), grad.tensors(), opt_state.m.tensors(), opt_state.v.tensors()
        ):
            m_t *= b1
            m_t += (1.0 - b1) * g_t
            v_t *= b2
            v_t += (1.0 - b2) * g_t * g_t
            p_t += lr * (m_t / bc1) / (np.sqrt(v_t / bc2) + eps)

    easy, medium, hard = _bucket_fractions(groups)
    metrics = StepMetrics(
        step=step,
        mean_total_reward=float(np.mean([rb.total for g in groups for rb in g.rewards])),
        mean_miou=float(np.mean([g.miou for g in groups])),
        easy_frac=easy,
        medium_frac=medium,
        hard_frac=hard,
        mean_weight=float(weights.mean()),
        mean_kl=kl_sum / n_groups,
        objective=objective,
    )
    return params, opt_state, metrics
