"""Brute-force Monte-Carlo ground truth for the analytic machinery.

Everything here estimates probabilities by simulating raw definitions and
counting events.  Nothing imports the quadrature integrand, so agreement
between this module and the production lookahead code is evidence, not
tautology.  Clarity beats speed throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import belief as bel
from .belief import BeliefState
from .environment import sample_responses, start_episode
from .task import TaskConfig

CHUNK = 100_000


@dataclass(frozen=True)
class OracleEstimate:
    mean: float
    std_error: float
    samples: int

    def __post_init__(self):
        if not (0.0 <= self.mean <= 1.0):
            raise ValueError("oracle mean must be a probability")
        if self.std_error < 0 or self.samples < 1:
            raise ValueError("bad oracle estimate")

    def agrees_with(self, value: float, k: float = 3.0) -> bool:
        """|value - mean| within k standard errors.

        The plug-in binomial SE collapses to zero at 0 or samples hits,
        where the truth can still sit ~1/samples away; only then is the
        band widened to the add-one smoothed SE.
        """
        se = self.std_error
        if se == 0.0:
            hits = self.mean * self.samples
            p_smooth = (hits + 1.0) / (self.samples + 2.0)
            se = math.sqrt(p_smooth * (1.0 - p_smooth) / self.samples)
        return abs(value - self.mean) <= k * se


def _binomial_estimate(hits: int, total: int) -> OracleEstimate:
    p = hits / total
    return OracleEstimate(mean=p, std_error=float(np.sqrt(p * (1.0 - p) / total)),
                          samples=total)


def oracle_p_correct(i: int, k_next: int, belief: BeliefState, task: TaskConfig,
                     M: int, rng: np.random.Generator) -> OracleEstimate:
    """Simulated p(correct | target at i, next fixation k_next).

    Each sample draws one response vector with the target planted at i,
    folds it into a copy of the belief, and counts whether the posterior
    argmax lands on i.
    """
    if M < 1000:
        raise ValueError("oracle needs M >= 1000 samples")
    n = task.n
    if n == 1:
        return OracleEstimate(mean=1.0, std_error=0.0, samples=M)
    d = task.dprime_matrix[k_next]
    means = np.full(n, task.mean_absent)
    means[i] = task.mean_present
    base = belief.log_prior + belief.s
    hits = 0
    done = 0
    while done < M:
        m = min(CHUNK, M - done)
        w = means[None, :] + rng.standard_normal((m, n)) / d[None, :]
        logits = base[None, :] + (d * d)[None, :] * w
        hits += int((logits.argmax(axis=1) == i).sum())
        done += m
    return _binomial_estimate(hits, M)


def oracle_is_objective(belief: BeliefState, task: TaskConfig, M: int,
                        rng: np.random.Generator) -> list[OracleEstimate]:
    """Per-fixation lookahead value, targets resampled from the posterior."""
    if M < 1000:
        raise ValueError("oracle needs M >= 1000 samples")
    n = task.n
    post = bel.posterior(belief)
    base = belief.log_prior + belief.s
    out = []
    for k in range(n):
        d = task.dprime_matrix[k]
        hits = 0
        done = 0
        while done < M:
            m = min(CHUNK, M - done)
            targets = rng.choice(n, size=m, p=post)
            w = np.full((m, n), task.mean_absent)
            w[np.arange(m), targets] = task.mean_present
            w += rng.standard_normal((m, n)) / d[None, :]
            logits = base[None, :] + (d * d)[None, :] * w
            hits += int((logits.argmax(axis=1) == targets).sum())
            done += m
        out.append(_binomial_estimate(hits, M))
    return out


def oracle_policy_pc(policy, task: TaskConfig, trials: int,
                     rng: np.random.Generator) -> list[OracleEstimate]:
    """PC after each saccade count 1..budget under a fixation policy.

    Runs plain sequential episodes with the given generator; exists to
    cross-check the batch evaluation harness, not to replace it.
    """
    if trials < 100:
        raise ValueError("oracle PC needs at least 100 trials")
    budget = task.saccade_budget
    hits = np.zeros(budget, dtype=np.int64)
    for _ in range(trials):
        state = start_episode(task, rng)
        b = bel.init_belief(task)
        w = sample_responses(task, state.target, state.fixation, rng)
        b = bel.update(b, w, state.fixation, task)
        for t in range(1, budget + 1):
            fix = policy.choose(b, t, rng, task)
            w = sample_responses(task, state.target, fix, rng)
            b = bel.update(b, w, fix, task)
            hits[t - 1] += int(bel.map_choice(b) == state.target)
    return [_binomial_estimate(int(h), trials) for h in hits]
