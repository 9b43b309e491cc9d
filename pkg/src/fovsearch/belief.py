"""Posterior tracking over target location.

Because template noise is Gaussian with known per-location d', the whole
response history collapses into one running statistic per location,

    s_T(i) = sum_t  d'(i, k(t))^2 * W_i(t),

and the posterior is p_i(T) proportional to prior_i * exp(s_T(i)).
Normalization happens in log domain with a max shift, so large statistic
values cannot overflow and zero-prior locations stay at exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .task import TaskConfig


@dataclass(frozen=True)
class BeliefState:
    """Immutable belief: log prior plus the accumulated evidence statistic."""

    log_prior: np.ndarray   # (n,), -inf at zero-prior locations
    s: np.ndarray           # (n,), running sufficient statistic

    @property
    def n(self) -> int:
        return self.s.shape[0]


def init_belief(task: TaskConfig) -> BeliefState:
    s = np.zeros(task.n)
    s.flags.writeable = False
    return BeliefState(log_prior=task.log_prior, s=s)


def update_statistic(s: np.ndarray, responses: np.ndarray,
                     dprimes: np.ndarray) -> np.ndarray:
    """Evidence accumulation for one fixation: s + d'^2 * W, elementwise."""
    return s + dprimes * dprimes * responses


def update(belief: BeliefState, responses: np.ndarray, fixation: int,
           task: TaskConfig) -> BeliefState:
    """Fold one response vector (observed while fixating `fixation`) in."""
    if responses.shape != belief.s.shape:
        raise ValueError("response vector length must match location count")
    s = update_statistic(belief.s, responses, task.dprime_matrix[fixation])
    s.flags.writeable = False
    return BeliefState(log_prior=belief.log_prior, s=s)


def log_weights(belief: BeliefState) -> np.ndarray:
    """Unnormalized log posterior, -inf where the prior is zero."""
    return belief.log_prior + belief.s


def posterior(belief: BeliefState) -> np.ndarray:
    """Normalized posterior over target location.

    Exact zeros are preserved for zero-prior locations; everything else is
    exponentiated after subtracting the running max, so the result is finite
    for any statistic magnitude.
    """
    lw = log_weights(belief)
    shift = lw.max()
    w = np.exp(lw - shift)
    return w / w.sum()


def map_choice(belief: BeliefState) -> int:
    """Maximum a posteriori location; ties break to the lowest index."""
    return int(np.argmax(log_weights(belief)))
