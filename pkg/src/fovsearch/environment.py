"""Trial dynamics: hidden target, fixation sequence, noisy template responses.

One episode is a search trial.  A target location is drawn from the prior,
the gaze starts at the configured initial fixation, and every fixation
(including the initial one) yields a response vector W with one entry per
location:

    W_i ~ Normal(+0.5 if i is the target else -0.5,  sd = 1 / d'(i, fixation))

Noise is redrawn independently at every fixation.  Responses are generated
as W = mean + Z / d' with Z standard normal, so two policies driven by
generators in identical states see identical noise even when they fixate
different locations (common random numbers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .task import TaskConfig


@dataclass
class EpisodeState:
    """Mutable per-trial record of the hidden target and gaze history."""

    task: TaskConfig
    target: int
    fixation: int
    fixations: list[int] = field(default_factory=list)
    saccades_used: int = 0

    @property
    def done(self) -> bool:
        return self.saccades_used >= self.task.saccade_budget

    @property
    def budget_left(self) -> int:
        return self.task.saccade_budget - self.saccades_used


def start_episode(task: TaskConfig, rng: np.random.Generator) -> EpisodeState:
    """Draw a target from the prior and place the gaze at the start point."""
    target = int(rng.choice(task.n, p=task.prior))
    return EpisodeState(
        task=task,
        target=target,
        fixation=task.initial_fixation,
        fixations=[task.initial_fixation],
    )


def sample_responses(task: TaskConfig, target: int, fixation: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Response vector for one fixation; always consumes exactly n normals."""
    n = task.n
    if not (0 <= target < n):
        raise IndexError(f"target index {target} out of range (n={n})")
    if not (0 <= fixation < n):
        raise IndexError(f"fixation index {fixation} out of range (n={n})")
    z = rng.standard_normal(n)
    means = np.full(n, task.mean_absent)
    means[target] = task.mean_present
    return means + z / task.dprime_matrix[fixation]


def step(state: EpisodeState, fixation: int,
         rng: np.random.Generator) -> np.ndarray:
    """Saccade to `fixation` and return the response vector observed there."""
    if state.done:
        raise RuntimeError("saccade budget exhausted")
    if not (0 <= fixation < state.task.n):
        raise IndexError(f"fixation index {fixation} out of range (n={state.task.n})")
    state.fixation = fixation
    state.fixations.append(fixation)
    state.saccades_used += 1
    return sample_responses(state.task, state.target, fixation, rng)


def terminal_reward(state: EpisodeState, guess: int) -> float:
    """1.0 for localizing the target, 0.0 otherwise."""
    if not (0 <= guess < state.task.n):
        raise IndexError(f"guess index {guess} out of range (n={state.task.n})")
    return 1.0 if guess == state.target else 0.0
