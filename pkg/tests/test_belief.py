from functools import reduce

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from fovsearch import belief as bel
from fovsearch.environment import sample_responses
from fovsearch.task import TaskConfig, VisibilityMap, build_location_grid


def make_task(n=7, budget=3, prior=None):
    locs = build_location_grid(n, 4.0)
    if prior is None:
        prior = np.full(n, 1.0 / n)
    return TaskConfig(locations=locs, visibility=VisibilityMap(), prior=prior,
                      saccade_budget=budget, initial_fixation=0)


def test_initial_posterior_is_prior():
    task = make_task()
    b = bel.init_belief(task)
    npt.assert_allclose(bel.posterior(b), task.prior, rtol=0, atol=1e-15)


def test_update_matches_direct_formula():
    task = make_task()
    rng = np.random.default_rng(0)
    b = bel.init_belief(task)
    w = sample_responses(task, 2, 0, rng)
    b = bel.update(b, w, 0, task)
    d2 = task.dprime_matrix[0] ** 2
    expected = task.prior * np.exp(d2 * w - (d2 * w).max())
    npt.assert_allclose(bel.posterior(b), expected / expected.sum(), rtol=1e-12)


def test_incremental_equals_batch_exactly():
    task = make_task()
    rng = np.random.default_rng(7)
    fixations = [0, 3, 5, 1]
    responses = [sample_responses(task, 4, k, rng) for k in fixations]
    b = bel.init_belief(task)
    for k, w in zip(fixations, responses):
        b = bel.update(b, w, k, task)
    batch = reduce(
        lambda s, kw: bel.update_statistic(s, kw[1], task.dprime_matrix[kw[0]]),
        zip(fixations, responses), np.zeros(task.n))
    npt.assert_array_equal(b.s, batch)


def test_zero_prior_location_stays_zero():
    prior = np.array([0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0])
    task = make_task(prior=prior)
    rng = np.random.default_rng(1)
    b = bel.init_belief(task)
    for k in (0, 2, 4):
        b = bel.update(b, sample_responses(task, 0, k, rng), k, task)
    post = bel.posterior(b)
    assert np.all(post[2:] == 0.0)
    npt.assert_allclose(post.sum(), 1.0, atol=1e-15)


def test_huge_statistics_stay_finite():
    task = make_task()
    s = np.array([1e6, 9.99e5, 0, -1e6, 2e5, 0, 3.0])
    b = bel.BeliefState(log_prior=task.log_prior, s=s)
    post = bel.posterior(b)
    assert np.all(np.isfinite(post))
    npt.assert_allclose(post.sum(), 1.0, atol=1e-12)
    assert bel.map_choice(b) == 0


def test_map_choice_tie_breaks_low():
    task = make_task()
    b = bel.init_belief(task)   # uniform
    assert bel.map_choice(b) == 0


def test_update_rejects_wrong_length():
    task = make_task()
    b = bel.init_belief(task)
    with pytest.raises(ValueError):
        bel.update(b, np.zeros(task.n + 1), 0, task)


@given(hnp.arrays(np.float64, 7, elements=st.floats(-50, 50)))
@settings(max_examples=100, deadline=None)
def test_posterior_normalized_for_any_statistic(s):
    task = make_task()
    b = bel.BeliefState(log_prior=task.log_prior, s=s)
    post = bel.posterior(b)
    assert np.all(post >= 0)
    npt.assert_allclose(post.sum(), 1.0, atol=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 40))
@settings(max_examples=40, deadline=None)
def test_fuzzed_update_chains_stay_normalized(seed, steps):
    task = make_task(n=19, budget=steps)
    rng = np.random.default_rng(seed)
    b = bel.init_belief(task)
    target = int(rng.integers(task.n))
    for _ in range(steps):
        k = int(rng.integers(task.n))
        b = bel.update(b, sample_responses(task, target, k, rng), k, task)
        npt.assert_allclose(bel.posterior(b).sum(), 1.0, atol=1e-12)
