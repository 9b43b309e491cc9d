import numpy as np
import numpy.testing as npt
import pytest

from fovsearch import qlearn as ql
from fovsearch.belief import BeliefState, update_statistic
from fovsearch.environment import sample_responses, start_episode
from fovsearch.searchers import p_correct_given
from fovsearch.task import TaskConfig, VisibilityMap, build_location_grid


def small_task(n=5, budget=2, dprime=None):
    locs = build_location_grid(n, 3.0)
    if dprime is None:
        vmap = VisibilityMap()
    else:
        vmap = VisibilityMap(form="table",
                             table=np.array([[0.0, dprime], [50.0, dprime]]))
    return TaskConfig(locations=locs, visibility=vmap,
                      prior=np.full(n, 1.0 / n), saccade_budget=budget,
                      initial_fixation=0)


def tiny_config(**kw):
    defaults = dict(J=16, episodes_per_saccade=60, batch_size=8,
                    learning_rate=0.05, epochs=3, seed=7, hidden=16)
    defaults.update(kw)
    return ql.TrainingConfig(**defaults)


class TestQNetworkBasics:
    def test_init_shapes_and_bounds(self):
        rng = np.random.default_rng(0)
        m = ql.qnet_init(85, 512, rng)
        assert m.W1.shape == (85, 512)
        assert m.b1.shape == (512,)
        assert m.W2.shape == (512, 85)
        assert m.b2.shape == (85,)
        bound = np.sqrt(6 / (85 + 512))
        assert np.abs(m.W1).max() <= bound
        assert np.abs(m.W2).max() <= bound
        assert np.all(m.b1 == 0) and np.all(m.b2 == 0)

    def test_init_deterministic(self):
        a = ql.qnet_init(6, 9, np.random.default_rng(3))
        b = ql.qnet_init(6, 9, np.random.default_rng(3))
        npt.assert_array_equal(a.W1, b.W1)
        npt.assert_array_equal(a.W2, b.W2)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            ql.QNetwork(W1=np.zeros((3, 4)), b1=np.zeros(5),
                        W2=np.zeros((4, 3)), b2=np.zeros(3))
        with pytest.raises(ValueError):
            ql.QNetwork(W1=np.full((3, 4), np.nan), b1=np.zeros(4),
                        W2=np.zeros((4, 3)), b2=np.zeros(3))

    def test_forward_zero_weights_gives_bias(self):
        m = ql.QNetwork(W1=np.zeros((4, 3)), b1=np.zeros(3),
                        W2=np.zeros((3, 4)), b2=np.array([1.0, -2.0, 0.5, 0.0]))
        npt.assert_array_equal(ql.qnet_forward(m, np.ones(4)), m.b2)

    def test_forward_hand_computed(self):
        # 2-3-2 network, worked by hand
        W1 = np.array([[1.0, 0.0, -1.0],
                       [0.5, 2.0, 1.0]])
        b1 = np.array([0.0, -1.0, 0.25])
        W2 = np.array([[1.0, -1.0],
                       [2.0, 0.5],
                       [0.0, 3.0]])
        b2 = np.array([0.1, -0.2])
        m = ql.QNetwork(W1=W1, b1=b1, W2=W2, b2=b2)
        s = np.array([2.0, -1.0])
        # pre = [1.5, -3.0, -2.75] -> h = [1.5, 0, 0]
        # q = [1.5*1 + 0.1, 1.5*(-1) - 0.2] = [1.6, -1.7]
        npt.assert_allclose(ql.qnet_forward(m, s), [1.6, -1.7], atol=1e-12)

    def test_relu_kills_negative_preactivations(self):
        rng = np.random.default_rng(1)
        m = ql.qnet_init(4, 6, rng)
        m = ql.QNetwork(W1=m.W1, b1=np.full(6, -1e9), W2=m.W2, b2=m.b2)
        npt.assert_array_equal(ql.qnet_forward(m, rng.normal(size=4)), m.b2)

    def test_forward_batch(self):
        rng = np.random.default_rng(2)
        m = ql.qnet_init(5, 7, rng)
        batch = rng.normal(size=(3, 5))
        q = ql.qnet_forward(m, batch)
        assert q.shape == (3, 5)
        npt.assert_allclose(q[1], ql.qnet_forward(m, batch[1]), atol=1e-12)

    def test_forward_dimension_mismatch(self):
        m = ql.qnet_init(5, 7, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ql.qnet_forward(m, np.zeros(6))


class TestLossAndGradient:
    def test_perfect_prediction_zero(self):
        m = ql.QNetwork(W1=np.zeros((3, 2)), b1=np.zeros(2),
                        W2=np.zeros((2, 3)), b2=np.array([0.3, 0.6, 0.9]))
        states = np.random.default_rng(0).normal(size=(4, 3))
        targets = np.tile(m.b2, (4, 1))
        loss, grad = ql.loss_and_gradient(m, states, targets)
        assert loss == 0.0
        for g in (grad.W1, grad.b1, grad.W2, grad.b2):
            npt.assert_array_equal(g, 0.0)

    def test_zero_network_closed_form(self):
        m = ql.QNetwork(W1=np.zeros((3, 2)), b1=np.zeros(2),
                        W2=np.zeros((2, 3)), b2=np.zeros(3))
        targets = np.array([[0.1, 0.5, 0.9]])
        loss, _ = ql.loss_and_gradient(m, np.ones((1, 3)), targets)
        assert loss == pytest.approx(np.mean(targets ** 2), abs=1e-15)

    def test_empty_batch_rejected(self):
        m = ql.qnet_init(3, 2, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ql.loss_and_gradient(m, np.zeros((0, 3)), np.zeros((0, 3)))

    @pytest.mark.parametrize("seed", range(8))
    def test_gradient_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        n, H, B = (int(rng.integers(2, 6)), int(rng.integers(2, 8)),
                   int(rng.integers(1, 5)))
        m = ql.qnet_init(n, H, rng)
        states = rng.normal(scale=2.0, size=(B, n))
        targets = rng.uniform(size=(B, n))
        _, grad = ql.loss_and_gradient(m, states, targets)
        eps = 1e-5
        worst = 0.0
        for name in ("W1", "b1", "W2", "b2"):
            a = getattr(m, name)
            g = getattr(grad, name)
            for idx in np.ndindex(*a.shape):
                ap, am = a.copy(), a.copy()
                ap[idx] += eps
                am[idx] -= eps
                fields = {k: getattr(m, k) for k in ("W1", "b1", "W2", "b2")}
                lp, _ = ql.loss_and_gradient(
                    ql.QNetwork(**{**fields, name: ap}), states, targets)
                lm, _ = ql.loss_and_gradient(
                    ql.QNetwork(**{**fields, name: am}), states, targets)
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(g[idx]), 1e-8)
                worst = max(worst, abs(fd - g[idx]) / denom)
        assert worst < 1e-4


class TestTrainingConfig:
    def test_gamma_pinned_to_zero(self):
        with pytest.raises(ValueError):
            ql.TrainingConfig(gamma=0.5)

    def test_bounds(self):
        with pytest.raises(ValueError):
            ql.TrainingConfig(J=0)
        with pytest.raises(ValueError):
            ql.TrainingConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            ql.TrainingConfig(holdout_fraction=0.9)


class TestMCQTarget:
    def test_perfect_visibility_hits_one(self):
        task = small_task(n=3, dprime=12.0)
        rng = np.random.default_rng(0)
        state = start_episode(task, rng)
        s = np.zeros(task.n)
        val = ql.mc_q_target(state, s, state.target, 200, rng)
        assert val >= 0.95

    def test_single_sample_is_bernoulli(self):
        task = small_task(n=4)
        rng = np.random.default_rng(1)
        state = start_episode(task, rng)
        vals = {ql.mc_q_target(state, np.zeros(task.n), 1, 1, rng)
                for _ in range(20)}
        assert vals <= {0.0, 1.0}

    def test_matches_quadrature_expectation(self):
        # uniform prior: statistic argmax == posterior argmax, so the
        # lookahead integral gives the exact expectation of the MC target
        task = small_task(n=2, dprime=1.5)
        rng = np.random.default_rng(2)
        state = start_episode(task, rng)
        s = np.zeros(task.n)
        w = sample_responses(task, state.target, 0, rng)
        s = update_statistic(s, w, task.dprime_matrix[0])
        b = BeliefState(log_prior=task.log_prior, s=s)
        J = 100_000
        est = ql.mc_q_target(state, s, 1, J, rng)
        exact = p_correct_given(state.target, 1, b, task)
        se = np.sqrt(max(exact * (1 - exact), 1e-9) / J)
        assert abs(est - exact) <= 3 * se

    def test_j_validation(self):
        task = small_task()
        state = start_episode(task, np.random.default_rng(0))
        with pytest.raises(ValueError):
            ql.mc_q_target(state, np.zeros(task.n), 0, 0, np.random.default_rng(0))


class TestGenerateTrainingSet:
    def test_first_saccade_set(self):
        task = small_task()
        cfg = tiny_config()
        samples = ql.generate_training_set(1, [], task, cfg)
        assert len(samples) == cfg.episodes_per_saccade
        for smp in samples[:10]:
            assert smp.state.shape == (task.n,)
            assert np.all((smp.targets >= 0) & (smp.targets <= 1))
            assert 0 <= smp.true_target < task.n

    def test_deterministic(self):
        task = small_task()
        cfg = tiny_config()
        a = ql.generate_training_set(1, [], task, cfg)
        b = ql.generate_training_set(1, [], task, cfg)
        npt.assert_array_equal(np.stack([s.state for s in a]),
                               np.stack([s.state for s in b]))
        npt.assert_array_equal(np.stack([s.targets for s in a]),
                               np.stack([s.targets for s in b]))

    def test_later_saccade_needs_models(self):
        task = small_task()
        with pytest.raises(ValueError):
            ql.generate_training_set(2, [], task, tiny_config())

    def test_second_saccade_states_differ(self):
        task = small_task()
        cfg = tiny_config()
        net = ql.qnet_init(task.n, cfg.hidden, np.random.default_rng(0))
        first = ql.generate_training_set(1, [], task, cfg)
        second = ql.generate_training_set(2, [net], task, cfg)
        s1 = np.stack([s.state for s in first])
        s2 = np.stack([s.state for s in second])
        assert not np.allclose(s1, s2)


class TestGridSymmetries:
    def test_ring_layout_dihedral_group(self):
        task = small_task(n=7)
        sym = ql.grid_symmetries(task)
        # center + hexagon: 6 rotations and 6 reflections
        assert sym.shape == (12, 7)
        npt.assert_array_equal(sym[0], np.arange(7))
        for p in sym:
            assert np.unique(p).size == 7

    def test_group_closed_under_composition(self):
        task = small_task(n=7)
        sym = {tuple(p) for p in ql.grid_symmetries(task)}
        for p in sym:
            for q in sym:
                assert tuple(np.asarray(p)[np.asarray(q)]) in sym

    def test_visibility_matrix_invariant(self):
        task = small_task(n=85)
        D = task.dprime_matrix
        sym = ql.grid_symmetries(task)
        assert sym.shape[0] == 12
        for p in sym:
            npt.assert_allclose(D[p][:, p], D, atol=1e-9)

    def test_spiral_layout_identity_only(self):
        sym = ql.grid_symmetries(small_task(n=5))
        npt.assert_array_equal(sym, np.arange(5)[None, :])

    def test_no_symmetry_training_matches_flag_off(self):
        # identity-only layout: the augment flag must not change anything
        task = small_task(n=5)
        m1, _ = ql.train_saccade_network(1, task, tiny_config(), [])
        m2, _ = ql.train_saccade_network(
            1, task, tiny_config(symmetry_augment=False), [])
        npt.assert_array_equal(m1.W1, m2.W1)
        npt.assert_array_equal(m1.b1, m2.b1)


class TestTraining:
    def test_synthetic_linear_map_learned(self):
        rng = np.random.default_rng(0)
        n = 3
        M = rng.normal(scale=0.3, size=(n, n))
        states = rng.normal(size=(2000, n))
        targets = states @ M + 0.2
        samples = [ql.QTargetSample(state=s, targets=t, true_target=0)
                   for s, t in zip(states, targets)]
        task = small_task(n=n)
        cfg = ql.TrainingConfig(J=1, episodes_per_saccade=len(samples),
                                batch_size=32, learning_rate=0.2, epochs=120,
                                seed=3, hidden=64)
        model, curve = ql.train_saccade_network(1, task, cfg, [],
                                                samples=samples)
        assert curve[-1][2] < 1e-3

    def test_holdout_improves_on_real_task(self):
        task = small_task()
        cfg = tiny_config(epochs=5, episodes_per_saccade=300)
        model, curve = ql.train_saccade_network(1, task, cfg, [])
        assert curve[-1][2] < curve[0][2]
        assert len(curve) == cfg.epochs + 1

    def test_training_deterministic(self):
        task = small_task()
        cfg = tiny_config()
        m1, _ = ql.train_saccade_network(1, task, cfg, [])
        m2, _ = ql.train_saccade_network(1, task, cfg, [])
        npt.assert_array_equal(m1.W1, m2.W1)
        npt.assert_array_equal(m1.b2, m2.b2)

    def test_divergence_detected(self):
        task = small_task()
        cfg = tiny_config(learning_rate=1e9, epochs=2,
                          episodes_per_saccade=200)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(ql.TrainingDivergence):
                ql.train_saccade_network(1, task, cfg, [])


class TestCheckpoints:
    def test_round_trip_exact(self, tmp_path):
        model = ql.qnet_init(6, 10, np.random.default_rng(5))
        path = tmp_path / "net.npz"
        ql.save_checkpoint(model, path, saccade_index=2, seed=99)
        loaded, meta = ql.load_checkpoint(path)
        npt.assert_array_equal(loaded.W1, model.W1)
        npt.assert_array_equal(loaded.b1, model.b1)
        npt.assert_array_equal(loaded.W2, model.W2)
        npt.assert_array_equal(loaded.b2, model.b2)
        assert meta == {"n": 6, "hidden": 10, "saccade_index": 2, "seed": 99}

    def test_version_checked(self, tmp_path):
        model = ql.qnet_init(3, 4, np.random.default_rng(0))
        path = tmp_path / "net.npz"
        np.savez(path, format_version=99, n=3, hidden=4, saccade_index=1,
                 seed=0, W1=model.W1, b1=model.b1, W2=model.W2, b2=model.b2)
        with pytest.raises(ValueError):
            ql.load_checkpoint(path)

    def test_curve_csv(self, tmp_path):
        path = tmp_path / "curve.csv"
        ql.write_curve_csv([(0, 1.5, 1.25), (1, 0.5, 0.75)], path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "epoch,train_loss,holdout_loss"
        assert lines[1].startswith("0,1.5,1.25")
