"""Action-value networks trained to imitate one-step lookahead.

One two-layer ReLU network per saccade maps the evidence statistic s
(dimension n) to n action values.  Because the discount is fixed at zero,
the target for action a is just the expected immediate terminal reward of
saccading to a, estimated by Monte Carlo: draw J response vectors at a
given the episode's true target, fold each into the statistic, and score
whether the statistic argmax lands on the target.  Targets are therefore
plain regression labels in [0, 1]; no bootstrapping, replay, or target
network is involved.

Training states for saccade t come from greedy rollouts of the already
trained networks for saccades < t, so the behaviour distribution matches
how the final stack is deployed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .belief import init_belief, update_statistic
from .environment import sample_responses, start_episode
from .rng import substream
from .task import TaskConfig

FORMAT_VERSION = 1

QTRAIN_STREAM = 2
QFIT_STREAM = 3


class TrainingDivergence(RuntimeError):
    """Loss became non-finite; carries the step at which it happened."""


@dataclass(frozen=True)
class QNetwork:
    """Two-layer perceptron: Q = W2.T @ relu(W1.T @ s + b1) + b2."""

    W1: np.ndarray   # (n, H)
    b1: np.ndarray   # (H,)
    W2: np.ndarray   # (H, n)
    b2: np.ndarray   # (n,)

    def __post_init__(self):
        n, H = self.W1.shape
        if self.b1.shape != (H,) or self.W2.shape != (H, n) or self.b2.shape != (n,):
            raise ValueError("inconsistent network shapes")
        for a in (self.W1, self.b1, self.W2, self.b2):
            if not np.all(np.isfinite(a)):
                raise ValueError("network weights must be finite")

    @property
    def n(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[1]


@dataclass
class QGradients:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True)
class TrainingConfig:
    """Defaults are the shipped operating point, tuned on held-out exact
    objective values: targets average away across states faster than they
    sharpen per state, so a small MC sample budget (J) buys 3x the episodes
    at equal cost; 30 epochs at rate 0.3 is where held-out loss bottoms
    before plain SGD starts oscillating."""

    J: int = 32
    episodes_per_saccade: int = 60000
    batch_size: int = 64
    learning_rate: float = 0.3
    epochs: int = 30
    seed: int = 0x5EED
    gamma: float = 0.0
    hidden: int = 512
    holdout_fraction: float = 0.1
    symmetry_augment: bool = True

    def __post_init__(self):
        if self.J < 1:
            raise ValueError("J must be >= 1")
        if self.gamma != 0.0:
            raise ValueError("only gamma = 0 is supported (no bootstrapping)")
        if not (0.0 < self.holdout_fraction < 0.5):
            raise ValueError("holdout_fraction must be in (0, 0.5)")
        if min(self.episodes_per_saccade, self.batch_size, self.epochs) < 1:
            raise ValueError("episodes, batch_size, and epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class QTargetSample:
    state: np.ndarray     # (n,) evidence statistic
    targets: np.ndarray   # (n,) estimated Q per action, each in [0, 1]
    true_target: int      # provenance only; never fed to the network


def qnet_init(n: int, hidden: int, rng: np.random.Generator) -> QNetwork:
    """Scaled-uniform init, bound sqrt(6 / (fan_in + fan_out)); zero biases."""
    if n < 1 or hidden < 1:
        raise ValueError("dimensions must be >= 1")
    bound1 = np.sqrt(6.0 / (n + hidden))
    bound2 = np.sqrt(6.0 / (hidden + n))
    return QNetwork(
        W1=rng.uniform(-bound1, bound1, size=(n, hidden)),
        b1=np.zeros(hidden),
        W2=rng.uniform(-bound2, bound2, size=(hidden, n)),
        b2=np.zeros(n),
    )


def qnet_forward(model: QNetwork, s: np.ndarray) -> np.ndarray:
    """Q values for one state (n,) or a batch (B, n); linear output head."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape[-1] != model.n:
        raise ValueError(f"state dimension {s.shape[-1]} != network n {model.n}")
    h = np.maximum(s @ model.W1 + model.b1, 0.0)
    return h @ model.W2 + model.b2


def loss_and_gradient(model: QNetwork, states: np.ndarray,
                      targets: np.ndarray) -> tuple[float, QGradients]:
    """Mean squared error over every (state, action) pair, plus exact grads."""
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("batch must be nonempty")
    if states.shape != targets.shape or states.shape[1] != model.n:
        raise ValueError("states and targets must both be (B, n)")
    B, n = states.shape
    pre = states @ model.W1 + model.b1
    h = np.maximum(pre, 0.0)
    q = h @ model.W2 + model.b2
    err = q - targets
    loss = float((err ** 2).mean())
    dq = (2.0 / (B * n)) * err
    gW2 = h.T @ dq
    gb2 = dq.sum(axis=0)
    dh = dq @ model.W2.T
    dh[pre <= 0.0] = 0.0
    gW1 = states.T @ dh
    gb1 = dh.sum(axis=0)
    return loss, QGradients(W1=gW1, b1=gb1, W2=gW2, b2=gb2)


def _mc_targets_all_actions(task: TaskConfig, true_target: int, s: np.ndarray,
                            J: int, rng: np.random.Generator) -> np.ndarray:
    """Monte-Carlo Q targets for every action at once.

    The same J standard-normal draws are reused across actions (common
    random numbers): each action's estimate keeps the mc_q_target
    distribution while action comparisons share the noise.
    """
    n = task.n
    means = np.full(n, task.mean_absent)
    means[true_target] = task.mean_present
    z = rng.standard_normal((J, n))
    d = task.dprime_matrix                      # (n actions, n locations)
    # statistic update for action a: s + d_a^2 * means + d_a * z
    base = s[None, :] + (d * d) * means[None, :]    # (n, n)
    snext = base[:, None, :] + d[:, None, :] * z[None, :, :]   # (n, J, n)
    wins = snext.argmax(axis=2) == true_target
    return wins.mean(axis=1)


def mc_q_target(env_state, s: np.ndarray, action: int, J: int,
                rng: np.random.Generator) -> float:
    """Estimated immediate value of saccading to `action` from statistic s.

    Draws J fresh response vectors at `action` given the episode's true
    target, folds each into s, and returns the fraction whose argmax is
    the true target.
    """
    if J < 1:
        raise ValueError("J must be >= 1")
    task = env_state.task
    wins = 0
    for _ in range(J):
        w = sample_responses(task, env_state.target, action, rng)
        snext = update_statistic(s, w, task.dprime_matrix[action])
        if int(np.argmax(snext)) == env_state.target:
            wins += 1
    return wins / J


def symmetrized_q(model: QNetwork, s: np.ndarray,
                  symmetries: np.ndarray | None = None) -> np.ndarray:
    """Q values averaged over symmetric relabelings of the state.

    The exact action-value function is equivariant under the display's
    symmetry permutations, so averaging the network over them projects it
    onto the equivariant class: approximation error can only shrink, and
    frame-dependent quirks of the fit cancel.  With symmetries None (or
    just the identity) this is a plain forward pass.
    """
    if symmetries is None or symmetries.shape[0] == 1:
        return qnet_forward(model, s)
    q = qnet_forward(model, np.asarray(s)[symmetries])   # row g: frame g
    acc = np.zeros(model.n)
    for p, row in zip(symmetries, q):
        acc[p] += row
    return acc / symmetries.shape[0]


def _greedy_action(model: QNetwork, s: np.ndarray, symmetries=None) -> int:
    return int(np.argmax(symmetrized_q(model, s, symmetries)))


def generate_training_set(t: int, prior_models, task: TaskConfig,
                          config: TrainingConfig) -> list[QTargetSample]:
    """States at saccade t under greedy earlier-network rollouts, with
    all-action Monte-Carlo targets.

    Episode e uses the RNG substream (seed, QTRAIN_STREAM, t, e), so the
    set is reproducible and independent of generation order.  Rollouts use
    the same symmetry-averaged greedy rule the deployed searcher applies,
    keeping the state distribution on-policy.
    """
    if len(prior_models) != t - 1:
        raise ValueError(f"saccade {t} needs {t - 1} earlier networks, "
                         f"got {len(prior_models)}")
    sym = grid_symmetries(task) if config.symmetry_augment else None
    samples = []
    for ep in range(config.episodes_per_saccade):
        g = substream(config.seed, QTRAIN_STREAM, t, ep)
        state = start_episode(task, g)
        s = init_belief(task).s.copy()
        w = sample_responses(task, state.target, state.fixation, g)
        s = update_statistic(s, w, task.dprime_matrix[state.fixation])
        for u in range(1, t):
            a = _greedy_action(prior_models[u - 1], s, sym)
            w = sample_responses(task, state.target, a, g)
            s = update_statistic(s, w, task.dprime_matrix[a])
        targets = _mc_targets_all_actions(task, state.target, s, config.J, g)
        samples.append(QTargetSample(state=s, targets=targets,
                                     true_target=state.target))
    return samples


def grid_symmetries(task: TaskConfig) -> np.ndarray:
    """Location permutations under which training pairs are equidistributed.

    A rotation or reflection of the display that maps the location set onto
    itself preserves eccentricity and hence the visibility map, so relabeling
    an episode's (state, targets) pair by the induced permutation yields a
    sample from exactly the same distribution.  Candidate isometries are the
    ones aligning the first innermost-ring location with each of its ring
    mates; a candidate is kept when it permutes the locations exactly and
    leaves the visibility matrix invariant.  Returns a (G, n) int array with
    the identity in row 0; layouts with no symmetry yield just the identity.
    """
    coords = np.asarray(task.locations.coords, dtype=np.float64)
    n = coords.shape[0]
    radii = np.hypot(coords[:, 0], coords[:, 1])
    scale = float(radii.max())
    identity = np.arange(n)
    if scale <= 0.0:
        return identity[None, :]
    tol = 1e-6 * scale
    inner_r = radii[radii > tol].min()
    inner = np.flatnonzero(np.abs(radii - inner_r) <= tol)
    theta = np.arctan2(coords[:, 1], coords[:, 0])
    base = theta[inner[0]]
    D = task.dprime_matrix
    found = {}
    for j in inner:
        # rotation by theta_j - base, and reflection across the bisector
        rot = theta[j] - base
        ref = theta[j] + base
        c, s = np.cos(rot), np.sin(rot)
        c2, s2 = np.cos(ref), np.sin(ref)
        for M in (np.array([[c, -s], [s, c]]),
                  np.array([[c2, s2], [s2, -c2]])):
            img = coords @ M.T
            dist = np.hypot(img[:, None, 0] - coords[None, :, 0],
                            img[:, None, 1] - coords[None, :, 1])
            perm = dist.argmin(axis=1)
            if dist[identity, perm].max() > tol:
                continue
            if np.unique(perm).size != n:
                continue
            if not np.allclose(D[perm][:, perm], D, atol=1e-9):
                continue
            found.setdefault(tuple(perm), perm)
    perms = sorted(found.values(),
                   key=lambda p: (not np.array_equal(p, identity), tuple(p)))
    return np.stack(perms)


def _epoch_loss(model: QNetwork, states, targets, batch_size: int) -> float:
    total = 0.0
    B = states.shape[0]
    for lo in range(0, B, batch_size):
        hi = min(lo + batch_size, B)
        loss, _ = loss_and_gradient(model, states[lo:hi], targets[lo:hi])
        total += loss * (hi - lo)
    return total / B


def train_saccade_network(t: int, task: TaskConfig, config: TrainingConfig,
                          prior_models, samples=None):
    """Fit the saccade-t network by plain mini-batch gradient descent.

    When the display layout has rotation or reflection symmetries, each
    training pair is replayed once per symmetry (grid_symmetries): the
    relabeled pairs come from exactly the same distribution, so this
    multiplies the effective sample count without extra simulation.  The
    held-out split stays unaugmented.

    Gradient descent runs in standardized coordinates: inputs are shifted
    and scaled per feature (statistic spreads vary with visibility by more
    than an order of magnitude, which starves poorly-visible locations of
    gradient) and targets are centered per action.  The affine transform
    folds back into the exported weights, so the returned model consumes
    raw states and emits raw Q values; predictions and losses are
    identical to training directly at the exported weights.

    Returns (model, curve) where curve rows are
    (epoch, mean train loss, held-out loss); epoch 0 is pre-training.
    Raises TrainingDivergence if the loss goes non-finite.
    """
    if samples is None:
        samples = generate_training_set(t, prior_models, task, config)
    states = np.stack([smp.state for smp in samples])
    targets = np.stack([smp.targets for smp in samples])
    g = substream(config.seed, QFIT_STREAM, t)
    perm = g.permutation(states.shape[0])
    n_hold = max(1, int(round(config.holdout_fraction * states.shape[0])))
    hold, train = perm[:n_hold], perm[n_hold:]
    hs, ht = states[hold], targets[hold]
    ts, tt = states[train], targets[train]

    if config.symmetry_augment:
        sym = grid_symmetries(task)
        if sym.shape[0] > 1:
            ts = np.concatenate([ts[:, p] for p in sym])
            tt = np.concatenate([tt[:, p] for p in sym])

    mu = ts.mean(axis=0)
    sd = ts.std(axis=0)
    sd = np.where(sd < 1e-8, 1.0, sd)
    y_mu = tt.mean(axis=0)
    # fancy indexing and concatenate both copy, so in-place is safe here
    ts -= mu
    ts /= sd
    hs -= mu
    hs /= sd
    tt -= y_mu
    ht -= y_mu

    model = qnet_init(task.n, config.hidden, g)
    W1, b1 = model.W1.copy(), model.b1.copy()
    W2, b2 = model.W2.copy(), model.b2.copy()

    def snapshot():
        return QNetwork(W1=W1 / sd[:, None], b1=b1 - (mu / sd) @ W1,
                        W2=W2.copy(), b2=b2 + y_mu)

    curve = [(0, _epoch_loss(snapshot_free(W1, b1, W2, b2),
                             ts, tt, config.batch_size),
              _epoch_loss(snapshot_free(W1, b1, W2, b2),
                          hs, ht, config.batch_size))]
    lr = config.learning_rate
    for epoch in range(1, config.epochs + 1):
        order = g.permutation(ts.shape[0])
        run, seen = 0.0, 0
        for lo in range(0, ts.shape[0], config.batch_size):
            idx = order[lo:lo + config.batch_size]
            loss, grad = loss_and_gradient(snapshot_free(W1, b1, W2, b2),
                                           ts[idx], tt[idx])
            if not np.isfinite(loss):
                raise TrainingDivergence(
                    f"saccade {t}: loss became {loss} at epoch {epoch}, "
                    f"step {lo // config.batch_size}")
            W1 -= lr * grad.W1
            b1 -= lr * grad.b1
            W2 -= lr * grad.W2
            b2 -= lr * grad.b2
            run += loss * idx.size
            seen += idx.size
        curve.append((epoch, run / seen,
                      _epoch_loss(snapshot_free(W1, b1, W2, b2),
                                  hs, ht, config.batch_size)))
    return snapshot(), curve


def snapshot_free(W1, b1, W2, b2) -> QNetwork:
    """Zero-copy view of in-progress weights as a QNetwork."""
    net = object.__new__(QNetwork)
    object.__setattr__(net, "W1", W1)
    object.__setattr__(net, "b1", b1)
    object.__setattr__(net, "W2", W2)
    object.__setattr__(net, "b2", b2)
    return net


def save_checkpoint(model: QNetwork, path, saccade_index: int, seed: int) -> None:
    """Exact-round-trip container for one saccade network."""
    np.savez(path, format_version=FORMAT_VERSION, n=model.n,
             hidden=model.hidden, saccade_index=saccade_index, seed=seed,
             W1=model.W1, b1=model.b1, W2=model.W2, b2=model.b2)


def load_checkpoint(path) -> tuple[QNetwork, dict]:
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = QNetwork(W1=z["W1"], b1=z["b1"], W2=z["W2"], b2=z["b2"])
        meta = {"n": int(z["n"]), "hidden": int(z["hidden"]),
                "saccade_index": int(z["saccade_index"]), "seed": int(z["seed"])}
    return model, meta


def write_curve_csv(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "holdout_loss"])
        for epoch, train_loss, holdout_loss in curve:
            w.writerow([epoch, f"{train_loss:.17g}", f"{holdout_loss:.17g}"])
