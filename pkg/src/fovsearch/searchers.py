"""Fixation-selection policies.

Four policies over the same belief interface:

* MAP: fixate the current posterior maximum.
* Ideal (IS): one-step lookahead; fixate the location k maximizing
  sum_i p_i * P(final choice lands on i | target at i, next fixation k).
* Random: uniform baseline.
* Q-network: greedy argmax of a learned per-saccade action-value network.

The lookahead probability has a one-dimensional integral form.  Condition
on the target truly being at i and the gaze moving to k.  The updated
evidence adds d'(i,k)^2 * W to each location's statistic, where W is that
location's noisy template response.  Location i keeps the posterior lead
over location j exactly when

    d_j * zeta_j  <  ln(p_i / p_j) + (d_i^2 + d_j^2) / 2 + d_i * z,

with z, zeta_j independent standard normals (target present at i, absent
at j) and d_* = d'(*, k).  Integrating the j-factors' normal CDFs against
the density of z gives

    p(correct | i, k) = E_z[ prod_{j != i} Phi(A_ij + d_i * z / d_j) ],
    A_ij = (ln(p_i / p_j) + (d_i^2 + d_j^2) / 2) / d_j.

Every factor is increasing in z, so the product climbs monotonically from
0 to 1 and the integrand's support is computable in closed form: below
a = max_j (-clip - A_ij) d_j / d_i some factor is still ~0, above
b = max_j (clip - A_ij) d_j / d_i every factor is ~1 and the remaining
mass is exactly 1 - Phi(b).  The default scheme integrates the window
[a, b] by composite Gauss-Legendre panels split at each steep factor's
transition point (steepness is a visibility ratio and can defeat any
fixed global grid), which leaves the result converged far below 1e-6 at
the default node count.  Gauss-Hermite and adaptive Simpson remain as
cross-check schemes.  A numba kernel fuses the full objective sweep over
all candidate fixations; a plain numpy path keeps reference semantics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import ndtr

from . import belief as bel
from .belief import BeliefState
from .qlearn import QNetwork, grid_symmetries, symmetrized_q
from .quadrature import (DEFAULT_QUAD, GAUSS_HERMITE, WINDOWED_LEGENDRE,
                         QuadratureError, QuadratureSpec, adaptive_simpson,
                         hermite_nodes, legendre_nodes)
from .task import TaskConfig

SQRT2 = math.sqrt(2.0)
INV_SQRT2 = 1.0 / SQRT2
INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)

# posterior mass below this can never overtake the leader; treated as zero
ZERO_POSTERIOR = 1e-300

# |z| beyond this Phi(z) is 0 or 1 to 5e-17; bounds the integration window
# and lets the kernels treat saturated CDF factors as constants
PHI_CLIP = 8.3

# factors narrower than this fraction of the window get their own panel
# split; 0.75 measures ~7e-9 node-doubling stability on hard states while
# skipping splits for factors wide enough to resolve mid-panel
SHARP_FRACTION = 0.75

# at most this many panel cuts per term, keeping the narrowest factors;
# beyond ~24 the dropped factors are the widest and resolve mid-panel
MAX_CUTS = 24

# panels at least this fraction of the window sweep the full node count;
# narrower panels have their transitions at the endpoints (where Legendre
# nodes cluster) and get by with the reduced count below
WIDE_PANEL_FRACTION = 1.0 / 6.0

# panels narrower than this carry no probability mass worth a node sweep
PANEL_MIN_WIDTH = 1e-12

# node weights crushed below this by earlier CDF factors cannot move the
# objective at double precision; later factors skip such nodes
ACC_FLOOR = 1e-18


def _narrow_panel_nodes(nodes: int) -> int:
    return max(8, nodes // 6)

# mixture components below this weight shift the objective by < 1e-10
# total and are skipped in the fused sweep
MIX_TOL = 1e-12

CONVERGENCE_TOL = 1e-6

# objective gaps below quadrature accuracy are ties; once the posterior is
# near-certain every lookahead value saturates at 1.0 and the argmax would
# otherwise fall to index 0, so ties break toward the posterior maximum
TIE_EPS = 1e-9


def _posterior_logs(post: np.ndarray):
    """log posterior with exact -inf at (near-)zero entries."""
    safe = np.where(post > ZERO_POSTERIOR, post, 1.0)
    return np.where(post > ZERO_POSTERIOR, np.log(safe), -np.inf)


def _windowed_value(A: np.ndarray, C: np.ndarray, m: int) -> float:
    """Composite Legendre value of E_z[prod_j Phi(A_j + C_j z)], C_j > 0.

    The product is ~0 left of a (some factor still saturated low) and ~1
    right of b (every factor saturated high), so only [a, b] is swept;
    the right tail contributes 1 - Phi(b) exactly.  Factors much steeper
    than the window get a panel boundary at their transition center,
    where Legendre nodes cluster.
    """
    lo_j = (-PHI_CLIP - A) / C
    hi_j = (PHI_CLIP - A) / C
    a = min(max(float(lo_j.max()), -PHI_CLIP), PHI_CLIP)
    b = min(max(float(hi_j.max()), -PHI_CLIP), PHI_CLIP)
    total = float(ndtr(-b))
    if a >= b:
        return total
    width = b - a
    spans = hi_j - lo_j
    centers = 0.5 * (lo_j + hi_j)
    sharp = ((spans < SHARP_FRACTION * width)
             & (centers > a) & (centers < b))
    cuts = centers[sharp]
    if cuts.size > MAX_CUTS:
        order = np.lexsort((cuts, spans[sharp]))
        cuts = cuts[order[:MAX_CUTS]]
    edges = np.concatenate(([a], np.sort(cuts), [b]))
    m_narrow = _narrow_panel_nodes(m)
    wide_width = WIDE_PANEL_FRACTION * width
    for p_lo, p_hi in zip(edges[:-1], edges[1:]):
        if p_hi - p_lo <= PANEL_MIN_WIDTH:
            continue
        xi, w = legendre_nodes(m if p_hi - p_lo >= wide_width else m_narrow)
        half = 0.5 * (p_hi - p_lo)
        z = 0.5 * (p_hi + p_lo) + half * xi
        g = INV_SQRT2PI * np.exp(-0.5 * z * z)
        args = A[None, :] + C[None, :] * z[:, None]
        g = g * np.where(args >= PHI_CLIP, 1.0, ndtr(args)).prod(axis=1)
        total += half * float(np.dot(w, g))
    return total


def _p_correct_single(i: int, post: np.ndarray, logp: np.ndarray,
                      d: np.ndarray, quad: QuadratureSpec) -> float:
    """Reference evaluation of p(correct | i, k) for one (i, k)."""
    n = post.shape[0]
    if n == 1:
        return 1.0
    if post[i] <= ZERO_POSTERIOR:
        return 0.0
    js = np.array([j for j in range(n)
                   if j != i and post[j] > ZERO_POSTERIOR], dtype=np.intp)
    if js.size == 0:
        return 1.0
    di = d[i]
    dj = d[js]
    A = (logp[i] - logp[js] + 0.5 * (di * di + dj * dj)) / dj
    C = di / dj

    if quad.scheme == WINDOWED_LEGENDRE:
        return _windowed_value(A, C, quad.nodes)

    def integrand(z):
        zcol = np.atleast_1d(z)[:, None]
        vals = ndtr(A[None, :] + C[None, :] * zcol).prod(axis=1)
        return vals if np.ndim(z) else float(vals[0])

    if quad.scheme == GAUSS_HERMITE:
        x, wbar = hermite_nodes(quad.nodes)
        return float(np.dot(wbar, integrand(SQRT2 * x)))
    h = quad.tail_halfwidth
    inv = 1.0 / math.sqrt(2.0 * math.pi)
    return adaptive_simpson(
        lambda z: inv * math.exp(-0.5 * z * z) * integrand(z),
        -h, h)


def p_correct_given(i: int, k_next: int, belief: BeliefState, task: TaskConfig,
                    quad: QuadratureSpec = DEFAULT_QUAD,
                    check_convergence: bool = False) -> float:
    """Probability the final choice is i, given target at i and gaze at k_next.

    With check_convergence the integral is re-evaluated at doubled node
    count and a QuadratureError is raised if the two disagree by more than
    1e-6 (advice: enlarge the spec).
    """
    n = task.n
    if not (0 <= i < n and 0 <= k_next < n):
        raise IndexError(f"location index out of range (n={n})")
    post = bel.posterior(belief)
    logp = _posterior_logs(post)
    d = task.dprime_matrix[k_next]
    value = _p_correct_single(i, post, logp, d, quad)
    if check_convergence:
        refined = _p_correct_single(i, post, logp, d, quad.doubled())
        if abs(refined - value) > CONVERGENCE_TOL:
            raise QuadratureError(
                f"quadrature not converged at {quad.nodes} nodes "
                f"(doubling moved the result by {abs(refined - value):.3g}); "
                f"use a QuadratureSpec with more nodes")
    return min(1.0, max(0.0, value))


@njit(cache=True)
def _band_index(x, t):
    """First index m with x[m] >= t (x ascending)."""
    lo, hi = 0, x.size
    while lo < hi:
        mid = (lo + hi) // 2
        if x[mid] < t:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True)
def _objective_kernel(logp, p, keep, D, x, wbar):
    """Fused IS objective sweep: U[k] = sum_i p_i * p(correct | i, k).

    For each CDF factor only the node band where Phi is strictly between
    0 and 1 is multiplied in; nodes left of any factor's band make the
    whole product vanish and are skipped outright.
    """
    n = D.shape[0]
    M = x.size
    U = np.zeros(n)
    acc = np.empty(M)
    a_arr = np.empty(n, np.int64)
    b_arr = np.empty(n, np.int64)
    A_arr = np.empty(n)
    C_arr = np.empty(n)
    for k in range(n):
        dk = D[k]
        u = 0.0
        for i in range(n):
            if not keep[i]:
                continue
            di = dk[i]
            di2h = 0.5 * di * di
            lpi = logp[i]
            zero_cut = 0
            for j in range(n):
                if j == i or p[j] <= 0.0:
                    b_arr[j] = 0
                    a_arr[j] = 0
                    continue
                dj = dk[j]
                A = (lpi - logp[j] + di2h + 0.5 * dj * dj) / dj
                C = SQRT2 * di / dj
                A_arr[j] = A
                C_arr[j] = C
                a = _band_index(x, (-PHI_CLIP - A) / C)
                b = _band_index(x, (PHI_CLIP - A) / C)
                a_arr[j] = a
                b_arr[j] = b
                if a > zero_cut:
                    zero_cut = a
            if zero_cut >= M:
                continue
            for m in range(zero_cut, M):
                acc[m] = 1.0
            for j in range(n):
                b = b_arr[j]
                if b <= zero_cut:
                    continue
                A = A_arr[j]
                C = C_arr[j]
                if b > M:
                    b = M
                for m in range(zero_cut, b):
                    z = A + C * x[m]
                    acc[m] *= 0.5 * math.erfc(-z * INV_SQRT2)
            pc = 0.0
            for m in range(zero_cut, M):
                pc += wbar[m] * acc[m]
            u += p[i] * pc
        U[k] = u
    return U


@njit(cache=True)
def _objective_kernel_wgl(logp, p, keep, D, xi_f, w_f, xi_s, w_s):
    """Fused IS objective sweep under the windowed Legendre scheme.

    Mirrors _windowed_value per (k, i): closed-form window [a, b], panel
    splits at the narrowest steep-factor centers (capped at MAX_CUTS),
    the exact 1 - Phi(b) tail, reduced node counts on narrow panels, and
    a per-panel node band so saturated factors never hit erfc.
    """
    n = D.shape[0]
    mf = xi_f.size
    U = np.zeros(n)
    A = np.empty(n)
    C = np.empty(n)
    hij = np.empty(n)
    cuts = np.empty(n)
    cut_spans = np.empty(n)
    xs = np.empty(mf)
    acc = np.empty(mf)
    for k in range(n):
        dk = D[k]
        u = 0.0
        for i in range(n):
            if not keep[i]:
                continue
            di = dk[i]
            di2h = 0.5 * di * di
            lpi = logp[i]
            na = 0
            lo_max = -np.inf
            hi_max = -np.inf
            for j in range(n):
                if j == i or p[j] <= 0.0:
                    continue
                dj = dk[j]
                Aj = (lpi - logp[j] + di2h + 0.5 * dj * dj) / dj
                Cj = di / dj
                lj = (-PHI_CLIP - Aj) / Cj
                hj = (PHI_CLIP - Aj) / Cj
                if lj > lo_max:
                    lo_max = lj
                if hj > hi_max:
                    hi_max = hj
                A[na] = Aj
                C[na] = Cj
                hij[na] = hj
                na += 1
            if na == 0:
                u += p[i]
                continue
            a = min(max(lo_max, -PHI_CLIP), PHI_CLIP)
            b = min(max(hi_max, -PHI_CLIP), PHI_CLIP)
            pc = 0.5 * math.erfc(b * INV_SQRT2)
            if a < b:
                width = b - a
                ncut = 0
                for t in range(na):
                    span = 2.0 * PHI_CLIP / C[t]
                    ctr = hij[t] - PHI_CLIP / C[t]
                    if span < SHARP_FRACTION * width and ctr > a and ctr < b:
                        # sort by (span, ctr) as it fills, so truncating
                        # keeps the narrowest factors deterministically
                        q2 = ncut - 1
                        while q2 >= 0 and (
                                cut_spans[q2] > span
                                or (cut_spans[q2] == span
                                    and cuts[q2] > ctr)):
                            cuts[q2 + 1] = cuts[q2]
                            cut_spans[q2 + 1] = cut_spans[q2]
                            q2 -= 1
                        cuts[q2 + 1] = ctr
                        cut_spans[q2 + 1] = span
                        ncut += 1
                if ncut > MAX_CUTS:
                    ncut = MAX_CUTS
                for q1 in range(1, ncut):
                    key = cuts[q1]
                    q2 = q1 - 1
                    while q2 >= 0 and cuts[q2] > key:
                        cuts[q2 + 1] = cuts[q2]
                        q2 -= 1
                    cuts[q2 + 1] = key
                wide_width = WIDE_PANEL_FRACTION * width
                p_lo = a
                for e in range(ncut + 1):
                    p_hi = b if e == ncut else cuts[e]
                    if p_hi - p_lo <= PANEL_MIN_WIDTH:
                        p_lo = p_hi
                        continue
                    if p_hi - p_lo >= wide_width:
                        xi = xi_f
                        w = w_f
                        m = mf
                    else:
                        xi = xi_s
                        w = w_s
                        m = xi_s.size
                    half = 0.5 * (p_hi - p_lo)
                    mid = 0.5 * (p_hi + p_lo)
                    for q in range(m):
                        x = mid + half * xi[q]
                        xs[q] = x
                        acc[q] = w[q] * INV_SQRT2PI * math.exp(-0.5 * x * x)
                    for t in range(na):
                        ht = hij[t]
                        if ht <= p_lo:
                            continue
                        qhi = _band_index(xs[:m], ht)
                        At = A[t]
                        Ct = C[t]
                        for q in range(qhi):
                            if acc[q] <= ACC_FLOOR:
                                continue
                            arg = At + Ct * xs[q]
                            acc[q] *= 0.5 * math.erfc(-arg * INV_SQRT2)
                    s = 0.0
                    for q in range(m):
                        s += acc[q]
                    pc += half * s
                    p_lo = p_hi
            u += p[i] * pc
        U[k] = u
    return U


def is_objective(belief: BeliefState, task: TaskConfig,
                 quad: QuadratureSpec = DEFAULT_QUAD,
                 engine: str = "fused") -> np.ndarray:
    """Lookahead objective for every candidate fixation k.

    engine "fused" runs a numba sweep (windowed-legendre or gauss-hermite,
    with the documented sub-1e-9 pruning); "reference" evaluates
    p_correct_given termwise and supports every scheme.
    """
    post = bel.posterior(belief)
    logp = _posterior_logs(post)
    if engine == "fused" and quad.scheme in (WINDOWED_LEGENDRE, GAUSS_HERMITE):
        keep = post > MIX_TOL
        zeroed = np.where(post > ZERO_POSTERIOR, post, 0.0)
        if quad.scheme == WINDOWED_LEGENDRE:
            xi_f, w_f = legendre_nodes(quad.nodes)
            xi_s, w_s = legendre_nodes(_narrow_panel_nodes(quad.nodes))
            return _objective_kernel_wgl(logp, zeroed, keep,
                                         task.dprime_matrix,
                                         xi_f, w_f, xi_s, w_s)
        x, wbar = hermite_nodes(quad.nodes)
        return _objective_kernel(logp, zeroed, keep, task.dprime_matrix,
                                 x, wbar)
    n = task.n
    d = task.dprime_matrix
    U = np.zeros(n)
    for k in range(n):
        U[k] = sum(post[i] * _p_correct_single(i, post, logp, d[k], quad)
                   for i in range(n) if post[i] > ZERO_POSTERIOR)
    return U


def next_fixation_map(belief: BeliefState) -> int:
    """Fixate the posterior maximum (ties to the lowest index)."""
    return bel.map_choice(belief)


def _tie_broken_argmax(U: np.ndarray, belief: BeliefState) -> int:
    """Best objective wins; within TIE_EPS of the best, the candidates are
    indistinguishable at quadrature accuracy and the posterior maximum wins
    (saturated beliefs score every fixation at exactly 1)."""
    tied = U >= U.max() - TIE_EPS
    post = bel.posterior(belief)
    return int(np.argmax(np.where(tied, post, -1.0)))


def next_fixation_ideal(belief: BeliefState, task: TaskConfig,
                        quad: QuadratureSpec = DEFAULT_QUAD) -> int:
    """Fixate the location with the best one-step lookahead objective."""
    return _tie_broken_argmax(is_objective(belief, task, quad), belief)


def next_fixation_random(belief: BeliefState, rng: np.random.Generator) -> int:
    """Uniform over locations; baseline."""
    return int(rng.integers(0, belief.n))


def next_fixation_qnet(model: QNetwork, belief: BeliefState,
                       symmetries: np.ndarray | None = None) -> int:
    """Greedy action of a Q-network evaluated on the evidence statistic.

    With `symmetries` (rows of location permutations from grid_symmetries),
    the prediction is averaged over every symmetric relabeling of the
    state and mapped back.  The exact action-value function is equivariant
    under those relabelings, so the averaged predictor is a projection of
    the network onto the equivariant class: its error can only shrink, and
    frame-dependent quirks of the fit cancel instead of steering the gaze.
    """
    if model.n != belief.n:
        raise ValueError(
            f"network expects n={model.n} locations, belief has {belief.n}")
    return int(np.argmax(symmetrized_q(model, belief.s, symmetries)))


@dataclass
class MAPSearcher:
    name: str = "map"

    def choose(self, belief, saccade_index, rng, task=None):
        return next_fixation_map(belief)


@dataclass
class IdealSearcher:
    quad: QuadratureSpec = DEFAULT_QUAD
    engine: str = "fused"
    name: str = "is"
    last_objectives: np.ndarray | None = field(default=None, repr=False)

    def choose(self, belief, saccade_index, rng, task=None):
        U = is_objective(belief, task, self.quad, self.engine)
        self.last_objectives = U
        return _tie_broken_argmax(U, belief)


@dataclass
class RandomSearcher:
    name: str = "random"

    def choose(self, belief, saccade_index, rng, task=None):
        return next_fixation_random(belief, rng)


@dataclass
class QNetSearcher:
    """Greedy per-saccade networks; models[t-1] drives saccade t.

    With symmetrize on (default), predictions are averaged over the
    display's symmetry group before the argmax; see next_fixation_qnet.
    """

    models: tuple
    symmetrize: bool = True
    name: str = "qnet"
    _symmetries: np.ndarray | None = field(default=None, repr=False)

    def choose(self, belief, saccade_index, rng, task=None):
        if not (1 <= saccade_index <= len(self.models)):
            raise IndexError(
                f"no network for saccade {saccade_index} "
                f"(have {len(self.models)})")
        sym = None
        if self.symmetrize and task is not None:
            if self._symmetries is None:
                self._symmetries = grid_symmetries(task)
            sym = self._symmetries
        return next_fixation_qnet(self.models[saccade_index - 1], belief, sym)
