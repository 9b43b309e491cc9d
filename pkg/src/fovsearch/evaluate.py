"""Trial batteries, proportion-correct tables, and fixation statistics.

The battery seeding scheme makes comparisons paired: episode e draws its
true target from substream (seed, ENV_STREAM, e) and its fixation-t noise
from (seed, ENV_STREAM, e, t), so two searchers run with the same seed see
identical targets and identical latent noise even where their gaze paths
diverge (the noise vector is scaled by the visibility of whatever location
is fixated).  Policy randomness, when a policy has any, comes from the
separate POLICY_STREAM and cannot perturb the environment.

Proportion correct is reported per saccade count by truncating each
episode: the recorded choice after c saccades is the posterior argmax at
that point, so one battery yields the whole PC-versus-saccades curve with
paired statistics across truncations.
"""

from __future__ import annotations

import csv
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import belief as bel
from .environment import sample_responses, start_episode
from .rng import ENV_STREAM, POLICY_STREAM, substream
from .task import TaskConfig, save_task_config

NORMALIZATION_TOL = 1e-12


class InvariantViolation(RuntimeError):
    """A run-time sanity check failed during a battery."""


@dataclass
class EpisodeLog:
    seed: int
    episode: int
    true_target: int
    fixations: list[int]            # length 1 + budget, starts at initial
    choices_by_saccade: list[int]   # argmax-posterior choice after saccade c
    final_choice: int
    reward: float
    diagnostics: list | None = None


@dataclass(frozen=True)
class PCRow:
    searcher: str
    saccades: int
    pc: float
    std_error: float
    trials: int


@dataclass(frozen=True)
class PCTable:
    rows: tuple

    def row(self, searcher: str, saccades: int) -> PCRow:
        for r in self.rows:
            if r.searcher == searcher and r.saccades == saccades:
                return r
        raise KeyError((searcher, saccades))


@dataclass(frozen=True)
class FixationHistogram:
    saccade_index: int
    counts: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        total = int(self.counts.sum())
        if total <= 0:
            raise ValueError("histogram needs at least one trial")
        if abs(float(self.frequencies.sum()) - 1.0) > NORMALIZATION_TOL:
            raise ValueError("frequencies must sum to 1")


def run_episode(task: TaskConfig, searcher, seed: int, episode: int,
                verbose: bool = False) -> EpisodeLog:
    budget = task.saccade_budget
    state = start_episode(task, substream(seed, ENV_STREAM, episode))
    b = bel.init_belief(task)
    fix = state.fixation
    fixations = [fix]
    choices = []
    diagnostics = [] if verbose else None
    for t in range(budget + 1):
        w = sample_responses(task, state.target, fix,
                             substream(seed, ENV_STREAM, episode, t))
        b = bel.update(b, w, fix, task)
        post_sum = float(bel.posterior(b).sum())
        if abs(post_sum - 1.0) > NORMALIZATION_TOL:
            raise InvariantViolation(
                f"posterior sum {post_sum!r} off unity at episode {episode}, "
                f"fixation {t}")
        if t >= 1:
            choices.append(bel.map_choice(b))
        if t < budget:
            fix = searcher.choose(
                b, t + 1, substream(seed, POLICY_STREAM, episode, t), task)
            if not (0 <= fix < task.n):
                raise InvariantViolation(
                    f"policy returned out-of-range fixation {fix}")
            fixations.append(fix)
            if verbose and getattr(searcher, "last_objectives", None) is not None:
                diagnostics.append(
                    np.array(searcher.last_objectives, copy=True))
    return EpisodeLog(
        seed=seed, episode=episode, true_target=state.target,
        fixations=fixations, choices_by_saccade=choices,
        final_choice=choices[-1],
        reward=1.0 if choices[-1] == state.target else 0.0,
        diagnostics=diagnostics)


def _episode_range(args):
    task, searcher, seed, lo, hi = args
    return [run_episode(task, searcher, seed, ep) for ep in range(lo, hi)]


def run_battery(task: TaskConfig, searcher, trials: int, seed: int,
                threads: int = 1, verbose: bool = False) -> list[EpisodeLog]:
    """Independent episodes; same seed means the same targets and noise.

    Results do not depend on `threads`: every episode is seeded by its own
    index, and logs are returned in episode order.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if threads <= 1 or trials < 4 * threads:
        return [run_episode(task, searcher, seed, ep, verbose)
                for ep in range(trials)]
    bounds = np.linspace(0, trials, 4 * threads + 1).astype(int)
    jobs = [(task, searcher, seed, int(lo), int(hi))
            for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    logs: list[EpisodeLog] = []
    with ProcessPoolExecutor(max_workers=threads) as pool:
        for chunk in pool.map(_episode_range, jobs):
            logs.extend(chunk)
    return logs


def proportion_correct(logs: list[EpisodeLog], searcher_name: str,
                       by_saccade: bool = True) -> PCTable:
    if not logs:
        raise ValueError("no episodes")
    trials = len(logs)
    rows = []
    budget = len(logs[0].choices_by_saccade)
    saccade_range = range(1, budget + 1) if by_saccade else [budget]
    for c in saccade_range:
        hits = sum(
            1 for lg in logs if lg.choices_by_saccade[c - 1] == lg.true_target)
        pc = hits / trials
        rows.append(PCRow(searcher=searcher_name, saccades=c, pc=pc,
                          std_error=float(np.sqrt(pc * (1 - pc) / trials)),
                          trials=trials))
    return PCTable(rows=tuple(rows))


def fixation_histogram(logs: list[EpisodeLog], saccade_index: int,
                       n: int) -> FixationHistogram:
    """Where the gaze landed on saccade `saccade_index` (1-based) per trial."""
    budget = len(logs[0].fixations) - 1
    if not (1 <= saccade_index <= budget):
        raise IndexError(f"saccade index must be in 1..{budget}")
    landed = np.array([lg.fixations[saccade_index] for lg in logs])
    counts = np.bincount(landed, minlength=n)
    if int(counts.sum()) != len(logs):
        raise InvariantViolation("histogram lost trials")
    return FixationHistogram(saccade_index=saccade_index, counts=counts,
                             frequencies=counts / counts.sum())


def tv_distance(h1: FixationHistogram, h2: FixationHistogram) -> float:
    """Total variation distance between two fixation distributions."""
    return 0.5 * float(np.abs(h1.frequencies - h2.frequencies).sum())


def paired_difference(logs_a: list[EpisodeLog], logs_b: list[EpisodeLog],
                      saccades: int):
    """Mean PC difference a - b at a saccade count, with SE and 95% CI.

    Valid only for batteries run with the same seed (paired targets).
    """
    if len(logs_a) != len(logs_b):
        raise ValueError("paired batteries must have equal trial counts")
    diffs = np.array([
        float(la.choices_by_saccade[saccades - 1] == la.true_target)
        - float(lb.choices_by_saccade[saccades - 1] == lb.true_target)
        for la, lb in zip(logs_a, logs_b)])
    mean = float(diffs.mean())
    se = float(diffs.std(ddof=1) / np.sqrt(diffs.size))
    return mean, se, mean - 1.96 * se, mean + 1.96 * se


def _fmt(x) -> str:
    return f"{x:.17g}"


def config_digest(task: TaskConfig, trials: int, seed: int,
                  searchers: list[str]) -> str:
    doc = {
        "locations": task.locations.coords.tolist(),
        "field_radius": task.locations.field_radius,
        "visibility": [task.visibility.form, list(task.visibility.params),
                       None if task.visibility.table is None
                       else task.visibility.table.tolist()],
        "prior": task.prior.tolist(),
        "saccade_budget": task.saccade_budget,
        "initial_fixation": task.initial_fixation,
        "trials": trials,
        "seed": seed,
        "searchers": sorted(searchers),
    }
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_pc_table(tables: list[PCTable], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["searcher", "saccades", "pc", "se", "trials"])
        for table in tables:
            for r in table.rows:
                w.writerow([r.searcher, r.saccades, _fmt(r.pc),
                            _fmt(r.std_error), r.trials])


def write_fixmap(hist: FixationHistogram, task: TaskConfig, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "x", "y", "count", "freq"])
        for i in range(task.n):
            w.writerow([i, _fmt(task.locations.coords[i, 0]),
                        _fmt(task.locations.coords[i, 1]),
                        int(hist.counts[i]), _fmt(hist.frequencies[i])])


def compare_report(task: TaskConfig, searchers: dict, trials: int, seed: int,
                   out_dir, threads: int = 1) -> dict:
    """Run paired batteries for several searchers and write the bundle.

    Emits pc_table.csv, one fixmap_<name>_<saccade>.csv per searcher and
    saccade, histograms.json, paired_differences.csv, and manifest.json.
    Returns a summary dict with the in-memory results.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    budget = task.saccade_budget
    logs = {name: run_battery(task, s, trials, seed, threads=threads)
            for name, s in searchers.items()}
    targets = {name: [lg.true_target for lg in lgs]
               for name, lgs in logs.items()}
    first = next(iter(targets.values()))
    if any(seq != first for seq in targets.values()):
        raise InvariantViolation("paired batteries saw different targets")

    tables = [proportion_correct(lgs, name) for name, lgs in logs.items()]
    write_pc_table(tables, out / "pc_table.csv")

    hists = {name: {c: fixation_histogram(lgs, c, task.n)
                    for c in range(1, budget + 1)}
             for name, lgs in logs.items()}
    hist_doc = {}
    for name, per_saccade in hists.items():
        hist_doc[name] = {}
        for c, h in per_saccade.items():
            write_fixmap(h, task, out / f"fixmap_{name}_{c}.csv")
            hist_doc[name][str(c)] = {
                "counts": h.counts.tolist(),
                "frequencies": [float(f) for f in h.frequencies],
            }
    (out / "histograms.json").write_text(
        json.dumps(hist_doc, indent=2, sort_keys=True) + "\n")

    names = sorted(logs)
    with open(out / "paired_differences.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["searcher_a", "searcher_b", "saccades", "pc_diff", "se",
                    "ci95_lo", "ci95_hi"])
        for ia, a in enumerate(names):
            for b in names[ia + 1:]:
                for c in range(1, budget + 1):
                    d, se, lo, hi = paired_difference(logs[a], logs[b], c)
                    w.writerow([a, b, c, _fmt(d), _fmt(se), _fmt(lo), _fmt(hi)])

    save_task_config(task, out / "task_config.json")
    manifest = {
        "config_sha256": config_digest(task, trials, seed, names),
        "seed": seed,
        "trials": trials,
        "searchers": names,
        "saccade_budget": budget,
        "versions": {
            "python": sys.version.split()[0],
            "numpy": np.__version__,
            "fovsearch": __import__("fovsearch").__version__,
        },
        "created_at": datetime.now(timezone.utc).isoformat(),
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return {"logs": logs, "tables": {t.rows[0].searcher: t for t in tables},
            "histograms": hists, "manifest": manifest}
