import csv
import json

import numpy as np
import numpy.testing as npt
import pytest

from fovsearch import evaluate as ev
from fovsearch.searchers import MAPSearcher, RandomSearcher
from fovsearch.task import TaskConfig, VisibilityMap, build_location_grid


def small_task(n=7, budget=2):
    locs = build_location_grid(n, 4.0)
    return TaskConfig(locations=locs, visibility=VisibilityMap(),
                      prior=np.full(n, 1.0 / n), saccade_budget=budget,
                      initial_fixation=0)


class FixedSearcher:
    """Always looks at the same location."""

    def __init__(self, where):
        self.where = where

    def choose(self, belief, saccade_index, rng, task=None):
        return self.where


def make_log(episode, true_target, fixations, choices):
    return ev.EpisodeLog(seed=0, episode=episode, true_target=true_target,
                         fixations=fixations, choices_by_saccade=choices,
                         final_choice=choices[-1],
                         reward=float(choices[-1] == true_target))


class TestRunEpisode:
    def test_log_structure(self):
        task = small_task()
        log = ev.run_episode(task, MAPSearcher(), seed=5, episode=0)
        assert len(log.fixations) == task.saccade_budget + 1
        assert log.fixations[0] == task.initial_fixation
        assert len(log.choices_by_saccade) == task.saccade_budget
        assert log.final_choice == log.choices_by_saccade[-1]
        assert log.reward == float(log.final_choice == log.true_target)
        assert log.diagnostics is None

    def test_deterministic(self):
        task = small_task()
        a = ev.run_episode(task, MAPSearcher(), seed=9, episode=3)
        b = ev.run_episode(task, MAPSearcher(), seed=9, episode=3)
        assert a == b

    def test_same_seed_same_environment(self):
        task = small_task()
        a = [ev.run_episode(task, MAPSearcher(), 7, ep) for ep in range(25)]
        b = [ev.run_episode(task, FixedSearcher(3), 7, ep) for ep in range(25)]
        assert [x.true_target for x in a] == [x.true_target for x in b]

    def test_policy_rng_separate_from_environment(self):
        task = small_task()
        a = [ev.run_episode(task, RandomSearcher(), 7, ep) for ep in range(25)]
        b = [ev.run_episode(task, MAPSearcher(), 7, ep) for ep in range(25)]
        assert [x.true_target for x in a] == [x.true_target for x in b]

    def test_out_of_range_policy_caught(self):
        task = small_task()
        with pytest.raises(ev.InvariantViolation):
            ev.run_episode(task, FixedSearcher(task.n + 5), 0, 0)

    def test_verbose_records_objectives(self):
        task = small_task()
        from fovsearch.searchers import IdealSearcher
        log = ev.run_episode(task, IdealSearcher(), 2, 0, verbose=True)
        assert len(log.diagnostics) == task.saccade_budget
        assert log.diagnostics[0].shape == (task.n,)


class TestRunBattery:
    def test_threads_do_not_change_results(self):
        task = small_task()
        seq = ev.run_battery(task, MAPSearcher(), 16, seed=11, threads=1)
        par = ev.run_battery(task, MAPSearcher(), 16, seed=11, threads=2)
        assert seq == par

    def test_trials_validation(self):
        with pytest.raises(ValueError):
            ev.run_battery(small_task(), MAPSearcher(), 0, seed=0)


class TestProportionCorrect:
    def test_truncated_semantics(self):
        logs = [
            make_log(0, 1, [0, 1, 2], [1, 1]),   # right at both counts
            make_log(1, 2, [0, 1, 2], [0, 2]),   # right only after 2
            make_log(2, 3, [0, 1, 2], [3, 0]),   # right only after 1
            make_log(3, 4, [0, 1, 2], [0, 0]),   # never right
        ]
        table = ev.proportion_correct(logs, "x")
        assert table.row("x", 1).pc == 0.5
        assert table.row("x", 2).pc == 0.5
        assert table.row("x", 1).trials == 4

    def test_final_only(self):
        logs = [make_log(0, 1, [0, 1, 2], [1, 1])]
        table = ev.proportion_correct(logs, "x", by_saccade=False)
        assert len(table.rows) == 1
        assert table.rows[0].saccades == 2

    def test_missing_row_raises(self):
        logs = [make_log(0, 1, [0, 1, 2], [1, 1])]
        with pytest.raises(KeyError):
            ev.proportion_correct(logs, "x").row("y", 1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ev.proportion_correct([], "x")


class TestFixationHistogram:
    def test_counts_conserve_trials(self):
        logs = [make_log(e, 0, [0, e % 3, 2], [0, 0]) for e in range(9)]
        hist = ev.fixation_histogram(logs, 1, n=5)
        assert int(hist.counts.sum()) == 9
        npt.assert_allclose(hist.counts[:3], [3, 3, 3])
        assert hist.frequencies.sum() == pytest.approx(1.0, abs=1e-15)

    def test_initial_fixation_excluded(self):
        logs = [make_log(0, 0, [4, 1, 2], [0, 0])]
        hist = ev.fixation_histogram(logs, 1, n=5)
        assert hist.counts[4] == 0
        assert hist.counts[1] == 1

    def test_index_validation(self):
        logs = [make_log(0, 0, [0, 1, 2], [0, 0])]
        with pytest.raises(IndexError):
            ev.fixation_histogram(logs, 0, n=5)
        with pytest.raises(IndexError):
            ev.fixation_histogram(logs, 3, n=5)


class TestTVDistance:
    def hist(self, counts):
        c = np.array(counts)
        return ev.FixationHistogram(saccade_index=1, counts=c,
                                    frequencies=c / c.sum())

    def test_identical_zero(self):
        h = self.hist([3, 4, 5])
        assert ev.tv_distance(h, h) == 0.0

    def test_disjoint_one(self):
        assert ev.tv_distance(self.hist([5, 0]), self.hist([0, 5])) == 1.0

    def test_hand_value(self):
        a = self.hist([1, 1, 2])   # .25 .25 .5
        b = self.hist([2, 1, 1])   # .5 .25 .25
        assert ev.tv_distance(a, b) == pytest.approx(0.25)


class TestPairedDifference:
    def test_hand_computed(self):
        a = [make_log(0, 1, [0, 1, 2], [1, 1]),
             make_log(1, 1, [0, 1, 2], [1, 1]),
             make_log(2, 1, [0, 1, 2], [0, 1]),
             make_log(3, 1, [0, 1, 2], [0, 1])]
        b = [make_log(0, 1, [0, 1, 2], [0, 1]),
             make_log(1, 1, [0, 1, 2], [1, 1]),
             make_log(2, 1, [0, 1, 2], [0, 1]),
             make_log(3, 1, [0, 1, 2], [1, 1])]
        mean, se, lo, hi = ev.paired_difference(a, b, 1)
        # diffs at saccade 1: +1, 0, 0, -1
        assert mean == 0.0
        expected_se = np.std([1, 0, 0, -1], ddof=1) / 2
        assert se == pytest.approx(expected_se)
        assert lo == pytest.approx(-1.96 * expected_se)
        assert hi == pytest.approx(1.96 * expected_se)

    def test_length_mismatch(self):
        a = [make_log(0, 1, [0, 1, 2], [1, 1])]
        with pytest.raises(ValueError):
            ev.paired_difference(a, a * 2, 1)


class TestDigestAndWriters:
    def test_digest_sensitivity(self):
        task = small_task()
        d1 = ev.config_digest(task, 100, 1, ["a"])
        d2 = ev.config_digest(task, 200, 1, ["a"])
        d3 = ev.config_digest(task, 100, 1, ["a"])
        assert d1 != d2
        assert d1 == d3
        assert len(d1) == 64

    def test_pc_table_schema(self, tmp_path):
        logs = [make_log(0, 1, [0, 1, 2], [1, 1])]
        table = ev.proportion_correct(logs, "map")
        path = tmp_path / "pc.csv"
        ev.write_pc_table([table], path)
        rows = list(csv.DictReader(open(path)))
        assert set(rows[0]) == {"searcher", "saccades", "pc", "se", "trials"}
        assert rows[0]["searcher"] == "map"
        assert float(rows[0]["pc"]) == 1.0

    def test_fixmap_schema(self, tmp_path):
        task = small_task()
        logs = [make_log(0, 0, [0, 1, 2], [0, 0])]
        hist = ev.fixation_histogram(logs, 1, task.n)
        path = tmp_path / "fm.csv"
        ev.write_fixmap(hist, task, path)
        rows = list(csv.DictReader(open(path)))
        assert len(rows) == task.n
        assert set(rows[0]) == {"location", "x", "y", "count", "freq"}
        assert sum(int(r["count"]) for r in rows) == 1


class TestCompareReport:
    def test_bundle_and_determinism(self, tmp_path):
        task = small_task()
        searchers = {"map": MAPSearcher(), "rand": RandomSearcher()}
        out1 = ev.compare_report(task, searchers, trials=30, seed=4,
                                 out_dir=tmp_path / "a")
        ev.compare_report(task, searchers, trials=30, seed=4,
                          out_dir=tmp_path / "b")

        for name in ("pc_table.csv", "histograms.json",
                     "paired_differences.csv", "task_config.json",
                     "manifest.json"):
            assert (tmp_path / "a" / name).exists()
        for name in searchers:
            for c in (1, 2):
                assert (tmp_path / "a" / f"fixmap_{name}_{c}.csv").exists()

        # repeat runs byte-identical except the timestamped manifest
        for name in ["pc_table.csv", "histograms.json",
                     "paired_differences.csv",
                     "fixmap_map_1.csv", "fixmap_rand_2.csv"]:
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())

        manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert manifest["trials"] == 30
        assert manifest["searchers"] == ["map", "rand"]
        assert len(manifest["config_sha256"]) == 64
        assert out1["tables"]["map"].row("map", 1).trials == 30

    def test_paired_targets_identical(self, tmp_path):
        task = small_task()
        out = ev.compare_report(task, {"map": MAPSearcher(),
                                       "fixed": FixedSearcher(2)},
                                trials=20, seed=9, out_dir=tmp_path)
        t_map = [lg.true_target for lg in out["logs"]["map"]]
        t_fix = [lg.true_target for lg in out["logs"]["fixed"]]
        assert t_map == t_fix
