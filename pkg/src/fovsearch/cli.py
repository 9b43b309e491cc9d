"""Command-line front end.

Subcommands: grid-info, simulate, train, evaluate, compare, validate.
Exit codes: 0 success, 1 usage or bad config, 2 validation failure,
3 runtime error.  One root seed (flag > config > 0x5EED) governs every
stream, so identical invocations rewrite identical artifacts byte for
byte (timestamps live only in the manifest).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import belief as bel
from . import evaluate as ev
from . import qlearn as ql
from . import searchers as sr
from .environment import sample_responses, start_episode
from .oracle import oracle_p_correct
from .quadrature import QuadratureError, QuadratureSpec
from .rng import substream
from .task import ConfigError, TaskConfig, default_task, load_task_config

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

CHECKPOINT_PATTERN = "qnet_saccade{t}.npz"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; the contract wants 1
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit2(message)


class SystemExit2(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fovsearch",
                description="Foveated visual-search simulation and training")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, trials_default=3400):
        sp.add_argument("--config", type=Path, default=None,
                        help="task config JSON (default: built-in 85-location task)")
        sp.add_argument("--seed", type=int, default=None,
                        help="root seed override (flag > config > 0x5EED)")
        sp.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory")
        sp.add_argument("--trials", type=int, default=trials_default)
        sp.add_argument("--threads", type=int, default=1)
        sp.add_argument("--verbose", action="store_true")
        sp.add_argument("--nodes", type=int, default=61,
                        help="quadrature nodes for the lookahead searcher")

    sp = sub.add_parser("grid-info", help="print task geometry and visibility")
    common(sp)

    sp = sub.add_parser("simulate", help="run a few verbose episodes")
    common(sp, trials_default=5)
    sp.add_argument("--searcher", default="map",
                    choices=["map", "is", "random", "qnet"])
    sp.add_argument("--checkpoints", type=Path, default=None)

    sp = sub.add_parser("train", help="train the per-saccade Q-networks")
    common(sp)
    sp.add_argument("--episodes", type=int, default=None,
                    help="training episodes per saccade (default 60000)")
    sp.add_argument("--mc-samples", type=int, default=None,
                    help="Monte-Carlo draws per Q target (default 256)")
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--hidden", type=int, default=None)

    sp = sub.add_parser("evaluate", help="battery for one searcher")
    common(sp)
    sp.add_argument("--searcher", default="map",
                    choices=["map", "is", "random", "qnet"])
    sp.add_argument("--checkpoints", type=Path, default=None)

    sp = sub.add_parser("compare", help="paired batteries and report bundle")
    common(sp)
    sp.add_argument("--checkpoints", type=Path, default=None,
                    help="directory with qnet_saccade<t>.npz files")
    sp.add_argument("--searchers", default="map,is,qnet",
                    help="comma-separated subset of map,is,random,qnet")

    sp = sub.add_parser("validate", help="oracle, anchor, and gradient checks")
    common(sp)
    return p


def _load_task(args) -> TaskConfig:
    task = load_task_config(args.config) if args.config else default_task()
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        task = TaskConfig(
            locations=task.locations, visibility=task.visibility,
            prior=task.prior, saccade_budget=task.saccade_budget,
            initial_fixation=task.initial_fixation, seed=args.seed)
    return task


def _load_models(task: TaskConfig, ckpt_dir: Path | None):
    if ckpt_dir is None:
        raise ConfigError("qnet searcher needs --checkpoints DIR")
    models = []
    for t in range(1, task.saccade_budget + 1):
        path = Path(ckpt_dir) / CHECKPOINT_PATTERN.format(t=t)
        if not path.exists():
            raise ConfigError(f"missing checkpoint for saccade {t}: {path}")
        model, meta = ql.load_checkpoint(path)
        if meta["n"] != task.n:
            raise ConfigError(
                f"checkpoint {path} built for n={meta['n']}, task has n={task.n}")
        models.append(model)
    return tuple(models)


def _make_searcher(name: str, task: TaskConfig, args):
    quad = QuadratureSpec(nodes=args.nodes)
    if name == "map":
        return sr.MAPSearcher()
    if name == "is":
        return sr.IdealSearcher(quad=quad)
    if name == "random":
        return sr.RandomSearcher()
    if name == "qnet":
        return sr.QNetSearcher(models=_load_models(task, args.checkpoints))
    raise ConfigError(f"unknown searcher {name!r}")


def cmd_grid_info(args) -> int:
    task = _load_task(args)
    locs = task.locations
    print(f"locations: {task.n} ({locs.layout}), field radius "
          f"{locs.field_radius:g} deg, initial fixation {task.initial_fixation}")
    vm = task.visibility
    desc = dict(vm.params) if vm.form == "rational" else f"{len(vm.table)} knots"
    print(f"visibility: {vm.form} {desc}")
    print(f"saccade budget: {task.saccade_budget}, seed: {task.seed}")
    print("  idx        x        y    ecc   d'(from center)")
    center = locs.center_index()
    for i in range(task.n):
        x, y = locs.coords[i]
        ecc = float(np.hypot(x, y))
        print(f"  {i:3d} {x:8.3f} {y:8.3f} {ecc:6.2f}   "
              f"{task.dprime_matrix[center, i]:.4f}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    task = _load_task(args)
    seed = args.seed if args.seed is not None else task.seed
    searcher = _make_searcher(args.searcher, task, args)
    logs = ev.run_battery(task, searcher, args.trials, seed,
                          verbose=args.verbose)
    for lg in logs:
        marks = ["*" if c == lg.true_target else "." for c in lg.choices_by_saccade]
        print(f"episode {lg.episode}: target {lg.true_target:3d} "
              f"fixations {lg.fixations} choices {lg.choices_by_saccade} "
              f"[{''.join(marks)}] reward {lg.reward:g}")
    pc = sum(lg.reward for lg in logs) / len(logs)
    print(f"PC over {len(logs)} episodes: {pc:.4f}")
    return EXIT_OK


def cmd_train(args) -> int:
    task = _load_task(args)
    seed = args.seed if args.seed is not None else task.seed
    overrides = {}
    if args.episodes is not None:
        overrides["episodes_per_saccade"] = args.episodes
    if args.mc_samples is not None:
        overrides["J"] = args.mc_samples
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.hidden is not None:
        overrides["hidden"] = args.hidden
    config = ql.TrainingConfig(seed=seed, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    models = []
    for t in range(1, task.saccade_budget + 1):
        print(f"[train] saccade {t}: generating "
              f"{config.episodes_per_saccade} episodes "
              f"(J={config.J}) and fitting...", flush=True)
        model, curve = ql.train_saccade_network(t, task, config, models)
        models.append(model)
        ql.save_checkpoint(model, out / CHECKPOINT_PATTERN.format(t=t),
                           saccade_index=t, seed=seed)
        ql.write_curve_csv(curve, out / f"curve_saccade{t}.csv")
        print(f"[train] saccade {t}: holdout {curve[0][2]:.6f} -> "
              f"{curve[-1][2]:.6f}", flush=True)
    print(f"[train] wrote {len(models)} checkpoints to {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    task = _load_task(args)
    seed = args.seed if args.seed is not None else task.seed
    searcher = _make_searcher(args.searcher, task, args)
    logs = ev.run_battery(task, searcher, args.trials, seed,
                          threads=args.threads)
    table = ev.proportion_correct(logs, searcher.name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ev.write_pc_table([table], out / "pc_table.csv")
    for r in table.rows:
        print(f"{r.searcher}  saccades={r.saccades}  PC={r.pc:.4f} "
              f"(se {r.std_error:.4f}, {r.trials} trials)")
    return EXIT_OK


def cmd_compare(args) -> int:
    task = _load_task(args)
    seed = args.seed if args.seed is not None else task.seed
    names = [s.strip() for s in args.searchers.split(",") if s.strip()]
    searchers = {n: _make_searcher(n, task, args) for n in names}
    summary = ev.compare_report(task, searchers, args.trials, seed,
                                args.out, threads=args.threads)
    for name in names:
        rows = summary["tables"][name].rows
        pcs = " ".join(f"{r.pc:.4f}" for r in rows)
        print(f"{name:8s} PC by saccade: {pcs}")
    print(f"report bundle written to {args.out}")
    return EXIT_OK


def cmd_validate(args) -> int:
    task = _load_task(args)
    seed = args.seed if args.seed is not None else task.seed
    checks = []

    # two-location anchor: equal d' = 2, uniform belief, closed form
    from .task import LocationSet, VisibilityMap
    locs = LocationSet(np.array([[-1.0, 0.0], [1.0, 0.0]]), field_radius=2.0)
    vmap = VisibilityMap(form="table", table=np.array([[0.0, 2.0], [4.0, 2.0]]))
    anchor_task = TaskConfig(locations=locs, visibility=vmap,
                             prior=np.array([0.5, 0.5]), saccade_budget=1,
                             initial_fixation=0)
    b0 = bel.init_belief(anchor_task)
    from scipy.special import ndtr
    expected = float(ndtr(np.sqrt(2.0)))
    got = sr.p_correct_given(0, 0, b0, anchor_task)
    checks.append(("anchor n=2 closed form", abs(got - expected) < 1e-4,
                   f"{got:.6f} vs {expected:.6f}"))
    est = oracle_p_correct(0, 0, b0, anchor_task, M=200_000,
                           rng=substream(seed, 3, 0))
    checks.append(("anchor n=2 oracle", est.agrees_with(expected),
                   f"{est.mean:.6f} +- {est.std_error:.6f}"))

    # quadrature node-doubling convergence on random beliefs
    rng = substream(seed, 3, 1)
    worst = 0.0
    for trial in range(20):
        state = start_episode(task, rng)
        b = bel.init_belief(task)
        w = sample_responses(task, state.target, state.fixation, rng)
        b = bel.update(b, w, state.fixation, task)
        i = int(rng.integers(task.n))
        k = int(rng.integers(task.n))
        try:
            sr.p_correct_given(i, k, b, task, check_convergence=True)
        except QuadratureError as exc:
            checks.append(("quadrature convergence", False, str(exc)))
            break
        base = sr.p_correct_given(i, k, b, task)
        fine = sr.p_correct_given(i, k, b, task,
                                  quad=QuadratureSpec(nodes=2 * 61 - 1))
        worst = max(worst, abs(base - fine))
    else:
        checks.append(("quadrature convergence", worst < 1e-6,
                       f"max node-doubling shift {worst:.2e}"))

    # oracle equivalence on small random tasks
    rng = substream(seed, 3, 2)
    ok = 0
    cases = 12
    for _ in range(cases):
        nn = int(rng.integers(2, 7))
        coords = rng.uniform(-5, 5, size=(nn, 2))
        locs = LocationSet(coords, field_radius=10.0)
        small = TaskConfig(locations=locs, visibility=task.visibility,
                           prior=np.full(nn, 1.0 / nn), saccade_budget=1,
                           initial_fixation=0)
        st = start_episode(small, rng)
        b = bel.init_belief(small)
        w = sample_responses(small, st.target, st.fixation, rng)
        b = bel.update(b, w, st.fixation, small)
        i = int(rng.integers(nn))
        k = int(rng.integers(nn))
        val = sr.p_correct_given(i, k, b, small)
        est = oracle_p_correct(i, k, b, small, M=100_000, rng=rng)
        ok += est.agrees_with(val)
    checks.append(("oracle equivalence", ok >= cases - 1, f"{ok}/{cases} within 3 SE"))

    # finite-difference gradient check on a small network
    rng = substream(seed, 3, 3)
    max_rel = 0.0
    for _ in range(5):
        nn, hh, bb = 4, 6, 3
        model = ql.qnet_init(nn, hh, rng)
        states = rng.standard_normal((bb, nn))
        targets = rng.uniform(0, 1, size=(bb, nn))
        _, grad = ql.loss_and_gradient(model, states, targets)
        eps = 1e-5
        for arr, g in (("W1", grad.W1), ("b1", grad.b1),
                       ("W2", grad.W2), ("b2", grad.b2)):
            a = getattr(model, arr)
            idx = tuple(rng.integers(dim) for dim in a.shape)
            ap, am = a.copy(), a.copy()
            ap[idx] += eps
            am[idx] -= eps
            mp = ql.QNetwork(**{**{k: getattr(model, k) for k in
                                   ("W1", "b1", "W2", "b2")}, arr: ap})
            mm = ql.QNetwork(**{**{k: getattr(model, k) for k in
                                   ("W1", "b1", "W2", "b2")}, arr: am})
            lp, _ = ql.loss_and_gradient(mp, states, targets)
            lm, _ = ql.loss_and_gradient(mm, states, targets)
            fd = (lp - lm) / (2 * eps)
            denom = max(abs(fd), abs(float(g[idx])), 1e-12)
            max_rel = max(max_rel, abs(fd - float(g[idx])) / denom)
    checks.append(("gradient finite differences", max_rel < 1e-4,
                   f"max rel err {max_rel:.2e}"))

    failed = 0
    for name, passed, detail in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")
        failed += 0 if passed else 1
    if failed:
        print(f"{failed} validation check(s) failed")
        return EXIT_VALIDATION
    print("all validation checks passed")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit2 as exc:
        print(f"fovsearch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse calls sys.exit(0) for --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    handlers = {
        "grid-info": cmd_grid_info,
        "simulate": cmd_simulate,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "compare": cmd_compare,
        "validate": cmd_validate,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"fovsearch: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ev.InvariantViolation, QuadratureError) as exc:
        print(f"fovsearch: validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:   # runtime errors get a distinct code
        print(f"fovsearch: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
