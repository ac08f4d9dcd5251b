"""Command-line driver for every stage.

All stages share a run directory::

    gtrace optimize   --out run --map A --generations 30 --pop 20 --scenarios 24
    gtrace prototypes --run run --d-near 0.3 --n-dpp 4
    gtrace selfplay   --run run --moves 2 --pairs 16
    gtrace train      --run run --epochs 2000
    gtrace race       --run run --ego gt --opponent fixed --starts 5
    gtrace report     --treatment run/races_gt_fixed_A.csv --control run/races_fixed_fixed_A.csv --out run/report

Each stage writes a ``<stage>.json`` next to its outputs recording the
configuration it ran with.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evo, game, harness, objectives, regret_model
from .rollout import load_track

log = logging.getLogger("gtrace")

OPPONENT_FLAGS = {"fixed": "fixed_dpp2", "random": "random_explored", "laneswitch": "lane_switcher"}


def _write_config(path, config):
    Path(path).write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _read_config(path):
    p = Path(path)
    return json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}


def _config(args, drop=("func", "verbose", "run", "out")):
    return {k: v for k, v in sorted(vars(args).items()) if k not in drop}


def cmd_optimize(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    track = load_track(args.map)
    scenarios, opponents = objectives.make_scenario_set(track, args.scenarios, args.seed)
    objectives.save_scenarios(out / "scenarios.csv", scenarios, opponents)

    def report(s):
        log.info("gen %3d  agg %8.3f  res %7.3f  best %8.3f  overtake %.2f  crash %.2f  sigma %.3f",
                 s.generation, s.mean_agg, s.mean_res, s.best_fitness, s.overtake_rate, s.crash_rate, s.sigma)

    archive, _, stats = evo.optimize(track, scenarios, opponents, args.generations, args.pop, args.seed,
                                     args.sigma0, progress=report)
    evo.save_archive(out / "archive.csv", archive)
    evo.save_stats(out / "generations.csv", stats)
    _write_config(out / "optimize.json", _config(args))
    log.info("explored %d agents, front has %d", len(archive.all_explored), len(archive.entries))
    return 0


def cmd_prototypes(args):
    run = Path(args.run)
    archive = evo.load_archive(run / "archive.csv")
    protos = evo.extract_prototypes(archive, args.d_near, args.n_dpp, args.bandwidth, args.seed)
    evo.save_prototypes(run / "prototypes.csv", protos)
    _write_config(run / "prototypes.json", _config(args))
    log.info("front %d, near-optimal %d, dpp sets %s / %s", len(protos.pf), len(protos.near_optimal),
             protos.dpp1, protos.dpp2)
    return 0


def cmd_selfplay(args):
    run = Path(args.run)
    map_name = _read_config(run / "optimize.json").get("map", "A")
    track = load_track(map_name)
    protos = evo.load_prototypes(run / "prototypes.csv")
    no = list(protos.near_optimal)
    prototypes = [protos.explored[i] for i in no]
    pairs = [(no.index(e), no.index(o)) for e, o in itertools.product(protos.dpp1, protos.dpp2)][: args.pairs]
    stations = harness.start_stations(track, len(pairs), args.seed)
    scenarios = [harness.start_line(track, s, k % 2) for k, s in enumerate(stations)]
    tables = run / "tables"
    tables.mkdir(exist_ok=True)
    config = game.GameConfig(moves=args.moves, segment=args.segment_s, d_move=args.d_move)

    def report(k, table):
        log.info("pair %2d  utility range [%.2f, %.2f]", k, table.utilities.min(), table.utilities.max())

    samples, _ = game.build_dataset(pairs, prototypes, scenarios, track, config, tables, progress=report)
    game.save_dataset(run / "dataset.csv", samples)
    _write_config(run / "selfplay.json", dict(_config(args), map=map_name))
    log.info("%d regret samples from %d pairs", len(samples), len(pairs))
    return 0


def cmd_train(args):
    run = Path(args.run)
    data = game.load_dataset(args.dataset or run / "dataset.csv")
    if not data:
        raise ValueError("dataset is empty")
    x = np.stack([s.features for s in data])
    y = np.array([s.target for s in data])
    cfg = regret_model.TrainConfig(lr0=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed,
                                   val_fraction=args.val_fraction, plateau_patience=args.patience)
    params, curves = regret_model.train(x, y, cfg)
    regret_model.save_model(run / "model.txt", params, cfg.leaky_slope)
    regret_model.save_curves(run / "loss.csv", curves)
    best = min(c.val_l1 for c in curves)
    _write_config(run / "train.json", _config(args, drop=("func", "verbose", "run", "out", "dataset")))
    log.info("trained on %d samples; best validation L1 %.4f", len(data), best)
    return 0


def cmd_race(args):
    run = Path(args.run)
    track = load_track(args.map)
    protos = evo.load_prototypes(run / "prototypes.csv")
    selfplay = _read_config(run / "selfplay.json")
    moves = args.moves if args.moves is not None else selfplay.get("moves", game.MAX_MOVES)
    segment = args.segment_s if args.segment_s is not None else selfplay.get("segment_s", 8.0)
    model, slope = (regret_model.load_model(run / "model.txt") if args.ego == "gt" else (None, None))
    spec = harness.MatchSpec(args.ego, OPPONENT_FLAGS[args.opponent], args.map, args.starts,
                             not args.no_alternation, moves, segment)
    outcomes = harness.run_match(spec, track, protos, model, slope, args.seed)
    out = Path(args.out) if args.out else run / f"races_{args.ego}_{args.opponent}_{args.map}.csv"
    harness.save_race_log(out, outcomes)
    _write_config(out.with_suffix(".json"), dict(_config(args), moves=moves, segment_s=segment))
    rates = harness.win_rates(outcomes)
    log.info("%d races, mean win rate %.3f", len(outcomes), rates.mean())
    return 0


def cmd_report(args):
    treat = harness.load_race_log(args.treatment)
    ctrl = harness.load_race_log(args.control)
    if not treat or not ctrl:
        raise ValueError("race log is empty")
    config = {"treatment": {"log": Path(args.treatment).name, **_read_config(Path(args.treatment).with_suffix(".json"))},
              "control": {"log": Path(args.control).name, **_read_config(Path(args.control).with_suffix(".json"))}}
    report = harness.race_report(treat, ctrl, config)
    out = Path(args.out)
    harness.write_report(out.with_suffix(".json"), report)
    with out.with_suffix(".csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["pairing", "treatment_win_rate", "control_win_rate"])
        for k, (a, b) in enumerate(zip(report["treatment"]["win_rates"], report["control"]["win_rates"])):
            w.writerow([k, repr(float(a)), repr(float(b))])
    print(f"treatment {report['treatment']['mean']:.3f} +- {report['treatment']['std']:.3f}  "
          f"control {report['control']['mean']:.3f} +- {report['control']['std']:.3f}  "
          f"t={report['t']:.3f}  p={report['p']:.4f}")
    return 0


DESK = dict(map="A", generations=30, pop=20, scenarios=24, n_dpp=4, moves=2, segment_s=8.0, pairs=16,
            epochs=2000, starts=7)


def cmd_desk(args):
    """Every stage at desk scale, then game-theoretic and fixed egos against the same opponents."""
    run = Path(args.out)
    d = dict(DESK, generations=args.generations or DESK["generations"])
    seed = str(args.seed)
    flag = ["-v"] if args.verbose else []
    steps = [
        ["optimize", "--out", str(run), "--map", d["map"], "--generations", str(d["generations"]),
         "--pop", str(d["pop"]), "--scenarios", str(d["scenarios"]), "--seed", seed],
        ["prototypes", "--run", str(run), "--n-dpp", str(d["n_dpp"]), "--seed", seed],
        ["selfplay", "--run", str(run), "--moves", str(d["moves"]), "--segment-s", str(d["segment_s"]),
         "--pairs", str(d["pairs"]), "--seed", seed],
        ["train", "--run", str(run), "--epochs", str(d["epochs"]), "--seed", seed],
        ["race", "--run", str(run), "--ego", "gt", "--opponent", "fixed", "--map", d["map"],
         "--starts", str(d["starts"]), "--seed", seed],
        ["race", "--run", str(run), "--ego", "fixed", "--opponent", "fixed", "--map", d["map"],
         "--starts", str(d["starts"]), "--seed", seed],
        ["report", "--treatment", str(run / f"races_gt_fixed_{d['map']}.csv"),
         "--control", str(run / f"races_fixed_fixed_{d['map']}.csv"), "--out", str(run / "report")],
    ]
    for argv in steps:
        log.info("desk: %s", " ".join(argv[:1]))
        code = main(flag + argv)
        if code:
            return code
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gtrace", description="Game-theoretic racing pipeline.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("optimize", help="CMA-ES over agent weights")
    s.add_argument("--map", default="A")
    s.add_argument("--generations", type=int, default=30)
    s.add_argument("--pop", type=int, default=20)
    s.add_argument("--scenarios", type=int, default=24)
    s.add_argument("--sigma0", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_optimize)

    s = sub.add_parser("prototypes", help="front, near-optimal set and DPP prototype draws")
    s.add_argument("--run", required=True)
    s.add_argument("--d-near", type=float, default=evo.D_NEAR)
    s.add_argument("--n-dpp", type=int, default=evo.N_DPP)
    s.add_argument("--bandwidth", type=float, default=evo.DPP_BANDWIDTH)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_prototypes)

    s = sub.add_parser("selfplay", help="play out games between prototype pairs and build the regret dataset")
    s.add_argument("--run", required=True)
    s.add_argument("--moves", type=int, default=game.MAX_MOVES)
    s.add_argument("--segment-s", type=float, default=objectives.ROLLOUT_SECONDS)
    s.add_argument("--d-move", type=float, default=game.D_MOVE)
    s.add_argument("--pairs", type=int, default=400)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_selfplay)

    s = sub.add_parser("train", help="fit the regret model")
    s.add_argument("--run", required=True)
    s.add_argument("--dataset")
    s.add_argument("--epochs", type=int, default=2000)
    s.add_argument("--batch", type=int, default=1024)
    s.add_argument("--lr", type=float, default=0.005)
    s.add_argument("--patience", type=int, default=10)
    s.add_argument("--val-fraction", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("race", help="head-to-head races")
    s.add_argument("--run", required=True)
    s.add_argument("--ego", choices=harness.EGO_KINDS, default="gt")
    s.add_argument("--opponent", choices=sorted(OPPONENT_FLAGS), default="fixed")
    s.add_argument("--map", default="A")
    s.add_argument("--starts", type=int, default=5)
    s.add_argument("--no-alternation", action="store_true")
    s.add_argument("--moves", type=int)
    s.add_argument("--segment-s", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_race)

    s = sub.add_parser("report", help="win rates and paired t-test of two race logs")
    s.add_argument("--treatment", required=True)
    s.add_argument("--control", required=True)
    s.add_argument("--out", required=True, help="output prefix; writes .json and .csv")
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("desk", help="run the whole pipeline at desk scale")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--generations", type=int, help="override the optimizer generation count")
    s.set_defaults(func=cmd_desk)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError) as e:
        print(f"gtrace {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
