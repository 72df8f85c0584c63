"""Command-line front door: configure a run, execute it, and emit the Pareto
front and per-generation statistics as CSV."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from typing import Optional, Sequence

from .data import DataSpec, load_csv
from .expr import NAME_TO_OP, Op, substitute_params, to_string
from .fitting import FitConfig, eval_rows, r2
from .search import MODES, RunConfig, RunResult, run

log = logging.getLogger(__name__)

FRONT_COLUMNS = [
    "expression",
    "expression_theta",
    "size",
    "n_params",
    "fitness_val_mse",
    "r2_train",
    "r2_val",
    "r2_test",
]

STATS_COLUMNS = [
    "generation",
    "best_fitness",
    "median_fitness",
    "unique_ratio",
    "egraph_classes",
    "egraph_nodes",
    "elapsed_ms",
]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="eggp",
        description="Symbolic regression over an equality graph of the search history.",
    )
    p.add_argument("--data", required=True, help="training CSV (target = last column unless --target)")
    p.add_argument("--target", default=None, help="target column name")
    p.add_argument("--test-data", default=None, help="held-out CSV scored as r2_test")
    p.add_argument("--mode", default="eggp-mo", choices=["eggp-so", "eggp-mo", "tinygp"])
    p.add_argument("--pop", type=int, default=500, help="population size")
    p.add_argument("--gens", type=int, default=200, help="number of generations")
    p.add_argument("--tournament", type=int, default=5, help="tournament size")
    p.add_argument("--pc", type=float, default=0.9, help="crossover probability")
    p.add_argument("--pm", type=float, default=0.3, help="mutation probability")
    p.add_argument("--max-size", type=int, default=50, help="maximum expression size")
    p.add_argument("--max-depth", type=int, default=10, help="maximum expression depth")
    p.add_argument("--opt-iters", type=int, default=50, help="optimizer iterations per restart")
    p.add_argument("--opt-restarts", type=int, default=2, help="optimizer restarts")
    p.add_argument("--seed", type=int, default=1, help="run seed")
    p.add_argument(
        "--nonterminals",
        default="add,sub,mul,div,logabs,exp,sqrtabs,powabs",
        help="comma-separated non-terminal set",
    )
    p.add_argument("--load-egraph", default=None, help="resume from a saved e-graph file")
    p.add_argument("--save-egraph", default=None, help="write the final e-graph here")
    p.add_argument("--out", default="front.csv", help="Pareto front CSV path")
    p.add_argument("--stats", default="stats.csv", help="per-generation stats CSV path")
    p.add_argument("--row-cap", type=int, default=None, help="random row cap on the training data")
    return p


def _parse_nonterminals(text: str, parser: argparse.ArgumentParser) -> tuple[Op, ...]:
    ops = []
    for name in text.split(","):
        name = name.strip()
        op = NAME_TO_OP.get(name)
        if op is None or op in (Op.VAR, Op.PARAM, Op.CONST):
            parser.error(f"unknown non-terminal {name!r}")
        ops.append(op)
    if not ops:
        parser.error("non-terminal set is empty")
    return tuple(ops)


def _write_front(path: str, result: RunResult, test_ds) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(FRONT_COLUMNS)
        for ind in result.front:
            fitted = to_string(substitute_params(ind.expr, ind.params))
            if test_ds is not None:
                pred = eval_rows(ind.expr, test_ds.X, ind.params)
                r2_test = repr(r2(pred, test_ds.y))
            else:
                r2_test = ""
            w.writerow(
                [
                    fitted,
                    to_string(ind.expr),
                    ind.size,
                    len(ind.params),
                    repr(ind.fitness),
                    repr(ind.r2_train),
                    repr(ind.r2_val),
                    r2_test,
                ]
            )


def _write_stats(path: str, result: RunResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for s in result.stats:
            w.writerow(
                [
                    s.generation,
                    repr(s.best_fitness),
                    repr(s.median_fitness),
                    repr(s.unique_ratio),
                    s.egraph_classes,
                    s.egraph_nodes,
                    repr(s.elapsed_ms),
                ]
            )


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    nonterminals = _parse_nonterminals(args.nonterminals, parser)
    for name in ("pop", "gens", "tournament", "max_size", "max_depth"):
        if getattr(args, name) < (0 if name == "gens" else 1):
            parser.error(f"--{name.replace('_', '-')} must be positive")
    if not (0.0 <= args.pc <= 1.0 and 0.0 <= args.pm <= 1.0):
        parser.error("--pc and --pm must lie in [0, 1]")

    cfg = RunConfig(
        pop_size=args.pop,
        generations=args.gens,
        tournament_size=args.tournament,
        pc=args.pc,
        pm=args.pm,
        max_size=args.max_size,
        max_depth=args.max_depth,
        nonterminals=nonterminals,
        fit=FitConfig(iterations=args.opt_iters, restarts=args.opt_restarts),
        mode=args.mode.replace("-", "_"),
        seed=args.seed,
        load_egraph=args.load_egraph,
        save_egraph=args.save_egraph,
    )

    try:
        data = load_csv(
            DataSpec(
                path=args.data,
                target=args.target,
                row_cap=args.row_cap,
                cap_seed=args.seed,
            )
        )
        test_ds = None
        if args.test_data:
            test_ds = load_csv(DataSpec(path=args.test_data, target=args.target))
            if test_ds.n_features != data.n_features:
                raise ValueError(
                    f"test data has {test_ds.n_features} features, train has {data.n_features}"
                )
        result = run(cfg, data)
        _write_front(args.out, result, test_ds)
        _write_stats(args.stats, result)
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"eggp: error: {exc}", file=sys.stderr)
        return 1
    best = min(result.front, key=lambda i: i.fitness) if result.front else None
    if best is not None:
        log.info(
            "front size %d; best validation MSE %.6g (size %d)",
            len(result.front),
            best.fitness,
            best.size,
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
