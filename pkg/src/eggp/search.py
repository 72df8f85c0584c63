"""The generational search: history-aware single- and multi-objective modes
plus the classic-operator baseline, all sharing one e-graph backend.

Every evaluated individual lands in an append-only history database keyed by
(size, best fitness); insertion is O(1) and the exact Pareto front over the
whole history comes out of one ascending scan of the per-size champions.
"""

from __future__ import annotations

import logging
import time
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .egraph import EGraph
from .expr import (
    DEFAULT_NONTERMINALS,
    Expr,
    GenConfig,
    Op,
    ramped_half_and_half,
    size,
    to_param_form,
    to_string,
)
from .fitting import Dataset, FitConfig, eval_rows, fit_params, mse, r2, split_fit_val
from .rules import Rule, default_rules, saturate_one_step
from .variation import (
    VariationConfig,
    egraph_crossover,
    egraph_mutation,
    subtree_crossover,
    subtree_mutation,
)

log = logging.getLogger(__name__)

__all__ = [
    "Individual",
    "ParetoDB",
    "RunConfig",
    "GenStats",
    "RunResult",
    "tournament_select",
    "replace_so",
    "replace_mo",
    "run",
    "MODES",
]

MODES = ("eggp_so", "eggp_mo", "tinygp")


@dataclass
class Individual:
    """An evaluated expression: the parameterized tree actually fitted, its
    e-class, the fitted values, and the validation fitness."""

    expr: Expr
    root: int
    params: np.ndarray
    fitness: float          # validation MSE, lower is better
    size: int
    r2_val: float
    r2_train: float = 0.0


class ParetoDB:
    """History of all evaluated individuals with per-size best-fitness index."""

    def __init__(self, max_size: int):
        if max_size < 1:
            raise ValueError("max_size must be >= 1")
        self.max_size = max_size
        self.best: list[Optional[tuple[float, int]]] = [None] * (max_size + 1)
        self.history: list[Individual] = []

    def __len__(self) -> int:
        return len(self.history)

    def insert(self, ind: Individual) -> None:
        s = ind.size
        if not 1 <= s <= self.max_size:
            raise ValueError(f"individual size {s} outside 1..{self.max_size}")
        self.history.append(ind)
        idx = len(self.history) - 1
        cur = self.best[s]
        if cur is None or ind.fitness < cur[0]:
            self.best[s] = (ind.fitness, idx)

    def pareto_front(self) -> list[Individual]:
        """Exact Pareto front of the history under (min fitness, min size)."""
        out = []
        best_seen = None
        for s in range(1, self.max_size + 1):
            entry = self.best[s]
            if entry is None:
                continue
            f, idx = entry
            if best_seen is None or f < best_seen:
                out.append(self.history[idx])
                best_seen = f
        return out

    def two_fronts(self) -> tuple[list[Individual], list[Individual]]:
        """First front, and the front of the per-size champions that remain
        after removing the first front's entries."""
        champions = [
            (s, entry[0], entry[1])
            for s, entry in enumerate(self.best)
            if entry is not None
        ]
        front1: list[tuple[int, float, int]] = []
        rest: list[tuple[int, float, int]] = []
        best_seen = None
        for s, f, idx in champions:
            if best_seen is None or f < best_seen:
                front1.append((s, f, idx))
                best_seen = f
            else:
                rest.append((s, f, idx))
        front2: list[tuple[int, float, int]] = []
        best_seen = None
        for s, f, idx in rest:
            if best_seen is None or f < best_seen:
                front2.append((s, f, idx))
                best_seen = f
        return (
            [self.history[i] for _, _, i in front1],
            [self.history[i] for _, _, i in front2],
        )


def tournament_select(
    pop: list[Individual], k: int, rng: np.random.Generator
) -> Individual:
    """Sample ``k`` with replacement; lowest fitness wins, ties broken by
    smaller size, then earlier population index."""
    if not pop:
        raise ValueError("empty population")
    idx = rng.integers(0, len(pop), size=k)
    best = min(idx, key=lambda i: (pop[i].fitness, pop[i].size, i))
    return pop[int(best)]


def replace_so(old_pop: list[Individual], offspring: list[Individual]) -> list[Individual]:
    """Generational replacement: offspring verbatim."""
    return list(offspring)


def replace_mo(
    db: ParetoDB,
    offspring: list[Individual],
    pop_size: int,
    rng: np.random.Generator,
) -> list[Individual]:
    """First two fronts of the history, padded with random offspring."""
    front1, front2 = db.two_fronts()
    if len(front1) > pop_size:
        keep = rng.permutation(len(front1))[:pop_size]
        log.warning("first front exceeds population size; truncating randomly")
        return [front1[i] for i in np.sort(keep)]
    room = pop_size - len(front1)
    if len(front2) > room:
        keep = rng.permutation(len(front2))[:room]
        front2 = [front2[i] for i in np.sort(keep)]
    pop = front1 + front2
    fill = pop_size - len(pop)
    if fill > 0 and offspring:
        take = min(fill, len(offspring))
        picks = rng.permutation(len(offspring))[:take]
        pop.extend(offspring[i] for i in np.sort(picks))
    if len(pop) < pop_size:
        log.warning("population undersized after replacement: %d", len(pop))
    return pop


@dataclass
class RunConfig:
    pop_size: int = 500
    generations: int = 200
    tournament_size: int = 5
    pc: float = 0.9
    pm: float = 0.3
    max_size: int = 50
    max_depth: int = 10
    nonterminals: tuple[Op, ...] = DEFAULT_NONTERMINALS
    fit: FitConfig = field(default_factory=FitConfig)
    mode: str = "eggp_mo"
    seed: int = 1
    saturation_steps: int = 1
    load_egraph: Optional[str] = None
    save_egraph: Optional[str] = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        for name in ("pop_size", "generations", "tournament_size", "max_size", "max_depth"):
            if getattr(self, name) < (0 if name == "generations" else 1):
                raise ValueError(f"{name} must be positive")


@dataclass
class GenStats:
    generation: int
    best_fitness: float
    median_fitness: float
    unique_ratio: float
    egraph_classes: int
    egraph_nodes: int
    elapsed_ms: float
    front_points: list[tuple[int, float]] = field(default_factory=list)


@dataclass
class RunResult:
    front: list[Individual]
    stats: list[GenStats]
    egraph: EGraph
    db: ParetoDB
    crossover_log: list[tuple[bool, bool]]  # (changed parent 1, unvisited at creation)


def _fit_rng(seed: int, expr_text: str) -> np.random.Generator:
    """Per-individual stream: a pure function of the run seed and the
    expression, so identical expressions re-fit identically across runs."""
    key = zlib.crc32(expr_text.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([seed, key]))


class _Engine:
    def __init__(self, cfg: RunConfig, data: Dataset):
        self.cfg = cfg
        self.data = data
        ss = np.random.SeedSequence(cfg.seed)
        split_ss, search_ss = ss.spawn(2)
        self.rng = np.random.default_rng(search_ss)
        self.fit_ds, self.val_ds = split_fit_val(data, np.random.default_rng(split_ss))
        if cfg.load_egraph:
            with open(cfg.load_egraph, "rb") as fh:
                self.graph = EGraph.deserialize(fh.read())
        else:
            self.graph = EGraph()
        self.rules: list[Rule] = default_rules()
        self.db = ParetoDB(cfg.max_size)
        self.gen_cfg = GenConfig(
            max_depth=cfg.max_depth,
            max_size=cfg.max_size,
            feature_count=data.n_features,
            nonterminals=cfg.nonterminals,
        )
        self.var_cfg = VariationConfig(gen=self.gen_cfg, pc=cfg.pc, pm=cfg.pm)
        self.crossover_log: list[tuple[bool, bool]] = []
        self._fitness_cache: dict[str, tuple[np.ndarray, float, float, float]] = {}

    # -- evaluation pipeline ------------------------------------------------

    def evaluate_class(self, root: int) -> Individual:
        """Extract, convert constants to parameters, fit, score on validation."""
        root = self.graph.find(root)
        extracted = self.graph.extract_smallest(root)
        theta_form, seeds = to_param_form(extracted)
        text = to_string(theta_form)
        cached = self._fitness_cache.get(text)
        if cached is None:
            rng = _fit_rng(self.cfg.seed, text)
            params, _ = fit_params(theta_form, self.fit_ds, self.cfg.fit, rng, seeds=seeds)
            pred_val = eval_rows(theta_form, self.val_ds.X, params, check=False)
            fitness = mse(pred_val, self.val_ds.y)
            r2_val = r2(pred_val, self.val_ds.y)
            r2_train = r2(eval_rows(theta_form, self.data.X, params, check=False), self.data.y)
            self._fitness_cache[text] = (params, fitness, r2_val, r2_train)
        else:
            params, fitness, r2_val, r2_train = cached
        ind = Individual(
            expr=theta_form,
            root=root,
            params=params,
            fitness=fitness,
            size=size(theta_form),
            r2_val=r2_val,
            r2_train=r2_train,
        )
        self.db.insert(ind)
        self.graph.mark_evaluated(root)
        return ind

    def insert_and_evaluate(self, e: Expr) -> tuple[Individual, bool]:
        novel = self.graph.lookup_expr(e) is None
        # scope the saturation step(s) to this insertion: without the reset the
        # match frontier compounds across insertions and the graph blows up
        self.graph.discard_pending()
        root = self.graph.add_expr(e)
        for _ in range(self.cfg.saturation_steps):
            saturate_one_step(self.graph, self.rules)
        return self.evaluate_class(root), novel

    # -- population initialization ------------------------------------------

    def initial_batch(self) -> tuple[list[Individual], int]:
        cfg = self.cfg

        def fits(cid: int) -> bool:
            # a resumed run may lower max_size; skip classes that no longer fit
            return self.graph.classes[self.graph.find(cid)].smallest_size <= cfg.max_size

        if cfg.load_egraph:
            if cfg.mode == "eggp_mo":
                for cid in self.graph.evaluated_classes():
                    if fits(cid):
                        self.evaluate_class(cid)
                pop = self.db.pareto_front()
                if not pop:
                    raise ValueError("loaded e-graph holds no evaluated classes")
                return pop, 0
            root_classes = [
                c for c in dict.fromkeys(self.graph.canonical_roots()) if fits(c)
            ]
            if not root_classes:
                raise ValueError("loaded e-graph holds no roots")
            picks = self.rng.integers(0, len(root_classes), size=cfg.pop_size)
            pop = [self.evaluate_class(root_classes[int(i)]) for i in picks]
            return pop, 0
        exprs = ramped_half_and_half(cfg.pop_size, self.gen_cfg, self.rng)
        novel_count = 0
        pop = []
        for e in exprs:
            ind, novel = self.insert_and_evaluate(e)
            pop.append(ind)
            novel_count += novel
        return pop, novel_count

    # -- one generation -----------------------------------------------------

    def make_offspring(self, pop: list[Individual]) -> tuple[list[Individual], int]:
        cfg = self.cfg
        inds: list[Individual] = []
        novel_count = 0
        for _ in range(cfg.pop_size):
            p1 = tournament_select(pop, cfg.tournament_size, self.rng)
            p2 = tournament_select(pop, cfg.tournament_size, self.rng)
            if cfg.mode == "tinygp":
                child = subtree_crossover(p1.expr, p2.expr, self.var_cfg, self.rng)
                child = subtree_mutation(child, self.var_cfg, self.rng)
            else:
                child = egraph_crossover(p1.expr, p2.expr, self.var_cfg, self.graph, self.rng)
                changed = child != p1.expr
                unvisited = self.graph.lookup_expr(child) is None if changed else False
                self.crossover_log.append((changed, unvisited))
                child = egraph_mutation(child, self.var_cfg, self.graph, self.rng)
            ind, novel = self.insert_and_evaluate(child)
            inds.append(ind)
            novel_count += novel
        return inds, novel_count

    def replace(self, pop: list[Individual], offspring: list[Individual]) -> list[Individual]:
        if self.cfg.mode == "eggp_mo":
            return replace_mo(self.db, offspring, self.cfg.pop_size, self.rng)
        return replace_so(pop, offspring)

    def stats_row(self, gen: int, batch: list[Individual], novel: int, t0: float) -> GenStats:
        fitnesses = np.array([ind.fitness for ind in batch]) if batch else np.array([np.inf])
        return GenStats(
            generation=gen,
            best_fitness=float(np.min(fitnesses)),
            median_fitness=float(np.median(fitnesses)),
            unique_ratio=novel / max(1, len(batch)),
            egraph_classes=self.graph.class_count,
            egraph_nodes=self.graph.node_count,
            elapsed_ms=(time.perf_counter() - t0) * 1e3,
            front_points=[(i.size, i.fitness) for i in self.db.pareto_front()],
        )


def run(cfg: RunConfig, data: Dataset) -> RunResult:
    """Full search: initialize, evolve, and return the Pareto front of the
    entire history plus per-generation statistics."""
    if data.n_features < 1 or data.n_rows < 2:
        raise ValueError("dataset needs at least one feature and two rows")
    eng = _Engine(cfg, data)
    stats: list[GenStats] = []

    t0 = time.perf_counter()
    pop, novel = eng.initial_batch()
    stats.append(eng.stats_row(0, pop, novel, t0))

    for gen in range(1, cfg.generations + 1):
        t0 = time.perf_counter()
        offspring, novel = eng.make_offspring(pop)
        pop = eng.replace(pop, offspring)
        stats.append(eng.stats_row(gen, offspring, novel, t0))

    if cfg.save_egraph:
        # bring every evaluated class up to its freshest extraction so a
        # resumed search derives the same front from the file alone
        for cid in eng.graph.evaluated_classes():
            eng.evaluate_class(cid)
        with open(cfg.save_egraph, "wb") as fh:
            fh.write(eng.graph.serialize())

    front = eng.db.pareto_front()
    return RunResult(
        front=front,
        stats=stats,
        egraph=eng.graph,
        db=eng.db,
        crossover_log=eng.crossover_log,
    )
