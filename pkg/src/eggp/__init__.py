"""eggp: symbolic regression by genetic programming over an equality graph.

The e-graph stores every visited expression and its one-step-derived
equivalents; crossover and mutation consult it (read-only) to steer the
search toward expressions never seen before, in any equivalent form.
"""

from .expr import (
    ARITY,
    BINARY_OPS,
    DEFAULT_NONTERMINALS,
    UNARY_OPS,
    Expr,
    ExprParseError,
    GenConfig,
    Op,
    Symbol,
    add,
    const,
    depth,
    div,
    eval_rows,
    evaluate,
    exp,
    full,
    grow,
    logabs,
    mul,
    param,
    param_slots,
    parse,
    powabs,
    preorder,
    ramped_half_and_half,
    replace_at,
    size,
    sqrtabs,
    sub,
    substitute_params,
    subtree_at,
    to_param_form,
    to_string,
    var,
)
from .egraph import EClass, EGraph, EGraphFormatError, ENode, SpineStep
from .rules import Rule, default_rules, saturate_one_step
from .variation import (
    VariationConfig,
    egraph_crossover,
    egraph_mutation,
    host_spine,
    subtree_crossover,
    subtree_mutation,
)
from .fitting import (
    Dataset,
    FitConfig,
    eval_with_grad,
    fit_params,
    mse,
    mse_gradient,
    r2,
    split_fit_val,
)
from .search import (
    GenStats,
    Individual,
    MODES,
    ParetoDB,
    RunConfig,
    RunResult,
    replace_mo,
    replace_so,
    run,
    tournament_select,
)
from .data import DataSpec, load_csv, train_test_split

__version__ = "0.1.0"
