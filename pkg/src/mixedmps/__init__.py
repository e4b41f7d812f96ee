"""MPS simulation of pure states, vectorized density matrices and channels."""

from .tensor import Tensor, TruncationLimits, UNLIMITED, contract, matrix_exponential, svd_split
from .sites import FERMION, QUBIT, OperatorDef, Site, boson, operators
from .ops import (
    Controlled,
    Dag,
    Dissipator,
    ExpOp,
    Gate,
    GenericName,
    Indexed,
    NamedOp,
    OpExpr,
    Prod,
    Scale,
    Sum,
    TensorProd,
    dag,
    local_matrix,
    channel_matrix,
    name_table,
    to_text,
)
from .parser import ParseError, parse, parse_operator
from .state import (
    Rep,
    State,
    System,
    add,
    complete_graph,
    compress,
    graph_state,
    mix,
    orthogonalize,
    partial_trace,
    product_state,
)
from .mpo import (
    Mpo,
    Term,
    TermSum,
    apply_mpo,
    lower_evolver,
    lower_observable,
    mpo_dense,
    mpo_from_terms,
    term_sum_dense,
    w_mpo,
)
from .evolve import (
    EvolutionPlan,
    GateLayer,
    apply_gates,
    evolve,
    plan_gates,
    substep_coefficients,
)
from .measure import (
    bond_dims,
    correlation_matrix,
    expect,
    expect_sites,
    maxlinkdim,
    osee,
    purity,
    renyi2,
    trace,
    trace2,
    trace_error,
)

__version__ = "0.1.0"
