"""Expectation values and state functionals.

All expectation values are *raw*: nothing is divided by the trace, so trace
drift stays visible as an error signal.  The trace itself, the purity and the
entropies are separate functionals.  Natural logarithms everywhere.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .mpo import LoweringError, TermSum, Term, lower_observable
from .ops import ExprError, Indexed, OpExpr, contains_node, generic_support, mul_exprs
from .state import Rep, State, orthogonalize
from .tensor import truncated_svd


class MeasureError(ValueError):
    """Malformed measurement request."""


def _as_termsum(s: State, expr) -> TermSum:
    if isinstance(expr, TermSum):
        return expr
    if isinstance(expr, OpExpr):
        return lower_observable(expr, s.system, s.rep)
    raise MeasureError(f"cannot measure {expr!r}")


def _trace_vec(d: int) -> np.ndarray:
    return np.eye(d, dtype=complex).reshape(-1)


def _left_envs(s: State) -> list:
    """Plain partial contractions 0..i from the left.

    Pure: matrices ``env[l', l]`` of the bra/ket overlap; mixed: row vectors
    of the trace functional.
    """
    envs = []
    if s.rep is Rep.PURE:
        env = np.ones((1, 1), dtype=complex)
        envs.append(env)
        for t in s.tensors:
            x = np.tensordot(env, t, axes=([1], [0]))  # (l', p, r)
            env = np.tensordot(t.conj(), x, axes=([0, 1], [0, 1]))
            envs.append(env)
    else:
        env = np.ones(1, dtype=complex)
        envs.append(env)
        for i, t in enumerate(s.tensors, start=1):
            w = _trace_vec(s.system.dim(i))
            x = np.tensordot(env, t, axes=([0], [0]))  # (p, r)
            env = w @ x
            envs.append(env)
    return envs


def _right_envs(s: State) -> list:
    envs = [None] * (s.n + 1)
    if s.rep is Rep.PURE:
        env = np.ones((1, 1), dtype=complex)
        envs[s.n] = env
        for i in range(s.n, 0, -1):
            t = s.tensors[i - 1]
            x = np.tensordot(t, env, axes=([2], [1]))  # (l, p, r')
            env = np.tensordot(x, t.conj(), axes=([1, 2], [1, 2]))  # (l, l')
            env = env.T  # (l', l)
            envs[i - 1] = env
        return envs
    env = np.ones(1, dtype=complex)
    envs[s.n] = env
    for i in range(s.n, 0, -1):
        t = s.tensors[i - 1]
        w = _trace_vec(s.system.dim(i))
        x = np.tensordot(t, env, axes=([2], [0]))  # (l, p)
        env = x @ w
        envs[i - 1] = env
    return envs


def _term_value(s: State, term: Term, lefts, rights) -> complex:
    """Contract one operator string between cached plain environments."""
    facs = dict(term.factors)
    lo = term.first()
    hi = term.last()
    if s.rep is Rep.PURE:
        env = lefts[lo - 1]  # (l', l)
        for i in range(lo, hi + 1):
            t = s.tensors[i - 1]
            x = np.tensordot(env, t, axes=([1], [0]))  # (l', p, r)
            m = facs.get(i)
            if m is not None:
                x = np.tensordot(m, x, axes=([1], [1])).transpose(1, 0, 2)
            env = np.tensordot(t.conj(), x, axes=([0, 1], [0, 1]))  # (r', r)
        r = rights[hi]  # (r', r) partial from the right
        return term.coef * complex(np.tensordot(env, r, axes=([0, 1], [0, 1])))
    env = lefts[lo - 1]  # (l,)
    for i in range(lo, hi + 1):
        t = s.tensors[i - 1]
        w = _trace_vec(s.system.dim(i))
        m = facs.get(i)
        if m is not None:
            w = w @ m
        x = np.tensordot(env, t, axes=([0], [0]))  # (p, r)
        env = w @ x
    return term.coef * complex(env @ rights[hi])


def expect(s: State, expr) -> complex:
    """Raw expectation: ``<psi|O|psi>`` (pure) or ``Tr(O rho)`` (mixed)."""
    ts = _as_termsum(s, expr)
    if not ts.terms:
        return 0j
    lefts = _left_envs(s)
    rights = _right_envs(s)
    return complex(sum(_term_value(s, t, lefts, rights) for t in ts.terms))


def expect_sites(s: State, op: OpExpr) -> list[complex | None]:
    """Broadcast a single-site generic operator over all sites.

    Sites whose kind does not define the operator are reported as ``None``.
    """
    if generic_support(op) != 1:
        raise MeasureError("site broadcast requires a single-site operator")
    lefts = _left_envs(s)
    rights = _right_envs(s)
    out: list[complex | None] = []
    for i in range(1, s.n + 1):
        try:
            ts = lower_observable(Indexed(op, (i,)), s.system, s.rep)
        except (LoweringError, ExprError):
            out.append(None)
            continue
        out.append(
            complex(sum(_term_value(s, t, lefts, rights) for t in ts.terms))
        )
    return out


def correlation_matrix(s: State, a: OpExpr, b: OpExpr) -> np.ndarray:
    """Matrix of ``<A(i) B(j)>`` with ``<(A B)(i)>`` on the diagonal.

    Fermionic operators acquire their parity strings from the lowering, so
    mixed orderings (``i > j``) carry the right signs.
    """
    if generic_support(a) != 1 or generic_support(b) != 1:
        raise MeasureError("correlation matrices take single-site operators")
    n = s.n
    lefts = _left_envs(s)
    rights = _right_envs(s)
    out = np.zeros((n, n), dtype=complex)
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            if i == j:
                expr: OpExpr = Indexed(mul_exprs(a, b), (i,))
            else:
                expr = mul_exprs(Indexed(a, (i,)), Indexed(b, (j,)))
            try:
                ts = lower_observable(expr, s.system, s.rep)
            except (LoweringError, ExprError):
                out[i - 1, j - 1] = np.nan
                continue
            out[i - 1, j - 1] = complex(
                sum(_term_value(s, t, lefts, rights) for t in ts.terms)
            )
    return out


def trace(s: State) -> complex:
    """``Tr(rho)`` for mixed states; the squared 2-norm for pure states."""
    if s.rep is Rep.PURE:
        return complex(s.norm() ** 2)
    return complex(_left_envs(s)[-1][0])


def trace2(s: State) -> complex:
    """``<<rho|rho>>`` (equals ``Tr(rho^2)`` for Hermitian rho)."""
    nrm = s.norm()
    if s.rep is Rep.PURE:
        return complex(nrm**4)
    return complex(nrm**2)


def purity(s: State) -> float:
    """``Tr(rho^2) / Tr(rho)^2``; robust under trace drift."""
    if s.rep is Rep.PURE:
        return 1.0
    tr = trace(s)
    return float(np.real(trace2(s) / (tr * tr)))


def renyi2(s: State) -> float:
    return float(-np.log(purity(s)))


def osee(s: State, bond: int) -> float:
    """Entanglement entropy of the 2-norm-normalized state across a bond.

    For mixed states this is the operator-space entanglement entropy of the
    vectorized density matrix.
    """
    if not 1 <= bond <= s.n - 1:
        raise MeasureError(f"bond {bond} outside 1..{s.n - 1}")
    st = orthogonalize(s, bond)
    t = st.tensors[bond - 1]
    l, p, r = t.shape
    _, sing, _, _ = truncated_svd(t.reshape(l * p, r))
    w = sing**2
    total = w.sum()
    if total <= 0:
        return 0.0
    pk = w / total
    pk = pk[pk > 0]
    return float(-np.sum(pk * np.log(pk)))


def bond_dims(s: State) -> list[int]:
    return s.bond_dims()


def maxlinkdim(s: State) -> int:
    return s.maxlinkdim()


def trace_error(s: State) -> float:
    return float(abs(trace(s) - 1.0))


# ---------------------------------------------------------------------------
# declarative measurement specs (driver configs)


@dataclass(frozen=True)
class MeasureSpec:
    kind: str  # "expr" | "broadcast" | "corr" | "func"
    label: str
    expr: OpExpr | None = None
    pair: tuple[OpExpr, OpExpr] | None = None
    func: str | None = None
    arg: int | None = None


_FUNC_NAMES = {"Trace", "Trace2", "Purity", "Renyi2", "Linkdim", "TraceError"}


def _split_pair(text: str) -> tuple[str, str] | None:
    t = text.strip()
    if not (t.startswith("(") and t.endswith(")")):
        return None
    inner = t[1:-1]
    depth = 0
    for k, ch in enumerate(inner):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        elif ch == "," and depth == 0:
            return inner[:k], inner[k + 1:]
    return None


def parse_measure(text: str, context: Mapping[str, object]) -> MeasureSpec:
    """Parse one measurement string from a config file."""
    from .parser import parse  # local import: parser depends on ops only

    t = text.strip()
    if t in _FUNC_NAMES:
        return MeasureSpec("func", t, func=t)
    m = re.fullmatch(r"EE\((\d+)\)", t)
    if m:
        return MeasureSpec("func", t, func="EE", arg=int(m.group(1)))
    pair = _split_pair(t)
    if pair is not None:
        a = parse(pair[0], context)
        b = parse(pair[1], context)
        if not isinstance(a, OpExpr) or not isinstance(b, OpExpr):
            raise MeasureError(f"correlation pair {t!r} must hold operators")
        return MeasureSpec("corr", t, pair=(a, b))
    v = parse(t, context)
    if not isinstance(v, OpExpr):
        raise MeasureError(f"measure {t!r} is a plain number")
    if contains_node(v, (Indexed,)):
        return MeasureSpec("expr", t, expr=v)
    if generic_support(v) == 1:
        return MeasureSpec("broadcast", t, expr=v)
    raise MeasureError(
        f"measure {t!r}: generic operators broadcast only with single-site support"
    )


def evaluate_measure(s: State, spec: MeasureSpec):
    """Evaluate one spec; returns ``(shape, payload)``.

    Shapes: ``scalar`` -> complex, ``vector`` -> list of (site, value|None),
    ``matrix`` -> complex ndarray.
    """
    if spec.kind == "expr":
        return "scalar", expect(s, spec.expr)
    if spec.kind == "broadcast":
        vals = expect_sites(s, spec.expr)
        return "vector", list(enumerate(vals, start=1))
    if spec.kind == "corr":
        return "matrix", correlation_matrix(s, spec.pair[0], spec.pair[1])
    if spec.func == "Trace":
        return "scalar", trace(s)
    if spec.func == "Trace2":
        return "scalar", trace2(s)
    if spec.func == "Purity":
        return "scalar", complex(purity(s))
    if spec.func == "Renyi2":
        return "scalar", complex(renyi2(s))
    if spec.func == "TraceError":
        return "scalar", complex(trace_error(s))
    if spec.func == "Linkdim":
        dims = bond_dims(s)
        return "vector", [(b, complex(d)) for b, d in enumerate(dims, start=1)]
    if spec.func == "EE":
        return "scalar", complex(osee(s, spec.arg))
    raise MeasureError(f"unknown measure {spec.label!r}")
