"""Small semidefinite-programming layer.

An :class:`LmiProblem` holds structured matrix variables and affine matrix
constraints.  :func:`compile` flattens it into the conic standard form

    minimize q^T x   subject to   A x + s = b,  s in K

with ``K`` a product of nonnegative orthants and PSD cones in scaled
upper-triangular vectorization, and :func:`solve` hands that form to Clarabel.
Every feasible answer is re-checked with dense eigenvalue computations on the
original (unvectorized) constraints.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

STRICT_SCALE = 1e-7
VERIFY_TOL = 1e-6
SQRT2 = np.sqrt(2.0)


class DimensionError(ValueError):
    pass


class Affine:
    """Affine matrix-valued map ``x -> C0 + sum_v sum_k x[v][k] * C[v][k]``.

    ``terms`` maps a variable name to an array of shape ``(k, m, n)`` holding
    one coefficient matrix per scalar entry of that variable.
    """

    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, const, terms: dict[str, np.ndarray] | None = None):
        self.const = np.atleast_2d(np.asarray(const, dtype=float))
        self.terms = {} if terms is None else dict(terms)
        for name, coef in self.terms.items():
            if coef.shape[1:] != self.const.shape:
                raise DimensionError(f"term {name!r} has shape {coef.shape[1:]}, expected {self.const.shape}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.const.shape

    @staticmethod
    def lift(other, shape=None) -> "Affine":
        if isinstance(other, Affine):
            return other
        arr = np.asarray(other, dtype=float)
        if arr.ndim == 0 and shape is not None:
            arr = np.full(shape, float(arr))
        return Affine(arr)

    def _combine(self, other, sign: float) -> "Affine":
        other = Affine.lift(other, self.shape)
        if other.shape != self.shape:
            raise DimensionError(f"cannot add shapes {self.shape} and {other.shape}")
        terms = {k: v.copy() for k, v in self.terms.items()}
        for name, coef in other.terms.items():
            terms[name] = terms[name] + sign * coef if name in terms else sign * coef
        return Affine(self.const + sign * other.const, terms)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __radd__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __rsub__(self, other):
        return (-self)._combine(other, 1.0)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, scalar):
        if isinstance(scalar, Affine) or np.ndim(scalar) != 0:
            raise TypeError("Affine supports multiplication by scalars only; use @ for matrices")
        s = float(scalar)
        return Affine(self.const * s, {k: v * s for k, v in self.terms.items()})

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return self * (1.0 / float(scalar))

    def __matmul__(self, right):
        if isinstance(right, Affine):
            raise TypeError("product of two affine expressions is not affine")
        right = np.atleast_2d(np.asarray(right, dtype=float))
        return Affine(self.const @ right, {k: v @ right for k, v in self.terms.items()})

    def __rmatmul__(self, left):
        left = np.atleast_2d(np.asarray(left, dtype=float))
        return Affine(left @ self.const, {k: np.einsum("ij,kjl->kil", left, v) for k, v in self.terms.items()})

    @property
    def T(self) -> "Affine":
        return Affine(self.const.T, {k: v.transpose(0, 2, 1) for k, v in self.terms.items()})

    def __getitem__(self, idx) -> "Affine":
        i, j = idx
        i = slice(i, i + 1) if isinstance(i, (int, np.integer)) else i
        j = slice(j, j + 1) if isinstance(j, (int, np.integer)) else j
        return Affine(self.const[i, j], {k: v[:, i, j] for k, v in self.terms.items()})

    def sym(self) -> "Affine":
        """Exact symmetric part ``(M + M^T) / 2``."""
        return (self + self.T) * 0.5

    def value(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = self.const.copy()
        for name, coef in self.terms.items():
            out += np.tensordot(values[name], coef, axes=1)
        return out

    def __repr__(self):
        return f"Affine(shape={self.shape}, vars={sorted(self.terms)})"


def He(a):
    return a + a.T


def zeros(m: int, n: int | None = None) -> Affine:
    return Affine(np.zeros((m, m if n is None else n)))


def bmat(blocks: list[list]) -> Affine:
    """Block matrix from Affine / ndarray / ``None`` (zero) blocks."""
    rows = len(blocks)
    cols = len(blocks[0])
    heights = [None] * rows
    widths = [None] * cols
    for i, row in enumerate(blocks):
        if len(row) != cols:
            raise DimensionError("ragged block matrix")
        for j, b in enumerate(row):
            if b is None:
                continue
            shape = b.shape if isinstance(b, Affine) else np.atleast_2d(b).shape
            for lst, idx, size in ((heights, i, shape[0]), (widths, j, shape[1])):
                if lst[idx] is None:
                    lst[idx] = size
                elif lst[idx] != size:
                    raise DimensionError(f"block ({i},{j}) has incompatible shape {shape}")
    if None in heights or None in widths:
        raise DimensionError("every block row and column needs at least one sized block")
    r_off = np.concatenate([[0], np.cumsum(heights)])
    c_off = np.concatenate([[0], np.cumsum(widths)])
    const = np.zeros((r_off[-1], c_off[-1]))
    terms: dict[str, np.ndarray] = {}
    for i, row in enumerate(blocks):
        for j, b in enumerate(row):
            if b is None:
                continue
            b = Affine.lift(b)
            rs, cs = slice(r_off[i], r_off[i + 1]), slice(c_off[j], c_off[j + 1])
            const[rs, cs] = b.const
            for name, coef in b.terms.items():
                if name not in terms:
                    terms[name] = np.zeros((coef.shape[0],) + const.shape)
                terms[name][:, rs, cs] += coef
    return Affine(const, terms)


def blkdiag(*items) -> Affine:
    n = len(items)
    return bmat([[items[i] if i == j else None for j in range(n)] for i in range(n)])


def kron(left, a: Affine) -> Affine:
    """Kronecker product of a constant matrix with an affine expression."""
    left = np.atleast_2d(np.asarray(left, dtype=float))
    return Affine(np.kron(left, a.const), {k: np.stack([np.kron(left, c) for c in v]) for k, v in a.terms.items()})


@dataclass(frozen=True)
class Variable:
    name: str
    kind: str  # "symmetric" | "diagonal" | "scalar"
    n: int

    @property
    def size(self) -> int:
        if self.kind == "symmetric":
            return self.n * (self.n + 1) // 2
        return self.n if self.kind == "diagonal" else 1

    def basis(self) -> np.ndarray:
        n = self.n
        if self.kind == "scalar":
            return np.ones((1, 1, 1))
        if self.kind == "diagonal":
            out = np.zeros((n, n, n))
            out[np.arange(n), np.arange(n), np.arange(n)] = 1.0
            return out
        iu, ju = np.triu_indices(n)
        out = np.zeros((iu.size, n, n))
        out[np.arange(iu.size), iu, ju] = 1.0
        out[np.arange(iu.size), ju, iu] = 1.0
        return out

    def matrix(self, flat: np.ndarray) -> np.ndarray | float:
        m = np.tensordot(flat, self.basis(), axes=1)
        return float(m[0, 0]) if self.kind == "scalar" else m


@dataclass(frozen=True)
class Constraint:
    name: str
    expr: Affine
    sense: str  # "psd": expr >= 0, "nsd": expr <= 0
    strict: bool

    def oriented(self) -> Affine:
        return self.expr if self.sense == "psd" else -self.expr


@dataclass
class LmiProblem:
    """Structured LMI feasibility / optimization problem."""

    variables: dict[str, Variable] = field(default_factory=dict)
    constraints: list[Constraint] = field(default_factory=list)
    objective: Affine | None = None
    objective_sense: str = "min"
    meta: dict = field(default_factory=dict)
    # |x_i| <= entry_bound for every scalar decision entry.  Homogeneous LMIs
    # need it: without a scale bound the solver can inflate the variables
    # until any absolute strictness margin is meaningless.
    entry_bound: float | None = None

    def _declare(self, name: str, kind: str, n: int) -> Affine:
        if name in self.variables:
            raise ValueError(f"variable {name!r} already declared")
        var = Variable(name, kind, n)
        self.variables[name] = var
        return Affine(np.zeros((n, n) if kind != "scalar" else (1, 1)), {name: var.basis()})

    def symmetric(self, name: str, n: int) -> Affine:
        return self._declare(name, "symmetric", n)

    def diagonal(self, name: str, n: int) -> Affine:
        return self._declare(name, "diagonal", n)

    def scalar(self, name: str) -> Affine:
        return self._declare(name, "scalar", 1)

    def add(self, name: str, expr: Affine, sense: str, strict: bool = True) -> None:
        """Add ``expr >> 0`` (``sense=">>"``) or ``expr << 0`` (``"<<"``)."""
        senses = {">>": "psd", "<<": "nsd", "psd": "psd", "nsd": "nsd"}
        if sense not in senses:
            raise ValueError(f"unknown constraint sense {sense!r}")
        expr = Affine.lift(expr)
        if expr.shape[0] != expr.shape[1]:
            raise DimensionError(f"constraint {name!r} is not square: {expr.shape}")
        if any(c.name == name for c in self.constraints):
            raise ValueError(f"duplicate constraint name {name!r}")
        self.constraints.append(Constraint(name, expr, senses[sense], strict))

    def minimize(self, expr: Affine) -> None:
        self.objective, self.objective_sense = Affine.lift(expr), "min"

    def maximize(self, expr: Affine) -> None:
        self.objective, self.objective_sense = Affine.lift(expr), "max"

    def constraint(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> str:
        """Dense JSON dump: variables, and per constraint the constant and coefficient blocks."""

        def expr_dict(e: Affine) -> dict:
            return {"constant": e.const.tolist(), "terms": {k: v.tolist() for k, v in e.terms.items()}}

        doc = {
            "format": "drillstab-lmi/1",
            "variables": [{"name": v.name, "kind": v.kind, "n": v.n} for v in self.variables.values()],
            "constraints": [
                {"name": c.name, "sense": c.sense, "strict": c.strict, "size": c.expr.shape[0], **expr_dict(c.expr)}
                for c in self.constraints
            ],
            "objective": None
            if self.objective is None
            else {"sense": self.objective_sense, **expr_dict(self.objective)},
            "meta": self.meta,
            "entry_bound": self.entry_bound,
        }
        return json.dumps(doc)


def svec_indices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row/col indices and scaling of the column-major upper-triangular vectorization."""
    rows, cols = [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
    rows, cols = np.array(rows), np.array(cols)
    scale = np.where(rows == cols, 1.0, SQRT2)
    return rows, cols, scale


def svec(M: np.ndarray) -> np.ndarray:
    rows, cols, scale = svec_indices(M.shape[-1])
    return M[..., rows, cols] * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    rows, cols, scale = svec_indices(n)
    M = np.zeros((n, n))
    M[rows, cols] = v / scale
    M[cols, rows] = v / scale
    return M


@dataclass
class ConicStandardForm:
    """``min q^T x + q0  s.t.  A x + s = b_base - t * b_strict,  s in K``.

    ``t`` is the strictness multiplier (1 by default); ``cones`` lists
    ``("nonneg", dim)`` or ``("psd", n)`` blocks in row order.
    """

    q: np.ndarray
    q0: float
    A: sp.csc_matrix
    b_base: np.ndarray
    b_strict: np.ndarray
    cones: list[tuple[str, int]]
    offsets: dict[str, tuple[int, int]]
    rows: dict[str, tuple[int, int]]
    problem: LmiProblem
    sign: float = 1.0  # +1 minimize, -1 maximize (q is already negated)
    strict_scale: float = STRICT_SCALE

    def b(self, t: float = 1.0) -> np.ndarray:
        return self.b_base - t * self.b_strict

    @property
    def n_vars(self) -> int:
        return self.q.size

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        return {name: x[a:b] for name, (a, b) in self.offsets.items()}

    def export_triplets(self, path) -> None:
        """Write the form as a sparse-triplet text file.

        Layout::

            drillstab-conic 1
            n_vars n_rows
            cones <count>
            <kind> <dim>           (one line per cone, kind in nonneg|psd)
            q <nnz>
            <i> <value>
            A <nnz>
            <i> <j> <value>
            b <n_rows>
            <i> <value>

        ``b`` already includes the strictness shift.  Indices are 0-based.
        """
        A = self.A.tocoo()
        b = self.b()
        q_nz = np.flatnonzero(self.q)
        with open(path, "w") as fh:
            fh.write("drillstab-conic 1\n")
            fh.write(f"{self.n_vars} {A.shape[0]}\n")
            fh.write(f"cones {len(self.cones)}\n")
            for kind, dim in self.cones:
                fh.write(f"{kind} {dim}\n")
            fh.write(f"q {q_nz.size}\n")
            for i in q_nz:
                fh.write(f"{i} {self.q[i]!r}\n")
            fh.write(f"A {A.nnz}\n")
            for i, j, v in zip(A.row, A.col, A.data):
                fh.write(f"{i} {j} {v!r}\n")
            fh.write(f"b {b.size}\n")
            for i, v in enumerate(b):
                fh.write(f"{i} {v!r}\n")


def compile(problem: LmiProblem, strict_scale: float = STRICT_SCALE) -> ConicStandardForm:  # noqa: A001
    """Flatten ``problem`` into conic standard form.

    Strict constraints ``M >> 0`` become ``M >= delta * I`` with
    ``delta = strict_scale * (1 + max|M_const|)``.
    """
    offsets: dict[str, tuple[int, int]] = {}
    n = 0
    for var in problem.variables.values():
        offsets[var.name] = (n, n + var.size)
        n += var.size

    blocks_A, b_base, b_strict, cones, rows = [], [], [], [], {}
    r = 0
    for con in problem.constraints:
        expr = con.oriented()
        m = expr.shape[0]
        if expr.shape != (m, m):
            raise DimensionError(f"constraint {con.name!r} is not square: {expr.shape}")
        asym = np.abs(expr.const - expr.const.T).max(initial=0.0)
        for name, coef in expr.terms.items():
            if name not in offsets:
                raise DimensionError(f"constraint {con.name!r} uses undeclared variable {name!r}")
            a, b_ = offsets[name]
            if coef.shape[0] != b_ - a:
                raise DimensionError(
                    f"constraint {con.name!r}: variable {name!r} has {coef.shape[0]} coefficient blocks, "
                    f"expected {b_ - a}"
                )
            asym = max(asym, np.abs(coef - coef.transpose(0, 2, 1)).max(initial=0.0))
        if asym > 1e-9 * max(1.0, np.abs(expr.const).max(initial=0.0)):
            raise DimensionError(f"constraint {con.name!r} is not symmetric (residual {asym:.3g})")
        delta = strict_scale * (1.0 + np.abs(expr.const).max(initial=0.0)) if con.strict else 0.0
        if m == 1:
            dim = 1
            vec = lambda M: M.reshape(M.shape[:-2] + (1,))  # noqa: E731
            cones.append(("nonneg", 1))
        else:
            dim = m * (m + 1) // 2
            vec = svec
            cones.append(("psd", m))
        block = np.zeros((dim, n))
        for name, coef in expr.terms.items():
            a, b_ = offsets[name]
            block[:, a:b_] = -vec(coef).T
        blocks_A.append(block)
        b_base.append(vec(expr.const))
        b_strict.append(delta * vec(np.eye(m)))
        rows[con.name] = (r, r + dim)
        r += dim

    if problem.entry_bound is not None and n:
        eye = np.eye(n)
        blocks_A.append(np.vstack([eye, -eye]))
        b_base.append(np.full(2 * n, float(problem.entry_bound)))
        b_strict.append(np.zeros(2 * n))
        cones.append(("nonneg", 2 * n))
        rows["entry_bound"] = (r, r + 2 * n)
        r += 2 * n

    q = np.zeros(n)
    q0 = 0.0
    sign = 1.0
    if problem.objective is not None:
        obj = problem.objective
        if obj.shape != (1, 1):
            raise DimensionError("objective must be scalar")
        sign = 1.0 if problem.objective_sense == "min" else -1.0
        q0 = sign * float(obj.const[0, 0])
        for name, coef in obj.terms.items():
            a, b_ = offsets[name]
            q[a:b_] = sign * coef[:, 0, 0]

    A = sp.csc_matrix(np.vstack(blocks_A)) if blocks_A else sp.csc_matrix((0, n))
    return ConicStandardForm(
        q=q,
        q0=q0,
        A=A,
        b_base=np.concatenate(b_base) if b_base else np.zeros(0),
        b_strict=np.concatenate(b_strict) if b_strict else np.zeros(0),
        cones=cones,
        offsets=offsets,
        rows=rows,
        problem=problem,
        sign=sign,
        strict_scale=strict_scale,
    )


@dataclass
class SolveReport:
    status: str
    values: dict[str, np.ndarray | float] = field(default_factory=dict)
    objective: float | None = None
    worst_margin: float | None = None
    margins: dict[str, float] = field(default_factory=dict)
    stats: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == FEASIBLE

    def summary(self) -> dict:
        return {
            "status": self.status,
            "objective": self.objective,
            "worst_margin": self.worst_margin,
            "margins": self.margins,
            "stats": self.stats,
        }


def constraint_margins(problem: LmiProblem, values: dict[str, np.ndarray]) -> dict[str, float]:
    """Least eigenvalue of each constraint in its PSD orientation."""
    out = {}
    for con in problem.constraints:
        M = con.oriented().value(values)
        out[con.name] = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
    return out


def strict_margins(problem: LmiProblem, strict_scale: float = STRICT_SCALE) -> dict[str, float]:
    """The margin ``delta`` each strict constraint is compiled with."""
    return {
        c.name: strict_scale * (1.0 + np.abs(c.expr.const).max(initial=0.0)) for c in problem.constraints if c.strict
    }


def _clarabel_settings(**overrides):
    import clarabel

    s = clarabel.DefaultSettings()
    s.verbose = False
    s.max_iter = 300
    s.tol_gap_abs = 1e-9
    s.tol_gap_rel = 1e-9
    s.tol_feas = 1e-9
    s.tol_infeas_abs = 1e-9
    s.tol_infeas_rel = 1e-9
    s.presolve_enable = False
    for k, v in overrides.items():
        setattr(s, k, v)
    return s


def _run_clarabel(form: ConicStandardForm, t: float, settings: dict):
    import clarabel

    cones = [
        clarabel.NonnegativeConeT(dim) if kind == "nonneg" else clarabel.PSDTriangleConeT(dim)
        for kind, dim in form.cones
    ]
    P = sp.csc_matrix((form.n_vars, form.n_vars))
    solver = clarabel.DefaultSolver(P, form.q, form.A, form.b(t), cones, _clarabel_settings(**settings))
    return solver.solve()


_SOLVED = {"Solved", "AlmostSolved"}
_PRIMAL_INFEASIBLE = {"PrimalInfeasible"}
_ALMOST_PRIMAL_INFEASIBLE = {"AlmostPrimalInfeasible"}
_DUAL_INFEASIBLE = {"DualInfeasible", "AlmostDualInfeasible"}


def _status_name(sol) -> str:
    return str(sol.status).split(".")[-1]


def solve(form: ConicStandardForm, continuation_steps: int = 3, **settings) -> SolveReport:
    """Solve a compiled problem and independently verify any feasible answer.

    A proven primal-infeasibility certificate is trusted directly.  Any other
    non-solved outcome triggers up to ``continuation_steps`` re-solves with the
    strictness margin divided by 10 each time.
    """
    t0 = time.perf_counter()
    attempts = []
    t = 1.0
    report = None
    for step in range(continuation_steps + 1):
        sol = _run_clarabel(form, t, settings)
        name = _status_name(sol)
        attempts.append({"strict_multiplier": t, "status": name, "iterations": sol.iterations})
        if name in _SOLVED:
            report = _feasible_report(form, np.asarray(sol.x))
            break
        if name in _PRIMAL_INFEASIBLE:
            report = SolveReport(INFEASIBLE)
            break
        if name in _DUAL_INFEASIBLE:
            report = SolveReport(UNBOUNDED)
            break
        t *= 0.1
    if report is None:
        last = attempts[-1]["status"]
        report = SolveReport(INFEASIBLE if last in _ALMOST_PRIMAL_INFEASIBLE else NUMERICAL_FAILURE)
    report.stats = {
        "backend": "clarabel",
        "attempts": attempts,
        "solve_time": time.perf_counter() - t0,
    }
    return report


def _feasible_report(form: ConicStandardForm, x: np.ndarray) -> SolveReport:
    """Re-check a solver answer with dense eigenvalues.

    Non-strict constraints may miss by at most ``VERIFY_TOL``.  Strict ones
    must keep at least half of their compiled margin ``delta``: a solution of
    a relaxed (continuation) solve that only reaches the closed cone is not a
    certificate of strict feasibility.
    """
    problem = form.problem
    flat = form.unpack(x)
    margins = constraint_margins(problem, flat)
    worst = min(margins.values()) if margins else 0.0
    values = {name: problem.variables[name].matrix(v) for name, v in flat.items()}
    objective = None
    if problem.objective is not None:
        objective = float(problem.objective.value(flat)[0, 0])
    deltas = strict_margins(problem, form.strict_scale)
    bad = [n for n, m in margins.items() if m < -VERIFY_TOL or (n in deltas and m < 0.5 * deltas[n])]
    status = NUMERICAL_FAILURE if bad else FEASIBLE
    if bad:
        logger.debug("solver answer rejected by verification: %s", {n: margins[n] for n in bad})
    return SolveReport(status, values=values, objective=objective, worst_margin=worst, margins=margins)


def solve_problem(problem: LmiProblem, strict_scale: float = STRICT_SCALE, **settings) -> SolveReport:
    return solve(compile(problem, strict_scale), **settings)


def flat_values(problem: LmiProblem, values: dict[str, np.ndarray | float]) -> dict[str, np.ndarray]:
    """Inverse of :meth:`Variable.matrix`: flatten structured values."""
    out = {}
    for name, var in problem.variables.items():
        v = values[name]
        if var.kind == "scalar":
            out[name] = np.array([float(v)])
        elif var.kind == "diagonal":
            out[name] = np.diag(np.asarray(v)).copy() if np.ndim(v) == 2 else np.asarray(v, dtype=float)
        else:
            iu, ju = np.triu_indices(var.n)
            out[name] = np.asarray(v)[iu, ju]
    return out


def evaluate(expr: Affine, problem: LmiProblem, values: dict[str, np.ndarray | float]) -> np.ndarray:
    return expr.value(flat_values(problem, values))

