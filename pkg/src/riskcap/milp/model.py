"""Generic minimization model, solver tolerances and results."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from ..errors import DomainError

LE, GE, EQ = "<=", ">=", "="
SENSES = (LE, GE, EQ)


@dataclass(frozen=True)
class ToleranceConfig:
    """Numerical policy for every LP and MILP solve."""

    primal_feas: float = 1e-7
    dual_feas: float = 1e-9
    pivot: float = 1e-9
    integrality: float = 1e-6
    rel_gap: float = 1e-6
    max_pivots: int = 200_000
    node_limit: int = 1_000_000
    degenerate_stall: int = 50
    refactor_every: int = 100
    cut_rounds: int = 50

    def replace(self, **kw) -> "ToleranceConfig":
        return replace(self, **kw)


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    ITER_LIMIT = "IterLimit"


@dataclass
class SolveResult:
    status: Status
    objective: float = math.nan
    values: np.ndarray | None = None
    bound: float = math.nan
    gap: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    dual_objective: float = math.nan
    dual_residual: float = math.nan
    iterations: int = 0
    nodes: int = 0
    bound_trace: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


class Milp:
    """Variables with bounds and integrality flags plus sparse linear rows.

    Build incrementally with :meth:`add_var` and :meth:`add_row`; the
    ``A``/``rhs``/``senses`` arrays are assembled lazily.
    """

    def __init__(self):
        self.obj: list[float] = []
        self.lo: list[float] = []
        self.hi: list[float] = []
        self.integer: list[bool] = []
        self.names: list[str] = []
        self._rows_i: list[int] = []
        self._rows_j: list[int] = []
        self._rows_v: list[float] = []
        self.rhs_list: list[float] = []
        self.sense_list: list[str] = []
        self.row_names: list[str] = []
        self._cache = None

    # -- construction ---------------------------------------------------------

    def add_var(self, name="", lo=0.0, hi=math.inf, obj=0.0, integer=False) -> int:
        if lo > hi:
            raise DomainError(f"variable {name!r}: lower bound {lo} exceeds upper bound {hi}")
        self.obj.append(float(obj))
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.integer.append(bool(integer))
        self.names.append(name)
        self._cache = None
        return len(self.obj) - 1

    def add_row(self, coeffs, sense, rhs, name="") -> int:
        """Add ``sum(coeffs[j] * x_j) <sense> rhs``; ``coeffs`` maps var id to coefficient."""
        if sense not in SENSES:
            raise DomainError(f"unknown sense {sense!r}")
        r = len(self.rhs_list)
        n = len(self.obj)
        items = coeffs.items() if isinstance(coeffs, dict) else coeffs
        for j, v in items:
            if not 0 <= j < n:
                raise DomainError(f"row {name!r} references unknown variable {j}")
            if v != 0.0:
                self._rows_i.append(r)
                self._rows_j.append(int(j))
                self._rows_v.append(float(v))
        self.rhs_list.append(float(rhs))
        self.sense_list.append(sense)
        self.row_names.append(name)
        self._cache = None
        return r

    # -- assembled views ------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.obj)

    @property
    def n_rows(self) -> int:
        return len(self.rhs_list)

    def _assemble(self):
        if self._cache is None:
            A = sp.csr_matrix(
                (self._rows_v, (self._rows_i, self._rows_j)), shape=(self.n_rows, self.n_vars)
            )
            A.sum_duplicates()
            self._cache = {
                "A": A,
                "c": np.array(self.obj, dtype=float),
                "lo": np.array(self.lo, dtype=float),
                "hi": np.array(self.hi, dtype=float),
                "rhs": np.array(self.rhs_list, dtype=float),
                "senses": np.array(self.sense_list, dtype=object),
                "integer": np.array(self.integer, dtype=bool),
            }
        return self._cache

    @property
    def A(self) -> sp.csr_matrix:
        return self._assemble()["A"]

    @property
    def c(self) -> np.ndarray:
        return self._assemble()["c"]

    @property
    def lower(self) -> np.ndarray:
        return self._assemble()["lo"]

    @property
    def upper(self) -> np.ndarray:
        return self._assemble()["hi"]

    @property
    def rhs(self) -> np.ndarray:
        return self._assemble()["rhs"]

    @property
    def senses(self) -> np.ndarray:
        return self._assemble()["senses"]

    @property
    def is_integer(self) -> np.ndarray:
        return self._assemble()["integer"]

    def copy(self) -> "Milp":
        other = Milp()
        for attr in ("obj", "lo", "hi", "integer", "names", "_rows_i", "_rows_j", "_rows_v",
                     "rhs_list", "sense_list", "row_names"):
            setattr(other, attr, list(getattr(self, attr)))
        return other

    def set_bounds(self, j, lo, hi):
        if lo > hi:
            raise DomainError(f"variable {self.names[j]!r}: lower bound {lo} exceeds upper bound {hi}")
        self.lo[j] = float(lo)
        self.hi[j] = float(hi)
        self._cache = None

    def relaxed(self) -> "Milp":
        """Copy with every integrality flag cleared."""
        other = self.copy()
        other.integer = [False] * self.n_vars
        return other

    # -- checks ---------------------------------------------------------------

    def objective_value(self, x) -> float:
        return float(self.c @ np.asarray(x, dtype=float))

    def row_violation(self, x) -> np.ndarray:
        """Per-row absolute violation of ``x`` (zero where satisfied)."""
        act = self.A @ np.asarray(x, dtype=float)
        rhs, senses = self.rhs, self.senses
        viol = np.zeros(self.n_rows)
        le = senses == LE
        ge = senses == GE
        eq = senses == EQ
        viol[le] = np.maximum(act[le] - rhs[le], 0.0)
        viol[ge] = np.maximum(rhs[ge] - act[ge], 0.0)
        viol[eq] = np.abs(act[eq] - rhs[eq])
        return viol

    def max_violation(self, x) -> float:
        x = np.asarray(x, dtype=float)
        rows = self.row_violation(x)
        bnd = np.maximum(self.lower - x, 0.0).max(initial=0.0)
        bnd = max(bnd, np.maximum(x - self.upper, 0.0).max(initial=0.0))
        return float(max(rows.max(initial=0.0), bnd))

    def integrality_residual(self, x) -> float:
        x = np.asarray(x, dtype=float)[self.is_integer]
        return float(np.abs(x - np.round(x)).max(initial=0.0))

    # -- export ---------------------------------------------------------------

    def to_lp_text(self) -> str:
        """CPLEX-LP style text with 12 significant digits, for external cross-checks."""
        names = [self._lp_name(j) for j in range(self.n_vars)]

        def term_list(pairs):
            parts = []
            for j, v in pairs:
                sign = "-" if v < 0 else "+"
                parts.append(f"{sign} {abs(v):.12g} {names[j]}")
            return " ".join(parts) if parts else "0"

        out = ["Minimize", " obj: " + term_list((j, v) for j, v in enumerate(self.obj) if v != 0.0)]
        out.append("Subject To")
        A = self.A.tocsr()
        for r in range(self.n_rows):
            lo, hi = A.indptr[r], A.indptr[r + 1]
            pairs = zip(A.indices[lo:hi], A.data[lo:hi])
            rname = f"r{r}"
            op = {LE: "<=", GE: ">=", EQ: "="}[self.sense_list[r]]
            out.append(f" {rname}: {term_list(pairs)} {op} {self.rhs_list[r]:.12g}")
        out.append("Bounds")
        for j in range(self.n_vars):
            lo, hi = self.lo[j], self.hi[j]
            if math.isinf(lo) and math.isinf(hi):
                out.append(f" {names[j]} free")
            else:
                lo_s = "-inf" if math.isinf(lo) else f"{lo:.12g}"
                hi_s = "+inf" if math.isinf(hi) else f"{hi:.12g}"
                out.append(f" {lo_s} <= {names[j]} <= {hi_s}")
        ints = [names[j] for j in range(self.n_vars) if self.integer[j]]
        if ints:
            out.append("General")
            out.extend(" " + n for n in ints)
        out.append("End")
        return "\n".join(out) + "\n"

    def _lp_name(self, j):
        raw = self.names[j] or f"v{j}"
        clean = "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in raw)
        return f"{clean}_{j}"
