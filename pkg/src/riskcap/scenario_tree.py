"""Scenario trees with node-indexed demand.

Nodes live in a flat array in topological order (every parent precedes its
children) with the root at index 0. Stages are 1-based, as in the model
formulations: the root is stage 1 and leaves are stage ``T``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError

PROB_TOL = 1e-12


@dataclass(frozen=True)
class Violation:
    node: int | None
    message: str

    def __str__(self):
        where = "tree" if self.node is None else f"node {self.node}"
        return f"{where}: {self.message}"


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScenarioTree:
    """Immutable scenario tree.

    ``parent[0]`` is -1 for the root. ``prob`` holds unconditional node
    probabilities and ``demand`` is an ``(n_nodes, N)`` array.
    """

    parent: np.ndarray
    stage: np.ndarray
    prob: np.ndarray
    demand: np.ndarray
    children: tuple = field(init=False, repr=False)

    def __post_init__(self):
        parent = _frozen(self.parent, np.int64)
        stage = _frozen(self.stage, np.int64)
        prob = _frozen(self.prob, np.float64)
        demand = np.array(self.demand, dtype=np.float64, copy=True)
        if demand.ndim == 1:
            demand = demand.reshape(-1, 1)
        demand.setflags(write=False)
        n = parent.shape[0]
        if n == 0:
            raise DomainError("scenario tree needs at least one node")
        if stage.shape != (n,) or prob.shape != (n,) or demand.shape[0] != n:
            raise DomainError(
                f"per-node arrays disagree in length: parent={n}, stage={stage.shape}, "
                f"prob={prob.shape}, demand={demand.shape}"
            )
        kids = [[] for _ in range(n)]
        for node in range(1, n):
            p = int(parent[node])
            if 0 <= p < n:
                kids[p].append(node)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "stage", stage)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "children", tuple(tuple(k) for k in kids))

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_nodes(cls, nodes: Sequence[dict]) -> "ScenarioTree":
        """Build from dicts with keys ``id, parent, stage, prob, demand``."""
        nodes = sorted(nodes, key=lambda d: d["id"])
        ids = [int(d["id"]) for d in nodes]
        if ids != list(range(len(ids))):
            raise DomainError(f"node ids must be contiguous 0..{len(ids) - 1}, got {ids}")
        parent = [-1 if d["parent"] is None else int(d["parent"]) for d in nodes]
        return cls(
            parent=parent,
            stage=[int(d["stage"]) for d in nodes],
            prob=[float(d["prob"]) for d in nodes],
            demand=[list(map(float, d["demand"])) for d in nodes],
        )

    @classmethod
    def single_path(cls, demands) -> "ScenarioTree":
        """A deterministic tree: one node per stage, probability one."""
        demands = np.atleast_2d(np.asarray(demands, dtype=float))
        T = demands.shape[0]
        return cls(
            parent=[-1] + list(range(T - 1)),
            stage=list(range(1, T + 1)),
            prob=[1.0] * T,
            demand=demands,
        )

    def to_nodes(self) -> list[dict]:
        return [
            {
                "id": n,
                "parent": None if n == 0 else int(self.parent[n]),
                "stage": int(self.stage[n]),
                "prob": float(self.prob[n]),
                "demand": [float(v) for v in self.demand[n]],
            }
            for n in range(self.n_nodes)
        ]

    # -- sizes ----------------------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    @property
    def T(self) -> int:
        return int(self.stage.max())

    @property
    def N(self) -> int:
        return int(self.demand.shape[1])

    def __len__(self):
        return self.n_nodes

    def __eq__(self, other):
        if not isinstance(other, ScenarioTree):
            return NotImplemented
        return (
            np.array_equal(self.parent, other.parent)
            and np.array_equal(self.stage, other.stage)
            and np.array_equal(self.prob, other.prob)
            and np.array_equal(self.demand, other.demand)
        )

    __hash__ = None

    # -- traversal ------------------------------------------------------------

    def _check_node(self, n):
        if not (isinstance(n, (int, np.integer)) and 0 <= n < self.n_nodes):
            raise DomainError(f"invalid node id {n!r} (tree has {self.n_nodes} nodes)")

    def is_leaf(self, n: int) -> bool:
        return len(self.children[n]) == 0

    @property
    def leaves(self) -> list[int]:
        return [n for n in range(self.n_nodes) if not self.children[n]]

    @property
    def non_leaves(self) -> list[int]:
        return [n for n in range(self.n_nodes) if self.children[n]]

    def path_to_root(self, n: int) -> list[int]:
        """Nodes from the root down to ``n``, inclusive."""
        self._check_node(n)
        path = [int(n)]
        seen = 0
        while path[-1] != 0:
            p = int(self.parent[path[-1]])
            seen += 1
            if p < 0 or seen > self.n_nodes:
                raise DomainError(f"node {n} is not connected to the root")
            path.append(p)
        return path[::-1]

    def nodes_at_stage(self, t: int) -> list[int]:
        if not (isinstance(t, (int, np.integer)) and 1 <= t <= self.T):
            raise DomainError(f"stage {t!r} out of range 1..{self.T}")
        return [int(n) for n in np.flatnonzero(self.stage == t)]

    def conditional_probs(self, n: int) -> np.ndarray:
        """Branch probabilities of the children of ``n`` given ``n``."""
        kids = list(self.children[n])
        return self.prob[kids] / self.prob[n]

    def subtree_sum(self, values) -> np.ndarray:
        """For each node, the sum of ``values`` over the node and its descendants."""
        acc = np.array(values, dtype=float, copy=True)
        for n in range(self.n_nodes - 1, 0, -1):
            acc[self.parent[n]] += acc[n]
        return acc

    def running_max(self, values) -> np.ndarray:
        """Componentwise max of ``values`` along each root-to-node path."""
        out = np.array(values, dtype=float, copy=True)
        for n in range(1, self.n_nodes):
            out[n] = np.maximum(out[n], out[self.parent[n]])
        return out

    # -- validation -----------------------------------------------------------

    def validate(self) -> list[Violation]:
        """Return every violated invariant; an empty list means the tree is well formed."""
        out: list[Violation] = []
        n_nodes = self.n_nodes
        if self.parent[0] != -1:
            out.append(Violation(0, "root must have no parent"))
        if self.stage[0] != 1:
            out.append(Violation(0, f"root stage is {self.stage[0]}, expected 1"))
        if abs(self.prob[0] - 1.0) > PROB_TOL:
            out.append(Violation(0, f"root probability is {self.prob[0]!r}, expected 1"))
        for n in range(1, n_nodes):
            p = int(self.parent[n])
            if not (0 <= p < n):
                out.append(Violation(n, f"parent {p} must satisfy 0 <= parent < {n}"))
                continue
            if self.stage[n] != self.stage[p] + 1:
                out.append(
                    Violation(n, f"stage {self.stage[n]} != parent stage {self.stage[p]} + 1")
                )
        for n in range(n_nodes):
            if not (0.0 < self.prob[n] <= 1.0 + PROB_TOL):
                out.append(Violation(n, f"probability {self.prob[n]!r} outside (0, 1]"))
            if np.any(~np.isfinite(self.demand[n])) or np.any(self.demand[n] < 0):
                out.append(Violation(n, "demand must be finite and non-negative"))
        T = int(self.stage.max())
        for n in range(n_nodes):
            kids = self.children[n]
            if kids:
                s = float(self.prob[list(kids)].sum())
                if abs(s - self.prob[n]) > PROB_TOL:
                    out.append(
                        Violation(n, f"children probabilities sum to {s!r}, expected {self.prob[n]!r}")
                    )
                if self.stage[n] == T:
                    out.append(Violation(n, "stage-T node has children"))
            elif self.stage[n] != T:
                out.append(Violation(n, f"leaf at stage {self.stage[n]}, expected stage {T}"))
        for t in range(1, T + 1):
            mask = self.stage == t
            if not mask.any():
                out.append(Violation(None, f"stage {t} has no nodes"))
                continue
            s = float(self.prob[mask].sum())
            if abs(s - 1.0) > PROB_TOL:
                out.append(Violation(None, f"stage {t} probabilities sum to {s!r}, expected 1"))
        return out

    def is_valid(self) -> bool:
        return not self.validate()


def full_tree(branches: int, stages: int, demand_fn=None, N: int = 1) -> ScenarioTree:
    """Complete tree with ``branches`` equiprobable children per non-leaf node.

    ``demand_fn(node, stage, parent, branch)`` supplies each node's demand
    vector; nodes are created breadth first.
    """
    if branches < 1 or stages < 1:
        raise DomainError("branches and stages must be positive")
    parent, stage, prob, branch = [-1], [1], [1.0], [0]
    frontier = [0]
    for t in range(2, stages + 1):
        nxt = []
        for p in frontier:
            for k in range(branches):
                parent.append(p)
                stage.append(t)
                prob.append(prob[p] / branches)
                branch.append(k)
                nxt.append(len(parent) - 1)
        frontier = nxt
    if demand_fn is None:
        demand = np.zeros((len(parent), N))
    else:
        demand = np.array(
            [demand_fn(n, stage[n], parent[n], branch[n]) for n in range(len(parent))], dtype=float
        )
    return ScenarioTree(parent=parent, stage=stage, prob=prob, demand=demand)
