"""Problem data, synthetic instance generation and the JSON instance format.

Random draws use numpy's ``Philox`` bit generator (a counter-based 4x64
generator) seeded with the configured 64-bit seed, so an instance is a pure
function of its :class:`GenConfig`.
"""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError, ValidationError
from .scenario_tree import ScenarioTree, full_tree

log = logging.getLogger(__name__)

MAX_REJECTIONS = 1000


@dataclass(frozen=True, eq=False)
class Instance:
    """Costs and capacities over ``T`` stages, ``M`` facilities, ``N`` sites.

    ``maint[t-1, i]`` is the per-stage maintenance cost of one resource unit,
    ``op[t-1, i, j]`` the cost of serving one unit of site ``j`` from
    facility ``i`` and ``cap[t-1, i]`` the demand one resource unit covers.
    """

    maint: np.ndarray
    op: np.ndarray
    cap: np.ndarray
    tree: ScenarioTree

    def __post_init__(self):
        maint = np.array(self.maint, dtype=float)
        op = np.array(self.op, dtype=float)
        cap = np.array(self.cap, dtype=float)
        for a in (maint, op, cap):
            a.setflags(write=False)
        object.__setattr__(self, "maint", maint)
        object.__setattr__(self, "op", op)
        object.__setattr__(self, "cap", cap)
        problems = self.shape_problems()
        if problems:
            raise ValidationError(problems)

    def shape_problems(self):
        T, N = self.tree.T, self.tree.N
        out = []
        if self.maint.ndim != 2 or self.maint.shape[0] != T:
            out.append(("maint", f"shape {self.maint.shape}, expected ({T}, M)"))
            return out
        M = self.maint.shape[1]
        if self.op.shape != (T, M, N):
            out.append(("op", f"shape {self.op.shape}, expected {(T, M, N)}"))
        if self.cap.shape != (T, M):
            out.append(("cap", f"shape {self.cap.shape}, expected {(T, M)}"))
        if out:
            return out
        if np.any(~np.isfinite(self.maint)) or np.any(self.maint < 0):
            out.append(("maint", "entries must be finite and >= 0"))
        if np.any(~np.isfinite(self.op)) or np.any(self.op < 0):
            out.append(("op", "entries must be finite and >= 0"))
        if np.any(~np.isfinite(self.cap)) or np.any(self.cap <= 0):
            out.append(("cap", "entries must be finite and > 0"))
        return out

    @property
    def T(self):
        return self.tree.T

    @property
    def M(self):
        return int(self.maint.shape[1])

    @property
    def N(self):
        return self.tree.N

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (
            np.array_equal(self.maint, other.maint)
            and np.array_equal(self.op, other.op)
            and np.array_equal(self.cap, other.cap)
            and self.tree == other.tree
        )

    __hash__ = None

    def x_upper_bound(self) -> int:
        """Integer cap on any capacity variable implied by total demand."""
        total = float(self.tree.demand.sum(axis=1).max())
        return int(np.ceil(total / float(self.cap.min()) - 1e-9)) if total > 0 else 0


@dataclass(frozen=True)
class RiskProfile:
    """Per-stage risk weights and CVaR levels for stages ``2..T``.

    ``lam[k]`` and ``alpha[k]`` belong to stage ``k + 2``.
    """

    lam: tuple
    alpha: tuple

    def __post_init__(self):
        lam = tuple(float(v) for v in np.atleast_1d(self.lam))
        alpha = tuple(float(v) for v in np.atleast_1d(self.alpha))
        if len(lam) != len(alpha):
            raise DomainError(f"lambda has {len(lam)} entries but alpha has {len(alpha)}")
        if any(not (0.0 <= v <= 1.0) for v in lam):
            raise DomainError(f"lambda entries must lie in [0, 1]: {lam}")
        if any(not (0.0 < v < 1.0) for v in alpha):
            raise DomainError(f"alpha entries must lie in (0, 1): {alpha}")
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def constant(cls, T: int, lam: float, alpha: float = 0.95) -> "RiskProfile":
        return cls(lam=(lam,) * (T - 1), alpha=(alpha,) * (T - 1))

    @property
    def T(self):
        return len(self.lam) + 1

    def lam_at(self, t: int) -> float:
        """Risk weight of stage ``t``; zero outside ``2..T``."""
        return self.lam[t - 2] if 2 <= t <= self.T else 0.0

    def alpha_at(self, t: int) -> float:
        if not 2 <= t <= self.T:
            raise DomainError(f"no CVaR level for stage {t}")
        return self.alpha[t - 2]

    def with_lambda(self, lam: float) -> "RiskProfile":
        return RiskProfile(lam=(lam,) * len(self.lam), alpha=self.alpha)


class TreeKind(str, enum.Enum):
    SD = "sd"
    SI = "si"


class Pattern(str, enum.Enum):
    GRID = "grid"
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"


@dataclass(frozen=True)
class GenConfig:
    branches: int = 2
    stages: int = 3
    facilities: int = 5
    sites: int = 10
    tree_kind: TreeKind = TreeKind.SD
    sigma: float = 0.8
    pattern: Pattern = Pattern.GRID
    seed: int = 0
    lam: float = 0.5
    alpha: float = 0.95
    extent: float = 100.0
    travel_cost: float = 1.0
    maint_cost: float = 6e4
    capacity: float = 1e3
    nominal_low: float = 1000.0
    nominal_high: float = 5000.0

    def __post_init__(self):
        object.__setattr__(self, "tree_kind", TreeKind(self.tree_kind))
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if self.branches < 2:
            raise DomainError("branches must be >= 2")
        if self.stages < 2:
            raise DomainError("stages must be >= 2")
        if self.facilities < 1 or self.sites < 1:
            raise DomainError("facilities and sites must be positive")
        if self.sigma < 0:
            raise DomainError("sigma must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if self.capacity <= 0 or self.maint_cost < 0 or self.travel_cost < 0:
            raise DomainError("capacity must be > 0 and costs >= 0")
        if not 0 <= self.lam <= 1:
            raise DomainError("lam must lie in [0, 1]")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed)))


def truncated_normal(rng: np.random.Generator, mean, std) -> np.ndarray:
    """Normal draws with negative values rejected and redrawn.

    After ``MAX_REJECTIONS`` rounds any still-negative entry is clamped to 0.
    """
    mean = np.asarray(mean, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), mean.shape)
    out = rng.normal(mean, std)
    bad = out < 0
    rounds = 0
    while bad.any() and rounds < MAX_REJECTIONS:
        out[bad] = rng.normal(mean[bad], std[bad])
        bad = out < 0
        rounds += 1
    if bad.any():
        log.warning("truncated normal: clamping %d draws to 0 after %d rejections", bad.sum(), rounds)
        out[bad] = 0.0
    return out


def _stage_params(cfg: GenConfig, rng):
    """Per-stage demand mean/std arrays ``(T, N)`` and the root demand."""
    T, N = cfg.stages, cfg.sites
    t = np.arange(1, T + 1)[:, None]
    if cfg.pattern is Pattern.GRID:
        lo = cfg.nominal_low * (2 * t - 1)
        hi = cfg.nominal_high * (2 * t - 1)
        mean = rng.uniform(np.broadcast_to(lo, (T, N)), np.broadcast_to(hi, (T, N)))
        std = cfg.sigma * mean
        return mean, std, mean[0].copy()
    nominal = rng.uniform(cfg.nominal_low, cfg.nominal_high, size=N)
    grow = cfg.pattern in (Pattern.III, Pattern.IV)
    spread = cfg.pattern in (Pattern.II, Pattern.IV)
    mean = nominal * ((1 + 2 * (t - 1)) if grow else np.ones_like(t))
    std = nominal * ((cfg.sigma + 2 * (t - 1)) if spread else cfg.sigma * np.ones_like(t))
    return mean.astype(float), std.astype(float), nominal.copy()


def generate_synthetic(cfg: GenConfig) -> tuple[Instance, RiskProfile]:
    """Random grid instance with an SD or SI scenario tree."""
    rng = make_rng(cfg.seed)
    M, N, T, C = cfg.facilities, cfg.sites, cfg.stages, cfg.branches
    fac = rng.integers(0, int(cfg.extent) + 1, size=(M, 2)).astype(float)
    site = rng.integers(0, int(cfg.extent) + 1, size=(N, 2)).astype(float)
    dist = np.abs(fac[:, None, :] - site[None, :, :]).sum(axis=2)
    op = np.broadcast_to(dist * cfg.travel_cost, (T, M, N)).copy()
    maint = np.full((T, M), cfg.maint_cost)
    cap = np.full((T, M), cfg.capacity)
    mean, std, root = _stage_params(cfg, rng)

    skeleton = full_tree(C, T)
    demand = np.zeros((skeleton.n_nodes, N))
    demand[0] = root
    if cfg.tree_kind is TreeKind.SD:
        for n in range(1, skeleton.n_nodes):
            t = skeleton.stage[n]
            demand[n] = truncated_normal(rng, mean[t - 1], std[t - 1])
    else:
        for t in range(2, T + 1):
            draws = truncated_normal(rng, np.tile(mean[t - 1], (C, 1)), np.tile(std[t - 1], (C, 1)))
            for parent in skeleton.nodes_at_stage(t - 1):
                for k, child in enumerate(skeleton.children[parent]):
                    demand[child] = draws[k]
    tree = ScenarioTree(
        parent=skeleton.parent, stage=skeleton.stage, prob=skeleton.prob, demand=demand
    )
    return Instance(maint=maint, op=op, cap=cap, tree=tree), RiskProfile.constant(T, cfg.lam, cfg.alpha)


def example1_instance(f: float, c: float, lam: float) -> tuple[Instance, RiskProfile]:
    """Two-stage, one-facility, one-site illustration with demands 0 / {50, 150}."""
    if f < 0 or c < 0:
        raise DomainError("costs must be non-negative")
    tree = ScenarioTree(parent=[-1, 0, 0], stage=[1, 2, 2], prob=[1.0, 0.5, 0.5], demand=[[0.0], [50.0], [150.0]])
    inst = Instance(
        maint=[[f], [f]],
        op=[[[c]], [[c]]],
        cap=[[50.0], [50.0]],
        tree=tree,
    )
    return inst, RiskProfile(lam=(lam,), alpha=(0.5,))


# small city fixture: eight demand sites, the first five double as candidate facilities
CITIES = (
    ("New York", 40.71, -74.01, 8.34),
    ("Chicago", 41.88, -87.63, 2.70),
    ("Houston", 29.76, -95.37, 2.30),
    ("Phoenix", 33.45, -112.07, 1.61),
    ("Atlanta", 33.75, -84.39, 0.50),
    ("Seattle", 47.61, -122.33, 0.74),
    ("Denver", 39.74, -104.99, 0.72),
    ("Boston", 42.36, -71.06, 0.68),
)
EARTH_RADIUS_MI = 3958.8


def great_circle(lat1, lon1, lat2, lon2):
    """Haversine distance in miles; arguments in degrees, broadcasting."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dp, dl = p2 - p1, np.radians(lon2) - np.radians(lon1)
    a = np.sin(dp / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_MI * np.arcsin(np.sqrt(a))


def city_fixture(lam: float = 0.5, alpha: float = 0.95, unit_cost: float = 0.05) -> tuple[Instance, RiskProfile]:
    """Deterministic M=5, N=8, T=3 instance on great-circle distances.

    Root demand is 1000 per million inhabitants; each branching scales a
    parent's demand by 1.4 (high) or 1.1 (low) in stage 2, then by 1.25 or
    1.05, with east and west coast sites swapping roles in the low branch.
    """
    lat = np.array([c[1] for c in CITIES])
    lon = np.array([c[2] for c in CITIES])
    pop = np.array([c[3] for c in CITIES])
    M, N, T = 5, len(CITIES), 3
    dist = great_circle(lat[:M, None], lon[:M, None], lat[None, :], lon[None, :])
    op = np.broadcast_to(unit_cost * dist, (T, M, N)).copy()
    maint = np.full((T, M), 6e4)
    cap = np.full((T, M), 1e3)
    west = lon < -100
    growth = {2: (1.4, 1.1), 3: (1.25, 1.05)}
    skeleton = full_tree(2, T)
    demand = np.zeros((skeleton.n_nodes, N))
    demand[0] = 1000.0 * pop
    for n in range(1, skeleton.n_nodes):
        t = int(skeleton.stage[n])
        hi, lo = growth[t]
        branch = skeleton.children[skeleton.parent[n]].index(n)
        g = np.where(west, lo, hi) if branch else np.where(west, hi, lo)
        demand[n] = np.round(demand[skeleton.parent[n]] * g, 6)
    tree = ScenarioTree(parent=skeleton.parent, stage=skeleton.stage, prob=skeleton.prob, demand=demand)
    return Instance(maint=maint, op=op, cap=cap, tree=tree), RiskProfile.constant(T, lam, alpha)


# -- JSON file format ---------------------------------------------------------

def instance_to_dict(inst: Instance, risk: RiskProfile) -> dict:
    return {
        "T": inst.T,
        "M": inst.M,
        "N": inst.N,
        "maint": inst.maint.tolist(),
        "op": inst.op.tolist(),
        "cap": inst.cap.tolist(),
        "risk": {"lambda": list(risk.lam), "alpha": list(risk.alpha)},
        "tree": {"nodes": inst.tree.to_nodes()},
    }


def write_instance(path, inst: Instance, risk: RiskProfile) -> None:
    # json emits the shortest repr that round-trips each double exactly
    text = json.dumps(instance_to_dict(inst, risk), indent=1)
    Path(path).write_text(text + "\n")


_REQUIRED = ("T", "M", "N", "maint", "op", "cap", "risk", "tree")


def _array(doc, key, shape):
    try:
        arr = np.array(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ValidationError([(key, f"not a numeric array ({exc})")]) from None
    if arr.shape != shape:
        raise ValidationError([(key, f"shape {arr.shape}, expected {shape}")])
    return arr


def instance_from_dict(doc: dict) -> tuple[Instance, RiskProfile]:
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ValidationError([(k, "missing key") for k in missing])
    T, M, N = int(doc["T"]), int(doc["M"]), int(doc["N"])
    maint = _array(doc, "maint", (T, M))
    op = _array(doc, "op", (T, M, N))
    cap = _array(doc, "cap", (T, M))
    try:
        nodes = doc["tree"]["nodes"]
        for k, node in enumerate(nodes):
            for key in ("id", "parent", "stage", "prob", "demand"):
                if key not in node:
                    raise ValidationError([(f"tree.nodes[{k}]", f"missing key {key!r}")])
            if len(node["demand"]) != N:
                raise ValidationError(
                    [(f"node {node['id']}", f"demand has {len(node['demand'])} entries, expected {N}")]
                )
        tree = ScenarioTree.from_nodes(nodes)
    except (KeyError, TypeError) as exc:
        raise ValidationError([("tree", f"malformed ({exc})")]) from None
    violations = tree.validate()
    if violations:
        raise ValidationError([(("tree" if v.node is None else f"node {v.node}"), v.message) for v in violations])
    if tree.T != T:
        raise ValidationError([("tree", f"has {tree.T} stages, expected T={T}")])
    risk_doc = doc["risk"]
    try:
        risk = RiskProfile(lam=tuple(risk_doc["lambda"]), alpha=tuple(risk_doc["alpha"]))
    except KeyError as exc:
        raise ValidationError([("risk", f"missing key {exc}")]) from None
    except DomainError as exc:
        raise ValidationError([("risk", str(exc))]) from None
    if risk.T != T:
        raise ValidationError([("risk", f"covers {risk.T} stages, expected {T}")])
    return Instance(maint=maint, op=op, cap=cap, tree=tree), risk


def read_instance(path) -> tuple[Instance, RiskProfile]:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError([(f"line {exc.lineno}, column {exc.colno}", exc.msg)]) from None
    if not isinstance(doc, dict):
        raise ValidationError([("document", "top level must be a JSON object")])
    return instance_from_dict(doc)
