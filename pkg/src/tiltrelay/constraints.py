"""Hard constraints and their two relaxations.

A constraint is an evaluator ``g(...)`` with the convention ``g <= 0`` when
satisfied. It is kept hard, turned into an exponential penalty
``mu1 * exp(mu2 * g)`` added to the objective, or reshaped to ``g <= s`` with
a slack ``s >= 0`` that costs ``ks * s**2``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import DimensionMismatch, KindMismatch

PENALTY_CLAMP = 1e30
DEFAULT_MU = 50.0
KINDS = ("hard", "penalty", "slack")


@dataclass(frozen=True)
class Constraint:
    id: str
    kind: str = "hard"
    evaluator: Callable | None = field(default=None, compare=False, repr=False)
    mu1: float | None = None
    mu2: float | None = None
    ks: float | None = None
    equality: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"constraint {self.id!r}: unknown kind {self.kind!r}")
        if self.kind == "penalty":
            mu1 = DEFAULT_MU if self.mu1 is None else self.mu1
            mu2 = DEFAULT_MU if self.mu2 is None else self.mu2
            if not (mu1 > 0 and mu2 > 0):
                raise ValueError(f"constraint {self.id!r}: penalty needs mu1, mu2 > 0")
            object.__setattr__(self, "mu1", float(mu1))
            object.__setattr__(self, "mu2", float(mu2))
            object.__setattr__(self, "ks", None)
        elif self.kind == "slack":
            ks = 0.0 if self.ks is None else self.ks
            if ks < 0:
                raise ValueError(f"constraint {self.id!r}: slack weight must be >= 0")
            object.__setattr__(self, "ks", float(ks))
            object.__setattr__(self, "mu1", None)
            object.__setattr__(self, "mu2", None)
        else:
            object.__setattr__(self, "mu1", None)
            object.__setattr__(self, "mu2", None)
            object.__setattr__(self, "ks", None)

    def __call__(self, *args):
        return self.evaluator(*args)


def split_equality(c: Constraint) -> tuple[Constraint, ...]:
    """``h == 0`` becomes the pair ``h <= 0`` and ``-h <= 0``."""
    if not c.equality:
        return (c,)
    ev = c.evaluator
    neg = None if ev is None else (lambda *a: -ev(*a))
    common = dict(kind=c.kind, mu1=c.mu1, mu2=c.mu2, ks=c.ks, params=c.params)
    return (Constraint(f"{c.id}:le", evaluator=ev, **common),
            Constraint(f"{c.id}:ge", evaluator=neg, **common))


class ConstraintSet(tuple):
    """Immutable ordered collection; equalities are split on construction."""

    def __new__(cls, constraints: Sequence[Constraint] = ()):
        flat = []
        for c in constraints:
            flat.extend(split_equality(c))
        ids = [c.id for c in flat]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate constraint ids in {ids}")
        return super().__new__(cls, flat)

    def of_kind(self, kind: str) -> list[Constraint]:
        return [c for c in self if c.kind == kind]

    def evaluate(self, *args) -> np.ndarray:
        return np.array([float(c(*args)) for c in self])


def _penalty(mu1, mu2, g):
    g = np.asarray(g, dtype=float)
    with np.errstate(over="ignore"):
        val = mu1 * np.exp(np.minimum(mu2 * g, 700.0))
    return np.minimum(val, PENALTY_CLAMP)


def penalty_value(c: Constraint, g_val):
    """``mu1 * exp(mu2 * g)``, clamped at 1e30. Vectorizes over ``g_val``."""
    if c.kind != "penalty":
        raise KindMismatch(f"constraint {c.id!r} is {c.kind}, not penalty")
    out = _penalty(c.mu1, c.mu2, g_val)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SlackVariable:
    name: str
    lower: float = 0.0
    upper: float = np.inf


@dataclass(frozen=True)
class SlackRelaxation:
    """Result of reshaping ``g <= 0`` into ``g - s <= 0`` with cost ``ks s^2``."""

    constraint: Constraint
    variable: SlackVariable

    def reshaped(self, s, *args) -> float:
        return float(self.constraint(*args)) - s

    def addend(self, s) -> float:
        return self.constraint.ks * s * s


def slack_relax(c: Constraint) -> SlackRelaxation:
    if c.kind != "slack":
        raise KindMismatch(f"constraint {c.id!r} is {c.kind}, not slack")
    return SlackRelaxation(c, SlackVariable(f"s_{c.id}"))


def total_augmented_objective(base: float, constraints: ConstraintSet, g_values, slack_values=()) -> float:
    """Base objective plus every penalty and slack cost.

    ``g_values`` holds one entry per constraint; ``slack_values`` one per slack
    constraint, in set order. Hard constraints add nothing here; use
    ``hard_violation`` to inspect them.
    """
    g_values = np.atleast_1d(np.asarray(g_values, dtype=float))
    slack_values = np.atleast_1d(np.asarray(slack_values, dtype=float))
    slacks = constraints.of_kind("slack")
    if g_values.size != len(constraints):
        raise DimensionMismatch(f"{g_values.size} g values for {len(constraints)} constraints")
    if slack_values.size != len(slacks):
        raise DimensionMismatch(f"{slack_values.size} slack values for {len(slacks)} slack constraints")
    total = float(base)
    for c, g in zip(constraints, g_values):
        if c.kind == "penalty":
            total += float(_penalty(c.mu1, c.mu2, g))
    for c, s in zip(slacks, slack_values):
        total += c.ks * s * s
    return total


def hard_violation(constraints: ConstraintSet, g_values) -> float:
    """Largest positive g among hard constraints (0 when all hold)."""
    worst = 0.0
    for c, g in zip(constraints, np.atleast_1d(g_values)):
        if c.kind == "hard":
            worst = max(worst, float(g))
    return worst


@dataclass
class RelaxedSolution:
    x: np.ndarray
    slacks: np.ndarray
    objective: float
    success: bool
    message: str


def solve_relaxed(objective: Callable, x0, constraints: ConstraintSet, bounds=None,
                  tol: float = 1e-12, maxiter: int = 500) -> RelaxedSolution:
    """Minimize ``objective(x)`` under a mixed hard/penalty/slack constraint set.

    Evaluators take the decision vector ``x``. Slack variables are appended to
    the search vector and bounded below by zero. Backed by SLSQP.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    slacks = constraints.of_kind("slack")
    slack_index = {c.id: n + i for i, c in enumerate(slacks)}

    def augmented(z):
        x, s = z[:n], z[n:]
        g = [float(c(x)) if c.kind == "penalty" else 0.0 for c in constraints]
        return total_augmented_objective(objective(x), constraints, g, s)

    cons = []
    for c in constraints:
        if c.kind == "hard":
            cons.append({"type": "ineq", "fun": lambda z, c=c: -float(c(z[:n]))})
        elif c.kind == "slack":
            i = slack_index[c.id]
            cons.append({"type": "ineq", "fun": lambda z, c=c, i=i: z[i] - float(c(z[:n]))})
    z0 = np.concatenate([x0, np.zeros(len(slacks))])
    for c in slacks:
        # start from a feasible slack
        z0[slack_index[c.id]] = max(0.0, float(c(x0)))
    xb = [(None, None)] * n if bounds is None else list(bounds)
    res = minimize(augmented, z0, method="SLSQP", constraints=cons,
                   bounds=xb + [(0.0, None)] * len(slacks),
                   options={"ftol": tol, "maxiter": maxiter})
    return RelaxedSolution(res.x[:n], res.x[n:], float(res.fun), bool(res.success), str(res.message))
