"""Forward auction for the square linear sum assignment problem (minimisation)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class AssignmentProblem:
    costs: np.ndarray

    def __post_init__(self):
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] < 1:
            raise ValueError(f"cost matrix must be square and non-empty, got {c.shape}")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("costs must be finite and non-negative")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @classmethod
    def from_points(cls, agents, targets):
        """Euclidean distance from each agent (row) to each target (column)."""
        a = np.asarray(agents, dtype=float)
        t = np.asarray(targets, dtype=float)
        return cls(np.linalg.norm(a[:, None, :] - t[None, :, :], axis=-1))

    @property
    def size(self):
        return self.costs.shape[0]

    def cost_of(self, perm):
        perm = np.asarray(perm)
        return float(self.costs[np.arange(self.size), perm].sum())


@dataclass(frozen=True, eq=False)
class Assignment:
    perm: np.ndarray  # perm[i] = target assigned to agent i
    total_cost: float
    epsilon: float = 0.0
    prices: np.ndarray = None
    bids: int = 0


def auction_assign(problem, epsilon, price_history=None):
    """Gauss-Seidel forward auction with fixed ``epsilon``.

    Benefits are negated costs and all prices start at zero. The result
    satisfies epsilon-complementary slackness, so its cost is within
    ``N * epsilon`` of the optimum. Equal values are resolved towards the
    lowest object index. If ``price_history`` is a list, the price vector is
    appended after every bid.
    """
    if not isinstance(problem, AssignmentProblem):
        problem = AssignmentProblem(problem)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    n = problem.size
    benefit = -problem.costs
    prices = np.zeros(n)
    owner = np.full(n, -1)  # object -> agent
    assigned = np.full(n, -1)  # agent -> object
    unassigned = list(range(n))
    bids = 0
    while unassigned:
        i = unassigned.pop(0)
        values = benefit[i] - prices
        j = int(np.argmax(values))  # first maximum
        best = values[j]
        if n > 1:
            second = np.max(np.delete(values, j))
        else:
            second = best
        prices[j] += best - second + epsilon
        bids += 1
        if price_history is not None:
            price_history.append(prices.copy())
        prev = owner[j]
        owner[j] = i
        assigned[i] = j
        if prev >= 0:
            assigned[prev] = -1
            unassigned.append(prev)
    perm = assigned.copy()
    perm.setflags(write=False)
    return Assignment(perm, problem.cost_of(perm), float(epsilon), prices, bids)


def swap_improvement_check(problem, assignment, epsilon=None):
    """True iff no pairwise target swap lowers the cost by more than ``2 * epsilon``."""
    if not isinstance(problem, AssignmentProblem):
        problem = AssignmentProblem(problem)
    eps = assignment.epsilon if epsilon is None else epsilon
    c = problem.costs
    perm = np.asarray(assignment.perm)
    own = c[np.arange(problem.size), perm]
    # gain[i, k] = current cost of i and k minus cost after swapping their targets
    swapped = c[:, perm]
    gain = own[:, None] + own[None, :] - swapped - swapped.T
    return not np.any(gain > 2.0 * eps)
