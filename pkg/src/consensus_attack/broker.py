"""Query accounting and the objective functions seen by the optimizers.

The :class:`QueryLedger` is the single place where the query budget is
enforced. Objectives truncate a batch that would overrun the budget instead of
rejecting it outright, so the index of the first adversarial query inside a
batch is still recorded precisely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import LossSpec, attack_loss, shifted_loss
from .exceptions import BudgetExceededError, InvalidInputError

__all__ = [
    "QueryLedger",
    "QueryBroker",
    "Objective",
    "FunctionObjective",
    "AttackObjective",
    "RunRecord",
]


class QueryLedger:
    """Counts queries against a budget ``Q`` (``math.inf`` for unbounded)."""

    def __init__(self, budget=math.inf):
        if budget != math.inf and (int(budget) != budget or budget < 0):
            raise ValueError(f"query budget must be a non-negative integer, got {budget!r}")
        self.budget = budget if budget == math.inf else int(budget)
        self.used = 0
        self.log = []  # (iteration, queries) pairs

    def __repr__(self):
        return f"QueryLedger(used={self.used}, budget={self.budget})"

    @property
    def remaining(self):
        return self.budget - self.used

    @property
    def exhausted(self):
        return self.used >= self.budget

    def grant(self, n):
        """How many of ``n`` requested queries fit in the budget."""
        return int(min(n, self.remaining))

    def charge(self, n):
        if self.used + n > self.budget:
            raise BudgetExceededError(f"charging {n} queries would exceed budget {self.budget} (used {self.used})")
        self.used += int(n)

    def record_iteration(self, iteration, queries):
        self.log.append((int(iteration), int(queries)))


class QueryBroker:
    """Closed-box access to a classifier through a ledger.

    ``on_query``, if given, is called with every batch of images that is
    actually evaluated (after truncation); tests use it to audit budgets.
    """

    def __init__(self, classifier, ledger=None, on_query=None):
        self.classifier = classifier
        self.ledger = QueryLedger() if ledger is None else ledger
        self.on_query = on_query
        self.exhausted = False

    def query_batch(self, inputs):
        """Evaluate as many ``inputs`` as the budget allows and return their logits.

        Sets ``self.exhausted`` when the batch had to be truncated or the
        budget was already spent.
        """
        inputs = np.asarray(inputs, dtype=float)
        n = self.ledger.grant(len(inputs))
        self.exhausted = n < len(inputs) or self.ledger.remaining - n <= 0
        if n == 0:
            return np.zeros((0, getattr(self.classifier, "n_classes", 0) or 0))
        batch = inputs[:n]
        if not np.all(np.isfinite(batch)) or batch.min() < 0.0 or batch.max() > 1.0:
            raise InvalidInputError("queried images must lie in [0, 1]")
        self.ledger.charge(n)
        if self.on_query is not None:
            self.on_query(batch)
        return np.asarray(self.classifier.predict_logits(batch.reshape(n, -1)), dtype=float)


class Objective:
    """Query-counted objective over latent points, minimized by every optimizer.

    Calling the objective with an ``(n, d)`` array returns up to ``n`` values;
    fewer are returned once the budget runs out. Success is declared when a
    value drops below ``success_below`` (``None`` disables it), and the 1-based
    index of that query is kept in ``success_query``.
    """

    success_below = None

    def __init__(self, budget=math.inf, ledger=None):
        self.ledger = QueryLedger(budget) if ledger is None else ledger
        self.success = False
        self.success_query = None
        self.success_point = None
        self.best_value = math.inf
        self.best_point = None
        self.exhausted = False

    @property
    def budget(self):
        return self.ledger.budget

    @property
    def queries_used(self):
        return self.ledger.used

    @property
    def remaining(self):
        return self.ledger.remaining

    def __call__(self, points):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.ledger.grant(len(points))
        if n < len(points):
            self.exhausted = True
        if n == 0:
            return np.zeros(0)
        before = self.ledger.used
        values = np.asarray(self._evaluate(points[:n]), dtype=float).ravel()
        if self.ledger.used - before != n or len(values) != n:
            raise BudgetExceededError("objective did not account for exactly one query per point")
        self._track(points[:n], values, before)
        if self.ledger.remaining <= 0:
            self.exhausted = True
        return values

    def _track(self, points, values, offset):
        i = int(np.argmin(values))
        if values[i] < self.best_value:
            self.best_value = float(values[i])
            self.best_point = points[i].copy()
            self._on_new_best(i)
        if not self.success and self.success_below is not None:
            hits = np.flatnonzero(values < self.success_below)
            if hits.size:
                j = int(hits[0])
                self.success = True
                self.success_query = offset + j + 1
                self.success_point = points[j].copy()
                self._on_success(j)

    def _on_new_best(self, index):
        pass

    def _on_success(self, index):
        pass

    def _evaluate(self, points):
        raise NotImplementedError


class FunctionObjective(Objective):
    """Wrap a vectorized analytic function ``f(points) -> values``."""

    def __init__(self, func, budget=math.inf, success_below=None, ledger=None):
        super().__init__(budget, ledger)
        self.func = func
        self.success_below = success_below

    def _evaluate(self, points):
        self.ledger.charge(len(points))
        return self.func(points)


class AttackObjective(Objective):
    """Shifted attack loss of ``space.query_image(s, x)`` under a classifier.

    Every image handed to the classifier is the budget-projected output of the
    space's application map, so it lies in [0, 1] and inside the norm ball.
    """

    success_below = 0.0

    def __init__(self, classifier, space, x, loss=None, budget=math.inf, ledger=None, on_query=None):
        super().__init__(budget, ledger)
        self.broker = QueryBroker(classifier, self.ledger, on_query=on_query)
        self.space = space
        self.x = np.asarray(x, dtype=float)
        self.loss = LossSpec() if loss is None else loss
        self._last_images = None
        self._last_logits = None
        self.best_image = None
        self.best_logits = None
        self.success_image = None
        self.success_logits = None

    def _evaluate(self, points):
        images = np.stack([self.space.query_image(s, self.x) for s in points])
        logits = self.broker.query_batch(images)
        self._last_images, self._last_logits = images, logits
        return [shifted_loss(attack_loss(y, self.loss), y, self.loss) for y in logits]

    def _on_new_best(self, index):
        self.best_image = self._last_images[index].copy()
        self.best_logits = self._last_logits[index].copy()

    def _on_success(self, index):
        self.success_image = self._last_images[index].copy()
        self.success_logits = self._last_logits[index].copy()

    @property
    def output_image(self):
        """The attack output: first adversarial image, else the best one queried."""
        return self.success_image if self.success else self.best_image

    @property
    def output_logits(self):
        return self.success_logits if self.success else self.best_logits


@dataclass
class RunRecord:
    """Outcome of one optimizer run (or of a chain of restarts)."""

    method: str
    success: bool
    queries_used: int
    success_query: int | None = None
    best_point: np.ndarray | None = None
    best_value: float = math.inf
    trajectory: list = field(default_factory=list)
    n_iterations: int = 0
    seed: int | None = None
    output_image: np.ndarray | None = None
    output_label: int | None = None
    restarts: int = 1
    skipped: bool = False
    info: dict = field(default_factory=dict)

    @property
    def queries_to_success(self):
        return self.success_query if self.success else None

    @classmethod
    def from_objective(cls, method, objective, trajectory, n_iterations, seed=None, **info):
        rec = cls(
            method=method,
            success=bool(objective.success),
            queries_used=int(objective.queries_used),
            success_query=objective.success_query,
            best_point=None if objective.best_point is None else objective.best_point.copy(),
            best_value=float(objective.best_value),
            trajectory=[np.asarray(t) for t in trajectory],
            n_iterations=int(n_iterations),
            seed=seed,
            info=dict(info),
        )
        if isinstance(objective, AttackObjective) and objective.output_image is not None:
            rec.output_image = objective.output_image
            rec.output_label = int(np.argmax(objective.output_logits))
        return rec
