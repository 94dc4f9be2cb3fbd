"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input outside the domain an operation accepts."""


class ValidationError(DomainError):
    """A data object violates one or more structural invariants.

    ``violations`` holds ``(node_or_field, message)`` pairs.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{where}: {msg}" for where, msg in self.violations)
        super().__init__(text or "validation failed")


class SolverError(RuntimeError):
    """A solve did not produce a usable optimum."""

    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class InfeasiblePolicyError(DomainError):
    """A policy handed to the evaluator violates demand or capacity rows."""

    def __init__(self, rows):
        self.rows = list(rows)
        head = ", ".join(self.rows[:5])
        more = f" (+{len(self.rows) - 5} more)" if len(self.rows) > 5 else ""
        super().__init__(f"policy infeasible at {head}{more}")
