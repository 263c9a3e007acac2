"""Exact accounting of replica<->server traffic and gradient work.

Counts are integers, so communication-ratio claims can be checked with
no floating-point slack: every reduce event moves n*N floats up and n*N
floats down, nothing else is ever counted.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CommLedger:
    floats_up: int = 0
    floats_down: int = 0
    reduce_events: int = 0
    grad_evals: int = 0

    def charge_reduce(self, n: int, N: int) -> None:
        """One synchronous reduce: every replica sends and receives N floats."""
        self.floats_up += n * N
        self.floats_down += n * N
        self.reduce_events += 1

    def add_grad_evals(self, count: int) -> None:
        self.grad_evals += count

    @property
    def floats_total(self) -> int:
        return self.floats_up + self.floats_down

    def snapshot(self) -> dict:
        return {
            "floats_up": self.floats_up,
            "floats_down": self.floats_down,
            "reduce_events": self.reduce_events,
            "grad_evals": self.grad_evals,
        }


@dataclass
class RunMeta:
    """Identity of a run, enough to decide whether two runs are comparable."""

    algorithm: str
    n: int
    N: int
    seed: int = 0
    extra: dict = field(default_factory=dict)
