"""Commit-size schedules.

A schedule fixes, before a run starts, how many positions are committed at
each step.  The uniform schedule derives a per-step commit size from the
forward ratio (model forwards divided by generation length): FR=0.125 means
8 commits per forward, FR=0.5 means 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass


class InvalidScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    forward_ratio: float
    length: int
    commit_sizes: tuple[int, ...]

    def __post_init__(self) -> None:
        if sum(self.commit_sizes) != self.length:
            raise InvalidScheduleError(
                f"commit sizes sum to {sum(self.commit_sizes)}, expected {self.length}"
            )
        if any(k < 1 for k in self.commit_sizes):
            raise InvalidScheduleError("every commit size must be at least 1")

    @property
    def steps(self) -> int:
        return len(self.commit_sizes)


def make_uniform_schedule(length: int, forward_ratio: float) -> Schedule:
    """Uniform schedule with base commit size ``max(1, round(1/FR))``.

    The final step takes the remainder when the base size does not divide
    ``length``, so commit sizes always sum to ``length``.
    """
    if length < 1:
        raise InvalidScheduleError(f"length must be positive, got {length}")
    if not 0.0 < forward_ratio <= 1.0:
        raise InvalidScheduleError(
            f"forward_ratio must lie in (0, 1], got {forward_ratio}"
        )
    base = max(1, round(1.0 / forward_ratio))
    steps = math.ceil(length / base)
    sizes = [base] * steps
    remainder = length - base * (steps - 1)
    sizes[-1] = remainder
    return Schedule(forward_ratio=forward_ratio, length=length, commit_sizes=tuple(sizes))
