"""Epoch-indexed blend weights between region and boundary losses.

Every schedule starts at 1 at ``t = 0`` and ends at 0 at ``t = total_epochs``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from surfkit.errors import InvalidEpoch, InvalidSchedule

KINDS = ("linear", "step", "cosine")


@dataclass(frozen=True)
class Schedule:
    kind: str
    total_epochs: int
    step_length: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSchedule(f"schedule kind must be one of {KINDS}, got {self.kind!r}")
        if self.total_epochs < 1:
            raise InvalidSchedule(f"total_epochs must be >= 1, got {self.total_epochs}")
        if self.kind == "step" and not 1 <= self.step_length <= self.total_epochs:
            raise InvalidSchedule(
                f"step length must lie in [1, {self.total_epochs}], got {self.step_length}"
            )

    def __call__(self, t: int) -> float:
        return alpha(self, t)

    def table(self) -> list[tuple[int, float]]:
        return [(t, alpha(self, t)) for t in range(self.total_epochs + 1)]


def alpha(schedule: Schedule, t: int) -> float:
    T = schedule.total_epochs
    if not 0 <= t <= T:
        raise InvalidEpoch(f"epoch {t} outside [0, {T}]")
    if schedule.kind == "linear":
        return 1.0 - t / T
    if schedule.kind == "cosine":
        return 0.5 * (1.0 + math.cos(math.pi * t / T))
    n_steps = T // schedule.step_length
    return min(1.0, max(0.0, 1.0 - (t // schedule.step_length) / n_steps))
