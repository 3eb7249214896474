"""Parameter budget over training: warm-up plateau, cubic decrement, final plateau.

Two readings of the middle branch are available:

``canonical`` (default)
    ``bT + (b0 - bT) * (1 - (t - t_i) / (T - t_f - t_i))**3``. Equals ``b0`` at
    ``t_i`` and ``bT`` at ``T - t_f``, so the three pieces join continuously.

``literal``
    ``b0 - (b0 - bT) / b0 * ((t - t_i) / (t_f - t_i))**3``. This form scales
    the drop by ``1/b0`` and normalises by ``t_f - t_i``, so in general it does
    not reach ``bT`` before the final plateau and jumps there at ``T - t_f``.
    Kept for comparison runs; it is only accepted for settings where it stays
    monotone.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

from .errors import ConfigError, ContractError


class ScheduleMode(enum.Enum):
    CANONICAL = "canonical"
    LITERAL = "literal"


@dataclass(frozen=True)
class BudgetSchedule:
    b0: float
    bT: float
    t_i: int
    t_f: int
    T: int
    mode: ScheduleMode = ScheduleMode.CANONICAL

    def __post_init__(self):
        if isinstance(self.mode, str):
            object.__setattr__(self, "mode", ScheduleMode(self.mode))
        if self.T < 1:
            raise ConfigError("T", f"total steps must be >= 1, got {self.T}")
        if not self.b0 >= self.bT >= 0:
            raise ConfigError("b0", f"need b0 >= bT >= 0, got b0={self.b0}, bT={self.bT}")
        if not 0 <= self.t_f <= self.T:
            raise ConfigError("t_f", f"need 0 <= t_f <= T, got {self.t_f}")
        if not 0 <= self.t_i <= self.T - self.t_f:
            raise ConfigError("t_i", f"need 0 <= t_i <= T - t_f, got t_i={self.t_i}")
        if self.mode is ScheduleMode.LITERAL and self.b0 > self.bT:
            if self.t_f <= self.t_i:
                raise ConfigError("t_f", "literal schedule needs t_f > t_i")
            reach = (self.T - self.t_f - self.t_i) / (self.t_f - self.t_i)
            if reach ** 3 > self.b0:
                raise ConfigError("schedule_mode",
                                  "literal schedule undershoots bT before T - t_f for these settings")

    @classmethod
    def with_defaults(cls, T: int, bT: float, b0: float | None = None,
                      t_i: int | None = None, t_f: int | None = None,
                      mode: ScheduleMode | str = ScheduleMode.CANONICAL) -> "BudgetSchedule":
        return cls(b0=1.5 * bT if b0 is None else b0, bT=bT,
                   t_i=math.ceil(0.15 * T) if t_i is None else t_i,
                   t_f=math.ceil(0.5 * T) if t_f is None else t_f,
                   T=T, mode=mode)

    @property
    def decay_end(self) -> int:
        return self.T - self.t_f


def budget_at(sched: BudgetSchedule, t: int) -> float:
    if not 0 <= t <= sched.T:
        raise ContractError(f"step {t} outside [0, {sched.T}]")
    b0, bT = sched.b0, sched.bT
    if t < sched.t_i:
        return b0
    if t > sched.decay_end:
        return bT
    if sched.mode is ScheduleMode.CANONICAL:
        span = sched.decay_end - sched.t_i
        if span == 0:
            return b0
        return bT + (b0 - bT) * (1.0 - (t - sched.t_i) / span) ** 3
    if b0 == bT:
        return b0
    return b0 - (b0 - bT) / b0 * ((t - sched.t_i) / (sched.t_f - sched.t_i)) ** 3


def allowed_total(sched: BudgetSchedule, t: int, num_layers: int) -> int:
    """Global cap on active components across ``num_layers`` adapted layers."""
    if num_layers < 1:
        raise ContractError("num_layers must be >= 1")
    # tolerate float noise just under an integer (e.g. 4.0 * 6 -> 23.999...)
    return int(math.floor(budget_at(sched, t) * num_layers + 1e-9))
