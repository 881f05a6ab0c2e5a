"""Linear decay schedules used for exploration and loss blending."""

from __future__ import annotations

from .errors import ConfigError


class LinearSchedule:
    """Linear ramp from start to end over duration steps, then flat.

    value(t) = max(end, start - ((start - end) / duration) * t)

    Requires start >= end (these schedules only decay).  duration == 0
    means the schedule sits at end from the first step.

    literal=True reproduces an alternative published form verbatim,
    min(end, 1 - ((start - end) / duration) * t), kept behind this flag
    for side-by-side comparison; with start >= end > 0 it collapses to
    the constant end, so it is never the default.
    """

    def __init__(self, start: float, end: float, duration: int, literal: bool = False):
        start = float(start)
        end = float(end)
        duration = int(duration)
        if duration < 0:
            raise ConfigError(f"schedule duration must be >= 0, got {duration}")
        if start < end:
            raise ConfigError(f"schedule must decay: start {start} < end {end}")
        self.start = start
        self.end = end
        self.duration = duration
        self.literal = literal

    def value(self, t: int) -> float:
        if t < 0:
            raise ConfigError(f"schedule queried at negative step {t}")
        # the t >= duration branch keeps the endpoint exact in floats
        if self.duration == 0 or t >= self.duration:
            return self.end
        slope = (self.start - self.end) / self.duration
        if self.literal:
            return min(self.end, 1.0 - slope * t)
        return max(self.end, self.start - slope * t)
