"""
Motion compensation and the safety monitor.

The predicted bone displacement is cut into short segments of equal duration. Each
segment is driven with a trapezoidal velocity profile that starts and ends at rest,
so consecutive segments join into a continuous offset that is superposed on the
feed motion.

The ramp rule sets the acceleration to ten times the peak velocity, a ramp of
`RAMP_TIME` seconds. Segments too short for two such ramps use a ramp of a tenth of
their duration instead (acceleration 10 v / duration).
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from spine_drill.logging import console, setup_logging
from spine_drill.motion_model import AXES, DisplacementSeries

ArrayLike = Union[float, np.ndarray]

SEGMENT_PERIOD = 0.125
RAMP_TIME = 0.1
"""Seconds to reach the peak velocity when the acceleration is 10 times the velocity"""


class InfeasibleProfileError(ValueError):
    pass


class EmptySeriesError(ValueError):
    pass


def ramp_time(duration: float) -> float:
    if not duration > 0:
        raise InfeasibleProfileError(f"A segment needs a positive duration, got {duration}")
    if 2 * RAMP_TIME < duration:
        return RAMP_TIME
    return duration / 10


def _profile(tau, duration: float, ramp: float, velocity, distance):
    """Velocity and displacement of trapezoids at local times `tau`; all arguments broadcast."""

    tau = np.clip(tau, 0.0, duration)
    remaining = duration - tau

    speed = np.where(
        tau < ramp,
        velocity * tau / ramp,
        np.where(remaining < ramp, velocity * remaining / ramp, velocity),
    )
    travelled = np.where(
        tau < ramp,
        velocity * tau**2 / (2 * ramp),
        np.where(
            remaining < ramp,
            distance - velocity * remaining**2 / (2 * ramp),
            velocity * (tau - ramp / 2),
        ),
    )
    return speed, travelled


def _as_output(value: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True)
class MotionSegment:
    t_start: float
    duration: float
    distance: float
    """mm"""
    peak_velocity: float
    """mm/s, signed like `distance`"""
    acceleration: float
    """mm/s², signed like `distance`"""

    @property
    def ramp_time(self) -> float:
        return ramp_time(self.duration)

    def velocity(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        speed, _ = self._evaluate(t)
        inside = (t >= self.t_start) & (t <= self.t_start + self.duration)
        return _as_output(np.where(inside, speed, 0.0), t)

    def displacement(self, t: ArrayLike) -> ArrayLike:
        """Distance covered since `t_start`: 0 before the segment, `distance` after it."""

        t = np.asarray(t, dtype=float)
        _, travelled = self._evaluate(t)
        return _as_output(travelled, t)

    def _evaluate(self, t: np.ndarray):
        return _profile(
            t - self.t_start, self.duration, self.ramp_time, self.peak_velocity, self.distance
        )


def trapezoid_profile(distance: float, duration: float = SEGMENT_PERIOD, t_start: float = 0.0) -> MotionSegment:
    if not math.isfinite(distance):
        raise InfeasibleProfileError(f"The segment distance must be finite, got {distance}")
    ramp = ramp_time(duration)
    velocity = distance / (duration - ramp)
    return MotionSegment(
        t_start=t_start,
        duration=duration,
        distance=distance,
        peak_velocity=velocity,
        acceleration=velocity / ramp,
    )


@dataclass(frozen=True)
class CompensationPlan:
    """Consecutive segments of one axis, starting from `start` mm at `segments[0].t_start`."""

    start: float
    segments: Tuple[MotionSegment, ...]

    def __post_init__(self):
        if len(self.segments) == 0:
            raise EmptySeriesError("A compensation plan needs at least one segment")
        durations = {segment.duration for segment in self.segments}
        if len(durations) != 1:
            raise ValueError(f"All segments must share one duration, got {sorted(durations)}")

    @property
    def t_start(self) -> float:
        return self.segments[0].t_start

    @property
    def period(self) -> float:
        return self.segments[0].duration

    @property
    def t_end(self) -> float:
        return self.t_start + self.period * len(self.segments)

    def _evaluate(self, t: np.ndarray):
        distances = np.array([segment.distance for segment in self.segments])
        velocities = np.array([segment.peak_velocity for segment in self.segments])
        reached = np.concatenate([[0.0], np.cumsum(distances)])

        index = np.clip(np.floor((t - self.t_start) / self.period).astype(int), 0, len(self.segments) - 1)
        tau = t - (self.t_start + index * self.period)
        speed, travelled = _profile(
            tau, self.period, ramp_time(self.period), velocities[index], distances[index]
        )
        inside = (t >= self.t_start) & (t <= self.t_end)
        return np.where(inside, speed, 0.0), self.start + reached[index] + travelled

    def offset(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        return _as_output(self._evaluate(t)[1], t)

    def velocity(self, t: ArrayLike) -> ArrayLike:
        t = np.asarray(t, dtype=float)
        return _as_output(self._evaluate(t)[0], t)


def segment_axis(t: Sequence[float], displacement: Sequence[float], period: float = SEGMENT_PERIOD) -> CompensationPlan:
    """
    Segments following one displacement channel from its first timestamp. Each segment
    covers the change of the linearly interpolated displacement over one period.
    """

    t = np.asarray(t, dtype=float)
    displacement = np.asarray(displacement, dtype=float)
    if t.shape != displacement.shape or t.ndim != 1:
        raise ValueError(f"Timestamps and displacement differ in shape: {t.shape} and {displacement.shape}")
    ramp_time(period)
    if len(t) < 2 or t[-1] - t[0] < period:
        raise EmptySeriesError(f"The series must span at least one period of {period} s")
    if np.any(np.diff(t) <= 0):
        raise ValueError("Timestamps must be strictly increasing")
    if np.max(np.diff(t)) > period * (1 + 1e-9):
        raise ValueError(f"The series must be sampled at least every {period} s")

    count = int(np.floor((t[-1] - t[0]) / period * (1 + 1e-12)))
    boundaries = t[0] + period * np.arange(count + 1)
    values = np.interp(boundaries, t, displacement)
    segments = tuple(
        trapezoid_profile(float(distance), period, float(start))
        for start, distance in zip(boundaries[:-1], np.diff(values))
    )
    return CompensationPlan(start=float(values[0]), segments=segments)


def segment_displacement(series: DisplacementSeries, period: float = SEGMENT_PERIOD) -> Dict[str, CompensationPlan]:
    return {axis: segment_axis(series.t, series.axis(axis), period) for axis in AXES}


@dataclass(frozen=True)
class MonitorConfig:
    h1: float = 1.2
    """Largest tolerated bone position deviation, in mm"""
    h2: float = 10.0
    """Largest tolerated thrust force, in N"""

    def __post_init__(self):
        if not (self.h1 > 0 and self.h2 > 0):
            raise ValueError(f"Monitor thresholds must be positive, got h1={self.h1} h2={self.h2}")


class AbortReason(Enum):
    POSITION_DEVIATION = "position-deviation"
    FORCE_LIMIT = "force-limit"


def monitor(position_error: float, force: float, cfg: MonitorConfig = MonitorConfig()) -> Optional[AbortReason]:
    """None while drilling may go on, otherwise why it must stop and retreat."""

    if abs(position_error) > cfg.h1:
        return AbortReason.POSITION_DEVIATION
    if abs(force) > cfg.h2:
        return AbortReason.FORCE_LIMIT
    return None


if __name__ == "__main__":
    setup_logging()

    t = np.arange(0, 5, 1 / 64)
    predicted = 2 * np.sin(2 * np.pi * 0.2 * t)
    plan = segment_axis(t, predicted)
    console.print(plan.segments[:3])
    console.print(f"Largest offset error: {np.abs(plan.offset(t) - predicted).max():.4f} mm")
