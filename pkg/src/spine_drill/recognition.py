"""
Drilling state recognition from the thrust force.

The force is smoothed with a moving average, normalised against the outer cortical
layer (whose peak and end are found by the calibration), shaped by a cubic feature
with a gain on its high part, and fed to a key-point state machine:

    Calibrating -> OuterBreakthrough -> Cancellous -> InnerRising -> StopIssued
                                                                  \\-> Failed

The threshold mapping (C1 leaving the outer layer, C2 reaching the inner layer, C3
gating the stop) is a reconstruction of the key-point diagram from the drilling
narrative. D is frozen at calibration.
"""

from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from spine_drill.logging import console, log, setup_logging


class Phase(Enum):
    CALIBRATING = "calibrating"
    OUTER_BREAKTHROUGH = "outer-breakthrough"
    CANCELLOUS = "cancellous"
    INNER_RISING = "inner-rising"
    STOP_ISSUED = "stop-issued"
    FAILED = "failed"

    @property
    def terminal(self) -> bool:
        return self in (Phase.STOP_ISSUED, Phase.FAILED)


class Decision(Enum):
    CONTINUE = "continue"
    STOP = "stop"
    FAIL = "fail"


class CalibrationTimeoutError(RuntimeError):
    def __init__(self, message: str, samples: int, f_max: float):
        RuntimeError.__init__(self, message)

        self.samples = samples
        self.f_max = f_max


@dataclass(frozen=True)
class RecognizerConfig:
    window: int = 10
    """n, samples in the moving average"""
    gain: float = 1.2
    gain_threshold: float = 0.5
    c1: float = 0.4
    c2: float = 0.7
    c3: float = 0.7
    drop_ratio: float = 0.5
    """K"""
    min_calibration_force: float = 1.0
    """F_th, in N"""
    confirmation_count: int = 3
    block_size: int = 50
    """Raw force samples averaged into one recognizer sample"""
    calibration_budget: int = 400

    def __post_init__(self):
        if self.window < 1:
            raise ValueError(f"window must be at least 1, got {self.window}")
        if not self.gain > 1:
            raise ValueError(f"gain must exceed 1, got {self.gain}")
        for name in ("gain_threshold", "c1", "c2", "c3", "drop_ratio"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if not self.min_calibration_force > 0:
            raise ValueError(
                f"min_calibration_force must be positive, got {self.min_calibration_force}"
            )
        for name in ("confirmation_count", "block_size", "calibration_budget"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")


@dataclass(frozen=True)
class Calibration:
    k: int
    """0-based index of the sample where the drop was first seen"""
    d: float
    f_max: float
    f_min: float


@dataclass(frozen=True)
class RecognizerState:
    phase: Phase = Phase.CALIBRATING
    key_point: int = 1
    peak: float = 0.0
    """Highest a* seen while rising in the inner layer"""
    confirmations: int = 0
    history: Tuple[float, ...] = ()
    reason: Optional[str] = None


@dataclass(frozen=True)
class DecisionRecord:
    index: int
    f_bar: float
    a_star: float
    phase: Phase
    decision: Decision


def moving_average(forces: Sequence[float], n: int) -> np.ndarray:
    """Mean of the last `n` samples; the first n - 1 outputs average what is available."""

    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    forces = np.asarray(forces, dtype=float)
    if len(forces) == 0:
        return forces
    sums = np.convolve(forces, np.ones(n))[: len(forces)]
    counts = np.minimum(np.arange(1, len(forces) + 1), n)
    return sums / counts


def block_average(raw: np.ndarray, block_size: int) -> np.ndarray:
    """Means of consecutive complete blocks of `block_size` raw samples."""

    raw = np.asarray(raw, dtype=float)
    blocks = len(raw) // block_size
    return raw[: blocks * block_size].reshape(blocks, block_size).mean(axis=1)


class CalibrationTracker:
    """Incremental form of the calibration scan, shared by the offline and streaming paths."""

    def __init__(self, cfg: RecognizerConfig):
        self.cfg = cfg
        self.f_max = 0.0
        self.f_min = np.inf
        self.samples = 0

    def update(self, f_bar: float) -> Optional[Calibration]:
        index = self.samples
        self.samples += 1
        self.f_max = max(self.f_max, f_bar)
        self.f_min = min(self.f_min, f_bar)

        if f_bar < self.cfg.drop_ratio * self.f_max and self.f_max > self.cfg.min_calibration_force:
            return Calibration(k=index, d=self.f_max - self.f_min, f_max=self.f_max, f_min=self.f_min)

        if self.samples >= self.cfg.calibration_budget:
            raise CalibrationTimeoutError(
                f"No force drop after {self.samples} samples (peak {self.f_max:.3f} N)",
                self.samples,
                self.f_max,
            )
        return None


def calibrate(f_bar: Iterable[float], cfg: RecognizerConfig = RecognizerConfig()) -> Calibration:
    tracker = CalibrationTracker(cfg)
    for value in f_bar:
        calibration = tracker.update(float(value))
        if calibration is not None:
            return calibration
    raise CalibrationTimeoutError(
        f"The stream ended after {tracker.samples} samples without a force drop",
        tracker.samples,
        tracker.f_max,
    )


def feature(f_bar, cal: Calibration):
    normalised = (np.asarray(f_bar, dtype=float) - cal.f_min) / cal.d
    value = cal.d * np.clip(normalised, 0.0, 1.0) ** 3
    return float(value) if np.ndim(f_bar) == 0 else value


def modified_feature(a, cal: Calibration, cfg: RecognizerConfig = RecognizerConfig()):
    """Amplifies the part of `a` above the gain threshold, compared on the unit scale a / D."""

    a = np.asarray(a, dtype=float)
    value = np.where(a / cal.d > cfg.gain_threshold, cfg.gain * a, a)
    return float(value) if value.ndim == 0 else value


def step(
    state: RecognizerState, a_star: float, cfg: RecognizerConfig = RecognizerConfig()
) -> Tuple[RecognizerState, Decision]:
    """Advance the key-point machine by one normalised feature sample a* = A*/D."""

    if state.phase == Phase.STOP_ISSUED:
        return state, Decision.STOP
    if state.phase == Phase.FAILED:
        return state, Decision.FAIL
    if state.phase == Phase.CALIBRATING:
        raise ValueError("The recognizer must be calibrated before stepping")

    state = replace(state, history=state.history + (a_star,))

    if state.phase == Phase.OUTER_BREAKTHROUGH:
        if a_star < cfg.c1:
            state = replace(state, phase=Phase.CANCELLOUS, key_point=3)
        return state, Decision.CONTINUE

    if state.phase == Phase.CANCELLOUS:
        if a_star < cfg.c2:
            return state, Decision.CONTINUE
        state = replace(state, phase=Phase.INNER_RISING, key_point=4, peak=a_star, confirmations=0)
    else:
        state = replace(state, peak=max(state.peak, a_star))

    if a_star >= cfg.c3:
        state = replace(state, confirmations=state.confirmations + 1)
        if state.confirmations >= cfg.confirmation_count:
            return replace(state, phase=Phase.STOP_ISSUED), Decision.STOP
        return state, Decision.CONTINUE

    if a_star < cfg.drop_ratio * state.peak:
        return fail(replace(state, key_point=5), "inner layer broke through before the stop was confirmed")
    return replace(state, confirmations=0), Decision.CONTINUE


def fail(state: RecognizerState, reason: str) -> Tuple[RecognizerState, Decision]:
    if state.phase == Phase.STOP_ISSUED:
        return state, Decision.STOP
    return replace(state, phase=Phase.FAILED, reason=reason), Decision.FAIL


class Recognizer:
    """
    Streaming recognizer owned by a single producer. Every `push` takes one recognizer
    sample (a block-averaged force) and returns the decision for it.
    """

    def __init__(self, cfg: RecognizerConfig = RecognizerConfig()):
        self.cfg = cfg
        self.state = RecognizerState()
        self.calibration: Optional[Calibration] = None

        self._window = deque(maxlen=cfg.window)
        self._tracker = CalibrationTracker(cfg)
        self._index = -1

    def push(self, force: float) -> DecisionRecord:
        self._index += 1
        self._window.append(force)
        f_bar = sum(self._window) / len(self._window)

        if self.state.phase.terminal:
            a_star = self._a_star(f_bar)
            decision = Decision.STOP if self.state.phase == Phase.STOP_ISSUED else Decision.FAIL
            return DecisionRecord(self._index, f_bar, a_star, self.state.phase, decision)

        if self.calibration is None:
            self.calibration = self._tracker.update(f_bar)
            if self.calibration is None:
                return DecisionRecord(self._index, f_bar, np.nan, self.state.phase, Decision.CONTINUE)

            log.debug(
                f"Calibrated at sample {self.calibration.k}: D={self.calibration.d:.3f} N "
                f"F_max={self.calibration.f_max:.3f} N"
            )
            self.state = replace(self.state, phase=Phase.OUTER_BREAKTHROUGH, key_point=2)

        a_star = self._a_star(f_bar)
        self.state, decision = step(self.state, a_star, self.cfg)
        return DecisionRecord(self._index, f_bar, a_star, self.state.phase, decision)

    def abort(self, reason: str) -> Decision:
        self.state, decision = fail(self.state, reason)
        return decision

    def _a_star(self, f_bar: float) -> float:
        if self.calibration is None:
            return np.nan
        a = feature(f_bar, self.calibration)
        return modified_feature(a, self.calibration, self.cfg) / self.calibration.d


def replay(forces: Sequence[float], cfg: RecognizerConfig = RecognizerConfig(), block_size: int = 1) -> pd.DataFrame:
    """
    Run the recognizer over a recorded force stream until its first terminal decision.
    Returns the decision log with columns index, f_bar, a_star, phase, decision.
    """

    forces = np.asarray(forces, dtype=float)
    if block_size > 1:
        forces = block_average(forces, block_size)

    recognizer = Recognizer(cfg)
    records: List[DecisionRecord] = []
    try:
        for force in forces:
            record = recognizer.push(float(force))
            records.append(record)
            if record.decision != Decision.CONTINUE:
                break
    except CalibrationTimeoutError as e:
        log.warning(f"Replay ended without calibration: {e}")

    return pd.DataFrame(
        {
            "index": [r.index for r in records],
            "f_bar": [r.f_bar for r in records],
            "a_star": [r.a_star for r in records],
            "phase": [r.phase.value for r in records],
            "decision": [r.decision.value for r in records],
        }
    )


if __name__ == "__main__":
    setup_logging()

    stream = np.concatenate([np.full(5, 0.05), np.full(48, 3.5), np.full(120, 0.75), np.full(30, 3.5)])
    console.print(replay(stream).tail(5))
