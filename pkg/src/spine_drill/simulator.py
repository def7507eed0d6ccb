"""
Closed-loop drilling trials on a synthetic layered bone.

The bone moves along the drilling (AP) axis with the breathing model while the drill
feeds at a constant rate, optionally superposed with the segmented compensation.
The cut front is the deepest point the drill tip has reached relative to the bone.
Its advance per tick drives the force plant, and spindle vibration above the reference
speed is added on top. Block means of the force feed the recognizer, and the monitor
checks every tick.

Positive bone displacement points along the feed, away from the drill.
"""

import functools
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from spine_drill.compensation import MonitorConfig, SEGMENT_PERIOD, monitor, segment_axis
from spine_drill.logging import console, log, progress, setup_logging
from spine_drill.motion_model import AxisCoefficients
from spine_drill.recognition import (
    CalibrationTimeoutError,
    Decision,
    Recognizer,
    RecognizerConfig,
    block_average,
    moving_average,
)
from spine_drill.respiration import FlowCoefficients, VentilatorConfig, solve_flow_coefficients, tidal_volume

ArrayLike = Union[float, np.ndarray]

REFERENCE_RPM = 12000.0
MAX_RESIDUAL = 2.0
"""Thickest inner cortical residue, in mm, that still counts as a successful stop"""
SPINDLE_SPEEDS = (12000, 16000, 20000)


class TrialMode(Enum):
    STATIONARY = "stationary"
    UNCOMPENSATED = "uncompensated"
    COMPENSATED = "compensated"

    @property
    def moving(self) -> bool:
        return self != TrialMode.STATIONARY


class Ending(Enum):
    STOP = "stop"
    POSITION_DEVIATION = "position-deviation"
    FORCE_LIMIT = "force-limit"
    RECOGNIZER_FAILED = "recognizer-failed"
    CALIBRATION_TIMEOUT = "calibration-timeout"
    BREAKTHROUGH = "breakthrough"
    HORIZON = "horizon"


@dataclass(frozen=True)
class BoneModel:
    outer_thickness: float = 3.0
    cancellous_thickness: float = 15.0
    inner_thickness: float = 2.11
    cortical_hardness: float = 7.0
    """Mean force per mm/s of cutting rate at the reference spindle speed, in N·s/mm"""
    cancellous_hardness: float = 1.5
    cortical_fluctuation: float = 0.05
    """Relative standard deviation of the cutting force"""
    cancellous_fluctuation: float = 0.25
    noise_floor: float = 0.05
    """Standard deviation of the sensor noise, in N"""
    spindle_vibration: float = 6.0
    """Standard deviation of the spindle vibration, in N, per unit of relative speed above the reference"""
    vibration_time_constant: float = 0.1
    """Correlation time of the spindle vibration, in s"""

    def __post_init__(self):
        for name in ("outer_thickness", "cancellous_thickness", "inner_thickness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.cortical_hardness > self.cancellous_hardness > 0:
            raise ValueError(
                f"Cortical bone must be harder than cancellous bone, got "
                f"{self.cortical_hardness} and {self.cancellous_hardness}"
            )
        for name in ("cortical_fluctuation", "cancellous_fluctuation", "noise_floor", "spindle_vibration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must not be negative, got {getattr(self, name)}")
        if not self.vibration_time_constant > 0:
            raise ValueError(f"vibration_time_constant must be positive, got {self.vibration_time_constant}")

    @property
    def inner_start(self) -> float:
        return self.outer_thickness + self.cancellous_thickness

    @property
    def total_thickness(self) -> float:
        return self.inner_start + self.inner_thickness

    def _by_layer(self, depth: np.ndarray, cortical: float, cancellous: float) -> np.ndarray:
        return np.select(
            [depth < 0, depth < self.outer_thickness, depth < self.inner_start, depth < self.total_thickness],
            [0.0, cortical, cancellous, cortical],
            0.0,
        )

    def hardness(self, depth: ArrayLike) -> np.ndarray:
        return self._by_layer(np.asarray(depth, dtype=float), self.cortical_hardness, self.cancellous_hardness)

    def fluctuation(self, depth: ArrayLike) -> np.ndarray:
        return self._by_layer(
            np.asarray(depth, dtype=float), self.cortical_fluctuation, self.cancellous_fluctuation
        )


def speed_factor(spindle_rpm: float) -> float:
    return REFERENCE_RPM / spindle_rpm


def force_plant(
    relative_feed: ArrayLike, depth: ArrayLike, bone: BoneModel, spindle_rpm: float, rng: np.random.Generator
) -> ArrayLike:
    """
    Thrust force, in N, for cutting at `relative_feed` mm/s with the cut front `depth` mm
    into the bone. The cutting noise scales with the mean force at the reference speed,
    so a faster spindle lowers the force but not its noise.
    """

    feed = np.maximum(np.asarray(relative_feed, dtype=float), 0.0)
    depth = np.asarray(depth, dtype=float)
    feed, depth = np.broadcast_arrays(feed, depth)

    cutting = bone.hardness(depth) * feed
    noise = rng.standard_normal((2,) + feed.shape)
    force = (
        cutting * speed_factor(spindle_rpm)
        + bone.fluctuation(depth) * cutting * noise[0]
        + bone.noise_floor * noise[1]
    )
    return float(force) if force.ndim == 0 else force


def spindle_vibration(
    n: int, tick: float, spindle_rpm: float, bone: BoneModel, rng: np.random.Generator
) -> np.ndarray:
    """
    Spindle vibration force, in N, over `n` ticks: a first-order low-pass process with
    correlation time `bone.vibration_time_constant`. It is silent up to the reference
    speed and its standard deviation grows linearly with the speed above it.
    """

    rho = math.exp(-tick / bone.vibration_time_constant)
    start, white = rng.standard_normal(), rng.standard_normal(n)
    unit, _ = lfilter([math.sqrt(1 - rho**2)], [1.0, -rho], white, zi=[rho * start])
    overspeed = max(spindle_rpm / REFERENCE_RPM - 1.0, 0.0)
    return bone.spindle_vibration * overspeed * unit


@dataclass(frozen=True)
class TrialConfig:
    mode: TrialMode = TrialMode.STATIONARY
    feed_rate: float = 0.5
    """mm/s"""
    spindle_rpm: float = 12000
    tick: float = 0.0025
    """Plant and monitor step, in s"""
    approach_gap: float = 0.25
    """Distance between the drill tip and the bone surface at the start, in mm"""
    segment_period: float = SEGMENT_PERIOD
    ventilator: VentilatorConfig = VentilatorConfig()
    displacement: AxisCoefficients = AxisCoefficients(0.008, 0.0)
    """AP displacement of the bone per ml of tidal volume"""
    prediction: Optional[AxisCoefficients] = None
    """Model used for compensation and the position check. Exact when None."""
    bone: BoneModel = BoneModel()
    recognizer: RecognizerConfig = RecognizerConfig()
    monitor: MonitorConfig = MonitorConfig()
    seed: int = 0
    recognize: bool = True
    injected_deviation_mm: float = 0.0
    injected_force_n: float = 0.0
    injection_time_s: float = math.inf

    def __post_init__(self):
        if not isinstance(self.mode, TrialMode):
            raise ValueError(f"mode must be a TrialMode, got {self.mode!r}")
        if not self.feed_rate > 0:
            raise ValueError(f"feed_rate must be positive, got {self.feed_rate}")
        if not self.spindle_rpm > 0:
            raise ValueError(f"spindle_rpm must be positive, got {self.spindle_rpm}")
        if not 0 < self.tick <= 0.0125:
            raise ValueError(f"tick must lie in (0, 0.0125] s, got {self.tick}")
        if self.approach_gap < 0:
            raise ValueError(f"approach_gap must not be negative, got {self.approach_gap}")

    @property
    def predictor(self) -> AxisCoefficients:
        return self.displacement if self.prediction is None else self.prediction

    @property
    def sample_period(self) -> float:
        return self.recognizer.block_size * self.tick

    @property
    def horizon(self) -> float:
        travel = self.approach_gap + self.bone.total_thickness
        return travel / self.feed_rate + 2 * self.ventilator.period + 5.0


@dataclass(frozen=True)
class Kinematics:
    t: np.ndarray
    bone: np.ndarray
    """AP bone displacement, in mm"""
    predicted: np.ndarray
    tool: np.ndarray
    """Drill tip position along the feed, in mm"""

    @property
    def relative_feed(self) -> np.ndarray:
        return np.diff(self.tool - self.bone) / np.diff(self.t)


@functools.lru_cache(maxsize=None)
def _flow_coefficients(ventilator: VentilatorConfig) -> FlowCoefficients:
    return solve_flow_coefficients(ventilator)


def plan_motion(cfg: TrialConfig, phase: float = 0.0) -> Kinematics:
    """Bone and drill trajectories over the trial horizon, `phase` seconds into a breath."""

    block = cfg.recognizer.block_size
    ticks = int(math.ceil(cfg.horizon / cfg.tick / block)) * block
    t = np.arange(ticks) * cfg.tick
    tool = cfg.feed_rate * t

    if not cfg.mode.moving:
        still = np.zeros(ticks)
        return Kinematics(t, still, still, tool)

    tv = np.asarray(tidal_volume(t + phase, _flow_coefficients(cfg.ventilator)))
    bone = np.asarray(cfg.displacement.predict(tv), dtype=float)
    predicted = np.asarray(cfg.predictor.predict(tv), dtype=float)
    if cfg.mode == TrialMode.COMPENSATED:
        tool = tool + segment_axis(t, predicted, cfg.segment_period).offset(t)
    return Kinematics(t, bone, predicted, tool)


def cut_front(motion: Kinematics, approach_gap: float, tick: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Depth of the cut front, in mm, and its advance per tick, in mm/s. The front never
    retreats, so a drill moving back into the hole it already cut removes no bone.
    """

    cut = np.maximum.accumulate(motion.tool - motion.bone - approach_gap)
    rate = np.diff(cut, prepend=cut[0]) / tick
    return cut, rate


TRACE_COLUMNS = ["t_s", "force_n", "f_bar_n", "a_star", "bone_mm", "tool_mm", "depth_mm", "phase"]


@dataclass(frozen=True)
class TrialResult:
    mode: TrialMode
    seed: int
    spindle_rpm: float
    stop_depth: float
    """Cut front at the end of the trial, in mm below the bone surface"""
    residual_thickness: float
    success: bool
    f_out: float
    """Peak mean force while cutting the outer cortical layer, 0 if never reached"""
    f_in: float
    ending: Ending
    breathing_phase: float
    end_time: float
    trace: pd.DataFrame = field(compare=False, repr=False)
    """One row per recognizer sample, columns as in `TRACE_COLUMNS`"""

    @property
    def abort_reason(self) -> Optional[str]:
        return None if self.ending == Ending.STOP else self.ending.value


def _peak_force(trace: pd.DataFrame, low: float, high: float) -> float:
    inside = (trace["depth_mm"] >= low) & (trace["depth_mm"] < high)
    return float(trace.loc[inside, "f_bar_n"].max()) if inside.any() else 0.0


def run_trial(cfg: TrialConfig) -> TrialResult:
    rng = np.random.default_rng(cfg.seed)
    phase = float(rng.uniform(0, cfg.ventilator.period)) if cfg.mode.moving else 0.0
    motion = plan_motion(cfg, phase)
    bone = cfg.bone

    cut, rate = cut_front(motion, cfg.approach_gap, cfg.tick)
    force = force_plant(rate, cut, bone, cfg.spindle_rpm, rng)
    force = force + spindle_vibration(len(force), cfg.tick, cfg.spindle_rpm, bone, rng)

    block = cfg.recognizer.block_size
    block_means = block_average(force, block)
    f_bar = moving_average(block_means, cfg.recognizer.window)

    # The monitor sees the mean force of the latest recognizer sample.
    injected = motion.t >= cfg.injection_time_s
    latest = np.concatenate([[0.0], f_bar])
    checked_force = latest[np.arange(len(force)) // block] + np.where(injected, cfg.injected_force_n, 0.0)
    deviation = np.abs(motion.predicted - motion.bone) + np.where(injected, cfg.injected_deviation_mm, 0.0)
    alarm = (np.abs(deviation) > cfg.monitor.h1) | (np.abs(checked_force) > cfg.monitor.h2)
    through = cut >= bone.total_thickness

    recognizer = Recognizer(cfg.recognizer)
    rows = []
    ending = Ending.HORIZON
    end_tick = len(force) - 1
    for k in range(len(block_means)):
        ticks = slice(k * block, (k + 1) * block)
        events = np.flatnonzero(alarm[ticks] | through[ticks])
        if len(events) != 0:
            end_tick = k * block + int(events[0])
            reason = monitor(deviation[end_tick], checked_force[end_tick], cfg.monitor)
            ending = Ending(reason.value) if reason is not None else Ending.BREAKTHROUGH
            recognizer.abort(ending.value)
            rows.append(
                [
                    (end_tick + 1) * cfg.tick,
                    float(force[k * block : end_tick + 1].mean()),
                    latest[k],
                    np.nan,
                    motion.bone[end_tick],
                    motion.tool[end_tick],
                    cut[end_tick],
                    recognizer.state.phase.value,
                ]
            )
            break

        last = (k + 1) * block - 1
        a_star = np.nan
        decision = Decision.CONTINUE
        if cfg.recognize:
            try:
                record = recognizer.push(float(block_means[k]))
                a_star, decision = record.a_star, record.decision
            except CalibrationTimeoutError as e:
                log.debug(f"Seed {cfg.seed}: {e}")
                decision = None

        rows.append(
            [
                (last + 1) * cfg.tick,
                block_means[k],
                f_bar[k],
                a_star,
                motion.bone[last],
                motion.tool[last],
                cut[last],
                recognizer.state.phase.value,
            ]
        )
        if decision != Decision.CONTINUE:
            end_tick = last
            ending = {
                None: Ending.CALIBRATION_TIMEOUT,
                Decision.STOP: Ending.STOP,
                Decision.FAIL: Ending.RECOGNIZER_FAILED,
            }[decision]
            break

    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    stop_depth = max(float(cut[end_tick]), 0.0)
    residual = bone.total_thickness - stop_depth
    result = TrialResult(
        mode=cfg.mode,
        seed=cfg.seed,
        spindle_rpm=cfg.spindle_rpm,
        stop_depth=stop_depth,
        residual_thickness=residual,
        success=bool(0 < residual <= MAX_RESIDUAL),
        f_out=_peak_force(trace, 0.0, bone.outer_thickness),
        f_in=_peak_force(trace, bone.inner_start, bone.total_thickness),
        ending=ending,
        breathing_phase=phase,
        end_time=float(motion.t[end_tick]),
        trace=trace,
    )
    log.debug(
        f"Trial {cfg.mode.value} seed {cfg.seed}: {ending.value} at {result.end_time:.3f} s, "
        f"residual {residual:.3f} mm"
    )
    return result


SUMMARY_COLUMNS = [
    "index",
    "seed",
    "mode",
    "spindle_rpm",
    "success",
    "stop_depth_mm",
    "residual_mm",
    "f_out_n",
    "f_in_n",
    "abort_reason",
]


@dataclass(frozen=True)
class BatchSummary:
    results: Tuple[TrialResult, ...]

    @property
    def success_rate(self) -> float:
        return float(np.mean([result.success for result in self.results]))

    @property
    def f_out(self) -> np.ndarray:
        return np.array([result.f_out for result in self.results])

    @property
    def f_in(self) -> np.ndarray:
        return np.array([result.f_in for result in self.results])

    @property
    def residual_median(self) -> float:
        """Median residual thickness of the successful trials, NaN without any."""

        residuals = [result.residual_thickness for result in self.results if result.success]
        return float(np.median(residuals)) if len(residuals) != 0 else math.nan

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [
                [
                    index,
                    result.seed,
                    result.mode.value,
                    result.spindle_rpm,
                    result.success,
                    result.stop_depth,
                    result.residual_thickness,
                    result.f_out,
                    result.f_in,
                    result.abort_reason if result.abort_reason is not None else "",
                ]
                for index, result in enumerate(self.results)
            ],
            columns=SUMMARY_COLUMNS,
        )


def _run_batch(n: int, cfg: TrialConfig) -> BatchSummary:
    if n < 1:
        raise ValueError(f"A batch needs at least one trial, got {n}")

    task = progress.add_task(
        f"[purple]Drilling {cfg.mode.value} at {cfg.spindle_rpm:g} rpm...", total=n
    )
    results = []
    for i in range(n):
        results.append(run_trial(replace(cfg, seed=cfg.seed + i)))
        progress.update(task, advance=1)
    progress.update(task, visible=False)

    summary = BatchSummary(tuple(results))
    log.info(
        f"{cfg.mode.value} at {cfg.spindle_rpm:g} rpm: {summary.success_rate:.0%} of {n} trials "
        f"succeeded, median residual {summary.residual_median:.3f} mm"
    )
    return summary


def run_batch(n: int, cfg: TrialConfig = TrialConfig()) -> BatchSummary:
    """`n` trials seeded `cfg.seed`, `cfg.seed + 1`, ..., in seed order."""

    with progress:
        return _run_batch(n, cfg)


def run_spindle_sweep(
    rpms: Sequence[float] = SPINDLE_SPEEDS,
    modes: Sequence[TrialMode] = (TrialMode.UNCOMPENSATED, TrialMode.COMPENSATED),
    n: int = 100,
    cfg: TrialConfig = TrialConfig(),
) -> pd.DataFrame:
    rows = []
    with progress:
        sweep_task = progress.add_task("[green]Sweeping spindle speeds...", total=len(rpms) * len(modes))
        for mode in modes:
            for rpm in rpms:
                summary = _run_batch(n, replace(cfg, mode=mode, spindle_rpm=rpm))
                rows.append(
                    [
                        mode.value,
                        rpm,
                        summary.success_rate,
                        float(np.median(summary.f_out)),
                        float(np.median(summary.f_in)),
                        summary.residual_median,
                    ]
                )
                progress.update(sweep_task, advance=1)
        progress.update(sweep_task, visible=False)

    return pd.DataFrame(
        rows,
        columns=["mode", "spindle_rpm", "success_rate", "f_out_median", "f_in_median", "residual_median"],
    )


if __name__ == "__main__":
    setup_logging()

    for mode in TrialMode:
        run_batch(20, TrialConfig(mode=mode))
    console.print(run_spindle_sweep(n=20))
