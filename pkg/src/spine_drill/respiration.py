"""
Ventilator flow and tidal volume.

The ventilator runs in volume control with a square inhale and an exponentially
decaying exhale. The inhale flow `a` is fixed by the tidal volume, and the exhale
decay base `b` and offset `c` are solved so that the flow returns to zero at the
end of the period and the net volume over a period is zero.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from scipy.optimize import root

from spine_drill.logging import console, log, setup_logging

ArrayLike = Union[float, np.ndarray]

PRINTED_B = 0.4602
PRINTED_C = 0.0753
PRINTED_EXHALE_FACTOR = 1.5
"""The exhale amplitude multiplier of `a` used when coefficients carry no solved amplitude."""


class WaveformKind(Enum):
    SQUARE = "square"
    ACCELERATING_RAMP = "accelerating-ramp"
    DECELERATING_RAMP = "decelerating-ramp"
    SINE = "sine"
    EXPONENTIAL_RISE = "exponential-rise"
    EXPONENTIAL_DECAY = "exponential-decay"


SOLVABLE_WAVEFORMS = {(WaveformKind.SQUARE, WaveformKind.EXPONENTIAL_DECAY)}


class VentilatorConfigError(ValueError):
    pass


class UnsupportedWaveformError(ValueError):
    pass


class SolverError(RuntimeError):
    def __init__(self, message: str, residuals: Tuple[float, ...], iterations: int):
        RuntimeError.__init__(self, message)

        self.residuals = residuals
        self.iterations = iterations


@dataclass(frozen=True)
class VentilatorConfig:
    tv_max: float = 500.0
    """Ideal maximum tidal volume, in ml"""
    resp_freq: float = 12.0
    """Breaths per minute"""
    ratio_in: float = 1.0
    ratio_out: float = 2.0
    exhale_peak_factor: float = 1.5
    """Peak exhale speed over inhale speed"""
    inhale_waveform: WaveformKind = WaveformKind.SQUARE
    exhale_waveform: WaveformKind = WaveformKind.EXPONENTIAL_DECAY

    def __post_init__(self):
        if not self.tv_max > 0:
            raise VentilatorConfigError(f"tv_max must be positive, got {self.tv_max}")
        if not self.resp_freq > 0:
            raise VentilatorConfigError(
                f"resp_freq must be positive, got {self.resp_freq}"
            )
        if not (self.ratio_in > 0 and self.ratio_out > 0):
            raise VentilatorConfigError(
                f"Both parts of the inhale:exhale ratio must be positive, got {self.ratio_in}:{self.ratio_out}"
            )
        if not self.exhale_peak_factor > 1:
            raise VentilatorConfigError(
                f"exhale_peak_factor must exceed 1, got {self.exhale_peak_factor}"
            )

    @property
    def period(self) -> float:
        return 60.0 / self.resp_freq

    @property
    def t_inhale(self) -> float:
        return self.period * self.ratio_in / (self.ratio_in + self.ratio_out)

    @property
    def t_exhale(self) -> float:
        return self.period - self.t_inhale


@dataclass(frozen=True)
class FlowCoefficients:
    a: float
    """Inhale flow, in ml/s"""
    b: float
    """Exhale decay base, per second"""
    c: float
    """Exhale flow offset, in ml/s"""
    t_inhale: float
    period: float
    exhale_amplitude: Optional[float] = field(default=None)
    """Magnitude multiplying the decay term. Defaults to 1.5a, as printed."""

    def __post_init__(self):
        if not self.a > 0:
            raise VentilatorConfigError(f"a must be positive, got {self.a}")
        if not 0 < self.b < 1:
            raise VentilatorConfigError(f"b must lie in (0, 1), got {self.b}")
        if not 0 < self.t_inhale < self.period:
            raise VentilatorConfigError(
                f"t_inhale must lie inside the period, got {self.t_inhale} of {self.period}"
            )

    @property
    def amplitude(self) -> float:
        if self.exhale_amplitude is None:
            return PRINTED_EXHALE_FACTOR * self.a
        return self.exhale_amplitude

    @property
    def t_exhale(self) -> float:
        return self.period - self.t_inhale


@dataclass(frozen=True)
class TidalVolumeSeries:
    timestamps: np.ndarray
    values: np.ndarray


@dataclass(frozen=True)
class SolverReport:
    residuals: Tuple[float, float]
    iterations: int
    printed_b: float
    printed_c: float
    relative_difference_b: float
    relative_difference_c: float
    printed_residuals: Tuple[float, float]


def _decay_integral(log_b: float, duration: float) -> float:
    """Integral of b**s for s in [0, duration], with log_b = ln(b)."""

    if abs(log_b) < 1e-12:
        return duration
    return math.expm1(log_b * duration) / log_b


def _residuals(a: float, amplitude: float, log_b: float, c: float, t_inhale: float, t_exhale: float):
    boundary_flow = -amplitude * math.exp(log_b * t_exhale) + c
    net_volume = a * t_inhale - amplitude * _decay_integral(log_b, t_exhale) + c * t_exhale
    return np.array([boundary_flow, net_volume])


def flow_residuals(coeffs: FlowCoefficients) -> Tuple[float, float]:
    """
    The two exhale constraints evaluated at `coeffs`: the flow just before the end
    of the period, and the net volume over one period.
    """

    residuals = _residuals(
        coeffs.a,
        coeffs.amplitude,
        math.log(coeffs.b),
        coeffs.c,
        coeffs.t_inhale,
        coeffs.t_exhale,
    )
    return float(residuals[0]), float(residuals[1])


def solve_ventilator(
    cfg: VentilatorConfig, tol: float = 1e-8, max_iterations: int = 200
) -> Tuple[FlowCoefficients, SolverReport]:
    if (cfg.inhale_waveform, cfg.exhale_waveform) not in SOLVABLE_WAVEFORMS:
        raise UnsupportedWaveformError(
            f"No solver for {cfg.inhale_waveform.value} inhale with {cfg.exhale_waveform.value} exhale"
        )

    t_inhale = cfg.t_inhale
    t_exhale = cfg.t_exhale
    a = cfg.tv_max / t_inhale
    peak = cfg.exhale_peak_factor * a

    # The decay term is scaled by (peak + c) so the exhale onset speed is exactly `peak`.
    # The base is searched as ln(b), which keeps every trial step at b > 0.
    def fun(x):
        log_b, c = x
        return _residuals(a, peak + c, log_b, c, t_inhale, t_exhale)

    def jac(x):
        log_b, c = x
        amplitude = peak + c
        decay = math.exp(log_b * t_exhale)
        integral = _decay_integral(log_b, t_exhale)
        if abs(log_b) < 1e-12:
            d_integral = t_exhale**2 / 2
        else:
            d_integral = (t_exhale * decay * log_b - math.expm1(log_b * t_exhale)) / log_b**2
        return np.array(
            [
                [-amplitude * t_exhale * decay, 1.0 - decay],
                [-amplitude * d_integral, t_exhale - integral],
            ]
        )

    solution = root(
        fun,
        x0=np.array([math.log(0.5), 0.0]),
        jac=jac,
        method="hybr",
        options={"xtol": 1e-14, "maxfev": max_iterations},
    )
    log_b, c = solution.x
    residuals = fun(solution.x)
    iterations = int(solution.nfev)

    # MINPACK reports failure once xtol is out of reach even when the residuals are zero.
    if not np.all(np.abs(residuals) < tol):
        raise SolverError(
            f"Flow coefficients did not converge after {iterations} iterations: {solution.message}",
            tuple(float(r) for r in residuals),
            iterations,
        )
    if not log_b < 0:
        raise SolverError(
            f"Solved decay base {math.exp(log_b)} is not below 1",
            tuple(float(r) for r in residuals),
            iterations,
        )

    coeffs = FlowCoefficients(
        a=a,
        b=math.exp(log_b),
        c=float(c),
        t_inhale=t_inhale,
        period=cfg.period,
        exhale_amplitude=peak + float(c),
    )

    printed = FlowCoefficients(a, PRINTED_B, PRINTED_C, t_inhale, cfg.period)
    report = SolverReport(
        residuals=(float(residuals[0]), float(residuals[1])),
        iterations=iterations,
        printed_b=PRINTED_B,
        printed_c=PRINTED_C,
        relative_difference_b=abs(coeffs.b - PRINTED_B) / PRINTED_B,
        relative_difference_c=abs(coeffs.c - PRINTED_C) / PRINTED_C,
        printed_residuals=flow_residuals(printed),
    )

    log.info(
        f"Solved flow coefficients a={coeffs.a:.4f} b={coeffs.b:.6f} c={coeffs.c:.6f} in {iterations} iterations"
    )
    if report.relative_difference_b > 0.01 or report.relative_difference_c > 0.01:
        log.warning(
            f"Printed constants (b={PRINTED_B}, c={PRINTED_C}) leave residuals "
            f"{report.printed_residuals[0]:.3f} ml/s and {report.printed_residuals[1]:.3f} ml"
        )
    return coeffs, report


def solve_flow_coefficients(
    cfg: VentilatorConfig, tol: float = 1e-8, max_iterations: int = 200
) -> FlowCoefficients:
    coeffs, _ = solve_ventilator(cfg, tol, max_iterations)
    return coeffs


def _as_output(value: np.ndarray, like: ArrayLike) -> ArrayLike:
    if np.ndim(like) == 0:
        return float(value)
    return value


def flow_velocity(t: ArrayLike, coeffs: FlowCoefficients) -> ArrayLike:
    """Flow at time `t`: positive while inhaling, negative while exhaling."""

    phase = np.mod(np.asarray(t, dtype=float), coeffs.period)
    exhale = -coeffs.amplitude * np.power(
        coeffs.b, np.maximum(phase - coeffs.t_inhale, 0.0)
    ) + coeffs.c
    return _as_output(np.where(phase < coeffs.t_inhale, coeffs.a, exhale), t)


def tidal_volume(t: ArrayLike, coeffs: FlowCoefficients) -> ArrayLike:
    """Closed-form integral of `flow_velocity` from the start of the period, clamped at zero."""

    phase = np.mod(np.asarray(t, dtype=float), coeffs.period)
    since_exhale = np.maximum(phase - coeffs.t_inhale, 0.0)
    log_b = math.log(coeffs.b)
    exhaled = coeffs.amplitude * np.expm1(log_b * since_exhale) / log_b
    exhale = coeffs.a * coeffs.t_inhale - exhaled + coeffs.c * since_exhale
    volume = np.where(phase < coeffs.t_inhale, coeffs.a * phase, exhale)
    return _as_output(np.maximum(volume, 0.0), t)


def tidal_volume_series(timestamps: np.ndarray, coeffs: FlowCoefficients) -> TidalVolumeSeries:
    timestamps = np.asarray(timestamps, dtype=float)
    return TidalVolumeSeries(timestamps, np.asarray(tidal_volume(timestamps, coeffs)))


if __name__ == "__main__":
    setup_logging()

    coeffs, report = solve_ventilator(VentilatorConfig())
    console.print(coeffs)
    console.print(report)
