"""
Identification of the displacement model from recorded (tidal volume, displacement) pairs.

Each axis is a separate two-parameter problem solved by particle swarm optimisation with
the coefficient of determination as fitness. Ordinary least squares is the closed-form
optimum of the same problem and serves as its reference.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np

from spine_drill.logging import console, log, setup_logging
from spine_drill.motion_model import AXES, AxisCoefficients, DisplacementModel

Bounds = Tuple[Tuple[float, float], Tuple[float, float]]


class DegenerateDataError(ValueError):
    pass


class SingularDesignError(ValueError):
    pass


@dataclass(frozen=True)
class PsoConfig:
    population: int = 24
    max_iterations: int = 2000
    inertia: float = 0.729
    cognitive: float = 1.494
    social: float = 1.494
    patience: int = 200
    """Iterations without a global-best improvement above `tolerance` before stopping"""
    tolerance: float = 1e-12
    seed: int = 0
    search_bounds: Optional[Bounds] = None
    """((q1_low, q1_high), (q0_low, q0_high)). Derived from the data scale when None."""

    def __post_init__(self):
        if self.population < 2:
            raise ValueError(f"population must be at least 2, got {self.population}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if self.patience < 1:
            raise ValueError(f"patience must be at least 1, got {self.patience}")
        if self.search_bounds is not None:
            _check_bounds(self.search_bounds)


def _check_bounds(bounds: Bounds):
    for low, high in bounds:
        if not (np.isfinite(low) and np.isfinite(high) and low < high):
            raise ValueError(f"Search bounds must be finite and non-degenerate, got {bounds}")


@dataclass(frozen=True)
class AxisFit:
    q1: float
    q0: float
    r2: float
    iterations_used: int
    history: Tuple[float, ...] = field(repr=False, default=())
    """Global-best fitness after every iteration"""

    @property
    def params(self) -> Tuple[float, float]:
        return self.q1, self.q0


@dataclass(frozen=True)
class FitResult:
    """None for an axis whose displacement never changes."""

    ap: Optional[AxisFit]
    si: Optional[AxisFit]
    lr: Optional[AxisFit]

    @property
    def model(self) -> DisplacementModel:
        return DisplacementModel(
            *(
                AxisCoefficients() if fit is None else AxisCoefficients(fit.q1, fit.q0)
                for fit in (self.ap, self.si, self.lr)
            )
        )

    @property
    def iterations_used(self) -> int:
        return max(fit.iterations_used for fit in (self.ap, self.si, self.lr) if fit is not None)


def _as_data(tv, displacement) -> Tuple[np.ndarray, np.ndarray]:
    tv = np.asarray(tv, dtype=float)
    displacement = np.asarray(displacement, dtype=float)
    if tv.shape != displacement.shape or tv.ndim != 1:
        raise ValueError(
            f"tv and displacement must be 1-D arrays of equal length, got {tv.shape} and {displacement.shape}"
        )
    if len(tv) < 2:
        raise DegenerateDataError(f"At least 2 points are needed, got {len(tv)}")
    return tv, displacement


def _total_sum_of_squares(displacement: np.ndarray) -> float:
    total = float(np.sum((displacement - displacement.mean()) ** 2))
    if total == 0:
        raise DegenerateDataError("All displacement values are equal")
    return total


def r_squared(params: Tuple[float, float], tv, displacement) -> float:
    tv, displacement = _as_data(tv, displacement)
    q1, q0 = params
    residual = float(np.sum((displacement - (q1 * tv + q0)) ** 2))
    return 1 - residual / _total_sum_of_squares(displacement)


def fit_ols(tv, displacement) -> Tuple[float, float]:
    tv, displacement = _as_data(tv, displacement)
    centred = tv - tv.mean()
    spread = float(np.sum(centred**2))
    if spread == 0:
        raise SingularDesignError("All tidal volume values are equal")

    q1 = float(np.sum(centred * (displacement - displacement.mean())) / spread)
    q0 = float(displacement.mean() - q1 * tv.mean())
    return q1, q0


def default_bounds(tv, displacement) -> Bounds:
    q1, _ = fit_ols(tv, displacement)
    slope = 10 * abs(q1) if q1 != 0 else 1.0
    return (-slope, slope), (-20.0, 20.0)


def fit_pso(
    tv,
    displacement,
    cfg: PsoConfig = PsoConfig(),
    callback: Optional[Callable[[int, np.ndarray, float], None]] = None,
) -> AxisFit:
    """
    Maximise R^2 over (q1, q0) with a global-best swarm. `callback(iteration, positions,
    best_fitness)` is called after every update.
    """

    tv, displacement = _as_data(tv, displacement)
    total = _total_sum_of_squares(displacement)
    bounds = cfg.search_bounds if cfg.search_bounds is not None else default_bounds(tv, displacement)
    _check_bounds(bounds)
    lower = np.array([bounds[0][0], bounds[1][0]])
    upper = np.array([bounds[0][1], bounds[1][1]])

    def fitness(positions: np.ndarray) -> np.ndarray:
        predicted = positions[:, :1] * tv + positions[:, 1:]
        return 1 - np.sum((displacement - predicted) ** 2, axis=1) / total

    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.population, 2)
    positions = rng.uniform(lower, upper, shape)
    velocities = rng.uniform(-(upper - lower), upper - lower, shape) * 0.1

    personal = positions.copy()
    personal_fitness = fitness(positions)
    best = int(np.argmax(personal_fitness))
    global_best = personal[best].copy()
    global_fitness = float(personal_fitness[best])

    history = []
    stalled = 0
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        r1 = rng.random(shape)
        r2 = rng.random(shape)
        velocities = (
            cfg.inertia * velocities
            + cfg.cognitive * r1 * (personal - positions)
            + cfg.social * r2 * (global_best - positions)
        )
        positions = np.clip(positions + velocities, lower, upper)

        current = fitness(positions)
        improved = current > personal_fitness
        personal[improved] = positions[improved]
        personal_fitness[improved] = current[improved]

        best = int(np.argmax(personal_fitness))
        if personal_fitness[best] - global_fitness > cfg.tolerance:
            stalled = 0
        else:
            stalled += 1
        if personal_fitness[best] > global_fitness:
            global_best = personal[best].copy()
            global_fitness = float(personal_fitness[best])

        history.append(global_fitness)
        if callback is not None:
            callback(iteration, positions, global_fitness)
        if stalled >= cfg.patience:
            break

    return AxisFit(
        q1=float(global_best[0]),
        q0=float(global_best[1]),
        r2=global_fitness,
        iterations_used=iteration,
        history=tuple(history),
    )


def fit_displacement_model(tv, d_ap, d_si, d_lr, cfg: PsoConfig = PsoConfig()) -> FitResult:
    fits = {}
    for offset, (axis, displacement) in enumerate(zip(AXES, (d_ap, d_si, d_lr))):
        axis_cfg = replace(cfg, seed=cfg.seed + offset)
        try:
            fits[axis] = fit_pso(tv, displacement, axis_cfg)
        except DegenerateDataError as e:
            log.warning(f"Skipping {axis.upper()}: {e}")
            fits[axis] = None
            continue
        log.info(
            f"{axis.upper()}: q1={fits[axis].q1:.6g} mm/ml q0={fits[axis].q0:.6g} mm "
            f"R²={fits[axis].r2:.4f} after {fits[axis].iterations_used} iterations"
        )
    if all(fit is None for fit in fits.values()):
        raise DegenerateDataError("No axis has any displacement to fit")
    return FitResult(**fits)


if __name__ == "__main__":
    setup_logging()

    rng = np.random.default_rng(0)
    tv = rng.uniform(0, 500, 240)
    d = 0.008 * tv + rng.normal(0, 0.3, len(tv))
    console.print(fit_pso(tv, d))
    console.print(fit_ols(tv, d))
