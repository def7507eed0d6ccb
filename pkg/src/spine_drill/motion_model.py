"""
Vertebra displacement from tidal volume.

The vertebra sits between two discs that bend under the uniform load caused by the
intrathoracic pressure (AP) and stretch under the axial load (SI). Both are linear
in the tidal volume. Values cross the API in mm, ml and Pa; the mechanics run in SI.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Tuple, Union

import numpy as np
import pandas as pd

from spine_drill.logging import console, setup_logging
from spine_drill.respiration import FlowCoefficients, tidal_volume

ArrayLike = Union[float, np.ndarray]

AXES = ("ap", "si", "lr")


class GeometryError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class SpineGeometry:
    centrum_length: float = 23.10
    """l, in mm"""
    disc_length: float = 5.49
    """m, in mm. The mean of the two discs neighbouring the vertebra."""
    disc_modulus: float = 75800.0
    """E, in Pa"""
    disc_inertia: float = 13800.0
    """I, in mm^4"""
    disc_area: float = 1500.0
    """A, in mm^2"""
    disc_total_length: float = 10.98
    """L, in mm"""
    chest_volume: float = 2500.0
    """V0, in ml"""
    atmospheric_pressure: float = 101325.0
    """p0, in Pa"""
    chest_width: float = 250.0
    """b_w, in mm"""
    chest_slice_area: float = 500.0
    """S, in mm^2"""

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise GeometryError(f"{name} must be positive, got {value}")


class _SiGeometry(NamedTuple):
    l: float
    m: float
    E: float
    I: float
    A: float
    L: float
    V0: float
    p0: float
    b_w: float
    S: float


MM = 1e-3
ML = 1e-6


def _to_si(geom: SpineGeometry) -> _SiGeometry:
    """The one place where API units become SI: lengths in m, volumes in m^3."""

    return _SiGeometry(
        l=geom.centrum_length * MM,
        m=geom.disc_length * MM,
        E=geom.disc_modulus,
        I=geom.disc_inertia * MM**4,
        A=geom.disc_area * MM**2,
        L=geom.disc_total_length * MM,
        V0=geom.chest_volume * ML,
        p0=geom.atmospheric_pressure,
        b_w=geom.chest_width * MM,
        S=geom.chest_slice_area * MM**2,
    )


@dataclass(frozen=True)
class AxisCoefficients:
    q1: float = 0.0
    """Slope, in mm/ml"""
    q0: float = 0.0
    """Intercept, in mm"""

    def __post_init__(self):
        if not (math.isfinite(self.q1) and math.isfinite(self.q0)):
            raise ValueError(f"Coefficients must be finite, got q1={self.q1} q0={self.q0}")

    def predict(self, tv: ArrayLike) -> ArrayLike:
        return self.q1 * tv + self.q0


@dataclass(frozen=True)
class DisplacementModel:
    ap: AxisCoefficients = AxisCoefficients()
    si: AxisCoefficients = AxisCoefficients()
    lr: AxisCoefficients = AxisCoefficients()

    def axis(self, name: str) -> AxisCoefficients:
        if name not in AXES:
            raise KeyError(f"Unknown axis {name!r}, expected one of {AXES}")
        return getattr(self, name)

    @classmethod
    def from_amplitudes(cls, ap: float, si: float, lr: float, tv_max: float) -> "DisplacementModel":
        """Slopes that reach the given peak displacement, in mm, at `tv_max`."""

        return cls(
            AxisCoefficients(ap / tv_max),
            AxisCoefficients(si / tv_max),
            AxisCoefficients(lr / tv_max),
        )


@dataclass(frozen=True)
class DisplacementSample:
    t: float
    d_ap: float
    d_si: float
    d_lr: float


@dataclass(frozen=True)
class DisplacementSeries:
    t: np.ndarray
    d_ap: np.ndarray
    d_si: np.ndarray
    d_lr: np.ndarray

    def axis(self, name: str) -> np.ndarray:
        return getattr(self, f"d_{name}")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t_s": self.t, "d_ap_mm": self.d_ap, "d_si_mm": self.d_si, "d_lr_mm": self.d_lr}
        )


def uniform_load(tv: ArrayLike, geom: SpineGeometry) -> ArrayLike:
    """Load intensity along the spine, in N/mm, for the tidal volume `tv` in ml."""

    si = _to_si(geom)
    q = (tv * ML / si.V0) * si.p0 * si.b_w
    return q * MM


def axial_load(tv: ArrayLike, geom: SpineGeometry) -> ArrayLike:
    """Tensile force along the spine, in N."""

    si = _to_si(geom)
    return (tv * ML / si.V0) * si.p0 * si.S


def deflection_profile(x: ArrayLike, q: float, geom: SpineGeometry) -> Tuple[ArrayLike, ArrayLike]:
    """
    Deflection (mm) and slope (rad) of the disc at distance `x` (mm) from the support,
    under the uniform load `q` (N/mm).
    """

    x_array = np.asarray(x, dtype=float)
    m = geom.disc_length
    if np.any(x_array < 0) or np.any(x_array > m * (1 + 1e-12)):
        raise DomainError(f"x must lie in [0, {m}] mm, got {x}")

    si = _to_si(geom)
    x_si = x_array * MM
    q_si = q / MM
    EI = si.E * si.I
    span = si.l + 2 * si.m
    c1 = q_si * si.m**3 / (3 * EI) + q_si * si.l * si.m**2 / (4 * EI)

    theta = q_si / (6 * EI) * x_si**3 - q_si * span / (4 * EI) * x_si**2 + c1
    v = q_si / (24 * EI) * x_si**4 - q_si * span / (12 * EI) * x_si**3 + c1 * x_si

    if np.ndim(x) == 0:
        return float(v) / MM, float(theta)
    return v / MM, theta


def physical_coefficients(geom: SpineGeometry) -> DisplacementModel:
    """
    AP and SI slopes from the disc mechanics. Intercepts are zero and left to the
    fitting, and there is no physical LR model.
    """

    si = _to_si(geom)
    EI = si.E * si.I
    bending = (5 * si.m**4 / 24 + si.l * si.m**3 / 6) / EI
    q1_ap = bending * si.p0 * si.b_w / si.V0
    # both discs stretch under the axial load of 1 ml, in m
    stretch = 2 * axial_load(1.0, geom) * si.L / (si.E * si.A)

    return DisplacementModel(
        ap=AxisCoefficients(q1_ap * ML / MM),
        si=AxisCoefficients(stretch / MM),
        lr=AxisCoefficients(),
    )


def predict_displacement(tv: float, model: DisplacementModel, t: float = 0.0) -> DisplacementSample:
    return DisplacementSample(
        t=t,
        d_ap=model.ap.predict(tv),
        d_si=model.si.predict(tv),
        d_lr=model.lr.predict(tv),
    )


def predict_series(
    timestamps: np.ndarray, coeffs: FlowCoefficients, model: DisplacementModel, phase: float = 0.0
) -> DisplacementSeries:
    """The model evaluated along the ventilator's tidal volume, starting `phase` seconds into a breath."""

    timestamps = np.asarray(timestamps, dtype=float)
    tv = np.asarray(tidal_volume(timestamps + phase, coeffs))
    return DisplacementSeries(
        t=timestamps,
        d_ap=model.ap.predict(tv),
        d_si=model.si.predict(tv),
        d_lr=model.lr.predict(tv),
    )


if __name__ == "__main__":
    setup_logging()

    geom = SpineGeometry()
    console.print(geom)
    console.print(physical_coefficients(geom))
