"""
Breathing recordings on disk: a displacement file sampled at 8 Hz and a tidal volume
file sampled at 64 Hz, paired by interpolating the tidal volume onto the displacement
timestamps.
"""

import math
import re
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from spine_drill.logging import console, log, setup_logging
from spine_drill.motion_model import AXES, DisplacementModel, DisplacementSeries, predict_series
from spine_drill.respiration import (
    TidalVolumeSeries,
    VentilatorConfig,
    solve_flow_coefficients,
    tidal_volume_series,
)
from spine_drill.utilities import read_csv, write_csv

DISPLACEMENT_COLUMNS = ["t_s", "d_ap_mm", "d_si_mm", "d_lr_mm"]
VOLUME_COLUMNS = ["t_s", "tv_ml"]
FORCE_COLUMNS = ["t_s", "force_n"]

DISPLACEMENT_RATE = 8.0
VOLUME_RATE = 64.0


class RecordingError(ValueError):
    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = path if line is None else f"{path}:{line}"
        ValueError.__init__(self, message if path is None else f"{location}: {message}")

        self.path = path
        self.line = line


class NonMonotonicTimestampError(RecordingError):
    pass


class EmptyOverlapError(RecordingError):
    pass


def _line(row: int) -> int:
    # Line 1 is the header.
    return row + 2


def read_table(path: str, columns: List[str]) -> pd.DataFrame:
    """A validated CSV table with exactly `columns`, finite values and increasing `t_s`."""

    try:
        frame = read_csv(path)
    except OSError as e:
        raise RecordingError(f"Cannot read the file: {e.strerror or e}", path) from e
    except pd.errors.EmptyDataError as e:
        raise RecordingError("The file is empty", path, 1) from e
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        match = re.search(r"line (\d+)", str(e))
        raise RecordingError(f"Cannot parse the file: {e}", path, int(match.group(1)) if match else None) from e

    if list(frame.columns) != columns:
        raise RecordingError(
            f"Expected the columns {','.join(columns)}, found {','.join(map(str, frame.columns))}", path, 1
        )

    for column in columns:
        values = pd.to_numeric(frame[column], errors="coerce")
        bad = np.flatnonzero(~np.isfinite(values.to_numpy(dtype=float)))
        if len(bad) != 0:
            row = int(bad[0])
            raw = frame[column].iloc[row]
            problem = "is missing" if pd.isna(raw) else f"is not a finite number: {raw!r}"
            raise RecordingError(f"{column} {problem}", path, _line(row))
        frame[column] = values.astype(float)

    steps = np.diff(frame["t_s"].to_numpy())
    if np.any(steps <= 0):
        row = int(np.flatnonzero(steps <= 0)[0]) + 1
        raise NonMonotonicTimestampError(
            f"Timestamp {frame['t_s'].iloc[row]} does not follow {frame['t_s'].iloc[row - 1]}",
            path,
            _line(row),
        )
    return frame


def read_displacement(path: str) -> DisplacementSeries:
    frame = read_table(path, DISPLACEMENT_COLUMNS)
    return DisplacementSeries(*(frame[column].to_numpy() for column in DISPLACEMENT_COLUMNS))


def read_volume(path: str) -> TidalVolumeSeries:
    frame = read_table(path, VOLUME_COLUMNS)
    return TidalVolumeSeries(frame["t_s"].to_numpy(), frame["tv_ml"].to_numpy())


def read_forces(path: str) -> Tuple[np.ndarray, np.ndarray]:
    frame = read_table(path, FORCE_COLUMNS)
    return frame["t_s"].to_numpy(), frame["force_n"].to_numpy()


@dataclass(frozen=True)
class AlignedRecording:
    tv: np.ndarray
    displacement: DisplacementSeries
    dropped: int
    """Displacement rows outside the tidal volume time range"""

    @property
    def t(self) -> np.ndarray:
        return self.displacement.t

    def to_frame(self) -> pd.DataFrame:
        frame = self.displacement.to_frame()
        frame.insert(1, "tv_ml", self.tv)
        return frame


def align(displacement: DisplacementSeries, volume: TidalVolumeSeries) -> AlignedRecording:
    if len(volume.timestamps) == 0 or len(displacement.t) == 0:
        raise EmptyOverlapError("One of the recordings has no samples")

    inside = (displacement.t >= volume.timestamps[0]) & (displacement.t <= volume.timestamps[-1])
    if not inside.any():
        raise EmptyOverlapError(
            f"The displacement ({displacement.t[0]}..{displacement.t[-1]} s) and tidal volume "
            f"({volume.timestamps[0]}..{volume.timestamps[-1]} s) recordings do not overlap"
        )

    kept = DisplacementSeries(
        displacement.t[inside], *(displacement.axis(axis)[inside] for axis in AXES)
    )
    tv = np.interp(kept.t, volume.timestamps, volume.values)
    dropped = int(len(displacement.t) - inside.sum())
    log.info(f"Paired {len(kept.t)} displacement samples with the tidal volume, dropped {dropped}")
    return AlignedRecording(tv=tv, displacement=kept, dropped=dropped)


def ingest(displacement_path: str, volume_path: str) -> AlignedRecording:
    return align(read_displacement(displacement_path), read_volume(volume_path))


@dataclass(frozen=True)
class SyntheticRecording:
    ap: float = 4.0
    """Peak AP displacement, in mm, at the ventilator's maximum tidal volume"""
    si: float = 2.0
    lr: float = 1.0
    noise_std: float = 0.3
    """mm, on every axis"""
    duration: float = 30.0
    seed: int = 0
    phase: float = 0.0

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must not be negative, got {self.noise_std}")


@dataclass(frozen=True)
class Recording:
    displacement: DisplacementSeries
    volume: TidalVolumeSeries
    model: DisplacementModel
    """The model the displacement was generated from"""


def generate_synthetic(
    synthetic: SyntheticRecording = SyntheticRecording(), ventilator: VentilatorConfig = VentilatorConfig()
) -> Recording:
    coeffs = solve_flow_coefficients(ventilator)
    model = DisplacementModel.from_amplitudes(synthetic.ap, synthetic.si, synthetic.lr, ventilator.tv_max)
    rng = np.random.default_rng(synthetic.seed)

    t = np.arange(int(math.floor(synthetic.duration * DISPLACEMENT_RATE))) / DISPLACEMENT_RATE
    clean = predict_series(t, coeffs, model, synthetic.phase)
    noisy = DisplacementSeries(
        t, *(clean.axis(axis) + rng.normal(0, synthetic.noise_std, len(t)) for axis in AXES)
    )

    timestamps = np.arange(int(math.floor(synthetic.duration * VOLUME_RATE))) / VOLUME_RATE
    volume = tidal_volume_series(timestamps + synthetic.phase, coeffs)
    return Recording(noisy, TidalVolumeSeries(timestamps, volume.values), model)


def write_recording(recording: Recording, displacement_path: str, volume_path: str):
    write_csv(displacement_path, recording.displacement.to_frame())
    write_csv(
        volume_path,
        pd.DataFrame({"t_s": recording.volume.timestamps, "tv_ml": recording.volume.values}),
    )


if __name__ == "__main__":
    setup_logging()

    recording = generate_synthetic()
    aligned = align(recording.displacement, recording.volume)
    console.print(aligned.to_frame().describe())
