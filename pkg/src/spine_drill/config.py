"""
The configuration file: sections of `key = value` lines, every key optional.

    [ventilator]
    tv_max_ml = 500
    resp_freq_per_min = 12

    [recognizer]
    drop_ratio = 0.5

Unknown sections and keys are errors, so that typos do not pass silently.
"""

import configparser
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Tuple

from spine_drill.compensation import SEGMENT_PERIOD, MonitorConfig
from spine_drill.fitting import PsoConfig
from spine_drill.logging import console, log, setup_logging
from spine_drill.motion_model import AxisCoefficients, SpineGeometry
from spine_drill.recognition import RecognizerConfig
from spine_drill.respiration import VentilatorConfig
from spine_drill.signal import (
    APPROXIMATION,
    DEFAULT_BANDS,
    DEFAULT_LEVELS,
    EQUAL_WEIGHTS,
    SHIPPED_BASES,
    UnknownBasisError,
    wavelet_basis,
)
from spine_drill.simulator import BoneModel, TrialConfig, TrialMode
from spine_drill.utilities import default_config_path


class ConfigError(ValueError):
    def __init__(self, message: str, section: Optional[str] = None, key: Optional[str] = None):
        location = ".".join(part for part in (section, key) if part is not None)
        ValueError.__init__(self, f"[{location}] {message}" if location else message)

        self.section = section
        self.key = key


def _list(value: str) -> Tuple[str, ...]:
    return tuple(item.strip() for item in value.split(",") if item.strip() != "")


def _bands(value: str):
    return tuple(item if item == APPROXIMATION else int(item) for item in _list(value))


def _floats(value: str) -> Tuple[float, ...]:
    return tuple(float(item) for item in _list(value))


@dataclass(frozen=True)
class TrialSettings:
    feed_rate: float = 0.5
    spindle_rpm: float = 12000.0
    tick: float = 0.0025
    approach_gap: float = 0.25
    segment_period: float = SEGMENT_PERIOD
    ap_q1: float = 0.008
    ap_q0: float = 0.0


@dataclass(frozen=True)
class SignalSettings:
    levels: int = DEFAULT_LEVELS
    bands: tuple = DEFAULT_BANDS
    weights: Tuple[float, ...] = EQUAL_WEIGHTS
    candidates: Tuple[str, ...] = SHIPPED_BASES

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be at least 1, got {self.levels}")
        if len(self.weights) != 3:
            raise ValueError(f"Three weights are needed (nsr, w_max, w_mean), got {len(self.weights)}")
        if len(self.candidates) == 0:
            raise ValueError("At least one candidate basis is needed")


Parser = Callable[[str], object]

SECTIONS: Dict[str, Tuple[str, Dict[str, Tuple[str, Parser]]]] = {
    "ventilator": (
        "ventilator",
        {
            "tv_max_ml": ("tv_max", float),
            "resp_freq_per_min": ("resp_freq", float),
            "ratio_in": ("ratio_in", float),
            "ratio_out": ("ratio_out", float),
            "exhale_peak_factor": ("exhale_peak_factor", float),
        },
    ),
    "spine": (
        "spine",
        {
            "centrum_length_mm": ("centrum_length", float),
            "disc_length_mm": ("disc_length", float),
            "disc_modulus_pa": ("disc_modulus", float),
            "disc_inertia_mm4": ("disc_inertia", float),
            "disc_area_mm2": ("disc_area", float),
            "disc_total_length_mm": ("disc_total_length", float),
            "chest_volume_ml": ("chest_volume", float),
            "atmospheric_pressure_pa": ("atmospheric_pressure", float),
            "chest_width_mm": ("chest_width", float),
            "chest_slice_area_mm2": ("chest_slice_area", float),
        },
    ),
    "recognizer": (
        "recognizer",
        {
            "window": ("window", int),
            "gain": ("gain", float),
            "gain_threshold": ("gain_threshold", float),
            "c1": ("c1", float),
            "c2": ("c2", float),
            "c3": ("c3", float),
            "drop_ratio": ("drop_ratio", float),
            "min_calibration_force_n": ("min_calibration_force", float),
            "confirmation_count": ("confirmation_count", int),
            "block_size": ("block_size", int),
            "calibration_budget": ("calibration_budget", int),
        },
    ),
    "monitor": ("monitor", {"h1_mm": ("h1", float), "h2_n": ("h2", float)}),
    "plant": (
        "bone",
        {
            "outer_thickness_mm": ("outer_thickness", float),
            "cancellous_thickness_mm": ("cancellous_thickness", float),
            "inner_thickness_mm": ("inner_thickness", float),
            "cortical_hardness": ("cortical_hardness", float),
            "cancellous_hardness": ("cancellous_hardness", float),
            "cortical_fluctuation": ("cortical_fluctuation", float),
            "cancellous_fluctuation": ("cancellous_fluctuation", float),
            "noise_floor_n": ("noise_floor", float),
            "spindle_vibration_n": ("spindle_vibration", float),
            "vibration_time_constant_s": ("vibration_time_constant", float),
        },
    ),
    "pso": (
        "pso",
        {
            "population": ("population", int),
            "max_iterations": ("max_iterations", int),
            "inertia": ("inertia", float),
            "cognitive": ("cognitive", float),
            "social": ("social", float),
            "patience": ("patience", int),
            "seed": ("seed", int),
        },
    ),
    "trial": (
        "trial",
        {
            "feed_rate_mm_s": ("feed_rate", float),
            "spindle_rpm": ("spindle_rpm", float),
            "tick_s": ("tick", float),
            "approach_gap_mm": ("approach_gap", float),
            "segment_period_s": ("segment_period", float),
            "ap_q1_mm_per_ml": ("ap_q1", float),
            "ap_q0_mm": ("ap_q0", float),
        },
    ),
    "signal": (
        "signal",
        {
            "levels": ("levels", int),
            "bands": ("bands", _bands),
            "weights": ("weights", _floats),
            "candidates": ("candidates", _list),
        },
    ),
}
"""Section name -> (Settings attribute, {key: (field, parser)})"""


@dataclass(frozen=True)
class Settings:
    ventilator: VentilatorConfig = VentilatorConfig()
    spine: SpineGeometry = SpineGeometry()
    recognizer: RecognizerConfig = RecognizerConfig()
    monitor: MonitorConfig = MonitorConfig()
    bone: BoneModel = BoneModel()
    pso: PsoConfig = PsoConfig()
    trial: TrialSettings = TrialSettings()
    signal: SignalSettings = SignalSettings()
    path: Optional[str] = field(default=None, compare=False)
    """The file the settings were read from, None for the built-in defaults"""

    def trial_config(self, mode: TrialMode = TrialMode.STATIONARY, seed: int = 0) -> TrialConfig:
        return TrialConfig(
            mode=mode,
            feed_rate=self.trial.feed_rate,
            spindle_rpm=self.trial.spindle_rpm,
            tick=self.trial.tick,
            approach_gap=self.trial.approach_gap,
            segment_period=self.trial.segment_period,
            ventilator=self.ventilator,
            displacement=AxisCoefficients(self.trial.ap_q1, self.trial.ap_q0),
            bone=self.bone,
            recognizer=self.recognizer,
            monitor=self.monitor,
            seed=seed,
        )


def parse_settings(text: str, path: Optional[str] = None) -> Settings:
    parser = configparser.ConfigParser(interpolation=None, default_section="\x00")
    try:
        parser.read_string(text, source=path or "<string>")
    except configparser.Error as e:
        raise ConfigError(f"Cannot parse the configuration: {e.message}") from e

    settings = Settings(path=path)
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"Unknown section, expected one of {', '.join(SECTIONS)}", section)
        attribute, keys = SECTIONS[section]

        values = {}
        for key, raw in parser.items(section):
            if key not in keys:
                raise ConfigError(f"Unknown key, expected one of {', '.join(keys)}", section, key)
            name, parse = keys[key]
            try:
                values[name] = parse(raw)
            except ValueError as e:
                raise ConfigError(f"Cannot parse {raw!r}: {e}", section, key) from e

        try:
            settings = replace(settings, **{attribute: replace(getattr(settings, attribute), **values)})
        except ValueError as e:
            raise ConfigError(str(e), section) from e

    for name in settings.signal.candidates:
        try:
            wavelet_basis(name)
        except UnknownBasisError as e:
            raise ConfigError(str(e), "signal", "candidates") from e
    return settings


def load_settings(path: Optional[str] = None) -> Settings:
    """
    Settings from `path`, or from the file named by `SPINE_DRILL_CONFIG` when `path` is
    None. Built-in defaults when neither is given.
    """

    if path is None:
        path = default_config_path()
    if path is None:
        return Settings()

    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"Cannot read the configuration file {path}: {e.strerror or e}") from e

    settings = parse_settings(text, path)
    log.info(f"Loaded the configuration from {path}")
    return settings


if __name__ == "__main__":
    setup_logging()

    console.print(load_settings())
