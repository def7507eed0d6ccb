import hashlib
import json
import os
from typing import Any, Optional

import numpy as np
import pandas as pd

CONFIG_ENVIRONMENT_VARIABLE = "SPINE_DRILL_CONFIG"


def default_config_path() -> Optional[str]:
    """The configuration file named by `SPINE_DRILL_CONFIG`, if it is set and non-empty."""

    if (
        CONFIG_ENVIRONMENT_VARIABLE in os.environ
        and len(os.environ[CONFIG_ENVIRONMENT_VARIABLE]) != 0
    ):
        return os.environ[CONFIG_ENVIRONMENT_VARIABLE]
    return None


def ensure_directory(path: str) -> str:
    directory = os.path.abspath(path)
    if not os.path.isdir(directory):
        os.makedirs(directory)
    return directory


def checksum(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _to_builtin(value: Any):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_json(path: str, payload: Any):
    with open(path, "w") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2, default=_to_builtin)
        f.write("\n")


def write_csv(path: str, frame: pd.DataFrame):
    # Shortest repr of every float, so a read with round-trip precision is exact.
    frame.to_csv(path, index=False, lineterminator="\n")


def read_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
