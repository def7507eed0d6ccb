"""
Wavelet de-noising of displacement recordings.

A recording is decomposed with a multi-level DWT (symmetric boundary extension), a
subset of the bands is reconstructed, and the result is scored with three metrics:
the noise-to-signal ratio, and the largest and mean spread of displacement over
narrow tidal-volume neighbourhoods. The basis minimising a weighted sum of the
min-max normalised metrics is selected.

Coefficient lengths follow PyWavelets' bookkeeping for the symmetric mode,
floor((n + filter_length - 1) / 2) per level.
"""

import warnings
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import pywt

from spine_drill.logging import console, log, progress, setup_logging

Band = Union[int, str]
APPROXIMATION = "a"
MODE = "symmetric"
DEFAULT_LEVELS = 6
DEFAULT_BANDS = (3, 4, 5)
SHIPPED_BASES = ("db5", "coif4", "coif5", "bior2.8")
EQUAL_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
METRICS = ("nsr", "w_max", "w_mean")


class SignalTooShortError(ValueError):
    pass


class InvalidBandError(ValueError):
    pass


class EmptyNeighbourhoodError(ValueError):
    pass


class UnknownBasisError(ValueError):
    pass


@dataclass(frozen=True)
class WaveletBasis:
    name: str
    dec_lo: np.ndarray
    dec_hi: np.ndarray
    rec_lo: np.ndarray
    rec_hi: np.ndarray
    orthogonal: bool

    @property
    def wavelet(self) -> pywt.Wavelet:
        return pywt.Wavelet(self.name)

    @property
    def decomposition_filters(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.dec_lo, self.dec_hi

    @property
    def reconstruction_filters(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.rec_lo, self.rec_hi


def wavelet_basis(name: str) -> WaveletBasis:
    if name not in pywt.wavelist(kind="discrete"):
        raise UnknownBasisError(f"Unknown wavelet basis {name!r}")

    wavelet = pywt.Wavelet(name)
    dec_lo, dec_hi, rec_lo, rec_hi = (np.asarray(f) for f in wavelet.filter_bank)
    return WaveletBasis(name, dec_lo, dec_hi, rec_lo, rec_hi, bool(wavelet.orthogonal))


def shipped_bases() -> List[WaveletBasis]:
    return [wavelet_basis(name) for name in SHIPPED_BASES]


@dataclass(frozen=True)
class DwtDecomposition:
    basis: WaveletBasis
    levels: int
    approx: np.ndarray
    details: Tuple[np.ndarray, ...]
    """d1 first"""
    original_length: int

    def detail(self, level: int) -> np.ndarray:
        return self.details[level - 1]


@dataclass(frozen=True)
class DenoiseMetrics:
    nsr: float
    w_max: float
    w_mean: float


def dwt_decompose(signal: np.ndarray, basis: WaveletBasis, levels: int = DEFAULT_LEVELS) -> DwtDecomposition:
    signal = np.asarray(signal, dtype=float)
    if levels < 1:
        raise ValueError(f"levels must be at least 1, got {levels}")
    if len(signal) < 2**levels:
        raise SignalTooShortError(
            f"{levels} levels need at least {2**levels} samples, got {len(signal)}"
        )

    with warnings.catch_warnings():
        # Deep levels on short records are allowed; boundary effects are accepted.
        warnings.simplefilter("ignore", UserWarning)
        coefficients = pywt.wavedec(signal, basis.wavelet, mode=MODE, level=levels)

    return DwtDecomposition(
        basis=basis,
        levels=levels,
        approx=coefficients[0],
        details=tuple(reversed(coefficients[1:])),
        original_length=len(signal),
    )


def _check_bands(bands: Iterable[Band], levels: int) -> set:
    bands = set(bands)
    for band in bands:
        if band == APPROXIMATION:
            continue
        if isinstance(band, bool) or not isinstance(band, (int, np.integer)) or not 1 <= band <= levels:
            raise InvalidBandError(
                f"Band {band!r} is neither {APPROXIMATION!r} nor a level in 1..{levels}"
            )
    return bands


def band_reconstruct(dec: DwtDecomposition, bands: Iterable[Band]) -> np.ndarray:
    """Inverse transform keeping only `bands` (levels, and `"a"` for the approximation)."""

    bands = _check_bands(bands, dec.levels)

    coefficients = [dec.approx if APPROXIMATION in bands else np.zeros_like(dec.approx)]
    for level in range(dec.levels, 0, -1):
        detail = dec.detail(level)
        coefficients.append(detail if level in bands else np.zeros_like(detail))

    reconstructed = pywt.waverec(coefficients, dec.basis.wavelet, mode=MODE)
    return reconstructed[: dec.original_length]


def denoise(
    signal: np.ndarray,
    basis: WaveletBasis,
    levels: int = DEFAULT_LEVELS,
    bands: Iterable[Band] = DEFAULT_BANDS,
) -> np.ndarray:
    return band_reconstruct(dwt_decompose(signal, basis, levels), bands)


def band_energy(dec: DwtDecomposition) -> dict:
    """Fraction of the total detail-coefficient energy in each level."""

    energies = {level: float(np.sum(dec.detail(level) ** 2)) for level in range(1, dec.levels + 1)}
    total = sum(energies.values())
    if total == 0:
        return {level: 0.0 for level in energies}
    return {level: energy / total for level, energy in energies.items()}


def probe_grid(tv: np.ndarray, count: int = 20) -> np.ndarray:
    return np.linspace(0.05, 0.95, count) * np.max(tv)


def denoise_metrics(
    raw: np.ndarray,
    denoised: np.ndarray,
    tv: np.ndarray,
    delta_tv: Optional[float] = None,
    probes: Optional[np.ndarray] = None,
) -> DenoiseMetrics:
    raw = np.asarray(raw, dtype=float)
    denoised = np.asarray(denoised, dtype=float)
    tv = np.asarray(tv, dtype=float)
    if not len(raw) == len(denoised) == len(tv):
        raise ValueError(
            f"raw, denoised and tv must have equal lengths, got {len(raw)}, {len(denoised)}, {len(tv)}"
        )
    if delta_tv is None:
        delta_tv = 0.02 * np.max(tv)
    if not delta_tv > 0:
        raise ValueError(f"delta_tv must be positive, got {delta_tv}")
    if probes is None:
        probes = probe_grid(tv)

    signal_power = np.mean(denoised**2)
    if signal_power == 0:
        raise ValueError("The denoised signal has no power")
    nsr = float(np.mean((raw - denoised) ** 2) / signal_power)

    spreads = []
    for probe in probes:
        neighbourhood = denoised[np.abs(tv - probe) <= delta_tv]
        if len(neighbourhood) == 0:
            continue
        spreads.append(np.ptp(neighbourhood))

    if len(spreads) == 0:
        raise EmptyNeighbourhoodError(
            f"No samples lie within {delta_tv} ml of any of the {len(probes)} probe volumes"
        )
    if len(spreads) < len(probes):
        log.warning(f"Skipped {len(probes) - len(spreads)} probe volumes with no samples nearby")

    return DenoiseMetrics(nsr=nsr, w_max=float(np.max(spreads)), w_mean=float(np.mean(spreads)))


def _check_weights(weights: Sequence[float]) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(METRICS),):
        raise ValueError(f"Expected {len(METRICS)} weights, got {weights.shape}")
    if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-9:
        raise ValueError(f"Weights must be non-negative and sum to 1, got {weights.tolist()}")
    return weights


def rank_scores(z: np.ndarray, weights: Sequence[float] = EQUAL_WEIGHTS) -> np.ndarray:
    """Weighted sum of the min-max normalised columns of `z`. Constant columns count as 0."""

    weights = _check_weights(weights)
    z = np.asarray(z, dtype=float)
    low = z.min(axis=0)
    span = z.max(axis=0) - low
    normalised = np.divide(z - low, span, out=np.zeros_like(z), where=span > 0)
    return normalised @ weights


def select_basis(
    signal: np.ndarray,
    tv: np.ndarray,
    candidates: Optional[Sequence[WaveletBasis]] = None,
    weights: Sequence[float] = EQUAL_WEIGHTS,
    levels: int = DEFAULT_LEVELS,
    bands: Iterable[Band] = DEFAULT_BANDS,
    delta_tv: Optional[float] = None,
) -> Tuple[WaveletBasis, pd.DataFrame]:
    """
    Score every candidate basis on `signal` and return the best one together with the
    table of raw metrics and weighted scores, one row per candidate.
    """

    weights = _check_weights(weights)
    if candidates is None:
        candidates = shipped_bases()
    if len(candidates) == 0:
        raise ValueError("No candidate bases to select from")
    bands = tuple(bands)

    rows = []
    with progress:
        task = progress.add_task("[purple]Scoring wavelet bases...", total=len(candidates))
        for basis in candidates:
            metrics = denoise_metrics(signal, denoise(signal, basis, levels, bands), tv, delta_tv)
            rows.append([metrics.nsr, metrics.w_max, metrics.w_mean])
            progress.update(task, advance=1)
        progress.update(task, visible=False)

    z = np.array(rows)
    scores = rank_scores(z, weights)
    table = pd.DataFrame(z, columns=list(METRICS), index=[basis.name for basis in candidates])
    table["score"] = scores
    best = candidates[int(np.argmin(scores))]

    log.info(f"Selected wavelet basis {best.name} with score {scores.min():.4f}")
    return best, table


if __name__ == "__main__":
    setup_logging()

    t = np.arange(0, 30, 1 / 8)
    rng = np.random.default_rng(0)
    trace = 2 * np.sin(2 * np.pi * t / 5) + rng.normal(0, 0.3, len(t))
    tv = 250 * (1 + np.sin(2 * np.pi * t / 5))
    _, table = select_basis(trace, tv)
    console.print(table)
