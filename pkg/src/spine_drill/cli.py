"""
The `spine-drill` command.

Every command writes its outputs into `--output` together with a `manifest.json`
naming the command line, the configuration file, the seed and the SHA-256 of every
file written, so a run can be repeated and checked byte for byte.
"""

import argparse
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional

import pandas as pd

from spine_drill.config import ConfigError, Settings, load_settings
from spine_drill.fitting import SingularDesignError, fit_displacement_model, fit_ols, r_squared
from spine_drill.logging import console, log, setup_logging
from spine_drill.motion_model import AXES, DisplacementSeries, physical_coefficients
from spine_drill.plots import render
from spine_drill.recognition import CalibrationTimeoutError, replay
from spine_drill.recording import (
    SyntheticRecording,
    generate_synthetic,
    ingest,
    read_forces,
    write_recording,
)
from spine_drill.respiration import SolverError, solve_ventilator
from spine_drill.signal import denoise, denoise_metrics, select_basis, wavelet_basis
from spine_drill.simulator import TrialMode, run_batch, run_spindle_sweep, run_trial
from spine_drill.utilities import checksum, ensure_directory, write_csv, write_json

# Everything a bad input file, flag or configuration value can raise.
DOMAIN_ERRORS = (ValueError, SolverError, CalibrationTimeoutError, OSError)


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config: Optional[str]
    seed: Optional[int]
    output: str
    files: Dict[str, str] = field(default_factory=dict)
    """File name -> SHA-256"""


class Run:
    def __init__(self, args: argparse.Namespace, argv: List[str], settings: Settings):
        self.args = args
        self.settings = settings
        self.output = ensure_directory(args.output)
        self.manifest = RunManifest(
            command=args.command,
            argv=argv,
            config=settings.path,
            seed=getattr(args, "seed", None),
            output=self.output,
        )

    def path(self, name: str) -> str:
        return os.path.join(self.output, name)

    def wrote(self, path: str):
        self.manifest.files[os.path.basename(path)] = checksum(path)

    def write_csv(self, name: str, frame: pd.DataFrame):
        write_csv(self.path(name), frame)
        self.wrote(self.path(name))

    def write_json(self, name: str, payload):
        write_json(self.path(name), payload)
        self.wrote(self.path(name))

    def finish(self):
        write_json(self.path("manifest.json"), asdict(self.manifest))
        log.info(f"Wrote {len(self.manifest.files)} files and the manifest to {self.output}")


def solve_ventilator_command(run: Run):
    coeffs, report = solve_ventilator(run.settings.ventilator)
    run.write_json(
        "ventilator.json",
        {
            "a_ml_s": coeffs.a,
            "b": coeffs.b,
            "c_ml_s": coeffs.c,
            "exhale_amplitude_ml_s": coeffs.amplitude,
            "t_inhale_s": coeffs.t_inhale,
            "period_s": coeffs.period,
            "residuals": list(report.residuals),
            "iterations": report.iterations,
            "printed": {
                "b": report.printed_b,
                "c_ml_s": report.printed_c,
                "relative_difference_b": report.relative_difference_b,
                "relative_difference_c": report.relative_difference_c,
                "residuals": list(report.printed_residuals),
            },
        },
    )


def generate_command(run: Run):
    args = run.args
    synthetic = SyntheticRecording(
        ap=args.ap, si=args.si, lr=args.lr, noise_std=args.noise, duration=args.duration, seed=args.seed
    )
    recording = generate_synthetic(synthetic, run.settings.ventilator)
    write_recording(recording, run.path("displacement.csv"), run.path("tv.csv"))
    run.wrote(run.path("displacement.csv"))
    run.wrote(run.path("tv.csv"))


def fit_command(run: Run):
    aligned = ingest(run.args.displacement, run.args.tv)
    result = fit_displacement_model(
        aligned.tv, aligned.displacement.d_ap, aligned.displacement.d_si, aligned.displacement.d_lr, run.settings.pso
    )

    axes = {}
    for axis in AXES:
        fit = getattr(result, axis)
        if fit is None:
            axes[axis] = None
            continue
        displacement = aligned.displacement.axis(axis)
        try:
            ols = fit_ols(aligned.tv, displacement)
            reference = {"q1": ols[0], "q0": ols[1], "r2": r_squared(ols, aligned.tv, displacement)}
        except SingularDesignError as e:
            log.warning(f"No least-squares reference for {axis.upper()}: {e}")
            reference = None
        axes[axis] = {"q1": fit.q1, "q0": fit.q0, "r2": fit.r2, "iterations": fit.iterations_used, "ols": reference}

    physical = physical_coefficients(run.settings.spine)
    run.write_json(
        "fit.json",
        {
            "samples": len(aligned.t),
            "dropped": aligned.dropped,
            "axes": axes,
            "physical": {"ap_q1": physical.ap.q1, "si_q1": physical.si.q1},
        },
    )


def denoise_command(run: Run):
    signal = run.settings.signal
    aligned = ingest(run.args.displacement, run.args.tv)
    raw = aligned.displacement.d_ap

    scores = None
    if run.args.basis is not None:
        basis = wavelet_basis(run.args.basis)
    else:
        candidates = [wavelet_basis(name) for name in signal.candidates]
        basis, table = select_basis(raw, aligned.tv, candidates, signal.weights, signal.levels, signal.bands)
        scores = table.to_dict(orient="index")

    denoised = DisplacementSeries(
        aligned.t,
        *(denoise(aligned.displacement.axis(axis), basis, signal.levels, signal.bands) for axis in AXES),
    )
    run.write_csv("denoised.csv", denoised.to_frame())
    run.write_json(
        "denoise.json",
        {
            "basis": basis.name,
            "levels": signal.levels,
            "bands": list(signal.bands),
            "ap_metrics": asdict(denoise_metrics(raw, denoised.d_ap, aligned.tv)),
            "scores": scores,
        },
    )


def _trial_config(run: Run):
    cfg = run.settings.trial_config(TrialMode(run.args.mode), run.args.seed)
    if run.args.spindle_rpm is not None:
        cfg = replace(cfg, spindle_rpm=run.args.spindle_rpm)
    return cfg


def simulate_command(run: Run):
    result = run_trial(_trial_config(run))
    run.write_csv("trace.csv", result.trace)
    run.write_json(
        "trial.json",
        {
            "mode": result.mode.value,
            "seed": result.seed,
            "spindle_rpm": result.spindle_rpm,
            "ending": result.ending.value,
            "abort_reason": result.abort_reason,
            "success": result.success,
            "stop_depth_mm": result.stop_depth,
            "residual_mm": result.residual_thickness,
            "f_out_n": result.f_out,
            "f_in_n": result.f_in,
            "breathing_phase_s": result.breathing_phase,
            "end_time_s": result.end_time,
        },
    )
    console.print(
        f"{result.mode.value} seed {result.seed}: [bold]{result.ending.value}[/bold], "
        f"residual {result.residual_thickness:.3f} mm"
    )


def batch_command(run: Run):
    cfg = _trial_config(run)
    summary = run_batch(run.args.n, cfg)
    run.write_csv("summary.csv", summary.to_frame())
    console.print(
        f"{cfg.mode.value}: [bold]{summary.success_rate:.0%}[/bold] of {run.args.n} trials succeeded"
    )

    if run.args.spindle_sweep:
        table = run_spindle_sweep(modes=(cfg.mode,), n=run.args.n, cfg=cfg)
        run.write_csv("sweep.csv", table)


def plot_command(run: Run):
    for path in render(run.args.files, run.output):
        run.wrote(path)


def recognize_command(run: Run):
    _, forces = read_forces(run.args.forces)
    decisions = replay(forces, run.settings.recognizer, run.args.block_size)
    run.write_csv("decisions.csv", decisions)
    if len(decisions) != 0:
        last = decisions.iloc[-1]
        console.print(f"Sample {last['index']}: [bold]{last['decision']}[/bold] in phase {last['phase']}")


COMMANDS: Dict[str, Callable[[Run], None]] = {
    "solve-ventilator": solve_ventilator_command,
    "generate": generate_command,
    "fit": fit_command,
    "denoise": denoise_command,
    "simulate": simulate_command,
    "batch": batch_command,
    "plot": plot_command,
    "recognize": recognize_command,
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {number}")
    return number


def _add_trial_arguments(parser: argparse.ArgumentParser, mode: str):
    parser.add_argument(
        "--mode", choices=[m.value for m in TrialMode], default=mode, help=f"Trial mode (default: {mode})"
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed of the (first) trial (default: 0)")
    parser.add_argument("--spindle-rpm", type=float, default=None, help="Override the configured spindle speed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spine-drill",
        description="Respiration-compensated spine drilling: motion model, force recognition and trials",
    )
    parser.add_argument(
        "--config",
        default=None,
        help="Configuration file (default: $SPINE_DRILL_CONFIG, else built-in defaults)",
    )
    parser.add_argument("--output", default="out", help="Output directory (default: out)")
    parser.add_argument("--verbose", action="store_true", help="Log debug messages")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    commands.add_parser("solve-ventilator", help="Solve the ventilator flow coefficients")

    generate = commands.add_parser("generate", help="Write a synthetic breathing recording")
    generate.add_argument("--duration", type=float, default=30.0, help="Seconds (default: 30)")
    generate.add_argument("--noise", type=float, default=0.3, help="Noise std, in mm (default: 0.3)")
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--ap", type=float, default=4.0, help="Peak AP displacement, in mm (default: 4)")
    generate.add_argument("--si", type=float, default=2.0, help="Peak SI displacement, in mm (default: 2)")
    generate.add_argument("--lr", type=float, default=1.0, help="Peak LR displacement, in mm (default: 1)")

    fit = commands.add_parser("fit", help="Fit the displacement model to a recording")
    fit.add_argument("displacement", help="Displacement CSV (t_s,d_ap_mm,d_si_mm,d_lr_mm)")
    fit.add_argument("tv", help="Tidal volume CSV (t_s,tv_ml)")

    denoise_parser = commands.add_parser("denoise", help="Wavelet de-noise a recording")
    denoise_parser.add_argument("displacement", help="Displacement CSV (t_s,d_ap_mm,d_si_mm,d_lr_mm)")
    denoise_parser.add_argument("tv", help="Tidal volume CSV (t_s,tv_ml)")
    denoise_parser.add_argument("--basis", default=None, help="Use this basis instead of selecting one")

    simulate = commands.add_parser("simulate", help="Run one drilling trial")
    _add_trial_arguments(simulate, TrialMode.STATIONARY.value)

    batch = commands.add_parser("batch", help="Run a batch of seeded drilling trials")
    _add_trial_arguments(batch, TrialMode.COMPENSATED.value)
    batch.add_argument("--n", type=_positive_int, default=100, help="Trials (default: 100)")
    batch.add_argument(
        "--spindle-sweep", action="store_true", help="Also run the batch at every spindle speed into sweep.csv"
    )

    plot = commands.add_parser("plot", help="Render trial traces, batch summaries and sweeps to SVG")
    plot.add_argument("files", nargs="+", help="CSV files written by simulate or batch")

    recognize = commands.add_parser("recognize", help="Replay a recorded force stream through the recognizer")
    recognize.add_argument("forces", help="Force CSV (t_s,force_n)")
    recognize.add_argument(
        "--block-size", type=_positive_int, default=1, help="Raw samples averaged per recognizer sample (default: 1)"
    )
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    try:
        settings = load_settings(args.config)
        job = Run(args, list(argv), settings)
        COMMANDS[args.command](job)
        job.finish()
    except ConfigError as e:
        log.error(f"Bad configuration: {e}")
        return 1
    except DOMAIN_ERRORS as e:
        log.error(str(e))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(run())
