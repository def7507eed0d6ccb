import numpy as np
import pytest

from spine_drill.recognition import (
    Calibration,
    CalibrationTimeoutError,
    Decision,
    Phase,
    Recognizer,
    RecognizerConfig,
    RecognizerState,
    block_average,
    calibrate,
    fail,
    feature,
    modified_feature,
    moving_average,
    replay,
    step,
)

CFG = RecognizerConfig()


def drilling_trace(seed=0, outer=48, cancellous=120, inner=17):
    """Recognizer samples for one pass through a layered bone at constant feed."""

    rng = np.random.default_rng(seed)
    levels = np.concatenate(
        [
            np.full(5, 0.05),
            np.full(outer, 3.5),
            np.full(cancellous, 0.75),
            np.full(inner, 3.5),
            np.full(20, 0.05),
        ]
    )
    noise = np.where(levels == 0.75, 0.03, 0.01)
    return np.maximum(levels + rng.normal(0, 1, len(levels)) * noise, 0.0)


def calibrated_state():
    return RecognizerState(phase=Phase.OUTER_BREAKTHROUGH, key_point=2)


def test_moving_average_values():
    np.testing.assert_allclose(moving_average(np.full(30, 2.5), 10), 2.5)
    stream = np.arange(1.0, 21.0)
    np.testing.assert_array_equal(moving_average(stream, 1), stream)
    averaged = moving_average(stream, 10)
    assert averaged[19] == pytest.approx(15.5)
    assert averaged[0] == 1.0
    assert averaged[3] == pytest.approx(2.5)
    with pytest.raises(ValueError):
        moving_average(stream, 0)


def test_block_average():
    raw = np.arange(10.0)
    np.testing.assert_allclose(block_average(raw, 4), [1.5, 5.5])
    np.testing.assert_allclose(block_average(raw, 1), raw)


def test_calibration_on_a_step_trace():
    f_bar = np.concatenate([np.linspace(0, 5, 11), np.full(10, 1.0)])
    cal = calibrate(f_bar, RecognizerConfig(drop_ratio=0.5, min_calibration_force=1.0))
    assert cal.k == 11
    assert cal.d == pytest.approx(5.0)
    assert cal.f_max == 5.0
    assert cal.f_min == 0.0


def test_calibration_times_out():
    with pytest.raises(CalibrationTimeoutError):
        calibrate(np.linspace(0, 5, 100))
    with pytest.raises(CalibrationTimeoutError) as error:
        calibrate(np.linspace(0, 5, 1000), RecognizerConfig(calibration_budget=50))
    assert error.value.samples == 50


def test_calibration_needs_enough_force():
    f_bar = np.concatenate([np.linspace(0, 0.5, 10), np.full(10, 0.1)])
    with pytest.raises(CalibrationTimeoutError):
        calibrate(f_bar)


def brute_force_k(f_bar, cfg):
    for i in range(len(f_bar)):
        peak = f_bar[: i + 1].max()
        if f_bar[i] < cfg.drop_ratio * peak and peak > cfg.min_calibration_force:
            return i
    return None


def test_calibration_matches_brute_force():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        trace = drilling_trace(seed, outer=int(rng.integers(20, 60)))
        f_bar = moving_average(trace, CFG.window)
        cal = calibrate(f_bar, CFG)
        assert cal.k == brute_force_k(f_bar, CFG)
        assert cal.d == pytest.approx(cal.f_max - f_bar[: cal.k + 1].min())
        assert cal.d > 0


def test_feature_branches():
    cal = Calibration(k=0, d=2.0, f_max=2.5, f_min=0.5)
    assert feature(0.5 + 2.0, cal) == pytest.approx(2.0)
    assert feature(0.5 + 1.0, cal) == pytest.approx(0.125 * 2.0)
    assert feature(0.5 - 0.4, cal) == 0.0
    assert feature(10.0, cal) == 2.0


def test_feature_is_monotone_and_bounded():
    cal = Calibration(k=0, d=3.0, f_max=3.2, f_min=0.2)
    f_bar = np.linspace(-1, 6, 500)
    a = feature(f_bar, cal)
    assert np.all(np.diff(a) >= 0)
    assert a.min() >= 0 and a.max() <= cal.d
    a_star = modified_feature(a, cal)
    assert a_star.max() <= CFG.gain * cal.d


def test_modified_feature_branches():
    cal = Calibration(k=0, d=2.0, f_max=2.0, f_min=0.0)
    assert modified_feature(0.4 * 2.0, cal) == pytest.approx(0.8)
    assert modified_feature(0.6 * 2.0, cal) == pytest.approx(1.2 * 1.2)
    assert modified_feature(2.0, cal) == pytest.approx(1.2 * 2.0)


def run(sequence, state=None, cfg=CFG):
    state = state or calibrated_state()
    decisions = []
    for a_star in sequence:
        state, decision = step(state, a_star, cfg)
        decisions.append(decision)
    return state, decisions


def test_leaving_the_outer_layer():
    state, decisions = run([0.9, 0.3])
    assert state.phase == Phase.CANCELLOUS
    assert state.key_point == 3
    assert decisions == [Decision.CONTINUE, Decision.CONTINUE]


def test_stop_after_confirmation():
    state, decisions = run([0.9, 0.3, 0.75, 0.75, 0.75])
    assert state.phase == Phase.STOP_ISSUED
    assert decisions[-1] == Decision.STOP
    assert decisions[:-1] == [Decision.CONTINUE] * 4
    assert state.history == (0.9, 0.3, 0.75, 0.75, 0.75)


def test_no_threshold_crossing_never_stops():
    rng = np.random.default_rng(0)
    state, decisions = run(rng.uniform(0.41, 0.69, 500))
    assert state.phase == Phase.OUTER_BREAKTHROUGH
    assert set(decisions) == {Decision.CONTINUE}

    state, decisions = run(rng.uniform(0.41, 0.69, 500), state=run([0.1])[0])
    assert state.phase == Phase.CANCELLOUS
    assert set(decisions) == {Decision.CONTINUE}


def test_confirmations_reset_below_the_gate():
    state, decisions = run([0.1, 0.75, 0.72, 0.65, 0.75, 0.75])
    assert state.phase == Phase.INNER_RISING
    assert state.confirmations == 2
    state, decision = step(state, 0.8)
    assert state.phase == Phase.STOP_ISSUED
    assert decision == Decision.STOP


def test_drop_before_confirmation_fails():
    state, decisions = run([0.1, 0.75, 0.9, 0.2])
    assert state.phase == Phase.FAILED
    assert state.key_point == 5
    assert decisions[-1] == Decision.FAIL
    assert step(state, 0.9)[1] == Decision.FAIL


def test_terminal_phases_stay_put():
    stopped, _ = run([0.1, 0.8, 0.8, 0.8])
    assert step(stopped, 0.0) == (stopped, Decision.STOP)
    assert fail(stopped, "late abort") == (stopped, Decision.STOP)

    failed, decision = fail(calibrated_state(), "monitor")
    assert decision == Decision.FAIL
    assert failed.reason == "monitor"


def test_step_requires_calibration():
    with pytest.raises(ValueError):
        step(RecognizerState(), 0.5)


def test_invalid_configs():
    for kwargs in [{"window": 0}, {"gain": 1.0}, {"c1": 1.0}, {"drop_ratio": 0}, {"min_calibration_force": 0}]:
        with pytest.raises(ValueError):
            RecognizerConfig(**kwargs)


def stop_index(forces):
    log = replay(forces)
    assert log["decision"].iloc[-1] == "stop"
    return int(log["index"].iloc[-1])


def test_replay_stops_in_the_inner_layer():
    trace = drilling_trace()
    log = replay(trace)
    assert list(log.columns) == ["index", "f_bar", "a_star", "phase", "decision"]
    stop = stop_index(trace)
    inner_start = 5 + 48 + 120
    assert inner_start < stop < inner_start + 17
    assert log["phase"].iloc[0] == "calibrating"
    assert np.isnan(log["a_star"].iloc[0])


@pytest.mark.parametrize("scale", [0.5, 2.0, 10.0])
def test_stop_index_is_scale_invariant(scale):
    for seed in range(5):
        trace = drilling_trace(seed)
        assert stop_index(trace * scale) == stop_index(trace)


def test_streaming_matches_offline_calibration():
    trace = drilling_trace(3)
    recognizer = Recognizer(CFG)
    for force in trace:
        recognizer.push(force)
        if recognizer.calibration is not None:
            break
    assert recognizer.calibration.k == calibrate(moving_average(trace, CFG.window), CFG).k


def test_recognizer_abort_latches():
    recognizer = Recognizer(CFG)
    trace = drilling_trace()
    for force in trace[:80]:
        recognizer.push(force)
    assert recognizer.abort("force limit") == Decision.FAIL
    record = recognizer.push(3.5)
    assert record.phase == Phase.FAILED
    assert record.decision == Decision.FAIL


def test_replay_blocks_raw_forces():
    trace = drilling_trace()
    raw = np.repeat(trace, 4)
    assert stop_index(trace) == int(replay(raw, block_size=4)["index"].iloc[-1])
