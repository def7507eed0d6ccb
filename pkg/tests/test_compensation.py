import numpy as np
import pytest
from scipy.integrate import trapezoid

from spine_drill.compensation import (
    RAMP_TIME,
    AbortReason,
    CompensationPlan,
    EmptySeriesError,
    InfeasibleProfileError,
    MonitorConfig,
    monitor,
    segment_axis,
    segment_displacement,
    trapezoid_profile,
)
from spine_drill.motion_model import DisplacementSeries


def sinusoid(t):
    return 2 * np.sin(2 * np.pi * 0.2 * t)


def integrate_velocity(segment, rate=10_000):
    t = segment.t_start + np.linspace(0, segment.duration, int(round(segment.duration * rate)) + 1)
    return trapezoid(segment.velocity(t), t)


def test_zero_distance():
    segment = trapezoid_profile(0.0)
    assert segment.peak_velocity == 0.0
    assert segment.acceleration == 0.0
    t = np.linspace(0, 0.125, 50)
    assert np.all(segment.velocity(t) == 0)
    assert np.all(segment.displacement(t) == 0)


def test_profiles_are_mirrored():
    t = np.linspace(-0.01, 0.14, 301)
    forward = trapezoid_profile(0.3)
    backward = trapezoid_profile(-0.3)
    np.testing.assert_array_equal(backward.velocity(t), -forward.velocity(t))
    np.testing.assert_array_equal(backward.displacement(t), -forward.displacement(t))


def test_short_segment_profile():
    segment = trapezoid_profile(0.5, 0.125)
    assert segment.ramp_time == pytest.approx(0.0125)
    assert segment.peak_velocity == pytest.approx(0.5 / (0.125 - 0.0125))
    assert segment.acceleration == pytest.approx(10 * segment.peak_velocity / 0.125)
    assert integrate_velocity(segment) == pytest.approx(0.5, abs=1e-9)
    assert segment.velocity(0.0) == 0.0
    assert segment.velocity(0.125) == 0.0
    assert segment.displacement(0.125) == pytest.approx(0.5, abs=1e-12)


def test_long_segment_keeps_the_ramp_rule():
    segment = trapezoid_profile(1.0, 0.5, t_start=2.0)
    assert segment.ramp_time == RAMP_TIME
    assert segment.acceleration == pytest.approx(10 * segment.peak_velocity)
    assert integrate_velocity(segment) == pytest.approx(1.0, abs=1e-9)
    assert segment.displacement(1.0) == 0.0
    assert segment.displacement(3.0) == pytest.approx(1.0)


def test_random_profiles_integrate_to_their_distance():
    rng = np.random.default_rng(0)
    for distance in rng.uniform(-1, 1, 20):
        assert integrate_velocity(trapezoid_profile(float(distance))) == pytest.approx(distance, abs=1e-9)


def test_infeasible_profiles():
    with pytest.raises(InfeasibleProfileError):
        trapezoid_profile(0.1, 0.0)
    with pytest.raises(InfeasibleProfileError):
        trapezoid_profile(0.1, -0.125)
    with pytest.raises(InfeasibleProfileError):
        trapezoid_profile(float("nan"))


def test_constant_prediction_needs_no_motion():
    t = np.arange(0, 3, 1 / 8)
    plan = segment_axis(t, np.full(len(t), 1.7))
    assert all(segment.distance == 0 for segment in plan.segments)
    np.testing.assert_allclose(plan.offset(np.linspace(0, 3, 100)), 1.7)
    assert np.all(plan.velocity(np.linspace(0, 3, 100)) == 0)


def test_linear_drift():
    t = np.arange(0, 3, 1 / 64)
    plan = segment_axis(t, 0.8 * t)
    assert len(plan.segments) == int((t[-1] - t[0]) / 0.125)
    for segment in plan.segments:
        assert segment.distance == pytest.approx(0.125 * 0.8, abs=1e-12)


def test_sinusoid_is_tracked():
    t = np.arange(0, 10, 1 / 64)
    plan = segment_axis(t, sinusoid(t))
    boundaries = plan.t_start + plan.period * np.arange(len(plan.segments) + 1)
    assert np.abs(plan.offset(boundaries) - sinusoid(boundaries)).max() < 0.05
    dense = np.linspace(plan.t_start, plan.t_end, 20_001)
    assert np.abs(plan.offset(dense) - sinusoid(dense)).max() < 0.05


def test_plan_is_continuous_and_rests_at_boundaries():
    t = np.arange(0, 5, 1 / 64)
    plan = segment_axis(t, sinusoid(t))
    boundaries = plan.t_start + plan.period * np.arange(1, len(plan.segments))
    np.testing.assert_allclose(plan.offset(boundaries - 1e-9), plan.offset(boundaries + 1e-9), atol=1e-7)
    np.testing.assert_allclose(plan.velocity(boundaries), 0.0, atol=1e-9)

    dense = np.linspace(plan.t_start, plan.t_end, 80_001)
    numeric = np.gradient(plan.offset(dense), dense)
    assert np.abs(numeric - plan.velocity(dense)).max() < 0.05


def test_plan_outside_its_span():
    t = np.arange(0, 2, 1 / 8)
    plan = segment_axis(t, 0.5 * t + 1)
    assert plan.offset(-1.0) == pytest.approx(1.0)
    assert plan.offset(100.0) == pytest.approx(1.0 + 0.5 * (plan.t_end - plan.t_start))
    assert plan.velocity(100.0) == 0.0


def test_every_axis_is_segmented():
    t = np.arange(0, 2, 1 / 8)
    series = DisplacementSeries(t, 0.4 * t, -0.2 * t, np.zeros(len(t)))
    plans = segment_displacement(series)
    assert set(plans) == {"ap", "si", "lr"}
    assert plans["si"].segments[0].distance == pytest.approx(-0.025)
    assert plans["lr"].segments[0].distance == 0.0


def test_empty_series():
    with pytest.raises(EmptySeriesError):
        segment_axis([], [])
    with pytest.raises(EmptySeriesError):
        segment_axis([0.0], [1.0])
    with pytest.raises(EmptySeriesError):
        segment_axis([0.0, 0.1], [1.0, 1.0])
    with pytest.raises(EmptySeriesError):
        CompensationPlan(start=0.0, segments=())


def test_sparse_series_is_rejected():
    with pytest.raises(ValueError):
        segment_axis([0.0, 0.5, 1.0], [0.0, 1.0, 2.0])


def test_monitor_decisions():
    assert monitor(0.5, 5.0) is None
    assert monitor(1.3, 5.0) == AbortReason.POSITION_DEVIATION
    assert monitor(-1.3, 5.0) == AbortReason.POSITION_DEVIATION
    assert monitor(0.5, 11.0) == AbortReason.FORCE_LIMIT
    assert monitor(1.2, 10.0) is None


def test_monitor_is_monotone():
    errors = np.linspace(0, 2.5, 26)
    forces = np.linspace(0, 20, 41)
    for e in errors:
        for f in forces:
            if monitor(e, f) is not None:
                assert monitor(e + 0.1, f) is not None
                assert monitor(e, f + 0.5) is not None


def test_invalid_monitor_config():
    with pytest.raises(ValueError):
        MonitorConfig(h1=0.0)
    with pytest.raises(ValueError):
        MonitorConfig(h2=-1.0)
