import numpy as np
import pytest

from spine_drill.fitting import (
    DegenerateDataError,
    PsoConfig,
    SingularDesignError,
    fit_displacement_model,
    fit_ols,
    fit_pso,
    r_squared,
)
from spine_drill.motion_model import DisplacementModel


def noisy_line(seed, n=200, q1=0.008, q0=1.5, noise=0.3):
    rng = np.random.default_rng(seed)
    tv = rng.uniform(0, 500, n)
    return tv, q1 * tv + q0 + rng.normal(0, noise, n)


def test_r_squared_definition():
    tv = np.array([0.0, 100.0, 200.0, 300.0])
    d = 0.01 * tv + 2
    assert r_squared((0.01, 2.0), tv, d) == pytest.approx(1.0, abs=1e-15)
    assert r_squared((0.0, d.mean()), tv, d) == pytest.approx(0.0, abs=1e-15)
    assert r_squared((0.02, 0.0), tv, d) < 1


def test_r_squared_degenerate():
    with pytest.raises(DegenerateDataError):
        r_squared((1.0, 0.0), [1.0, 2.0, 3.0], [4.0, 4.0, 4.0])
    with pytest.raises(DegenerateDataError):
        r_squared((1.0, 0.0), [1.0], [4.0])


def test_ols_interpolates_two_points():
    q1, q0 = fit_ols([100.0, 300.0], [1.0, 2.0])
    assert (q1, q0) == pytest.approx((0.005, 0.5))
    assert r_squared((q1, q0), [100.0, 300.0], [1.0, 2.0]) == pytest.approx(1.0)


def test_ols_zero_covariance():
    q1, q0 = fit_ols([-1.0, 0.0, 1.0], [1.0, 0.0, 1.0])
    assert q1 == 0.0
    assert q0 == pytest.approx(2 / 3)


def test_ols_singular_design():
    with pytest.raises(SingularDesignError):
        fit_ols([5.0, 5.0, 5.0], [1.0, 2.0, 3.0])


def test_pso_recovers_noiseless_line():
    tv = np.linspace(0, 500, 120)
    d = 0.008 * tv + 0.5
    fit = fit_pso(tv, d, PsoConfig(seed=3))
    assert fit.r2 >= 1 - 1e-6
    assert fit.q1 == pytest.approx(0.008, rel=1e-3)
    assert fit.iterations_used <= 2000


def test_pso_is_deterministic():
    tv, d = noisy_line(11)
    assert fit_pso(tv, d, PsoConfig(seed=5)) == fit_pso(tv, d, PsoConfig(seed=5))


def test_pso_agrees_with_ols():
    agreeing = 0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        tv, d = noisy_line(seed, q1=rng.uniform(0.002, 0.01), q0=rng.uniform(-5, 5))
        ols = r_squared(fit_ols(tv, d), tv, d)
        pso = fit_pso(tv, d, PsoConfig(seed=seed)).r2
        assert ols >= pso - 1e-12
        agreeing += abs(ols - pso) < 1e-3
    assert agreeing >= 48


def test_pso_invariants():
    tv, d = noisy_line(2)
    low, high = (-0.1, 0.1), (-20.0, 20.0)
    seen = []

    def check(iteration, positions, best):
        assert np.all(positions[:, 0] >= low[0]) and np.all(positions[:, 0] <= low[1])
        assert np.all(positions[:, 1] >= high[0]) and np.all(positions[:, 1] <= high[1])
        seen.append(iteration)

    fit = fit_pso(tv, d, PsoConfig(search_bounds=(low, high)), callback=check)
    assert seen == list(range(1, fit.iterations_used + 1))
    assert len(fit.history) == fit.iterations_used
    assert all(a <= b for a, b in zip(fit.history, fit.history[1:]))
    assert fit.history[-1] == fit.r2


def test_pso_ignores_data_order():
    tv, d = noisy_line(8)
    order = np.random.default_rng(0).permutation(len(tv))
    first = fit_pso(tv, d, PsoConfig(seed=1))
    second = fit_pso(tv[order], d[order], PsoConfig(seed=1))
    assert first.r2 == pytest.approx(second.r2, abs=1e-9)


def test_early_stop():
    tv, d = noisy_line(4)
    fit = fit_pso(tv, d, PsoConfig(patience=20, max_iterations=2000))
    assert fit.iterations_used < 2000


def test_invalid_pso_config():
    with pytest.raises(ValueError):
        PsoConfig(population=1)
    with pytest.raises(ValueError):
        PsoConfig(search_bounds=((0.0, 0.0), (-1.0, 1.0)))
    with pytest.raises(ValueError):
        PsoConfig(search_bounds=((0.0, np.inf), (-1.0, 1.0)))


def test_fit_displacement_model():
    tv, ap = noisy_line(0, q1=0.008, q0=0.0, noise=0.05)
    rng = np.random.default_rng(1)
    si = 0.004 * tv - 0.3 + rng.normal(0, 0.05, len(tv))
    lr = 0.002 * tv + rng.normal(0, 0.05, len(tv))
    result = fit_displacement_model(tv, ap, si, lr)
    model = result.model
    assert isinstance(model, DisplacementModel)
    assert model.ap.q1 == pytest.approx(0.008, rel=0.05)
    assert model.si.q1 == pytest.approx(0.004, rel=0.05)
    assert model.si.q0 == pytest.approx(-0.3, abs=0.05)
    assert model.lr.q1 == pytest.approx(0.002, rel=0.1)
    assert all(fit.r2 <= 1 for fit in (result.ap, result.si, result.lr))
    assert result.iterations_used >= result.ap.iterations_used


def test_flat_axis_is_skipped():
    tv, ap = noisy_line(2, q1=0.008, q0=0.0, noise=0.05)
    si = 0.004 * tv
    result = fit_displacement_model(tv, ap, si, np.zeros_like(tv))
    assert result.lr is None
    assert result.model.lr.q1 == result.model.lr.q0 == 0.0
    assert result.model.si.q1 == pytest.approx(0.004, rel=1e-3)
    assert result.iterations_used == max(result.ap.iterations_used, result.si.iterations_used)

    with pytest.raises(DegenerateDataError):
        fit_displacement_model(tv, np.ones_like(tv), np.ones_like(tv), np.ones_like(tv))
