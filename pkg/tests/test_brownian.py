import math
from pathlib import Path

import numpy as np
import pytest
from fixtures import DataDir

from kzclt.brownian.checks import exit_uniformity, ito_isometry_check, tracking_regression
from kzclt.brownian.dump import dump_path_name, dump_paths, load_paths
from kzclt.brownian.frames import GroupBrownian, frame_angle, frame_radius, right_multiply
from kzclt.brownian.sde import (
    EPSILON,
    BrownianPath,
    _PolarStepper,
    eta_series,
    eta_tail_oscillation,
    exit_direction,
    ray_distance,
    simulate_ensemble,
    simulate_path,
    stopping_time,
    tracking_deviation,
)
from kzclt.common.errors import NonFinite, NotHit, TooShort
from kzclt.common.seeds import PathNoise


def test_radial_mode_matches_the_full_process():
    full = simulate_path(seed=7, horizon=5.0, dt=1e-3, t_init=1.0, mode="ito-polar")
    radial = simulate_path(seed=7, horizon=5.0, dt=1e-3, t_init=1.0, mode="radial")
    np.testing.assert_allclose(radial.t, full.t, rtol=0, atol=1e-9)
    np.testing.assert_array_equal(radial.theta, np.zeros_like(radial.theta))


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_eta_is_nondecreasing_in_the_polar_chart(seed):
    path = simulate_path(seed=seed, horizon=2.0, dt=1e-3, t_init=2.0)
    eta = eta_series(path)
    assert eta[0] == 2.0

    below = np.flatnonzero(path.t < EPSILON)
    end = int(below[0]) if len(below) else len(path.t)
    assert np.all(np.diff(eta[:end]) >= -1e-12)


def frozen_radius(t_init, s):
    # u = cosh(2t) solves u' = 2u.
    return 0.5 * np.arccosh(math.cosh(2 * t_init) * np.exp(2 * s))


@pytest.mark.parametrize("t_init", [0.0, 0.5, 2.0], ids=["origin", "t0.5", "t2"])
def test_ode_frozen_closed_form(t_init):
    path = simulate_path(seed=0, horizon=3.0, dt=1e-4, t_init=t_init, mode="ode-frozen")
    # Explicit Euler lags the exponential by about s·dt.
    np.testing.assert_allclose(path.t, frozen_radius(t_init, path.s), atol=1e-3)
    np.testing.assert_array_equal(path.w1, np.zeros_like(path.w1))
    # t - s settles at ½ log(2 cosh(2 t_init)).
    offset = 0.5 * math.log(2 * math.cosh(2 * t_init))
    assert path.t[-1] - path.s[-1] == pytest.approx(offset, abs=0.02)


def test_ode_frozen_worked_values():
    start = simulate_path(seed=0, horizon=1.0, dt=1e-4, t_init=0.5, mode="ode-frozen")
    assert start.t[-1] == pytest.approx(float(frozen_radius(0.5, 1.0)), abs=1e-3)

    origin = simulate_path(seed=0, horizon=3.0, dt=1e-4, mode="ode-frozen")
    # cosh(2T) = e^{2τ}.
    tau = 0.5 * math.log(math.cosh(4.0))
    assert stopping_time(origin, 2.0).tau == pytest.approx(tau, abs=1e-3)


def test_ode_frozen_weak_error_halves_with_dt():
    errors = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        path = simulate_path(seed=0, horizon=2.0, dt=dt, t_init=0.5, mode="ode-frozen")
        errors.append(abs(path.t[-1] - frozen_radius(0.5, 2.0)))
    assert errors[0] > errors[1] > errors[2] > 0
    for coarse, fine in zip(errors, errors[1:]):
        assert 1.8 <= coarse / fine <= 2.2


def test_eta_follows_reflections_through_the_origin():
    stepper = _PolarStepper(3, range(200), 5e-2, 0.3, 0.0, "ito-polar", "paths", 1e-3)
    for _ in range(200):
        stepper.step()
        assert np.all(stepper.t >= 0)
        np.testing.assert_allclose(stepper.eta, stepper.eta_exact, atol=1e-9)


@pytest.mark.slow
def test_eta_tail_oscillation_shrinks():
    medians = eta_tail_oscillation([10.0, 20.0, 40.0], n_paths=1000, dt=1e-2, seed=4)
    assert medians[10.0] > medians[20.0] > medians[40.0] >= 0
    assert medians[10.0] < 1e-6


def make_path(t, theta=None) -> BrownianPath:
    t = np.asarray(t, dtype=float)
    n = len(t)
    return BrownianPath(
        s=np.arange(n) * 0.5,
        t=t,
        theta=np.zeros(n) if theta is None else np.asarray(theta, dtype=float),
        w1=np.linspace(0.0, 1.0, n),
        w2=np.zeros(n),
        dt=0.5,
        mode="ito-polar",
        seed=0,
        index=0,
    )


def test_stopping_time_interpolates():
    path = make_path([0.0, 0.4, 1.2, 2.0], theta=[0.0, 0.0, 6.2, 0.1])
    record = stopping_time(path, 1.0)
    assert record.step == 2
    assert record.weight == pytest.approx(0.75)
    assert record.tau == pytest.approx(0.875)
    assert record.w1 == pytest.approx(1 / 3 + 0.75 / 3)

    # The angle is interpolated across the branch cut.
    edge = stopping_time(path, 1.6)
    unwrapped = 6.2 + 0.5 * (0.1 + 2 * math.pi - 6.2)
    assert edge.theta == pytest.approx(unwrapped % (2 * math.pi))


def test_stopping_time_at_the_start():
    record = stopping_time(make_path([3.0, 3.5]), 2.0)
    assert record.tau == 0.0
    assert record.step == 0


def test_stopping_time_not_hit():
    with pytest.raises(NotHit):
        stopping_time(make_path([0.0, 0.4, 1.2, 2.0]), 3.0)


def test_exit_direction_needs_a_long_path():
    with pytest.raises(TooShort):
        exit_direction(make_path([0.0, 0.4, 1.2, 2.0]))


@pytest.mark.parametrize("index", [0, 1, 2])
@pytest.mark.parametrize("t_init", [0.0, 1.0], ids=["origin", "t1"])
def test_exit_direction_rotates_with_the_start(index, t_init):
    shift = 1.3
    params = dict(seed=3, horizon=25.0, dt=1e-2, t_init=t_init, index=index)
    base = exit_direction(simulate_path(**params))
    rotated = exit_direction(simulate_path(theta_init=shift, **params))
    offset = (rotated - base - shift + math.pi) % (2 * math.pi) - math.pi
    assert offset == pytest.approx(0.0, abs=1e-9)


def test_radial_paths_exit_where_they_start():
    path = simulate_path(seed=5, horizon=25.0, dt=1e-2, t_init=1.0, mode="radial", theta_init=1.0)
    assert exit_direction(path) == pytest.approx(1.0, abs=1e-12)
    for radius in (5.0, 10.0):
        assert tracking_deviation(path, radius) == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize(
    "radius, delta, expected",
    [
        (3.0, 0.0, 0.0),
        (1.0, math.pi / 2, 1.0),
        (3.0, math.pi, 3.0),
        (3.0, -2.5, 3.0),
        (2.0, 0.1, 0.5 * math.asinh(math.sinh(4.0) * math.sin(0.1))),
        (2.0, 2 * math.pi - 0.1, 0.5 * math.asinh(math.sinh(4.0) * math.sin(0.1))),
    ],
    ids=["on-ray", "right-angle", "opposite", "obtuse", "near", "wrapped"],
)
def test_ray_distance(radius, delta, expected):
    assert float(ray_distance(radius, delta)) == pytest.approx(expected, abs=1e-12)


def ensemble(**kwargs):
    params = dict(seed=11, n_paths=40, horizon=3.0, dt=1e-2, radii=[1.0, 2.0], chunk_size=8)
    params.update(kwargs)
    return simulate_ensemble(**params)


def test_ensemble_is_independent_of_threads():
    single = ensemble(threads=1)
    pooled = ensemble(threads=4)
    for radius in single.radii:
        np.testing.assert_array_equal(single.tau[radius], pooled.tau[radius])
        np.testing.assert_array_equal(single.w1_tau[radius], pooled.w1_tau[radius])
    np.testing.assert_array_equal(single.t_final, pooled.t_final)
    np.testing.assert_array_equal(single.exit_theta, pooled.exit_theta)


def test_ensemble_is_independent_of_chunking():
    small = ensemble(chunk_size=8)
    large = ensemble(chunk_size=40)
    for radius in small.radii:
        np.testing.assert_allclose(small.tau[radius], large.tau[radius], equal_nan=True)
    np.testing.assert_allclose(small.t_final, large.t_final)


def test_ensemble_matches_single_paths():
    result = ensemble(n_paths=4, chunk_size=4, radii=[1.0], max_extensions=0)
    hit = result.hit(1.0)
    for row, index in enumerate(result.indices):
        path = simulate_path(seed=11, horizon=3.0, dt=1e-2, index=int(index))
        assert result.t_final[row] == pytest.approx(path.t[-1], abs=1e-9)
        if hit[row]:
            assert result.tau[1.0][row] == pytest.approx(stopping_time(path, 1.0).tau, abs=1e-9)
        else:
            with pytest.raises(NotHit):
                stopping_time(path, 1.0)


def test_ensemble_extends_the_horizon():
    result = ensemble(horizon=0.5, radii=[3.0], max_extensions=6)
    assert result.retries > 0
    result.require_hits(3.0)


def test_ensemble_first_index_shifts_the_streams():
    whole = ensemble(n_paths=10, chunk_size=10)
    tail = ensemble(n_paths=5, chunk_size=5, first_index=5)
    np.testing.assert_allclose(whole.t_final[5:], tail.t_final)


def test_ito_isometry():
    check = ito_isometry_check(lambda s: s, n_paths=2000, horizon=1.0, dt=1e-2, seed=3)
    assert check.target == pytest.approx(sum((i * 1e-2) ** 2 for i in range(100)) * 1e-2)
    assert check.z_score < 4


@pytest.mark.slow
@pytest.mark.parametrize(
    "f, target",
    [(lambda s: 1.0, 1.0), (np.sin, 0.5 - math.sin(2.0) / 4)],
    ids=["constant", "sine"],
)
def test_ito_isometry_at_scale(f, target):
    check = ito_isometry_check(f, n_paths=100_000, horizon=1.0, dt=1e-3, seed=12)
    # The left-point Riemann sum of f² converges at first order.
    assert check.target == pytest.approx(target, abs=2e-3)
    assert check.z_score <= 3


def test_tracking_regression_recovers_a_log_law():
    radii = [10.0, 20.0, 40.0, 80.0]
    fit = tracking_regression(radii, [0.25 * math.log(r) + 0.1 for r in radii])
    assert fit.slope == pytest.approx(0.25)
    assert fit.intercept == pytest.approx(0.1)
    np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-12)
    assert fit.predict(160.0) == pytest.approx(0.25 * math.log(160.0) + 0.1)


def test_group_brownian_first_step_is_a_geodesic_step():
    dt = 1e-2
    walk = GroupBrownian(seed=5, indices=range(6), dt=dt)
    walk.step()
    xi = PathNoise(5, "paths", range(6)).next()
    np.testing.assert_allclose(walk.radius(), np.hypot(xi[:, 0], xi[:, 1]) * math.sqrt(dt))


def test_group_brownian_stays_in_sl2():
    walk = GroupBrownian(seed=5, indices=range(6), dt=1e-2)
    for _ in range(250):
        walk.step()
    a, b, c, d = walk.frames
    np.testing.assert_allclose(a * d - b * c, 1.0, rtol=1e-9)
    np.testing.assert_allclose(frame_radius(walk.frames), walk.radius(), rtol=1e-9)
    offset = (frame_angle(walk.frames) - walk.angle() + math.pi) % (2 * math.pi) - math.pi
    np.testing.assert_allclose(offset, 0.0, atol=1e-9)


def test_group_brownian_matches_the_matrix_product():
    walk = GroupBrownian(seed=8, indices=range(5), dt=1e-2)
    ones, zeros = np.ones(5), np.zeros(5)
    frames = (ones, zeros, zeros, ones)
    for _ in range(100):
        frames = right_multiply(frames, *walk.step())
    for expected, actual in zip(frames, walk.frames):
        np.testing.assert_allclose(actual, expected, rtol=1e-9, atol=1e-12)


def test_group_brownian_stays_finite_far_out():
    dt, horizon = 1e-2, 50.0
    walk = GroupBrownian(seed=9, indices=range(200), dt=dt)
    for _ in range(int(round(horizon / dt))):
        walk.step()
    assert np.all(np.isfinite(walk.radius()))
    assert np.all(np.isfinite(walk.angle()))
    assert np.all(walk.radius() > 0)
    assert 0.9 <= walk.radius().mean() / horizon <= 1.1


def test_group_brownian_rejects_non_finite_state():
    walk = GroupBrownian(seed=5, indices=range(3), dt=1e-2)
    walk.step()
    walk.t[1] = math.nan
    with pytest.raises(NonFinite):
        walk.step()


@pytest.mark.slow
def test_group_brownian_radial_law_matches_polar():
    n, dt, horizon = 2000, 1e-3, 2.0
    walk = GroupBrownian(seed=21, indices=range(n), dt=dt)
    for _ in range(int(round(horizon / dt))):
        walk.step()
    polar = simulate_ensemble(seed=21, n_paths=n, horizon=horizon, dt=dt)
    assert abs(walk.radius().mean() - polar.t_final.mean()) < 0.05


@pytest.mark.slow
def test_exit_angles_are_uniform():
    result = simulate_ensemble(seed=1, n_paths=10_000, horizon=15.0, dt=1e-2, threads=4)
    exited = np.isfinite(result.exit_theta)
    assert exited.mean() > 0.8
    assert exit_uniformity(result.exit_theta, bins=32).p_value >= 0.01


@pytest.mark.slow
def test_stopping_time_statistics():
    # τ_T is close to the first passage of a unit-drift Brownian motion, so its mean is about T
    # and its standard deviation about √T.
    radius = 50.0
    result = simulate_ensemble(
        seed=2, n_paths=2000, horizon=1.25 * radius, dt=1e-2, radii=[radius], threads=4
    )
    result.require_hits(radius)
    tau = result.tau[radius]
    assert 0.93 <= (tau / radius).mean() <= 1.01
    assert 0.9 <= tau.std(ddof=1) / math.sqrt(radius) <= 1.1


@pytest.mark.parametrize("compress", [False, True], ids=["raw", "zst"])
def test_dump_paths(compress):
    data_dir = DataDir(f"test_dump_paths_{compress}")
    path = dump_paths(
        Path(data_dir.path),
        seed=4,
        n_paths=3,
        horizon=1.0,
        dt=1e-2,
        record_every=10,
        t_init=0.5,
        compress=compress,
    )
    assert path.name == dump_path_name(compress)
    raw = data_dir.read_zst(path.name) if compress else data_dir.read_bytes(path.name)
    assert len(raw) == 3 * 11 * 3 * 8

    records = load_paths(path, records_per_path=11)
    assert records.shape == (3, 11, 3)
    np.testing.assert_allclose(records[0, :, 0], np.arange(11) * 0.1)
    for index in range(3):
        single = simulate_path(seed=4, horizon=1.0, dt=1e-2, t_init=0.5, index=index)
        np.testing.assert_allclose(records[index, :, 1], single.t[::10], atol=1e-9)
        assert np.all((records[index, :, 2] >= 0) & (records[index, :, 2] < 2 * math.pi))


def test_ensemble_tracking_matches_single_paths():
    radii = [3.0, 6.0]
    result = ensemble(n_paths=8, chunk_size=8, horizon=15.0, radii=radii, max_extensions=0)
    exited = np.isfinite(result.exit_theta)
    assert exited.any()
    for row, index in enumerate(result.indices):
        if not exited[row]:
            continue
        path = simulate_path(seed=11, horizon=15.0, dt=1e-2, index=int(index))
        for radius in radii:
            if not result.hit(radius)[row]:
                continue
            expected = tracking_deviation(path, radius)
            assert result.tracking(radius)[row] == pytest.approx(expected, rel=1e-6, abs=1e-9)


@pytest.mark.slow
def test_tracking_stays_logarithmic():
    radii = [10.0, 20.0, 40.0]
    result = simulate_ensemble(
        seed=6, n_paths=500, horizon=1.25 * radii[-1], dt=1e-2, radii=radii, threads=4
    )
    medians = [float(np.nanmedian(result.tracking(radius))) for radius in radii]
    assert max(medians) <= 5
    assert tracking_regression(radii, medians).slope < 1
