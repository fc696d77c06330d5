import math
from pathlib import Path

import numpy as np
import pytest
from fixtures import DataDir

import kzclt.clt.samples as sampling
from kzclt.brownian.sde import simulate_ensemble
from kzclt.clt.publishers import (
    CSVExport,
    JSONExport,
    read_json,
    read_samples,
    write_dat,
    write_json,
)
from kzclt.clt.samples import (
    CltSampleSet,
    calibrate_lambda,
    circle_averaged_drift,
    clt_samples,
)
from kzclt.clt.variance import (
    VarianceReport,
    covariance_check,
    covariance_predictor,
    coverage_check,
    interval_discrepancy,
    positivity_check,
    stopped_covariance,
    stopped_vs_fixed_check,
    variance_estimate,
    variance_relation,
)
from kzclt.cocycles.evolve import DriverSpec
from kzclt.cocycles.models import SyntheticGaussian, TautologicalModel, origami_model
from kzclt.cocycles.origami import builtin_origami
from kzclt.common.errors import NonFinite, TooShort


@pytest.fixture(scope="module")
def h2_complement():
    return origami_model(builtin_origami("h2"), subspace="complement")


def synthetic_samples(n=2000, variance=2.0, seed=1) -> CltSampleSet:
    model = SyntheticGaussian(variance, exponent=0.5)
    return clt_samples(model, DriverSpec("geodesic"), n, 100.0, 0.5, seed=seed)


def report(variance, low, high) -> VarianceReport:
    return VarianceReport(variance, low, high, ks=0.01, ks_pvalue=0.5, n=1000, horizon=10.0)


def test_synthetic_variance_is_recovered():
    samples = synthetic_samples()
    assert samples.n == 2000
    estimate = variance_estimate(samples, resamples=500)
    assert estimate.variance == pytest.approx(2.0, abs=0.25)
    assert estimate.ci_low <= estimate.variance <= estimate.ci_high
    assert estimate.ks_pvalue >= 0.001
    assert not estimate.degenerate


def test_tautological_geodesic_is_degenerate():
    samples = clt_samples(TautologicalModel(), DriverSpec("geodesic"), 200, 50.0, 1.0)
    np.testing.assert_array_equal(samples.values, 0.0)
    estimate = variance_estimate(samples)
    assert estimate.degenerate
    assert estimate.variance == 0.0
    assert estimate.ci == (0.0, 0.0)
    assert estimate.ks == 0.0
    assert estimate.ks_pvalue == 1.0


def test_ks_is_measured_against_the_fitted_gaussian():
    values = np.random.default_rng(2).normal(0.5, 1.0, size=5000)
    samples = CltSampleSet(
        values=values, driver="geodesic", horizon=50.0, k=1, lambda_ref=1.0, seed=0
    )
    estimate = variance_estimate(samples, resamples=200)
    assert estimate.mean == pytest.approx(0.5, abs=0.05)
    assert estimate.ks <= 0.03
    assert estimate.ks_centered >= 0.15
    assert estimate.gaussian()
    data = estimate.to_dict()
    assert data["mean"] == estimate.mean
    assert data["ks_centered"] == estimate.ks_centered


def test_sample_limits():
    with pytest.raises(TooShort):
        synthetic_samples(n=50)
    with pytest.raises(ValueError):
        clt_samples(SyntheticGaussian(1.0), DriverSpec("geodesic"), 200, 10.0, 0.0, k=2)
    with pytest.raises(NonFinite):
        CltSampleSet(
            values=[0.0, math.nan], driver="geodesic", horizon=1.0, k=1, lambda_ref=0.0, seed=0
        )


def test_variance_relation():
    check = variance_relation(report(1.0, 0.9, 1.1), report(2.0, 1.8, 2.2), lam=1.0)
    assert check.residual == pytest.approx(0.0)
    assert check.ci_high - check.residual == pytest.approx(math.sqrt(0.01 + 0.04))
    assert not check.violated

    shifted = variance_relation(report(1.5, 1.45, 1.55), report(2.0, 1.95, 2.05), lam=1.0)
    assert shifted.violated


def test_positivity_check():
    assert positivity_check(report(0.5, 0.45, 0.55), lam=1.0).violated
    assert not positivity_check(report(1.2, 0.9, 1.5), lam=1.0).violated
    assert positivity_check(report(1.2, 0.9, 1.5), lam=1.0).to_dict()["violated"] is False


def test_report_round_trip():
    original = report(1.3, 1.1, 1.6)
    assert VarianceReport.from_dict(original.to_dict()) == original


def test_interval_discrepancy():
    x = np.random.default_rng(0).normal(size=500)
    assert interval_discrepancy(x, x) == 0.0
    assert interval_discrepancy(np.zeros(10), np.full(10, 2.0)) == 1.0


def test_stopped_covariance_needs_stopped_runs():
    with pytest.raises(ValueError):
        stopped_covariance(synthetic_samples(n=100), 1.0)


def test_calibration():
    geodesic = calibrate_lambda(TautologicalModel(), 1, 100.0, seed=0)
    assert geodesic.value == 1.0
    assert geodesic.to_dict()["lambda"] == 1.0

    synthetic = calibrate_lambda(SyntheticGaussian(1.0, exponent=0.25), 1, 100.0, seed=0)
    assert synthetic.value == 0.25

    with pytest.raises(TooShort):
        calibrate_lambda(TautologicalModel(), 1, 10.0, seed=0)


def test_tautological_brownian_calibration():
    calibration = calibrate_lambda(
        TautologicalModel(), 1, 50.0, seed=3, driver=DriverSpec("brownian", dt=1e-2)
    )
    assert calibration.value == pytest.approx(1.0, abs=0.1)
    assert calibration.stderr > 0


@pytest.mark.slow
def test_h2_complement_calibration(h2_complement):
    calibration = calibrate_lambda(h2_complement, 1, 400.0, seed=2, burn=20.0)
    assert calibration.value == pytest.approx(1 / 3, abs=0.15)


def test_circle_averaged_drift():
    profile = circle_averaged_drift(TautologicalModel(), [1.0, 2.0, 4.0])
    np.testing.assert_allclose(profile.drift, 1.0)
    with pytest.raises(TooShort):
        circle_averaged_drift(TautologicalModel(), [1.0])

    full = origami_model(builtin_origami("h2"))
    profile = circle_averaged_drift(full, [5.0, 10.0, 15.0, 20.0], n_angles=32, seed=1)
    assert profile.drift[-1] == pytest.approx(1.0, abs=0.1)


def test_geodesic_samples_are_independent_of_threads(h2_complement):
    def sample(threads):
        return clt_samples(
            h2_complement,
            DriverSpec("geodesic"),
            100,
            5.0,
            1 / 3,
            seed=2,
            burn=2.0,
            chunk_size=32,
            threads=threads,
        )

    single = sample(1)
    pooled = sample(2)
    np.testing.assert_array_equal(single.values, pooled.values)
    assert single.metadata()["n"] == 100
    assert single.metadata()["burn_in"] == 2.0
    assert set(single.diagnostics) == {"max_height", "mean_excursions"}


def test_stopped_samples(h2_complement):
    lam = 1 / 3
    horizon = 3.0
    samples = clt_samples(
        h2_complement, DriverSpec("brownian-stopped", dt=1e-2), 100, horizon, lam, seed=5, burn=1.0
    )
    assert np.all(samples.tau > 0)
    expected = (samples.sigma - lam * samples.tau) / math.sqrt(horizon)
    np.testing.assert_allclose(samples.values, expected)

    assert covariance_predictor(samples, lam) == pytest.approx(
        -(lam**2) * np.mean(samples.tanh_integral) / horizon
    )
    assert covariance_predictor(samples, lam) < 0

    covariance = stopped_covariance(samples, lam, resamples=200)
    assert covariance.target == pytest.approx(-(lam**2))
    assert covariance.contains(covariance.covariance)
    assert stopped_covariance(samples, lam, stream="w2", resamples=200).target == 0.0


def test_stopped_against_fixed_time():
    tautological = stopped_vs_fixed_check(TautologicalModel(), 100, 5.0, seed=1)
    assert tautological.discrepancy == 0.0
    assert tautological.to_dict()["n"] == 100


def test_stopped_against_fixed_time_on_h2(h2_complement):
    check = stopped_vs_fixed_check(h2_complement, 100, 3.0, seed=2, lam=1 / 3, burn=1.0)
    assert 0.0 <= check.discrepancy <= 1.0
    assert set(check.to_dict()) == {"discrepancy", "t", "n", "retries"}


def test_tautological_brownian_samples():
    samples = clt_samples(TautologicalModel(), DriverSpec("brownian", dt=1e-2), 200, 5.0, 1.0)
    assert np.all(np.isfinite(samples.values))
    assert samples.exit_theta is not None
    assert samples.tau is None


@pytest.mark.slow
def test_bootstrap_coverage():
    result = coverage_check(1.0, 200, repetitions=200, seed=0, resamples=1000)
    assert 0.88 <= result.coverage <= 0.99


@pytest.mark.slow
def test_tautological_covariance():
    w1 = covariance_check(TautologicalModel(), 2000, 20.0, 1.0, seed=4)
    assert -1.15 <= w1.covariance <= -0.8
    assert w1.predicted == pytest.approx(-1.0, abs=0.1)

    w2 = covariance_check(TautologicalModel(), 2000, 20.0, 1.0, seed=4, stream="w2")
    assert abs(w2.covariance) < 0.1


@pytest.mark.slow
def test_tautological_brownian_variance():
    samples = clt_samples(TautologicalModel(), DriverSpec("brownian", dt=1e-2), 2000, 20.0, 1.0)
    estimate = variance_estimate(samples, resamples=500)
    assert 0.85 <= estimate.variance <= 1.15


def test_sample_files():
    data_dir = DataDir("test_sample_files")
    samples = synthetic_samples(n=100)
    export = CSVExport(Path(data_dir.path))
    export.handle_samples("synthetic", samples)
    assert data_dir.files(".") == ["synthetic.csv"]

    metadata, values = read_samples(Path(data_dir.join("synthetic.csv")))
    np.testing.assert_array_equal(values, samples.values)
    assert metadata["model"] == "synthetic"
    assert metadata["n"] == 100

    with pytest.raises(ValueError):
        CSVExport(Path(data_dir.join("synthetic.csv")))


def test_json_files():
    data_dir = DataDir("test_json_files")
    path = write_json(
        Path(data_dir.join("report.json")),
        {"b": float("nan"), "a": np.float64(1.5), "values": np.arange(3)},
    )
    assert read_json(path) == {"a": 1.5, "b": None, "values": [0, 1, 2]}
    text = data_dir.load("report.json")
    assert text.index('"a"') < text.index('"b"')

    export = JSONExport(Path(data_dir.path))
    export.handle_report("variance", report(1.0, 0.9, 1.1).to_dict())
    export.publish()
    assert data_dir.load_json("variance.json")["V"] == 1.0


def test_dat_files():
    data_dir = DataDir("test_dat_files")
    write_dat(Path(data_dir.join("drift.dat")), {"t": [1.0, 2.0], "drift": [0.5, 0.75]})
    assert data_dir.load("drift.dat") == "# t drift\n1.0 0.5\n2.0 0.75\n"


def test_tautological_runs_honour_threads(monkeypatch):
    requested = []

    def recording(*args, **kwargs):
        requested.append(kwargs["threads"])
        return simulate_ensemble(*args, **kwargs)

    monkeypatch.setattr(sampling, "simulate_ensemble", recording)
    driver = DriverSpec("brownian-stopped", dt=1e-2)
    params = dict(n=120, horizon=3.0, lambda_ref=1.0, seed=4, chunk_size=32)
    single = clt_samples(TautologicalModel(), driver, **params)
    pooled = clt_samples(TautologicalModel(), driver, threads=3, **params)
    assert requested == [1, 3]
    np.testing.assert_array_equal(single.values, pooled.values)
    np.testing.assert_array_equal(single.tau, pooled.tau)


@pytest.mark.slow
def test_tautological_brownian_clt():
    samples = clt_samples(
        TautologicalModel(),
        DriverSpec("brownian", dt=1e-2),
        20_000,
        50.0,
        1.0,
        seed=3,
        chunk_size=4096,
        threads=4,
    )
    estimate = variance_estimate(samples, resamples=500)
    assert 0.9 <= estimate.variance <= 1.1
    assert estimate.ks <= 0.02
    # η_T/√T shifts the samples off zero.
    assert estimate.mean > 0


@pytest.mark.slow
def test_h2_complement_clt(h2_complement):
    samples = clt_samples(
        h2_complement, DriverSpec("geodesic"), 5000, 100.0, 1 / 3, seed=7, threads=4
    )
    assert samples.burn_in == 200.0
    assert np.count_nonzero(samples.sigma == 0.0) == 0
    estimate = variance_estimate(samples, resamples=500)
    assert estimate.ks <= 0.05
    assert estimate.variance > 0
    assert estimate.ci_low > 0


@pytest.mark.slow
def test_ew_complement_is_degenerate():
    model = origami_model(builtin_origami("eierlegende-wollmilchsau"), subspace="complement")
    calibration = calibrate_lambda(model, 1, 1000.0, seed=2)
    assert calibration.value == pytest.approx(0.0, abs=0.01)
    samples = clt_samples(
        model, DriverSpec("geodesic"), 500, 100.0, calibration.value, seed=5, threads=4
    )
    assert variance_estimate(samples, resamples=500).variance <= 0.01
