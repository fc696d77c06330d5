"""
The subcommands. Each runner takes a validated config and an output directory, writes its
artifacts there and returns their paths.
"""

import hashlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
from scipy import stats

from kzclt import __version__
from kzclt.brownian.checks import exit_uniformity, tracking_regression
from kzclt.brownian.dump import dump_paths
from kzclt.brownian.sde import EXIT_RADIUS, simulate_ensemble
from kzclt.cli.config import RunConfig, config_hash
from kzclt.clt.publishers import (
    CSVExport,
    JSONExport,
    read_json,
    read_samples,
    write_dat,
    write_json,
)
from kzclt.clt.samples import STOPPED_HORIZON, calibrate_lambda, clt_samples
from kzclt.clt.variance import (
    VarianceReport,
    positivity_check,
    stopped_covariance,
    variance_estimate,
    variance_relation,
)
from kzclt.cocycles.monodromy import (
    MOVES,
    build_monodromy,
    monodromy_group,
    tautological_complement,
)
from kzclt.cocycles.origami import resolve_origami
from kzclt.common.errors import MalformedReport
from kzclt.common.logging import get_logger
from kzclt.poisson.solver import PoissonJob, sweep

logger = get_logger(__file__)


def run_estimate(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    """Calibrate λ unless the config fixes it, sample the CLT statistic and estimate V."""
    settings = config.estimate
    model = config.build_model()
    driver = config.driver_spec()
    k = config.model["k"]

    calibration = None
    lam = settings["lambda"]
    if lam is None:
        calibration = calibrate_lambda(
            model,
            k,
            settings["calibration_horizon"],
            config.seed,
            driver,
            burn=settings["burn_in"],
        )
        lam = calibration.value

    samples = clt_samples(
        model,
        driver,
        config.n,
        config.t,
        lam,
        k,
        config.seed,
        burn=settings["burn_in"],
        chunk_size=settings["chunk_size"],
        threads=threads,
    )
    report = variance_estimate(samples, settings["resamples"], settings["level"])

    data = report.to_dict()
    data.update(
        k=k,
        model=model.describe(),
        lambda_stderr=calibration.stderr if calibration else 0.0,
        calibration=calibration.to_dict() if calibration else None,
        diagnostics=samples.diagnostics,
        retries=samples.retries,
    )
    if samples.tau is not None:
        data["covariance"] = {
            stream: stopped_covariance(
                samples, lam, stream, settings["resamples"], settings["level"]
            ).to_dict()
            for stream in ("w1", "w2")
        }

    csv_export = CSVExport(out_dir)
    csv_export.handle_samples("samples", samples)
    json_export = JSONExport(out_dir)
    json_export.handle_report("report", data)
    json_export.publish()
    return csv_export.written + json_export.written


def _quantiles(values: np.ndarray) -> dict:
    return {
        "q01": float(np.nanquantile(values, 0.01)),
        "q50": float(np.nanquantile(values, 0.5)),
        "q99": float(np.nanquantile(values, 0.99)),
        "within_20pct": float(np.mean(np.abs(values - 1) <= 0.2)),
    }


def run_simulate(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    """Brownian paths with stopping, exit and tracking summaries, and an optional dump."""
    settings = config.simulate
    radii = sorted(set(settings["radii"])) or [config.t]
    horizon = STOPPED_HORIZON * max(radii)
    result = simulate_ensemble(
        config.seed,
        config.n,
        horizon,
        config.dt,
        radii,
        t_init=settings["t_init"],
        theta_init=settings["theta_init"],
        mode=settings["mode"],
        exit_threshold=min(EXIT_RADIUS, horizon / 2),
        chunk_size=settings["chunk_size"],
        threads=threads,
    )

    names = [f"{radius:g}" for radius in radii]
    rows = []
    for row, index in enumerate(result.indices):
        record = {
            "index": int(index),
            "t_final": result.t_final[row],
            "eta_final": result.eta_final[row],
            "eta_tail": result.eta_tail[row],
            "exit_theta": result.exit_theta[row],
        }
        for name, radius in zip(names, radii):
            record[f"tau@{name}"] = result.tau[radius][row]
            record[f"w1@{name}"] = result.w1_tau[radius][row]
            record[f"theta@{name}"] = result.theta_tau[radius][row]
        rows.append(record)
    fieldnames = ["index", "t_final", "eta_final", "eta_tail", "exit_theta"]
    fieldnames += [f"{column}@{name}" for name in names for column in ("tau", "w1", "theta")]

    export = CSVExport(out_dir)
    export.write_rows(out_dir / "paths.csv", rows, fieldnames)

    uniformity = exit_uniformity(result.exit_theta)
    medians = [float(np.nanmedian(result.tracking(radius))) for radius in radii]
    report = {
        "n": config.n,
        "horizon": horizon,
        "dt": config.dt,
        "mode": settings["mode"],
        "radii": radii,
        "tau_ratio": {
            name: _quantiles(result.tau[radius] / radius) for name, radius in zip(names, radii)
        },
        "exit": {
            **asdict(uniformity),
            "exited": int(np.isfinite(result.exit_theta).sum()),
        },
        "eta_tail_median": float(np.median(result.eta_tail)),
        "tracking_medians": dict(zip(names, medians)),
        "tracking_fit": None,
        "retries": result.retries,
    }
    if len(radii) >= 2:
        fit = tracking_regression(radii, medians)
        report["tracking_fit"] = {"slope": fit.slope, "intercept": fit.intercept}
    written = export.written + [write_json(out_dir / "report.json", report)]

    if settings["dump"]:
        written.append(
            dump_paths(
                out_dir,
                config.seed,
                config.n,
                horizon,
                config.dt,
                record_every=settings["record_every"],
                t_init=settings["t_init"],
                theta_init=settings["theta_init"],
                mode=settings["mode"],
                compress=settings["compress"],
            )
        )
    return written


def run_poisson(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    jobs = [PoissonJob.from_dict(job) for job in config.poisson["jobs"]]
    results = sweep(jobs, threads)
    data = {"results": [result.to_dict() for result in results]}
    return [write_json(out_dir / "poisson.json", data)]


def run_origami(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    """Topology of the origami and its action on homology at the base marking."""
    settings = config.origami
    origami = resolve_origami(settings["name"])
    rep = build_monodromy(origami)
    data = {
        **origami.to_dict(),
        "genus": origami.genus,
        "stratum": origami.stratum,
        "singularities": list(origami.singularities),
        "form": origami.form.tolist(),
        "orbit_size": rep.size,
        "generators": {move: rep.matrix(move, 0).tolist() for move in MOVES},
        "complement_rank": None,
        "group": None,
    }
    if origami.genus >= 2:
        complement = tautological_complement(origami, rep)
        data["complement_rank"] = complement.rep.dimension
        if settings["group"]:
            data["group"] = asdict(monodromy_group(complement.rep, settings["max_elements"]))
    return [write_json(out_dir / "origami.json", data)]


def _read_report(settings: dict, key: str) -> tuple[dict, VarianceReport]:
    path = Path(settings[key])
    raw = read_json(path)
    try:
        return raw, VarianceReport.from_dict(raw)
    except (KeyError, TypeError, IndexError) as error:
        raise MalformedReport(
            f"{path} is not a variance report: {type(error).__name__} {error}",
            field=f"report.{key}",
        )


def run_report(config: RunConfig, out_dir: Path, threads: int = 1) -> list[Path]:
    """The variance relation and positivity from a geodesic and a Brownian estimate."""
    settings = config.report
    raw_geodesic, geodesic = _read_report(settings, "geodesic")
    _, brownian = _read_report(settings, "brownian")
    lam = geodesic.lambda_ref
    lam_stderr = settings["lambda_stderr"] or raw_geodesic.get("lambda_stderr") or 0.0

    relation = variance_relation(geodesic, brownian, lam, lam_stderr)
    positivity = positivity_check(brownian, lam, lam_stderr)
    logger.info(f"V_g - (V_ρ - λ²) = {relation.residual:.4f}")
    logger.info(f"V_ρ - λ² = {positivity.residual:.4f}")
    written = [
        write_json(
            out_dir / "relation.json",
            {
                "lambda": lam,
                "lambda_stderr": lam_stderr,
                "relation": relation.to_dict(),
                "positivity": positivity.to_dict(),
                "geodesic": geodesic.to_dict(),
                "brownian": brownian.to_dict(),
            },
        )
    ]

    reports = [geodesic, brownian]
    written.append(
        write_dat(
            out_dir / "variances.dat",
            {
                "brownian": [0, 1],
                "t": [report.horizon for report in reports],
                "V": [report.variance for report in reports],
                "ci_low": [report.ci_low for report in reports],
                "ci_high": [report.ci_high for report in reports],
            },
        )
    )
    for path in settings["samples"]:
        _, values = read_samples(Path(path))
        density, edges = np.histogram(values, bins=settings["bins"], density=True)
        centers = (edges[:-1] + edges[1:]) / 2
        spread = float(np.std(values, ddof=1))
        gaussian = np.zeros_like(centers)
        if spread > 0:
            gaussian = stats.norm.pdf(centers, np.mean(values), spread)
        written.append(
            write_dat(
                out_dir / f"histogram-{Path(path).stem}.dat",
                {"center": centers, "density": density, "gaussian": gaussian},
            )
        )
    return written


RUNNERS = {
    "estimate": run_estimate,
    "simulate": run_simulate,
    "poisson": run_poisson,
    "origami": run_origami,
    "report": run_report,
}


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: Path, config: RunConfig, artifacts: list[Path]) -> Path:
    """Config hash, seed, toolkit version and artifact hashes. Nothing host or time dependent."""
    return write_json(
        out_dir / "manifest.json",
        {
            "version": __version__,
            "subcommand": config.subcommand,
            "seed": config.seed,
            "config_sha256": config_hash(config),
            "config": config.to_dict(),
            "artifacts": {path.name: sha256_file(path) for path in sorted(artifacts)},
        },
    )
