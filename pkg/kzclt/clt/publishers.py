import csv
import json
from abc import ABC
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kzclt.clt.samples import CltSampleSet
from kzclt.common.logging import get_logger

logger = get_logger(__file__)


def _plain(value):
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, dict):
        return {key: _plain(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(item) for item in value]
    return value


def write_json(path: Path, data: dict) -> Path:
    """Deterministic JSON: sorted keys, no timestamps, NaN written as null."""
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


class Publisher(ABC):
    """
    Receives the products of a run. Either the `handle_*` methods are overridden to write as
    results arrive, or `publish` to write everything at the end.
    """

    def open(self) -> None:
        ...

    def handle_samples(self, name: str, samples: CltSampleSet) -> None:
        ...

    def handle_report(self, name: str, report: dict) -> None:
        ...

    def publish(self) -> None:
        ...

    def close(self) -> None:
        ...


class CSVExport(Publisher):
    def __init__(self, output_dir: Path) -> None:
        if not output_dir.is_dir():
            raise ValueError("Output must be a valid directory for the CSV export")
        self.output_dir = output_dir
        self.written: list[Path] = []

    def write_rows(self, output: Path, rows: Sequence[dict], fieldnames: Iterable[str]) -> Path:
        if not rows:
            logger.warning(f"No rows for {output.name}, writing the header only.")
        with open(output, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(fieldnames))
            writer.writeheader()
            for row in rows:
                writer.writerow({key: _plain(value) for key, value in row.items()})
        self.written.append(output)
        return output

    def handle_samples(self, name: str, samples: CltSampleSet) -> None:
        """One value per line, after a comment line holding the metadata."""
        output = self.output_dir / f"{name}.csv"
        with open(output, "w", newline="") as f:
            f.write("# " + json.dumps(_plain(samples.metadata()), sort_keys=True) + "\n")
            writer = csv.writer(f)
            writer.writerow(["value"])
            for value in samples.values:
                writer.writerow([repr(float(value))])
        self.written.append(output)


class JSONExport(Publisher):
    def __init__(self, output_dir: Path) -> None:
        if not output_dir.is_dir():
            raise ValueError("Output must be a valid directory for the JSON export")
        self.output_dir = output_dir
        self.reports: dict[str, dict] = {}
        self.written: list[Path] = []

    def handle_report(self, name: str, report: dict) -> None:
        self.reports[name] = report

    def publish(self) -> None:
        for name, report in self.reports.items():
            self.written.append(write_json(self.output_dir / f"{name}.json", report))


def read_samples(path: Path) -> tuple[dict, np.ndarray]:
    """Metadata and values of a sample file written by CSVExport."""
    with open(path, newline="") as f:
        header = f.readline()
        if not header.startswith("# "):
            raise ValueError(f"{path} has no metadata line")
        metadata = json.loads(header[2:])
        reader = csv.DictReader(f)
        values = np.array([float(row["value"]) for row in reader])
    return metadata, values


def write_dat(path: Path, columns: dict[str, Sequence[float]]) -> Path:
    """A whitespace separated table for gnuplot, with a commented header."""
    names = list(columns)
    rows = zip(*(columns[name] for name in names))
    lines = ["# " + " ".join(names)]
    lines += [" ".join(repr(float(value)) for value in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path
