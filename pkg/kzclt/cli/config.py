"""
Run configs: JSON text, loaded with ruamel.yaml so that every key keeps its line number, then
validated and filled with defaults by a voluptuous schema.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, replace
from typing import Optional as Maybe

import ruamel.yaml
from voluptuous import (
    All,
    Any,
    Coerce,
    In,
    InInvalid,
    Invalid,
    Match,
    MultipleInvalid,
    Optional,
    Range,
    RangeInvalid,
    Required,
    Schema,
)

from kzclt.brownian.sde import MODES
from kzclt.cocycles.evolve import DRIVERS, DriverSpec
from kzclt.cocycles.models import SUBSPACES, CocycleModel, build_model
from kzclt.common.errors import ParseError, RangeError, UnknownKey
from kzclt.poisson.representation import SERIES

SUBCOMMANDS = ("simulate", "estimate", "poisson", "origami", "report")
MAX_SEED = 2**64 - 1

number = Coerce(float)
positive = All(number, Range(min=0, min_included=False))
non_negative = All(number, Range(min=0))
count = All(int, Range(min=1))
complex_number = {Optional("re", default=0.0): number, Optional("im", default=0.0): number}
coefficient = Any(complex_number, number)

model_schema = {
    Optional("kind", default="tautological"): In(("tautological", "origami", "synthetic")),
    Optional("origami", default="h2"): str,
    Optional("subspace", default="complement"): In(SUBSPACES),
    Optional("k", default=1): count,
    Optional("variance", default=1.0): non_negative,
    Optional("exponent", default=0.0): number,
}

driver_schema = {
    Optional("kind", default="brownian"): In(DRIVERS),
    Optional("theta", default=None): Any(None, number),
}

estimate_schema = {
    Optional("lambda", default=None): Any(None, number),
    Optional("calibration_horizon", default=1000.0): positive,
    Optional("resamples", default=2000): All(int, Range(min=100)),
    Optional("level", default=0.95): All(
        number, Range(min=0, max=1, min_included=False, max_included=False)
    ),
    Optional("burn_in", default=200.0): non_negative,
    Optional("chunk_size", default=256): count,
}

simulate_schema = {
    Optional("radii", default=list): [positive],
    Optional("mode", default="ito-polar"): In(MODES),
    Optional("t_init", default=0.0): non_negative,
    Optional("theta_init", default=0.0): number,
    Optional("dump", default=False): bool,
    Optional("compress", default=False): bool,
    Optional("record_every", default=100): count,
    Optional("chunk_size", default=1024): count,
}

job_schema = {
    Required("series"): In(SERIES),
    Optional("s"): Any(complex_number, str, number),
    Optional("n"): count,
    Optional("half", default=1): In((1, -1)),
    Optional("c", default=1.0): All(number, Range(min=1)),
    Optional("K", default=128): All(int, Range(min=4)),
    Optional("rhs"): {Match(r"^-?\d+$"): coefficient},
}

origami_schema = {
    Optional("name", default="h2"): str,
    Optional("group", default=False): bool,
    Optional("max_elements", default=100000): count,
}

report_schema = {
    Optional("geodesic", default=None): Any(None, str),
    Optional("brownian", default=None): Any(None, str),
    Optional("samples", default=list): [str],
    Optional("lambda_stderr", default=0.0): non_negative,
    Optional("bins", default=40): count,
}

SCHEMA = Schema(
    {
        Optional("subcommand", default="estimate"): In(SUBCOMMANDS),
        Optional("seed", default=0): All(int, Range(min=0, max=MAX_SEED)),
        Optional("n", default=1000): count,
        Optional("t", default=50.0): positive,
        Optional("dt", default=1e-3): positive,
        Optional("model", default=dict): model_schema,
        Optional("driver", default=dict): driver_schema,
        Optional("estimate", default=dict): estimate_schema,
        Optional("simulate", default=dict): simulate_schema,
        Optional("poisson", default=dict): {Optional("jobs", default=list): [job_schema]},
        Optional("origami", default=dict): origami_schema,
        Optional("report", default=dict): report_schema,
    }
)


@dataclass
class RunConfig:
    subcommand: str
    seed: int
    n: int
    t: float
    dt: float
    model: dict
    driver: dict
    estimate: dict
    simulate: dict
    poisson: dict
    origami: dict
    report: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(
        self, subcommand: Maybe[str] = None, seed: Maybe[int] = None
    ) -> "RunConfig":
        config = self
        if subcommand is not None:
            config = replace(config, subcommand=subcommand)
        if seed is not None:
            if not 0 <= seed <= MAX_SEED:
                raise RangeError(f"The seed must fit in 64 bits, got {seed}", field="seed")
            config = replace(config, seed=seed)
        check_sections(config)
        return config

    def driver_spec(self) -> DriverSpec:
        return DriverSpec(self.driver["kind"], self.driver["theta"], self.dt)

    def build_model(self) -> CocycleModel:
        return build_model(
            self.model["kind"],
            origami=self.model["origami"],
            subspace=self.model["subspace"],
            variance=self.model["variance"],
            exponent=self.model["exponent"],
        )


def _plain(node):
    """Strip ruamel's round-trip types down to JSON values."""
    if isinstance(node, dict):
        return {str(key): _plain(value) for key, value in node.items()}
    if isinstance(node, list):
        return [_plain(value) for value in node]
    if node is None or isinstance(node, bool):
        return node
    if isinstance(node, int):
        return int(node)
    if isinstance(node, float):
        return float(node)
    if isinstance(node, str):
        return str(node)
    return node


def _line_of(document, path: list) -> Maybe[int]:
    """The 1-based line of the deepest key of `path` present in the loaded document."""
    line = None
    node = document
    for key in path:
        try:
            if isinstance(node, dict) and key in node:
                line = node.lc.key(key)[0] + 1
            elif isinstance(node, list) and isinstance(key, int) and key < len(node):
                line = node.lc.item(key)[0] + 1
            else:
                break
            node = node[key]
        except (AttributeError, KeyError, IndexError, TypeError):
            break
    return line


def _config_error(error: Invalid, document) -> Exception:
    field = ".".join(str(key) for key in error.path) or None
    line = _line_of(document, error.path)
    if error.error_message.startswith("extra keys not allowed"):
        return UnknownKey(f"Unknown config key {field!r}", field=field, line=line)
    if isinstance(error, (RangeInvalid, InInvalid)):
        return RangeError(f"Invalid value for {field!r}: {error.error_message}", field, line)
    return ParseError(f"Invalid config field {field!r}: {error.error_message}", field, line)


def check_sections(config: RunConfig) -> None:
    """The requirements that depend on which subcommand runs."""
    if config.subcommand == "poisson" and not config.poisson["jobs"]:
        raise RangeError("A poisson run needs at least one job", field="poisson.jobs")
    if config.subcommand == "report":
        for name in ("geodesic", "brownian"):
            if config.report[name] is None:
                raise ParseError(f"A report run needs report.{name}", field=f"report.{name}")


def parse_config(text: str, check: bool = True) -> RunConfig:
    """Parse and validate a JSON run config, filling in defaults."""
    yaml = ruamel.yaml.YAML()
    try:
        document = yaml.load(text) if text.strip() else {}
    except ruamel.yaml.YAMLError as error:
        mark = getattr(error, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"The config is not valid JSON: {error}", line=line) from error
    if document is None:
        document = {}
    if not isinstance(document, dict):
        raise ParseError("The config must be a JSON object", line=1)

    try:
        data = SCHEMA(_plain(document))
    except MultipleInvalid as errors:
        first = sorted(errors.errors, key=lambda error: [str(key) for key in error.path])[0]
        raise _config_error(first, document) from errors
    config = RunConfig(**data)
    if check:
        check_sections(config)
    return config


def serialize(config: RunConfig) -> str:
    """Canonical JSON: sorted keys and every default spelled out."""
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def config_hash(config: RunConfig) -> str:
    return hashlib.sha256(serialize(config).encode("utf-8")).hexdigest()
