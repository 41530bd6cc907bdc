"""Experiment configuration files.

A config is a TOML file; dotted key paths (``lattice.dx = 0.05``) and tables
are interchangeable.  Recognized top-level keys::

    experiment = "comparison"        # comparison | uniqueness_ladder | moments
                                     # | holder | girsanov | kernel_audit
    output_dir = "runs/comparison"   # OUTPUT_DIR in the environment overrides it
    seeds.base = 0                   # or: seeds.list = [3, 5, 8]
    seeds.count = 100
    workers = 1
    lattice.{L, dx, dt, T, boundary}
    coefficients.<name> = "<label>"  # registry labels, e.g. "power_sigma:0.8"
    initial.<name> = "<label>"       # zero | const:c | gauss:a  (exp(-a x^2))
    tolerances.<name> = <number>
    options.<name> = <value>         # experiment specific

Unknown top-level keys are rejected so that typos cannot silently fall back
to defaults.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .coefficients import parse_coefficient
from .errors import ConfigError
from .lattice import Field, Lattice, build_lattice

EXPERIMENTS = ("comparison", "uniqueness_ladder", "moments", "holder", "girsanov", "kernel_audit")
_TOP_LEVEL = {
    "experiment", "output_dir", "seeds", "workers", "lattice", "coefficients", "initial", "tolerances", "options",
}
DEFAULT_LATTICE = {"L": 10.0, "dx": 0.05, "dt": 1e-3, "T": 1.0, "boundary": "dirichlet_zero"}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple[int, ...]
    lattice: dict = field(default_factory=lambda: dict(DEFAULT_LATTICE))
    coefficients: dict = field(default_factory=dict)
    initial: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)
    output_dir: str = "she_lab_out"
    workers: int = 1

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if len(self.seeds) < 1:
            raise ConfigError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds must be non-negative")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        for name, label in self.coefficients.items():
            if not isinstance(label, str):
                raise ConfigError(f"coefficients.{name} must be a label string")
            parse_coefficient(label)
        for label in self.initial.values():
            parse_initial(label)
        self.build_lattice()

    def build_lattice(self, **overrides) -> Lattice:
        p = {**DEFAULT_LATTICE, **self.lattice, **overrides}
        return build_lattice(p["L"], p["dx"], p["dt"], p["T"], p["boundary"])

    def coefficient(self, name: str, default: str | None = None):
        label = self.coefficients.get(name, default)
        if label is None:
            raise ConfigError(f"coefficients.{name} is required for {self.experiment}")
        return parse_coefficient(label)

    def tol(self, name: str, default: float) -> float:
        return float(self.tolerances.get(name, default))

    def opt(self, name: str, default=None):
        return self.options.get(name, default)

    def with_seed_count(self, count: int) -> "ExperimentConfig":
        base = self.seeds[0]
        return replace(self, seeds=tuple(range(base, base + int(count))))

    def echo(self) -> dict:
        """Canonical, JSON-ready form; ``output_dir`` and ``workers`` do not affect results and are left out."""
        return {
            "experiment": self.experiment,
            "seeds": list(self.seeds),
            "lattice": {**DEFAULT_LATTICE, **self.lattice},
            "coefficients": dict(sorted(self.coefficients.items())),
            "initial": dict(sorted(self.initial.items())),
            "tolerances": dict(sorted(self.tolerances.items())),
            "options": dict(sorted(self.options.items())),
        }


def _gauss(a, x):
    return np.exp(-a * np.asarray(x) ** 2)


def _const(c, x):
    return np.full(np.shape(x), c)


def parse_initial(label: str):
    """Initial-data label to a function of ``x``."""
    name, _, arg = label.partition(":")
    try:
        if name == "zero" and not arg:
            return partial(_const, 0.0)
        if name == "const" and arg:
            return partial(_const, float(arg))
        if name == "gauss" and arg:
            return partial(_gauss, float(arg))
    except ValueError:
        pass
    raise ConfigError(f"unknown initial-data label {label!r}")


def initial_field(label: str, lattice: Lattice) -> Field:
    return Field.from_function(parse_initial(label), lattice)


def _seeds(spec) -> tuple[int, ...]:
    if spec is None:
        return (0,)
    if isinstance(spec, list):
        return tuple(int(s) for s in spec)
    if isinstance(spec, dict):
        if "list" in spec:
            return tuple(int(s) for s in spec["list"])
        base, count = int(spec.get("base", 0)), int(spec.get("count", 1))
        return tuple(range(base, base + count))
    raise ConfigError(f"cannot read seeds from {spec!r}")


def config_from_dict(data: dict) -> ExperimentConfig:
    unknown = set(data) - _TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    if "experiment" not in data:
        raise ConfigError("config must name an experiment")
    lattice = dict(data.get("lattice", {}))
    bad = set(lattice) - set(DEFAULT_LATTICE)
    if bad:
        raise ConfigError(f"unknown lattice keys: {', '.join(sorted(bad))}")
    try:
        return ExperimentConfig(
            experiment=str(data["experiment"]),
            seeds=_seeds(data.get("seeds")),
            lattice=lattice,
            coefficients=dict(data.get("coefficients", {})),
            initial=dict(data.get("initial", {})),
            tolerances=dict(data.get("tolerances", {})),
            options=dict(data.get("options", {})),
            output_dir=str(os.environ.get("OUTPUT_DIR") or data.get("output_dir", "she_lab_out")),
            workers=int(data.get("workers", 1)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    """Read and validate a TOML config file."""
    try:
        with Path(path).open("rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data)
