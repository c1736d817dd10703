"""Scenario configuration files: INI sections with strict key checking.

Sections and keys:

  [system]  lambda_a lambda_b n_a n_b d_max rate_r scale_a scale_b
  [sim]     horizon warmup seeds power_cap relay_buffer
  [sweep]   variable start stop step
  [output]  directory formats

``seeds`` is a comma-separated list, ``formats`` currently admits csv and
svg. The sweep variable is one of lambda_a, lambda_b, d_max, or lambda_ab
(both arrival rates moved together). Defaults reproduce the reference
scenario: symmetric buffers of 15 packets, delay budget 3 slots, rate 1.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .model import SystemParams


class ConfigError(ValueError):
    """Raised on unknown keys, bad values, or malformed config files."""


SWEEP_VARIABLES = ("lambda_a", "lambda_b", "lambda_ab", "d_max")

_KNOWN_KEYS = {
    "system": {"lambda_a", "lambda_b", "n_a", "n_b", "d_max", "rate_r", "scale_a", "scale_b"},
    "sim": {"horizon", "warmup", "seeds", "power_cap", "relay_buffer"},
    "sweep": {"variable", "start", "stop", "step"},
    "output": {"directory", "formats"},
}


@dataclass(frozen=True)
class SimSettings:
    horizon: int = 1_000_000
    warmup: int = 10_000
    seeds: tuple[int, ...] = (1, 2, 3)
    power_cap: float = 1e4
    relay_buffer: int = 15

    def __post_init__(self):
        if not 0 <= self.warmup < self.horizon:
            raise ConfigError(f"need horizon > warmup >= 0, got ({self.horizon}, {self.warmup})")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.power_cap <= 0:
            raise ConfigError("power_cap must be positive")
        if self.relay_buffer < 1:
            raise ConfigError("relay_buffer must be >= 1")


@dataclass(frozen=True)
class SweepSpec:
    variable: str = "lambda_ab"
    start: float = 0.1
    stop: float = 0.9
    step: float = 0.1

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ConfigError(
                f"sweep.variable must be one of {', '.join(SWEEP_VARIABLES)}, got {self.variable!r}"
            )
        if self.step <= 0:
            raise ConfigError("sweep.step must be positive")
        if self.stop < self.start:
            raise ConfigError("sweep.stop must be >= sweep.start")

    def grid(self) -> list[float]:
        points = []
        value = self.start
        while value <= self.stop + 1e-12:
            points.append(round(value, 12))
            value += self.step
        return points


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv",)

    def __post_init__(self):
        for fmt in self.formats:
            if fmt not in ("csv", "svg"):
                raise ConfigError(f"output.formats entry {fmt!r} not supported (csv, svg)")


@dataclass(frozen=True)
class ScenarioConfig:
    params: SystemParams = field(default_factory=SystemParams)
    sim: SimSettings = field(default_factory=SimSettings)
    sweep: SweepSpec | None = None
    output: OutputSettings = field(default_factory=OutputSettings)


def default_config(with_sweep: bool = False) -> ScenarioConfig:
    return ScenarioConfig(sweep=SweepSpec() if with_sweep else None)


def _get(parser, section, key, cast, default, path):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key)
    try:
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"{path}: [{section}] {key} = {raw!r}: {exc}") from None


def _parse_seeds(raw: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in raw.split(",") if part.strip())


def _parse_formats(raw: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in raw.split(",") if part.strip())


def load_config(path) -> ScenarioConfig:
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")

    defaults = ScenarioConfig()
    try:
        params = SystemParams(
            lambda_a=_get(parser, "system", "lambda_a", float, defaults.params.lambda_a, path),
            lambda_b=_get(parser, "system", "lambda_b", float, defaults.params.lambda_b, path),
            n_a=_get(parser, "system", "n_a", int, defaults.params.n_a, path),
            n_b=_get(parser, "system", "n_b", int, defaults.params.n_b, path),
            d_max=_get(parser, "system", "d_max", float, defaults.params.d_max, path),
            rate_r=_get(parser, "system", "rate_r", float, defaults.params.rate_r, path),
            scale_a=_get(parser, "system", "scale_a", float, defaults.params.scale_a, path),
            scale_b=_get(parser, "system", "scale_b", float, defaults.params.scale_b, path),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: [system] {exc}") from None
    sim = SimSettings(
        horizon=_get(parser, "sim", "horizon", int, defaults.sim.horizon, path),
        warmup=_get(parser, "sim", "warmup", int, defaults.sim.warmup, path),
        seeds=_get(parser, "sim", "seeds", _parse_seeds, defaults.sim.seeds, path),
        power_cap=_get(parser, "sim", "power_cap", float, defaults.sim.power_cap, path),
        relay_buffer=_get(parser, "sim", "relay_buffer", int, defaults.sim.relay_buffer, path),
    )
    sweep = None
    if parser.has_section("sweep"):
        sweep = SweepSpec(
            variable=_get(parser, "sweep", "variable", str, "lambda_ab", path),
            start=_get(parser, "sweep", "start", float, 0.1, path),
            stop=_get(parser, "sweep", "stop", float, 0.9, path),
            step=_get(parser, "sweep", "step", float, 0.1, path),
        )
    output = OutputSettings(
        directory=_get(parser, "output", "directory", str, defaults.output.directory, path),
        formats=_get(parser, "output", "formats", _parse_formats, defaults.output.formats, path),
    )
    return ScenarioConfig(params=params, sim=sim, sweep=sweep, output=output)


def apply_sweep_value(params: SystemParams, variable: str, value: float) -> SystemParams:
    """One grid point of a sweep: move the named parameter to ``value``."""
    if variable == "lambda_ab":
        return SystemParams(
            lambda_a=value, lambda_b=value, n_a=params.n_a, n_b=params.n_b,
            d_max=params.d_max, rate_r=params.rate_r,
            scale_a=params.scale_a, scale_b=params.scale_b,
        )
    if variable in ("lambda_a", "lambda_b", "d_max"):
        kwargs = {
            "lambda_a": params.lambda_a, "lambda_b": params.lambda_b,
            "n_a": params.n_a, "n_b": params.n_b, "d_max": params.d_max,
            "rate_r": params.rate_r, "scale_a": params.scale_a, "scale_b": params.scale_b,
        }
        kwargs[variable] = value
        return SystemParams(**kwargs)
    raise ConfigError(f"unknown sweep variable {variable!r}")
