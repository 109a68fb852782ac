"""Flat ``key = value`` experiment configuration files.

Keys are dotted (``noise.kind = gaussian-increment``); lists are comma
separated; ``#`` starts a comment line. Numbers may be written as
fractions (``1/3``). Unknown keys are errors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

KINDS = ("sketch-rate", "ode-strong-rate", "ode-posterior-rate", "bound-verify")


class ConfigError(ValueError):
    pass


def _num(text: str) -> float:
    try:
        return float(Fraction(text.strip()))
    except (ValueError, ZeroDivisionError):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"not a number: {text!r}") from None


def _int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}") from None


def _floats(text: str) -> tuple[float, ...]:
    return tuple(_num(t) for t in text.split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(_int(t) for t in text.split(",") if t.strip())


def _str(text: str) -> str:
    return text.strip()


# key -> (parser, default); a default of ``...`` marks a required key
SCHEMA = {
    "claim": (_str, ...),
    "experiment.id": (_str, ...),
    "experiment.kind": (_str, ...),
    "experiment.sweep": (_ints, ...),
    "experiment.realizations": (_int, ...),
    "experiment.master_seed": (_int, 0),
    "experiment.output": (_str, None),
    "prior.kind": (_str, "uniform"),
    "prior.lower": (_floats, (0.0,)),
    "prior.upper": (_floats, (1.0,)),
    "prior.points": (_ints, (101,)),
    "prior.mean": (_floats, None),
    "prior.variance": (_floats, None),
    "forward.kind": (_str, "affine"),
    "forward.matrix": (_floats, None),
    "forward.offset": (_floats, None),
    "forward.param_dim": (_int, 1),
    "ode.rate": (_num, -1.0),
    "ode.horizon": (_num, 1.0),
    "ode.initial": (_num, None),
    "ode.stepper": (_str, "explicit-euler"),
    "ode.obs_times": (_floats, (1.0,)),
    "ode.tau_star": (_num, 0.25),
    "ode.state_bound": (_num, 2.0),
    "noise.kind": (_str, "gaussian-increment"),
    "noise.p": (_num, 1.0),
    "noise.amplitude": (_num, 1.0),
    "likelihood.variance": (_floats, (1.0,)),
    "observation.y": (_floats, None),
    "observation.truth": (_floats, None),
    "observation.noise_std": (_num, 0.0),
    "observation.seed": (_int, 0),
    "sketch.kind": (_str, "ell-sparse"),
    "sketch.ell": (_num, 0.0),
    "strong.moment": (_int, 1),
    "strong.parameter": (_floats, (0.0,)),
    "bounds.c3": (_num, None),
    "bounds.p_star": (_num, 2.0),
}


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict
    source: str = "<memory>"
    raw: dict = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def experiment_id(self) -> str:
        return self.values["experiment.id"]

    @property
    def kind(self) -> str:
        return self.values["experiment.kind"]

    @property
    def sweep(self) -> tuple[int, ...]:
        return self.values["experiment.sweep"]

    @property
    def realizations(self) -> int:
        return self.values["experiment.realizations"]

    @property
    def master_seed(self) -> int:
        return self.values["experiment.master_seed"]

    @property
    def claim(self) -> str:
        return self.values["claim"]

    @property
    def output(self) -> str:
        return self.values["experiment.output"] or f"{self.experiment_id}.csv"

    def replace(self, **updates) -> "ExperimentConfig":
        """Copy with dotted keys overridden (use ``__`` for ``.`` in names)."""
        raw = dict(self.raw)
        for k, v in updates.items():
            raw[k.replace("__", ".")] = v if isinstance(v, str) else _render(v)
        return from_mapping(raw, self.source)


def _render(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(repr(float(x)) if isinstance(x, float) else str(x) for x in v)
    return str(v)


def parse_config(text: str, source: str = "<memory>") -> ExperimentConfig:
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (t.strip() for t in s.split("=", 1))
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = val
    return from_mapping(raw, source)


def from_mapping(raw: dict, source: str = "<memory>") -> ExperimentConfig:
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    values = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                values[key] = parse(str(raw[key]))
            except ConfigError as exc:
                raise ConfigError(f"{source}: {key}: {exc}") from None
        elif default is ...:
            raise ConfigError(f"{source}: missing required key {key!r}")
        else:
            values[key] = default
    cfg = ExperimentConfig(values, source, dict(raw))
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {', '.join(KINDS)}")
    sweep = cfg.sweep
    if not sweep or any(b <= a for a, b in zip(sweep, sweep[1:])) or sweep[0] < 1:
        raise ConfigError("experiment.sweep must be a strictly increasing list of positive integers")
    if cfg.realizations < 2:
        raise ConfigError("experiment.realizations must be at least 2")
    ode = cfg["forward.kind"].startswith("ode")
    if cfg.kind in ("ode-strong-rate", "ode-posterior-rate") and not ode:
        raise ConfigError(f"{cfg.kind} needs an ode forward model")
    if cfg.kind == "sketch-rate" and ode:
        raise ConfigError("sketch-rate needs a non-ode forward model")
    if cfg.kind != "ode-strong-rate" and cfg["observation.y"] is None and cfg["observation.truth"] is None:
        raise ConfigError("give observation.y or observation.truth")
    if not math.isfinite(cfg["observation.noise_std"]) or cfg["observation.noise_std"] < 0:
        raise ConfigError("observation.noise_std must be non-negative")


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config not found: {path}")
    return parse_config(p.read_text(encoding="utf-8"), str(p))
