"""Flat ``key = value`` experiment configs with command-line overrides.

A config file holds one assignment per line; ``#`` starts a comment. Values
are parsed as JSON when possible (numbers, booleans, lists) and kept as
strings otherwise. Every key has an explicit default, so a resolved config
written next to the outputs fully describes the run.
"""

from __future__ import annotations

import json
import os
import subprocess
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields

from . import __version__
from .netspec import ArchSpec
from .training import HyperParams
from .transforms import get_family


class ConfigError(ValueError):
    """Unparseable or inconsistent configuration."""


@dataclass
class ExperimentConfig:
    data: str = "synthetic:shapes2d"
    n: int = 14000
    data_seed: int = 7
    test_fraction: float = 1.0 / 7.0
    downscale: bool = False
    family: str = "rotation2d"
    arch: str = "mlp:32x1"
    dims: int = 3
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 30
    seed: int = 0
    lambda_cos: float = 1.0
    lambda_ent: float = 0.01
    schedule: str = "cosine"
    eta_min: float = 0.0
    iscn: bool = False
    grid: str = "default"
    out: str = "runs/out"

    def __post_init__(self):
        try:
            self.family = get_family(self.family).name
            ArchSpec.parse(self.arch)
            self.hyperparams()
        except (KeyError, ValueError) as exc:
            raise ConfigError(str(exc).strip("'\"")) from exc
        if self.dims < 1:
            raise ConfigError("dims must be >= 1")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)")

    def arch_spec(self):
        return ArchSpec.parse(self.arch)

    def hyperparams(self):
        return HyperParams(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                           lambda_cos=self.lambda_cos, lambda_ent=self.lambda_ent,
                           schedule=self.schedule, eta_min=self.eta_min)

    def to_text(self):
        return "".join(f"{k} = {json.dumps(v) if not isinstance(v, str) else v}\n"
                       for k, v in asdict(self).items())


def _value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_text(text, source="<config>"):
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _value(val)
    return out


def resolve(path=None, overrides=None):
    """Defaults <- file <- overrides (``key=value`` strings or a dict)."""
    values = {}
    if path:
        try:
            with open(path) as fh:
                values.update(parse_text(fh.read(), path))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if isinstance(overrides, dict):
        values.update({k: v for k, v in overrides.items() if v is not None})
    else:
        for item in overrides or ():
            if "=" not in item:
                raise ConfigError(f"override {item!r} is not key=value")
            k, v = item.split("=", 1)
            values[k.strip().replace("-", "_")] = _value(v)
    known = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    defaults = ExperimentConfig.__dataclass_fields__
    for k, v in list(values.items()):
        want = type(defaults[k].default)
        try:
            if want is bool and not isinstance(v, bool):
                raise ConfigError(f"{k} must be true or false")
            values[k] = want(v)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{k}: cannot interpret {v!r} as {want.__name__}") from exc
    return ExperimentConfig(**values)


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file and rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def code_version():
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "rev-parse", "--short", "HEAD"], cwd=here, capture_output=True,
                             text=True, timeout=5)
        if rev.returncode == 0:
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


@dataclass
class RunManifest:
    command: str
    config: dict
    code_version: str = field(default_factory=code_version)
    started: float = field(default_factory=time.time)
    wall_clock: float = 0.0
    artifacts: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def add(self, role, path):
        self.artifacts[role] = os.path.abspath(path)
        return path

    def finish(self, path):
        self.wall_clock = time.time() - self.started
        atomic_write(path, json.dumps(asdict(self), indent=2, sort_keys=True, default=str) + "\n")
        return path
