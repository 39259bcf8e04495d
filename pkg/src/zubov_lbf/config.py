"""Run configuration: one JSON tree holding system, oracle, training and verification settings."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .expr import ParseError
from .oracle import IntegratorOptions
from .system import SystemSpec, SystemSpecError
from .train import TrainConfig
from .transform import BetaFamily
from .verify import VerifyConfig

PRESETS = ("1d", "vdp1", "vdp2", "power1", "power2")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass(frozen=True)
class DatasetConfig:
    count: int = 3000
    strategy: str = "uniform-roi"

    def __post_init__(self):
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if self.strategy not in ("uniform-roi", "grid"):
            raise ValueError(f"unknown strategy {self.strategy!r}")


@dataclass(frozen=True)
class RunConfig:
    system: SystemSpec
    raw_system: dict
    integrator: IntegratorOptions = field(default_factory=IntegratorOptions)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    output_dir: str = "runs"
    seed: int = 0
    name: str = ""

    def with_seed(self, seed: int) -> RunConfig:
        return dataclasses.replace(self, seed=int(seed))

    @property
    def train_config(self) -> TrainConfig:
        """Training options with the run seed applied."""
        return dataclasses.replace(self.train, seed=self.seed)

    @property
    def verify_config(self) -> VerifyConfig:
        return dataclasses.replace(self.verify, seed=self.seed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "system": self.raw_system,
            "oracle": {"integrator": dataclasses.asdict(self.integrator),
                       "count": self.dataset.count, "strategy": self.dataset.strategy},
            "train": self.train.to_dict(),
            "verify": self.verify.to_dict(),
        }

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def _section(obj: dict, key: str, path: str) -> dict:
    val = obj.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{path}{key}", "expected an object")
    return val


def _build(ctor, d: dict, path: str):
    try:
        return ctor(d)
    except (TypeError, ValueError) as err:
        raise ConfigError(path, str(err)) from None


def _system_from(d: dict) -> SystemSpec:
    for key in ("f", "roi"):
        if key not in d:
            raise ConfigError(f"system.{key}", "missing")
    f = d["f"]
    if not isinstance(f, list) or not all(isinstance(e, str) for e in f):
        raise ConfigError("system.f", "expected a list of expression strings")
    n = len(f)
    from .expr import parse

    fx = []
    for i, text in enumerate(f):
        try:
            fx.append(parse(text, n))
        except ParseError as err:
            raise ConfigError(f"system.f[{i}]", str(err)) from None
    hx = []
    for i, text in enumerate(d.get("obstacles", [])):
        try:
            hx.append(parse(text, n))
        except ParseError as err:
            raise ConfigError(f"system.obstacles[{i}]", str(err)) from None
    beta_d = d.get("beta", {})
    try:
        beta = BetaFamily(**beta_d)
    except (TypeError, ValueError) as err:
        raise ConfigError("system.beta", str(err)) from None
    from .interval import Box

    try:
        roi = Box.from_bounds(d["roi"])
    except (TypeError, ValueError) as err:
        raise ConfigError("system.roi", str(err)) from None
    extra = {k: d[k] for k in ("lam", "k", "origin_tolerance", "gamma_mode") if k in d}
    unknown = set(d) - {"f", "obstacles", "roi", "beta", "name"} - set(extra)
    if unknown:
        raise ConfigError("system", f"unknown key(s) {sorted(unknown)}")
    try:
        return SystemSpec(f=tuple(fx), obstacles=tuple(hx), roi=roi, beta=beta,
                          name=d.get("name", ""), **extra)
    except (SystemSpecError, TypeError, ValueError) as err:
        raise ConfigError("system", str(err)) from None


def config_from_dict(obj: dict) -> RunConfig:
    if not isinstance(obj, dict):
        raise ConfigError("", "config must be a JSON object")
    unknown = set(obj) - {"name", "seed", "output_dir", "system", "oracle", "train", "verify"}
    if unknown:
        raise ConfigError("", f"unknown key(s) {sorted(unknown)}")
    raw_system = _section(obj, "system", "")
    system = _system_from(raw_system)
    oracle_d = dict(_section(obj, "oracle", ""))
    integ = _build(lambda d: IntegratorOptions(**d), oracle_d.pop("integrator", {}), "oracle.integrator")
    dataset = _build(lambda d: DatasetConfig(**d), oracle_d, "oracle")
    train = _build(TrainConfig.from_dict, _section(obj, "train", ""), "train")
    if train.widths is not None and train.widths[0] != system.n:
        raise ConfigError("train.widths", f"first width must equal the dimension {system.n}")
    verify = _build(VerifyConfig.from_dict, _section(obj, "verify", ""), "verify")
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", "expected a nonnegative integer")
    return RunConfig(system=system, raw_system=raw_system, integrator=integ, dataset=dataset,
                     train=train, verify=verify, output_dir=str(obj.get("output_dir", "runs")),
                     seed=seed, name=str(obj.get("name", raw_system.get("name", ""))))


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError("", f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("zubov_lbf.presets").joinpath(f"{name}.json").read_text()


def load_config(source: str | Path) -> RunConfig:
    """Load a config from a JSON file, or a bundled preset by name (``vdp1``, ``power2``, ...)."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
    elif str(source) in PRESETS:
        text = preset_text(str(source))
    else:
        raise ConfigError("", f"no such config file or preset: {source}")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError("", f"invalid JSON: {err}") from None
    return config_from_dict(obj)
