"""YAML experiment files.

A file has a ``schema_version`` and up to five sections::

    schema_version: 1
    dataset:    {path: data/blobs.njd, generator: blobs, n_train: 256, ...}
    noise:      {discrete_rates: [0.4, 0.4, 0.4], continuous_rates: []}
    experiment: {mode: proposed, lam: 0.8, iterations: 2000, ...}
    sweep:      {lambdas: [0.2, 0.4, 0.6, 0.8, 1.0], seeds: [0, 1, 2]}
    ablate:     {seeds: [0, 1, 2, 3, 4]}

Unknown keys anywhere are rejected with the offending key named. Relative
paths are resolved against the directory holding the file.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .datagen import DatasetSpec
from .lambdastudy import DEFAULT_LAMBDAS, SweepSpec
from .noise import NoiseConfig
from .trainer import ConfigError, ExperimentConfig

SCHEMA_VERSION = 1
SECTIONS = ("dataset", "noise", "experiment", "sweep", "ablate")


@dataclass
class ConfigFile:
    path: Path | None
    dataset_path: Path | None
    dataset: DatasetSpec
    noise: NoiseConfig
    experiment: ExperimentConfig
    sweep_lambdas: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    sweep_seeds: list[int] = field(default_factory=lambda: [0, 1, 2])
    ablate_seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])

    def sweep_spec(self) -> SweepSpec:
        return SweepSpec(self.experiment, list(self.sweep_lambdas), list(self.sweep_seeds))


def _names(cls, exclude=()) -> set[str]:
    return {f.name for f in fields(cls)} - set(exclude)


def _check_keys(section: str, d, allowed: set[str]) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(section, "must be a mapping")
    for key in d:
        if key not in allowed:
            raise ConfigError(f"{section}.{key}", "unknown key")
    return d


def _build(section: str, cls, values: dict):
    try:
        obj = cls(**values)
    except TypeError as exc:
        raise ConfigError(section, str(exc)) from None
    defaults = cls() if section != "experiment" else ExperimentConfig()
    for f in fields(cls):
        v, ref = getattr(obj, f.name), getattr(defaults, f.name)
        if ref is None or v is None:
            continue
        if isinstance(ref, bool) and not isinstance(v, bool):
            raise ConfigError(f"{section}.{f.name}", f"expected a boolean, got {v!r}")
        if isinstance(ref, (int, float)) and not isinstance(ref, bool):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{section}.{f.name}", f"expected a number, got {v!r}")
            if isinstance(ref, int) and not isinstance(ref, bool) and not float(v).is_integer():
                raise ConfigError(f"{section}.{f.name}", f"expected an integer, got {v!r}")
            setattr(obj, f.name, type(ref)(v))
        if isinstance(ref, str) and not isinstance(v, str):
            raise ConfigError(f"{section}.{f.name}", f"expected a string, got {v!r}")
    return obj


def parse(doc: dict, base_dir: Path | None = None, source: Path | None = None) -> ConfigFile:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a mapping")
    _check_keys("<root>", doc, {"schema_version", *SECTIONS})
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    base_dir = base_dir or Path.cwd()

    ds = dict(_check_keys("dataset", doc.get("dataset"), _names(DatasetSpec) | {"path"}))
    raw_path = ds.pop("path", None)
    dataset_path = None if raw_path is None else (base_dir / raw_path).resolve()
    spec = _build("dataset", DatasetSpec, ds)
    try:
        spec.validate()
    except ValueError as exc:
        raise ConfigError("dataset", str(exc)) from None

    noise = _build("noise", NoiseConfig, _check_keys("noise", doc.get("noise"), _names(NoiseConfig)))
    try:
        noise.validate()
    except ValueError as exc:
        raise ConfigError("noise", str(exc)) from None

    ex = _check_keys("experiment", doc.get("experiment"), _names(ExperimentConfig, exclude=("dataset",)))
    cfg = _build("experiment", ExperimentConfig, ex)
    cfg.dataset = "" if dataset_path is None else str(dataset_path)
    cfg.validate()

    out = ConfigFile(source, dataset_path, spec, noise, cfg)
    sw = _check_keys("sweep", doc.get("sweep"), {"lambdas", "seeds"})
    if "lambdas" in sw:
        out.sweep_lambdas = [float(v) for v in sw["lambdas"]]
    if "seeds" in sw:
        out.sweep_seeds = [int(v) for v in sw["seeds"]]
    try:
        out.sweep_spec().validate()
    except ValueError as exc:
        raise ConfigError("sweep", str(exc)) from None
    ab = _check_keys("ablate", doc.get("ablate"), {"seeds"})
    if "seeds" in ab:
        out.ablate_seeds = [int(v) for v in ab["seeds"]]
        if not out.ablate_seeds or len(set(out.ablate_seeds)) != len(out.ablate_seeds):
            raise ConfigError("ablate.seeds", "must be a non-empty list of distinct integers")
    return out


def load(path) -> ConfigFile:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return parse(doc, path.parent.resolve(), path)


def dump(cfg: ConfigFile) -> dict:
    """Inverse of :func:`parse`, with the dataset path left absolute."""
    ex = asdict(cfg.experiment)
    ex.pop("dataset")
    ds = asdict(cfg.dataset)
    if cfg.dataset_path is not None:
        ds["path"] = str(cfg.dataset_path)
    return {
        "schema_version": SCHEMA_VERSION,
        "dataset": ds,
        "noise": asdict(cfg.noise),
        "experiment": ex,
        "sweep": {"lambdas": list(cfg.sweep_lambdas), "seeds": list(cfg.sweep_seeds)},
        "ablate": {"seeds": list(cfg.ablate_seeds)},
    }
