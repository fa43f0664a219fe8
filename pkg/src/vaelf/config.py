"""Run configuration: one JSON file, validated up front, with CLI overrides.

Example::

    {
      "dataset": {"synthetic": {"k": 3, "n_days": 21, "m_slots": 1440}},
      "density": 0.05,
      "seeds": {"data": 0, "split": 0, "model": 0},
      "train": {"epochs_max": 300, "batch_size": 32, "lr": 0.003},
      "lfa": {"rank": 8, "lr": 0.01, "lambda": 0.02, "epochs": 300},
      "out": "runs/d05"
    }

``dataset`` holds exactly one of ``manifest`` (path to a dataset manifest,
relative to the config file) or ``synthetic`` (generator parameters).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baseline import LfaConfig
from .data import SyntheticSpec
from .trainer import TrainConfig

FORMAT_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key path."""


@dataclass
class Seeds:
    data: int = 0
    split: int = 0
    model: int = 0


@dataclass
class RunConfig:
    manifest: str | None = None
    synthetic: SyntheticSpec | None = None
    density: float = 1.0
    seeds: Seeds = field(default_factory=Seeds)
    train: TrainConfig = field(default_factory=TrainConfig)
    lfa: LfaConfig = field(default_factory=LfaConfig)
    out: str = "runs/default"

    def to_dict(self) -> dict:
        d = {
            "dataset": {"manifest": self.manifest} if self.manifest is not None
            else {"synthetic": asdict(self.synthetic)},
            "density": self.density,
            "seeds": asdict(self.seeds),
            "train": {k: v for k, v in asdict(self.train).items() if k != "seed"},
            "lfa": {("lambda" if k == "lam" else k): v for k, v in asdict(self.lfa).items() if k != "seed"},
            "out": self.out,
            "format_version": FORMAT_VERSION,
        }
        return d


def _build(cls, raw, path: str, rename: dict | None = None):
    """Instantiate dataclass ``cls`` from dict ``raw``, rejecting unknown keys and bad types."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    rename = rename or {}
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = rename.get(key, key)
        if name not in known or name == "seed":
            raise ConfigError(f"{path}.{key}: unknown key")
        default = getattr(cls(), name)
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(default, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        else:
            ok = value is None or isinstance(value, list)
        if not ok:
            raise ConfigError(f"{path}.{key}: bad value {value!r}")
        kwargs[name] = value
    obj = cls(**kwargs)
    try:
        obj.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return obj


def from_dict(raw: dict, base_dir: Path | None = None) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("<root>: expected an object")
    allowed = {"dataset", "density", "seeds", "train", "lfa", "out", "format_version"}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{key}: unknown key")
    if raw.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ConfigError(f"format_version: unsupported {raw['format_version']!r}")
    cfg = RunConfig()
    dataset = raw.get("dataset", {"synthetic": {}})
    if not isinstance(dataset, dict) or len(dataset) != 1 or next(iter(dataset)) not in ("manifest", "synthetic"):
        raise ConfigError("dataset: needs exactly one of 'manifest' or 'synthetic'")
    if "manifest" in dataset:
        if not isinstance(dataset["manifest"], str):
            raise ConfigError("dataset.manifest: expected a path string")
        m = Path(dataset["manifest"])
        cfg.manifest = str(m if m.is_absolute() or base_dir is None else base_dir / m)
    else:
        syn = dict(dataset["synthetic"] or {})
        spec = SyntheticSpec()
        # shorter channel lists follow k when only k is overridden
        k = syn.get("k", spec.k)
        if isinstance(k, int) and k < spec.k:
            for name in ("base", "amplitude", "weekly", "phase"):
                syn.setdefault(name, getattr(spec, name)[:k])
        cfg.synthetic = _build(SyntheticSpec, syn, "dataset.synthetic")
    density = raw.get("density", 1.0)
    if not isinstance(density, (int, float)) or isinstance(density, bool) or not 0 < density <= 1:
        raise ConfigError(f"density: must lie in (0, 1], got {density!r}")
    cfg.density = float(density)
    seeds = raw.get("seeds", {})
    if not isinstance(seeds, dict):
        raise ConfigError("seeds: expected an object")
    for key, value in seeds.items():
        if key not in ("data", "split", "model"):
            raise ConfigError(f"seeds.{key}: unknown key")
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"seeds.{key}: expected an integer")
    cfg.seeds = Seeds(**seeds)
    cfg.train = _build(TrainConfig, raw.get("train", {}), "train")
    cfg.lfa = _build(LfaConfig, raw.get("lfa", {}), "lfa", rename={"lambda": "lam"})
    out = raw.get("out", cfg.out)
    if not isinstance(out, str):
        raise ConfigError("out: expected a path string")
    cfg.out = out
    cfg.train.seed = cfg.seeds.model
    cfg.lfa.seed = cfg.seeds.model
    return cfg


def load(path: str | Path | None) -> RunConfig:
    if path is None:
        return from_dict({})
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: {path} is not valid JSON ({exc})") from None
    return from_dict(raw, base_dir=path.parent)


def apply_overrides(cfg: RunConfig, out=None, seed_data=None, seed_split=None, seed_model=None) -> RunConfig:
    if out is not None:
        cfg.out = out
    if seed_data is not None:
        cfg.seeds.data = seed_data
    if seed_split is not None:
        cfg.seeds.split = seed_split
    if seed_model is not None:
        cfg.seeds.model = seed_model
    cfg.train.seed = cfg.seeds.model
    cfg.lfa.seed = cfg.seeds.model
    return cfg
