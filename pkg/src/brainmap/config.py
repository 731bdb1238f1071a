"""Run configuration: one TOML document with a section per stage.

Unknown sections or keys are rejected with the full list of offenders.
Named presets supply the starting values that a file may then override.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import tomli

from .atlas_filter import FilterConfig
from .datagen import GenSpec
from .distill import DistillConfig
from .errors import ConfigError
from .forest import ForestConfig
from .model import FUSION_MODES, GcnConfig
from .numerics.linalg import SvdConfig


@dataclass(frozen=True)
class FusionConfig:
    cna_dim: int = 64
    giac_hidden: int = 0
    mode: str = "agif"

    def __post_init__(self):
        if self.cna_dim < 1 or self.giac_hidden < 0:
            raise ConfigError("cna_dim must be >= 1 and giac_hidden >= 0")
        if self.mode not in FUSION_MODES:
            raise ConfigError(f"fusion mode must be one of {FUSION_MODES}")


@dataclass(frozen=True)
class BenchConfig:
    grid: tuple = (32, 64, 128, 256)
    feat_dim: int = 16
    batch: int = 32
    repeats: int = 5
    filtered_nodes: int = 30
    full_nodes: int = 90
    epochs: int = 3


@dataclass(frozen=True)
class SweepConfig:
    cna_dims: tuple = (16, 32, 64, 128)
    giac_hiddens: tuple = (0, 16, 32, 128)
    neurons: tuple = (16, 32, 64, 128)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    folds: int = 5
    agsf: bool = True
    features: str = "auto"
    filter: FilterConfig = field(default_factory=FilterConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    distill: DistillConfig = field(default_factory=DistillConfig)
    gcn: GcnConfig = field(default_factory=GcnConfig)
    gen: GenSpec = field(default_factory=GenSpec)
    bench: BenchConfig = field(default_factory=BenchConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    def __post_init__(self):
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    def to_json(self) -> dict:
        return _jsonable(asdict(self))

    def model_config(self) -> dict:
        """The subset stored with each trained model."""
        return {"cna_dim": self.fusion.cna_dim, "giac_hidden": self.fusion.giac_hidden,
                "gcn": asdict(self.gcn)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


PRESETS = {
    "default": {},
    "adni-profile": {"fusion": {"cna_dim": 64, "giac_hidden": 32}, "gcn": {"hidden_width": 128}},
    "ppmi-profile": {"fusion": {"cna_dim": 128, "giac_hidden": 128}, "gcn": {"hidden_width": 32}},
}

# Flat run-level keys live under [run]; everything else is a section.
_SECTIONS = {
    "filter": FilterConfig,
    "forest": ForestConfig,
    "fusion": FusionConfig,
    "distill": DistillConfig,
    "svd": SvdConfig,
    "gcn": GcnConfig,
    "gen": GenSpec,
    "bench": BenchConfig,
    "sweep": SweepConfig,
}
_RUN_KEYS = ("seed", "folds", "agsf", "features")


def _names(cls):
    return {f.name for f in fields(cls)}


def _check_keys(doc: dict):
    bad = []
    for section, body in doc.items():
        if section == "run":
            allowed = set(_RUN_KEYS)
        elif section in _SECTIONS:
            allowed = _names(_SECTIONS[section]) - {"forest", "svd"}
        else:
            bad.append(section)
            continue
        if not isinstance(body, dict):
            bad.append(section)
            continue
        bad.extend(f"{section}.{k}" for k in body if k not in allowed)
    if bad:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(bad))}", keys=sorted(bad))


def _merge(base: dict, over: dict) -> dict:
    out = {k: dict(v) if isinstance(v, dict) else v for k, v in base.items()}
    for k, v in over.items():
        if isinstance(v, dict):
            out.setdefault(k, {}).update(v)
        else:
            out[k] = v
    return out


def _build(cls, values: dict, **extra):
    kw = {}
    for f in fields(cls):
        if f.name in values:
            v = values[f.name]
            kw[f.name] = tuple(v) if isinstance(v, list) else v
    kw.update(extra)
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def from_mapping(doc: dict, preset: str = "default") -> RunConfig:
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    _check_keys(doc)
    d = _merge(PRESETS[preset], doc)
    run = d.get("run", {})
    forest = _build(ForestConfig, d.get("forest", {}))
    svd = _build(SvdConfig, {"method": "lapack", **d.get("svd", {})})
    return RunConfig(
        seed=run.get("seed", 0),
        folds=run.get("folds", 5),
        agsf=run.get("agsf", True),
        features=run.get("features", "auto"),
        filter=_build(FilterConfig, d.get("filter", {}), forest=forest),
        fusion=_build(FusionConfig, d.get("fusion", {})),
        distill=_build(DistillConfig, d.get("distill", {}), svd=svd),
        gcn=_build(GcnConfig, d.get("gcn", {})),
        gen=_build(GenSpec, d.get("gen", {})),
        bench=_build(BenchConfig, d.get("bench", {})),
        sweep=_build(SweepConfig, d.get("sweep", {})),
    )


def parse_config(text: str, preset: str = "default") -> RunConfig:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return from_mapping(doc, preset)


def load_config(path=None, preset: str = "default") -> RunConfig:
    if path is None:
        return from_mapping({}, preset)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text(), preset)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise ConfigError(f"cannot write {type(v).__name__} to TOML")


def dump_config(cfg: RunConfig) -> str:
    """TOML text that parses back to ``cfg``."""
    d = asdict(cfg)
    sections = {"run": {k: d[k] for k in _RUN_KEYS}}
    sections["filter"] = {k: v for k, v in d["filter"].items() if k != "forest"}
    sections["forest"] = d["filter"]["forest"]
    sections["fusion"] = d["fusion"]
    sections["distill"] = {k: v for k, v in d["distill"].items() if k != "svd"}
    sections["svd"] = d["distill"]["svd"]
    for name in ("gcn", "gen", "bench", "sweep"):
        sections[name] = d[name]
    lines = []
    for name, body in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_toml_value(v)}" for k, v in body.items())
        lines.append("")
    return "\n".join(lines)


def with_overrides(cfg: RunConfig, **sections) -> RunConfig:
    """Replace fields section-wise, e.g. ``with_overrides(cfg, gcn={"epochs": 0})``."""
    out = cfg
    for name, values in sections.items():
        if isinstance(values, dict):
            out = replace(out, **{name: replace(getattr(out, name), **values)})
        else:
            out = replace(out, **{name: values})
    return out
