"""Pipeline configuration: YAML schema, validation, effective-config dump.

The config file is the reproducibility anchor: a run is fully described
by it (plus the input files), and every stage re-emits the effective
configuration so runs can be diffed and repeated exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .solver import SolverParams

__all__ = [
    "InputSpec",
    "PreprocessConfig",
    "StrainConfig",
    "ReportConfig",
    "PipelineConfig",
    "load_config",
    "dump_config",
    "parse_pair_selector",
]


@dataclass
class InputSpec:
    path: str
    face_id: str
    state_id: str
    humidity: float
    dpi: float | None = None  # overrides file metadata when set


@dataclass
class PreprocessConfig:
    border_px: int = 8
    median_radius: int = 1
    erosion_radius: int = 5
    crop_margin: int = 4


@dataclass
class StrainConfig:
    crack_factor: float = 10.0
    min_count: int = 10
    min_span: int = 10


@dataclass
class ReportConfig:
    mm_units: bool = True
    projection_radius_mm: float | None = None
    projection_delta_y_mm: float | None = None


@dataclass
class PipelineConfig:
    output_dir: str = "out"
    working_dpi: float = 150.0
    inputs: list[InputSpec] = field(default_factory=list)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    solver: SolverParams = field(default_factory=SolverParams)
    strain: StrainConfig = field(default_factory=StrainConfig)
    report: ReportConfig = field(default_factory=ReportConfig)
    pairs: str = "initial"  # or explicit "REF:OTHER[,REF:OTHER...]"
    workers: int = 1
    seed: int = 7
    rerun_registration: bool = False

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.working_dpi <= 0:
            raise ConfigError("working_dpi must be positive")
        seen = set()
        for spec in self.inputs:
            key = (spec.face_id, spec.state_id)
            if key in seen:
                raise ConfigError(f"duplicate input for face/state {key}")
            seen.add(key)
            if spec.humidity is None:
                raise ConfigError(
                    f"input {spec.path}: state {spec.state_id!r} has no humidity")
            if not 0.0 <= float(spec.humidity) <= 100.0:
                raise ConfigError(
                    f"input {spec.path}: humidity {spec.humidity} outside [0, 100]")

    def state_order(self, face_id: str) -> list[str]:
        return [s.state_id for s in self.inputs if s.face_id == face_id]

    def face_ids(self) -> list[str]:
        out = []
        for spec in self.inputs:
            if spec.face_id not in out:
                out.append(spec.face_id)
        return out


def _build(cls, data: dict, where: str):
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def load_config(path) -> PipelineConfig:
    """Load and validate a YAML configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_dict(raw, where=str(path))


def config_from_dict(raw: dict, where: str = "config") -> PipelineConfig:
    raw = dict(raw)
    inputs = [_build(InputSpec, item, f"{where}.inputs[{i}]")
              for i, item in enumerate(raw.pop("inputs", []) or [])]
    sections = {
        "preprocess": (PreprocessConfig, {}),
        "solver": (SolverParams, {}),
        "strain": (StrainConfig, {}),
        "report": (ReportConfig, {}),
    }
    built = {}
    for name, (cls, _) in sections.items():
        built[name] = _build(cls, raw.pop(name, {}) or {}, f"{where}.{name}")
    cfg = _build(PipelineConfig, raw, where)
    cfg.inputs = inputs
    cfg.preprocess = built["preprocess"]
    cfg.solver = built["solver"]
    cfg.strain = built["strain"]
    cfg.report = built["report"]
    cfg.validate()
    return cfg


def dump_config(cfg: PipelineConfig, path) -> None:
    """Write the effective configuration (reloadable, key-sorted)."""
    data = asdict(cfg)
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(data, fh, sort_keys=True, default_flow_style=False)


def parse_pair_selector(selector: str, state_order: list[str]) -> list[tuple[str, str]]:
    """Resolve a pair selector against one face's humidity states.

    ``initial`` pairs every later state against the first configured
    state; an explicit selector lists ``REF:OTHER`` items separated by
    commas.
    """
    if not state_order:
        return []
    if selector == "initial":
        ref = state_order[0]
        return [(ref, other) for other in state_order[1:]]
    pairs = []
    for item in selector.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"pair selector item {item!r} is not REF:OTHER")
        a, b = parts[0].strip(), parts[1].strip()
        if a not in state_order or b not in state_order:
            continue  # selector may address other faces
        if a == b:
            raise ConfigError(f"pair selector {item!r} pairs a state with itself")
        pairs.append((a, b))
    return pairs
