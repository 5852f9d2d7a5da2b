"""Pipeline configuration: one flat YAML key-value file, overridable from the CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError

# keys that change how fast a run goes but never what it computes
_RUNTIME_KEYS = {"threads"}


@dataclass
class PipelineConfig:
    output_dir: str = "runs/default"
    electricity_csv: str = ""
    travel_csv: str = ""

    interval_minutes: int = 5
    analysis_window: list = field(default_factory=lambda: ["00:00", "06:00"])
    weekdays: list = field(default_factory=lambda: ["Tue", "Wed", "Thu"])
    date_start: str = ""
    date_end: str = ""
    season: str = ""

    k: int = 10
    gap_candidates: list = field(default_factory=lambda: list(range(2, 13)))
    gap_B: int = 20
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 300
    cluster_seed: int = 0

    congestion_ratio: float = 2.0
    persistence: int = 3
    search_window: list = field(default_factory=lambda: ["05:00", "12:00"])
    fftt_mode: str = "min"
    fftt_percentile: float = 5.0
    fill_gaps: bool = False

    targets: list = field(default_factory=lambda: ["cst", "duration"])
    cst_kinds: list = field(default_factory=lambda: ["aggregate", "disaggregate", "mixed"])
    duration_kinds: list = field(default_factory=lambda: ["aggregate", "disaggregate", "aggregate+cst"])
    method: str = "lasso"
    eval_mode: str = "nested-cv"
    outer_folds: int = 3
    inner_folds: int = 4
    n_alphas: int = 50
    alpha_eps: float = 1e-4
    train_fraction: float = 0.759493670886076
    cv_seed: int = 0

    arma_cutoff: str = "06:00"
    arma_coverage_cutoffs: list = field(default_factory=lambda: ["04:00", "06:00", "08:00"])
    arma_p_max: int = 4
    arma_q_max: int = 4
    history_lookback: int = 5

    similarity_alpha: float = 0.0001
    similarity_threshold: float = 0.0

    sweep_ends: list = field(default_factory=lambda: ["02:00", "04:00", "06:00"])
    sweep_kind: str = "aggregate"

    synth: dict = field(default_factory=dict)
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.eval_mode not in ("nested-cv", "fixed-split"):
            raise ConfigError(f"eval_mode must be nested-cv or fixed-split, got {self.eval_mode!r}")
        if self.method not in ("lasso", "ols"):
            raise ConfigError(f"method must be lasso or ols, got {self.method!r}")
        if self.k < 0:
            raise ConfigError("k must be positive (or 0 to choose it with the GAP statistic)")
        if self.outer_folds < 2 or self.inner_folds < 2:
            raise ConfigError("cross-validation needs at least two folds per level")
        if self.fftt_mode not in ("min", "percentile"):
            raise ConfigError(f"fftt_mode must be min or percentile, got {self.fftt_mode!r}")
        for t in self.targets:
            if t not in ("cst", "duration"):
                raise ConfigError(f"unknown target {t!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if not isinstance(self.synth, dict):
            raise ConfigError("synth must be a mapping of scenario parameters")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: expected a key-value mapping")
        return cls.from_dict(data)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def save(self, path) -> None:
        Path(path).write_text(self.dump())

    def override(self, **changes) -> "PipelineConfig":
        data = self.to_dict()
        for key, value in changes.items():
            if key not in data:
                raise ConfigError(f"unknown config key {key!r}")
            data[key] = value
        return PipelineConfig.from_dict(data)

    def hash(self) -> str:
        data = {k: v for k, v in self.to_dict().items() if k not in _RUNTIME_KEYS}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # resolved paths -----------------------------------------------------------
    def out(self, *parts) -> Path:
        return Path(self.output_dir).joinpath(*parts)

    def electricity_path(self) -> Path:
        return Path(self.electricity_csv) if self.electricity_csv else self.out("synth", "electricity.csv")

    def travel_path(self) -> Path:
        return Path(self.travel_csv) if self.travel_csv else self.out("synth", "travel_times.csv")


def parse_assignment(text: str) -> tuple[str, object]:
    """'key=value' with the value parsed as YAML (so lists and numbers work)."""
    if "=" not in text:
        raise ConfigError(f"expected KEY=VALUE, got {text!r}")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}") from None
    return key.strip(), value
