"""Flat ``key = value`` configuration shared by every subcommand."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Dict, Mapping, Optional

from .ingest import InputError


@dataclass(frozen=True)
class PipelineConfig:
    threshold: float = 0.7
    min_area: float = 0.01
    pad: int = 10
    min_conf: float = 30.0
    iou_trigger: float = 0.25
    cutoff: float = 0.5
    lr: float = 0.01
    updates: int = 640
    eval_every: int = 10
    seed: int = 0

    def __post_init__(self):
        checks = {
            "threshold": 0.0 <= self.threshold <= 1.0,
            "min_area": 0.0 <= self.min_area <= 1.0,
            "pad": self.pad >= 0,
            "min_conf": 0.0 <= self.min_conf <= 100.0,
            "iou_trigger": 0.0 <= self.iou_trigger <= 1.0,
            "cutoff": 0.0 <= self.cutoff <= 1.0,
            "lr": self.lr >= 0.0,
            "updates": self.updates >= 1,
            "eval_every": self.eval_every >= 1,
            "seed": self.seed >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise InputError(f"config value out of range: {', '.join(bad)}")

    def to_dict(self) -> dict:
        return asdict(self)

    def merged(self, overrides: Mapping[str, object]) -> "PipelineConfig":
        """Copy with the non-None entries of ``overrides`` applied."""
        known = {f.name for f in fields(self)}
        unknown = set(overrides) - known
        if unknown:
            raise InputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _coerce(name: str, raw: str):
    kind = {f.name: f.type for f in fields(PipelineConfig)}[name]
    try:
        if kind in (int, "int"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise InputError(f"config key {name}: cannot parse {raw!r}") from None


def parse_config(text: str) -> Dict[str, object]:
    known = {f.name for f in fields(PipelineConfig)}
    out: Dict[str, object] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"config line {n}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise InputError(f"config line {n}: unknown key {key!r}")
        if key in out:
            raise InputError(f"config line {n}: duplicate key {key!r}")
        out[key] = _coerce(key, value)
    return out


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, object]] = None) -> PipelineConfig:
    """Defaults, then the file (if any), then explicit overrides."""
    cfg = PipelineConfig()
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as e:
            raise InputError(f"cannot read config {path}: {e}") from e
        cfg = cfg.merged(parse_config(text))
    if overrides:
        cfg = cfg.merged(overrides)
    return cfg
