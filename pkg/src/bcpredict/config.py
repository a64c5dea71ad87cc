"""Flat ``key = value`` configuration files.

Precedence, lowest to highest: built-in defaults, the ``--config`` file,
``--set KEY=VALUE`` overrides, dedicated flags (``--seed``, ``--variant``...).
Unknown keys are rejected. Lines starting with ``#`` are comments. Tuple
values are comma- or space-separated.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig


@dataclass
class CliConfig(TrainConfig):
    # paths
    manifest: str = ""
    cache_dir: str = ""
    audio_dir: str = ""
    transcripts: str = ""
    lexicon_dir: str = ""
    checkpoint: str = ""
    out: str = "out"
    # annotation
    corpus: str = "swda"
    split_sizes: tuple = ()
    negative_offset_ms: int = 3000
    window_ms: int = 2000
    # evaluation
    split: str = "test"
    # synthetic corpus
    synth_rule: str = "audio_only"
    synth_n_instances: int = 600
    synth_split_sizes: tuple = ()
    synth_n_listeners: int = 3
    synth_n_speakers: int = 3
    synth_noise: float = 0.5
    synth_instances_per_dialog: int = 50
    # grid: key -> list of values; filled from grid_* keys
    grid: dict = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def resolved_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "grid":
                for gk in sorted(v):
                    lines.append(f"grid_{gk} = " + "; ".join(_fmt(x) for x in v[gk]))
            else:
                lines.append(f"{f.name} = {_fmt(v)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        """Hash of the settings, ignoring where inputs and outputs live."""
        keep = [ln for ln in self.resolved_text().splitlines()
                if ln.split(" = ", 1)[0] not in PATH_FIELDS]
        return hashlib.sha256("\n".join(keep).encode()).hexdigest()[:16]


PATH_FIELDS = frozenset({"manifest", "cache_dir", "audio_dir", "transcripts", "lexicon_dir",
                         "checkpoint", "out"})


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    return str(v)


_FIELDS = {f.name: f for f in fields(CliConfig)}
_GRID_KEYS = {f.name for f in fields(TrainConfig)}


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(p) for p in raw.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _grid_values(key: str, raw: str):
    default = getattr(TrainConfig(), key)
    # for tuple-valued keys, alternatives are separated by ';'
    sep = ";" if isinstance(default, tuple) else ","
    vals = [_coerce(key, p, default) for p in raw.split(sep) if p.strip()]
    if not vals:
        raise ConfigError(f"grid_{key}: no values")
    return vals


def apply(cfg: CliConfig, key: str, raw: str) -> None:
    key = key.strip().replace("-", "_")
    if key.startswith("grid_"):
        gk = key[len("grid_"):]
        if gk not in _GRID_KEYS:
            raise ConfigError(f"unknown grid key {key!r}")
        cfg.grid[gk] = _grid_values(gk, raw)
        return
    if key not in _FIELDS or key == "grid":
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _coerce(key, raw, _FIELDS[key].default if _FIELDS[key].default is not None else ""))


def parse_text(text: str, cfg: CliConfig | None = None, origin: str = "<config>") -> CliConfig:
    cfg = cfg or CliConfig()
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {line!r}")
        k, v = line.split("=", 1)
        try:
            apply(cfg, k, v)
        except ConfigError as exc:
            raise ConfigError(f"{origin}:{n}: {exc}") from None
    return cfg


def load(path) -> CliConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, origin=str(path))


def finalize(cfg: CliConfig) -> CliConfig:
    """Re-run dataclass validation on the merged values."""
    try:
        TrainConfig.__post_init__(cfg)
    except Exception as exc:  # InvalidConfig or a bad variant name
        raise ConfigError(str(exc)) from exc
    if cfg.split not in ("train", "dev", "test"):
        raise ConfigError(f"split must be train, dev or test, got {cfg.split!r}")
    return cfg
