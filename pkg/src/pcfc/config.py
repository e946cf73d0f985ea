"""Flat ``key = value`` run configuration.

Lines starting with ``#`` are comments.  List-valued keys take comma
separated values.  Unknown keys are rejected by name.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class PipelineConfig:
    window_px: int = 200
    divisions: int = 100
    vf: float = 0.6
    radius_px: float = 15.6
    grid_m: int = 5
    amplitude_psi: float = 1000.0
    alpha: tuple[float, ...] = (0.001, 0.01, 0.05, 0.1)
    epsilon: float = 0.0
    k: tuple[int, ...] = (3, 4)
    split: float = 0.8
    seeds: tuple[int, ...] = (139, 176)
    holdout_seeds: tuple[int, ...] = ()
    seed: int = 0  # split / perturbation streams

    def __post_init__(self):
        problems = []
        if self.window_px <= 0:
            problems.append("window_px must be positive")
        if self.divisions < 2:
            problems.append("divisions must be >= 2")
        if not 0.0 <= self.vf < 1.0:
            problems.append("vf must lie in [0, 1)")
        if self.grid_m < 3 or self.grid_m % 2 == 0:
            problems.append("grid_m must be odd and >= 3")
        if self.amplitude_psi <= 0:
            problems.append("amplitude_psi must be positive")
        if not self.alpha or not all(0.0 < a < 1.0 for a in self.alpha):
            problems.append("alpha values must lie in (0, 1)")
        if self.epsilon < 0:
            problems.append("epsilon must be >= 0")
        if not self.k or not all(k >= 1 for k in self.k):
            problems.append("k values must be >= 1")
        if not 0.0 < self.split < 1.0:
            problems.append("split must lie in (0, 1)")
        if not self.seeds:
            problems.append("seeds must list at least one RVE seed")
        if len(set(self.seeds) | set(self.holdout_seeds)) != len(self.seeds) + len(self.holdout_seeds):
            problems.append("seeds and holdout_seeds must be distinct")
        if problems:
            raise ConfigError("; ".join(problems))

    def with_overrides(self, **kw) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


_LIST_KEYS = {"alpha": float, "k": int, "seeds": int, "holdout_seeds": int}
_SCALAR_KEYS = {f.name: f.type for f in fields(PipelineConfig) if f.name not in _LIST_KEYS}
_SCALAR_CAST = {"int": int, "float": float}


def parse_config(text: str, source: str = "<config>") -> PipelineConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in _LIST_KEYS:
            cast = _LIST_KEYS[key]
            items = [v.strip() for v in value.split(",") if v.strip()]
            try:
                values[key] = tuple(cast(v) for v in items)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
        elif key in _SCALAR_KEYS:
            cast = _SCALAR_CAST[_SCALAR_KEYS[key]]
            try:
                values[key] = cast(value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {value!r}") from None
        else:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
    return PipelineConfig(**values)


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, str(path))


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, tuple) else v}")
    return "\n".join(lines) + "\n"
