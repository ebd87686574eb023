"""Pipeline configuration: defaults, per-mode radius presets, flat ``key = value`` files."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .alignment import DEFAULT_BETA, DEFAULT_K_RECIPROCAL, DEFAULT_RHO, SGMParams
from .clustering import DEFAULT_MIN_PTS
from .errors import ConfigError
from .fileio import atomic_write_text, format_value
from .losses import DEFAULT_PSI, DEFAULT_TAU

# (eps1_v, eps2_v, eps1_i, eps2_i) per transfer setting
EPS_PRESETS: dict[str, tuple[float, float, float, float]] = {
    "SYSUtoLLCM": (0.6, 0.57, 0.6, 0.57),
    "SYSUtoRegDB": (0.33, 0.3, 0.33, 0.3),
    "LLCMtoSYSU": (0.66, 0.63, 0.6, 0.57),
    "LLCMtoRegDB": (0.33, 0.3, 0.33, 0.3),
    "RegDBtoSYSU": (0.66, 0.63, 0.6, 0.57),
    "RegDBtoLLCM": (0.6, 0.57, 0.6, 0.57),
}


@dataclass(frozen=True)
class PipelineConfig:
    eps1_v: float = 0.6
    eps2_v: float = 0.57
    eps1_i: float = 0.6
    eps2_i: float = 0.57
    min_pts: int = DEFAULT_MIN_PTS
    min_cluster_size: int = 1
    alpha: float = 0.5
    beta: float = DEFAULT_BETA
    rho: float = DEFAULT_RHO
    tau: float = DEFAULT_TAU
    psi: float = DEFAULT_PSI
    k_reciprocal: int = DEFAULT_K_RECIPROCAL
    contrastive_temperature: float = 1.0
    cmcc_active: bool = True
    cmcc_mode: str = "center"
    max_pair_cost: float | None = None
    seed: int = 0

    def validate(self) -> "PipelineConfig":
        problems = []
        if not self.eps1_v > self.eps2_v > 0:
            problems.append("need eps1_v > eps2_v > 0")
        if not self.eps1_i > self.eps2_i > 0:
            problems.append("need eps1_i > eps2_i > 0")
        if self.min_pts < 1:
            problems.append("min_pts must be >= 1")
        if self.min_cluster_size < 1:
            problems.append("min_cluster_size must be >= 1")
        for name in ("alpha", "beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        for name in ("rho", "tau", "contrastive_temperature"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be positive")
        if self.psi < 0:
            problems.append("psi must be non-negative")
        if self.k_reciprocal < 1:
            problems.append("k_reciprocal must be >= 1")
        if self.cmcc_mode not in ("center", "pairwise"):
            problems.append("cmcc_mode must be 'center' or 'pairwise'")
        if self.max_pair_cost is not None and self.max_pair_cost < 0:
            problems.append("max_pair_cost must be non-negative")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    @classmethod
    def preset(cls, mode: str, **overrides) -> "PipelineConfig":
        if mode not in EPS_PRESETS:
            raise ConfigError(f"unknown preset {mode!r}; choose from {', '.join(EPS_PRESETS)}")
        e1v, e2v, e1i, e2i = EPS_PRESETS[mode]
        return cls(eps1_v=e1v, eps2_v=e2v, eps1_i=e1i, eps2_i=e2i, **overrides)

    def sgm_params(self) -> SGMParams:
        return SGMParams(
            eps1_v=self.eps1_v,
            eps2_v=self.eps2_v,
            eps1_i=self.eps1_i,
            eps2_i=self.eps2_i,
            min_pts=self.min_pts,
            min_cluster_size=self.min_cluster_size,
            alpha=self.alpha,
            beta=self.beta,
            rho=self.rho,
            k_reciprocal=self.k_reciprocal,
            max_pair_cost=self.max_pair_cost,
        )

    def with_updates(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def coerce(key: str, raw: str):
    """Convert a text value to the field's type."""
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    default = getattr(PipelineConfig(), key)
    text = raw.strip()
    try:
        if key == "max_pair_cost":
            return None if text.lower() in ("", "none", "off") else float(text)
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key == "preset":
            values.update(zip(("eps1_v", "eps2_v", "eps1_i", "eps2_i"), _preset_eps(raw)))
            continue
        values[key] = coerce(key, raw)
    return values


def _preset_eps(mode: str):
    if mode not in EPS_PRESETS:
        raise ConfigError(f"unknown preset {mode!r}; choose from {', '.join(EPS_PRESETS)}")
    return EPS_PRESETS[mode]


def load_config(path, base: PipelineConfig | None = None) -> PipelineConfig:
    base = PipelineConfig() if base is None else base
    values = parse_config_text(Path(path).read_text(encoding="utf-8"))
    return replace(base, **values)


def format_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {format_value(v)}\n" for k, v in asdict(cfg).items())


def save_config(cfg: PipelineConfig, path) -> None:
    atomic_write_text(path, format_config(cfg))
