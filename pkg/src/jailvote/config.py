"""Configuration management.

The config file is a flat mapping, written either as YAML (`key: value`) or
as `key=value` lines. Keys are routed to the sub-config owning a field of
that name; synthesis keys carry a `synth_` prefix. Precedence is
CLI flag > config file > default (flags are applied by the CLI through
`Config.override`).
"""

import hashlib
import logging
import os
from dataclasses import dataclass, field, fields, replace
from datetime import date
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)

ELECTION_DAY = date(2020, 11, 3)

# Prior general elections used by the placebo tests.
PLACEBO_ELECTION_DAYS = {
    2016: date(2016, 11, 8),
    2012: date(2012, 11, 6),
}

CONTROL_WINDOWS = (7, 14, 21, 28, 35, 42)
THRESHOLDS = (0.75, 0.95)


def derive_seed(seed: int, *names: str | int) -> int:
    """Named sub-stream of the run seed.

    SHA-256 over the seed and the names, truncated to 64 bits, so stage
    streams are independent of each other and of evaluation order.
    """
    key = ":".join([str(seed), *map(str, names)]).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


@dataclass
class IngestConfig:
    """Roster → spell reconstruction."""
    # Unobserved days tolerated inside one spell (0 = any gap closes it).
    gap_tolerance: int = 0
    pool_start: date = date(2020, 8, 5)
    pool_end: date = date(2021, 2, 1)


@dataclass
class LinkageConfig:
    """Fellegi-Sunter fit and final linkage."""
    threshold: float = 0.75
    resamples: int = 50
    sample_size: int = 1_000_000
    em_tol: float = 1e-8
    em_max_iter: int = 500
    init_threshold: float = 0.88
    pre_threshold: float = 0.5
    election_day: date = ELECTION_DAY

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.resamples < 1 or self.sample_size < 1:
            raise ConfigError("resamples and sample_size must be positive")
        if not 0.0 <= self.init_threshold <= 1.0:
            raise ConfigError(f"init_threshold must be in [0, 1], got {self.init_threshold}")


@dataclass
class StudyConfig:
    """Window search and effect estimation."""
    control_days: int = 7
    balance_alpha: float = 0.10
    min_treatment_days: int = 7
    # Joint F on the cluster-robust vcov (False = classical vcov).
    cluster_robust_joint: bool = True
    calendar_path: Path | None = None

    def __post_init__(self):
        if isinstance(self.calendar_path, str):
            self.calendar_path = Path(self.calendar_path)
        if self.control_days not in CONTROL_WINDOWS:
            raise ConfigError(
                f"control_days must be one of {CONTROL_WINDOWS}, got {self.control_days}"
            )


@dataclass
class SynthConfig:
    """Synthetic scenario: population sizes, noise model and planted effects."""
    n_voters: int = 100_000
    n_bookings: int = 10_000
    states: tuple[str, ...] = ("NC", "WA", "GA", "TX", "PA")
    facilities_per_state: int = 4
    seed: int = 0
    # typo model, per character of a copied name
    typo_substitution: float = 0.01
    typo_transposition: float = 0.005
    typo_deletion: float = 0.005
    # missingness on the booking side
    missing_age: float = 0.10
    missing_gender: float = 0.10
    missing_first: float = 0.0
    missing_middle: float = 0.30
    true_match_rate: float = 0.4
    repeat_booking_rate: float = 0.0
    outage_rate: float = 0.0
    # planted effects (linear probability model)
    ate_binary: float = -0.03
    slope_proportion: float = 0.0
    black_extra_slope: float = 0.0
    registration_effect: float = 0.0
    # planted covariate drift: bookings entering more than drift_days before
    # Election Day carry drift_charges extra charges
    drift_days: int | None = None
    drift_charges: int = 2
    base_turnout: float = 0.40
    race_turnout: dict[str, float] = field(
        default_factory=lambda: {"white": 0.04, "Black": -0.02, "other": -0.04}
    )
    party_turnout: dict[str, float] = field(
        default_factory=lambda: {"Dem": 0.05, "Rep": 0.05, "other": -0.07}
    )
    age_turnout_slope: float = 0.004
    prior_turnout: dict[int, float] = field(default_factory=lambda: {2016: 0.45, 2012: 0.38})
    race_reporting_states: tuple[str, ...] = ("NC", "GA")
    pool_start: date = date(2020, 8, 5)
    pool_end: date = date(2021, 2, 1)
    # rosters keep being scraped after the pool closes so long stays end
    observe_end: date = date(2021, 3, 31)

    def __post_init__(self):
        self.states = tuple(self.states)
        self.race_reporting_states = tuple(self.race_reporting_states)
        rates = {
            "typo_substitution": self.typo_substitution,
            "typo_transposition": self.typo_transposition,
            "typo_deletion": self.typo_deletion,
            "missing_age": self.missing_age,
            "missing_gender": self.missing_gender,
            "missing_first": self.missing_first,
            "missing_middle": self.missing_middle,
            "true_match_rate": self.true_match_rate,
            "repeat_booking_rate": self.repeat_booking_rate,
            "outage_rate": self.outage_rate,
        }
        for name, value in rates.items():
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")


@dataclass
class Config:
    """Main configuration."""
    seed: int = 0
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    workdir: Path = field(default_factory=lambda: Path("./work"))
    ingest: IngestConfig = field(default_factory=IngestConfig)
    linkage: LinkageConfig = field(default_factory=LinkageConfig)
    study: StudyConfig = field(default_factory=StudyConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    source: Path | None = None

    def __post_init__(self):
        if isinstance(self.workdir, str):
            self.workdir = Path(self.workdir)

    @classmethod
    def load(cls, config_path: Path | None = None) -> "Config":
        """Load configuration from a flat YAML or key=value file.

        Resolution order: explicit arg → JAILVOTE_CONFIG env var → cwd
        jailvote.yaml. If the resolved path does not exist, defaults are
        returned.
        """
        if config_path is None:
            env_path = os.environ.get("JAILVOTE_CONFIG")
            config_path = Path(env_path) if env_path else Path("jailvote.yaml")

        if not config_path.exists():
            return cls()

        flat = _read_flat(config_path.read_text(encoding="utf-8"))
        cfg = cls.from_flat(flat)
        cfg.source = config_path
        return cfg

    @classmethod
    def from_flat(cls, flat: dict[str, Any]) -> "Config":
        top: dict[str, Any] = {}
        sections: dict[str, dict[str, Any]] = {
            "ingest": {}, "linkage": {}, "study": {}, "synth": {},
        }
        section_types = {
            "ingest": IngestConfig, "linkage": LinkageConfig,
            "study": StudyConfig, "synth": SynthConfig,
        }
        defaults = {name: typ() for name, typ in section_types.items()}

        for key, value in flat.items():
            key = str(key).strip()
            if key in ("seed", "threads", "workdir"):
                top[key] = _coerce(key, value, getattr(cls(), key))
                continue
            if key.startswith("synth_"):
                name = key[len("synth_"):]
                if hasattr(defaults["synth"], name):
                    sections["synth"][name] = _coerce(key, value, getattr(defaults["synth"], name))
                    continue
            for section in ("ingest", "linkage", "study"):
                if hasattr(defaults[section], key):
                    sections[section][key] = _coerce(key, value, getattr(defaults[section], key))
                    break
            else:
                if not key.startswith("synth_") or not hasattr(defaults["synth"], key[6:]):
                    logger.warning("ignoring unknown config key %r", key)

        if "seed" in top and "seed" not in sections["synth"]:
            sections["synth"]["seed"] = top["seed"]
        return cls(
            **top,
            ingest=IngestConfig(**sections["ingest"]),
            linkage=LinkageConfig(**sections["linkage"]),
            study=StudyConfig(**sections["study"]),
            synth=SynthConfig(**sections["synth"]),
        )

    def override(self, **flags: Any) -> "Config":
        """Return a copy with non-None CLI flags applied over file values."""
        cfg = replace(self)
        for key, value in flags.items():
            if value is None:
                continue
            if key in ("seed", "threads", "workdir"):
                setattr(cfg, key, Path(value) if key == "workdir" else value)
                if key == "seed":
                    cfg.synth = replace(cfg.synth, seed=value)
                continue
            for section in ("ingest", "linkage", "study", "synth"):
                sub = getattr(cfg, section)
                if key in {f.name for f in fields(sub)}:
                    setattr(cfg, section, replace(sub, **{key: value}))
                    break
            else:
                raise ConfigError(f"unknown override {key!r}")
        return cfg

    def ensure_directories(self):
        """Create the workspace directory."""
        self.workdir.mkdir(parents=True, exist_ok=True)


def _read_flat(text: str) -> dict[str, Any]:
    """Parse a flat config: YAML mapping, else key=value lines."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError:
        data = None
    if isinstance(data, dict):
        return data
    if data is None and not text.strip():
        return {}

    flat: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        # values get YAML scalar typing (ints, floats, bools, ISO dates)
        flat[key.strip()] = yaml.safe_load(value.strip()) if value.strip() else None
    return flat


def _coerce(key: str, value: Any, default: Any) -> Any:
    """Coerce a config value to the type of the field's default."""
    if value is None:
        return None
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes", "on")
            return bool(value)
        if isinstance(default, int) and not isinstance(value, bool):
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, date):
            return value if isinstance(value, date) else date.fromisoformat(str(value))
        if isinstance(default, Path) or key.endswith("_path") or key == "workdir":
            return Path(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                return tuple(v.strip() for v in value.split(",") if v.strip())
            return tuple(value)
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise TypeError("expected a mapping")
            return dict(value)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad value for {key!r}: {value!r} ({e})") from e
    if default is None and key == "drift_days":
        return int(value)
    return value
