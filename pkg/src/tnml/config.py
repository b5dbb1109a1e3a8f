"""Configuration management for tnml.

This module provides XDG-compliant paths, environment settings and the
per-command run configurations.

Run configuration priority (highest first):
1. Command-line flags
2. The command's section of config.yaml
3. TNML_* environment settings (data_dir, threads, output_dir)
4. Model defaults

config.yaml is searched in:
1. An explicit --config path
2. ~/.config/tnml/config.yaml
3. Platform-specific config dir (~/Library/Application Support/tnml/ on macOS)
4. ./config.yaml (current directory)

String values in config.yaml may reference environment variables as ${VAR}
or ${VAR:-fallback}.
"""

import os
import re
from functools import lru_cache
from pathlib import Path
from typing import Any, TypeVar

import yaml
from platformdirs import user_config_dir, user_data_dir
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .models import (
    FeatureMapKind,
    GaussianPairParams,
    InitScheme,
    SpiralParams,
    ToySolver,
    ToyTask,
    TrainConfig,
    TruncParams,
)

APP_NAME = "tnml"
APP_AUTHOR = "tnml"

RunConfigT = TypeVar("RunConfigT", bound=BaseModel)


def _ensure_dir(path: str) -> Path:
    folder = Path(path)
    folder.mkdir(parents=True, exist_ok=True)
    return folder


def get_config_dir() -> Path:
    """Per-user config directory, created on demand (~/.config/tnml on Linux)."""
    return _ensure_dir(user_config_dir(APP_NAME, APP_AUTHOR))


def get_data_dir() -> Path:
    """Per-user data directory, created on demand (~/.local/share/tnml on Linux)."""
    return _ensure_dir(user_data_dir(APP_NAME, APP_AUTHOR))


def get_config_file() -> Path:
    """The config.yaml inside `get_config_dir()`."""
    return get_config_dir() / "config.yaml"


# =============================================================================
# TNML_* settings
# =============================================================================


class TnmlSettings(BaseSettings):
    """Process-wide settings read from TNML_* variables and an optional .env.

    Attributes:
        data_dir: Default MNIST directory (TNML_DATA_DIR).
        output_dir: Root for run outputs when --out is not given.
        log_file: Log file path; logging is off when unset.
        log_level: Log level name.
        threads: Default worker thread count.
        config_file: Explicit config.yaml path.
    """

    model_config = SettingsConfigDict(
        env_prefix="TNML_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    data_dir: Path | None = Field(default=None, description="MNIST IDX directory")
    output_dir: Path = Field(default=Path("runs"), description="Root of run outputs")
    log_file: Path | None = Field(default=None, description="Log file path")
    log_level: str = Field(default="INFO", description="Log level")
    threads: int = Field(default=1, ge=1, description="Worker threads")
    config_file: Path | None = Field(default=None, description="config.yaml path")

    @classmethod
    def from_env(cls, env_file: Path | None = None) -> "TnmlSettings":
        """Read settings, taking the first .env that exists.

        `env_file` is tried first, then ./.env, then .env in the config
        directory. Variables already in the environment win over the file.
        """
        candidates = [env_file] if env_file is not None else []
        candidates += [Path(".env"), get_config_dir() / ".env"]
        for path in candidates:
            if path.exists():
                return cls(_env_file=path)
        return cls()


# =============================================================================
# Run Configurations
# =============================================================================


class MnistTrainConfig(BaseModel):
    """Resolved settings of an mnist-train run.

    Attributes:
        data_dir: Training IDX directory.
        test_dir: Optional test IDX directory; test error is reported if set.
        out: Output directory.
        map_kind: Local feature map.
        d: Local dimension.
        m: Maximum bond dimension.
        m0: Initial bond dimension (defaults to m).
        init: Initialization scheme.
        init_std: Noise width of the randn_eye scheme.
        learning_rate: Step size alpha.
        sweeps: Number of sweeps.
        cutoff: Relative singular value cutoff.
        steps_per_bond: Gradient steps per bond visit.
        backtracking: Halve steps that raise the cost.
        max_backtracks: Halvings before a step is abandoned.
        subset: Stratified training subset size.
        test_subset: Stratified test subset size.
        seed: Seed for initialization and subsets.
        threads: Worker threads.
        deterministic: Fixed reduction order.
        chunk_size: Examples per gradient chunk.
    """

    model_config = ConfigDict(extra="forbid")

    data_dir: Path | None = None
    test_dir: Path | None = None
    out: Path = Path("runs/mnist")
    map_kind: FeatureMapKind = FeatureMapKind.HALF_ANGLE
    d: int = Field(default=2, ge=2)
    m: int = Field(default=10, ge=1)
    m0: int | None = Field(default=None, ge=1)
    init: InitScheme = InitScheme.RANDN_EYE
    init_std: float = Field(default=1e-2, ge=0.0)
    learning_rate: float = Field(default=0.1, ge=0.0)
    sweeps: int = Field(default=3, ge=1)
    cutoff: float = Field(default=1e-10, ge=0.0)
    steps_per_bond: int = Field(default=1, ge=1)
    backtracking: bool = True
    max_backtracks: int = Field(default=10, ge=0)
    subset: int | None = Field(default=None, ge=1)
    test_subset: int | None = Field(default=None, ge=1)
    seed: int = 0
    threads: int = Field(default=1, ge=1)
    deterministic: bool = True
    chunk_size: int = Field(default=2048, ge=1)

    def train_config(self) -> TrainConfig:
        """Optimizer settings for the sweep trainer."""
        return TrainConfig(
            learning_rate=self.learning_rate,
            sweeps=self.sweeps,
            trunc=TruncParams(max_rank=self.m, cutoff=self.cutoff),
            steps_per_bond=self.steps_per_bond,
            backtracking=self.backtracking,
            max_backtracks=self.max_backtracks,
            seed=self.seed,
            threads=self.threads,
            deterministic=self.deterministic,
            chunk_size=self.chunk_size,
        )


class MnistEvalConfig(BaseModel):
    """Resolved settings of an mnist-eval run."""

    model_config = ConfigDict(extra="forbid")

    model: Path
    data_dir: Path | None = None
    split: str = Field(default="test", pattern="^(train|test)$")
    subset: int | None = Field(default=None, ge=1)
    seed: int = 0
    map_kind: FeatureMapKind | None = None
    d: int | None = Field(default=None, ge=2)
    out: Path | None = None


class InspectConfig(BaseModel):
    """Resolved settings of an inspect run."""

    model_config = ConfigDict(extra="forbid")

    model: Path
    as_json: bool = False
    out: Path | None = None


class ToyConfig(BaseModel):
    """Resolved settings of a toy run.

    Attributes:
        task: gaussians or spiral.
        d: Local dimension of the spin-coherent map.
        n: Total training points, split evenly between the two labels
            (200 for gaussians, 500 for spiral by default).
        grid: Decision grid resolution.
        iters: Gradient steps.
        rate: Step size in units of 1 / lambda_max.
        solver: gradient or exact; unset means exact for spiral and gradient
            for gaussians.
        seed: Sampling and initialization seed.
        scan_seeds: When > 0 (gaussians only), also report the median
            disagreement area for d=2 and the chosen d over this many seeds.
        out: Output directory.
        gaussians: Gaussian class parameters.
        spiral: Spiral geometry.
    """

    model_config = ConfigDict(extra="forbid")

    task: ToyTask = ToyTask.GAUSSIANS
    d: int = Field(default=2, ge=2)
    n: int | None = Field(default=None, ge=2)
    grid: int = Field(default=128, ge=2)
    iters: int = Field(default=500, ge=1)
    rate: float = Field(default=1.0, gt=0.0)
    solver: ToySolver | None = None
    seed: int = 0
    scan_seeds: int = Field(default=0, ge=0)
    out: Path = Path("runs/toy")
    gaussians: GaussianPairParams = Field(default_factory=GaussianPairParams)
    spiral: SpiralParams = Field(default_factory=SpiralParams)

    @property
    def n_per_class(self) -> int:
        """Points per label with the task default applied."""
        if self.n is not None:
            return self.n // 2
        return 250 if self.task == ToyTask.SPIRAL else self.gaussians.n_per_class

    @property
    def resolved_solver(self) -> ToySolver:
        """Solver with the task default applied."""
        if self.solver is not None:
            return self.solver
        return ToySolver.EXACT if self.task == ToyTask.SPIRAL else ToySolver.GRADIENT


class GenerativeConfig(BaseModel):
    """Resolved settings of a generative KL scan."""

    model_config = ConfigDict(extra="forbid")

    sizes: list[int] = Field(default_factory=lambda: [20, 100, 500, 2500])
    trials: int = Field(default=20, ge=1)
    grid: int = Field(default=128, ge=64)
    seed: int = 0
    iters: int = Field(default=300, ge=1)
    rate: float = Field(default=0.5, gt=0.0)
    threads: int = Field(default=1, ge=1)
    out: Path = Path("runs/generative")

    @field_validator("sizes")
    @classmethod
    def check_sizes(cls, v: list[int]) -> list[int]:
        """Sizes must be positive and strictly increasing."""
        if not v or any(s < 1 for s in v):
            raise ValueError("sizes must be a non-empty list of positive integers")
        if any(b <= a for a, b in zip(v, v[1:], strict=False)):
            raise ValueError("sizes must be strictly increasing")
        return v


# =============================================================================
# ${VAR} interpolation
# =============================================================================

_ENV_REF = re.compile(r"\$\{(?P<name>[A-Za-z_][A-Za-z0-9_]*)(?::-(?P<default>[^}]*))?\}")


def interpolate_env_vars(value: str) -> str:
    """Substitute `${NAME}` and `${NAME:-fallback}` references in a string.

    Raises:
        ValueError: A referenced variable is unset and has no fallback.

    Example:
        >>> os.environ["MNIST_ROOT"] = "/data/mnist"
        >>> interpolate_env_vars("${MNIST_ROOT}/raw")
        '/data/mnist/raw'
        >>> interpolate_env_vars("${RUN_TAG:-scratch}")
        'scratch'
    """
    if not isinstance(value, str):
        return value

    def lookup(ref: re.Match[str]) -> str:
        name, fallback = ref.group("name"), ref.group("default")
        found = os.environ.get(name, fallback)
        if found is None:
            raise ValueError(f"Environment variable '{name}' is not set")
        return found

    return _ENV_REF.sub(lookup, value)


def _interpolate_value(value: Any) -> Any:
    if isinstance(value, str):
        return interpolate_env_vars(value)
    if isinstance(value, dict):
        return interpolate_dict(value)
    if isinstance(value, list):
        return [_interpolate_value(item) for item in value]
    return value


def interpolate_dict(data: dict[str, Any]) -> dict[str, Any]:
    """Copy of `data` with every string at any depth interpolated."""
    return {key: _interpolate_value(value) for key, value in data.items()}


# =============================================================================
# config.yaml lookup
# =============================================================================


def _candidate_config_files() -> list[Path]:
    dirs = [Path.home() / ".config" / APP_NAME, get_config_dir(), Path.cwd()]
    return [folder / name for folder in dirs for name in ("config.yaml", "config.yml")]


def find_config_file(config_file: Path | None = None) -> Path:
    """Return the explicit config path, or the first config.yaml found.

    Raises:
        FileNotFoundError: The explicit path is missing, or no candidate exists.
    """
    if config_file is not None:
        if not config_file.exists():
            raise FileNotFoundError(f"Configuration file not found: {config_file}")
        return config_file

    candidates = _candidate_config_files()
    found = next((path for path in candidates if path.is_file()), None)
    if found is None:
        searched = ", ".join(str(path) for path in candidates)
        raise FileNotFoundError(f"Configuration file not found. Searched: {searched}")
    return found


@lru_cache(maxsize=8)
def load_raw_config(config_file: Path) -> dict[str, Any]:
    """Parse a config.yaml once per path.

    Raises:
        ValueError: If the top level is not a mapping.
    """
    data = yaml.safe_load(config_file.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise ValueError(f"{config_file} must contain a mapping at the top level")
    return data


def load_section(section: str, config_file: Path | None = None) -> dict[str, Any]:
    """Interpolated mapping of one command section, empty if there is none.

    An explicit `config_file` must exist; otherwise a missing file just means
    no defaults.

    Raises:
        FileNotFoundError: If an explicit config file does not exist.
        ValueError: If the section is not a mapping or a variable is unset.
    """
    try:
        path = find_config_file(config_file)
    except FileNotFoundError:
        if config_file is not None:
            raise
        return {}
    raw = load_raw_config(path).get(section) or {}
    if not isinstance(raw, dict):
        raise ValueError(f"section '{section}' of {path} must be a mapping")
    return interpolate_dict(raw)


def resolve_run_config(
    section: str,
    overrides: dict[str, Any],
    model_cls: type[RunConfigT],
    config_file: Path | None = None,
    defaults: dict[str, Any] | None = None,
) -> RunConfigT:
    """Merge flags over the YAML section over model defaults and validate.

    Args:
        section: YAML section name, e.g. "mnist_train".
        overrides: Flag values; None means "not given".
        model_cls: Run configuration model.
        config_file: Optional explicit config.yaml.
        defaults: Environment-derived values ranked below the YAML section.

    Returns:
        Validated run configuration.

    Raises:
        pydantic.ValidationError: On invalid values (a ValueError).
    """
    merged = {k: v for k, v in (defaults or {}).items() if v is not None}
    merged.update(load_section(section, config_file))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return model_cls.model_validate(merged)
