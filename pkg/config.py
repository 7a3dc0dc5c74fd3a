"""
Run configuration.

Config files are flat ``key = value`` text read with python-dotenv; dotted
keys address a section (``gmm.n_components = 8``) and list values are comma
separated (``sweep.p_cx = 0.7, 0.9``). Example:

    seed = 0
    dataset_size = 2000
    generator.latent_dim = 16
    gmm.n_components = 8
    evolution.pop_size = 50
    targets = auto
"""

import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Union

from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from evolution import EvolutionConfig
from exceptions import ConfigurationError
from gmm import GmmConfig
from phenotype import LinearEmbedder, SynthGenerator
from rng import MAX_SEED

logger = logging.getLogger(__name__)

# keys owned by the top level; a section may not set them itself
DERIVED_KEYS = {
    "gmm.seed": "seed",
    "evolution.seed": "seed",
    "evolution.latent_dim": "generator.latent_dim",
    "evolution.target": "--target",
}


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


class GeneratorSpec(BaseModel):
    """Synthetic generator identity: (seed, dims) fully determines the weights."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(1, ge=0, le=MAX_SEED)
    latent_dim: int = Field(16, ge=1)
    hidden_width: int = Field(32, ge=1)
    height: int = Field(16, ge=1)
    width: int = Field(16, ge=1)

    def build(self) -> SynthGenerator:
        return SynthGenerator(self.seed, self.latent_dim, self.hidden_width, self.height, self.width)


class EmbedderSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(2, ge=0, le=MAX_SEED)
    dim: int = Field(64, ge=1)

    def build(self, generator: GeneratorSpec) -> LinearEmbedder:
        return LinearEmbedder(self.seed, self.dim, generator.height, generator.width)


class SweepGrid(BaseModel):
    """GA parameter values crossed in a sweep; every combination is one cell."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    p_cx: List[float] = Field(default_factory=lambda: [0.7, 0.9], min_length=1)
    p_mut: List[float] = Field(default_factory=lambda: [0.2, 0.5], min_length=1)
    pop_size: List[int] = Field(default_factory=lambda: [50, 100], min_length=1)
    tournament_size: List[int] = Field(default_factory=lambda: [3, 6], min_length=1)
    runs: int = Field(1, ge=1, description="Runs per cell and style")

    @field_validator("p_cx", "p_mut", "pop_size", "tournament_size", mode="before")
    @classmethod
    def _split_values(cls, value: Any) -> Any:
        return _split_list(value)

    @field_validator("p_cx", "p_mut")
    @classmethod
    def _check_rates(cls, values: List[float]) -> List[float]:
        for v in values:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"rates must lie in [0, 1], got {v}")
        return values

    @field_validator("pop_size", "tournament_size")
    @classmethod
    def _check_counts(cls, values: List[int]) -> List[int]:
        for v in values:
            if v < 1:
                raise ValueError(f"counts must be >= 1, got {v}")
        return values

    @property
    def n_cells(self) -> int:
        return len(self.p_cx) * len(self.p_mut) * len(self.pop_size) * len(self.tournament_size)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = Field(0, ge=0, le=MAX_SEED, description="Master seed")
    generator: GeneratorSpec = Field(default_factory=GeneratorSpec)
    embedder: EmbedderSpec = Field(default_factory=EmbedderSpec)
    dataset_size: int = Field(2000, ge=2, description="M")
    pca_target_ratio: float = Field(0.9, gt=0.0, le=1.0)
    gmm: GmmConfig = Field(default_factory=GmmConfig)
    evolution: EvolutionConfig = Field(default_factory=EvolutionConfig)
    targets: Union[Literal["auto"], List[int]] = "auto"
    target_count: int = Field(5, ge=1, description="Styles picked when targets = auto")
    export_count: int = Field(3, ge=1)
    output_dir: Path = Path("output")
    sweep: SweepGrid = Field(default_factory=SweepGrid)

    @field_validator("targets", mode="before")
    @classmethod
    def _parse_targets(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() == "auto":
            return "auto"
        return _split_list(value)

    @model_validator(mode="after")
    def _check_consistency(self):
        if self.dataset_size < self.gmm.n_components:
            raise ValueError(
                f"dataset_size ({self.dataset_size}) must be >= gmm.n_components "
                f"({self.gmm.n_components})"
            )
        reserved = self.evolution.n_elite + self.evolution.n_new
        if min(self.sweep.pop_size) <= reserved:
            raise ValueError(
                f"every sweep.pop_size must exceed evolution.n_elite + evolution.n_new ({reserved})"
            )
        if self.targets != "auto":
            bad = [t for t in self.targets if not 0 <= t < self.gmm.n_components]
            if bad:
                raise ValueError(f"targets {bad} out of range [0, {self.gmm.n_components})")
        return self

    def gmm_config(self) -> GmmConfig:
        return self.gmm.model_copy(update={"seed": self.seed})

    def evolution_config(self, target: int, seed: Optional[int] = None, **overrides) -> EvolutionConfig:
        """EvolutionConfig for one run; the master seed and generator latent size win."""
        values = self.evolution.model_dump()
        values.update(overrides)
        values.update(
            seed=self.seed if seed is None else seed,
            latent_dim=self.generator.latent_dim,
            target=target,
        )
        return EvolutionConfig.model_validate(values)


def _nest(flat: Dict[str, Optional[str]]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None or value == "":
            raise ConfigurationError(f"config key {key!r} has no value")
        if key in DERIVED_KEYS:
            raise ConfigurationError(f"config key {key!r} is not settable; use {DERIVED_KEYS[key]}")
        section, dot, name = key.partition(".")
        if not dot:
            nested[key] = value
            continue
        if "." in name:
            raise ConfigurationError(f"config key {key!r} is nested too deeply")
        target = nested.setdefault(section, {})
        if not isinstance(target, dict):
            raise ConfigurationError(f"config key {section!r} is both a value and a section")
        target[name] = value
    return nested


def build_run_config(values: Dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(values)
    except PydanticValidationError as err:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in e['loc']) or 'config'}: {e['msg']}" for e in err.errors()
        )
        raise ConfigurationError(f"Invalid configuration: {problems}") from err


def load_run_config(path: Union[str, os.PathLike]) -> RunConfig:
    """Read a flat ``key = value`` config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    flat = dotenv_values(path, interpolate=False)
    cfg = build_run_config(_nest(flat))
    logger.info(f"Loaded configuration from {path} ({len(flat)} key(s))")
    return cfg


def with_overrides(cfg: RunConfig, seed: Optional[int] = None,
                   output_dir: Optional[Union[str, os.PathLike]] = None) -> RunConfig:
    """Apply command-line overrides and re-validate."""
    values = cfg.model_dump()
    if seed is not None:
        values["seed"] = seed
    if output_dir is not None:
        values["output_dir"] = Path(output_dir)
    return build_run_config(values)
