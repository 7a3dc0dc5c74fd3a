"""
Genotype-to-phenotype mapping and the style fitness.

A latent vector is turned into a design grid by a fixed two-layer tanh
network, embedded by a fixed linear projection, and scored by its posterior
probability under one component of the style model.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import numpy.typing as npt
from PIL import Image

from embedding_space import (
    PcaModel,
    Scaler,
    as_data_matrix,
    pca_fit,
    pca_transform,
    scaler_apply,
    scaler_fit,
)
from exceptions import DimensionMismatchError, ExportError, ValidationError
from gmm import GmmConfig, GmmModel, gmm_fit, gmm_posterior, gmm_posterior_t
from rng import MAX_SEED

logger = logging.getLogger(__name__)

LatentVector = npt.NDArray[np.float64]
FitnessFn = Callable[[LatentVector], float]


def _check_seed_and_dims(seed: int, **dims: int) -> None:
    if not 0 <= seed <= MAX_SEED:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    for name, value in dims.items():
        if value < 1:
            raise ValidationError(f"{name} must be >= 1, got {value}")


def as_latent(z: npt.ArrayLike, length: int) -> LatentVector:
    values = np.asarray(z, dtype=np.float64)
    if values.shape != (length,):
        raise DimensionMismatchError("latent vector", f"length {length}", f"shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValidationError("latent vector contains non-finite values")
    return values


@dataclass(frozen=True, eq=False)
class Phenotype:
    """A generated design: an H x W grid with values in [-1, 1]."""
    pixels: np.ndarray

    def __post_init__(self):
        pixels = np.array(self.pixels, dtype=np.float64)
        if pixels.ndim != 2 or min(pixels.shape) < 1:
            raise ValidationError(f"phenotype must be a non-empty 2-D grid, got shape {pixels.shape}")
        # tanh saturates to exactly +-1 in float64 for very large inputs
        if not np.all(np.abs(pixels) <= 1.0):
            raise ValidationError("phenotype pixels must lie within [-1, 1]")
        pixels.setflags(write=False)
        object.__setattr__(self, "pixels", pixels)

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])


@dataclass(frozen=True, eq=False)
class SynthGenerator:
    """
    Deterministic two-layer tanh network standing in for a trained generator.

    Weights are drawn from ``default_rng(seed)`` in a fixed order (W1
    row-major, b1, W2 row-major, b2), each scaled by 1/sqrt(fan_in), and are
    never serialized: (seed, dims) fully identifies a generator.
    """
    seed: int
    latent_dim: int
    hidden_width: int
    height: int
    width: int
    w1: np.ndarray = field(init=False, repr=False)
    b1: np.ndarray = field(init=False, repr=False)
    w2: np.ndarray = field(init=False, repr=False)
    b2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_seed_and_dims(
            self.seed, latent_dim=self.latent_dim, hidden_width=self.hidden_width,
            height=self.height, width=self.width,
        )
        rng = np.random.default_rng(self.seed)
        n_pixels = self.height * self.width
        in_scale = 1.0 / math.sqrt(self.latent_dim)
        hidden_scale = 1.0 / math.sqrt(self.hidden_width)
        weights = {
            "w1": rng.standard_normal((self.hidden_width, self.latent_dim)) * in_scale,
            "b1": rng.standard_normal(self.hidden_width) * in_scale,
            "w2": rng.standard_normal((n_pixels, self.hidden_width)) * hidden_scale,
            "b2": rng.standard_normal(n_pixels) * hidden_scale,
        }
        for name, value in weights.items():
            value.setflags(write=False)
            object.__setattr__(self, name, value)


@dataclass(frozen=True, eq=False)
class LinearEmbedder:
    """Fixed random projection of a flattened phenotype, rows scaled by 1/sqrt(H*W)."""
    seed: int
    dim: int
    height: int
    width: int
    projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        _check_seed_and_dims(self.seed, dim=self.dim, height=self.height, width=self.width)
        n_pixels = self.height * self.width
        rng = np.random.default_rng(self.seed)
        projection = rng.standard_normal((self.dim, n_pixels)) / math.sqrt(n_pixels)
        projection.setflags(write=False)
        object.__setattr__(self, "projection", projection)


@dataclass(frozen=True, eq=False)
class StyleModel:
    """Scaler, PCA and GMM chained: embedding -> centered -> reduced -> posterior."""
    scaler: Scaler
    pca: PcaModel
    gmm: GmmModel

    def __post_init__(self):
        if self.pca.input_dim != self.scaler.dim:
            raise DimensionMismatchError(
                "PCA input width vs scaler width", self.scaler.dim, self.pca.input_dim
            )
        if self.gmm.dim != self.pca.n_components:
            raise DimensionMismatchError(
                "GMM dimension vs PCA components", self.pca.n_components, self.gmm.dim
            )

    @property
    def embedding_dim(self) -> int:
        return self.scaler.dim

    @property
    def n_styles(self) -> int:
        return self.gmm.n_components

    def reduce(self, embeddings: npt.ArrayLike) -> np.ndarray:
        return pca_transform(self.pca, scaler_apply(self.scaler, embeddings))

    def posteriors(self, embeddings: npt.ArrayLike) -> np.ndarray:
        """Posterior over styles for a vector or for every row of a matrix."""
        return gmm_posterior(self.gmm, self.reduce(embeddings))


def generator_new(seed: int, latent_dim: int, hidden_width: int, height: int,
                  width: int) -> SynthGenerator:
    return SynthGenerator(seed, latent_dim, hidden_width, height, width)


def generate(generator: SynthGenerator, z: npt.ArrayLike) -> Phenotype:
    z = as_latent(z, generator.latent_dim)
    hidden = np.tanh(generator.w1 @ z + generator.b1)
    pixels = np.tanh(generator.w2 @ hidden + generator.b2)
    return Phenotype(pixels.reshape(generator.height, generator.width))


def generate_batch(generator: SynthGenerator, latents: npt.ArrayLike) -> np.ndarray:
    """Flattened phenotypes (N x H*W) for every latent row."""
    Z = as_data_matrix(latents)
    if Z.shape[1] != generator.latent_dim:
        raise DimensionMismatchError("latent batch", f"{generator.latent_dim} columns", Z.shape)
    hidden = np.tanh(Z @ generator.w1.T + generator.b1)
    return np.tanh(hidden @ generator.w2.T + generator.b2)


def embed(embedder: LinearEmbedder, p: Union[Phenotype, npt.ArrayLike]) -> np.ndarray:
    """Project a phenotype (or a raw grid of the same shape) with row-major flattening."""
    grid = p.pixels if isinstance(p, Phenotype) else np.asarray(p, dtype=np.float64)
    if grid.shape != (embedder.height, embedder.width):
        raise DimensionMismatchError(
            "phenotype", (embedder.height, embedder.width), grid.shape
        )
    return embedder.projection @ grid.reshape(-1)


def embed_batch(embedder: LinearEmbedder, flat_pixels: np.ndarray) -> np.ndarray:
    if flat_pixels.ndim != 2 or flat_pixels.shape[1] != embedder.projection.shape[1]:
        raise DimensionMismatchError(
            "flattened phenotypes", f"{embedder.projection.shape[1]} columns", flat_pixels.shape
        )
    return flat_pixels @ embedder.projection.T


def fitness(style_model: StyleModel, generator: SynthGenerator, embedder: LinearEmbedder,
            z: npt.ArrayLike, t: int) -> float:
    """Posterior probability that G(z) belongs to style t."""
    embedding = embed(embedder, generate(generator, z))
    return gmm_posterior_t(style_model.gmm, style_model.reduce(embedding), t)


def make_fitness(style_model: StyleModel, generator: SynthGenerator,
                 embedder: LinearEmbedder, t: int) -> FitnessFn:
    """Bind everything but the latent vector; the result is pure."""
    if not 0 <= t < style_model.n_styles:
        raise ValidationError(f"target style {t} out of range [0, {style_model.n_styles})")
    if embedder.dim != style_model.embedding_dim:
        raise DimensionMismatchError(
            "embedder dimension vs style model", style_model.embedding_dim, embedder.dim
        )

    def fitness_fn(z: LatentVector) -> float:
        return fitness(style_model, generator, embedder, z, t)

    return fitness_fn


def sample_embeddings(generator: SynthGenerator, embedder: LinearEmbedder, n_samples: int,
                      rng: np.random.Generator):
    """Draw standard-normal latents and return (latents, embeddings)."""
    if n_samples < 1:
        raise ValidationError(f"dataset size must be >= 1, got {n_samples}")
    latents = rng.standard_normal((n_samples, generator.latent_dim))
    embeddings = embed_batch(embedder, generate_batch(generator, latents))
    return latents, embeddings


def build_style_model(embeddings: npt.ArrayLike, target_ratio: float,
                      gmm_config: GmmConfig) -> StyleModel:
    """Fit scaler -> PCA -> GMM on a matrix of embeddings."""
    data = as_data_matrix(embeddings, min_rows=2)
    scaler = scaler_fit(data)
    centered = scaler_apply(scaler, data)
    pca = pca_fit(centered, target_ratio)
    gmm = gmm_fit(pca_transform(pca, centered), gmm_config)
    return StyleModel(scaler=scaler, pca=pca, gmm=gmm)


def to_gray_bytes(pixels: npt.ArrayLike) -> np.ndarray:
    """Map [-1, 1] to 0..255 with round-half-up, clamped."""
    values = (np.asarray(pixels, dtype=np.float64) + 1.0) / 2.0 * 255.0
    return np.clip(np.floor(values + 0.5), 0, 255).astype(np.uint8)


def export_pgm(p: Phenotype, path: Union[str, os.PathLike]) -> None:
    """Write a binary P5 greymap with maxval 255."""
    image = Image.fromarray(to_gray_bytes(p.pixels))
    try:
        image.save(path, format="PPM")
    except OSError as err:
        raise ExportError(f"Failed to write PGM: {err}", os.fspath(path)) from err
    logger.debug(f"Wrote {p.height}x{p.width} phenotype to {path}")
