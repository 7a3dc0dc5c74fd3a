"""
Style model persistence.

Versioned UTF-8 text: ``key = value`` header lines followed by labeled
``[block]`` sections of whitespace-separated numbers at 17 significant
digits, one matrix row per line. Covariances are written one component after
another, each as q rows.
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple, Union

import numpy as np

from config import EmbedderSpec, GeneratorSpec
from embedding_space import PcaModel, Scaler
from exceptions import ExportError, ModelFormatError, StyleSearchError
from gmm import GmmModel
from phenotype import StyleModel

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
BLOCKS = (
    "scaler_means",
    "pca_components",
    "pca_explained_variance",
    "gmm_weights",
    "gmm_means",
    "gmm_covariances",
)
HEADER_KEYS = (
    "format_version", "d", "q", "K", "target_ratio", "total_variance",
    "log_likelihood", "dataset_seed", "dataset_size", "generator", "embedder",
)

PathLike = Union[str, os.PathLike]


@dataclass(frozen=True, eq=False)
class StoredModel:
    """A style model plus what is needed to regenerate its training dataset."""
    style_model: StyleModel
    generator: GeneratorSpec
    embedder: EmbedderSpec
    dataset_seed: int
    dataset_size: int


def _num(value: float) -> str:
    return "%.17g" % value


def _rows(matrix: np.ndarray) -> List[str]:
    return [" ".join(_num(v) for v in row) for row in np.atleast_2d(matrix)]


def render_model(stored: StoredModel) -> str:
    sm = stored.style_model
    g = stored.generator
    e = stored.embedder
    header = {
        "format_version": str(FORMAT_VERSION),
        "d": str(sm.scaler.dim),
        "q": str(sm.pca.n_components),
        "K": str(sm.gmm.n_components),
        "target_ratio": _num(sm.pca.target_ratio),
        "total_variance": _num(sm.pca.total_variance),
        "log_likelihood": _num(sm.gmm.final_log_likelihood),
        "dataset_seed": str(stored.dataset_seed),
        "dataset_size": str(stored.dataset_size),
        "generator": f"{g.seed} {g.latent_dim} {g.hidden_width} {g.height} {g.width}",
        "embedder": f"{e.seed} {e.dim}",
    }
    lines = [f"{key} = {value}" for key, value in header.items()]

    blocks = {
        "scaler_means": _rows(sm.scaler.means),
        "pca_components": _rows(sm.pca.components),
        "pca_explained_variance": _rows(sm.pca.explained_variance),
        "gmm_weights": _rows(sm.gmm.weights),
        "gmm_means": _rows(sm.gmm.means),
        "gmm_covariances": [row for cov in sm.gmm.covariances for row in _rows(cov)],
    }
    for name in BLOCKS:
        lines.append(f"[{name}]")
        lines.extend(blocks[name])
    return "\n".join(lines) + "\n"


def save_style_model(stored: StoredModel, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(render_model(stored))
    except OSError as err:
        raise ExportError(f"Failed to write style model: {err}", os.fspath(path)) from err
    logger.info(f"Style model written to {path}")
    return path


def _split_sections(text: str) -> Tuple[Dict[str, str], Dict[str, List[str]]]:
    header: Dict[str, str] = {}
    blocks: Dict[str, List[str]] = {}
    current = None
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            if current not in BLOCKS or current in blocks:
                raise ModelFormatError(f"line {number}: unexpected block [{current}]")
            blocks[current] = []
        elif current is None:
            key, sep, value = line.partition("=")
            if not sep:
                raise ModelFormatError(f"line {number}: expected 'key = value', got {line!r}")
            header[key.strip()] = value.strip()
        else:
            blocks[current].append(line)

    missing = [k for k in HEADER_KEYS if k not in header]
    missing += [f"[{b}]" for b in BLOCKS if b not in blocks]
    if missing:
        raise ModelFormatError(f"missing entries: {', '.join(missing)}")
    return header, blocks


def _parse_ints(value: str, count: int, what: str) -> List[int]:
    try:
        numbers = [int(v) for v in value.split()]
    except ValueError as err:
        raise ModelFormatError(f"{what}: expected integers, got {value!r}") from err
    if len(numbers) != count:
        raise ModelFormatError(f"{what}: expected {count} value(s), got {len(numbers)}")
    return numbers


def _parse_block(lines: List[str], shape: Tuple[int, ...], name: str) -> np.ndarray:
    try:
        values = np.array([float(v) for line in lines for v in line.split()], dtype=np.float64)
    except ValueError as err:
        raise ModelFormatError(f"[{name}]: non-numeric entry ({err})") from err
    expected = int(np.prod(shape))
    if values.size != expected:
        raise ModelFormatError(f"[{name}]: expected {expected} numbers, got {values.size}")
    return values.reshape(shape)


def parse_model(text: str) -> StoredModel:
    header, blocks = _split_sections(text)

    (version,) = _parse_ints(header["format_version"], 1, "format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported format_version {version} (expected {FORMAT_VERSION})")
    (d,) = _parse_ints(header["d"], 1, "d")
    (q,) = _parse_ints(header["q"], 1, "q")
    (k,) = _parse_ints(header["K"], 1, "K")
    (dataset_seed,) = _parse_ints(header["dataset_seed"], 1, "dataset_seed")
    (dataset_size,) = _parse_ints(header["dataset_size"], 1, "dataset_size")
    g_seed, latent_dim, hidden_width, height, width = _parse_ints(header["generator"], 5, "generator")
    e_seed, e_dim = _parse_ints(header["embedder"], 2, "embedder")
    try:
        target_ratio = float(header["target_ratio"])
        total_variance = float(header["total_variance"])
        log_likelihood = float(header["log_likelihood"])
    except ValueError as err:
        raise ModelFormatError(f"malformed header number: {err}") from err

    try:
        style_model = StyleModel(
            scaler=Scaler(_parse_block(blocks["scaler_means"], (d,), "scaler_means")),
            pca=PcaModel(
                components=_parse_block(blocks["pca_components"], (q, d), "pca_components"),
                explained_variance=_parse_block(
                    blocks["pca_explained_variance"], (q,), "pca_explained_variance"
                ),
                total_variance=total_variance,
                target_ratio=target_ratio,
            ),
            gmm=GmmModel(
                weights=_parse_block(blocks["gmm_weights"], (k,), "gmm_weights"),
                means=_parse_block(blocks["gmm_means"], (k, q), "gmm_means"),
                covariances=_parse_block(blocks["gmm_covariances"], (k, q, q), "gmm_covariances"),
                final_log_likelihood=log_likelihood,
            ),
        )
        generator = GeneratorSpec(
            seed=g_seed, latent_dim=latent_dim, hidden_width=hidden_width, height=height, width=width
        )
        embedder = EmbedderSpec(seed=e_seed, dim=e_dim)
    except ModelFormatError:
        raise
    except (StyleSearchError, ValueError) as err:
        raise ModelFormatError(f"inconsistent style model: {err}") from err

    return StoredModel(
        style_model=style_model,
        generator=generator,
        embedder=embedder,
        dataset_seed=dataset_seed,
        dataset_size=dataset_size,
    )


def load_style_model(path: PathLike) -> StoredModel:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as err:
        raise ModelFormatError(f"cannot read style model {path}: {err}") from err
    try:
        stored = parse_model(text)
    except ModelFormatError as err:
        raise ModelFormatError(f"{path}: {err}") from err
    logger.info(
        f"Loaded style model from {path} "
        f"(d={stored.style_model.embedding_dim}, q={stored.style_model.pca.n_components}, "
        f"K={stored.style_model.n_styles})"
    )
    return stored
