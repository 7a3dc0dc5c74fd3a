"""
Embedding space preprocessing: zero-mean scaling and PCA.

Embeddings are centered column-wise and projected onto the smallest number of
principal directions whose explained variance reaches a target ratio.
"""

import logging
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from exceptions import DimensionMismatchError, ValidationError

logger = logging.getLogger(__name__)

# Column means of centered input must be this close to zero.
CENTERING_TOL = 1e-6


def as_data_matrix(data: npt.ArrayLike, min_rows: int = 1) -> np.ndarray:
    """Validate a samples-by-features matrix and return it as float64."""
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim != 2:
        raise ValidationError(f"data must be a 2-D matrix, got {matrix.ndim} dimension(s)")
    if matrix.shape[0] < min_rows:
        raise ValidationError(f"need at least {min_rows} rows, got {matrix.shape[0]}")
    if matrix.shape[1] < 1:
        raise ValidationError("data must have at least one feature column")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError("data contains non-finite values")
    return matrix


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


def _check_width(x: npt.ArrayLike, width: int, what: str) -> np.ndarray:
    values = np.asarray(x, dtype=np.float64)
    if values.ndim not in (1, 2) or values.shape[-1] != width:
        raise DimensionMismatchError(what, f"length {width}", f"shape {values.shape}")
    return values


@dataclass(frozen=True, eq=False)
class Scaler:
    """Per-feature means subtracted from every embedding."""
    means: np.ndarray

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 1 or means.size < 1:
            raise ValidationError("scaler means must be a non-empty vector")
        if not np.all(np.isfinite(means)):
            raise ValidationError("scaler means contain non-finite values")
        object.__setattr__(self, "means", _frozen(means))

    @property
    def dim(self) -> int:
        return int(self.means.shape[0])


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Principal directions (rows of ``components``) and their variances."""
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float
    target_ratio: float

    def __post_init__(self):
        components = np.asarray(self.components, dtype=np.float64)
        variance = np.asarray(self.explained_variance, dtype=np.float64)
        if components.ndim != 2 or components.shape[0] < 1:
            raise ValidationError("PCA components must be a non-empty matrix")
        if variance.shape != (components.shape[0],):
            raise DimensionMismatchError(
                "explained variance", f"length {components.shape[0]}", f"shape {variance.shape}"
            )
        if not 0.0 < self.target_ratio <= 1.0:
            raise ValidationError(f"target_ratio must be in (0, 1], got {self.target_ratio}")
        object.__setattr__(self, "components", _frozen(components))
        object.__setattr__(self, "explained_variance", _frozen(variance))
        object.__setattr__(self, "total_variance", float(self.total_variance))
        object.__setattr__(self, "target_ratio", float(self.target_ratio))

    @property
    def n_components(self) -> int:
        return int(self.components.shape[0])

    @property
    def input_dim(self) -> int:
        return int(self.components.shape[1])

    @property
    def explained_ratio(self) -> float:
        return float(self.explained_variance.sum() / self.total_variance)


def scaler_fit(data: npt.ArrayLike) -> Scaler:
    """Column means of ``data``."""
    matrix = as_data_matrix(data, min_rows=2)
    return Scaler(means=matrix.mean(axis=0))


def scaler_apply(scaler: Scaler, x: npt.ArrayLike) -> np.ndarray:
    """Subtract the fitted means from a vector or from every row of a matrix."""
    values = _check_width(x, scaler.dim, "scaler input")
    return values - scaler.means


def _orient(components: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every direction is made positive
    pivots = np.argmax(np.abs(components), axis=1)
    signs = np.sign(components[np.arange(components.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return components * signs[:, None]


def pca_fit(centered: npt.ArrayLike, target_ratio: float = 0.9) -> PcaModel:
    """
    Fit PCA on already-centered data via SVD.

    Keeps the smallest q whose cumulative explained variance reaches
    ``target_ratio``; directions with zero variance are never kept.
    """
    matrix = as_data_matrix(centered, min_rows=2)
    if not 0.0 < target_ratio <= 1.0:
        raise ValidationError(f"target_ratio must be in (0, 1], got {target_ratio}")

    col_means = matrix.mean(axis=0)
    if np.max(np.abs(col_means)) > CENTERING_TOL:
        raise ValidationError(
            f"data is not centered (max |column mean| = {np.max(np.abs(col_means)):.3g})"
        )

    n_rows = matrix.shape[0]
    _, singular, vt = np.linalg.svd(matrix, full_matrices=False)
    variance = singular**2 / (n_rows - 1)
    total = float(variance.sum())

    rank_tol = singular.max(initial=0.0) * max(matrix.shape) * np.finfo(np.float64).eps
    rank = int(np.sum(singular > rank_tol))
    if rank == 0 or total <= 0.0:
        raise ValidationError("data has zero variance; nothing to project onto")

    cumulative = np.cumsum(variance[:rank]) / total
    # tolerate rounding in the running sum so target 1.0 stops at the rank
    q = int(np.searchsorted(cumulative, target_ratio - 1e-12, side="left")) + 1
    q = min(q, rank)

    model = PcaModel(
        components=_orient(vt[:q]),
        explained_variance=variance[:q],
        total_variance=total,
        target_ratio=target_ratio,
    )
    logger.info(
        f"PCA kept {q} of {matrix.shape[1]} directions "
        f"({model.explained_ratio:.4f} of variance, target {target_ratio})"
    )
    return model


def pca_transform(model: PcaModel, x: npt.ArrayLike) -> np.ndarray:
    """Project a vector (or every row of a matrix) onto the principal directions."""
    values = _check_width(x, model.input_dim, "PCA input")
    return values @ model.components.T
