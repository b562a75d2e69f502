"""Principal component analysis fitted with a cyclic Jacobi eigensolver."""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import (
    ConfigError,
    ContractError,
    DegenerateInputError,
    DimensionError,
    FormatError,
)
from .formats import read_tensor, write_tensor

LOG = logging.getLogger(__name__)

MAX_SWEEPS = 100
TOLERANCE = 1e-10
FILES = ("mean", "components", "explained_variance", "total_variance")


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    total_variance: float

    @property
    def in_dim(self) -> int:
        return self.components.shape[1]

    @property
    def out_dim(self) -> int:
        return self.components.shape[0]


def _as_matrix(x, name="X"):
    x = np.asarray(getattr(x, "data", x), dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {x.shape}")
    return x


def _off_norm(a):
    return np.sqrt(np.square(a).sum() - np.square(np.diag(a)).sum())


def _rotate(a, v, p, q):
    """Zero a[p, q] with one Jacobi rotation, updating ``a`` and ``v`` in place."""
    theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
    t = (1.0 if theta >= 0 else -1.0) / (abs(theta) + np.sqrt(theta * theta + 1.0))
    c = 1.0 / np.sqrt(t * t + 1.0)
    s = t * c
    col_p, col_q = a[:, p].copy(), a[:, q].copy()
    a[:, p] = c * col_p - s * col_q
    a[:, q] = s * col_p + c * col_q
    row_p, row_q = a[p, :].copy(), a[q, :].copy()
    a[p, :] = c * row_p - s * row_q
    a[q, :] = s * row_p + c * row_q
    a[p, q] = a[q, p] = 0.0
    vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
    v[:, p] = c * vec_p - s * vec_q
    v[:, q] = s * vec_p + c * vec_q


def jacobi_eigh(matrix, max_sweeps=MAX_SWEEPS, tolerance=TOLERANCE):
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix, unsorted."""
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    v = np.eye(n)
    threshold = tolerance * max(1.0, float(np.linalg.norm(a)))
    # cyclic by rows
    for sweep in range(max_sweeps):
        off = _off_norm(a)
        if off < threshold:
            LOG.debug("Jacobi converged after %d sweeps", sweep)
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if a[p, q] != 0.0:
                    _rotate(a, v, p, q)
    else:
        if _off_norm(a) >= threshold:
            LOG.warning(
                "Jacobi eigensolver stopped after %d sweeps with off-diagonal norm %g",
                max_sweeps,
                _off_norm(a),
            )
    return np.diag(a).copy(), v


def _orient(components):
    """Flip each row so its largest-magnitude entry is positive."""
    rows = np.arange(components.shape[0])
    pivots = components[rows, np.argmax(np.abs(components), axis=1)]
    return components * np.where(pivots < 0, -1.0, 1.0)[:, None]


def pca_fit(x, out_dim: int) -> PcaModel:
    """Top ``out_dim`` principal directions of the rows of ``x``.

    The covariance is normalized by n - 1.
    """
    x = _as_matrix(x)
    n, d = x.shape
    if n < 2:
        raise ConfigError(f"PCA needs at least 2 samples, got {n}")
    if not 1 <= out_dim <= min(n - 1, d):
        raise ConfigError(f"output dim must be in [1, {min(n - 1, d)}], got {out_dim}")
    mean = x.mean(axis=0)
    centered = x - mean
    covariance = centered.T @ centered / (n - 1)
    total = float(np.trace(covariance))
    if total <= 1e-12 * max(1.0, float(np.mean(np.square(x)))):
        raise DegenerateInputError("data has zero variance")
    eigenvalues, eigenvectors = jacobi_eigh(covariance)
    order = np.argsort(-eigenvalues, kind="stable")[:out_dim]
    components = _orient(eigenvectors[:, order].T)
    explained = np.maximum(eigenvalues[order], 0.0)
    LOG.debug("PCA %d -> %d keeps %.4f of the variance", d, out_dim, explained.sum() / total)
    return PcaModel(mean, components, explained, total)


def _check_dim(model: PcaModel, x):
    if x.shape[1] != model.in_dim:
        raise ContractError(f"{x.shape[1]}-dim data against a {model.in_dim}-dim PCA model")


def pca_transform(model: PcaModel, x) -> np.ndarray:
    x = _as_matrix(x)
    _check_dim(model, x)
    return (x - model.mean) @ model.components.T


def inverse_transform(model: PcaModel, y) -> np.ndarray:
    """Lift reduced coordinates back to the input space."""
    y = _as_matrix(y, "Y")
    if y.shape[1] != model.out_dim:
        raise ContractError(f"{y.shape[1]}-dim coordinates for a {model.out_dim}-dim PCA model")
    return y @ model.components + model.mean


def explained_variance_ratio(model: PcaModel) -> np.ndarray:
    return model.explained_variance / model.total_variance


def save_pca(model: PcaModel, directory):
    directory = Path(directory)
    LOG.debug("Making folder '%s'", directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        write_tensor(directory / f"{name}.eten", np.asarray(getattr(model, name)))


def load_pca(directory) -> PcaModel:
    directory = Path(directory)
    values = {}
    for name in FILES:
        path = directory / f"{name}.eten"
        if not path.is_file():
            raise FormatError(f"{directory}: missing {path.name}")
        values[name] = read_tensor(path).data.astype(np.float64)
    model = PcaModel(
        values["mean"],
        values["components"],
        values["explained_variance"],
        float(values["total_variance"]),
    )
    k, d = model.components.shape
    if model.mean.shape != (d,) or model.explained_variance.shape != (k,):
        raise FormatError(f"{directory}: inconsistent PCA tensors")
    return model
