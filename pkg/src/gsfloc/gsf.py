"""Gaussian semantic field layer.

A field is an exact GP over a class-proportional sparsification of a local
neighborhood, mapping local 3D position to semantic logits (zero-mean prior,
Matern 3/2 kernel, independent output channels sharing one kernel matrix).
Grid probing evaluates the field on a uniform 2D grid to produce a finite
multivariate Gaussian population for downstream comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

from .core import GsflocError, LabelTaxonomy, ValidationError, rot_z

JITTER_START = 1e-8
JITTER_MAX = 1e-2


class FitError(GsflocError):
    """Kernel matrix factorization failed even after jitter escalation."""

    def __init__(self, msg: str, final_jitter: float = 0.0):
        super().__init__(msg)
        self.final_jitter = final_jitter


@dataclass(frozen=True)
class GpHyperParams:
    kappa: float = 2.0  # length scale, meters
    sigma_y: float = 0.1  # observation noise std
    nu: float = 1.5  # smoothness; only 3/2 is implemented

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValidationError(f"kappa must be > 0, got {self.kappa}")
        if self.sigma_y < 0:
            raise ValidationError(f"sigma_y must be >= 0, got {self.sigma_y}")
        if self.nu != 1.5:
            raise ValidationError("only the nu=3/2 kernel is supported")


@dataclass
class GaussianSemanticField:
    """Fitted sparse GP over local coordinates. Immutable after fit."""

    X: np.ndarray  # (M,3) local coordinates
    Y: np.ndarray  # (M,D) logits
    hyper: GpHyperParams
    factor: tuple  # cached cho_factor of K = k(X,X) + sigma_y^2 I (+ jitter)
    alpha: np.ndarray  # (M,D) cached K^-1 Y
    jitter: float = 0.0  # extra diagonal needed to factorize; 0 when clean
    source_indices: np.ndarray | None = None  # indices into the pre-sparsification input

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]


@dataclass
class GpPopulation:
    """Multivariate Gaussian obtained by probing a field on a fixed grid."""

    grid: np.ndarray  # (G,3) probe locations, local frame
    mu: np.ndarray  # (G,D) predicted means
    Sigma: np.ndarray  # (G,G) predictive covariance, PSD (negatives clamped)
    stability_weights: np.ndarray  # (G,) in (0,1]


def semantic_sparsify(X, labels, budget: int, seed) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class-proportional downsampling to roughly `budget` points.

    Each class keeps round((n_c / M) * budget) points, drawn uniformly
    without replacement. Returns (X', labels', original indices ascending).
    """
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    labels = np.asarray(labels).reshape(-1)
    m = X.shape[0]
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    if m < 1:
        raise ValidationError("cannot sparsify an empty point set")
    rng = np.random.default_rng(seed)
    keep: list[np.ndarray] = []
    for c in np.unique(labels):  # ascending class order: deterministic draws
        idx = np.nonzero(labels == c)[0]
        n_c = int(np.rint(idx.size / m * budget))
        n_c = min(n_c, idx.size)
        if n_c == 0:
            continue
        keep.append(rng.choice(idx, size=n_c, replace=False))
    indices = np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)
    return X[indices], labels[indices], indices


def matern32(a, b, kappa: float) -> float:
    """Matern 3/2 kernel: (1 + s) exp(-s) with s = sqrt(3)*|a-b|/kappa."""
    if kappa <= 0:
        raise ValidationError(f"kappa must be > 0, got {kappa}")
    s = np.sqrt(3.0) * np.linalg.norm(np.asarray(a, dtype=np.float64) - b) / kappa
    return float((1.0 + s) * np.exp(-s))


def matern32_matrix(A: np.ndarray, B: np.ndarray, kappa: float) -> np.ndarray:
    s = np.sqrt(3.0) / kappa * cdist(A, B)
    return (1.0 + s) * np.exp(-s)


def _factorize(K: np.ndarray) -> tuple[tuple, float]:
    """Cholesky with jitter escalation; returns (factor, jitter used)."""
    try:
        return cho_factor(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX:
        try:
            return cho_factor(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise FitError(
        f"kernel factorization failed up to jitter {jitter / 2.0:.3e}",
        final_jitter=jitter / 2.0,
    )


def fit_gsf(
    X_local,
    Y_logits,
    labels,
    hyper: GpHyperParams,
    budget: int,
    seed,
) -> GaussianSemanticField:
    """Sparsify, assemble K = k(X',X') + sigma_y^2 I, cache its factorization."""
    X_local = np.asarray(X_local, dtype=np.float64).reshape(-1, 3)
    Y_logits = np.asarray(Y_logits, dtype=np.float64)
    if Y_logits.ndim != 2 or Y_logits.shape[0] != X_local.shape[0]:
        raise ValidationError(
            f"logits shape {Y_logits.shape} does not match {X_local.shape[0]} points"
        )
    if X_local.shape[0] < 1:
        raise FitError("cannot fit a field on an empty neighborhood")
    if not np.all(np.isfinite(Y_logits)):
        raise ValidationError("logits contain non-finite values")

    Xs, _, idx = semantic_sparsify(X_local, labels, budget, seed)
    if idx.size == 0:
        raise FitError("sparsification produced 0 points (budget too small for class mix)")
    Ys = Y_logits[idx]

    K = matern32_matrix(Xs, Xs, hyper.kappa)
    K[np.diag_indices_from(K)] += hyper.sigma_y**2
    factor, jitter = _factorize(K)
    alpha = cho_solve(factor, Ys)
    return GaussianSemanticField(Xs, Ys, hyper, factor, alpha, jitter, idx)


def gsf_predict(field: GaussianSemanticField, Q) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean (G,D) and covariance (G,G) at query locations Q."""
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 3)
    kqx = matern32_matrix(Q, field.X, field.hyper.kappa)
    mu = kqx @ field.alpha
    v = cho_solve(field.factor, kqx.T)
    Sigma = matern32_matrix(Q, Q, field.hyper.kappa) - kqx @ v
    Sigma = 0.5 * (Sigma + Sigma.T)
    return mu, Sigma


def gsf_predict_mean(field: GaussianSemanticField, Q) -> np.ndarray:
    """Posterior mean only; skips the covariance solve."""
    Q = np.asarray(Q, dtype=np.float64).reshape(-1, 3)
    return matern32_matrix(Q, field.X, field.hyper.kappa) @ field.alpha


def _clamp_psd(Sigma: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(Sigma)
    if vals[0] >= 0.0:
        return Sigma
    vals = np.maximum(vals, 0.0)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def grid_probe(
    field: GaussianSemanticField,
    taxonomy: LabelTaxonomy,
    centroid_local=(0.0, 0.0, 0.0),
    delta_x: float = 2.5,
    delta_y: float = 2.5,
    n_x: int = 5,
    n_y: int = 5,
    z_mode="local-zero",
    yaw: float = 0.0,
) -> GpPopulation:
    """Probe the field on a uniform n_x * n_y grid centered at `centroid_local`.

    The grid's bounding box is symmetric about the centroid; flattening is
    row-major over (i, j) with g = i*n_y + j. `z_mode` is "local-zero"
    (probe at the centroid height, local z = 0) or a numeric z offset.
    `yaw` rotates the grid about the local z axis.
    """
    if n_x < 1 or n_y < 1:
        raise ValidationError("grid dimensions must be >= 1")
    cx, cy, cz = np.asarray(centroid_local, dtype=np.float64).reshape(3)
    if z_mode == "local-zero":
        z_off = 0.0
    else:
        z_off = float(z_mode)
    xs = (np.arange(n_x) - (n_x - 1) / 2.0) * delta_x
    ys = (np.arange(n_y) - (n_y - 1) / 2.0) * delta_y
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    local = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(gx.size)])
    if yaw != 0.0:
        local = local @ rot_z(yaw).T
    grid = local + np.array([cx, cy, cz + z_off])

    mu, Sigma = gsf_predict(field, grid)
    Sigma = _clamp_psd(Sigma)
    pred = np.argmax(mu, axis=1)
    stability = taxonomy.stability_vector()
    weights = stability[pred]
    return GpPopulation(grid, mu, Sigma, weights)


def apply_stability_mask(Sigma: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """diag(w)^(1/2) . Sigma . diag(w)^(1/2); preserves symmetry and PSD."""
    weights = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(weights <= 0.0):
        raise ValidationError("stability weights must be positive")
    if weights.shape[0] != Sigma.shape[0]:
        raise ValidationError(
            f"weights length {weights.shape[0]} does not match Sigma size {Sigma.shape[0]}"
        )
    sw = np.sqrt(weights)
    return Sigma * sw[:, None] * sw[None, :]


def reconstruction_miou(field: GaussianSemanticField, heldout_points, heldout_labels) -> float:
    """Mean IoU of argmax-mean predictions over classes present in pred or truth."""
    pts = np.asarray(heldout_points, dtype=np.float64).reshape(-1, 3)
    truth = np.asarray(heldout_labels).reshape(-1)
    if pts.shape[0] == 0:
        raise ValidationError("heldout set is empty")
    pred = np.argmax(gsf_predict_mean(field, pts), axis=1)
    classes = np.union1d(np.unique(pred), np.unique(truth))
    ious = []
    for c in classes:
        inter = np.count_nonzero((pred == c) & (truth == c))
        union = np.count_nonzero((pred == c) | (truth == c))
        ious.append(inter / union if union else 0.0)
    return float(np.mean(ious))
