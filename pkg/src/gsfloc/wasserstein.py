"""2-Wasserstein distance between GP populations and the confidence mapping.

W2^2(A, B) = |mu_A - mu_B|_F^2 + Tr(S_A + S_B) - 2 Tr((S_A^1/2 S_B S_A^1/2)^1/2)

With the stability mask enabled, each covariance is replaced by its
stability-weighted version and the mean term is weighted per grid point by
the geometric mean of the two populations' weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ValidationError
from .gsf import GpPopulation, apply_stability_mask


@dataclass(frozen=True)
class SimilarityConfig:
    sigma_w: float  # scale of the w2^2 -> weight mapping
    accept_threshold: float  # per-vertex-pair w2^2 acceptance bound

    def __post_init__(self):
        if self.sigma_w <= 0:
            raise ValidationError(f"sigma_w must be > 0, got {self.sigma_w}")
        if self.accept_threshold <= 0:
            raise ValidationError(
                f"accept_threshold must be > 0, got {self.accept_threshold}"
            )


def psd_sqrt(S: np.ndarray, sym_tol: float = 1e-8) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, negatives clamped to 0."""
    S = np.asarray(S, dtype=np.float64)
    asym = np.abs(S - S.T).max() if S.size else 0.0
    if asym > sym_tol:
        raise ValidationError(f"matrix is not symmetric: max |S - S^T| = {asym:.3e}")
    vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
    vals = np.maximum(vals, 0.0)
    out = (vecs * np.sqrt(vals)) @ vecs.T
    return 0.5 * (out + out.T)


def _trace_sqrt_product(S1: np.ndarray, S2: np.ndarray) -> float:
    """Tr((S1^1/2 S2 S1^1/2)^1/2), eigenvalues clamped at 0."""
    r1 = psd_sqrt(S1)
    inner = r1 @ S2 @ r1
    vals = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    return float(np.sum(np.sqrt(np.maximum(vals, 0.0))))


def w2_squared(pop_a: GpPopulation, pop_b: GpPopulation, use_stability: bool = False) -> float:
    """Squared 2-Wasserstein distance between two populations on matching grids."""
    if pop_a.mu.shape != pop_b.mu.shape or pop_a.Sigma.shape != pop_b.Sigma.shape:
        raise ValidationError(
            f"population shapes differ: mu {pop_a.mu.shape} vs {pop_b.mu.shape}, "
            f"Sigma {pop_a.Sigma.shape} vs {pop_b.Sigma.shape}"
        )
    s_a, s_b = pop_a.Sigma, pop_b.Sigma
    diff_sq = np.sum((pop_a.mu - pop_b.mu) ** 2, axis=1)  # per grid point
    if use_stability:
        s_a = apply_stability_mask(s_a, pop_a.stability_weights)
        s_b = apply_stability_mask(s_b, pop_b.stability_weights)
        diff_sq = diff_sq * np.sqrt(pop_a.stability_weights * pop_b.stability_weights)
    mean_term = float(np.sum(diff_sq))
    trace_term = float(np.trace(s_a) + np.trace(s_b)) - 2.0 * _trace_sqrt_product(s_a, s_b)
    return max(mean_term + trace_term, 0.0)


def similarity_weight(w2sq: float, cfg: SimilarityConfig) -> float:
    """omega = exp(-w2^2 / (2 sigma_w^2)); 1 at zero distance, decreasing."""
    if w2sq < 0:
        raise ValidationError(f"w2sq must be >= 0, got {w2sq}")
    return float(np.exp(-w2sq / (2.0 * cfg.sigma_w**2)))
