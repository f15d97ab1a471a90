"""
Loss functions for the combined contrastive + variational objective.

The contrastive term is a symmetrized in-batch InfoNCE over cosine
similarities of projected views; the variational term is the negated ELBO
(unit-variance Gaussian reconstruction plus KL to a standard normal prior).
The training objective is lambda1 * nce + lambda2 * (recon_nll + kl).
"""

from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
from aws_lambda_powertools import Logger

from .autodiff import Tensor, clip, combine_binary, concat, log_sum_exp, map_unary, matmul, reduce, transpose
from .constants import NORM_FLOOR, SELF_SIMILARITY_MARGIN, SERVICE_NAME
from .errors import BatchTooSmall, InvalidLossWeights, InvalidTemperature, NonFiniteLoss, ShapeMismatch

logger = Logger(service=SERVICE_NAME, child=True)


class LossWeights:
    """
    Objective weights and the InfoNCE temperature
    """

    def __init__(self, lambda1: float, lambda2: float, tau: float):
        """
        Initialize LossWeights

        Args:
            lambda1 (float): Contrastive weight
            lambda2 (float): Variational weight
            tau (float): Temperature

        Raises:
            InvalidTemperature: If tau is not strictly positive
            InvalidLossWeights: If a weight is negative or both are zero
        """
        self.lambda1 = float(lambda1)
        self.lambda2 = float(lambda2)
        self.tau = float(tau)
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise InvalidTemperature(f"tau must be > 0, got {tau}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidLossWeights(f"loss weights must be >= 0, got {lambda1}, {lambda2}")
        if self.lambda1 + self.lambda2 <= 0:
            raise InvalidLossWeights("lambda1 + lambda2 must be > 0")

    def to_dict(self) -> Dict[str, float]:
        return {"lambda1": self.lambda1, "lambda2": self.lambda2, "tau": self.tau}


class LossBreakdown:
    """
    Scalar components of one objective evaluation plus the differentiable total
    """

    def __init__(self, nce: float, recon_nll: float, kl: float, total: float, objective: Optional[Tensor] = None):
        self.nce = float(nce)
        self.recon_nll = float(recon_nll)
        self.kl = float(kl)
        self.total = float(total)
        self.objective = objective

    def to_dict(self) -> Dict[str, Any]:
        return {"nce": self.nce, "recon_nll": self.recon_nll, "kl": self.kl, "total": self.total}


def cosine_similarity(a: Sequence[float], b: Sequence[float]) -> float:
    """Cosine similarity of two vectors with a norm floor of 1e-12.

    Args:
        a (Sequence[float]): First vector
        b (Sequence[float]): Second vector of the same length

    Returns:
        float: dot(a, b) / (‖a‖·‖b‖), about 0 when either vector is zero

    Raises:
        ShapeMismatch: If the lengths differ
    """
    a_arr = np.asarray(a, dtype=np.float64).reshape(-1)
    b_arr = np.asarray(b, dtype=np.float64).reshape(-1)
    if a_arr.shape != b_arr.shape:
        raise ShapeMismatch(f"cosine_similarity needs equal lengths, got {a_arr.size} and {b_arr.size}")
    norms = max(np.linalg.norm(a_arr), NORM_FLOOR) * max(np.linalg.norm(b_arr), NORM_FLOOR)
    return float(np.clip(np.dot(a_arr, b_arr) / norms, -1.0, 1.0))


def _row_normalize(z: Tensor) -> Tensor:
    squared_norms = reduce("sum", map_unary("square", z), axis=1)
    norms = map_unary("sqrt", clip(squared_norms, NORM_FLOOR * NORM_FLOOR, np.inf))
    # divide column-wise by broadcasting the norms along the trailing axis of z^T
    return transpose(combine_binary("div", transpose(z), norms))


def similarity_matrix(view1: Tensor, view2: Tensor) -> Tensor:
    """Cosine similarities between every pair of the 2B stacked view embeddings.

    Rows and columns 0..B-1 are view1, B..2B-1 are view2.

    Args:
        view1 (Tensor): Projections of the first view [B, d]
        view2 (Tensor): Projections of the second view [B, d]

    Returns:
        Tensor: Similarity matrix [2B, 2B]
    """
    if view1.ndim != 2 or view1.shape != view2.shape:
        raise ShapeMismatch(f"views must be equal-shape matrices, got {view1.shape} and {view2.shape}")
    normalized = _row_normalize(concat([view1, view2], axis=0))
    return matmul(normalized, transpose(normalized))


def _positive_index(n: int) -> np.ndarray:
    half = n // 2
    return np.concatenate([np.arange(half, n), np.arange(0, half)])


def info_nce_from_similarities(sims: Tensor, tau: float) -> Tensor:
    """InfoNCE over a stacked [2B, 2B] similarity matrix.

    Each row is an anchor; its positive sits B columns away, every other
    off-diagonal column is a negative, and the diagonal is excluded.

    Args:
        sims (Tensor): Similarities as produced by similarity_matrix
        tau (float): Temperature

    Returns:
        Tensor: Mean per-anchor loss over both directions

    Raises:
        BatchTooSmall: If B < 2
        InvalidTemperature: If tau is not strictly positive
    """
    if not np.isfinite(tau) or tau <= 0:
        raise InvalidTemperature(f"tau must be > 0, got {tau}")
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1] or sims.shape[0] % 2:
        raise ShapeMismatch(f"expected a square [2B, 2B] similarity matrix, got {sims.shape}")
    n = sims.shape[0]
    if n < 4:
        raise BatchTooSmall(f"InfoNCE needs at least 2 samples per view, got {n // 2}")

    logits = sims / float(tau)
    # scaled to the logits so the diagonal underflows to zero weight at any temperature
    offset = 2.0 * float(np.abs(logits.data).max()) + SELF_SIMILARITY_MARGIN
    masked = logits - Tensor(np.eye(n) * offset)
    selector = np.zeros((n, n))
    selector[np.arange(n), _positive_index(n)] = 1.0
    positives = reduce("sum", logits * Tensor(selector), axis=1)
    per_anchor = log_sum_exp(masked, axis=1) - positives
    return reduce("mean", per_anchor)


def info_nce(view1: Tensor, view2: Tensor, tau: float) -> Tensor:
    """Symmetrized in-batch InfoNCE between two views.

    For anchor i of one view the positive is row i of the other view and the
    2B-2 remaining rows of both views are negatives. The positive is part of
    the denominator.

    Args:
        view1 (Tensor): Projections of the first view [B, d]
        view2 (Tensor): Projections of the second view [B, d]
        tau (float): Temperature

    Returns:
        Tensor: Scalar loss, log(2B-1) when all embeddings coincide

    Raises:
        BatchTooSmall: If B < 2
        InvalidTemperature: If tau is not strictly positive
    """
    if not np.isfinite(tau) or tau <= 0:
        raise InvalidTemperature(f"tau must be > 0, got {tau}")
    if view1.ndim == 2 and view1.shape[0] < 2:
        raise BatchTooSmall(f"InfoNCE needs at least 2 samples per view, got {view1.shape[0]}")
    return info_nce_from_similarities(similarity_matrix(view1, view2), tau)


def _check_same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.ndim != 2 or a.shape != b.shape:
        raise ShapeMismatch(f"{name} needs equal [B, D] shapes, got {a.shape} and {b.shape}")


def gaussian_kl(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL(N(mu, exp(logvar)) ‖ N(0, I)), summed over latent dims and averaged over the batch."""
    _check_same_shape("gaussian_kl", mu, logvar)
    per_dim = map_unary("square", mu) + map_unary("exp", logvar) - 1.0 - logvar
    return reduce("mean", reduce("sum", per_dim, axis=1)) * 0.5


def recon_nll(x: Tensor, x_hat: Tensor) -> Tensor:
    """Batch mean of 0.5·‖x − x_hat‖² (unit-variance Gaussian, constants dropped)."""
    _check_same_shape("recon_nll", x, x_hat)
    residual = map_unary("square", x - x_hat)
    return reduce("mean", reduce("sum", residual, axis=1)) * 0.5


def elbo_terms(x: Tensor, x_hat: Tensor, mu: Tensor, logvar: Tensor) -> Tuple[Tensor, Tensor]:
    """Return the reconstruction and KL terms of the negated ELBO separately.

    Args:
        x (Tensor): Clean inputs [B, D]
        x_hat (Tensor): Reconstructions [B, D]
        mu (Tensor): Posterior means [B, L]
        logvar (Tensor): Posterior log-variances [B, L]

    Returns:
        Tuple[Tensor, Tensor]: (recon_nll, kl)
    """
    if x.ndim == 2 and mu.ndim == 2 and x.shape[0] != mu.shape[0]:
        raise ShapeMismatch(f"batch sizes differ: x has {x.shape[0]} rows, mu has {mu.shape[0]}")
    return recon_nll(x, x_hat), gaussian_kl(mu, logvar)


def elbo_loss(x: Tensor, x_hat: Tensor, mu: Tensor, logvar: Tensor) -> Tensor:
    """Negated ELBO as a minimization target: recon_nll + gaussian_kl."""
    reconstruction, kl = elbo_terms(x, x_hat, mu, logvar)
    return reconstruction + kl


def _scalar(value) -> float:
    if isinstance(value, Tensor):
        return value.item()
    return float(value)


def total_loss(
    nce,
    elbo_l,
    weights: LossWeights,
    recon_term=None,
    kl_term=None,
) -> LossBreakdown:
    """Combine the objective terms: total = lambda1·nce + lambda2·elbo.

    A term passed as None is skipped entirely (its forward pass never ran)
    and reported as 0. Tensor terms keep the objective differentiable.

    Args:
        nce (Tensor | float | None): InfoNCE term
        elbo_l (Tensor | float | None): Negated ELBO term
        weights (LossWeights): Weights and temperature
        recon_term (Tensor | float, optional): Reconstruction part of elbo_l, for reporting
        kl_term (Tensor | float, optional): KL part of elbo_l, for reporting

    Returns:
        LossBreakdown: Scalar components and the differentiable objective

    Raises:
        NonFiniteLoss: If any component or the total is not finite
    """
    parts = []
    if nce is not None and weights.lambda1 > 0:
        parts.append(nce * weights.lambda1 if isinstance(nce, Tensor) else weights.lambda1 * float(nce))
    if elbo_l is not None and weights.lambda2 > 0:
        parts.append(elbo_l * weights.lambda2 if isinstance(elbo_l, Tensor) else weights.lambda2 * float(elbo_l))
    if not parts:
        raise NonFiniteLoss("objective has no active term")

    objective = parts[0]
    for part in parts[1:]:
        objective = objective + part

    nce_value = _scalar(nce) if nce is not None else 0.0
    elbo_value = _scalar(elbo_l) if elbo_l is not None else 0.0
    if recon_term is not None or kl_term is not None:
        recon_value = _scalar(recon_term) if recon_term is not None else 0.0
        kl_value = _scalar(kl_term) if kl_term is not None else 0.0
    else:
        recon_value, kl_value = elbo_value, 0.0
    total = _scalar(objective)

    if not all(np.isfinite(v) for v in (nce_value, recon_value, kl_value, elbo_value, total)):
        raise NonFiniteLoss("loss is not finite")

    return LossBreakdown(
        nce=nce_value,
        recon_nll=recon_value,
        kl=kl_value,
        total=total,
        objective=objective if isinstance(objective, Tensor) else None,
    )
