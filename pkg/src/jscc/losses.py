"""Loss functions: coding-rate reduction, MSE, the unified recovery +
classification objective, SSIM, and cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, constant, logdet_psd
from .data import MembershipMatrix
from .errors import ConfigurationError, ContractError, ShapeError


@dataclass
class RateParams:
    """Hyper-parameters of the coding-rate terms.

    eps2 is the prescribed coding distortion; beta balances recovery against
    classification in the unified loss. log_base "e" keeps natural logs,
    "2" rescales every rate by 1/ln 2.
    """

    eps2: float = 0.5
    beta: float = 1.0
    log_base: str = "e"

    def __post_init__(self):
        if self.eps2 <= 0:
            raise ConfigurationError("eps2 must be positive")
        if self.beta < 0:
            raise ConfigurationError("beta must be nonnegative")
        if self.log_base not in ("e", "2"):
            raise ConfigurationError("log_base must be 'e' or '2'")

    @property
    def log_scale(self):
        return 1.0 if self.log_base == "e" else 1.0 / np.log(2.0)


@dataclass
class SsimConstants:
    o1: float = 0.01 ** 2
    o2: float = 0.03 ** 2

    def __post_init__(self):
        if self.o1 <= 0 or self.o2 <= 0:
            raise ConfigurationError("SSIM stabilizers must be positive")


def _gram_logdet(y: Tensor, alpha: float) -> Tensor:
    """log det(I + alpha Y Y^T) through whichever Gram matrix is smaller,
    using det(I + alpha Y Y^T) = det(I + alpha Y^T Y)."""
    m, n = y.shape
    if m <= n:
        gram = y @ y.T
        eye = constant(np.eye(m))
    else:
        gram = y.T @ y
        eye = constant(np.eye(n))
    return logdet_psd(eye + alpha * gram)


def coding_rate(y: Tensor, params: RateParams) -> Tensor:
    """Volume surrogate of the span of the feature columns:
    (1/2) log det(I + (m / (N eps^2)) Y Y^T) with Y of shape [m, N]."""
    if y.ndim != 2:
        raise ShapeError(f"features must be a matrix, got {y.shape}")
    m, n = y.shape
    alpha = m / (n * params.eps2)
    return 0.5 * params.log_scale * _gram_logdet(y, alpha)


def class_rate(y: Tensor, membership: MembershipMatrix,
               params: RateParams) -> Tensor:
    """Class-conditional rate: sum_j tr(Pi_j)/(2N) log det(I + (m / (tr(Pi_j)
    eps^2)) Y Pi_j Y^T). Empty classes contribute zero."""
    m, n = y.shape
    if membership.n != n:
        raise ContractError(
            f"membership covers {membership.n} samples, features have {n}")
    if sum(len(s) for s in membership.index_sets) != n:
        raise ContractError("membership index sets do not partition the samples")
    total = None
    for idx in membership.index_sets:
        nj = len(idx)
        if nj == 0:
            continue
        yj = y.gather_columns(idx)
        alpha = m / (nj * params.eps2)
        term = (nj / (2.0 * n)) * params.log_scale * _gram_logdet(yj, alpha)
        total = term if total is None else total + term
    if total is None:
        raise ContractError("membership has no samples")
    return total


def rate_reduction(y: Tensor, membership: MembershipMatrix,
                   params: RateParams) -> Tensor:
    """Whole-set rate minus class-conditional rate; nonnegative up to
    numerical tolerance and exactly zero for a single class."""
    return coding_rate(y, params) - class_rate(y, membership, params)


def mse_loss(s: Tensor, s_hat: Tensor) -> Tensor:
    """(1/(N B)) sum of squared pixel errors."""
    if s.shape != s_hat.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {s_hat.shape}")
    diff = s - s_hat
    return (diff * diff).mean()


def unified_loss(y: Tensor, membership: MembershipMatrix, s: Tensor,
                 s_hat: Tensor, params: RateParams) -> Tensor:
    """-rate_reduction + beta * MSE. The decoder only ever sees the MSE term's
    gradient; the encoder sees both."""
    return -rate_reduction(y, membership, params) \
        + params.beta * mse_loss(s, s_hat)


def ssim_tensor(s: Tensor, s_hat: Tensor,
                consts: SsimConstants = SsimConstants()) -> Tensor:
    """Per-image structural similarity from whole-image moments.

    s and s_hat are [N, B] batches; returns the length-N SSIM values as a
    differentiable tensor (shape [N, 1]).
    """
    if s.shape != s_hat.shape:
        raise ShapeError(f"shape mismatch {s.shape} vs {s_hat.shape}")
    mu_a = s.mean(axis=1, keepdims=True)
    mu_b = s_hat.mean(axis=1, keepdims=True)
    da = s - mu_a
    db = s_hat - mu_b
    var_a = (da * da).mean(axis=1, keepdims=True)
    var_b = (db * db).mean(axis=1, keepdims=True)
    cov = (da * db).mean(axis=1, keepdims=True)
    num = (2.0 * mu_a * mu_b + consts.o1) * (2.0 * cov + consts.o2)
    den = (mu_a * mu_a + mu_b * mu_b + consts.o1) * (var_a + var_b + consts.o2)
    return num / den


def ssim(s, s_hat, consts: SsimConstants = SsimConstants()) -> float:
    """SSIM of a single pair of images (plain value)."""
    a = np.asarray(s, dtype=np.float64).reshape(1, -1)
    b = np.asarray(s_hat, dtype=np.float64).reshape(1, -1)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {np.shape(s)} vs {np.shape(s_hat)}")
    return float(ssim_tensor(constant(a), constant(b), consts).data[0, 0])


def ssim_loss(s: Tensor, s_hat: Tensor,
              consts: SsimConstants = SsimConstants()) -> Tensor:
    """1 - mean SSIM over the batch."""
    return 1.0 - ssim_tensor(s, s_hat, consts).mean()


def cross_entropy(predictions: Tensor, onehot: np.ndarray) -> Tensor:
    """-(1/N) sum of one-hot-weighted log predictions.

    Rows of `predictions` must already lie on the simplex (post-softmax).
    """
    z = predictions
    if z.ndim != 2:
        raise ShapeError(f"predictions must be [N, J], got {z.shape}")
    onehot = np.asarray(onehot, dtype=np.float64)
    if onehot.shape != z.shape:
        raise ShapeError(f"one-hot shape {onehot.shape} != predictions {z.shape}")
    row_sums = z.data.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6) or np.any(z.data < 0):
        raise ContractError("prediction rows must be normalized distributions")
    n = z.shape[0]
    # pick each row's true-class probability before the log so that exact
    # one-hot predictions evaluate to 0 instead of 0 * log(0)
    hot = (z * constant(onehot)).sum(axis=1)
    return -hot.log().sum() * (1.0 / n)


def one_hot(labels, num_classes):
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out
