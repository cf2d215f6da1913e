"""Losses, empirical risks and first-order residual matrices.

The squared loss is ``||y_hat - y||^2`` with no 1/2, so its gradient is
``2 (y_hat - y)`` and Hessians of the mean risk carry a ``2/N`` factor.
Cross-entropy takes raw scores ``y_hat`` and targets on the probability
simplex. All risks are plain means over samples (columns).
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError
from .models import (
    AResNEstParams,
    DenseNEstParams,
    FeatureMatrices,
    ResNEstParams,
    densenest_forward,
    residual_sum,
    resnest_forward,
)

LOSSES = ("squared", "cross_entropy")
SIMPLEX_TOL = 1e-9


def _check_loss(loss: str) -> str:
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return loss


def _check_simplex(y: np.ndarray) -> None:
    if np.any(y < -SIMPLEX_TOL) or np.any(np.abs(y.sum(axis=0) - 1.0) > SIMPLEX_TOL):
        raise InputError("cross-entropy targets must lie on the probability simplex")


@dataclass(frozen=True)
class Dataset:
    """Inputs ``x`` (N_in x N) and targets ``y`` (N_o x N), one sample per column."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64)
        if x.ndim != 2 or y.ndim != 2:
            raise ShapeError(f"x and y must be 2-D, got {x.shape} and {y.shape}")
        if x.shape[1] != y.shape[1]:
            raise ShapeError(f"x has {x.shape[1]} samples but y has {y.shape[1]}")
        if x.shape[1] < 1:
            raise ShapeError("dataset must contain at least one sample")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InputError("dataset contains non-finite entries")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def n_in(self) -> int:
        return self.x.shape[0]

    @property
    def n_out(self) -> int:
        return self.y.shape[0]

    def validate_for(self, loss: str) -> None:
        """Raise :class:`InputError` if the targets are invalid for ``loss``."""
        if _check_loss(loss) == "cross_entropy":
            _check_simplex(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[:, idx], self.y[:, idx])


def _log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=0, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=0, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(z, dtype=np.float64)))


def _as_columns(y_hat, y) -> tuple[np.ndarray, np.ndarray]:
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ShapeError(f"prediction shape {y_hat.shape} differs from target shape {y.shape}")
    if y_hat.ndim == 1:
        return y_hat[:, None], y[:, None]
    return y_hat, y


def loss_value(loss: str, y_hat, y) -> float:
    """Summed loss over the columns of ``y_hat`` (a single value for vectors)."""
    _check_loss(loss)
    yh, yy = _as_columns(y_hat, y)
    if loss == "squared":
        r = yh - yy
        return float(np.sum(r * r))
    _check_simplex(yy)
    return float(-np.sum(yy * _log_softmax(yh)))


def loss_grad(loss: str, y_hat, y) -> np.ndarray:
    """Per-sample derivative of the loss w.r.t. ``y_hat``, same shape as ``y_hat``."""
    _check_loss(loss)
    y_hat = np.asarray(y_hat, dtype=np.float64)
    yh, yy = _as_columns(y_hat, y)
    if loss == "squared":
        g = 2.0 * (yh - yy)
    else:
        _check_simplex(yy)
        g = softmax(yh) - yy
    return g.reshape(y_hat.shape)


def mean_loss(loss: str, y_hat: np.ndarray, y: np.ndarray) -> float:
    return loss_value(loss, y_hat, y) / y.shape[1]


def risk_resnest(params: ResNEstParams, dataset: Dataset, loss: str = "squared") -> float:
    y_hat, _ = resnest_forward(params, dataset.x)
    return mean_loss(loss, y_hat, dataset.y)


def risk_aresnest(h_list, features: FeatureMatrices, dataset: Dataset, loss: str = "squared") -> float:
    if isinstance(h_list, AResNEstParams):
        h_list = h_list.h
    y_hat = residual_sum(tuple(h_list), features)
    return mean_loss(loss, y_hat, dataset.y)


def risk_densenest(params: DenseNEstParams, dataset: Dataset, loss: str = "squared") -> float:
    y_hat, _ = densenest_forward(params, dataset.x)
    return mean_loss(loss, y_hat, dataset.y)


@dataclass(frozen=True)
class ResNEstResiduals:
    """First-order residual matrices of a ResNEst at a point.

    ``rl_cond`` is ``sum_n v_L g_r^T W_out`` (K_L x M), ``rall_cond`` is
    ``sum_i W_i sum_n v_i g_r^T`` (M x N_o) and ``per_feature[i]`` is
    ``sum_n v_i g_r^T`` (K_i x N_o). Sums are over samples, not means.
    """

    rl_cond: np.ndarray
    rall_cond: np.ndarray
    per_feature: tuple[np.ndarray, ...]

    @property
    def rl_norm(self) -> float:
        return float(np.linalg.norm(self.rl_cond))

    @property
    def rall_norm(self) -> float:
        return float(np.linalg.norm(self.rall_cond))

    @property
    def per_feature_norms(self) -> list[float]:
        return [float(np.linalg.norm(p)) for p in self.per_feature]


def first_order_residuals_resnest(params: ResNEstParams, dataset: Dataset,
                                  loss: str = "squared") -> ResNEstResiduals:
    y_hat, feats = resnest_forward(params, dataset.x)
    g = loss_grad(loss, y_hat, dataset.y)
    per_feature = tuple(v @ g.T for v in feats.v)
    rl = per_feature[-1] @ params.w_out
    rall = sum(w @ p for w, p in zip(params.w, per_feature))
    return ResNEstResiduals(rl, rall, per_feature)


def first_order_residuals_aresnest(h_list, features: FeatureMatrices, dataset: Dataset,
                                   loss: str = "squared") -> list[np.ndarray]:
    """``sum_n v_i g_a^T`` for i = 0..L."""
    if isinstance(h_list, AResNEstParams):
        h_list = h_list.h
    y_hat = residual_sum(tuple(h_list), features)
    g = loss_grad(loss, y_hat, dataset.y)
    return [v @ g.T for v in features.v]
