"""Analytic gradients of the ResNEst, A-ResNEst and DenseNEst risks.

Reverse accumulation is written out by hand for the fixed MLP block: with
``z = A x``, ``a = act(z)``, ``v = U a`` and upstream ``dv``,

    dU = dv a^T,   dz = (U^T dv) * act'(z),   dA = dz x^T,   dx = A^T dz.

All gradients are of the mean risk, so the output-side seed is
``loss_grad / N``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .models import (
    AResNEstParams,
    BlockFn,
    DenseNEstParams,
    FeatureMatrices,
    ResNEstParams,
    activate,
    activate_grad,
    residual_sum,
)
from .risk import Dataset, loss_grad

BlockGrad = tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class GradResNEst:
    """Gradient of the ResNEst risk, shaped like :class:`ResNEstParams`."""

    d_w0: np.ndarray
    d_w: tuple[np.ndarray, ...]
    d_w_out: np.ndarray
    d_blocks: tuple[BlockGrad, ...]

    @property
    def d_w_all(self) -> tuple[np.ndarray, ...]:
        """(dW_0, ..., dW_L)."""
        return (self.d_w0,) + tuple(self.d_w)

    @property
    def d_w_l(self) -> np.ndarray:
        return self.d_w_all[-1]

    def arrays(self) -> list[np.ndarray]:
        """Arrays in the order of :func:`resnest_lab.models.param_arrays`."""
        out = list(self.d_w_all) + [self.d_w_out]
        for d_in, d_out in self.d_blocks:
            out += [d_in, d_out]
        return out


@dataclass(frozen=True)
class GradAResNEst:
    """Gradient of the A-ResNEst risk: heads, then phi (empty when phi is frozen)."""

    d_h: tuple[np.ndarray, ...]
    d_w: tuple[np.ndarray, ...] = ()
    d_blocks: tuple[BlockGrad, ...] = ()

    def arrays(self) -> list[np.ndarray]:
        out = list(self.d_h) + list(self.d_w)
        for d_in, d_out in self.d_blocks:
            out += [d_in, d_out]
        return out


@dataclass(frozen=True)
class GradDenseNEst:
    """Gradient of the DenseNEst risk (``d_blocks`` empty when the blocks are frozen)."""

    d_w_out: np.ndarray
    d_blocks: tuple[BlockGrad, ...] = ()

    def arrays(self) -> list[np.ndarray]:
        out = [self.d_w_out]
        for d_in, d_out in self.d_blocks:
            out += [d_in, d_out]
        return out


def grad_norm(grad) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in grad.arrays())))


def _block_backward(block: BlockFn, x_in: np.ndarray, dv: np.ndarray) -> tuple[BlockGrad, np.ndarray]:
    z = block.weight_in @ x_in
    a = activate(z, block.activation)
    d_out = dv @ a.T
    dz = (block.weight_out.T @ dv) * activate_grad(z, block.activation)
    d_in = dz @ x_in.T
    return (d_in, d_out), block.weight_in.T @ dz


def _output_seed(y_hat: np.ndarray, dataset: Dataset, loss: str) -> np.ndarray:
    return loss_grad(loss, y_hat, dataset.y) / dataset.n


def grad_pphi(w_l, w_out, features: FeatureMatrices, dataset: Dataset,
              loss: str = "squared") -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the risk over the prediction weights (W_L, W_{L+1}) with phi frozen.

    For the squared loss this is ``dW_L = (2/N) W_out^T (Y_hat - Y) V_L^T`` and
    ``dW_out = (2/N) (Y_hat - Y) x_L^T`` with ``x_L = sum_i W_i V_i``.
    ``features`` must come from :func:`resnest_lab.models.compute_features`.
    """
    w_l = np.asarray(w_l, dtype=np.float64)
    w_out = np.asarray(w_out, dtype=np.float64)
    v_l = features.v[-1]
    if w_l.shape[1] != v_l.shape[0]:
        raise ShapeError(f"W_L has {w_l.shape[1]} columns, V_L has {v_l.shape[0]} rows")
    if w_out.shape[1] != w_l.shape[0]:
        raise ShapeError(f"w_out has {w_out.shape[1]} columns, W_L has {w_l.shape[0]} rows")
    x_l = features.base(w_l.shape[0]) + w_l @ v_l
    g = _output_seed(w_out @ x_l, dataset, loss)
    return w_out.T @ g @ v_l.T, g @ x_l.T


def _forward_cache(params: ResNEstParams, x: np.ndarray):
    xs = [params.w[0] @ x]
    v = [x]
    for i, block in enumerate(params.blocks, start=1):
        v.append(block(xs[-1]))
        xs.append(xs[-1] + params.w[i] @ v[-1])
    return xs, v


def grad_full_resnest(params: ResNEstParams, dataset: Dataset, loss: str = "squared") -> GradResNEst:
    """Gradient of the ResNEst risk with respect to every parameter."""
    if dataset.n_in != params.n_in:
        raise ShapeError(f"dataset has N_in={dataset.n_in}, model expects {params.n_in}")
    xs, v = _forward_cache(params, dataset.x)
    g = _output_seed(params.w_out @ xs[-1], dataset, loss)
    d_w_out = g @ xs[-1].T
    delta = params.w_out.T @ g
    d_w = [None] * (params.l + 1)
    d_blocks = [None] * params.l
    for i in range(params.l, 0, -1):
        d_w[i] = delta @ v[i].T
        d_blocks[i - 1], dx = _block_backward(params.blocks[i - 1], xs[i - 1], params.w[i].T @ delta)
        delta = delta + dx
    d_w[0] = delta @ dataset.x.T
    return GradResNEst(d_w[0], tuple(d_w[1:]), d_w_out, tuple(d_blocks))


def grad_aresnest(params: AResNEstParams, dataset: Dataset, loss: str = "squared",
                  include_phi: bool = True) -> GradAResNEst:
    """Gradient of the A-ResNEst risk; ``include_phi=False`` returns only the heads."""
    phi = params.phi
    x = dataset.x
    v = [x]
    xs = []
    if phi.l > 0:
        xs.append(phi.w[0] @ x)
        for i, block in enumerate(phi.blocks, start=1):
            v.append(block(xs[-1]))
            if i < phi.l:
                xs.append(xs[-1] + phi.w[i] @ v[-1])
    feats = FeatureMatrices(tuple(v), tuple(xs))
    g = _output_seed(residual_sum(params.h, feats), dataset, loss)
    d_h = tuple(g @ vi.T for vi in v)
    if not include_phi or phi.l == 0:
        return GradAResNEst(d_h)
    d_w = [None] * phi.l
    d_blocks = [None] * phi.l
    # delta is dR/dx_i for the residual state feeding block i+1
    delta = np.zeros_like(xs[-1])
    for i in range(phi.l, 0, -1):
        dv = params.h[i].T @ g
        if i < phi.l:
            d_w[i] = delta @ v[i].T
            dv = dv + phi.w[i].T @ delta
        d_blocks[i - 1], dx = _block_backward(phi.blocks[i - 1], xs[i - 1], dv)
        delta = delta + dx
    d_w[0] = delta @ x.T
    return GradAResNEst(d_h, tuple(d_w), tuple(d_blocks))


def grad_densenest(params: DenseNEstParams, dataset: Dataset, loss: str = "squared",
                   include_phi: bool = True) -> GradDenseNEst:
    """Gradient of the DenseNEst risk; ``include_phi=False`` returns only dW_{L+1}."""
    xs = [dataset.x]
    for block in params.blocks:
        xs.append(np.vstack([xs[-1], block(xs[-1])]))
    g = _output_seed(params.w_out @ xs[-1], dataset, loss)
    d_w_out = g @ xs[-1].T
    if not include_phi:
        return GradDenseNEst(d_w_out)
    delta = params.w_out.T @ g
    d_blocks = [None] * params.l
    for i in range(params.l, 0, -1):
        width = xs[i - 1].shape[0]
        dv = delta[width:]
        d_blocks[i - 1], dx = _block_backward(params.blocks[i - 1], xs[i - 1], dv)
        delta = delta[:width] + dx
    return GradDenseNEst(d_w_out, tuple(d_blocks))


def gradient(params, dataset: Dataset, loss: str = "squared"):
    """Full gradient for any supported parameter container."""
    if isinstance(params, ResNEstParams):
        return grad_full_resnest(params, dataset, loss)
    if isinstance(params, AResNEstParams):
        return grad_aresnest(params, dataset, loss, include_phi=True)
    if isinstance(params, DenseNEstParams):
        return grad_densenest(params, dataset, loss, include_phi=True)
    raise TypeError(f"unsupported parameter container {type(params).__name__}")
