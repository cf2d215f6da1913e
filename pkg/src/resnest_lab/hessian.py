"""Closed-form Hessian of the squared-loss risk over the prediction weights.

With phi frozen the risk ``R(W_L, W_out) = (1/N) ||W_out (B + W_L V_L) - Y||_F^2``
(``B = sum_{i<L} W_i V_i``) is a quartic polynomial. Its Hessian is taken
with respect to ``z = [vec(W_L^T); vec(W_out^T)]``, i.e. the row-major
flattenings of W_L (M*K_L entries) followed by W_out (N_o*M entries):

    h_ll = (2/N) (W_out^T W_out) kron (V_L V_L^T)
    h_lo = (2/N) [W_out^T kron (V_L X_L^T) + E]
    h_oo = (2/N) I_{N_o} kron (X_L X_L^T)

where ``X_L = B + W_L V_L``, ``Delta = (Y_hat - Y)^T`` and
``E = [I_M kron V_L delta_1, ..., I_M kron V_L delta_{N_o}]``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import linalg
from . import rng as rng_mod
from .errors import PreconditionError, ResourceError, ShapeError
from .models import FeatureMatrices, FeatureWeights, compute_features
from .risk import Dataset

MAX_HESSIAN_SIZE = 2000
SCHUR_TOL = 1e-8
CURVATURE_RTOL = 1e-8


@dataclass(frozen=True)
class HessianBlocks:
    h_ll: np.ndarray
    h_lo: np.ndarray
    h_oo: np.ndarray
    e_mat: np.ndarray
    delta: np.ndarray
    v_l: np.ndarray
    x_l: np.ndarray

    @property
    def h_ol(self) -> np.ndarray:
        return self.h_lo.T

    @property
    def full(self) -> np.ndarray:
        return np.block([[self.h_ll, self.h_lo], [self.h_ol, self.h_oo]])

    @property
    def size(self) -> int:
        return self.h_ll.shape[0] + self.h_oo.shape[0]


def assemble_hessian(w_l, w_out, features: FeatureMatrices, dataset: Dataset,
                     max_size: int = MAX_HESSIAN_SIZE) -> HessianBlocks:
    """Hessian blocks of the squared-loss risk at (W_L, W_out) for frozen features."""
    w_l = np.asarray(w_l, dtype=np.float64)
    w_out = np.asarray(w_out, dtype=np.float64)
    v_l = features.v[-1]
    m, k_l = w_l.shape
    n_o = w_out.shape[0]
    if v_l.shape[0] != k_l:
        raise ShapeError(f"W_L has {k_l} columns, V_L has {v_l.shape[0]} rows")
    if w_out.shape[1] != m:
        raise ShapeError(f"w_out has {w_out.shape[1]} columns, expected M={m}")
    if dataset.n_out != n_o:
        raise ShapeError(f"targets have {dataset.n_out} rows, w_out has {n_o}")
    size = m * k_l + m * n_o
    if size > max_size:
        raise ResourceError(f"Hessian would be {size}x{size}, above the limit {max_size}")
    n = dataset.n
    c = 2.0 / n
    x_l = features.base(m) + w_l @ v_l
    delta = (w_out @ x_l - dataset.y).T
    vd = v_l @ delta
    eye_m = np.eye(m)
    e_mat = np.hstack([linalg.kron(eye_m, vd[:, [j]]) for j in range(n_o)])
    h_ll = c * linalg.kron(w_out.T @ w_out, v_l @ v_l.T)
    h_lo = c * (linalg.kron(w_out.T, v_l @ x_l.T) + e_mat)
    h_oo = c * linalg.kron(np.eye(n_o), x_l @ x_l.T)
    return HessianBlocks(h_ll, h_lo, h_oo, e_mat, delta, v_l, x_l)


@dataclass(frozen=True)
class SchurTest:
    """Necessary condition for a semidefinite Hessian: rank(W_out) = M or V_L Delta = 0."""

    psd_possible: bool
    condition_a: bool
    condition_b: bool
    projector_gap: float
    vl_delta_norm: float


def schur_semidefinite_test(blocks: HessianBlocks, w_out, tol: float = SCHUR_TOL,
                            scale: float | None = None) -> SchurTest:
    """Evaluate both branches of the semidefiniteness necessary condition.

    ``condition_a`` checks ``W^T W (W^T W)^+ = I_M`` with singular values of
    ``W^T W`` below ``tol * sigma_max`` treated as zero. ``condition_b``
    checks ``||V_L Delta||_F <= tol * max(1, scale)``; ``scale`` defaults to
    ``||V_L||_F ||X_L^T W_out^T - Delta||_F``, i.e. ``||V_L||_F ||Y||_F``.
    """
    w_out = np.asarray(w_out, dtype=np.float64)
    m = w_out.shape[1]
    gram = w_out.T @ w_out
    gmax = float(linalg.singular_values(gram)[0])
    if gmax == 0.0:
        proj = np.zeros((m, m))
    else:
        proj = gram @ linalg.pinv(gram, tol=tol * gmax)
    gap = float(np.linalg.norm(proj - np.eye(m)))
    cond_a = gap <= tol * np.sqrt(m) + 1e-12
    vd_norm = float(np.linalg.norm(blocks.v_l @ blocks.delta))
    if scale is None:
        targets = blocks.x_l.T @ w_out.T - blocks.delta
        scale = float(np.linalg.norm(blocks.v_l) * np.linalg.norm(targets))
    cond_b = vd_norm <= tol * max(1.0, scale)
    return SchurTest(bool(cond_a or cond_b), bool(cond_a), bool(cond_b), gap, vd_norm)


@dataclass(frozen=True)
class CurvatureCertificate:
    lambda_min: float
    lambda_max: float
    tol: float
    classification: str
    neg_direction: np.ndarray | None = None
    rayleigh: float | None = None
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)


def classify_spectrum(lambda_min: float, lambda_max: float, tol: float) -> str:
    has_neg = lambda_min < -tol
    has_pos = lambda_max > tol
    if has_neg and has_pos:
        return "indefinite"
    if has_pos:
        return "psd"
    if has_neg:
        return "nsd"
    return "zero"


def curvature_probe(blocks: HessianBlocks | np.ndarray, rtol: float = CURVATURE_RTOL) -> CurvatureCertificate:
    """Spectrum and sign classification of the Hessian, with |lambda| <= rtol*||H||_F as zero."""
    h = blocks.full if isinstance(blocks, HessianBlocks) else np.asarray(blocks, dtype=np.float64)
    eig = linalg.sym_eig(h)
    tol = rtol * float(np.linalg.norm(h))
    lmin, lmax = eig.lambda_min, eig.lambda_max
    cls = classify_spectrum(lmin, lmax, tol)
    direction = None
    rq = None
    if lmin < -tol:
        direction = eig.eigenvectors[:, 0].copy()
        direction /= np.linalg.norm(direction)
        rq = float(direction @ h @ direction)
    return CurvatureCertificate(lmin, lmax, tol, cls, direction, rq, eig.eigenvalues)


def assumption1(features: FeatureMatrices, dataset: Dataset, tol: float = 1e-8) -> tuple[float, int, bool]:
    """(||V_L Y^T||_F, rank(V_L V_L^T), passes) for the last feature and targets."""
    v_l = features.v[-1]
    cross = float(np.linalg.norm(v_l @ dataset.y.T))
    scale = float(np.linalg.norm(v_l) * np.linalg.norm(dataset.y))
    gram_rank = linalg.rank(v_l @ v_l.T)
    ok = cross > tol * max(scale, np.finfo(float).tiny) and gram_rank == v_l.shape[0]
    return cross, gram_rank, bool(ok)


@dataclass(frozen=True)
class ScanReport:
    """Summary of a random-point curvature scan."""

    n_points: int
    n_non_nsd: int
    min_lambda_max: float
    n_s_points: int
    n_s_indefinite: int
    classifications: tuple[str, ...]
    schur_consistent: bool

    @property
    def all_non_nsd(self) -> bool:
        return self.n_non_nsd == self.n_points

    @property
    def all_s_indefinite(self) -> bool:
        return self.n_s_indefinite == self.n_s_points


def _probe_point(w_l, w_out, feats, dataset):
    blocks = assemble_hessian(w_l, w_out, feats, dataset)
    cert = curvature_probe(blocks)
    schur = schur_semidefinite_test(blocks, w_out)
    consistent = cert.classification != "psd" or schur.psd_possible
    return cert, consistent


def no_nsd_scan(phi: FeatureWeights, dataset: Dataset, n_points: int, seed: int,
                n_s_points: int = 0, m: int | None = None, scale: float = 1.0) -> ScanReport:
    """Probe random (W_L, W_out) and S-points (W_out = 0) for non-NSD curvature.

    Requires the last feature to satisfy the data assumption (cross term
    nonzero, full-rank Gram). ``m`` is only needed when phi has no blocks.
    """
    feats = compute_features(phi, dataset.x)
    _, _, ok = assumption1(feats, dataset)
    if not ok:
        raise PreconditionError("data assumption fails: V_L Y^T is zero or V_L V_L^T is rank deficient")
    m = phi.m if phi.m is not None else m
    if m is None:
        raise ShapeError("m is required when phi has no blocks")
    k_l = feats.v[-1].shape[0]
    n_o = dataset.n_out
    gen = rng_mod.generator(seed, "probe")
    classes = []
    lam_max = []
    consistent = True
    non_nsd = 0
    for _ in range(n_points):
        w_l = gen.normal(size=(m, k_l)) * scale / np.sqrt(k_l)
        w_out = gen.normal(size=(n_o, m)) * scale / np.sqrt(m)
        cert, ok_s = _probe_point(w_l, w_out, feats, dataset)
        consistent &= ok_s
        classes.append(cert.classification)
        lam_max.append(cert.lambda_max)
        non_nsd += cert.lambda_max > cert.tol
    s_indef = 0
    for _ in range(n_s_points):
        w_l = gen.normal(size=(m, k_l)) * scale / np.sqrt(k_l)
        cert, ok_s = _probe_point(w_l, np.zeros((n_o, m)), feats, dataset)
        consistent &= ok_s
        classes.append(cert.classification)
        lam_max.append(cert.lambda_max)
        s_indef += cert.classification == "indefinite"
    return ScanReport(n_points, int(non_nsd), float(min(lam_max)) if lam_max else float("nan"),
                      n_s_points, int(s_indef), tuple(classes), bool(consistent))
