"""Solvers for the ResNEst family of empirical risk problems.

Problems are named by what they train:

``P_phi``    prediction weights (W_L, W_out) of a ResNEst, phi frozen
``P_full``   every ResNEst parameter
``PA``       A-ResNEst heads H_0..H_L, phi frozen
``PD_phi``   DenseNEst output matrix, dense blocks frozen
``PD_full``  every DenseNEst parameter

Full-batch squared-loss ``P_phi`` runs go through the compiled kernel in
:mod:`resnest_lab.kernels`; everything else uses a generic loop over the
parameter arrays.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels, linalg
from . import rng as rng_mod
from .backprop import grad_densenest, grad_full_resnest, grad_pphi
from .errors import DivergenceError, MonotonicityError, ShapeError
from .hessian import (
    CurvatureCertificate,
    SchurTest,
    assemble_hessian,
    curvature_probe,
    schur_semidefinite_test,
)
from .models import (
    AResNEstParams,
    DenseNEstParams,
    FeatureMatrices,
    FeatureWeights,
    ResNEstParams,
    compute_features,
    densenest_forward,
    param_arrays,
    params_from_arrays,
    residual_sum,
    resnest_forward,
)
from .risk import Dataset, loss_grad, mean_loss, softmax

PROBLEMS = ("P_phi", "P_full", "PA", "PD_phi", "PD_full")
OPTIMIZERS = ("gd", "sgd_nesterov")
DIVERGENCE_RISK = 1e12
MONOTONE_SLACK = 1e-12


@dataclass(frozen=True)
class TrainSchedule:
    optimizer: str = "gd"
    lr: float = 0.01
    momentum: float = 0.0
    batch_size: int | None = None
    max_iters: int = 10_000
    grad_tol: float = 1e-8
    lr_decay_factor: float | None = None
    lr_decay_at: tuple[int, ...] = ()
    trace_every: int = 100
    monotone_check: bool = False

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.trace_every < 1:
            raise ValueError("trace_every must be >= 1")
        if self.lr_decay_factor is not None and not self.lr_decay_factor > 0:
            raise ValueError("lr_decay_factor must be positive")
        object.__setattr__(self, "lr_decay_at", tuple(sorted(int(i) for i in self.lr_decay_at)))

    @property
    def mu(self) -> float:
        return self.momentum if self.optimizer == "sgd_nesterov" else 0.0


@dataclass(frozen=True)
class TrainResult:
    final_params: object
    final_risk: float
    grad_norm: float
    trace: tuple[tuple[int, float], ...]
    converged: bool
    iterations: int


# -- problem adapters ------------------------------------------------------

def _slice_features(feats: FeatureMatrices, idx) -> FeatureMatrices:
    if idx is None:
        return feats
    return FeatureMatrices(tuple(v[:, idx] for v in feats.v), tuple(x[:, idx] for x in feats.x_res))


def _targets(dataset: Dataset, idx) -> np.ndarray:
    return dataset.y if idx is None else dataset.y[:, idx]


class _Problem:
    """Trainable arrays of one problem plus its risk/gradient oracle."""

    def __init__(self, problem: str, params, dataset: Dataset, loss: str):
        self.problem = problem
        self.params = params
        self.dataset = dataset
        self.loss = loss
        if problem == "P_phi":
            self._expect(ResNEstParams)
            self.feats = compute_features(params.phi, dataset.x)
        elif problem == "P_full":
            self._expect(ResNEstParams)
        elif problem == "PA":
            self._expect(AResNEstParams)
            self.feats = compute_features(params.phi, dataset.x)
        elif problem == "PD_phi":
            self._expect(DenseNEstParams)
            x = dataset.x
            for block in params.blocks:
                x = np.vstack([x, block(x)])
            self.x_l = x
        elif problem == "PD_full":
            self._expect(DenseNEstParams)
        else:
            raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")

    def _expect(self, cls):
        if not isinstance(self.params, cls):
            raise ShapeError(f"problem {self.problem} needs {cls.__name__}, got {type(self.params).__name__}")

    def initial(self) -> list[np.ndarray]:
        p = self.params
        if self.problem == "P_phi":
            return [p.w_l.copy(), p.w_out.copy()]
        if self.problem == "PA":
            return [h.copy() for h in p.h]
        if self.problem == "PD_phi":
            return [p.w_out.copy()]
        return [a.copy() for a in param_arrays(p)]

    def rebuild(self, arrays: list[np.ndarray]):
        p = self.params
        if self.problem == "P_phi":
            return p.with_prediction(arrays[0], arrays[1])
        if self.problem == "PA":
            return AResNEstParams(tuple(arrays), p.phi)
        if self.problem == "PD_phi":
            return DenseNEstParams(p.blocks, arrays[0])
        return params_from_arrays(p, arrays)

    def risk_grad(self, arrays: list[np.ndarray], idx=None) -> tuple[float, list[np.ndarray]]:
        y = _targets(self.dataset, idx)
        n = y.shape[1]
        if self.problem == "P_phi":
            feats = _slice_features(self.feats, idx)
            w_l, w_out = arrays
            x_l = feats.base(w_l.shape[0]) + w_l @ feats.v[-1]
            y_hat = w_out @ x_l
            g = loss_grad(self.loss, y_hat, y) / n
            return mean_loss(self.loss, y_hat, y), [w_out.T @ g @ feats.v[-1].T, g @ x_l.T]
        if self.problem == "PA":
            feats = _slice_features(self.feats, idx)
            y_hat = residual_sum(tuple(arrays), feats)
            g = loss_grad(self.loss, y_hat, y) / n
            return mean_loss(self.loss, y_hat, y), [g @ v.T for v in feats.v]
        if self.problem == "PD_phi":
            x_l = self.x_l if idx is None else self.x_l[:, idx]
            y_hat = arrays[0] @ x_l
            g = loss_grad(self.loss, y_hat, y) / n
            return mean_loss(self.loss, y_hat, y), [g @ x_l.T]
        params = params_from_arrays(self.params, arrays)
        ds = self.dataset if idx is None else self.dataset.subset(idx)
        if self.problem == "P_full":
            y_hat, _ = resnest_forward(params, ds.x)
            grad = grad_full_resnest(params, ds, self.loss)
        else:
            y_hat, _ = densenest_forward(params, ds.x)
            grad = grad_densenest(params, ds, self.loss)
        return mean_loss(self.loss, y_hat, ds.y), grad.arrays()


def _norm(arrays: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in arrays)))


def _check_monotone(trace: list[tuple[int, float]]) -> None:
    for (i0, r0), (i1, r1) in zip(trace, trace[1:]):
        if r1 > r0 + MONOTONE_SLACK * max(1.0, abs(r0)):
            raise MonotonicityError(
                f"risk increased from {r0:.17g} (iteration {i0}) to {r1:.17g} (iteration {i1}); "
                "lower the learning rate"
            )


def _train_pphi_kernel(params: ResNEstParams, dataset: Dataset, schedule: TrainSchedule) -> TrainResult:
    feats = compute_features(params.phi, dataset.x)
    base = np.ascontiguousarray(feats.base(params.m))
    decay_at = np.asarray(schedule.lr_decay_at if schedule.lr_decay_factor else (), dtype=np.int64)
    factor = float(schedule.lr_decay_factor or 1.0)
    wl, wo, it, gnorm, status, t_it, t_risk = kernels.pphi_train(
        base, np.ascontiguousarray(feats.v[-1]), np.ascontiguousarray(dataset.y),
        np.ascontiguousarray(params.w_l), np.ascontiguousarray(params.w_out),
        float(schedule.lr), float(schedule.mu), int(schedule.max_iters), float(schedule.grad_tol),
        int(schedule.trace_every), decay_at, factor,
    )
    trace = [(int(i), float(r)) for i, r in zip(t_it, t_risk)]
    if status == kernels.STATUS_DIVERGED:
        raise DivergenceError(int(it), float(t_risk[-1]), schedule.lr)
    final = params.with_prediction(wl, wo)
    if schedule.monotone_check and schedule.mu == 0.0:
        _check_monotone(trace)
    risk = float(trace[-1][1])
    if not np.isfinite(gnorm):
        gwl, gwo = grad_pphi(wl, wo, feats, dataset)
        gnorm = _norm([gwl, gwo])
    return TrainResult(final, risk, float(gnorm), tuple(trace),
                       bool(status == kernels.STATUS_CONVERGED), int(it))


def train(problem: str, params_init, dataset: Dataset, loss: str = "squared",
          schedule: TrainSchedule | None = None, seed: int = 0) -> TrainResult:
    """Minimize the risk of ``problem`` from ``params_init``.

    Stops when the full-batch gradient norm at the current iterate drops to
    ``grad_tol`` or after ``max_iters`` updates. Raises
    :class:`DivergenceError` when the risk exceeds 1e12 or stops being finite.
    """
    schedule = schedule or TrainSchedule()
    if problem not in PROBLEMS:
        raise ValueError(f"unknown problem {problem!r}; expected one of {PROBLEMS}")
    dataset.validate_for(loss)
    full_batch = schedule.batch_size is None or schedule.batch_size >= dataset.n
    if problem == "P_phi" and loss == "squared" and full_batch:
        if not isinstance(params_init, ResNEstParams):
            raise ShapeError("problem P_phi needs ResNEstParams")
        return _train_pphi_kernel(params_init, dataset, schedule)
    return _train_generic(_Problem(problem, params_init, dataset, loss), schedule, seed, full_batch)


def _train_generic(prob: _Problem, schedule: TrainSchedule, seed: int, full_batch: bool) -> TrainResult:
    x = prob.initial()
    vel = [np.zeros_like(a) for a in x]
    mu = schedule.mu
    lr = schedule.lr
    n = prob.dataset.n
    bs = n if full_batch else schedule.batch_size
    decay = list(schedule.lr_decay_at) if schedule.lr_decay_factor else []
    trace: list[tuple[int, float]] = []
    order = None
    epoch = 0
    pos = n
    converged = False
    gnorm = float("inf")
    it = 0
    for it in range(schedule.max_iters + 1):
        while decay and decay[0] <= it:
            lr *= schedule.lr_decay_factor
            decay.pop(0)
        idx = None
        if not full_batch:
            if pos + bs > n:
                order = rng_mod.generator(seed, "shuffle", epoch).permutation(n)
                epoch += 1
                pos = 0
            idx = np.sort(order[pos:pos + bs])
            pos += bs
        look = [a + mu * v for a, v in zip(x, vel)] if mu else x
        risk_l, grad = prob.risk_grad(look, idx)
        if not np.isfinite(risk_l) or risk_l > DIVERGENCE_RISK or not all(np.all(np.isfinite(g)) for g in grad):
            raise DivergenceError(it, float(risk_l), lr)
        traced = it % schedule.trace_every == 0
        last = it == schedule.max_iters
        if full_batch and mu == 0.0:
            risk_x, gn_x = risk_l, _norm(grad)
        elif traced or last or (full_batch and _norm(grad) <= schedule.grad_tol):
            risk_x, gx = prob.risk_grad(x)
            gn_x = _norm(gx)
        else:
            risk_x, gn_x = risk_l, float("inf")
        if traced:
            trace.append((it, float(risk_x)))
        if gn_x <= schedule.grad_tol:
            converged = True
            gnorm = gn_x
            break
        if last:
            gnorm = gn_x
            break
        vel = [mu * v - lr * g for v, g in zip(vel, grad)]
        x = [a + v for a, v in zip(x, vel)]
    risk_final, g_final = prob.risk_grad(x)
    if not trace or trace[-1][0] != it:
        trace.append((it, float(risk_final)))
    if schedule.monotone_check and full_batch and mu == 0.0:
        _check_monotone(trace)
    if not np.isfinite(gnorm):
        gnorm = _norm(g_final)
    return TrainResult(prob.rebuild(x), float(risk_final), float(gnorm), tuple(trace), converged, it)


# -- closed forms and convex baselines -------------------------------------

def _split_rows(h_stacked: np.ndarray, dims) -> tuple[np.ndarray, ...]:
    edges = np.cumsum((0,) + tuple(dims))
    return tuple(h_stacked[:, edges[i]:edges[i + 1]].copy() for i in range(len(dims)))


def solve_pa_closed_form(features: FeatureMatrices, dataset: Dataset) -> tuple[tuple[np.ndarray, ...], float]:
    """Global minimizer of the squared-loss A-ResNEst problem: H = Y pinv([V_0; ...; V_L])."""
    v_all = features.stacked()
    if v_all.shape[1] != dataset.n:
        raise ShapeError(f"features have {v_all.shape[1]} samples, dataset has {dataset.n}")
    h = dataset.y @ linalg.pinv(v_all)
    risk = mean_loss("squared", h @ v_all, dataset.y)
    return _split_rows(h, [v.shape[0] for v in features.v]), risk


def prefix_ls_risks(features: FeatureMatrices, dataset: Dataset) -> list[float]:
    """Least-squares risk using features v_0..v_i, for i = 0..L."""
    out = []
    for i in range(len(features.v)):
        v_i = features.stacked(i)
        h = dataset.y @ linalg.pinv(v_i)
        out.append(mean_loss("squared", h @ v_i, dataset.y))
    return out


def fit_softmax_linear(z: np.ndarray, y: np.ndarray, init: np.ndarray | None = None,
                       grad_tol: float = 1e-9, max_iters: int = 200_000) -> tuple[np.ndarray, float, float]:
    """Minimize mean cross-entropy of ``A z`` by accelerated gradient descent.

    The step is 1/L with ``L = 0.5 sigma_max(z)^2 / N``, a bound on the
    curvature of the softmax risk. Returns ``(A, risk, grad_norm)``.
    """
    n = z.shape[1]
    smax = float(linalg.singular_values(z)[0])
    lipschitz = 0.5 * smax * smax / n
    a = np.zeros((y.shape[0], z.shape[0])) if init is None else np.array(init, dtype=np.float64)
    if lipschitz == 0.0:
        return a, mean_loss("cross_entropy", a @ z, y), 0.0
    step = 1.0 / lipschitz
    prev = a.copy()
    gn = float("inf")
    for k in range(max_iters):
        look = a + (k / (k + 3.0)) * (a - prev)
        g = (softmax(look @ z) - y) @ z.T / n
        prev = a
        a = look - step * g
        if k % 10 == 0:
            ga = (softmax(a @ z) - y) @ z.T / n
            gn = float(np.linalg.norm(ga))
            if gn <= grad_tol:
                break
    ga = (softmax(a @ z) - y) @ z.T / n
    return a, mean_loss("cross_entropy", a @ z, y), float(np.linalg.norm(ga))


def best_linear_predictor(dataset: Dataset, loss: str = "squared") -> tuple[np.ndarray, float]:
    """Best linear map ``A`` of the inputs and its risk."""
    dataset.validate_for(loss)
    if loss == "squared":
        a = dataset.y @ linalg.pinv(dataset.x)
        return a, mean_loss("squared", a @ dataset.x, dataset.y)
    a, risk, _ = fit_softmax_linear(dataset.x, dataset.y)
    return a, risk


def solve_pa(features: FeatureMatrices, dataset: Dataset, loss: str = "squared") -> tuple[tuple[np.ndarray, ...], float]:
    """Global minimum of the A-ResNEst problem for either loss."""
    if loss == "squared":
        return solve_pa_closed_form(features, dataset)
    dataset.validate_for(loss)
    z = features.stacked()
    a, risk, _ = fit_softmax_linear(z, dataset.y)
    return _split_rows(a, [v.shape[0] for v in features.v]), risk


def compute_epsilon(w_l, w_out, phi: FeatureWeights, dataset: Dataset, loss: str = "squared") -> float:
    """Excess risk of (W_L, W_out) over the A-ResNEst lower bound for the same phi."""
    feats = compute_features(phi, dataset.x)
    x_l = feats.base(np.asarray(w_l).shape[0]) + np.asarray(w_l) @ feats.v[-1]
    risk = mean_loss(loss, np.asarray(w_out) @ x_l, dataset.y)
    _, a_star = solve_pa(feats, dataset, loss)
    return float(risk - a_star)


# -- critical points -------------------------------------------------------

@dataclass(frozen=True)
class CriticalPointReport:
    grad_norm: float
    critical: bool
    risk: float
    a_star: float
    epsilon: float
    rank_w_out: int
    full_rank: bool
    verdict: str
    certificate: CurvatureCertificate | None = None
    schur: SchurTest | None = None
    extra: dict = field(default_factory=dict)


RANK_RTOL = 1e-6


def rank_rel(a: np.ndarray, rtol: float = RANK_RTOL) -> int:
    """Rank counting singular values above ``rtol * sigma_max``."""
    s = linalg.singular_values(a)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def classify_critical_point(w_l, w_out, phi: FeatureWeights, dataset: Dataset,
                            grad_tol: float = 1e-8, rank_rtol: float = RANK_RTOL) -> CriticalPointReport:
    """Classify a point of the squared-loss prediction-weight problem.

    Verdicts: ``not_critical`` (gradient above ``grad_tol``), ``global``
    (critical with full-rank W_out), ``saddle`` (indefinite Hessian),
    ``local_min_candidate`` (positive semidefinite Hessian) and
    ``degenerate`` (numerically zero or negative semidefinite Hessian).
    """
    w_l = np.asarray(w_l, dtype=np.float64)
    w_out = np.asarray(w_out, dtype=np.float64)
    feats = compute_features(phi, dataset.x)
    gwl, gwo = grad_pphi(w_l, w_out, feats, dataset)
    gn = _norm([gwl, gwo])
    x_l = feats.base(w_l.shape[0]) + w_l @ feats.v[-1]
    risk = mean_loss("squared", w_out @ x_l, dataset.y)
    _, a_star = solve_pa_closed_form(feats, dataset)
    eps = float(risk - a_star)
    r = rank_rel(w_out, rank_rtol)
    full = r == min(w_out.shape)
    if gn > grad_tol:
        return CriticalPointReport(gn, False, risk, a_star, eps, r, full, "not_critical")
    blocks = assemble_hessian(w_l, w_out, feats, dataset)
    cert = curvature_probe(blocks)
    schur = schur_semidefinite_test(blocks, w_out)
    if full:
        verdict = "global"
    elif cert.classification == "indefinite":
        verdict = "saddle"
    elif cert.classification == "psd":
        verdict = "local_min_candidate"
    else:
        verdict = "degenerate"
    return CriticalPointReport(gn, True, risk, a_star, eps, r, full, verdict, cert, schur)


def s_point_critical(phi: FeatureWeights, dataset: Dataset, m: int | None = None) -> np.ndarray:
    """W_L making (W_L, 0) a critical point, i.e. ``(B + W_L V_L) Y^T = 0``.

    Uses the minimum-norm solution ``W_L = -B Y^T pinv(V_L Y^T)``; the point
    is exactly critical when ``V_L Y^T`` has full column rank N_o.
    """
    feats = compute_features(phi, dataset.x)
    m = phi.m if phi.m is not None else m
    base = feats.base(m)
    c = feats.v[-1] @ dataset.y.T
    return -(base @ dataset.y.T) @ linalg.pinv(c)


def find_critical_point(w_l, w_out, phi: FeatureWeights, dataset: Dataset, max_iters: int = 200,
                        grad_tol: float = 1e-10, damping: float = 1e-3) -> tuple[np.ndarray, np.ndarray, float, int]:
    """Levenberg-Marquardt iteration on the gradient equation of the prediction-weight problem.

    Unlike descent, this converges to critical points of any type, which is
    how saddles are located. Returns ``(w_l, w_out, grad_norm, iterations)``.
    """
    w_l = np.array(w_l, dtype=np.float64)
    w_out = np.array(w_out, dtype=np.float64)
    feats = compute_features(phi, dataset.x)
    m, k_l = w_l.shape
    lam = damping

    def grad_vec(a, b):
        ga, gb = grad_pphi(a, b, feats, dataset)
        return np.concatenate([ga.ravel(), gb.ravel()])

    g = grad_vec(w_l, w_out)
    gn = float(np.linalg.norm(g))
    it = 0
    for it in range(1, max_iters + 1):
        if gn <= grad_tol:
            it -= 1
            break
        h = assemble_hessian(w_l, w_out, feats, dataset).full
        hh = h @ h
        scale = np.trace(hh) / hh.shape[0]
        while True:
            step = -np.linalg.solve(hh + lam * scale * np.eye(hh.shape[0]), h @ g)
            a = w_l + step[: m * k_l].reshape(m, k_l)
            b = w_out + step[m * k_l:].reshape(w_out.shape)
            g_new = grad_vec(a, b)
            gn_new = float(np.linalg.norm(g_new))
            if gn_new < gn or lam > 1e12:
                break
            lam *= 10.0
        if gn_new >= gn:
            break
        w_l, w_out, g, gn = a, b, g_new, gn_new
        lam = max(lam / 10.0, 1e-15)
    return w_l, w_out, gn, it
