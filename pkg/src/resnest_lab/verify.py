"""Assumption checks, property experiments and structured reports.

Each ``run_*`` function returns a :class:`VerificationReport` holding one
or more named :class:`Check` entries. Reports serialize to JSON with a
fixed key order, so identical inputs give byte-identical output.
"""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from . import rng as rng_mod
from .backprop import grad_pphi
from .backprop import gradient as analytic_gradient
from .data import DataSpec, generate
from .errors import DivergenceError, PreconditionError
from .hessian import assemble_hessian, assumption1, no_nsd_scan
from .models import (
    AResNEstParams,
    BlockFn,
    DenseNEstConfig,
    DenseNEstParams,
    FeatureWeights,
    ResNEstConfig,
    ResNEstParams,
    compute_features,
    densenest_forward,
    flatten,
    init_params,
    resnest_forward,
    unflatten,
)
from .optimize import (
    TrainResult,
    TrainSchedule,
    best_linear_predictor,
    classify_critical_point,
    compute_epsilon,
    find_critical_point,
    prefix_ls_risks,
    s_point_critical,
    solve_pa_closed_form,
    train,
)
from .risk import LOSSES, Dataset, risk_aresnest, risk_densenest, risk_resnest

REPORT_VERSION = 1
STATUSES = ("pass", "fail", "skip")
THREADS_ENV = "RESNEST_LAB_THREADS"

EXCESS_RISK_RTOL = 1e-6
COUNTEREXAMPLE_EPS = 1e-3
EPSILON_FLOOR = -1e-10
EMBED_GAP_TOL = 1e-10
FD_STEP = 1e-5
GRAD_RTOL = 1e-6
HESSIAN_FD_STEP = 1e-4
HESSIAN_RTOL = 1e-5
STRICT_DROP_RTOL = 1e-6

DEFAULT_SCHEDULE = TrainSchedule(optimizer="sgd_nesterov", lr=0.02, momentum=0.95,
                                 max_iters=60_000, grad_tol=1e-8, trace_every=1000)


# -- reports ---------------------------------------------------------------

def _clean_metric(value) -> float | int:
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    v = float(value)
    if not np.isfinite(v):
        raise ValueError(f"metric value {value!r} is not finite")
    return v


@dataclass
class Check:
    name: str
    status: str
    metrics: dict = field(default_factory=dict)
    details: str = ""

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"status must be one of {STATUSES}, got {self.status!r}")
        self.metrics = {str(k): _clean_metric(v) for k, v in self.metrics.items()}

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "metrics": dict(self.metrics),
                "details": self.details}


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0

    def add(self, check: Check) -> None:
        if any(c.name == check.name for c in self.checks):
            raise ValueError(f"duplicate check name {check.name!r}")
        self.checks.append(check)

    def extend(self, other: "VerificationReport") -> None:
        for c in other.checks:
            self.add(c)

    def get(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def all_pass(self) -> bool:
        return all(c.status != "fail" for c in self.checks)

    def to_dict(self) -> dict:
        return {"version": REPORT_VERSION, "seed": int(self.seed), "config": self.config,
                "checks": [c.to_dict() for c in self.checks]}


def emit_report(report: VerificationReport, fmt: str = "json") -> str:
    """Serialize a report as JSON (round-trips through :func:`parse_report`) or markdown."""
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt == "markdown":
        lines = [f"# Verification report (seed {report.seed})", "",
                 "| check | status | key metrics | details |", "|---|---|---|---|"]
        for c in report.checks:
            metrics = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                                for k, v in list(c.metrics.items())[:6])
            details = c.details.replace("|", "/").replace("\n", " ")
            lines.append(f"| {c.name} | {c.status} | {metrics} | {details} |")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report(text: str) -> VerificationReport:
    obj = json.loads(text)
    checks = [Check(c["name"], c["status"], c.get("metrics", {}), c.get("details", ""))
              for c in obj.get("checks", [])]
    return VerificationReport(checks, obj.get("config", {}), obj.get("seed", 0))


def worker_count() -> int:
    """Worker cap from ``RESNEST_LAB_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _pmap(fn, items: list, workers: int | None = None) -> list:
    """Ordered map, fanned out over processes when more than one worker is allowed."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


# -- assumptions -----------------------------------------------------------

@dataclass(frozen=True)
class AssumptionReport:
    a1_cross_term_norm: float
    a1_gram_rank: int
    k_l: int
    a1_ok: bool
    a2_loss_ok: bool
    a3_ok: bool
    a4_rank: int
    a4_target: int
    a4_ok: bool
    bottleneck_ok: bool

    @property
    def all_pass(self) -> bool:
        return self.a1_ok and self.a2_loss_ok and self.a3_ok and self.a4_ok and self.bottleneck_ok


def feature_stack_rank(phi: FeatureWeights) -> tuple[int, int]:
    """(rank([W_0 ... W_{L-1}]), sum_{i<L} K_i)."""
    if phi.l == 0:
        return 0, 0
    stack = np.hstack(phi.w)
    return linalg.rank(stack), stack.shape[1]


def check_assumptions(params, dataset: Dataset, loss: str = "squared") -> AssumptionReport:
    """Evaluate the data, loss, width and unique-recovery assumptions for ``params``.

    ``params`` may be :class:`ResNEstParams` or :class:`FeatureWeights`
    (then M is read from W_0, so phi needs at least one block).
    """
    phi = params.phi if isinstance(params, ResNEstParams) else params
    m = params.m if isinstance(params, ResNEstParams) else phi.m
    feats = compute_features(phi, dataset.x)
    cross, gram_rank, a1 = assumption1(feats, dataset)
    a4_rank, a4_target = feature_stack_rank(phi)
    return AssumptionReport(
        a1_cross_term_norm=cross,
        a1_gram_rank=gram_rank,
        k_l=feats.v[-1].shape[0],
        a1_ok=a1,
        a2_loss_ok=loss in LOSSES,
        a3_ok=m >= dataset.n_out,
        a4_rank=a4_rank,
        a4_target=a4_target,
        a4_ok=a4_rank == a4_target,
        bottleneck_ok=m >= a4_target,
    )


def sample_feature_weights(config: ResNEstConfig, seed: int, *index: int, orthonormal: bool = True,
                           block_scale: float = 4.0) -> FeatureWeights:
    """Random phi for ``config``.

    With ``orthonormal`` the matrices W_0..W_{L-1} take disjoint orthonormal
    column blocks of one random orthogonal basis when ``M >= sum K_i``, and
    independent orthonormal-column blocks otherwise. Block input weights are
    scaled by ``block_scale`` so the features are clearly nonlinear, which
    keeps the prediction-weight problem well conditioned.
    """
    gen = rng_mod.generator(seed, "phi", *index)
    m = config.m
    dims = config.feature_dims[:-1]
    ws = []
    if orthonormal and sum(dims) <= m:
        q, _ = np.linalg.qr(gen.standard_normal((m, sum(dims))))
        pos = 0
        for d in dims:
            ws.append(q[:, pos:pos + d].copy())
            pos += d
    elif orthonormal and max(dims, default=0) <= m:
        for d in dims:
            q, _ = np.linalg.qr(gen.standard_normal((m, d)))
            ws.append(q)
    else:
        ws = [gen.uniform(-1, 1, (m, d)) * np.sqrt(3.0 / d) for d in dims]
    blocks = []
    for k, h in zip(config.k, config.hidden):
        a = gen.uniform(-1, 1, (h, m)) * block_scale * np.sqrt(3.0 / m)
        u = gen.uniform(-1, 1, (k, h)) * np.sqrt(3.0 / h)
        blocks.append(BlockFn(a, u, config.activation))
    return FeatureWeights(tuple(ws), tuple(blocks))


def sample_prediction_weights(config: ResNEstConfig, seed: int, *index: int) -> tuple[np.ndarray, np.ndarray]:
    gen = rng_mod.generator(seed, "init", *index)
    k_l = config.feature_dims[-1]
    w_l = gen.uniform(-1, 1, (config.m, k_l)) * np.sqrt(3.0 / k_l)
    w_out = gen.uniform(-1, 1, (config.n_out, config.m)) * np.sqrt(3.0 / config.m)
    return w_l, w_out


def default_regression(seed: int, n: int = 64, n_in: int = 4, n_out: int = 2,
                       noise: float = 0.1) -> Dataset:
    return generate(DataSpec("nonlinear_regression", n, (n_in, n_out), noise, seed=seed))


def _train_with_backoff(problem, params, dataset, schedule, seed=0, attempts=3):
    """Train, halving lr and doubling the budget after divergence or non-convergence.

    Returns ``(result, lr_used)`` for the last attempt.
    """
    sch = schedule
    res = None
    for k in range(attempts):
        try:
            res = train(problem, params, dataset, "squared", sch, seed)
        except DivergenceError:
            res = None
        if res is not None and res.converged:
            return res, sch.lr
        if k + 1 < attempts:
            sch = TrainSchedule(**{**sch.__dict__, "lr": sch.lr / 2, "max_iters": sch.max_iters * 2})
    if res is None:
        res = train(problem, params, dataset, "squared", sch, seed)
    return res, sch.lr


def _sample_valid_phi(config, dataset, seed, j, need_a4: bool, retries: int = 10):
    for attempt in range(retries):
        phi = sample_feature_weights(config, seed, j, attempt)
        rep = check_assumptions(phi, dataset)
        ok = rep.a1_ok and rep.a3_ok and (rep.a4_ok or not need_a4)
        if ok:
            return phi, rep, attempt
    return None, rep, retries


# -- excess-risk experiments ------------------------------------------------

def _theorem1_phi(args) -> dict:
    config, dataset, seed, j, n_inits, schedule, counterexample = args
    phi, rep, attempts = _sample_valid_phi(config, dataset, seed, j, need_a4=not counterexample)
    if phi is None:
        return {"j": j, "skipped": True, "reason": "assumptions failed after retries"}
    feats = compute_features(phi, dataset.x)
    _, a_star = solve_pa_closed_form(feats, dataset)
    runs = []
    for i in range(n_inits):
        w_l, w_out = sample_prediction_weights(config, seed, j, i)
        res, lr = _train_with_backoff("P_phi", ResNEstParams.from_phi(phi, w_l, w_out), dataset, schedule)
        p = res.final_params
        runs.append({"converged": res.converged, "grad_norm": res.grad_norm, "iters": res.iterations,
                     "eps": compute_epsilon(p.w_l, p.w_out, phi, dataset), "lr": lr})
        if counterexample and res.converged and runs[-1]["eps"] > COUNTEREXAMPLE_EPS:
            break
    return {"j": j, "skipped": False, "a_star": a_star, "runs": runs, "a4_rank": rep.a4_rank}


def run_theorem1(config: ResNEstConfig, dataset: Dataset, n_phi: int, n_inits: int, seed: int,
                 counterexample: bool = False, schedule: TrainSchedule | None = None,
                 workers: int | None = None) -> VerificationReport:
    """Train the prediction weights from many starts and measure the excess risk.

    Normal mode needs the bottleneck condition and passes iff every run
    converges with ``eps <= 1e-6 (1 + A*)``. Counterexample mode searches
    up to ``n_phi`` seeds for a converged run with ``eps > 1e-3`` and passes
    iff one is found.
    """
    schedule = schedule or DEFAULT_SCHEDULE
    bottleneck = config.m >= sum(config.feature_dims[:-1])
    report = VerificationReport(seed=seed)
    name = "counterexample" if counterexample else "theorem1"
    if not counterexample and not bottleneck:
        raise PreconditionError("bottleneck condition M >= sum_{i<L} K_i fails for this config")
    if counterexample:
        found = None
        results = []
        for j in range(n_phi):
            r = _theorem1_phi((config, dataset, seed, j, n_inits, schedule, True))
            results.append(r)
            if r["skipped"]:
                continue
            hit = [x for x in r["runs"] if x["converged"] and x["eps"] > COUNTEREXAMPLE_EPS]
            if hit:
                found = (j, max(x["eps"] for x in hit))
                break
        eps_all = [x["eps"] for r in results if not r["skipped"] for x in r["runs"] if x["converged"]]
        metrics = {"seeds_searched": len(results), "seed_budget": n_phi, "found": found is not None,
                   "max_eps_converged": max(eps_all) if eps_all else 0.0,
                   "bottleneck_ok": bottleneck}
        if found is not None:
            metrics.update({"found_phi_index": found[0], "found_eps": found[1]})
            details = f"converged run with eps={found[1]:.4g} > {COUNTEREXAMPLE_EPS:g} at phi index {found[0]}"
        else:
            details = f"no converged run with eps > {COUNTEREXAMPLE_EPS:g} within {n_phi} seeds"
        report.add(Check(name, "pass" if found is not None else "fail", metrics, details))
        return report

    items = [(config, dataset, seed, j, n_inits, schedule, False) for j in range(n_phi)]
    results = _pmap(_theorem1_phi, items, workers)
    used = [r for r in results if not r["skipped"]]
    if not used:
        report.add(Check(name, "skip", {"n_phi": n_phi}, "no sampled phi satisfied the assumptions"))
        return report
    n_runs = sum(len(r["runs"]) for r in used)
    n_conv = sum(x["converged"] for r in used for x in r["runs"])
    rel = [x["eps"] / (1.0 + r["a_star"]) for r in used for x in r["runs"] if x["converged"]]
    eps = [x["eps"] for r in used for x in r["runs"]]
    max_rel = max(rel) if rel else float("inf")
    ok = n_conv == n_runs and max_rel <= EXCESS_RISK_RTOL and min(eps) >= EPSILON_FLOOR
    metrics = {
        "n_phi_used": len(used), "n_phi_skipped": len(results) - len(used), "n_runs": n_runs,
        "n_converged": n_conv, "max_eps": max(eps), "min_eps": min(eps),
        "max_rel_eps": max_rel if rel else 0.0, "max_grad_norm": max(x["grad_norm"] for r in used for x in r["runs"]),
        "max_iters": max(x["iters"] for r in used for x in r["runs"]),
        "min_a_star": min(r["a_star"] for r in used), "tolerance": EXCESS_RISK_RTOL,
    }
    details = (f"{n_conv}/{n_runs} runs converged; max eps/(1+A*) = {max_rel:.3g}"
               if rel else "no run converged")
    report.add(Check(name, "pass" if ok else "fail", metrics, details))
    return report


# -- corollaries -----------------------------------------------------------

def _trained_risks(phi, config, dataset, seed, tag, n_inits, schedule):
    risks, conv = [], []
    for i in range(n_inits):
        w_l, w_out = sample_prediction_weights(config, seed, tag, i)
        res, _ = _train_with_backoff("P_phi", ResNEstParams.from_phi(phi, w_l, w_out), dataset, schedule)
        risks.append(res.final_risk)
        conv.append(res.converged)
    return risks, conv


def run_corollary_monotone(config: ResNEstConfig, l_beta: int, dataset: Dataset, seed: int,
                           n_inits: int = 10, schedule: TrainSchedule | None = None) -> VerificationReport:
    """Deeper prefix never loses: converged risks with L blocks vs an ``l_beta``-block prefix."""
    if not 1 <= l_beta < config.l:
        raise PreconditionError(f"need 1 <= l_beta < L = {config.l}, got l_beta = {l_beta}")
    schedule = schedule or DEFAULT_SCHEDULE
    phi = None
    for attempt in range(10):
        cand = sample_feature_weights(config, seed, 0, attempt)
        ra = check_assumptions(cand, dataset)
        rb = check_assumptions(cand.prefix(l_beta), dataset)
        if ra.a1_ok and ra.a4_ok and rb.a1_ok and rb.a4_ok:
            phi = cand
            break
    report = VerificationReport(seed=seed)
    if phi is None:
        report.add(Check("corollary1", "skip", {}, "no sampled phi satisfied the assumptions"))
        return report
    cfg_b = config.prefix(l_beta)
    risks_a, conv_a = _trained_risks(phi, config, dataset, seed, 1, n_inits, schedule)
    risks_b, conv_b = _trained_risks(phi.prefix(l_beta), cfg_b, dataset, seed, 2, n_inits, schedule)
    ra = [r for r, c in zip(risks_a, conv_a) if c]
    rb = [r for r, c in zip(risks_b, conv_b) if c]
    prefix = prefix_ls_risks(compute_features(phi, dataset.x), dataset)
    scale = float(np.mean(np.sum(dataset.y ** 2, axis=0)))
    tol = EXCESS_RISK_RTOL * (1.0 + scale)
    ok = bool(ra and rb and max(ra) <= min(rb) + tol)
    metrics = {"l_alpha": config.l, "l_beta": l_beta, "converged_alpha": len(ra), "converged_beta": len(rb),
               "max_risk_alpha": max(ra) if ra else 0.0, "min_risk_beta": min(rb) if rb else 0.0,
               "tolerance": tol}
    for i, r in enumerate(prefix):
        metrics[f"prefix_ls_risk_{i}"] = r
    report.add(Check("corollary1", "pass" if ok else "fail", metrics,
                     f"max over {len(ra)} L={config.l} risks vs min over {len(rb)} L={l_beta} risks"))
    return report


def prefix_monotone_battery(n_instances: int, seed: int) -> VerificationReport:
    """Prefix least-squares risks are non-increasing on random instances."""
    worst = -np.inf
    bad = 0
    for j in range(n_instances):
        gen = rng_mod.generator(seed, "probe", j)
        l = int(gen.integers(1, 4))
        k = tuple(int(v) for v in gen.integers(1, 5, size=l))
        hidden = tuple(int(v) for v in gen.integers(2, 7, size=l))
        cfg = ResNEstConfig(int(gen.integers(1, 5)), int(gen.integers(4, 13)), int(gen.integers(1, 4)), l, k, hidden)
        phi = sample_feature_weights(cfg, seed, 10_000 + j, orthonormal=bool(gen.integers(0, 2)))
        ds = default_regression(seed * 1000 + j, n=int(gen.integers(8, 40)), n_in=cfg.n_in, n_out=cfg.n_out)
        risks = prefix_ls_risks(compute_features(phi, ds.x), ds)
        inc = max(b - a for a, b in zip(risks, risks[1:]))
        worst = max(worst, inc)
        bad += inc > 1e-10 * (1.0 + risks[0])
    report = VerificationReport(seed=seed)
    report.add(Check("prefix_ls_monotone", "pass" if bad == 0 else "fail",
                     {"n_instances": n_instances, "violations": bad, "max_increase": float(worst)},
                     "least-squares risk over features v_0..v_i is non-increasing in i"))
    return report


@dataclass(frozen=True)
class UnpredictabilityReport:
    risks: tuple[float, ...]
    strict_drop: tuple[bool, ...]
    non_increasing: bool


def check_linear_unpredictability(features, dataset: Dataset, rtol: float = STRICT_DROP_RTOL) -> UnpredictabilityReport:
    """Prefix least-squares risks and which blocks strictly improve them.

    ``strict_drop[i-1]`` flags a relative drop above ``rtol`` from prefix
    ``i-1`` to ``i``, meaning ``v_i`` is not a linear function of earlier
    features on this data.
    """
    risks = prefix_ls_risks(features, dataset)
    drops = tuple(bool(a - b > rtol * max(abs(a), 1e-300)) for a, b in zip(risks, risks[1:]))
    mono = all(b <= a + 1e-10 * (1.0 + abs(risks[0])) for a, b in zip(risks, risks[1:]))
    return UnpredictabilityReport(tuple(float(r) for r in risks), drops, bool(mono))


def _polish_schedule(schedule: TrainSchedule) -> TrainSchedule:
    return TrainSchedule(**{**schedule.__dict__, "max_iters": max(schedule.max_iters, 100_000)})


def train_resnest_full(config: ResNEstConfig, dataset: Dataset, seed: int, full_iters: int = 3000,
                       full_lr: float = 0.01, polish: TrainSchedule | None = None):
    """Train every ResNEst parameter, then finish the prediction weights with phi frozen.

    The second phase drives the gradient over (W_L, W_out) to ``grad_tol``
    so the final point is a critical point of the prediction-weight problem
    for the learned phi.
    """
    start = ResNEstParams.from_phi(sample_feature_weights(config, seed, 0),
                                   *sample_prediction_weights(config, seed, 0))
    full = TrainSchedule("sgd_nesterov", full_lr, 0.9, max_iters=full_iters, trace_every=max(1, full_iters // 10))
    res_full, _ = _train_with_backoff("P_full", start, dataset, full)
    sched = _polish_schedule(polish or DEFAULT_SCHEDULE)
    res, _ = _train_with_backoff("P_phi", res_full.final_params, dataset, sched)
    return res_full, _refit_output_layer(res, dataset, sched.grad_tol)


def _refit_output_layer(res, dataset: Dataset, grad_tol: float):
    """Exact least-squares step on W_out, kept only if it does not raise the risk.

    Descent stalls along the near-flat directions of a realizable problem;
    one block-coordinate step removes that residual without touching phi or W_L.
    """
    p = res.final_params
    _, feats = resnest_forward(p, dataset.x)
    cand = p.with_prediction(p.w_l, dataset.y @ linalg.pinv(feats.x_res[-1]))
    risk = risk_resnest(cand, dataset)
    if not risk <= res.final_risk:
        return res
    g = grad_pphi(cand.w_l, cand.w_out, compute_features(cand.phi, dataset.x), dataset)
    gn = float(np.sqrt(sum(np.sum(a * a) for a in g)))
    return TrainResult(cand, risk, gn, res.trace, res.converged or gn <= grad_tol, res.iterations)


def run_corollary_linear(config: ResNEstConfig, dataset: Dataset, seed: int, label: str = "corollary2",
                         expect_strict: bool | None = None, strict_rel: float = 0.1,
                         full_iters: int = 3000) -> VerificationReport:
    """A trained ResNEst is no worse than the best linear predictor.

    With ``expect_strict`` the check also demands a relative improvement of
    at least ``strict_rel``; otherwise it reports the margin.
    """
    _, lin = best_linear_predictor(dataset, "squared")
    res_full, res = train_resnest_full(config, dataset, seed, full_iters)
    phi = res.final_params.phi
    feats = compute_features(phi, dataset.x)
    _, a_star = solve_pa_closed_form(feats, dataset)
    improvement = (lin - res.final_risk) / lin if lin > 1e-12 else 0.0
    ok = res.final_risk <= lin + 1e-8
    if expect_strict:
        ok = ok and improvement >= strict_rel
    metrics = {"risk": res.final_risk, "linear_risk": lin, "a_star": a_star, "rel_improvement": improvement,
               "grad_norm_phi": res.grad_norm, "converged": res.converged, "risk_after_full": res_full.final_risk,
               "strict": improvement > STRICT_DROP_RTOL}
    report = VerificationReport(seed=seed)
    report.add(Check(label, "pass" if ok else "fail", metrics,
                     f"risk {res.final_risk:.6g} vs linear {lin:.6g} (relative improvement {improvement:.3g})"))
    return report


def densenest_features(params: DenseNEstParams, x: np.ndarray) -> np.ndarray:
    _, feats = densenest_forward(params, x)
    return feats.x_res[-1]


def run_proposition4(config: DenseNEstConfig, dataset: Dataset, seed: int, label: str = "proposition4",
                     expect_strict: bool | None = None, strict_rel: float = 0.1) -> VerificationReport:
    """Least-squares output layer of a random DenseNEst vs the best linear predictor."""
    params = init_params(config, seed, 2.0)
    x_l = densenest_features(params, dataset.x)
    w = dataset.y @ linalg.pinv(x_l)
    risk = risk_densenest(DenseNEstParams(params.blocks, w), dataset)
    _, lin = best_linear_predictor(dataset, "squared")
    improvement = (lin - risk) / lin if lin > 1e-12 else 0.0
    ok = risk <= lin + 1e-8
    if expect_strict:
        ok = ok and improvement >= strict_rel
    report = VerificationReport(seed=seed)
    report.add(Check(label, "pass" if ok else "fail",
                     {"risk": risk, "linear_risk": lin, "rel_improvement": improvement, "m_l": x_l.shape[0]},
                     f"DenseNEst least-squares risk {risk:.6g} vs linear {lin:.6g}"))
    return report


# -- embedding -------------------------------------------------------------

def embed_densenest(dense: DenseNEstParams) -> ResNEstParams:
    """Wide ResNEst with the same outputs as ``dense``.

    ``M = M_L``; ``W_i`` is the identity block placing feature i in rows
    ``M_{i-1}..M_i``; block i reads the first ``M_{i-1}`` coordinates, so its
    input weights are zero-padded to width M. ``W_out`` is unchanged.
    """
    dims = dense.dims
    m = int(sum(dims))
    edges = np.cumsum((0,) + dims)
    eye = np.eye(m)
    w = tuple(eye[:, edges[i]:edges[i + 1]].copy() for i in range(len(dims)))
    blocks = []
    for i, q in enumerate(dense.blocks, start=1):
        a = np.zeros((q.hidden, m))
        a[:, :edges[i]] = q.weight_in
        blocks.append(BlockFn(a, q.weight_out.copy(), q.activation))
    return ResNEstParams(w, dense.w_out.copy(), tuple(blocks))


def random_densenest(seed: int, index: int) -> DenseNEstParams:
    gen = rng_mod.generator(seed, "probe", index)
    l = int(gen.integers(0, 4))
    cfg = DenseNEstConfig(int(gen.integers(1, 5)), int(gen.integers(1, 4)),
                          tuple(int(v) for v in gen.integers(1, 5, size=l)),
                          tuple(int(v) for v in gen.integers(2, 7, size=l)))
    return init_params(cfg, seed * 1000 + index, 1.5)


def run_proposition5(n_models: int, seed: int, n_inputs: int = 100) -> VerificationReport:
    """Embedded ResNEsts reproduce DenseNEst outputs and satisfy unique recovery."""
    worst = 0.0
    rank_ok = True
    dims_ok = True
    for j in range(n_models):
        dense = random_densenest(seed, j)
        res = embed_densenest(dense)
        x = rng_mod.generator(seed, "inputs", j).standard_normal((dense.dims[0], n_inputs))
        y_d, _ = densenest_forward(dense, x)
        y_r, _ = resnest_forward(res, x)
        worst = max(worst, float(np.max(np.abs(y_d - y_r))))
        r, target = feature_stack_rank(res.phi)
        rank_ok &= r == target
        dims_ok &= res.m == dense.widths[-1] and res.feature_dims == dense.dims
    ok = worst <= EMBED_GAP_TOL and rank_ok and dims_ok
    report = VerificationReport(seed=seed)
    report.add(Check("proposition5", "pass" if ok else "fail",
                     {"n_models": n_models, "n_inputs": n_inputs, "max_abs_gap": worst,
                      "rank_ok": rank_ok, "dims_ok": dims_ok, "tolerance": EMBED_GAP_TOL},
                     f"max |y_resnest - y_densenest| = {worst:.3g} over {n_models} models"))
    return report


# -- curvature -------------------------------------------------------------

def _curvature_instance(config: ResNEstConfig, dataset: Dataset, seed: int):
    phi, rep, _ = _sample_valid_phi(config, dataset, seed, 0, need_a4=True)
    if phi is None:
        raise PreconditionError("could not sample phi satisfying the assumptions")
    return phi


def run_proposition1(config: ResNEstConfig, dataset: Dataset, seed: int, n_s_points: int = 20,
                     n_random: int = 100) -> VerificationReport:
    """S-points are indefinite and no random point has a negative semidefinite Hessian."""
    phi = _curvature_instance(config, dataset, seed)
    scan = no_nsd_scan(phi, dataset, n_random, seed, n_s_points=n_s_points)
    report = VerificationReport(seed=seed)
    report.add(Check("proposition1_s_points", "pass" if scan.all_s_indefinite else "fail",
                     {"n_s_points": scan.n_s_points, "n_indefinite": scan.n_s_indefinite},
                     "Hessian at W_out = 0 has eigenvalues of both signs"))
    report.add(Check("proposition1_no_nsd", "pass" if scan.all_non_nsd and scan.schur_consistent else "fail",
                     {"n_points": scan.n_points, "n_non_nsd": scan.n_non_nsd,
                      "min_lambda_max": scan.min_lambda_max, "schur_consistent": scan.schur_consistent},
                     "every sampled Hessian has a strictly positive eigenvalue"))
    return report


def run_proposition2(n_instances: int, seed: int) -> VerificationReport:
    """Random (phi, W_L, W_out) never beat the A-ResNEst lower bound."""
    eps_min = np.inf
    for j in range(n_instances):
        gen = rng_mod.generator(seed, "probe", j)
        l = int(gen.integers(0, 4))
        m = int(gen.integers(2, 9))
        cfg = ResNEstConfig(int(gen.integers(1, 5)), m, int(gen.integers(1, 4)), l,
                            tuple(int(v) for v in gen.integers(1, 5, size=l)),
                            tuple(int(v) for v in gen.integers(2, 7, size=l)))
        ds = default_regression(seed * 1000 + j, n=int(gen.integers(4, 30)), n_in=cfg.n_in, n_out=cfg.n_out)
        p = init_params(cfg, seed * 1000 + j, float(gen.uniform(0.5, 3.0)))
        eps_min = min(eps_min, compute_epsilon(p.w_l, p.w_out, p.phi, ds))
    report = VerificationReport(seed=seed)
    report.add(Check("proposition2", "pass" if eps_min >= EPSILON_FLOOR else "fail",
                     {"n_instances": n_instances, "min_eps": float(eps_min), "floor": EPSILON_FLOOR},
                     "excess risk over the A-ResNEst optimum is non-negative"))
    return report


def run_saddle_probe(config: ResNEstConfig, dataset: Dataset, n_runs: int, seed: int,
                     schedule: TrainSchedule | None = None, n_s_points: int = 20) -> VerificationReport:
    """Every numerically found saddle has rank-deficient W_out and negative curvature.

    Critical points come from three sources: descent runs (expected to be
    global), the exact S-point critical point ``(W_L*, 0)`` and
    Levenberg-Marquardt searches started from rank-deficient W_out.
    """
    schedule = schedule or DEFAULT_SCHEDULE
    phi = _curvature_instance(config, dataset, seed)
    points = []
    for i in range(n_runs):
        w_l, w_out = sample_prediction_weights(config, seed, 1, i)
        res, _ = _train_with_backoff("P_phi", ResNEstParams.from_phi(phi, w_l, w_out), dataset, schedule)
        points.append(("descent", res.final_params.w_l, res.final_params.w_out))
    points.append(("s_point", s_point_critical(phi, dataset), np.zeros((config.n_out, config.m))))
    for i in range(n_runs):
        gen = rng_mod.generator(seed, "probe", 2, i)
        w_l = gen.standard_normal((config.m, config.feature_dims[-1]))
        rank = int(gen.integers(0, min(config.m, config.n_out)))
        w_out = (gen.standard_normal((config.n_out, rank)) @ gen.standard_normal((rank, config.m))
                 * (0.3 / np.sqrt(config.m)))
        a, b, _, _ = find_critical_point(w_l, w_out, phi, dataset, max_iters=300)
        points.append(("lm_search", a, b))
    counts = {"descent": 0, "s_point": 0, "lm_search": 0}
    n_global = n_saddle = n_local = n_noncrit = violations = 0
    min_neg_margin = np.inf
    for src, w_l, w_out in points:
        rep = classify_critical_point(w_l, w_out, phi, dataset)
        if not rep.critical:
            n_noncrit += 1
            continue
        counts[src] += 1
        if rep.verdict == "global":
            n_global += 1
            violations += rep.epsilon > EXCESS_RISK_RTOL * (1 + rep.a_star)
        elif rep.verdict == "saddle":
            n_saddle += 1
            cert = rep.certificate
            violations += rep.full_rank or not cert.lambda_min < -cert.tol
            min_neg_margin = min(min_neg_margin, -cert.lambda_min / max(cert.tol, 1e-300))
        elif rep.verdict == "local_min_candidate":
            n_local += 1
        if rep.schur is not None and rep.certificate.classification == "psd" and not rep.schur.psd_possible:
            violations += 1
    scan = no_nsd_scan(phi, dataset, 0, seed, n_s_points=n_s_points)
    ok = violations == 0 and scan.all_s_indefinite
    metrics = {"n_points": len(points), "n_critical": len(points) - n_noncrit, "n_saddles": n_saddle,
               "n_global": n_global, "n_local_min_candidates": n_local, "n_not_critical": n_noncrit,
               "violations": violations, "s_points_indefinite": scan.n_s_indefinite,
               "n_s_points": scan.n_s_points, "critical_from_descent": counts["descent"],
               "critical_from_s_point": counts["s_point"], "critical_from_search": counts["lm_search"]}
    if n_saddle:
        metrics["min_neg_curvature_over_tol"] = float(min_neg_margin)
        details = f"{n_saddle} saddles found, all with rank-deficient W_out and negative curvature" \
            if violations == 0 else f"{violations} violations among {n_saddle} saddles"
    else:
        details = "vacuous pass, 0 saddles observed; S-point battery is the curvature evidence"
    report = VerificationReport(seed=seed)
    report.add(Check("theorem2", "pass" if ok else "fail", metrics, details))
    return report


# -- derivative checks -----------------------------------------------------

def _fd_gradient(f, x0: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    out = np.zeros_like(x0)
    for k in range(x0.size):
        e = np.zeros_like(x0)
        e[k] = h
        out[k] = (f(x0 + e) - f(x0 - e)) / (2 * h)
    return out


def _risk_fn(template, dataset: Dataset, loss: str):
    if isinstance(template, ResNEstParams):
        return lambda v: risk_resnest(unflatten(template, v), dataset, loss)
    if isinstance(template, DenseNEstParams):
        return lambda v: risk_densenest(unflatten(template, v), dataset, loss)
    if isinstance(template, AResNEstParams):
        def f(v):
            p = unflatten(template, v)
            return risk_aresnest(p.h, compute_features(p.phi, dataset.x), dataset, loss)
        return f
    raise TypeError(type(template).__name__)


def gradient_rel_error(params, dataset: Dataset, loss: str) -> float:
    """Max over parameter blocks of ||g_analytic - g_fd|| / max(||g_fd||, 1e-12)."""
    grad = analytic_gradient(params, dataset, loss).arrays()
    fd = _fd_gradient(_risk_fn(params, dataset, loss), flatten(params))
    worst = 0.0
    pos = 0
    for g in grad:
        block = fd[pos:pos + g.size]
        pos += g.size
        denom = max(float(np.linalg.norm(block)), float(np.linalg.norm(g)), 1e-12)
        worst = max(worst, float(np.linalg.norm(g.ravel() - block)) / denom)
    return worst


def _gradient_instance(family: str, seed: int, j: int, loss: str):
    gen = rng_mod.generator(seed, "probe", 3, j)
    n_in, n_out, n = 2 + int(gen.integers(0, 2)), 2 + int(gen.integers(0, 2)), 6 + int(gen.integers(0, 5))
    x = gen.standard_normal((n_in, n))
    y = gen.dirichlet(np.ones(n_out), n).T if loss == "cross_entropy" else gen.standard_normal((n_out, n))
    ds = Dataset(x, y)
    l = int(gen.integers(1, 3))
    k = tuple(int(v) for v in gen.integers(1, 4, size=l))
    hidden = tuple(int(v) for v in gen.integers(2, 4, size=l))
    if family == "densenest":
        params = init_params(DenseNEstConfig(n_in, n_out, k, hidden), seed * 100 + j, 1.5)
    else:
        cfg = ResNEstConfig(n_in, 4, n_out, l, k, hidden)
        params = init_params(cfg, seed * 100 + j, 1.5, family)
    return params, ds


def run_gradient_check(n_instances: int, seed: int) -> VerificationReport:
    """Analytic gradients vs central differences for every family and loss."""
    report = VerificationReport(seed=seed)
    for family in ("resnest", "aresnest", "densenest"):
        worst = 0.0
        for loss in LOSSES:
            for j in range(n_instances):
                params, ds = _gradient_instance(family, seed, j, loss)
                worst = max(worst, gradient_rel_error(params, ds, loss))
        report.add(Check(f"gradients_{family}", "pass" if worst <= GRAD_RTOL else "fail",
                         {"n_instances": n_instances * len(LOSSES), "max_rel_error": worst, "tolerance": GRAD_RTOL},
                         f"tanh blocks, squared and cross-entropy, step {FD_STEP:g}"))
    return report


def fd_hessian(params: ResNEstParams, dataset: Dataset, h: float = HESSIAN_FD_STEP) -> np.ndarray:
    """Central-difference Hessian of the squared-loss risk over (W_L, W_out), row-major."""
    m, k_l = params.w_l.shape
    z0 = np.concatenate([params.w_l.ravel(), params.w_out.ravel()])
    nz = z0.size

    def f(z):
        return risk_resnest(params.with_prediction(z[:m * k_l].reshape(m, k_l),
                                                   z[m * k_l:].reshape(params.w_out.shape)), dataset)

    out = np.zeros((nz, nz))
    for i in range(nz):
        for j in range(i, nz):
            ei = np.zeros(nz)
            ej = np.zeros(nz)
            ei[i] = h
            ej[j] = h
            val = (f(z0 + ei + ej) - f(z0 + ei - ej) - f(z0 - ei + ej) + f(z0 - ei - ej)) / (4 * h * h)
            out[i, j] = out[j, i] = val
    return out


def run_hessian_check(seed: int, n_instances: int = 1) -> VerificationReport:
    """Closed-form Hessian vs finite differences on an M=6, K_L=4, N_o=2, L=2, N=10 instance."""
    worst = 0.0
    for j in range(n_instances):
        cfg = ResNEstConfig(3, 6, 2, 2, (3, 4), (5, 5))
        params = init_params(cfg, seed * 100 + j, 1.0)
        ds = default_regression(seed * 100 + j, n=10, n_in=3, n_out=2)
        blocks = assemble_hessian(params.w_l, params.w_out, compute_features(params.phi, ds.x), ds)
        fd = fd_hessian(params, ds)
        worst = max(worst, float(np.max(np.abs(blocks.full - fd)) / np.max(np.abs(fd))))
    report = VerificationReport(seed=seed)
    report.add(Check("hessian", "pass" if worst <= HESSIAN_RTOL else "fail",
                     {"n_instances": n_instances, "max_rel_error": worst, "tolerance": HESSIAN_RTOL},
                     "relative to the largest finite-difference entry"))
    return report


# -- named suite -----------------------------------------------------------

@dataclass(frozen=True)
class SuiteSettings:
    """Sizes for the named checks; defaults are the desk-scale acceptance settings."""

    n: int = 64
    gradient_instances: int = 20
    hessian_instances: int = 1
    s_points: int = 20
    random_points: int = 100
    epsilon_instances: int = 100
    theorem1_phi: int = 20
    theorem1_inits: int = 20
    counterexample_budget: int = 50
    counterexample_inits: int = 4
    corollary1_inits: int = 10
    prefix_instances: int = 100
    embed_models: int = 10
    embed_inputs: int = 100
    saddle_runs: int = 10
    max_iters: int = 60_000
    lr: float = 0.02
    momentum: float = 0.95


def _schedule(s: SuiteSettings) -> TrainSchedule:
    return TrainSchedule("sgd_nesterov", s.lr, s.momentum, max_iters=s.max_iters, trace_every=1000)


WIDE = ResNEstConfig(4, 16, 2, 2, (4, 4), (8, 8))
NARROW = ResNEstConfig(4, 4, 2, 2, (4, 4), (8, 8))
DEEP = ResNEstConfig(4, 16, 2, 3, (4, 4, 4), (8, 8, 8))
TEACHER = ResNEstConfig(4, 8, 2, 2, (3, 3), (6, 6))
DENSE = DenseNEstConfig(4, 2, (6, 6), (8, 8))


def _linear_data(seed: int, n: int) -> Dataset:
    return generate(DataSpec("linear", n, (4, 2), 0.0, seed=seed))


def _teacher_data(seed: int, n: int) -> Dataset:
    return generate(DataSpec("teacher_resnest", n, (4, 2), 0.0, teacher_config=TEACHER,
                             teacher_scale=2.0, seed=seed))


def _suite_unpredictability(s: SuiteSettings, seed: int) -> VerificationReport:
    ds = default_regression(seed, s.n)
    phi, _, _ = _sample_valid_phi(WIDE, ds, seed, 0, need_a4=True)
    rep = check_linear_unpredictability(compute_features(phi, ds.x), ds)
    metrics = {f"prefix_ls_risk_{i}": r for i, r in enumerate(rep.risks)}
    metrics.update({f"strict_drop_{i + 1}": d for i, d in enumerate(rep.strict_drop)})
    out = VerificationReport(seed=seed)
    out.add(Check("linear_unpredictability", "pass" if rep.non_increasing else "fail", metrics,
                  "prefix risks non-increasing; strict drops are informational"))
    return out


def _suite_corollary2(s: SuiteSettings, seed: int) -> VerificationReport:
    out = run_corollary_linear(WIDE, _linear_data(seed, s.n), seed, "corollary2_linear", expect_strict=False)
    out.extend(run_corollary_linear(WIDE, _teacher_data(seed, s.n), seed, "corollary2_nonlinear",
                                    expect_strict=True))
    return out


def _suite_proposition4(s: SuiteSettings, seed: int) -> VerificationReport:
    out = run_proposition4(DENSE, _linear_data(seed, s.n), seed, "proposition4_linear", expect_strict=False)
    out.extend(run_proposition4(DENSE, _teacher_data(seed, s.n), seed, "proposition4_nonlinear",
                                expect_strict=True))
    return out


SUITE = {
    "gradients": lambda s, seed: run_gradient_check(s.gradient_instances, seed),
    "hessian": lambda s, seed: run_hessian_check(seed, s.hessian_instances),
    "proposition1": lambda s, seed: run_proposition1(WIDE, default_regression(seed, s.n), seed,
                                                     s.s_points, s.random_points),
    "proposition2": lambda s, seed: run_proposition2(s.epsilon_instances, seed),
    "theorem1": lambda s, seed: run_theorem1(WIDE, default_regression(seed, s.n), s.theorem1_phi,
                                             s.theorem1_inits, seed, schedule=_schedule(s)),
    "counterexample": lambda s, seed: run_theorem1(NARROW, default_regression(seed, s.n),
                                                   s.counterexample_budget, s.counterexample_inits, seed,
                                                   counterexample=True, schedule=_schedule(s)),
    "corollary1": lambda s, seed: _merge(run_corollary_monotone(DEEP, 1, default_regression(seed, s.n), seed,
                                                                s.corollary1_inits, _schedule(s)),
                                         prefix_monotone_battery(s.prefix_instances, seed)),
    "corollary2": _suite_corollary2,
    "proposition4": _suite_proposition4,
    "proposition5": lambda s, seed: run_proposition5(s.embed_models, seed, s.embed_inputs),
    "theorem2": lambda s, seed: run_saddle_probe(WIDE, default_regression(seed, s.n), s.saddle_runs, seed,
                                                 _schedule(s), s.s_points),
    "linear_unpredictability": _suite_unpredictability,
}


def _merge(a: VerificationReport, b: VerificationReport) -> VerificationReport:
    a.extend(b)
    return a


def run_suite(names: list[str] | None = None, settings: SuiteSettings | None = None,
              seed: int = 0) -> VerificationReport:
    """Run the named check groups (all by default) in the given order."""
    names = list(SUITE) if names is None else names
    unknown = [n for n in names if n not in SUITE]
    if unknown:
        raise KeyError(f"unknown checks {unknown}; valid names: {', '.join(SUITE)}")
    settings = settings or SuiteSettings()
    report = VerificationReport(seed=seed)
    for name in names:
        report.extend(SUITE[name](settings, seed))
    return report
