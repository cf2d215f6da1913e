"""Config-driven command line: ``resnest-lab <command> --config run.json``.

Every command reads one JSON config, validates it before doing any work and
writes JSON artifacts with a fixed key order, so rerunning a config
reproduces its outputs byte for byte. Relative paths inside the config are
resolved against the config file's directory.

Exit codes: 0 success, 1 a check failed, 2 usage or config error,
3 training diverged, 4 file IO error.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import rng as rng_mod
from .data import DataSpec, generate, read_csv, write_csv
from .errors import DivergenceError, InputError, ParseError, ResNEstLabError, ResourceError, ShapeError
from .hessian import assemble_hessian, assumption1, curvature_probe, schur_semidefinite_test
from .models import (
    AResNEstParams,
    DenseNEstConfig,
    DenseNEstParams,
    ResNEstConfig,
    ResNEstParams,
    compute_features,
    densenest_forward,
    init_params,
    resnest_forward,
)
from .optimize import TrainSchedule, best_linear_predictor, train
from .risk import Dataset, risk_resnest
from .serialize import atomic_write_text, dump_json, params_from_dict, params_to_dict, read_params
from .verify import (
    EMBED_GAP_TOL,
    SUITE,
    Check,
    SuiteSettings,
    VerificationReport,
    embed_densenest,
    emit_report,
    feature_stack_rank,
    run_suite,
    worker_count,
)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

OUTPUT_VERSION = 1
PROBLEM_ALIASES = {"P": "P_full", "PD": "PD_full"}


class UsageError(Exception):
    pass


# -- config schema ---------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArchitectureConfig(_Strict):
    """ResNEst dims use ``m`` and ``k`` (K_1..K_L); DenseNEst dims use ``d`` (D_1..D_L)."""

    n_in: int = Field(4, ge=1)
    n_out: int = Field(2, ge=1)
    m: int | None = Field(None, ge=1)
    k: list[int] = []
    d: list[int] = []
    hidden: list[int] = []
    activation: Literal["tanh", "relu"] = "tanh"

    def resnest(self) -> ResNEstConfig:
        if self.m is None:
            raise ValueError("ResNEst architecture needs m")
        if self.d:
            raise ValueError("ResNEst architecture takes k, not d")
        return ResNEstConfig(self.n_in, self.m, self.n_out, len(self.k), tuple(self.k),
                             tuple(self.hidden), self.activation)

    def densenest(self) -> DenseNEstConfig:
        if self.k or self.m is not None:
            raise ValueError("DenseNEst architecture takes d and no m or k")
        return DenseNEstConfig(self.n_in, self.n_out, tuple(self.d), tuple(self.hidden), self.activation)


class ScheduleConfig(_Strict):
    optimizer: Literal["gd", "sgd_nesterov"] = "sgd_nesterov"
    lr: float = Field(0.02, gt=0)
    momentum: float = Field(0.95, ge=0, lt=1)
    batch_size: int | None = Field(None, ge=1)
    max_iters: int = Field(60_000, ge=0)
    grad_tol: float = Field(1e-8, gt=0)
    lr_decay_factor: float | None = Field(None, gt=0)
    lr_decay_at: list[int] = []
    trace_every: int = Field(1000, ge=1)
    monotone_check: bool = False

    def build(self) -> TrainSchedule:
        return TrainSchedule(**{**self.model_dump(), "lr_decay_at": tuple(self.lr_decay_at)})


class DataConfig(_Strict):
    """Either ``csv`` or a generator spec; ``seed`` defaults to the run seed."""

    csv: str | None = None
    kind: Literal["teacher_resnest", "teacher_densenest", "linear", "nonlinear_regression", "blobs"] = \
        "nonlinear_regression"
    n: int = Field(64, ge=1)
    dims: tuple[int, int] | None = None
    noise_sigma: float = Field(0.1, ge=0)
    teacher: ArchitectureConfig | None = None
    teacher_scale: float = Field(1.0, ge=0)
    seed: int | None = Field(None, ge=0)


class VerifyConfig(_Strict):
    checks: list[str] | None = None
    n: int = Field(64, ge=4)
    gradient_instances: int = Field(20, ge=1)
    hessian_instances: int = Field(1, ge=1)
    s_points: int = Field(20, ge=1)
    random_points: int = Field(100, ge=1)
    epsilon_instances: int = Field(100, ge=1)
    theorem1_phi: int = Field(20, ge=1)
    theorem1_inits: int = Field(20, ge=1)
    counterexample_budget: int = Field(50, ge=1)
    counterexample_inits: int = Field(4, ge=1)
    corollary1_inits: int = Field(10, ge=1)
    prefix_instances: int = Field(100, ge=1)
    embed_models: int = Field(10, ge=1)
    embed_inputs: int = Field(100, ge=1)
    saddle_runs: int = Field(10, ge=1)
    max_iters: int = Field(60_000, ge=1)
    lr: float = Field(0.02, gt=0)
    momentum: float = Field(0.95, ge=0, lt=1)

    @field_validator("checks")
    @classmethod
    def _known(cls, v):
        if v is not None:
            bad = [c for c in v if c not in SUITE]
            if bad:
                raise ValueError(f"unknown checks {bad}; valid names: {', '.join(SUITE)}")
        return v

    def settings(self) -> SuiteSettings:
        return SuiteSettings(**self.model_dump(exclude={"checks"}))


class HessianConfig(_Strict):
    point_source: Literal["file", "s_point", "random"] = "random"
    point_file: str | None = None
    scale: float = Field(1.0, gt=0)


class EmbedConfig(_Strict):
    dense_params_file: str | None = None
    n_inputs: int = Field(100, ge=1)


class RunConfig(_Strict):
    model: Literal["resnest", "aresnest", "densenest"] = "resnest"
    architecture: ArchitectureConfig = ArchitectureConfig(m=16, k=[4, 4], hidden=[8, 8])
    problem: Literal["P", "P_full", "P_phi", "PA", "PD", "PD_full", "PD_phi"] = "P_phi"
    loss: Literal["squared", "cross_entropy"] = "squared"
    schedule: ScheduleConfig = ScheduleConfig()
    data: DataConfig = DataConfig()
    seed: int = Field(0, ge=0)
    output_dir: str = "out"
    init_scale: float = Field(1.0, ge=0)
    params_file: str | None = None
    verify: VerifyConfig = VerifyConfig()
    hessian: HessianConfig = HessianConfig()
    embed: EmbedConfig = EmbedConfig()

    @model_validator(mode="after")
    def _consistent(self):
        self.model_config_obj()
        return self

    @property
    def problem_name(self) -> str:
        return PROBLEM_ALIASES.get(self.problem, self.problem)

    def model_config_obj(self):
        arch = self.architecture
        return arch.densenest() if self.model == "densenest" else arch.resnest()


def _format_validation(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid config:\n" + "\n".join(lines)


def load_config(path, seed: int | None = None) -> tuple[RunConfig, Path]:
    """Parse and validate a config file; ``seed`` overrides the file's seed."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    if seed is not None:
        raw["seed"] = seed
    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as exc:
        raise UsageError(f"{path}: {_format_validation(exc)}") from None
    return cfg, path.parent


# -- helpers ---------------------------------------------------------------

class _Context:
    def __init__(self, cfg: RunConfig, base: Path, out: str | None):
        self.cfg = cfg
        self.base = base
        self.out = Path(out) if out is not None else self.resolve(cfg.output_dir)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def out_path(self, name: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out / name

    def echo(self) -> dict:
        return self.cfg.model_dump(mode="json")

    def write_json(self, name: str, obj) -> Path:
        path = self.out_path(name)
        atomic_write_text(path, dump_json(obj))
        return path


def _data_spec(cfg: RunConfig) -> DataSpec:
    d = cfg.data
    dims = d.dims or (cfg.architecture.n_in, cfg.architecture.n_out)
    teacher = None
    if d.kind.startswith("teacher"):
        if d.teacher is None:
            raise UsageError(f"data.kind {d.kind} needs data.teacher")
        teacher = d.teacher.resnest() if d.kind == "teacher_resnest" else d.teacher.densenest()
    return DataSpec(d.kind, d.n, dims, d.noise_sigma, teacher, d.teacher_scale,
                    cfg.seed if d.seed is None else d.seed)


def _load_dataset(ctx: _Context) -> Dataset:
    if ctx.cfg.data.csv is not None:
        return read_csv(ctx.resolve(ctx.cfg.data.csv))
    return generate(_data_spec(ctx.cfg))


def _spec_echo(spec: DataSpec) -> dict:
    return {"kind": spec.kind, "n": spec.n, "dims": list(spec.dims), "noise_sigma": spec.noise_sigma,
            "teacher_config": None if spec.teacher_config is None else
            {k: list(v) if isinstance(v, tuple) else v for k, v in spec.teacher_config.__dict__.items()},
            "teacher_scale": spec.teacher_scale, "seed": spec.seed}


def _load_params_file(path: Path):
    """Params JSON, or a train result whose ``params`` field holds them."""
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from None
    if isinstance(obj, dict) and "params" in obj and "model" not in obj:
        obj = obj["params"]
    try:
        return params_from_dict(obj)
    except ParseError as exc:
        raise ParseError(str(exc), path=str(path)) from None


def _initial_params(ctx: _Context):
    cfg = ctx.cfg
    if cfg.params_file is not None:
        params = _load_params_file(ctx.resolve(cfg.params_file))
    else:
        params = init_params(cfg.model_config_obj(), cfg.seed, cfg.init_scale, cfg.model)
    want = {"resnest": ResNEstParams, "aresnest": AResNEstParams, "densenest": DenseNEstParams}[cfg.model]
    if not isinstance(params, want):
        raise UsageError(f"params file holds {type(params).__name__}, model is {cfg.model}")
    return params


def _check_problem(cfg: RunConfig) -> None:
    allowed = {"resnest": ("P_phi", "P_full"), "aresnest": ("PA",), "densenest": ("PD_phi", "PD_full")}
    if cfg.problem_name not in allowed[cfg.model]:
        raise UsageError(f"problem {cfg.problem} does not apply to model {cfg.model}; "
                         f"use one of {allowed[cfg.model]}")


# -- commands --------------------------------------------------------------

def cmd_gen_data(ctx: _Context) -> int:
    """Write ``data.csv`` plus ``data.json`` echoing the generator spec."""
    if ctx.cfg.data.csv is not None:
        raise UsageError("gen-data needs a generator spec, not data.csv")
    spec = _data_spec(ctx.cfg)
    ds = generate(spec)
    csv_path = ctx.out_path("data.csv")
    write_csv(ds, csv_path)
    ctx.write_json("data.json", {"version": OUTPUT_VERSION, "seed": ctx.cfg.seed, "spec": _spec_echo(spec),
                                 "rows": ds.n, "csv": csv_path.name})
    print(f"wrote {csv_path} ({ds.n} rows)")
    return EXIT_OK


def cmd_train(ctx: _Context) -> int:
    """Train the configured problem and write ``train_result.json``."""
    cfg = ctx.cfg
    _check_problem(cfg)
    ds = _load_dataset(ctx)
    params = _initial_params(ctx)
    schedule = cfg.schedule.build()
    try:
        res = train(cfg.problem_name, params, ds, cfg.loss, schedule, cfg.seed)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    _, lin = best_linear_predictor(ds, cfg.loss)
    out = {"version": OUTPUT_VERSION, "seed": cfg.seed, "config": ctx.echo(), "problem": cfg.problem_name,
           "loss": cfg.loss, "final_risk": res.final_risk, "grad_norm": res.grad_norm,
           "converged": res.converged, "iterations": res.iterations, "linear_baseline_risk": lin,
           "trace": [[int(i), float(r)] for i, r in res.trace], "params": params_to_dict(res.final_params)}
    path = ctx.write_json("train_result.json", out)
    print(f"final risk {res.final_risk:.6g} (linear {lin:.6g}), grad norm {res.grad_norm:.3g}, "
          f"converged={res.converged}; wrote {path}")
    return EXIT_OK


def cmd_verify(ctx: _Context, checks: list[str] | None) -> int:
    """Run named checks; write ``report.json`` and ``report.md``; exit 1 on any failure."""
    cfg = ctx.cfg
    names = checks if checks is not None else cfg.verify.checks
    if names is not None:
        bad = [n for n in names if n not in SUITE]
        if bad:
            raise UsageError(f"unknown checks {bad}; valid names: {', '.join(SUITE)}")
    report = run_suite(names, cfg.verify.settings(), cfg.seed)
    report.config = ctx.echo()
    atomic_write_text(ctx.out_path("report.json"), emit_report(report, "json"))
    atomic_write_text(ctx.out_path("report.md"), emit_report(report, "markdown"))
    for c in report.checks:
        print(f"{c.status.upper():4s} {c.name}: {c.details}")
    return EXIT_OK if report.all_pass else EXIT_CHECK_FAILED


def _hessian_point(ctx: _Context, source: str, ds: Dataset) -> ResNEstParams:
    cfg = ctx.cfg
    if source == "file":
        path = cfg.hessian.point_file or cfg.params_file
        if path is None:
            raise UsageError("point source 'file' needs hessian.point_file or params_file")
        params = _load_params_file(ctx.resolve(path))
        if not isinstance(params, ResNEstParams):
            raise UsageError(f"Hessian probes need ResNEst params, got {type(params).__name__}")
        return params
    if cfg.model != "resnest":
        raise UsageError("Hessian probes apply to model resnest only")
    base = _initial_params(ctx)
    arch = base.config() if cfg.params_file is not None else cfg.architecture.resnest()
    gen = rng_mod.generator(cfg.seed, "probe")
    k_l = base.w_l.shape[1]
    w_l = gen.normal(size=(arch.m, k_l)) * cfg.hessian.scale / np.sqrt(k_l)
    if source == "s_point":
        w_out = np.zeros((arch.n_out, arch.m))
    else:
        w_out = gen.normal(size=(arch.n_out, arch.m)) * cfg.hessian.scale / np.sqrt(arch.m)
    return base.with_prediction(w_l, w_out)


def cmd_hessian(ctx: _Context, source: str | None) -> int:
    """Assemble the prediction-weight Hessian at a point; write ``hessian.json``."""
    cfg = ctx.cfg
    source = source or cfg.hessian.point_source
    ds = _load_dataset(ctx)
    params = _hessian_point(ctx, source, ds)
    ds.validate_for("squared")
    feats = compute_features(params.phi, ds.x)
    blocks = assemble_hessian(params.w_l, params.w_out, feats, ds)
    cert = curvature_probe(blocks)
    schur = schur_semidefinite_test(blocks, params.w_out)
    cross, gram_rank, a1 = assumption1(feats, ds)
    out = {"version": OUTPUT_VERSION, "seed": cfg.seed, "config": ctx.echo(), "point_source": source,
           "size": blocks.size, "risk": risk_resnest(params, ds),
           "classification": cert.classification, "lambda_min": cert.lambda_min,
           "lambda_max": cert.lambda_max, "tol": cert.tol,
           "eigenvalues": [float(v) for v in cert.eigenvalues],
           "neg_direction_rayleigh": cert.rayleigh,
           "schur": {"psd_possible": schur.psd_possible, "condition_a_full_rank": schur.condition_a,
                     "condition_b_vl_delta_zero": schur.condition_b, "projector_gap": schur.projector_gap,
                     "vl_delta_norm": schur.vl_delta_norm},
           "assumption1": {"cross_norm": cross, "gram_rank": gram_rank, "ok": a1},
           "point": {"w_l": params.w_l.tolist(), "w_out": params.w_out.tolist()}}
    path = ctx.write_json("hessian.json", out)
    print(f"{cert.classification}: lambda in [{cert.lambda_min:.4g}, {cert.lambda_max:.4g}], "
          f"tol {cert.tol:.3g}; wrote {path}")
    return EXIT_OK


def cmd_embed(ctx: _Context) -> int:
    """Embed a DenseNEst into a wide ResNEst; write params and the output-gap report."""
    cfg = ctx.cfg
    if cfg.embed.dense_params_file is None:
        raise UsageError("embed needs embed.dense_params_file")
    dense = read_params(ctx.resolve(cfg.embed.dense_params_file))
    if not isinstance(dense, DenseNEstParams):
        raise UsageError(f"embed needs DenseNEst params, got {type(dense).__name__}")
    res = embed_densenest(dense)
    x = rng_mod.generator(cfg.seed, "inputs").standard_normal((dense.dims[0], cfg.embed.n_inputs))
    y_d, _ = densenest_forward(dense, x)
    y_r, _ = resnest_forward(res, x)
    gap = float(np.max(np.abs(y_d - y_r))) if y_d.size else 0.0
    rank, target = feature_stack_rank(res.phi)
    ok = gap <= EMBED_GAP_TOL and rank == target
    ctx.write_json("embedded_params.json", params_to_dict(res))
    report = VerificationReport(seed=cfg.seed, config=ctx.echo())
    report.add(Check("embedding", "pass" if ok else "fail",
                     {"max_abs_gap": gap, "tolerance": EMBED_GAP_TOL, "n_inputs": cfg.embed.n_inputs,
                      "m": res.m, "m_l": dense.widths[-1], "stack_rank": rank, "stack_rank_target": target},
                     f"M = M_L = {res.m}; feature dims {list(res.feature_dims)}"))
    atomic_write_text(ctx.out_path("embed_report.json"), emit_report(report, "json"))
    print(f"max abs gap {gap:.3g}, M = {res.m}; wrote {ctx.out}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# -- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resnest-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("gen-data", "generate a synthetic dataset"), ("train", "train a model"),
                            ("verify", "run verification checks"), ("hessian", "probe the Hessian at a point"),
                            ("embed", "embed a DenseNEst into a ResNEst")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        if name == "verify":
            p.add_argument("--checks", default=None,
                           help=f"comma-separated check names from: {', '.join(SUITE)}")
        if name == "hessian":
            p.add_argument("--point-source", choices=("file", "s_point", "random"), default=None)
    return parser


def _run(args) -> int:
    if args.seed is not None and args.seed < 0:
        raise UsageError("--seed must be >= 0")
    try:
        worker_count()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    cfg, base = load_config(args.config, args.seed)
    ctx = _Context(cfg, base, args.out)
    if args.command == "gen-data":
        return cmd_gen_data(ctx)
    if args.command == "train":
        return cmd_train(ctx)
    if args.command == "verify":
        checks = None
        if args.checks is not None:
            checks = [c.strip() for c in args.checks.split(",") if c.strip()]
        return cmd_verify(ctx, checks)
    if args.command == "hessian":
        return cmd_hessian(ctx, args.point_source)
    return cmd_embed(ctx)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return _run(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ResourceError, ShapeError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"io error{where}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    except (ResNEstLabError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
