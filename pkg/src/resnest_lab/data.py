"""Synthetic datasets and CSV serialization.

Inputs are always i.i.d. standard normal. Targets depend on ``kind``:

``linear``                ``A_true x + noise``
``nonlinear_regression``  ``A sin(B x) + noise``
``teacher_resnest``       output of a random ResNEst + noise
``teacher_densenest``     output of a random DenseNEst + noise
``blobs``                 one-hot label of the nearest of ``N_o`` random centers,
                          computed on a noisy copy of the input so classes overlap

Noise touches targets only (for ``blobs`` it perturbs the labelling, not
``x``), so every noise-free teacher fits its own data exactly.
"""

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import InputError, ParseError
from .models import DenseNEstConfig, ResNEstConfig, densenest_forward, init_params, resnest_forward
from .risk import Dataset
from .serialize import atomic_write_text

# keeps teacher weights independent of a student initialized with the same seed
TEACHER_SEED_OFFSET = 2**40

KINDS = ("teacher_resnest", "teacher_densenest", "linear", "nonlinear_regression", "blobs")


@dataclass(frozen=True)
class DataSpec:
    kind: str
    n: int
    dims: tuple[int, int]
    noise_sigma: float = 0.0
    teacher_config: ResNEstConfig | DenseNEstConfig | None = None
    teacher_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown data kind {self.kind!r}; expected one of {KINDS}")
        if int(self.n) < 1:
            raise InputError("n must be >= 1")
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 2 or min(dims) < 1:
            raise InputError(f"dims must be (N_in, N_o) with both >= 1, got {self.dims}")
        if not self.noise_sigma >= 0:
            raise InputError("noise_sigma must be >= 0")
        if self.seed < 0:
            raise InputError("seed must be >= 0")
        object.__setattr__(self, "dims", dims)
        if self.kind.startswith("teacher"):
            cfg = self.teacher_config
            want = ResNEstConfig if self.kind == "teacher_resnest" else DenseNEstConfig
            if not isinstance(cfg, want):
                raise InputError(f"{self.kind} needs a {want.__name__} teacher_config")
            if (cfg.n_in, cfg.n_out) != dims:
                raise InputError(f"teacher dims ({cfg.n_in}, {cfg.n_out}) differ from dims {dims}")

    def teacher_params(self):
        """The teacher network used for ``teacher_*`` kinds."""
        if not self.kind.startswith("teacher"):
            return None
        return init_params(self.teacher_config, TEACHER_SEED_OFFSET + self.seed, self.teacher_scale)


def generate(spec: DataSpec) -> Dataset:
    """Deterministic dataset for ``spec``."""
    n_in, n_o = spec.dims
    x = rng_mod.generator(spec.seed, "inputs").standard_normal((n_in, spec.n))
    tgen = rng_mod.generator(spec.seed, "teacher")
    noise = rng_mod.generator(spec.seed, "noise")
    if spec.kind == "linear":
        y = tgen.standard_normal((n_o, n_in)) / np.sqrt(n_in) @ x
    elif spec.kind == "nonlinear_regression":
        b = tgen.standard_normal((n_o, n_in)) * (1.5 / np.sqrt(n_in))
        a = tgen.standard_normal((n_o, n_o)) / np.sqrt(n_o) + np.eye(n_o)
        y = a @ np.sin(b @ x)
    elif spec.kind == "teacher_resnest":
        y, _ = resnest_forward(spec.teacher_params(), x)
    elif spec.kind == "teacher_densenest":
        y, _ = densenest_forward(spec.teacher_params(), x)
    else:
        centers = tgen.standard_normal((n_in, n_o)) * 1.5
        xn = x + spec.noise_sigma * noise.standard_normal(x.shape)
        d2 = ((xn[:, None, :] - centers[:, :, None]) ** 2).sum(axis=0)
        labels = np.argmin(d2, axis=0)
        y = np.zeros((n_o, spec.n))
        y[labels, np.arange(spec.n)] = 1.0
        return Dataset(x, y)
    if spec.noise_sigma > 0:
        y = y + spec.noise_sigma * noise.standard_normal(y.shape)
    return Dataset(x, y)


# -- CSV -------------------------------------------------------------------

def _header(n_in: int, n_o: int) -> list[str]:
    return [f"x{i}" for i in range(1, n_in + 1)] + [f"y{i}" for i in range(1, n_o + 1)]


def dataset_to_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(_header(dataset.n_in, dataset.n_out)) + "\n")
    rows = np.vstack([dataset.x, dataset.y]).T
    for row in rows:
        buf.write(",".join(f"{v:.17g}" for v in row) + "\n")
    return buf.getvalue()


def write_csv(dataset: Dataset, path) -> None:
    """Write one sample per line with 17 significant digits; atomic replace."""
    atomic_write_text(path, dataset_to_csv(dataset))


def _parse_header(cells: list[str], path) -> tuple[int, int]:
    n_x = 0
    while n_x < len(cells) and cells[n_x] == f"x{n_x + 1}":
        n_x += 1
    n_y = 0
    while n_x + n_y < len(cells) and cells[n_x + n_y] == f"y{n_y + 1}":
        n_y += 1
    if n_x == 0 or n_y == 0 or n_x + n_y != len(cells):
        raise ParseError("header must read x1,...,xN,y1,...,yM", line=1, path=path)
    return n_x, n_y


def parse_csv(text: str, path=None) -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("file is empty", line=1, path=path) from None
    n_x, n_y = _parse_header([c.strip() for c in header], path)
    width = n_x + n_y
    rows = []
    for lineno, cells in enumerate(reader, start=2):
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != width:
            raise ParseError(f"expected {width} fields, found {len(cells)}", line=lineno, path=path)
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"bad number: {exc}", line=lineno, path=path) from None
        if not all(np.isfinite(values)):
            raise ParseError("non-finite value", line=lineno, path=path)
        rows.append(values)
    if not rows:
        raise ParseError("no data rows", line=2, path=path)
    arr = np.array(rows, dtype=np.float64).T
    return Dataset(arr[:n_x], arr[n_x:])


def read_csv(path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return parse_csv(text, os.fspath(path))
