"""ResNEst, A-ResNEst and DenseNEst parameter containers and forward passes.

Batches are laid out with samples as columns, so a batch ``x`` is
``N_in x N`` and every feature stack ``V_i`` is ``K_i x N``.

The residual / dense functions are single-hidden-layer MLPs
(:class:`BlockFn`), ``z -> weight_out @ act(weight_in @ z)``, without
biases. This is one admissible choice of block function; callers who want
a bias append a constant-one input coordinate.

A ResNEst with ``L`` blocks stores ``w = (W_0, ..., W_L)``: ``W_0`` is the
input expansion and ``W_i`` maps feature ``v_i`` into the residual space.
The feature-finding weights ``phi`` are ``W_0..W_{L-1}`` with the blocks;
``W_L`` and ``W_out`` (``W_{L+1}``) are the prediction weights.
"""

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from . import rng as rng_mod
from .errors import ShapeError

ACTIVATIONS = ("tanh", "relu")


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    raise ValueError(f"unknown activation {kind!r}")


def activate_grad(z: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation; relu uses 0 at the kink."""
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def _matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class BlockFn:
    """Bias-free MLP block ``z -> weight_out @ act(weight_in @ z)``."""

    weight_in: np.ndarray
    weight_out: np.ndarray
    activation: str = "tanh"
    kind: str = "mlp1"

    def __post_init__(self):
        w_in = _matrix(self.weight_in, "weight_in")
        w_out = _matrix(self.weight_out, "weight_out")
        if w_out.shape[1] != w_in.shape[0]:
            raise ShapeError(
                f"weight_out has {w_out.shape[1]} columns but weight_in has {w_in.shape[0]} rows"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind != "mlp1":
            raise ValueError(f"unknown block kind {self.kind!r}")
        object.__setattr__(self, "weight_in", w_in)
        object.__setattr__(self, "weight_out", w_out)

    @property
    def in_dim(self) -> int:
        return self.weight_in.shape[1]

    @property
    def hidden(self) -> int:
        return self.weight_in.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight_out.shape[0]

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.weight_out @ activate(self.weight_in @ z, self.activation)

    def replace(self, weight_in=None, weight_out=None) -> "BlockFn":
        return BlockFn(
            self.weight_in if weight_in is None else weight_in,
            self.weight_out if weight_out is None else weight_out,
            self.activation,
            self.kind,
        )


def _dims_tuple(values, name: str) -> tuple[int, ...]:
    out = tuple(int(v) for v in values)
    if any(v < 1 for v in out):
        raise ValueError(f"all entries of {name} must be >= 1, got {out}")
    return out


@dataclass(frozen=True)
class ResNEstConfig:
    """Architecture of an L-block ResNEst. ``k`` lists K_1..K_L; K_0 is ``n_in``."""

    n_in: int
    m: int
    n_out: int
    l: int
    k: tuple[int, ...] = ()
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"

    def __post_init__(self):
        for name in ("n_in", "m", "n_out"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if int(self.l) < 0:
            raise ValueError("l must be >= 0")
        k = _dims_tuple(self.k, "k")
        hidden = _dims_tuple(self.hidden, "hidden")
        if len(k) != self.l or len(hidden) != self.l:
            raise ValueError(
                f"k and hidden must each have l={self.l} entries, got {len(k)} and {len(hidden)}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "hidden", hidden)

    @property
    def feature_dims(self) -> tuple[int, ...]:
        return (self.n_in,) + self.k

    def prefix(self, l: int) -> "ResNEstConfig":
        """Config of the first ``l`` blocks (same M, N_in, N_o)."""
        if not 0 <= l <= self.l:
            raise ValueError(f"prefix length {l} outside 0..{self.l}")
        return ResNEstConfig(self.n_in, self.m, self.n_out, l, self.k[:l], self.hidden[:l],
                             self.activation)


@dataclass(frozen=True)
class DenseNEstConfig:
    """Architecture of an L-block DenseNEst; ``d`` lists D_1..D_L."""

    n_in: int
    n_out: int
    d: tuple[int, ...] = ()
    hidden: tuple[int, ...] = ()
    activation: str = "tanh"

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ValueError("n_in and n_out must be >= 1")
        d = _dims_tuple(self.d, "d")
        hidden = _dims_tuple(self.hidden, "hidden")
        if len(d) != len(hidden):
            raise ValueError("d and hidden must have the same length")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "hidden", hidden)

    @property
    def l(self) -> int:
        return len(self.d)

    @property
    def widths(self) -> tuple[int, ...]:
        """M_0..M_L with M_0 = N_in and M_i = M_{i-1} + D_i."""
        out = [self.n_in]
        for d in self.d:
            out.append(out[-1] + d)
        return tuple(out)


@dataclass(frozen=True)
class FeatureWeights:
    """Feature-finding weights phi: ``w = (W_0..W_{L-1})`` and the L blocks."""

    w: tuple[np.ndarray, ...]
    blocks: tuple[BlockFn, ...]

    def __post_init__(self):
        w = tuple(_matrix(a, f"W_{i}") for i, a in enumerate(self.w))
        blocks = tuple(self.blocks)
        if len(w) != len(blocks):
            raise ShapeError(f"phi needs one W_i per block, got {len(w)} matrices and {len(blocks)} blocks")
        if w:
            m = w[0].shape[0]
            for i, wi in enumerate(w):
                if wi.shape[0] != m:
                    raise ShapeError(f"W_{i} has {wi.shape[0]} rows, expected M={m}")
            for i, b in enumerate(blocks, start=1):
                if b.in_dim != m:
                    raise ShapeError(f"block {i} expects input dim {b.in_dim}, residual space is {m}")
                if i < len(w) and w[i].shape[1] != b.out_dim:
                    raise ShapeError(f"W_{i} has {w[i].shape[1]} columns but block {i} emits {b.out_dim}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "blocks", blocks)

    @property
    def l(self) -> int:
        return len(self.blocks)

    @property
    def m(self) -> int | None:
        return self.w[0].shape[0] if self.w else None

    @property
    def feature_dims(self) -> tuple[int, ...]:
        """K_0..K_L (K_0 read from W_0; empty when L = 0)."""
        if not self.w:
            return ()
        return (self.w[0].shape[1],) + tuple(b.out_dim for b in self.blocks)

    def prefix(self, l: int) -> "FeatureWeights":
        return FeatureWeights(self.w[:l], self.blocks[:l])


@dataclass(frozen=True)
class ResNEstParams:
    """All ResNEst weights: ``w = (W_0..W_L)``, ``w_out`` = W_{L+1}, blocks G_1..G_L."""

    w: tuple[np.ndarray, ...]
    w_out: np.ndarray
    blocks: tuple[BlockFn, ...] = ()

    def __post_init__(self):
        w = tuple(_matrix(a, f"W_{i}") for i, a in enumerate(self.w))
        w_out = _matrix(self.w_out, "w_out")
        blocks = tuple(self.blocks)
        if len(w) != len(blocks) + 1:
            raise ShapeError(f"expected {len(blocks) + 1} W matrices for {len(blocks)} blocks, got {len(w)}")
        m = w[0].shape[0]
        for i, wi in enumerate(w):
            if wi.shape[0] != m:
                raise ShapeError(f"W_{i} has {wi.shape[0]} rows, expected M={m}")
        for i, b in enumerate(blocks, start=1):
            if b.in_dim != m:
                raise ShapeError(f"block {i} expects input dim {b.in_dim}, residual space is {m}")
            if w[i].shape[1] != b.out_dim:
                raise ShapeError(f"W_{i} has {w[i].shape[1]} columns but block {i} emits {b.out_dim}")
        if w_out.shape[1] != m:
            raise ShapeError(f"w_out has {w_out.shape[1]} columns, expected M={m}")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_out", w_out)
        object.__setattr__(self, "blocks", blocks)

    @property
    def l(self) -> int:
        return len(self.blocks)

    @property
    def m(self) -> int:
        return self.w[0].shape[0]

    @property
    def n_in(self) -> int:
        return self.w[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.w_out.shape[0]

    @property
    def w0(self) -> np.ndarray:
        return self.w[0]

    @property
    def w_l(self) -> np.ndarray:
        return self.w[-1]

    @property
    def feature_dims(self) -> tuple[int, ...]:
        return tuple(wi.shape[1] for wi in self.w)

    @property
    def phi(self) -> FeatureWeights:
        return FeatureWeights(self.w[:-1], self.blocks)

    def with_prediction(self, w_l, w_out) -> "ResNEstParams":
        """Same phi, new prediction weights (W_L, W_{L+1})."""
        return ResNEstParams(self.w[:-1] + (np.asarray(w_l, dtype=np.float64),), w_out, self.blocks)

    @classmethod
    def from_phi(cls, phi: FeatureWeights, w_l, w_out) -> "ResNEstParams":
        return cls(phi.w + (np.asarray(w_l, dtype=np.float64),), w_out, phi.blocks)

    def config(self) -> ResNEstConfig:
        act = self.blocks[0].activation if self.blocks else "tanh"
        return ResNEstConfig(self.n_in, self.m, self.n_out, self.l,
                             self.feature_dims[1:], tuple(b.hidden for b in self.blocks), act)


@dataclass(frozen=True)
class AResNEstParams:
    """A-ResNEst: linear heads ``h = (H_0..H_L)`` on the features of ``phi``."""

    h: tuple[np.ndarray, ...]
    phi: FeatureWeights

    def __post_init__(self):
        h = tuple(_matrix(a, f"H_{i}") for i, a in enumerate(self.h))
        if len(h) != self.phi.l + 1:
            raise ShapeError(f"expected {self.phi.l + 1} heads, got {len(h)}")
        n_out = h[0].shape[0]
        dims = self.phi.feature_dims
        for i, hi in enumerate(h):
            if hi.shape[0] != n_out:
                raise ShapeError(f"H_{i} has {hi.shape[0]} rows, expected N_o={n_out}")
            if dims and hi.shape[1] != dims[i]:
                raise ShapeError(f"H_{i} has {hi.shape[1]} columns, feature v_{i} has {dims[i]}")
        object.__setattr__(self, "h", h)

    @property
    def l(self) -> int:
        return self.phi.l


@dataclass(frozen=True)
class DenseNEstParams:
    """DenseNEst: dense blocks Q_1..Q_L and the single prediction matrix ``w_out``."""

    blocks: tuple[BlockFn, ...]
    w_out: np.ndarray

    def __post_init__(self):
        blocks = tuple(self.blocks)
        w_out = _matrix(self.w_out, "w_out")
        if blocks:
            width = blocks[0].in_dim
            for i, b in enumerate(blocks, start=1):
                if b.in_dim != width:
                    raise ShapeError(f"block {i} expects input dim {b.in_dim}, x_{i - 1} has {width}")
                width += b.out_dim
            if w_out.shape[1] != width:
                raise ShapeError(f"w_out has {w_out.shape[1]} columns, expected M_L={width}")
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "w_out", w_out)

    @property
    def l(self) -> int:
        return len(self.blocks)

    @property
    def dims(self) -> tuple[int, ...]:
        """D_0..D_L with D_0 = N_in."""
        if not self.blocks:
            return (self.w_out.shape[1],)
        return (self.blocks[0].in_dim,) + tuple(b.out_dim for b in self.blocks)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.cumsum(self.dims))

    def slices(self) -> list[np.ndarray]:
        """Column slices W_{L+1,i} of ``w_out`` acting on each feature v_i."""
        edges = (0,) + self.widths
        return [self.w_out[:, edges[i]:edges[i + 1]] for i in range(len(edges) - 1)]

    def config(self) -> DenseNEstConfig:
        dims = self.dims
        act = self.blocks[0].activation if self.blocks else "tanh"
        return DenseNEstConfig(dims[0], self.w_out.shape[0], dims[1:],
                               tuple(b.hidden for b in self.blocks), act)


@dataclass(frozen=True)
class FeatureMatrices:
    """Batch feature stacks ``v = (V_0..V_L)`` and residual representations ``x_res``.

    ``x_res`` holds ``x_0..x_{L-1}`` when only phi is known and
    ``x_0..x_L`` after a full forward pass.
    """

    v: tuple[np.ndarray, ...]
    x_res: tuple[np.ndarray, ...] = field(default_factory=tuple)

    @property
    def l(self) -> int:
        return len(self.v) - 1

    @property
    def n(self) -> int:
        return self.v[0].shape[1]

    def stacked(self, upto: int | None = None) -> np.ndarray:
        """Rows V_0; V_1; ...; V_upto stacked (all features by default)."""
        last = self.l if upto is None else upto
        return np.vstack(self.v[: last + 1])

    def base(self, m: int) -> np.ndarray:
        """Frozen part ``x_{L-1} = sum_{i<L} W_i V_i`` of the residual (zeros when L = 0)."""
        if self.l == 0:
            return np.zeros((m, self.n))
        return self.x_res[self.l - 1]


Params = Union[ResNEstParams, AResNEstParams, DenseNEstParams]


def _check_batch(x, n_in: int) -> np.ndarray:
    x = _matrix(x, "x_batch")
    if x.shape[0] != n_in:
        raise ShapeError(f"input batch has {x.shape[0]} rows, model expects N_in={n_in}")
    return x


def compute_features(phi: FeatureWeights, x_batch) -> FeatureMatrices:
    """Features v_0..v_L and residual states x_0..x_{L-1} for fixed phi."""
    x = np.asarray(x_batch, dtype=np.float64)
    if phi.l == 0:
        return FeatureMatrices(v=(_matrix(x, "x_batch"),), x_res=())
    x = _check_batch(x, phi.w[0].shape[1])
    v = [x]
    xs = [phi.w[0] @ x]
    for i, block in enumerate(phi.blocks, start=1):
        vi = block(xs[-1])
        v.append(vi)
        if i < phi.l:
            xs.append(xs[-1] + phi.w[i] @ vi)
    return FeatureMatrices(v=tuple(v), x_res=tuple(xs))


def resnest_forward(params: ResNEstParams, x_batch) -> tuple[np.ndarray, FeatureMatrices]:
    """Evaluate x_0 = W_0 x, x_i = x_{i-1} + W_i G_i(x_{i-1}), y = W_{L+1} x_L."""
    x = _check_batch(x_batch, params.n_in)
    v = [x]
    xs = [params.w[0] @ x]
    for i, block in enumerate(params.blocks, start=1):
        vi = block(xs[-1])
        v.append(vi)
        xs.append(xs[-1] + params.w[i] @ vi)
    y_hat = params.w_out @ xs[-1]
    return y_hat, FeatureMatrices(v=tuple(v), x_res=tuple(xs))


def residual_sum(w: tuple[np.ndarray, ...], features: FeatureMatrices) -> np.ndarray:
    """``sum_i W_i V_i`` (equals x_L)."""
    if len(w) != len(features.v):
        raise ShapeError(f"{len(w)} weight matrices for {len(features.v)} features")
    total = None
    for wi, vi in zip(w, features.v):
        if wi.shape[1] != vi.shape[0]:
            raise ShapeError(f"weight with {wi.shape[1]} columns applied to feature with {vi.shape[0]} rows")
        term = wi @ vi
        total = term if total is None else total + term
    return total


def output_from_features(params: ResNEstParams, features: FeatureMatrices) -> np.ndarray:
    """Basis-function form ``W_{L+1} sum_i W_i v_i`` of the ResNEst output."""
    return params.w_out @ residual_sum(params.w, features)


def aresnest_forward(params: AResNEstParams, features: FeatureMatrices) -> np.ndarray:
    """A-ResNEst output ``sum_i H_i v_i``."""
    if len(params.h) != len(features.v):
        raise ShapeError(f"{len(params.h)} heads for {len(features.v)} features")
    return residual_sum(params.h, features)


def densenest_forward(params: DenseNEstParams, x_batch) -> tuple[np.ndarray, FeatureMatrices]:
    """Evaluate x_i = x_{i-1} (concat) Q_i(x_{i-1}), y = W_{L+1} x_L."""
    x = _check_batch(x_batch, params.dims[0])
    v = [x]
    xs = [x]
    for block in params.blocks:
        vi = block(xs[-1])
        v.append(vi)
        xs.append(np.vstack([xs[-1], vi]))
    return params.w_out @ xs[-1], FeatureMatrices(v=tuple(v), x_res=tuple(xs))


# -- flattening ------------------------------------------------------------

def param_arrays(params) -> list[np.ndarray]:
    """Arrays of a parameter container in canonical order."""
    if isinstance(params, ResNEstParams):
        out = list(params.w) + [params.w_out]
        for b in params.blocks:
            out += [b.weight_in, b.weight_out]
        return out
    if isinstance(params, FeatureWeights):
        out = list(params.w)
        for b in params.blocks:
            out += [b.weight_in, b.weight_out]
        return out
    if isinstance(params, AResNEstParams):
        return list(params.h) + param_arrays(params.phi)
    if isinstance(params, DenseNEstParams):
        out = [params.w_out]
        for b in params.blocks:
            out += [b.weight_in, b.weight_out]
        return out
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def _rebuild_blocks(blocks, arrays):
    out = []
    for j, b in enumerate(blocks):
        out.append(b.replace(arrays[2 * j], arrays[2 * j + 1]))
    return tuple(out)


def params_from_arrays(template, arrays: list[np.ndarray]):
    """Inverse of :func:`param_arrays` using ``template`` for structure."""
    arrays = [np.asarray(a, dtype=np.float64) for a in arrays]
    if isinstance(template, ResNEstParams):
        nw = len(template.w)
        return ResNEstParams(tuple(arrays[:nw]), arrays[nw],
                             _rebuild_blocks(template.blocks, arrays[nw + 1:]))
    if isinstance(template, FeatureWeights):
        nw = len(template.w)
        return FeatureWeights(tuple(arrays[:nw]), _rebuild_blocks(template.blocks, arrays[nw:]))
    if isinstance(template, AResNEstParams):
        nh = len(template.h)
        return AResNEstParams(tuple(arrays[:nh]), params_from_arrays(template.phi, arrays[nh:]))
    if isinstance(template, DenseNEstParams):
        return DenseNEstParams(_rebuild_blocks(template.blocks, arrays[1:]), arrays[0])
    raise TypeError(f"unsupported parameter container {type(template).__name__}")


def flatten(params) -> np.ndarray:
    arrays = param_arrays(params)
    if not arrays:
        return np.zeros(0)
    return np.concatenate([a.ravel() for a in arrays])


def unflatten(template, vector: np.ndarray):
    vector = np.asarray(vector, dtype=np.float64)
    arrays = []
    pos = 0
    for a in param_arrays(template):
        arrays.append(vector[pos:pos + a.size].reshape(a.shape))
        pos += a.size
    if pos != vector.size:
        raise ShapeError(f"vector has {vector.size} entries, template needs {pos}")
    return params_from_arrays(template, arrays)


# -- initialization --------------------------------------------------------

def _uniform(gen: np.random.Generator, shape: tuple[int, int], fan_in: int, scale: float) -> np.ndarray:
    bound = scale / np.sqrt(fan_in)
    return gen.uniform(-bound, bound, size=shape) if bound > 0 else np.zeros(shape)


def _init_block(gen, d_in: int, hidden: int, d_out: int, scale: float, activation: str) -> BlockFn:
    return BlockFn(_uniform(gen, (hidden, d_in), d_in, scale),
                   _uniform(gen, (d_out, hidden), hidden, scale), activation)


def init_resnest(config: ResNEstConfig, seed: int, scale: float = 1.0) -> ResNEstParams:
    gen = rng_mod.generator(seed, "weights")
    dims = config.feature_dims
    w = [_uniform(gen, (config.m, dims[0]), dims[0], scale)]
    blocks = []
    for i in range(1, config.l + 1):
        blocks.append(_init_block(gen, config.m, config.hidden[i - 1], dims[i], scale, config.activation))
        w.append(_uniform(gen, (config.m, dims[i]), dims[i], scale))
    w_out = _uniform(gen, (config.n_out, config.m), config.m, scale)
    return ResNEstParams(tuple(w), w_out, tuple(blocks))


def init_aresnest(config: ResNEstConfig, seed: int, scale: float = 1.0) -> AResNEstParams:
    base = init_resnest(config, seed, scale)
    gen = rng_mod.generator(seed, "weights", 1)
    dims = config.feature_dims
    h = tuple(_uniform(gen, (config.n_out, k), k, scale) for k in dims)
    return AResNEstParams(h, base.phi)


def init_densenest(config: DenseNEstConfig, seed: int, scale: float = 1.0) -> DenseNEstParams:
    gen = rng_mod.generator(seed, "weights")
    widths = config.widths
    blocks = tuple(
        _init_block(gen, widths[i], config.hidden[i], config.d[i], scale, config.activation)
        for i in range(config.l)
    )
    w_out = _uniform(gen, (config.n_out, widths[-1]), widths[-1], scale)
    return DenseNEstParams(blocks, w_out)


def init_params(config, seed: int, scale: float = 1.0, model: str | None = None) -> Params:
    """Seeded i.i.d. uniform(-scale/sqrt(fan_in), +scale/sqrt(fan_in)) initialization.

    ``model`` picks ``"resnest"`` or ``"aresnest"`` for a :class:`ResNEstConfig`;
    a :class:`DenseNEstConfig` always yields DenseNEst parameters.
    """
    if scale < 0:
        raise ValueError("scale must be >= 0")
    if isinstance(config, DenseNEstConfig):
        return init_densenest(config, seed, scale)
    if model in (None, "resnest"):
        return init_resnest(config, seed, scale)
    if model == "aresnest":
        return init_aresnest(config, seed, scale)
    raise ValueError(f"unknown model {model!r}")
