"""JSON encoding of parameter containers.

Every matrix is stored as ``{"shape": [rows, cols], "data": [[...], ...]}``
with nested row-major lists. Python's float repr round-trips exactly, so
decoding an encoded container reproduces it bit for bit.
"""

import json
import os
import tempfile

import numpy as np

from .errors import ParseError
from .models import AResNEstParams, BlockFn, DenseNEstParams, FeatureWeights, ResNEstParams


def atomic_write_text(path, text: str) -> None:
    """Write ``text`` to a temp file in the same directory, then rename over ``path``."""
    path = os.fspath(path)
    folder = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=folder)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def encode_matrix(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {"shape": [int(a.shape[0]), int(a.shape[1])], "data": a.tolist()}


def decode_matrix(obj, where: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.array(obj["data"], dtype=np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{where}: malformed matrix ({exc})") from None
    if len(shape) != 2:
        raise ParseError(f"{where}: shape must have two entries")
    if data.size == 0 and shape[0] * shape[1] == 0:
        return np.zeros(shape)
    if data.shape != shape:
        raise ParseError(f"{where}: data shape {data.shape} differs from declared {shape}")
    if not np.all(np.isfinite(data)):
        raise ParseError(f"{where}: non-finite entries")
    return data


def _encode_blocks(blocks) -> list:
    return [{"kind": b.kind, "activation": b.activation, "weight_in": encode_matrix(b.weight_in),
             "weight_out": encode_matrix(b.weight_out)} for b in blocks]


def _decode_blocks(items, where: str) -> tuple[BlockFn, ...]:
    if not isinstance(items, list):
        raise ParseError(f"{where}: blocks must be a list")
    out = []
    for i, b in enumerate(items):
        try:
            out.append(BlockFn(decode_matrix(b["weight_in"], f"{where}[{i}].weight_in"),
                               decode_matrix(b["weight_out"], f"{where}[{i}].weight_out"),
                               b.get("activation", "tanh"), b.get("kind", "mlp1")))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"{where}[{i}]: missing field {exc}") from None
        except ValueError as exc:
            raise ParseError(f"{where}[{i}]: {exc}") from None
    return tuple(out)


def params_to_dict(params) -> dict:
    if isinstance(params, ResNEstParams):
        return {"model": "resnest", "l": params.l, "m": params.m,
                "w": [encode_matrix(w) for w in params.w], "w_out": encode_matrix(params.w_out),
                "blocks": _encode_blocks(params.blocks)}
    if isinstance(params, AResNEstParams):
        return {"model": "aresnest", "l": params.l, "h": [encode_matrix(h) for h in params.h],
                "phi_w": [encode_matrix(w) for w in params.phi.w], "blocks": _encode_blocks(params.phi.blocks)}
    if isinstance(params, DenseNEstParams):
        return {"model": "densenest", "l": params.l, "dims": list(params.dims),
                "w_out": encode_matrix(params.w_out), "blocks": _encode_blocks(params.blocks)}
    raise TypeError(f"unsupported parameter container {type(params).__name__}")


def params_from_dict(obj):
    if not isinstance(obj, dict) or "model" not in obj:
        raise ParseError("parameter file must be an object with a 'model' field")
    model = obj["model"]
    try:
        if model == "resnest":
            return ResNEstParams(tuple(decode_matrix(w, f"w[{i}]") for i, w in enumerate(obj["w"])),
                                 decode_matrix(obj["w_out"], "w_out"), _decode_blocks(obj["blocks"], "blocks"))
        if model == "aresnest":
            phi = FeatureWeights(tuple(decode_matrix(w, f"phi_w[{i}]") for i, w in enumerate(obj["phi_w"])),
                                 _decode_blocks(obj["blocks"], "blocks"))
            return AResNEstParams(tuple(decode_matrix(h, f"h[{i}]") for i, h in enumerate(obj["h"])), phi)
        if model == "densenest":
            return DenseNEstParams(_decode_blocks(obj["blocks"], "blocks"), decode_matrix(obj["w_out"], "w_out"))
    except KeyError as exc:
        raise ParseError(f"parameter file is missing field {exc}") from None
    except ValueError as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"inconsistent parameter shapes: {exc}") from None
    raise ParseError(f"unknown model {model!r}")


def read_params(path):
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=os.fspath(path)) from None
    try:
        return params_from_dict(obj)
    except ParseError as exc:
        raise ParseError(str(exc), path=os.fspath(path)) from None
