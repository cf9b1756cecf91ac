"""Dense float64 primitives, parameter storage and gradient checking.

Matrices are plain 2-D ``numpy`` float64 arrays. The public primitives
validate shapes and finiteness; the ``*_backward`` helpers are the building
blocks used by the hand-written reverse passes in :mod:`graphix.layers`.
"""

from __future__ import annotations

import json
import zlib
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


def as_matrix(x, name: str = "input") -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    check_finite(a, name)
    return a


def check_finite(a: np.ndarray, name: str = "input") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a, "left operand"), as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def rowwise_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` where every output row depends only on its input row.

    BLAS blocking makes ``a @ b`` round differently depending on where a row
    sits in ``a``; this path keeps results bitwise stable under row permutations.
    """
    return np.einsum("nd,dk->nk", a, b, optimize=False)


def add(a, b) -> np.ndarray:
    """Elementwise sum; ``b`` may be a row vector broadcast over rows of ``a``."""
    a = as_matrix(a, "left operand")
    b = np.asarray(b, dtype=DTYPE)
    check_finite(b, "right operand")
    if b.shape != a.shape and not (b.ndim == 1 and b.shape[0] == a.shape[1]):
        raise ShapeError(f"cannot add {b.shape} to {a.shape}")
    return a + b


def scale(a, c: float) -> np.ndarray:
    if not np.isfinite(c):
        raise NonFiniteError("scale factor is not finite")
    return as_matrix(a) * c


def relu(a) -> np.ndarray:
    return np.maximum(as_matrix(a), 0.0)


def concat_cols(blocks: Iterable) -> np.ndarray:
    blocks = [as_matrix(b, "block") for b in blocks]
    if not blocks:
        raise ShapeError("nothing to concatenate")
    if len({b.shape[0] for b in blocks}) != 1:
        raise ShapeError(f"row counts differ: {[b.shape[0] for b in blocks]}")
    return np.concatenate(blocks, axis=1)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def row_softmax(a) -> np.ndarray:
    return softmax(as_matrix(a), axis=1)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (dp - (dp * p).sum(axis=axis, keepdims=True))


def layer_norm(a, gain=None, bias=None, eps: float = 1e-6) -> np.ndarray:
    if not eps > 0:
        raise ValueError("layer norm epsilon must be positive")
    a = as_matrix(a)
    d = a.shape[1]
    gain = np.ones(d) if gain is None else np.asarray(gain, dtype=DTYPE)
    bias = np.zeros(d) if bias is None else np.asarray(bias, dtype=DTYPE)
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer norm affine parameters must have shape ({d},)")
    return layer_norm_forward(a, gain, bias, eps)[0]


def layer_norm_forward(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat * gain + bias, (xhat, inv, gain)


def layer_norm_backward(dout: np.ndarray, cache):
    xhat, inv, gain = cache
    dgain = (dout * xhat).sum(axis=0)
    dbias = dout.sum(axis=0)
    dxhat = dout * gain
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgain, dbias


def xavier_uniform(shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamStore:
    """Named float64 parameters with immutable shapes.

    Every parameter draws from its own generator seeded by ``(seed, crc32(name))``
    so a value depends only on the seed and the name, never on creation order.
    """

    INIT_SCHEMES = ("xavier", "zeros", "ones", "normal")

    def __init__(self, seed: int = 0, init: str = "xavier-uniform"):
        self.seed = int(seed)
        self.init = init
        self._params: dict[str, np.ndarray] = {}

    def create(self, name: str, shape: tuple[int, ...], scheme: str = "xavier",
               std: float = 0.02) -> np.ndarray:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already exists")
        if scheme not in self.INIT_SCHEMES:
            raise ValueError(f"unknown init scheme {scheme!r}")
        shape = tuple(int(s) for s in shape)
        rng = np.random.default_rng([self.seed, zlib.crc32(name.encode())])
        if scheme == "xavier":
            value = xavier_uniform(shape, rng)
        elif scheme == "normal":
            value = rng.normal(0.0, std, size=shape)
        elif scheme == "zeros":
            value = np.zeros(shape)
        else:
            value = np.ones(shape)
        self._params[name] = value.astype(DTYPE)
        return self._params[name]

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=DTYPE)
        if name not in self._params:
            raise KeyError(f"unknown parameter {name!r}")
        if value.shape != self._params[name].shape:
            raise ShapeError(f"parameter {name!r} has shape {self._params[name].shape}, "
                             f"got {value.shape}")
        self._params[name][...] = value

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._params.items()}

    def size(self) -> int:
        return sum(v.size for v in self._params.values())

    def copy(self) -> "ParamStore":
        out = ParamStore(self.seed, self.init)
        out._params = {k: v.copy() for k, v in self._params.items()}
        return out

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self._params.items()}


def save_checkpoint(store: ParamStore, directory: str | Path, extra: Mapping | None = None) -> Path:
    """Write ``manifest.json`` plus ``params.bin`` (little-endian float64, concatenated)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(directory / "params.bin", "wb") as fh:
        for name, value in store.items():
            raw = np.ascontiguousarray(value, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(value.shape), "offset": offset})
            fh.write(raw)
            offset += len(raw)
    manifest = {"format": "graphix-params", "version": 1, "dtype": "<f8",
                "seed": store.seed, "init": store.init, "params": entries}
    if extra:
        manifest.update(extra)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return directory


def load_checkpoint(directory: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest.get("format") != "graphix-params" or manifest.get("dtype") != "<f8":
        raise ValueError(f"{directory}: not a graphix parameter checkpoint")
    blob = (directory / "params.bin").read_bytes()
    params = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        start = entry["offset"]
        if start + 8 * count > len(blob):
            raise ValueError(f"{directory}: parameter {entry['name']!r} is truncated")
        params[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count,
                                              offset=start).reshape(shape).astype(DTYPE)
    return params, manifest


def numeric_grad(f: Callable[[ParamStore], float], store: ParamStore, name: str,
                 eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``f`` with respect to one parameter."""
    p = store[name]
    grad = np.zeros_like(p)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        fp = f(store)
        flat[k] = orig - eps
        fm = f(store)
        flat[k] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"objective is not finite near {name}[{k}]")
        gflat[k] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))))


def grad_check(f: Callable[[ParamStore], float], store: ParamStore,
               analytic_grads: Mapping[str, np.ndarray], eps: float = 1e-5,
               names: Iterable[str] | None = None,
               report: dict | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    The error per entry is ``|analytic - numeric| / max(1, |numeric|)``.
    When ``report`` is given it receives the per-parameter maxima.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    if not np.isfinite(f(store)):
        raise NonFiniteError("objective is not finite at the checked point")
    worst = 0.0
    for name in (names if names is not None else store.names()):
        numeric = numeric_grad(f, store, name, eps)
        err = relative_error(np.asarray(analytic_grads[name]), numeric)
        if report is not None:
            report[name] = err
        worst = max(worst, err)
    return worst
