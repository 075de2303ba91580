"""Small numeric helpers shared by the model, losses and the gradient oracle.

Tensors are plain ``numpy.ndarray`` values; trainable state lives in a
:class:`ParamSet`, which pairs every named array with a gradient buffer of
the same shape.
"""

from __future__ import annotations

from typing import Callable, Dict, Iterator, Mapping

import numpy as np

_zero_norm_count = 0


def zero_norm_warnings() -> int:
    """Number of zero-norm inputs seen by the cosine helpers since last reset."""
    return _zero_norm_count


def reset_zero_norm_warnings() -> None:
    global _zero_norm_count
    _zero_norm_count = 0


def _note_zero_norms(n: int) -> None:
    global _zero_norm_count
    _zero_norm_count += int(n)


def cosine(a, b) -> float:
    """Cosine similarity of two vectors.

    A zero-norm input gives 0.0 and bumps the warning counter instead of
    raising, since freshly initialised models can emit near-zero vectors.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape or a.size == 0:
        raise ValueError(f"cosine needs equal-length non-empty vectors, got {a.shape} and {b.shape}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        _note_zero_norms(1)
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def safe_normalize(x: np.ndarray, axis: int = -1):
    """Return (x / ||x||, ||x||) along ``axis``; zero rows stay zero."""
    norms = np.sqrt(np.sum(x * x, axis=axis, keepdims=True))
    zero = norms == 0.0
    if np.any(zero):
        _note_zero_norms(np.count_nonzero(zero))
    unit = np.divide(x, norms, out=np.zeros_like(x), where=~zero)
    return unit, norms


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim == 0:
        return sigmoid(z.reshape(1))[0]
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class ParamSet:
    """Named arrays with matching gradient buffers, iterated in insertion order."""

    def __init__(self, values: Mapping[str, np.ndarray] | None = None):
        self.values: Dict[str, np.ndarray] = {}
        self.grads: Dict[str, np.ndarray] = {}
        for name, arr in (values or {}).items():
            self.add(name, arr)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self.values:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self) -> int:
        return len(self.values)

    def names(self):
        return list(self.values)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def copy(self) -> "ParamSet":
        return ParamSet({k: v.copy() for k, v in self.values.items()})

    def num_scalars(self) -> int:
        return sum(v.size for v in self.values.values())

    def set_grads(self, grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if g.shape != self.values[name].shape:
                raise ValueError(f"gradient for {name} has shape {g.shape}, expected {self.values[name].shape}")
            self.grads[name] = np.asarray(g, dtype=np.float64)

    def allclose(self, other: "ParamSet", **kw) -> bool:
        return self.names() == other.names() and all(
            np.allclose(self.values[k], other.values[k], **kw) for k in self.values
        )


def central_difference(fn: Callable[[ParamSet], float], params: ParamSet, h: float = 1e-5) -> Dict[str, np.ndarray]:
    """Central-difference estimate of d fn / d param for every scalar in ``params``.

    ``fn`` must be deterministic; ``params`` is perturbed in place and restored.
    """
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    out = {}
    for name in params:
        arr = params.values[name]
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn(params)
            flat[i] = orig - h
            down = fn(params)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        out[name] = g
    return out


def max_relative_error(analytic: Mapping[str, np.ndarray], numeric: Mapping[str, np.ndarray]) -> float:
    """max |a - n| / max(1, |n|) over every scalar."""
    worst = 0.0
    for name, n in numeric.items():
        a = analytic[name]
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
