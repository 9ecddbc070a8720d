"""Named parameter collections with the vector arithmetic meta-learning needs."""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np


class NumericError(FloatingPointError):
    pass


class IncongruentError(ValueError):
    pass


def check_finite(arr: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {what}")
    return arr


def _as_float(value) -> np.ndarray:
    arr = np.asarray(value)
    return arr if arr.dtype.kind == "f" else arr.astype(np.float64)


class ParamSet:
    """Ordered mapping ``name -> ndarray``.

    Two sets are congruent when they hold the same names with the same shapes
    in the same order; arithmetic between sets requires congruence. Writing an
    entry bumps :attr:`version`, which lets cached forward passes detect that
    they have gone stale.
    """

    def __init__(self, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = ()):
        items = entries.items() if isinstance(entries, Mapping) else entries
        self._entries: dict[str, np.ndarray] = {k: _as_float(v) for k, v in items}
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        self._entries[name] = _as_float(value)
        self.version += 1

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __iter__(self) -> Iterator[str]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def items(self):
        return self._entries.items()

    def names(self) -> list[str]:
        return list(self._entries)

    def shapes(self) -> list[tuple[int, ...]]:
        return [v.shape for v in self._entries.values()]

    def size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def congruent(self, other: "ParamSet") -> bool:
        return (self.names() == other.names()) and (self.shapes() == other.shapes())

    def require_congruent(self, other: "ParamSet") -> None:
        if not self.congruent(other):
            raise IncongruentError("parameter sets differ in names, shapes or order")

    def clone(self) -> "ParamSet":
        return ParamSet((k, v.copy()) for k, v in self._entries.items())

    def zeros_like(self) -> "ParamSet":
        return ParamSet((k, np.zeros_like(v)) for k, v in self._entries.items())

    def map(self, fn) -> "ParamSet":
        return ParamSet((k, fn(v)) for k, v in self._entries.items())

    def zip_map(self, other: "ParamSet", fn) -> "ParamSet":
        self.require_congruent(other)
        return ParamSet((k, fn(v, other[k])) for k, v in self._entries.items())

    def __add__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.add)

    def __sub__(self, other: "ParamSet") -> "ParamSet":
        return self.zip_map(other, np.subtract)

    def __mul__(self, scalar: float) -> "ParamSet":
        return self.map(lambda v: v * scalar)

    __rmul__ = __mul__

    def equals(self, other: "ParamSet") -> bool:
        """Bit-exact equality (names, shapes and values)."""
        return self.congruent(other) and all(np.array_equal(v, other[k]) for k, v in self.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self._entries.values()]) if self._entries else np.zeros(0)

    def __repr__(self) -> str:
        body = ", ".join(f"{k}{list(v.shape)}" for k, v in self._entries.items())
        return f"ParamSet({body})"


def param_axpy(theta: ParamSet, others: Sequence[ParamSet], eta: float) -> ParamSet:
    """Outer interpolation ``theta - eta * mean_j(theta - theta_j)``.

    Evaluated as ``(1 - eta) * theta + eta * mean_j(theta_j)``, which is the
    same quantity but exact at ``eta = 0`` (returns theta) and at
    ``eta = 1, k = 1`` (returns theta_1). The mean sums in list order.
    """
    if not others:
        raise ValueError("param_axpy needs at least one adapted parameter set")
    for other in others:
        theta.require_congruent(other)
    k = len(others)
    out = []
    for name, value in theta.items():
        total = others[0][name].copy()
        for other in others[1:]:
            total += other[name]
        mean = total / k
        if eta == 0:
            out.append((name, value.copy()))
        elif eta == 1:
            out.append((name, mean))
        else:
            out.append((name, (1.0 - eta) * value + eta * mean))
    return ParamSet(out)
