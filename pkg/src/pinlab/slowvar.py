"""Slowly varying functions, their integral transform and monotone envelopes.

Three kinds of slowly varying function are supported:

* ``trivial``: the constant ``c``;
* ``log``: ``a * log(max(x, e)) ** b`` (clamped below ``e`` so that the
  function is positive and locally bounded on ``[0, inf)``);
* ``table``: linear interpolation of tabulated ``(x, L(x))`` pairs.

``tilde_L(x) = int_0^x dy / ((1 + y) L(y)^2)`` governs the persistence of the
two-replica intersection renewal and the coarse-graining length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate

from .errors import ConstructionError, GridRangeError

E = math.e
# Gauss-Legendre nodes used for the envelope integral, one panel per unit interval.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)


@dataclass(frozen=True)
class SlowlyVaryingSpec:
    kind: str
    c: float = 1.0
    a: float = 1.0
    b: float = 0.0
    table_x: tuple = field(default=(), repr=False)
    table_y: tuple = field(default=(), repr=False)
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("trivial", "log", "table"):
            raise ConstructionError(f"unknown slowly varying kind {self.kind!r}")
        if self.kind == "trivial" and not self.c > 0:
            raise ConstructionError("trivial L needs c > 0")
        if self.kind == "log" and not self.a > 0:
            raise ConstructionError("logarithmic L needs a > 0")
        if self.kind == "table":
            xs = np.asarray(self.table_x, dtype=float)
            ys = np.asarray(self.table_y, dtype=float)
            if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
                raise ConstructionError("table needs two equal-length 1-d grids")
            if np.any(np.diff(xs) <= 0):
                raise ConstructionError("table grid must be strictly increasing")
            if np.any(ys <= 0):
                raise ConstructionError("tabulated L must be positive")
        if self.epsilon is not None:
            hi = self.epsilon_bound()
            ok = 0 < self.epsilon <= 0.5 and (
                self.epsilon <= hi if self._vanishes() else self.epsilon < hi
            )
            if not ok:
                raise ConstructionError(
                    f"epsilon={self.epsilon} incompatible with L(x)=o(log(x)^(1/2-eps))"
                )

    # -- constructors -------------------------------------------------------
    @classmethod
    def trivial(cls, c: float = 1.0, epsilon: Optional[float] = None) -> "SlowlyVaryingSpec":
        return cls("trivial", c=float(c), epsilon=epsilon)

    @classmethod
    def logarithmic(cls, a: float, b: float, epsilon: Optional[float] = None) -> "SlowlyVaryingSpec":
        return cls("log", a=float(a), b=float(b), epsilon=epsilon)

    @classmethod
    def tabulated(cls, xs, ys, epsilon: Optional[float] = None) -> "SlowlyVaryingSpec":
        return cls("table", table_x=tuple(map(float, xs)), table_y=tuple(map(float, ys)),
                   epsilon=epsilon)

    @classmethod
    def from_dict(cls, d: dict) -> "SlowlyVaryingSpec":
        kind = d.get("kind")
        eps = d.get("epsilon")
        if kind == "trivial":
            return cls.trivial(d.get("c", 1.0), eps)
        if kind == "log":
            return cls.logarithmic(d.get("a", 1.0), d.get("b", 0.0), eps)
        if kind == "table":
            return cls.tabulated(d["x"], d["y"], eps)
        raise ConstructionError(f"unknown slowly varying kind {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "trivial":
            d = {"kind": "trivial", "c": self.c}
        elif self.kind == "log":
            d = {"kind": "log", "a": self.a, "b": self.b}
        else:
            d = {"kind": "table", "x": list(self.table_x), "y": list(self.table_y)}
        if self.epsilon is not None:
            d["epsilon"] = self.epsilon
        return d

    # -- helpers --------------------------------------------------------------
    def _vanishes(self) -> bool:
        return self.kind == "log" and self.b < 0

    def epsilon_bound(self) -> float:
        """Upper limit for epsilon in L(x) = o(log(x)^(1/2 - epsilon)).

        The limit is attained only when L vanishes at infinity.
        """
        if self.kind == "log":
            return min(0.5 - self.b, 0.5) if self.b < 0.5 else 0.0
        return 0.5

    def scaled(self, factor: float) -> "SlowlyVaryingSpec":
        """Return ``factor * L`` as a new spec of the same kind."""
        if self.kind == "trivial":
            return SlowlyVaryingSpec.trivial(self.c * factor, self.epsilon)
        if self.kind == "log":
            return SlowlyVaryingSpec.logarithmic(self.a * factor, self.b, self.epsilon)
        return SlowlyVaryingSpec.tabulated(
            self.table_x, [y * factor for y in self.table_y], self.epsilon
        )

    @property
    def tilde_diverges(self) -> Optional[bool]:
        """Whether tilde_L(x) -> infinity; None when undecidable (tables)."""
        if self.kind == "trivial":
            return True
        if self.kind == "log":
            return self.b <= 0.5
        return None


def eval_L(spec: SlowlyVaryingSpec, x):
    """Evaluate L at ``x`` (scalar or array, ``x >= 0``)."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise ValueError("L is evaluated on x >= 0 only")
    if spec.kind == "trivial":
        out = np.full(xa.shape, spec.c)
    elif spec.kind == "log":
        out = spec.a * np.log(np.maximum(xa, E)) ** spec.b
    else:
        xs = np.asarray(spec.table_x)
        if np.any(xa < xs[0]) or np.any(xa > xs[-1]):
            raise GridRangeError(
                f"tabulated L queried outside [{xs[0]}, {xs[-1]}]"
            )
        out = np.interp(xa, xs, spec.table_y)
    return float(out) if np.ndim(x) == 0 else out


def _log_tail(b: float, T: float) -> float:
    """int_1^T t^(-2b) e^t/(1+e^t) dt, i.e. the log-kind integral above e in t = log y."""
    p = 1.0 - 2.0 * b
    main = math.log(T) if p == 0 else (T ** p - 1.0) / p
    # e^t/(1+e^t) = 1 - 1/(1+e^t); the correction decays like e^-t.
    upper = min(T, 60.0)
    corr, _ = integrate.quad(lambda t: t ** (-2 * b) / (1.0 + math.exp(t)), 1.0, upper,
                             epsabs=0, epsrel=1e-12, limit=200)
    return main - corr


def eval_tilde_L(spec: SlowlyVaryingSpec, x: float) -> float:
    """tilde_L(x) = int_0^x dy / ((1+y) L(y)^2)."""
    if x < 0:
        raise ValueError("tilde_L is evaluated on x >= 0 only")
    if spec.kind == "trivial":
        return math.log1p(x) / spec.c ** 2
    if spec.kind == "log":
        a2 = spec.a ** 2
        head = math.log1p(min(x, E)) / a2
        if x <= E or spec.b == 0:
            return math.log1p(x) / a2 if spec.b == 0 else head
        return head + _log_tail(spec.b, math.log(x)) / a2
    xs = np.asarray(spec.table_x)
    ys = np.asarray(spec.table_y)
    if xs[0] != 0:
        raise GridRangeError("tilde_L of a table needs the grid to start at 0")
    if x > xs[-1]:
        raise GridRangeError(f"tilde_L queried beyond grid end {xs[-1]}")
    f = 1.0 / ((1.0 + xs) * ys ** 2)
    i = int(np.searchsorted(xs, x, side="right")) - 1
    i = min(i, xs.size - 2)
    whole = np.sum(0.5 * (f[1:i + 1] + f[:i]) * np.diff(xs[:i + 1]))
    fx = 1.0 / ((1.0 + x) * eval_L(spec, x) ** 2)
    return float(whole + 0.5 * (f[i] + fx) * (x - xs[i]))


@dataclass(frozen=True)
class EnvelopeTable:
    """Monotone envelope of L on the integer grid ``0..N_max``.

    ``Lbold`` makes ``x -> 1/(sqrt(x) Lbold(x))`` non-increasing and
    ``cL * Lbold <= L <= Lbold``.  ``Rhalf(x) = 1/(sqrt(x+1) Lbold(x+1))`` and
    ``tildeLbold`` is tilde_L computed with Lbold in place of L.
    """

    xs: np.ndarray
    L: np.ndarray
    Lbold: np.ndarray
    cL: float
    Rhalf: np.ndarray
    tildeLbold: np.ndarray
    c_limit: float

    @property
    def N_max(self) -> int:
        return int(self.xs[-1])


def _running_envelope(L_vals: np.ndarray) -> np.ndarray:
    """Lbold(x) = max_{1<=y<=x} sqrt(y) L(y) / sqrt(x) for x >= 1; Lbold(0) = L(0)."""
    x = np.arange(L_vals.size, dtype=float)
    Lb = np.empty_like(L_vals)
    Lb[0] = L_vals[0]
    s = np.maximum.accumulate(np.sqrt(x[1:]) * L_vals[1:])
    Lb[1:] = s / np.sqrt(x[1:])
    return Lb


def _tilde_on_grid(spec: SlowlyVaryingSpec, ratio: np.ndarray) -> np.ndarray:
    """int_0^n dy/((1+y) (L(y) rho(y))^2) for n = 0..len(ratio)-1.

    ``rho`` is the grid ratio Lbold/L, interpolated linearly between integers;
    L itself is evaluated exactly at the quadrature nodes.
    """
    n = ratio.size - 1
    left = np.arange(n, dtype=float)
    t = 0.5 * (_GL_NODES + 1.0)
    y = left[:, None] + t[None, :]
    rho = ratio[:-1, None] * (1 - t) + ratio[1:, None] * t
    f = 1.0 / ((1.0 + y) * (eval_L(spec, y) * rho) ** 2)
    panel = 0.5 * (f * _GL_WEIGHTS).sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(panel)])


def build_envelope(spec: SlowlyVaryingSpec, N_max: int) -> EnvelopeTable:
    if N_max < 2:
        raise ConstructionError("envelope needs N_max >= 2")
    ext = np.arange(N_max + 2, dtype=float)
    L_ext = np.asarray(eval_L(spec, ext), dtype=float)
    if not np.all(np.isfinite(L_ext)) or np.any(L_ext <= 0):
        raise ConstructionError("L must be finite and positive on the grid")
    Lb_ext = _running_envelope(L_ext)
    ratio = Lb_ext / L_ext
    xs = np.arange(N_max + 1)
    L = L_ext[: N_max + 1]
    Lbold = Lb_ext[: N_max + 1]
    cL = float(np.min(L[1:] / Lbold[1:]))
    # 1/(sqrt(x) Lbold(x)) is the reciprocal running maximum; taking it directly
    # keeps the monotonicity exact in floating point
    Rhalf = 1.0 / np.maximum.accumulate(np.sqrt(ext[1:]) * L_ext[1:])
    tilde = _tilde_on_grid(spec, ratio[: N_max + 1])
    return EnvelopeTable(
        xs=xs, L=L, Lbold=Lbold, cL=cL, Rhalf=Rhalf, tildeLbold=tilde,
        c_limit=float(Lbold[-1] / L[-1]),
    )


def potter_constant(spec: SlowlyVaryingSpec, a: float, x_max: int) -> float:
    """Smallest c_a with L(x)/L(y) <= c_a max(x/y, y/x)^a on {1..x_max}^2."""
    if a <= 0:
        raise ValueError("Potter exponent must be positive")
    x = np.arange(1, x_max + 1, dtype=float)
    logL = np.log(eval_L(spec, x))
    logx = np.log(x)
    best = 0.0
    # chunk rows to keep memory bounded
    for start in range(0, x.size, 512):
        lx = logx[start:start + 512, None]
        d = logL[start:start + 512, None] - logL[None, :] - a * np.abs(lx - logx[None, :])
        best = max(best, float(d.max()))
    return math.exp(best)
