"""Basis functions r(u) for the log ROC-derivative and the integrals over them.

The log-derivative of the ROC curve is ``G(u) = beta0 + beta1 @ r(u)``.
Everything here revolves around the tilt integral
``Z(beta1; a, b) = int_a^b exp(beta1 @ r(t)) dt``; requiring ROC(1) = 1
pins ``beta0 = -log Z(beta1; 0, 1)``.

Integrals use fixed Gauss-Legendre rules (vectorised, and exact to
rounding for the smooth integrands met here); ``adaptive_simpson`` is kept
as an independent check and can be selected in ``solve_constrained_beta0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericalError

GL_NODES = 64
_x, _w = np.polynomial.legendre.leggauss(GL_NODES)
# nodes/weights on [0, 1]
NODES = 0.5 * (_x + 1.0)
WEIGHTS = 0.5 * _w
LOG_WEIGHTS = np.log(WEIGHTS)


def _logsumexp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    # leaner than scipy's version; this sits in every likelihood evaluation
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(m, axis) + np.log(np.sum(np.exp(a - m), axis=axis))


@dataclass(frozen=True)
class BasisSpec:
    """Ordered basis ``r(u)``; polynomial ``(u, u**2, ..., u**degree)`` by default.

    Custom bases pass vectorised callables in ``functions`` (and optionally
    their derivatives; otherwise derivatives are taken numerically).
    """

    degree: int = 2
    functions: Sequence[Callable] | None = None
    derivatives: Sequence[Callable] | None = None

    def __post_init__(self):
        if self.functions is None and self.degree < 1:
            raise ValueError("polynomial basis needs degree >= 1")

    @property
    def dim(self) -> int:
        return self.degree if self.functions is None else len(self.functions)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.functions is None:
            out = np.empty(u.shape + (self.degree,))
            out[..., 0] = u
            for k in range(1, self.degree):
                out[..., k] = out[..., k - 1] * u
            return out
        return np.stack([np.broadcast_to(f(u), u.shape) for f in self.functions], axis=-1)

    def derivative(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.functions is None:
            k = np.arange(1, self.degree + 1)
            return k * u[..., None] ** (k - 1)
        if self.derivatives is not None:
            return np.stack([np.broadcast_to(f(u), u.shape) for f in self.derivatives], axis=-1)
        h = 1e-6
        return (self(u + h) - self(u - h)) / (2 * h)

    def to_dict(self) -> dict:
        if self.functions is not None:
            raise ValueError("custom bases are not serialisable")
        return {"kind": "polynomial", "degree": self.degree}

    @classmethod
    def from_dict(cls, data: dict) -> "BasisSpec":
        if data.get("kind", "polynomial") != "polynomial":
            raise ValueError(f"unsupported basis kind {data.get('kind')!r}")
        return cls(degree=int(data["degree"]))


# basis evaluated at the [0, 1] nodes, cached per polynomial degree
_R_CACHE: dict = {}


def _r_nodes(basis: BasisSpec) -> np.ndarray:
    if basis.functions is None:
        R = _R_CACHE.get(basis.degree)
        if R is None:
            R = _R_CACHE[basis.degree] = basis(NODES)
        return R
    return basis(NODES)


def tilt_moments(beta1, basis: BasisSpec):
    """Return ``(log Z, mean, covariance)`` of r(t) under density exp(beta1 @ r(t)) / Z on [0, 1]."""
    beta1 = np.atleast_1d(np.asarray(beta1, dtype=float))
    R = _r_nodes(basis)
    a = R @ beta1 + LOG_WEIGHTS
    log_z = _logsumexp(a)
    p = np.exp(a - log_z)
    m = p @ R
    Rc = R - m
    cov = (Rc * p[:, None]).T @ Rc
    return float(log_z), m, cov


def log_tilt_integral(beta1, basis: BasisSpec, a=0.0, b=1.0):
    """``log int_a^b exp(beta1 @ r(t)) dt``, vectorised over arrays ``a``/``b``."""
    beta1 = np.atleast_1d(np.asarray(beta1, dtype=float))
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    width = b - a
    t = a[..., None] + width[..., None] * NODES
    g = basis(t) @ beta1 + LOG_WEIGHTS
    with np.errstate(divide="ignore"):
        return _logsumexp(g) + np.log(width)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = 1e-10, max_depth: int = 60) -> float:
    """Adaptive composite Simpson rule with absolute tolerance ``tol``."""

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        if depth <= 0:
            raise NumericalError("adaptive Simpson quadrature did not converge")
        return (recurse(a, m, fa, flm, fm, left, tol / 2, depth - 1)
                + recurse(m, b, fm, frm, fb, right, tol / 2, depth - 1))

    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    # start from four panels so that narrow peaks are not missed by a single
    # three-point estimate
    edges = np.linspace(a, b, 5)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fhi, fmid = f(lo), f(hi), f(0.5 * (lo + hi))
        total += recurse(lo, hi, flo, fmid, fhi, simpson(flo, fmid, fhi, lo, hi), tol / 4, max_depth)
    return total


def solve_constrained_beta0(beta1, basis: BasisSpec, method: str = "gauss") -> float:
    """Intercept making ``int_0^1 exp(beta0 + beta1 @ r(t)) dt == 1``."""
    beta1 = np.atleast_1d(np.asarray(beta1, dtype=float))
    if len(beta1) != basis.dim:
        raise ValueError(f"beta1 has length {len(beta1)}, basis has dimension {basis.dim}")
    if method == "gauss":
        return -tilt_moments(beta1, basis)[0]
    if method == "simpson":
        # integrate exp(g - shift) to keep the scale near 1
        grid = np.linspace(0.0, 1.0, 257)
        shift = float(np.max(basis(grid) @ beta1))
        z = adaptive_simpson(lambda t: math.exp(float(basis(np.array(t)) @ beta1) - shift), 0.0, 1.0, 1e-12)
        if not z > 0:
            raise NumericalError("tilt integral is not positive")
        return -(math.log(z) + shift)
    raise ValueError(f"unknown quadrature method {method!r}")


def linear_closed_form_beta0(beta1: float) -> float:
    """Closed-form constrained intercept for the one-term linear basis r(u) = u."""
    if beta1 == 0.0:
        return 0.0
    return math.log(beta1 / math.expm1(beta1))
