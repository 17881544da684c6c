"""Theoretical stability and a priori bounds.

The nonlinear (Bihari) bounds are built from a modulus ``f`` through

    G(u) = int_{x0}^u dr / f(r),        M(r) = G^{-1}(G(r) + kappa),

with ``G`` evaluated by log-spaced trapezoid quadrature and ``G^{-1}`` by
bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

TINY = 1e-12
BISECTION_ITERATIONS = 200


class BoundError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ModulusSpec:
    """Concave nondecreasing modulus of continuity ``f`` with ``f(0) = 0``.

    Use :meth:`linear`, :meth:`osgood_log` or :meth:`sampled`.  The log
    modulus ``u (1 - ln u)`` is continued by its tangent at ``u = 1``,
    which is the constant 1.
    """

    kind: str
    slope: float = 1.0
    nodes: Optional[np.ndarray] = field(default=None, repr=False)
    values: Optional[np.ndarray] = field(default=None, repr=False)
    cap: float = math.inf

    @classmethod
    def linear(cls, slope: float = 1.0) -> "ModulusSpec":
        if not slope > 0:
            raise BoundError(f"slope must be positive, got {slope}")
        return cls("linear", slope=float(slope))

    @classmethod
    def osgood_log(cls) -> "ModulusSpec":
        return cls("osgood_log")

    @classmethod
    def sampled(cls, nodes, values, cap: Optional[float] = None) -> "ModulusSpec":
        """Piecewise-linear modulus through ``(nodes, values)``, constant beyond.

        ``nodes`` must start at 0 with value 0; the samples must be
        nondecreasing and concave.
        """
        u = np.asarray(nodes, dtype=float)
        f = np.asarray(values, dtype=float)
        if u.ndim != 1 or u.shape != f.shape or u.size < 2:
            raise BoundError("nodes and values must be matching 1-D arrays")
        if u[0] != 0 or f[0] != 0:
            raise BoundError("a modulus must start at f(0) = 0")
        if np.any(np.diff(u) <= 0) or np.any(np.diff(f) < 0):
            raise BoundError("modulus samples must be increasing in u, nondecreasing in f")
        slopes = np.diff(f) / np.diff(u)
        if np.any(np.diff(slopes) > 1e-12 * max(1.0, slopes.max())):
            raise BoundError("modulus samples are not concave")
        if f[1] <= 0:
            raise BoundError("modulus must be positive away from 0")
        return cls("custom", nodes=u, values=f, cap=float(u[-1] if cap is None else cap))

    @property
    def tag(self) -> str:
        if self.kind == "linear":
            return f"linear({self.slope:g})"
        if self.kind == "osgood_log":
            return "u(1-ln u)"
        return "custom"

    @property
    def breakpoints(self) -> np.ndarray:
        if self.kind == "osgood_log":
            return np.array([1.0])
        if self.kind == "custom":
            return self.nodes[1:]
        return np.array([])

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "linear":
            return self.slope * u
        if self.kind == "osgood_log":
            with np.errstate(divide="ignore", invalid="ignore"):
                inner = np.where(u > 0, u * (1.0 - np.log(np.where(u > 0, u, 1.0))), 0.0)
            return np.where(u > 1.0, 1.0, inner)
        return np.interp(u, self.nodes, self.values)


@dataclass(frozen=True)
class BoundReport:
    name: str
    inputs: dict
    value: float
    method: str
    error_estimate: float = 0.0
    reason: str = ""


def _log_trapezoid(f: ModulusSpec, a: float, b: float, nodes: int) -> float:
    """Trapezoid rule for ``int_a^b dr/f(r)`` in the variable ``s = ln r``."""
    s = np.linspace(math.log(a), math.log(b), nodes)
    r = np.exp(s)
    w = r / f(r)
    return float(trapezoid(w, s))


def _integral(f: ModulusSpec, a: float, b: float, nodes: int):
    """Returns (Richardson value, error estimate) for ``a < b``."""
    cuts = [a] + [c for c in f.breakpoints if a < c < b] + [b]
    total = err = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        coarse = _log_trapezoid(f, lo, hi, nodes)
        fine = _log_trapezoid(f, lo, hi, 2 * nodes - 1)
        total += fine + (fine - coarse) / 3.0
        err += abs(fine - coarse) / 3.0
    return total, err


def bihari_G(f: ModulusSpec, u: float, x0: float = 1.0, nodes: int = 2000,
             full_output: bool = False):
    """``G(u) = int_{x0}^u dr / f(r)`` (signed).

    Linear moduli use the exact logarithm.  Otherwise composite trapezoid
    on log-spaced nodes with one Richardson step; the returned error
    estimate is ``|T_2n - T_n| / 3``.

    Returns
    -------
    float or (float, float)
        The value, plus the error estimate when ``full_output`` is set.
    """
    if not (u > 0 and x0 > 0):
        raise BoundError(f"G needs positive arguments, got u={u}, x0={x0}")
    if u > f.cap or x0 > f.cap:
        raise BoundError(f"argument beyond the modulus domain cap {f.cap}")
    if f.kind == "linear":
        val, err = math.log(u / x0) / f.slope, 0.0
    elif u == x0:
        val, err = 0.0, 0.0
    elif u > x0:
        val, err = _integral(f, x0, u, nodes)
    else:
        val, err = _integral(f, u, x0, nodes)
        val = -val
    return (val, err) if full_output else val


def bihari_M(f: ModulusSpec, kappa: float, r: float, x0: float = 1.0,
             nodes: int = 2000) -> float:
    """``M(r) = G^{-1}(G(r) + kappa)`` with ``M(0) = 0``.

    ``G^{-1}`` is found by bisection in ``log u`` on a bracket that starts
    at ``[1e-12, cap]`` and expands until it encloses the target.

    Raises
    ------
    BoundError
        If no bracket encloses the target.
    """
    if r < 0 or kappa < 0:
        raise BoundError(f"need r >= 0 and kappa >= 0, got r={r}, kappa={kappa}")
    if r == 0:
        return 0.0
    if kappa == 0:
        return float(r)
    if f.kind == "linear":
        return float(r * math.exp(f.slope * kappa))
    target = bihari_G(f, r, x0, nodes) + kappa

    def g(u):
        return bihari_G(f, u, x0, nodes)

    lo = min(TINY, r)
    hi = f.cap if math.isfinite(f.cap) else max(1.0, r) * 10.0
    while g(lo) > target:
        if lo < 1e-300:
            raise BoundError(f"inversion bracket failure: lower end {lo:.3g} not below target")
        lo *= 1e-6
    while g(hi) < target:
        if not math.isfinite(f.cap) and hi < 1e300:
            hi *= 10.0
        else:
            raise BoundError(
                f"inversion bracket failure on [{lo:.3g}, {hi:.3g}]: G(hi) < {target:.6g}"
            )
    a, b = math.log(lo), math.log(hi)
    for _ in range(BISECTION_ITERATIONS):
        mid = 0.5 * (a + b)
        if g(math.exp(mid)) < target:
            a = mid
        else:
            b = mid
        if b - a < 1e-15:
            break
    return float(math.exp(0.5 * (a + b)))


def lipschitz_stability_bound(g_l1: float) -> float:
    """Stability factor ``exp(2 ||g||_1)`` of the Lipschitz theory."""
    if g_l1 < 0:
        raise BoundError("g_l1 must be nonnegative")
    return math.exp(2.0 * g_l1)


def apriori_path_bound(h_l1: float, y_sup: float, ensemble_moment: float) -> float:
    """Pathwise Gronwall bound ``e^h (h (1 + m) + |Y|)`` on ``sup_t |X_t|``.

    ``m`` is the ensemble moment of ``sup_t |X_t|``.
    """
    return math.exp(h_l1) * (h_l1 * (1.0 + ensemble_moment) + y_sup)


def apriori_moment_constant(h_l1: float) -> float:
    """``C = exp(2h)(1 + h)`` with ``E||X|| <= C (1 + E||Y||)``."""
    return math.exp(2.0 * h_l1) * (1.0 + h_l1)


def increment_seminorm_bound(x_sup: float, x_moment: float) -> float:
    """Bound ``1 + |X| + E|X|`` on the ``h``-seminorm of ``Z = X - Y``."""
    return 1.0 + x_sup + x_moment


def local_lip_F(ens1, ens2, c: float, alpha: float) -> float:
    """Mean exponential moments ``E exp(c |Y1|^alpha) + E exp(c |Y2|^alpha)``.

    Overflow returns ``math.inf``.
    """
    if not (c > 0 and alpha > 0):
        raise BoundError("c and alpha must be positive")
    total = 0.0
    for ens in (ens1, ens2):
        sup = np.linalg.norm(ens.members, axis=-1).max(axis=1)
        with np.errstate(over="ignore"):
            total += float(np.mean(np.exp(c * sup**alpha)))
    return total if math.isfinite(total) else math.inf


def report_M(f: ModulusSpec, kappa: float, r: float, x0: float = 1.0) -> BoundReport:
    value = bihari_M(f, kappa, r, x0)
    if f.kind == "linear" or r == 0:
        return BoundReport("bihari_M", {"modulus": f.tag, "kappa": kappa, "r": r},
                           value, "closed-form")
    _, err_r = bihari_G(f, r, x0, full_output=True)
    _, err_u = bihari_G(f, value, x0, full_output=True)
    # dM = f(M) dG at the root
    err = float(f(value)) * (err_r + err_u)
    return BoundReport("bihari_M", {"modulus": f.tag, "kappa": kappa, "r": r},
                       value, "quadrature+inversion", err)
