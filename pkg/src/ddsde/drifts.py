"""Drift families ``B_t(x, mu)`` and their declared constants.

Every drift is evaluated in vectorized form ``drift.evaluate(t, x, atoms)``
with ``x`` of shape ``(n, d)`` and the measure given by its point atoms
``(N, d)``.  Kernel families integrate a kernel against the measure,
``B(x, mu) = (1/N) sum_j b(x - atom_j)``.

The constants each family declares are the integrals of its Lipschitz rate
``g`` and growth rate ``h`` over the grid steps, for use by the bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .bounds import ModulusSpec
from .lattice import LatticeFunction
from .measures import EmpiricalMeasure, TimeGrid, moment_norm, wasserstein

Rate = Union[float, Callable[[float], float]]

ODD_TOLERANCE = 1e-12
_CHUNK = 1 << 21


class DriftError(ValueError):
    pass


# ---------------------------------------------------------------------------
# constants


def step_integrals(rate: Rate, grid: TimeGrid) -> np.ndarray:
    """Integrals of a rate over ``[t_k, t_{k+1}]`` (Simpson, exact for constants)."""
    if callable(rate):
        t = grid.nodes
        mid = 0.5 * (t[1:] + t[:-1])
        f = np.vectorize(lambda s: float(rate(s)))
        return grid.dt * (f(t[:-1]) + 4 * f(mid) + f(t[1:])) / 6.0
    return np.full(grid.steps, float(rate) * grid.dt)


@dataclass(frozen=True)
class DriftConstants:
    """Declared constants of a drift on a grid.

    ``g_norms`` and ``h_norms`` hold per-step integrals; ``nan`` marks a
    constant the family does not provide.
    """

    family: str
    g_norms: np.ndarray
    h_norms: np.ndarray
    modulus: Optional[str] = None
    alpha: Optional[float] = None
    exponents: Optional[tuple] = None
    divergence_bound: Optional[float] = None

    @property
    def g_l1(self) -> float:
        return float(np.sum(self.g_norms))

    @property
    def h_l1(self) -> float:
        return float(np.sum(self.h_norms))


# ---------------------------------------------------------------------------
# kernels


class LinearKernel:
    """``b(z) = A z``; convolution reduces to ``A (x - mean)``."""

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise DriftError("linear kernel needs a square matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __call__(self, z):
        return np.asarray(z, dtype=float) @ self.matrix.T

    @property
    def divergence(self) -> float:
        return float(np.trace(self.matrix))

    @property
    def lipschitz(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))


class ModulusKernel:
    """``b(z) = f(|z|) e`` for a modulus ``f`` and a fixed vector ``e``.

    Since ``f`` is concave, nondecreasing and vanishes at 0, ``b`` has
    modulus of continuity ``|e| f``.
    """

    def __init__(self, modulus: ModulusSpec, direction):
        self.modulus = modulus
        self.direction = np.atleast_1d(np.asarray(direction, dtype=float))

    @property
    def dim(self) -> int:
        return self.direction.size

    def __call__(self, z):
        r = np.linalg.norm(np.asarray(z, dtype=float), axis=-1)
        return self.modulus(r)[..., None] * self.direction


class PowerKernel:
    """Odd kernel ``b(z) = c |z|^(power-1) z`` (zero at the origin)."""

    def __init__(self, coefficient: float, power: float = 1.0, dim: int = 1):
        self.coefficient = float(coefficient)
        self.power = float(power)
        self.dim = int(dim)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        r = np.linalg.norm(z, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (self.power - 1.0), 0.0)
        return self.coefficient * scale * z


def kernel_dim(kernel) -> int:
    if isinstance(kernel, LatticeFunction):
        return kernel.dim
    return int(kernel.dim)


def check_odd(kernel, probes: Optional[np.ndarray] = None, tol: float = ODD_TOLERANCE):
    """Raise :class:`DriftError` unless ``b(-z) = -b(z)`` within ``tol``.

    Lattice kernels are checked at every node (the lattice must be
    symmetric about the origin); other kernels at ``probes``.
    """
    if isinstance(kernel, LatticeFunction):
        if not np.allclose(kernel.origin, -kernel.upper, atol=tol * kernel.spacing):
            raise DriftError("odd lattice kernel must sit on a lattice symmetric about 0")
        s = kernel.samples
        flipped = s[tuple(slice(None, None, -1) for _ in range(kernel.dim))]
        err = float(np.max(np.abs(s + flipped)))
    else:
        if probes is None:
            rng = np.random.default_rng(0)
            probes = rng.uniform(-2, 2, size=(64, kernel_dim(kernel)))
        err = float(np.max(np.abs(kernel(probes) + kernel(-probes))))
    if err > tol:
        raise DriftError(f"kernel is not odd: max |b(z) + b(-z)| = {err:.3e}")


def convolve_kernel(kernel, x: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """``(1/N) sum_j b(x_i - atom_j)`` for every row of ``x``."""
    if isinstance(kernel, LinearKernel):
        return kernel(x - atoms.mean(axis=0))
    n, d = x.shape
    big_n = atoms.shape[0]
    out = np.empty((n, d))
    rows = max(1, _CHUNK // max(big_n * d, 1))
    for s in range(0, n, rows):
        diff = x[s:s + rows, None, :] - atoms[None, :, :]
        vals = np.asarray(kernel(diff.reshape(-1, d))).reshape(diff.shape)
        out[s:s + rows] = vals.mean(axis=1)
    return out


def self_interaction(kernel, x: np.ndarray) -> np.ndarray:
    """Odd-kernel interaction of a cloud with itself.

    Only pairs ``i < j`` are evaluated and the antisymmetric matrix
    ``U - U^T`` is formed, so the diagonal vanishes and every pair cancels
    exactly in the total.
    """
    n, d = x.shape
    iu, ju = np.triu_indices(n, k=1)
    upper = np.zeros((n, n, d))
    if iu.size:
        upper[iu, ju] = np.asarray(kernel(x[iu] - x[ju])).reshape(-1, d)
    pair = upper - upper.transpose(1, 0, 2)
    return pair.mean(axis=1)


def pairwise_total(kernel, x: np.ndarray) -> np.ndarray:
    """``(1/N^2) sum_{i,j} b(x_i - x_j)`` grouping each pair with its mirror."""
    n, d = x.shape
    total = np.zeros(d)
    for i in range(n):
        for j in range(i + 1, n):
            total += kernel(x[i] - x[j]) + kernel(x[j] - x[i])
    return total / n**2


# ---------------------------------------------------------------------------
# drift families


class Drift:
    """Base class.  Subclasses implement :meth:`evaluate` and :meth:`constants`."""

    family = "abstract"
    dim = 1

    def evaluate(self, t: float, x: np.ndarray, atoms: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constants(self, grid: TimeGrid) -> DriftConstants:
        raise NotImplementedError


class ZeroDrift(Drift):
    family = "zero"

    def __init__(self, dim: int = 1):
        self.dim = int(dim)

    def evaluate(self, t, x, atoms):
        return np.zeros_like(np.asarray(x, dtype=float))

    def constants(self, grid):
        z = np.zeros(grid.steps)
        return DriftConstants(self.family, z, z.copy())


class LipschitzDrift(Drift):
    """User drift ``fn(t, x, atoms)`` with declared rates ``g`` and ``h``.

    ``fn`` receives ``x`` as ``(n, d)`` and must return ``(n, d)``.
    """

    family = "lipschitz_linear"

    def __init__(self, fn: Callable, g: Rate, h: Rate, dim: int = 1):
        self.fn = fn
        self.g = g
        self.h = h
        self.dim = int(dim)

    def evaluate(self, t, x, atoms):
        return np.asarray(self.fn(t, x, atoms), dtype=float).reshape(np.shape(x))

    def constants(self, grid):
        return DriftConstants(self.family, step_integrals(self.g, grid),
                              step_integrals(self.h, grid))


class MeanAttraction(Drift):
    """``B(x, mu) = kappa (mean(mu) - x)``."""

    family = "mean_attraction"

    def __init__(self, kappa: float, dim: int = 1):
        self.kappa = float(kappa)
        self.dim = int(dim)

    def evaluate(self, t, x, atoms):
        return self.kappa * (atoms.mean(axis=0) - x)

    def constants(self, grid):
        rate = abs(self.kappa)
        return DriftConstants(self.family, step_integrals(rate, grid),
                              step_integrals(rate, grid))


class OsgoodConvolution(Drift):
    """``B_t(x, mu) = a(t) (b * mu)(x)`` with ``|b(z) - b(z')| <= f(|z - z'|)``.

    By concavity of ``f`` the drift satisfies
    ``|B_t(x, mu) - B_t(y, nu)| <= a(t) f(|x - y| + d_1(mu, nu))``,
    so the declared ``h`` rate is the amplitude ``|a|``.
    """

    family = "osgood_convolution"

    def __init__(self, kernel, modulus: ModulusSpec, amplitude: Rate = 1.0):
        self.kernel = kernel
        self.modulus = modulus
        self.amplitude = amplitude
        self.dim = kernel_dim(kernel)

    def _amp(self, t):
        return float(self.amplitude(t)) if callable(self.amplitude) else float(self.amplitude)

    def evaluate(self, t, x, atoms):
        return self._amp(t) * convolve_kernel(self.kernel, x, atoms)

    def constants(self, grid):
        a = self.amplitude
        rate = (lambda s: abs(float(a(s)))) if callable(a) else abs(float(a))
        h = step_integrals(rate, grid)
        if self.modulus.kind == "linear":
            g = self.modulus.slope * h
        else:
            g = np.full(grid.steps, math.nan)
        return DriftConstants(self.family, g, h, modulus=self.modulus.tag)


class MonotonePower(Drift):
    """``B(x, mu) = -lam |x|^(gamma-1) x + G(x, mu)``.

    The power part is set to 0 at ``x = 0`` (for ``gamma = 0`` this is the
    sign convention).  ``interaction`` is an optional Lipschitz drift ``G``.
    """

    family = "monotone_power"

    def __init__(self, lam: float, gamma: float, interaction: Optional[Drift] = None,
                 dim: int = 1):
        if not lam > 0:
            raise DriftError(f"lambda must be positive, got {lam}")
        if not 0 <= gamma < 1:
            raise DriftError(f"gamma must lie in [0, 1), got {gamma}")
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.interaction = interaction
        self.dim = interaction.dim if interaction is not None else int(dim)

    def power_part(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(r > 0, r ** (self.gamma - 1.0), 0.0)
        return -self.lam * scale * x

    def evaluate(self, t, x, atoms):
        out = self.power_part(x)
        if self.interaction is not None:
            out = out + self.interaction.evaluate(t, x, atoms)
        return out

    def constants(self, grid):
        # the power part has no Lipschitz rate near the origin
        missing = np.full(grid.steps, math.nan)
        return DriftConstants(self.family, missing, missing.copy())


class AntisymmetricInteraction(Drift):
    """``B(x, mu) = (b * mu)(x)`` for an odd kernel ``b``.

    When the query points are the atoms themselves the pair matrix is
    antisymmetrized, so the particle drifts sum to zero up to rounding.
    """

    family = "antisymmetric_interaction"

    def __init__(self, kernel, lipschitz: float = math.nan):
        check_odd(kernel)
        self.kernel = kernel
        self.lipschitz = float(lipschitz)
        self.dim = kernel_dim(kernel)

    def evaluate(self, t, x, atoms):
        if x is atoms or (x.shape == atoms.shape and np.array_equal(x, atoms)):
            return self_interaction(self.kernel, x)
        return convolve_kernel(self.kernel, x, atoms)

    def constants(self, grid):
        g = step_integrals(self.lipschitz, grid)
        return DriftConstants(self.family, g, g.copy())


class LocalLipGrowth(Drift):
    """``B_t(x, mu) = (1/N) sum_j b(t, x, atom_j)`` with polynomial growth ``alpha``."""

    family = "local_lip_growth"

    def __init__(self, fn: Callable, alpha: float, g: Rate, dim: int = 1):
        self.fn = fn
        self.alpha = float(alpha)
        self.g = g
        self.dim = int(dim)

    def evaluate(self, t, x, atoms):
        n, d = x.shape
        out = np.empty((n, d))
        for i in range(n):
            xi = np.broadcast_to(x[i], atoms.shape)
            out[i] = np.asarray(self.fn(t, xi, atoms), dtype=float).reshape(-1, d).mean(axis=0)
        return out

    def constants(self, grid):
        g = step_integrals(self.g, grid)
        return DriftConstants(self.family, g, np.full(grid.steps, math.nan), alpha=self.alpha)


class ConvolutionKernel(Drift):
    """``B(x, mu) = (b * mu)(x)`` for a Sobolev-type kernel.

    Parameters
    ----------
    kernel : LatticeFunction or LinearKernel or callable
        Vector-valued kernel ``b : R^d -> R^d``.
    exponents : tuple of float
        Declared integrability exponents ``(p, q, r)``.
    divergence_bound : float
        Declared bound on ``||div b||_inf``; must be finite.
    """

    family = "convolution_kernel"

    def __init__(self, kernel, exponents: Sequence[float] = (math.inf, math.inf, 1.0),
                 divergence_bound: Optional[float] = None):
        if divergence_bound is None and isinstance(kernel, LinearKernel):
            divergence_bound = abs(kernel.divergence)
        if divergence_bound is None or not math.isfinite(divergence_bound):
            raise DriftError("convolution kernel needs a finite divergence bound")
        self.kernel = kernel
        self.exponents = tuple(float(e) for e in exponents)
        self.divergence_bound = float(divergence_bound)
        self.dim = kernel_dim(kernel)

    def evaluate(self, t, x, atoms):
        return convolve_kernel(self.kernel, x, atoms)

    def constants(self, grid):
        lip = self.kernel.lipschitz if isinstance(self.kernel, LinearKernel) else math.nan
        g = step_integrals(lip, grid)
        return DriftConstants(self.family, g, g.copy(), exponents=self.exponents,
                              divergence_bound=self.divergence_bound)


# ---------------------------------------------------------------------------
# public operations


def eval_drift(drift: Drift, t: float, x, mu: EmpiricalMeasure) -> np.ndarray:
    """Evaluate ``B_t(x, mu)`` at a single point ``x``."""
    if mu.is_path_measure:
        raise DriftError("drifts act on point measures")
    xp = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    out = np.asarray(drift.evaluate(t, xp, mu.atoms))[0]
    if not np.all(np.isfinite(out)):
        raise DriftError(f"drift is not finite at t={t}, x={xp[0]}")
    return out


def drift_constants(drift: Drift, grid: TimeGrid) -> DriftConstants:
    return drift.constants(grid)


def lipschitz_approximate(values, distances, n: float) -> np.ndarray:
    """Inf-convolution ``g^n(z_i) = min_j (g(z_j) + n d(z_i, z_j))`` on a cloud.

    Parameters
    ----------
    values : array_like, shape (K,)
        Samples of a bounded function on the cloud.
    distances : array_like, shape (K, K)
        Pairwise distances of the cloud points.
    n : float
        Lipschitz level.
    """
    g = np.asarray(values, dtype=float)
    dist = np.asarray(distances, dtype=float)
    if dist.shape != (g.size, g.size):
        raise DriftError("distance matrix does not match the number of values")
    if not n > 0:
        raise DriftError(f"n must be positive, got {n}")
    return np.min(g[None, :] + n * dist, axis=1)


def cutoff(s):
    """Smooth cutoff equal to 1 on ``[0, 1]`` and 0 on ``[2, inf)``."""
    s = np.abs(np.asarray(s, dtype=float))

    def bump(u):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)

    a, b = bump(2.0 - s), bump(s - 1.0)
    return np.where(s <= 1, 1.0, np.where(s >= 2, 0.0, a / np.where(a + b > 0, a + b, 1.0)))


@dataclass
class ArgumentCloud:
    """Finite set of drift arguments ``z_j = (x_j, mu_{label_j})``."""

    points: np.ndarray
    measures: list
    labels: np.ndarray
    p: float = 1.0
    _measure_dist: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def product(cls, points, measures, p: float = 1.0) -> "ArgumentCloud":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        k = len(measures)
        all_pts = np.tile(pts, (k, 1))
        labels = np.repeat(np.arange(k), pts.shape[0])
        return cls(all_pts, list(measures), labels, p)

    def __len__(self):
        return self.points.shape[0]

    def measure_distances(self) -> np.ndarray:
        if self._measure_dist is None:
            k = len(self.measures)
            m = np.zeros((k, k))
            for a in range(k):
                for b in range(a + 1, k):
                    m[a, b] = m[b, a] = wasserstein(self.measures[a], self.measures[b], self.p)
            self._measure_dist = m
        return self._measure_dist

    def distances(self) -> np.ndarray:
        dx = np.linalg.norm(self.points[:, None, :] - self.points[None, :, :], axis=-1)
        dm = self.measure_distances()[self.labels[:, None], self.labels[None, :]]
        return dx + dm

    def distance_to(self, x: np.ndarray, mu: EmpiricalMeasure) -> np.ndarray:
        """Distances from ``(x_i, mu)`` to every cloud point, shape ``(n, K)``."""
        dm = np.array([wasserstein(mu, m, self.p) for m in self.measures])
        dx = np.linalg.norm(x[:, None, :] - self.points[None, :, :], axis=-1)
        return dx + dm[self.labels][None, :]

    def distance_to_origin(self) -> np.ndarray:
        """``|x_j| + ||mu_j||_p``, the distance to ``(0, delta_0)``."""
        mom = np.array([moment_norm(m, self.p) for m in self.measures])
        return np.linalg.norm(self.points, axis=-1) + mom[self.labels]


class CloudLipschitzDrift(Drift):
    """Lipschitz approximation of a drift built on an argument cloud.

    ``f^n(z) = g^n(z) (1 + d(z, z0)) cutoff(d(z, z0) / n)`` where ``g^n`` is
    the inf-convolution of ``g = B / (1 + d(., z0))`` over the cloud and
    ``z0 = (0, delta_0)``.
    """

    family = "lipschitz_linear"

    def __init__(self, base: Drift, n: float, cloud: ArgumentCloud):
        self.base = base
        self.n = float(n)
        self.cloud = cloud
        self.dim = base.dim
        self._cache: dict = {}
        self.lipschitz_measured = self._measure_lipschitz()

    def _scaled_values(self, t: float) -> np.ndarray:
        if t not in self._cache:
            c = self.cloud
            vals = np.empty((len(c), self.dim))
            for k, mu in enumerate(c.measures):
                sel = c.labels == k
                vals[sel] = self.base.evaluate(t, c.points[sel], mu.atoms)
            self._cache[t] = vals / (1.0 + c.distance_to_origin())[:, None]
        return self._cache[t]

    def _measure_lipschitz(self, t: float = 0.0) -> float:
        c = self.cloud
        dist = c.distances()
        g = self._scaled_values(t)
        r = c.distance_to_origin()
        f = np.stack([lipschitz_approximate(g[:, k], dist, self.n) for k in range(self.dim)], 1)
        f = f * ((1 + r) * cutoff(r / self.n))[:, None]
        diff = np.linalg.norm(f[:, None, :] - f[None, :, :], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dist > 0, diff / dist, 0.0)
        return float(ratio.max()) if ratio.size else 0.0

    def evaluate(self, t, x, atoms):
        mu = EmpiricalMeasure(atoms)
        g = self._scaled_values(t)
        dist = self.cloud.distance_to(x, mu)
        r = np.linalg.norm(x, axis=-1) + moment_norm(mu, self.cloud.p)
        out = np.empty((x.shape[0], self.dim))
        for k in range(self.dim):
            out[:, k] = np.min(g[None, :, k] + self.n * dist, axis=1)
        return out * ((1 + r) * cutoff(r / self.n))[:, None]

    def constants(self, grid):
        base = self.base.constants(grid)
        g = np.full(grid.steps, self.lipschitz_measured * grid.dt)
        return DriftConstants(self.family, g, base.h_norms)


def approximate_drift(drift: Drift, n: float, cloud: ArgumentCloud,
                      radius_cap: float = math.inf) -> Drift:
    """Globally Lipschitz approximation of ``drift`` at level ``n``.

    The infimum over the argument space is replaced by a minimum over
    ``cloud``.  The measured Lipschitz constant of the result on the cloud is
    exposed as ``lipschitz_measured``.

    Raises
    ------
    DriftError
        If a cloud argument lies farther than ``radius_cap`` from
        ``(0, delta_0)``.
    """
    if isinstance(drift, ZeroDrift):
        return drift
    r = cloud.distance_to_origin()
    if np.any(r > radius_cap):
        raise DriftError(
            f"cloud argument at distance {r.max():.4g} exceeds the cap {radius_cap}"
        )
    return CloudLipschitzDrift(drift, n, cloud)


def mollifier_stencil(epsilon: float, spacing: float, dim: int) -> np.ndarray:
    """Discrete bump ``exp(-1 / (1 - |x/eps|^2))`` on ``|x| < eps``, unit sum."""
    r = int(math.floor(epsilon / spacing))
    ax = np.arange(-r, r + 1) * spacing
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    s = sum(g**2 for g in grids) / epsilon**2
    with np.errstate(divide="ignore"):
        w = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return w / w.sum()


def mollify_kernel(drift: ConvolutionKernel, epsilon: float) -> ConvolutionKernel:
    """Convolve a lattice kernel with a unit-mass bump of radius ``epsilon``.

    Lattice edges are extended by their nearest values, which keeps
    constants fixed.  The divergence bound carries over unchanged.
    """
    kern = drift.kernel
    if not isinstance(kern, LatticeFunction):
        raise DriftError("only lattice kernels can be mollified")
    if not epsilon >= 2 * kern.spacing:
        raise DriftError(
            f"epsilon={epsilon} is below twice the lattice spacing {kern.spacing}"
        )
    stencil = mollifier_stencil(epsilon, kern.spacing, kern.dim)
    s = kern.samples
    if kern.is_vector:
        out = np.stack([ndimage.convolve(s[..., c], stencil, mode="nearest")
                        for c in range(s.shape[-1])], axis=-1)
    else:
        out = ndimage.convolve(s, stencil, mode="nearest")
    return ConvolutionKernel(kern.with_samples(out), drift.exponents, drift.divergence_bound)
