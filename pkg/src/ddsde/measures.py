"""Paths, empirical measures and the metrics between them.

Everything here works on plain numpy arrays wrapped in small frozen
dataclasses.  A path stores its values as an ``(M+1, d)`` array; an
ensemble of ``N`` paths is an ``(N, M+1, d)`` array.  Empirical measures
carry either point atoms ``(N, d)`` or path atoms ``(N, M+1, d)`` with a
shared :class:`TimeGrid`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

DEFAULT_ASSIGNMENT_CAP = 2048


class MeasureError(ValueError):
    """Raised for incompatible or malformed measures."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k * horizon / steps`` on ``[0, horizon]``."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.steps + 1, dtype=float) * self.dt
        t[-1] = self.horizon
        return t

    def __len__(self) -> int:
        return self.steps + 1


@dataclass(frozen=True, eq=False)
class Path:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != len(self.grid):
            raise MeasureError(
                f"path needs {len(self.grid)} nodes, got shape {np.shape(self.values)}"
            )
        if not np.all(np.isfinite(v)):
            raise MeasureError("path values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Uniform-weight empirical measure ``(1/N) sum_i delta_{atom_i}``.

    ``atoms`` is ``(N, d)`` for point atoms.  For path atoms pass ``grid``
    and an ``(N, M+1, d)`` array.
    """

    atoms: np.ndarray
    grid: Optional[TimeGrid] = None

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=float)
        if self.grid is None:
            if a.ndim == 1:
                a = a[:, None]
            if a.ndim != 2:
                raise MeasureError(f"point atoms must be (N, d), got {a.shape}")
        else:
            if a.ndim == 2:
                a = a[:, :, None]
            if a.ndim != 3 or a.shape[1] != len(self.grid):
                raise MeasureError(
                    f"path atoms must be (N, {len(self.grid)}, d), got {a.shape}"
                )
        if a.shape[0] < 1:
            raise MeasureError("empirical measure needs at least one atom")
        a.setflags(write=False)
        object.__setattr__(self, "atoms", a)

    @property
    def size(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[-1]

    @property
    def is_path_measure(self) -> bool:
        return self.grid is not None

    @classmethod
    def dirac(cls, point, copies: int = 1) -> "EmpiricalMeasure":
        p = np.atleast_1d(np.asarray(point, dtype=float))
        return cls(np.tile(p, (copies, 1)))

    def mean(self) -> np.ndarray:
        return self.atoms.mean(axis=0)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """N paths on one grid; also a measure flow ``t_k -> slice(k)``."""

    grid: TimeGrid
    members: np.ndarray
    seed_record: int = 0
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        m = np.asarray(self.members, dtype=float)
        if m.ndim == 2:
            m = m[:, :, None]
        if m.ndim != 3 or m.shape[1] != len(self.grid) or m.shape[0] < 1:
            raise MeasureError(
                f"ensemble members must be (N, {len(self.grid)}, d), got {m.shape}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "members", m)

    @property
    def size(self) -> int:
        return self.members.shape[0]

    @property
    def dim(self) -> int:
        return self.members.shape[2]

    def path(self, i: int) -> Path:
        return Path(self.grid, self.members[i])

    def slice(self, k: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.members[:, k, :])

    def as_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.members, self.grid)


# ---------------------------------------------------------------------------
# norms


def sup_norm(path) -> float:
    """Maximum Euclidean norm of a path over the grid nodes."""
    v = path.values if isinstance(path, Path) else np.asarray(path, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return float(np.max(np.linalg.norm(v, axis=-1)))


def _atom_norms(mu: EmpiricalMeasure) -> np.ndarray:
    norms = np.linalg.norm(mu.atoms, axis=-1)
    if mu.is_path_measure:
        norms = norms.max(axis=1)
    return norms


def moment_norm(mu: EmpiricalMeasure, p: float = 1.0) -> float:
    """``((1/N) sum |atom_i|^p)^(1/p)``, with sup-norms for path atoms."""
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    norms = _atom_norms(mu)
    return float(np.mean(norms**p) ** (1.0 / p))


def _window_maxima(h_norms: np.ndarray) -> np.ndarray:
    """``out[j]`` = largest mass over ``j`` consecutive steps, ``j = 0..M``."""
    h = np.abs(np.asarray(h_norms, dtype=float))
    c = np.concatenate([[0.0], np.cumsum(h)])
    m = h.size
    out = np.zeros(m + 1)
    for j in range(1, m + 1):
        out[j] = np.max(c[j:] - c[:-j])
    return out


def h_modulus(h_norms, delta: float, dt: float) -> float:
    """Grid modulus of continuity of ``h``.

    ``h_norms[k]`` is the integral of ``|h|`` over ``[t_k, t_{k+1}]``.  The
    result is the largest mass over windows of grid-aligned width at most
    ``delta``.
    """
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    h = np.asarray(h_norms, dtype=float)
    j = min(int(math.floor(delta / dt * (1 + 1e-12))), h.size)
    if j == 0:
        return 0.0
    return float(_window_maxima(h)[j])


def h_seminorm(path, h_norms) -> float:
    """Increment seminorm ``sup |x_t - x_s| / f_h(|t - s|)`` over node pairs.

    Returns ``math.inf`` when a nonzero increment meets a window of zero
    ``h``-mass; a constant path always gives 0.
    """
    v = path.values if isinstance(path, Path) else np.asarray(path, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    h = np.asarray(h_norms, dtype=float)
    if h.size != v.shape[0] - 1:
        raise MeasureError("h_norms must have one entry per grid step")
    fh = _window_maxima(h)
    worst = 0.0
    for j in range(1, v.shape[0]):
        inc = float(np.max(np.linalg.norm(v[j:] - v[:-j], axis=-1)))
        if inc == 0.0:
            continue
        if fh[j] == 0.0:
            return math.inf
        worst = max(worst, inc / fh[j])
    return worst


# ---------------------------------------------------------------------------
# Wasserstein


def cost_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure, block: int = 64) -> np.ndarray:
    """Pairwise ground distances: Euclidean for points, sup-norm for paths."""
    a, b = mu.atoms, nu.atoms
    if not mu.is_path_measure:
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    n = a.shape[0]
    out = np.empty((n, b.shape[0]))
    for start in range(0, n, block):
        diff = a[start:start + block, None, :, :] - b[None, :, :, :]
        sq = np.einsum("ijtk,ijtk->ijt", diff, diff)
        out[start:start + block] = np.sqrt(sq.max(axis=2))
    return out


def _check_compatible(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.is_path_measure != nu.is_path_measure:
        raise MeasureError("cannot compare point atoms with path atoms")
    if mu.is_path_measure and mu.grid != nu.grid:
        raise MeasureError(f"path grids differ: {mu.grid} vs {nu.grid}")
    if mu.dim != nu.dim:
        raise MeasureError(f"dimension mismatch: {mu.dim} vs {nu.dim}")
    if mu.size != nu.size:
        raise MeasureError(
            f"unequal atom counts {mu.size} and {nu.size}; only equal-size "
            "empirical measures are supported"
        )


def optimal_assignment(cost_p: np.ndarray) -> np.ndarray:
    """Permutation ``sigma`` minimising ``sum_i cost_p[i, sigma[i]]``."""
    rows, cols = linear_sum_assignment(cost_p)
    perm = np.empty_like(cols)
    perm[rows] = cols
    return perm


def wasserstein(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    p: float = 1.0,
    assignment_cap: int = DEFAULT_ASSIGNMENT_CAP,
) -> float:
    """Exact ``d_p`` between two equal-size empirical measures.

    One-dimensional point clouds use the sorted-quantile coupling; all
    other cases solve the assignment problem on the ``p``-th power of the
    ground cost.

    Raises
    ------
    MeasureError
        On mismatched atom kinds, grids, dimensions or sizes, or when the
        size exceeds ``assignment_cap``.
    """
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    _check_compatible(mu, nu)
    if not mu.is_path_measure and mu.dim == 1:
        a = np.sort(mu.atoms[:, 0])
        b = np.sort(nu.atoms[:, 0])
        return float(np.mean(np.abs(a - b) ** p) ** (1.0 / p))
    if mu.size > assignment_cap:
        raise MeasureError(
            f"{mu.size} atoms exceeds the assignment cap {assignment_cap}"
        )
    c = cost_matrix(mu, nu) ** p
    perm = optimal_assignment(c)
    return float(np.mean(c[np.arange(mu.size), perm]) ** (1.0 / p))


# ---------------------------------------------------------------------------
# densities


def silverman_bandwidth(points: np.ndarray) -> float:
    """Normal-reference (Silverman) bandwidth, pooled over coordinates."""
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < 2:
        return 1.0
    std = x.std(axis=0, ddof=1)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    iqr = (q75 - q25) / 1.349
    spread = np.where(iqr > 0, np.minimum(std, iqr), std)
    a = float(np.mean(spread))
    if a <= 0:
        return 1.0
    return a * (4.0 / (d + 2)) ** (1.0 / (d + 4)) * n ** (-1.0 / (d + 4))


def _linear_binning(x: np.ndarray, origin: np.ndarray, spacing: float, shape) -> np.ndarray:
    """Spread unit masses onto lattice nodes with multilinear weights."""
    n, d = x.shape
    grid = np.zeros(shape)
    u = (x - origin) / spacing
    base = np.floor(u).astype(int)
    frac = u - base
    for corner in range(2**d):
        bits = [(corner >> k) & 1 for k in range(d)]
        idx = base + np.array(bits)
        w = np.ones(n)
        for k in range(d):
            w *= frac[:, k] if bits[k] else 1.0 - frac[:, k]
        ok = np.all((idx >= 0) & (idx < np.array(shape)), axis=1) & (w > 0)
        np.add.at(grid, tuple(idx[ok].T), w[ok])
    return grid


def kde_density_norm(
    mu: EmpiricalMeasure,
    q: float = math.inf,
    bandwidth: Optional[float] = None,
    resolution: float = 0.25,
) -> float:
    """L^q norm of a Gaussian kernel density estimate of ``mu``.

    The estimate is evaluated on a lattice with spacing
    ``resolution * bandwidth`` covering the atoms' bounding box padded by
    four bandwidths.  Atoms are linearly binned onto the lattice before the
    (FFT) convolution with the sampled kernel.

    Parameters
    ----------
    mu : EmpiricalMeasure
        Point atoms.
    q : float
        Exponent in ``(1, inf]``; ``math.inf`` gives the lattice maximum.
    bandwidth : float, optional
        Kernel standard deviation; Silverman's rule when omitted.
    resolution : float
        Lattice spacing in units of the bandwidth.
    """
    from scipy.signal import fftconvolve

    if mu.is_path_measure:
        raise MeasureError("density norms need point atoms")
    if not q > 1:
        raise ValueError(f"q must be in (1, inf], got {q}")
    x = mu.atoms
    n, d = x.shape
    b = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not b > 0:
        raise ValueError(f"bandwidth must be positive, got {b}")
    h = resolution * b
    lo = x.min(axis=0) - 4 * b
    hi = x.max(axis=0) + 4 * b
    shape = tuple(int(np.ceil((hi[k] - lo[k]) / h)) + 1 for k in range(d))
    counts = _linear_binning(x, lo, h, shape) / n

    r = int(np.ceil(4 * b / h))
    offs = np.arange(-r, r + 1) * h
    k1 = np.exp(-0.5 * (offs / b) ** 2) / (math.sqrt(2 * math.pi) * b)
    kern = k1
    for _ in range(d - 1):
        kern = np.multiply.outer(kern, k1)
    dens = fftconvolve(counts, kern, mode="same")
    dens = np.maximum(dens, 0.0)
    if math.isinf(q):
        return float(dens.max())
    return float((np.sum(dens**q) * h**d) ** (1.0 / q))


def histogram_sup_mass(mu: EmpiricalMeasure, cell_width: float) -> float:
    """Largest ``(cell count / N) / cell volume`` over lattice cells.

    Cells are ``prod_k [j_k w, (j_k + 1) w)`` anchored at the origin.
    """
    if mu.is_path_measure:
        raise MeasureError("histogram needs point atoms")
    if not cell_width > 0:
        raise ValueError(f"cell_width must be positive, got {cell_width}")
    cells = np.floor(mu.atoms / cell_width).astype(np.int64)
    _, counts = np.unique(cells, axis=0, return_counts=True)
    return float(counts.max() / mu.size / cell_width**mu.dim)
