"""Discrete Hardy-Littlewood maximal functions and related inequalities.

Ball averages use every lattice node within distance ``r`` of the centre,
with ``b`` extended by zero outside the lattice, divided by the node count
of the full (unclipped) ball.  Derivatives are central differences inside
the lattice and one-sided differences on its faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.signal import fftconvolve

from .lattice import LatticeFunction
from .measures import EmpiricalMeasure, kde_density_norm, wasserstein


class MaximalError(ValueError):
    pass


def default_radii(b: LatticeFunction) -> np.ndarray:
    """Dyadic sweep ``spacing * 2^k`` up to half the largest extent."""
    extent = b.spacing * (max(b.shape) - 1)
    radii = []
    r = b.spacing
    while r <= extent / 2 + 1e-12 * extent:
        radii.append(r)
        r *= 2
    return np.array(radii or [b.spacing])


def all_radii(b: LatticeFunction) -> np.ndarray:
    """Every multiple of the spacing up to half the largest extent."""
    return b.spacing * np.arange(1, (max(b.shape) - 1) // 2 + 1)


def magnitude(b: LatticeFunction) -> np.ndarray:
    s = b.samples
    return np.linalg.norm(s, axis=-1) if b.is_vector else np.abs(s)


def _ball_offsets(radius_nodes: float, dim: int) -> np.ndarray:
    r = int(math.floor(radius_nodes + 1e-9))
    ax = np.arange(-r, r + 1)
    grids = np.meshgrid(*([ax] * dim), indexing="ij")
    sq = sum(g.astype(float) ** 2 for g in grids)
    return sq <= radius_nodes**2 * (1 + 1e-12)


def _ball_averages_1d(values: np.ndarray, radius_nodes: Iterable[int]) -> np.ndarray:
    n = values.size
    csum = np.concatenate([[0.0], np.cumsum(values)])
    idx = np.arange(n)
    best = values.copy()
    for k in radius_nodes:
        lo = np.clip(idx - k, 0, n)
        hi = np.clip(idx + k + 1, 0, n)
        best = np.maximum(best, (csum[hi] - csum[lo]) / (2 * k + 1))
    return best


def maximal_function(b: LatticeFunction, radii: Optional[Union[Sequence[float], str]] = None
                     ) -> LatticeFunction:
    """Lattice maximal function ``Mb = max(|b|, max_r avg_{B(x, r)} |b|)``.

    Parameters
    ----------
    b : LatticeFunction
        Scalar or vector samples; vector samples use their Euclidean norm.
    radii : sequence of float or ``"all"``, optional
        Ball radii.  Defaults to the dyadic sweep :func:`default_radii`;
        ``"all"`` uses every multiple of the spacing.
    """
    if isinstance(radii, str):
        if radii != "all":
            raise MaximalError(f"unknown radius set {radii!r}")
        radii = all_radii(b)
    elif radii is None:
        radii = default_radii(b)
    radii = np.asarray(radii, dtype=float)
    if radii.size and np.any(radii <= 0):
        raise MaximalError("radii must be positive")
    values = magnitude(b)
    in_nodes = radii / b.spacing
    if b.dim == 1:
        ks = sorted({int(math.floor(r + 1e-9)) for r in in_nodes} - {0})
        return b.with_samples(_ball_averages_1d(values, ks))
    best = values.copy()
    for rn in in_nodes:
        ball = _ball_offsets(rn, b.dim)
        if ball.sum() <= 1:
            continue
        sums = fftconvolve(values, ball.astype(float), mode="same")
        best = np.maximum(best, sums / ball.sum())
    return b.with_samples(best)


def lattice_gradient(b: LatticeFunction) -> np.ndarray:
    """Central differences; shape ``shape + (m, d)`` (``m = 1`` for scalars).

    Each derivative is ``(b[i+1] - b[i-1]) / (x[i+1] - x[i-1])`` with
    one-sided quotients on the lattice faces.
    """
    s = b.samples if b.is_vector else b.samples[..., None]
    parts = []
    for k in range(b.dim):
        x = b.axis(k)
        f = np.moveaxis(s, k, 0)
        df = np.empty_like(f)
        df[1:-1] = (f[2:] - f[:-2]) / _bcast(x[2:] - x[:-2], f.ndim)
        df[0] = (f[1] - f[0]) / (x[1] - x[0])
        df[-1] = (f[-1] - f[-2]) / (x[-1] - x[-2])
        parts.append(np.moveaxis(df, 0, k))
    return np.stack(parts, axis=-1)


def _bcast(v: np.ndarray, ndim: int) -> np.ndarray:
    return v.reshape((-1,) + (1,) * (ndim - 1))


def derivative_magnitude(b: LatticeFunction) -> LatticeFunction:
    """``|Db|`` (Frobenius norm of the difference Jacobian)."""
    jac = lattice_gradient(b)
    return LatticeFunction(b.origin, b.spacing, np.sqrt(np.sum(jac**2, axis=(-2, -1))))


@dataclass(frozen=True)
class HajlaszReport:
    worst_ratio: float
    pair: tuple
    pairs_checked: int


def _node_pairs(shape, sample_pairs: Optional[int], seed: int):
    total = int(np.prod(shape))
    if sample_pairs is None:
        i, j = np.triu_indices(total, k=1)
        return i, j
    rng = np.random.default_rng(seed)
    i = rng.integers(0, total, size=sample_pairs)
    j = rng.integers(0, total, size=sample_pairs)
    keep = i != j
    return i[keep], j[keep]


def _values_and_points(b: LatticeFunction):
    pts = b.nodes().reshape(-1, b.dim)
    vals = b.samples.reshape(pts.shape[0], -1)
    return pts, vals


def hajlasz_check(b: LatticeFunction, sample_pairs: Optional[int] = 20000, seed: int = 0,
                  radii=None) -> HajlaszReport:
    """Worst ``|b(x)-b(y)| / (|x-y| (M|Db|(x) + M|Db|(y)))`` over node pairs.

    ``sample_pairs=None`` checks every pair.  Pairs with a zero denominator
    are skipped.
    """
    if min(b.shape) < 3:
        raise MaximalError("lattice needs at least three nodes per axis")
    mdb = maximal_function(derivative_magnitude(b), radii).samples.reshape(-1)
    pts, vals = _values_and_points(b)
    i, j = _node_pairs(b.shape, sample_pairs, seed)
    num = np.linalg.norm(vals[i] - vals[j], axis=-1)
    den = np.linalg.norm(pts[i] - pts[j], axis=-1) * (mdb[i] + mdb[j])
    ok = den > 0
    if not np.any(ok):
        return HajlaszReport(0.0, (), 0)
    ratio = num[ok] / den[ok]
    w = int(np.argmax(ratio))
    ii, jj = i[ok][w], j[ok][w]
    return HajlaszReport(float(ratio[w]),
                         (tuple(pts[ii]), tuple(pts[jj])), int(ok.sum()))


def onesided_envelope(b: LatticeFunction, p_tilde: float, radii=None) -> LatticeFunction:
    """``g = (M |Db|^p_tilde)^(1/p_tilde)`` with unit constant."""
    if not p_tilde > b.dim:
        raise MaximalError(f"p_tilde must exceed the dimension {b.dim}, got {p_tilde}")
    db = derivative_magnitude(b)
    m = maximal_function(db.with_samples(db.samples**p_tilde), radii)
    return m.with_samples(m.samples ** (1.0 / p_tilde))


def onesided_constant(b: LatticeFunction, envelope: LatticeFunction,
                      pairs: Optional[int] = None, seed: int = 0) -> float:
    """Least ``c`` with ``|b(x)-b(y)| <= c g(x) |x-y|`` over the checked pairs.

    Both orderings of each pair are used.  Returns ``inf`` if some pair has
    a nonzero increment where ``g(x) = 0``.
    """
    pts, vals = _values_and_points(b)
    g = envelope.samples.reshape(-1)
    i, j = _node_pairs(b.shape, pairs, seed)
    i, j = np.concatenate([i, j]), np.concatenate([j, i])
    num = np.linalg.norm(vals[i] - vals[j], axis=-1)
    den = g[i] * np.linalg.norm(pts[i] - pts[j], axis=-1)
    if np.any((den == 0) & (num > 0)):
        return math.inf
    ok = den > 0
    return float(np.max(num[ok] / den[ok])) if np.any(ok) else 0.0


def sobolev_norm(b: LatticeFunction, p: float) -> float:
    """``||b||_p + ||Db||_p`` on the lattice (Riemann sums, differences)."""
    mag = magnitude(b)
    db = derivative_magnitude(b).samples
    if math.isinf(p):
        return float(mag.max() + db.max())
    cell = b.spacing**b.dim
    return float((np.sum(mag**p) * cell) ** (1 / p) + (np.sum(db**p) * cell) ** (1 / p))


@dataclass(frozen=True)
class ContrastReport:
    lhs: float
    sobolev_norm: float
    mu_density_norm: float
    nu_density_norm: float
    distance: float
    ratio: float


def convolve_atoms(b: LatticeFunction, points: np.ndarray, atoms: np.ndarray) -> np.ndarray:
    """``(b * mu)(x) = (1/N) sum_j b(x - y_j)`` at each row of ``points``."""
    out = []
    for x in points:
        out.append(np.asarray(b(x[None, :] - atoms)).reshape(atoms.shape[0], -1).mean(axis=0))
    return np.array(out)


def convolution_contrast(b: LatticeFunction, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                         exponents: Sequence[float], eval_points: Optional[np.ndarray] = None,
                         max_points: int = 512, bandwidth: Optional[float] = None
                         ) -> ContrastReport:
    """Sup-contrast ``|b*mu - b*nu|`` and the factors bounding it.

    The bound is ``||b||_{W^{1,p}} (||mu||_q^{1/r} + ||nu||_q^{1/r}) d_{r'}``
    with ``r' = r / (r - 1)``; density norms come from kernel estimates.

    Raises
    ------
    MaximalError
        If ``r / p + 1 / q > 1``.
    """
    p, q, r = (float(e) for e in exponents)
    if not (p > 1 and q > 1 and r > 1):
        raise MaximalError("exponents must all exceed 1")
    if r / p + 1 / q > 1 + 1e-12:
        raise MaximalError(f"exponents violate r/p + 1/q <= 1: {r / p + 1 / q:.6g}")
    if eval_points is None:
        pts = b.nodes().reshape(-1, b.dim)
        stride = max(1, pts.shape[0] // max_points)
        eval_points = pts[::stride]
    diff = convolve_atoms(b, eval_points, mu.atoms) - convolve_atoms(b, eval_points, nu.atoms)
    lhs = float(np.max(np.linalg.norm(diff, axis=-1)))
    sob = sobolev_norm(b, p)
    mq = kde_density_norm(mu, q, bandwidth)
    nq = kde_density_norm(nu, q, bandwidth)
    r_conj = r / (r - 1)
    dist = wasserstein(mu, nu, r_conj, assignment_cap=max(mu.size, 2048))
    rhs = sob * (mq ** (1 / r) + nq ** (1 / r)) * dist
    ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    return ContrastReport(lhs, sob, mq, nq, dist, ratio)
