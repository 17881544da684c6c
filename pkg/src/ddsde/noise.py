"""Input ensembles ``Y^i_t = xi^i + W^i_t``.

Each particle ``i`` draws from its own generator seeded by
``SeedSequence(seed, spawn_key=(i,))``; growing ``N`` therefore leaves the
first paths untouched.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor

from .lattice import LatticeFunction
from .measures import EmpiricalMeasure, Ensemble, TimeGrid

FBM_NODE_CAP = 4096
JITTER = 1e-12
JITTER_ATTEMPTS = 3
BINARY_MAGIC = b"DDSDEENS"


class NoiseError(ValueError):
    pass


@dataclass(frozen=True)
class InitialLawSpec:
    """Law of the starting point ``xi``.

    Build instances with the classmethods :meth:`point`, :meth:`uniform`,
    :meth:`gaussian` and :meth:`custom_density`.
    """

    kind: str
    dim: int
    params: dict = field(default_factory=dict, compare=False)

    @classmethod
    def point(cls, x0) -> "InitialLawSpec":
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return cls("point", x0.size, {"x0": x0})

    @classmethod
    def uniform(cls, low, high) -> "InitialLawSpec":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        if low.shape != high.shape or np.any(high <= low):
            raise NoiseError("uniform box needs low < high in every coordinate")
        return cls("uniform", low.size, {"low": low, "high": high})

    @classmethod
    def gaussian(cls, mean, variance) -> "InitialLawSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        variance = np.broadcast_to(np.asarray(variance, dtype=float), mean.shape).copy()
        if np.any(variance < 0):
            raise NoiseError("gaussian variances must be nonnegative")
        return cls("gaussian", mean.size, {"mean": mean, "variance": variance})

    @classmethod
    def custom_density(cls, density: LatticeFunction) -> "InitialLawSpec":
        """Density given by lattice samples; negative values are rejected.

        The samples are renormalized so that ``sum * spacing**d == 1``.
        """
        if density.is_vector:
            raise NoiseError("density must be scalar-valued")
        w = np.asarray(density.samples, dtype=float)
        if np.any(w < 0):
            raise NoiseError("density samples must be nonnegative")
        mass = w.sum() * density.spacing**density.dim
        if not mass > 0:
            raise NoiseError("density has zero mass")
        normalized = density.with_samples(w / mass)
        return cls("custom_density", density.dim, {"density": normalized})

    def density_sup(self) -> float:
        """``sup rho`` when the law has a bounded density, else ``inf``."""
        if self.kind == "uniform":
            return float(1.0 / np.prod(self.params["high"] - self.params["low"]))
        if self.kind == "gaussian":
            var = self.params["variance"]
            if np.any(var == 0):
                return math.inf
            return float(np.prod(1.0 / np.sqrt(2 * math.pi * var)))
        if self.kind == "custom_density":
            return float(self.params["density"].samples.max())
        return math.inf


@dataclass(frozen=True)
class NoiseSpec:
    """Initial law plus driving process.

    ``process`` is one of ``"zero"``, ``"brownian"`` (``sigma``), ``"fbm"``
    (``hurst``, ``sigma``) or ``"ou"`` (``theta``, ``sigma``; started at 0).
    """

    initial: InitialLawSpec
    process: str = "zero"
    sigma: float = 0.0
    hurst: float = 0.5
    theta: float = 0.0

    def __post_init__(self):
        if self.process not in ("zero", "brownian", "fbm", "ou"):
            raise NoiseError(f"unknown process {self.process!r}")
        if self.sigma < 0:
            raise NoiseError(f"sigma must be nonnegative, got {self.sigma}")
        if self.process == "fbm" and not 0 < self.hurst < 1:
            raise NoiseError(f"Hurst index must lie in (0, 1), got {self.hurst}")

    @property
    def dim(self) -> int:
        return self.initial.dim


def particle_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(index,)))


def fbm_covariance(nodes: np.ndarray, hurst: float, sigma: float = 1.0) -> np.ndarray:
    """Covariance ``(sigma^2/2)(t^2H + s^2H - |t-s|^2H)`` on the given nodes."""
    t = np.asarray(nodes, dtype=float)
    two_h = 2.0 * hurst
    s, u = np.meshgrid(t, t, indexing="ij")
    return 0.5 * sigma**2 * (s**two_h + u**two_h - np.abs(s - u) ** two_h)


def _fbm_factor(grid: TimeGrid, hurst: float) -> np.ndarray:
    if len(grid) > FBM_NODE_CAP:
        raise NoiseError(
            f"fBm grid has {len(grid)} nodes, above the factorization cap {FBM_NODE_CAP}"
        )
    cov = fbm_covariance(grid.nodes[1:], hurst)
    for attempt in range(JITTER_ATTEMPTS + 1):
        try:
            c, _ = cho_factor(cov + attempt * JITTER * np.eye(cov.shape[0]), lower=True)
            return np.tril(c)
        except np.linalg.LinAlgError:
            continue
    raise NoiseError("fBm covariance is not positive definite after jitter")


def _sample_initial(law: InitialLawSpec, rng: np.random.Generator, info: dict) -> np.ndarray:
    p = law.params
    if law.kind == "point":
        return p["x0"].copy()
    if law.kind == "uniform":
        return p["low"] + (p["high"] - p["low"]) * rng.random(law.dim)
    if law.kind == "gaussian":
        return p["mean"] + np.sqrt(p["variance"]) * rng.standard_normal(law.dim)
    return _sample_custom(p["density"], rng, info)


def _product_marginals(dens: LatticeFunction):
    """Marginals if the density is a rank-one product (else ``None``)."""
    w = dens.samples
    total = w.sum()
    margs = [w.sum(axis=tuple(j for j in range(w.ndim) if j != k)) for k in range(w.ndim)]
    outer = margs[0] / total
    for m in margs[1:]:
        outer = np.multiply.outer(outer, m / total)
    if np.allclose(outer * total, w, rtol=1e-9, atol=1e-12 * w.max()):
        return margs
    return None


def _sample_custom(dens: LatticeFunction, rng, info: dict) -> np.ndarray:
    margs = _product_marginals(dens)
    if margs is not None:
        info.setdefault("initial_sampling", "inverse_cdf")
        return np.array([_invert_linear_cdf(dens.axis(k), m, rng.random())
                         for k, m in enumerate(margs)])
    info.setdefault("initial_sampling", "rejection")
    top = dens.samples.max()
    lo, hi = dens.origin, dens.upper
    for _ in range(100000):
        x = lo + (hi - lo) * rng.random(dens.dim)
        if rng.random() * top <= dens(x):
            return x
    raise NoiseError("rejection sampler failed to accept a point")


def _invert_linear_cdf(x: np.ndarray, f: np.ndarray, u: float) -> float:
    """Quantile ``u`` of the piecewise-linear density through ``(x, f)``."""
    h = x[1] - x[0]
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * h)])
    mass = u * cum[-1]
    j = int(np.clip(np.searchsorted(cum, mass, side="right") - 1, 0, x.size - 2))
    mass -= cum[j]
    # f_j s + slope s^2 / 2 = mass on the cell, s in [0, h]
    slope = (f[j + 1] - f[j]) / h
    root = math.sqrt(max(f[j] ** 2 + 2 * slope * mass, 0.0))
    s = 2 * mass / (f[j] + root) if f[j] + root > 0 else 0.0
    return float(x[j] + min(max(s, 0.0), h))


def sample_paths(spec: NoiseSpec, grid: TimeGrid, n_paths: int, seed: int) -> Ensemble:
    """Draw ``n_paths`` independent input paths.

    Brownian paths use Gaussian increments of variance ``sigma^2 dt``, fBm
    uses the Cholesky factor of the exact covariance, and the OU process
    uses its exact Gaussian transitions.

    Raises
    ------
    NoiseError
        For fBm grids above the factorization cap or a covariance that stays
        indefinite after jitter.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise NoiseError(f"need a positive number of paths, got {n_paths}")
    d, m = spec.dim, grid.steps
    info: dict = {}
    factor = _fbm_factor(grid, spec.hurst) if spec.process == "fbm" else None
    out = np.empty((n_paths, m + 1, d))
    dt = grid.dt
    for i in range(n_paths):
        rng = particle_rng(seed, i)
        xi = _sample_initial(spec.initial, rng, info)
        w = np.zeros((m + 1, d))
        if spec.process == "brownian" and spec.sigma > 0:
            inc = spec.sigma * math.sqrt(dt) * rng.standard_normal((m, d))
            w[1:] = np.cumsum(inc, axis=0)
        elif spec.process == "fbm" and spec.sigma > 0:
            w[1:] = spec.sigma * (factor @ rng.standard_normal((m, d)))
        elif spec.process == "ou" and spec.sigma > 0:
            if spec.theta > 0:
                decay = math.exp(-spec.theta * dt)
                sd = spec.sigma * math.sqrt((1 - decay**2) / (2 * spec.theta))
            else:
                decay, sd = 1.0, spec.sigma * math.sqrt(dt)
            z = rng.standard_normal((m, d))
            for k in range(m):
                w[k + 1] = decay * w[k] + sd * z[k]
        out[i] = xi + w
    if spec.initial.kind == "custom_density":
        info.setdefault("initial_sampling", "inverse_cdf")
    return Ensemble(grid, out, seed_record=int(seed), info=info)


def empirical_input(ensemble: Ensemble) -> EmpiricalMeasure:
    """Path-atom measure ``(1/N) sum delta_{Y^i}``."""
    return ensemble.as_measure()


# ---------------------------------------------------------------------------
# serialization

_HEADER = struct.Struct("<8sqqqdq")


def write_ensemble(ensemble: Ensemble, path) -> None:
    """Binary layout: magic, int64 d, M, N, float64 horizon, int64 seed, data.

    Data are little-endian float64 in ``(particle, node, coordinate)``
    row-major order.
    """
    g = ensemble.grid
    header = _HEADER.pack(BINARY_MAGIC, ensemble.dim, g.steps, ensemble.size,
                          g.horizon, int(ensemble.seed_record))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(ensemble.members, dtype="<f8").tobytes())


def read_ensemble(path) -> Ensemble:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise NoiseError(f"{path}: truncated header")
    magic, d, m, n, horizon, seed = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise NoiseError(f"{path}: not an ensemble file")
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != n * (m + 1) * d:
        raise NoiseError(f"{path}: expected {n * (m + 1) * d} values, found {data.size}")
    return Ensemble(TimeGrid(horizon, m), data.reshape(n, m + 1, d).copy(), seed_record=seed)


def write_ensemble_csv(ensemble: Ensemble, path) -> None:
    """Columns ``particle, k, t, x0, x1, ...``; intended for small ``N``."""
    t = ensemble.grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["particle", "k", "t"] + [f"x{j}" for j in range(ensemble.dim)])
        for i in range(ensemble.size):
            for k in range(len(t)):
                w.writerow([i, k, repr(float(t[k]))]
                           + [repr(float(v)) for v in ensemble.members[i, k]])


def read_ensemble_csv(path, seed_record: int = 0) -> Ensemble:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    d = len(head) - 3
    n = 1 + max(int(r[0]) for r in body)
    m = max(int(r[1]) for r in body)
    horizon = max(float(r[2]) for r in body)
    vals = np.empty((n, m + 1, d))
    for r in body:
        vals[int(r[0]), int(r[1])] = [float(v) for v in r[3:]]
    return Ensemble(TimeGrid(horizon, m), vals, seed_record=seed_record)


def shifted(ensemble: Ensemble, shift, seed_record: Optional[int] = None) -> Ensemble:
    """Copy of ``ensemble`` with every value translated by ``shift``."""
    return Ensemble(ensemble.grid, ensemble.members + np.asarray(shift, dtype=float),
                    seed_record=ensemble.seed_record if seed_record is None else seed_record,
                    info=dict(ensemble.info))
