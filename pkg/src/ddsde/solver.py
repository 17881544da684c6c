"""Explicit Euler integration of ``X_t = int_0^t B_s(X_s, L(X_s)) ds + Y_t``.

Three solvers share one stepping rule :func:`euler_step`:

* :func:`integrate_frozen` with the measure flow given in advance,
* :func:`solve_particle_system`, where the flow is the empirical measure of
  the particles themselves,
* :func:`solve_ddsde_picard`, iterating the frozen-flow map on ensembles.

The state is stored as ``X_k = Y_k + Z_k`` with ``Z_0 = 0``, so a zero
drift returns the input ensemble unchanged.  Measures reach the drift with
their atoms in lexicographic order, which makes every solver equivariant
under relabelling of the particles bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .drifts import Drift, MonotonePower
from .measures import DEFAULT_ASSIGNMENT_CAP, Ensemble, Path, TimeGrid


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    grid: TimeGrid
    picard_tol: float = 1e-8
    picard_max_iter: int = 100
    weight_factor: float = 4.0
    assignment_cap: int = DEFAULT_ASSIGNMENT_CAP
    blowup_cap: float = 1e8
    p: float = 1.0
    max_halvings: int = 4

    def __post_init__(self):
        if not self.picard_tol > 0:
            raise ValueError(f"picard_tol must be positive, got {self.picard_tol}")
        if self.picard_max_iter < 1:
            raise ValueError(f"picard_max_iter must be >= 1, got {self.picard_max_iter}")
        if not self.weight_factor > 0:
            raise ValueError("weight_factor must be positive")


@dataclass
class PicardDiagnostics:
    iterations: int = 0
    successive_distances: List[float] = field(default_factory=list)
    contraction_ratios: List[float] = field(default_factory=list)
    converged: bool = False
    halvings: int = 0


def canonical_atoms(points: np.ndarray) -> np.ndarray:
    """Atoms sorted lexicographically (first coordinate most significant)."""
    order = np.lexsort(points.T[::-1])
    return points[order]


def _halving_count(x: np.ndarray, increment: np.ndarray, dt: float,
                   max_halvings: int) -> np.ndarray:
    """Smallest ``m <= max_halvings`` with ``|B| dt / 2^m <= |x| / 2``."""
    r = np.linalg.norm(x, axis=-1)
    step = np.linalg.norm(increment, axis=-1) * dt
    count = np.zeros(x.shape[0], dtype=int)
    bad = (r > 0) & (step > 0.5 * r)
    if np.any(bad):
        need = np.ceil(np.log2(2.0 * step[bad] / r[bad]))
        count[bad] = np.clip(need, 1, max_halvings).astype(int)
    return count


def euler_step(drift: Drift, t: float, y_k: np.ndarray, z_k: np.ndarray,
               atoms: np.ndarray, dt: float, max_halvings: int = 0):
    """One step ``Z_{k+1} = Z_k + B(t_k, Y_k + Z_k, mu_k) dt``.

    For the monotone power family particles whose increment would exceed
    half their distance to the origin are advanced by ``2^m`` substeps
    (``m <= max_halvings``) with ``Y`` and the measure frozen at ``t_k``.

    Returns
    -------
    z_next : ndarray
    halvings : int
        Total number of halvings applied.
    bad : tuple or None
        ``(particle,)`` of the first non-finite drift value, else ``None``.
    """
    x = y_k + z_k
    b = drift.evaluate(t, x, atoms)
    finite = np.all(np.isfinite(b), axis=1)
    if not np.all(finite):
        return None, 0, int(np.flatnonzero(~finite)[0])
    z_next = z_k + b * dt
    halvings = 0
    if max_halvings and isinstance(drift, MonotonePower):
        count = _halving_count(x, b, dt, max_halvings)
        for i in np.flatnonzero(count):
            sub = 2 ** int(count[i])
            h = dt / sub
            zi = z_k[i:i + 1].copy()
            for _ in range(sub):
                zi = zi + drift.evaluate(t, y_k[i:i + 1] + zi, atoms) * h
            z_next[i] = zi[0]
            halvings += int(count[i])
    return z_next, halvings, None


def _check_state(values: np.ndarray, k: int, cap: float):
    norms = np.linalg.norm(values, axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(norms > cap):
        i = int(np.flatnonzero(~(norms <= cap))[0])
        raise SolverError(f"state exceeded the blow-up cap {cap:g} at step {k}, particle {i}")


def _integrate(drift: Drift, y: np.ndarray, grid: TimeGrid, config: SolverConfig,
               flow: Optional[np.ndarray]):
    """Shared loop; ``flow=None`` couples the particles to their own measure."""
    n, m1, d = y.shape
    dt = grid.dt
    t = grid.nodes
    z = np.zeros((n, d))
    out = np.empty_like(y)
    out[:, 0] = y[:, 0]
    halvings = 0
    for k in range(m1 - 1):
        current = y[:, k] + z
        atoms = canonical_atoms(current if flow is None else flow[:, k])
        z, h, bad = euler_step(drift, t[k], y[:, k], z, atoms, dt, config.max_halvings)
        if bad is not None:
            raise SolverError(f"drift is not finite at step {k}, particle {bad}")
        halvings += h
        out[:, k + 1] = y[:, k + 1] + z
        _check_state(out[:, k + 1], k + 1, config.blowup_cap)
    return out, halvings


def integrate_frozen(drift: Drift, flow: Ensemble, y: Path, config: SolverConfig) -> Path:
    """Solve for one input path with the measure flow ``t_k -> flow.slice(k)``."""
    if flow.grid != config.grid or y.grid != config.grid:
        raise SolverError("flow, input path and solver must share one grid")
    out, _ = _integrate(drift, y.values[None], config.grid, config, flow.members)
    return Path(config.grid, out[0])


def solve_particle_system(drift: Drift, inputs: Ensemble, config: SolverConfig) -> Ensemble:
    """Coupled ``N``-particle system driven by ``L^N(X_t)``."""
    if inputs.grid != config.grid:
        raise SolverError("inputs and solver must share one grid")
    out, halvings = _integrate(drift, inputs.members, config.grid, config, None)
    return Ensemble(config.grid, out, seed_record=inputs.seed_record,
                    info={"halvings": halvings})


def weight_profile(g_norms, weight_factor: float) -> np.ndarray:
    """``exp(-c int_0^{t_k} g)`` at every node (non-finite ``g`` counts as 0)."""
    g = np.nan_to_num(np.asarray(g_norms, dtype=float), nan=0.0, posinf=0.0)
    cum = np.concatenate([[0.0], np.cumsum(g)])
    return np.exp(-weight_factor * cum)


def weighted_distance(a: Ensemble, b: Ensemble, g_norms, weight_factor: float = 4.0,
                      p: float = 1.0) -> float:
    """``E[ sup_t w_t |a_t - b_t|^p ]^(1/p)`` with particles paired by index.

    ``w_t = exp(-weight_factor int_0^t g)``.
    """
    if a.members.shape != b.members.shape:
        raise SolverError("ensembles must have the same shape")
    w = weight_profile(g_norms, weight_factor)
    if w.size != a.members.shape[1]:
        raise SolverError("g_norms must have one entry per grid step")
    diff = np.linalg.norm(a.members - b.members, axis=-1)
    sup = np.max(diff * w[None, :], axis=1)
    return float(np.mean(sup**p) ** (1.0 / p))


def solve_ddsde_picard(drift: Drift, inputs: Ensemble, config: SolverConfig,
                       initial: Optional[Ensemble] = None):
    """Fixed point of ``X -> S(Y; L(X))`` on ensemble-represented laws.

    Each iterate integrates every input path against the time slices of the
    previous iterate.  Iteration stops once the weighted distance between
    consecutive iterates is at most ``picard_tol``.

    Parameters
    ----------
    initial : Ensemble, optional
        Starting iterate; defaults to the inputs.

    Returns
    -------
    Ensemble, PicardDiagnostics
    """
    grid = config.grid
    if inputs.grid != grid:
        raise SolverError("inputs and solver must share one grid")
    g_norms = drift.constants(grid).g_norms
    current = inputs.members if initial is None else initial.members
    if current.shape != inputs.members.shape:
        raise SolverError("initial iterate must match the input ensemble")
    diag = PicardDiagnostics()
    for it in range(1, config.picard_max_iter + 1):
        nxt, halvings = _integrate(drift, inputs.members, grid, config, current)
        diag.halvings += halvings
        dist = weighted_distance(Ensemble(grid, nxt), Ensemble(grid, current), g_norms,
                                 config.weight_factor, config.p)
        if diag.successive_distances:
            prev = diag.successive_distances[-1]
            diag.contraction_ratios.append(dist / prev if prev > 0 else 0.0)
        diag.successive_distances.append(dist)
        diag.iterations = it
        current = nxt
        if dist <= config.picard_tol:
            diag.converged = True
            break
    result = Ensemble(grid, current, seed_record=inputs.seed_record,
                      info={"picard_iterations": diag.iterations})
    return result, diag
