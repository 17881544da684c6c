"""Regular lattices of samples, with interpolation and a text file format.

File layout (``# ddsde-lattice v1``)::

    # ddsde-lattice v1
    dim 2
    components 1            (append "vector" for R^m-valued samples)
    origin -1.0 -1.0
    spacing 0.01
    shape 201 201
    <samples, row-major over the lattice, components fastest>

Whitespace separates numbers; samples may span any number of lines.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

MAGIC = "# ddsde-lattice v1"


@dataclass(frozen=True, eq=False)
class LatticeFunction:
    """Samples of a function on ``origin + spacing * index``.

    ``samples`` has shape ``shape`` for scalar functions and
    ``shape + (m,)`` for vector-valued ones.  Evaluation is multilinear
    inside the lattice and zero outside it.
    """

    origin: np.ndarray
    spacing: float
    samples: np.ndarray

    def __post_init__(self):
        origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        samples = np.asarray(self.samples, dtype=float)
        d = origin.size
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if samples.ndim not in (d, d + 1):
            raise ValueError(
                f"samples of rank {samples.ndim} do not fit a {d}-dimensional lattice"
            )
        if any(n < 2 for n in samples.shape[:d]):
            raise ValueError("every lattice axis needs at least two nodes")
        if not np.all(np.isfinite(samples)):
            raise ValueError("lattice samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "samples", samples)

    @property
    def dim(self) -> int:
        return self.origin.size

    @property
    def shape(self) -> tuple:
        return self.samples.shape[: self.dim]

    @property
    def components(self) -> int:
        return 1 if self.samples.ndim == self.dim else self.samples.shape[-1]

    @property
    def is_vector(self) -> bool:
        return self.samples.ndim == self.dim + 1

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing * np.arange(self.shape[k])

    def nodes(self) -> np.ndarray:
        """All node coordinates, ``shape + (dim,)``."""
        axes = [self.axis(k) for k in range(self.dim)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.shape) - 1)

    def with_samples(self, samples) -> "LatticeFunction":
        return LatticeFunction(self.origin, self.spacing, samples)

    @classmethod
    def from_callable(cls, fn: Callable, origin, spacing: float, shape: Sequence[int]):
        """Sample ``fn`` (vectorized over ``(..., d)`` points) on a lattice."""
        origin = np.atleast_1d(np.asarray(origin, dtype=float))
        axes = [origin[k] + spacing * np.arange(n) for k, n in enumerate(shape)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return cls(origin, spacing, np.asarray(fn(pts), dtype=float))

    def __call__(self, x) -> np.ndarray:
        """Multilinear interpolation at points ``x`` of shape ``(n, d)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        d = self.dim
        shape = np.array(self.shape)
        u = (x - self.origin) / self.spacing
        inside = np.all((u >= 0) & (u <= shape - 1), axis=1)
        base = np.clip(np.floor(u).astype(np.int64), 0, shape - 2)
        frac = u - base
        out = np.zeros((x.shape[0],) + self.samples.shape[d:])
        for bits in itertools.product((0, 1), repeat=d):
            idx = base + np.array(bits)
            w = np.ones(x.shape[0])
            for k, bit in enumerate(bits):
                w = w * (frac[:, k] if bit else 1.0 - frac[:, k])
            vals = self.samples[tuple(idx.T)]
            out += w.reshape((-1,) + (1,) * (out.ndim - 1)) * vals
        out[~inside] = 0.0
        return out[0] if single else out


def save_lattice(fn: LatticeFunction, path) -> None:
    lines = [
        MAGIC,
        f"dim {fn.dim}",
        f"components {fn.components}" + (" vector" if fn.is_vector else ""),
        "origin " + " ".join(repr(float(v)) for v in fn.origin),
        f"spacing {fn.spacing!r}",
        "shape " + " ".join(str(n) for n in fn.shape),
    ]
    flat = fn.samples.reshape(-1)
    body = "\n".join(" ".join(repr(float(v)) for v in flat[i:i + 8])
                     for i in range(0, flat.size, 8))
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def load_lattice(path) -> LatticeFunction:
    """Read a lattice file written by :func:`save_lattice`."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != MAGIC:
        raise ValueError(f"{path}: missing '{MAGIC}' header")
    header = {}
    i = 1
    for key in ("dim", "components", "origin", "spacing", "shape"):
        parts = text[i].split()
        if not parts or parts[0] != key:
            raise ValueError(f"{path}: expected '{key}' on line {i + 1}")
        header[key] = parts[1:]
        i += 1
    d = int(header["dim"][0])
    m = int(header["components"][0])
    origin = [float(v) for v in header["origin"]]
    spacing = float(header["spacing"][0])
    shape = tuple(int(v) for v in header["shape"])
    if len(origin) != d or len(shape) != d:
        raise ValueError(f"{path}: origin/shape do not match dim {d}")
    data = np.array(" ".join(text[i:]).split(), dtype=float)
    vector = m > 1 or "vector" in header["components"][1:]
    full = shape + ((m,) if vector else ())
    if data.size != int(np.prod(full)):
        raise ValueError(
            f"{path}: expected {int(np.prod(full))} samples, found {data.size}"
        )
    return LatticeFunction(origin, spacing, data.reshape(full))
