"""Tensor-product Lagrangian interpolation over Cartesian knot grids.

Evaluation uses the second (true) barycentric form per dimension, which is
stable for clustered nodes, and contracts the value tensor one dimension at
a time.  A query coordinate that coincides with a knot (to 1e-14 relative)
short-circuits to that knot's slice, avoiding the 0/0 in the barycentric
kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .leja import level_to_knots

__all__ = ["TensorGrid", "TensorInterpolant", "build_grid"]

_COINCIDENT_RTOL = 1e-14


@dataclass(frozen=True)
class TensorGrid:
    """Cartesian product of per-dimension knot prefixes.

    ``points`` enumerates the product in row-major order of the per-dimension
    indices (last dimension fastest).
    """

    beta: tuple[int, ...]
    per_dim_knots: tuple[np.ndarray, ...]
    points: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.beta)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(k) for k in self.per_dim_knots)

    def __len__(self) -> int:
        return self.points.shape[0]


def build_grid(beta, families) -> TensorGrid:
    """Grid with ``level_to_knots(beta_n)`` knots of ``families[n]`` per axis."""
    beta = tuple(int(b) for b in beta)
    families = tuple(families)
    if len(beta) != len(families):
        raise ValueError(f"beta has {len(beta)} components but {len(families)} families given")
    if any(b < 1 for b in beta):
        raise ValueError(f"beta components must be >= 1, got {beta}")
    per_dim = tuple(np.asarray(f.knots(level_to_knots(b)), dtype=float)
                    for f, b in zip(families, beta))
    mesh = np.meshgrid(*per_dim, indexing="ij")
    points = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    return TensorGrid(beta, per_dim, points)


def _barycentric_weights(x: np.ndarray) -> np.ndarray:
    m = x.size
    if m == 1:
        return np.ones(1)
    span = float(x.max() - x.min())
    tol = _COINCIDENT_RTOL * max(1.0, float(np.abs(x).max()))
    diff = x[:, None] - x[None, :]
    off = ~np.eye(m, dtype=bool)
    if np.any(np.abs(diff[off]) <= tol):
        raise ValueError("coincident knots within 1e-14 relative tolerance")
    # Scale by the capacity estimate span/4 to keep products of differences
    # away from overflow/underflow for long sequences.
    scale = span / 4.0
    w = 1.0 / np.prod(np.where(off, diff / scale, 1.0), axis=1)
    return w


def _basis_matrix(knots: np.ndarray, weights: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Barycentric cardinal-basis values, shape (len(t), len(knots))."""
    d = t[:, None] - knots[None, :]
    hit_tol = _COINCIDENT_RTOL * np.maximum(1.0, np.abs(knots))[None, :]
    hits = np.abs(d) <= hit_tol
    safe = np.where(hits, 1.0, d)
    kern = weights[None, :] / safe
    lam = kern / kern.sum(axis=1, keepdims=True)
    rows = hits.any(axis=1)
    if np.any(rows):
        lam[rows] = 0.0
        # First matching knot wins when several are within tolerance.
        first = np.argmax(hits[rows], axis=1)
        lam[np.flatnonzero(rows), first] = 1.0
    return lam


class TensorInterpolant:
    """Lagrangian interpolant of (possibly vector-valued) samples on a grid.

    ``values`` holds one row per grid point, in the grid's enumeration order;
    a 1-D array is treated as a single output.  Immutable after construction,
    safe for concurrent evaluation.
    """

    def __init__(self, grid: TensorGrid, values):
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != len(grid):
            raise ValueError(
                f"values must have one row per grid point ({len(grid)}), got shape {values.shape}")
        self.grid = grid
        self.n_outputs = values.shape[1]
        self._values = np.ascontiguousarray(values).reshape(grid.shape + (self.n_outputs,))
        self._weights = tuple(_barycentric_weights(k) for k in grid.per_dim_knots)

    @property
    def values(self) -> np.ndarray:
        """Stored samples, one row per grid point (point order, then QoIs)."""
        return self._values.reshape(len(self.grid), self.n_outputs)

    def evaluate_many(self, points) -> np.ndarray:
        """Evaluate at an (S, dim) array of points; returns (S, n_outputs)."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.shape[1] != self.grid.dim:
            raise ValueError(f"points have dimension {points.shape[1]}, grid has {self.grid.dim}")
        lams = [_basis_matrix(k, w, points[:, n])
                for n, (k, w) in enumerate(zip(self.grid.per_dim_knots, self._weights))]
        letters = "abcdefghijklmnop"[: self.grid.dim]
        subs = ",".join(f"s{c}" for c in letters) + "," + "".join(letters) + "q->sq"
        return np.einsum(subs, *lams, self._values, optimize=True)

    def evaluate(self, v) -> np.ndarray:
        """Evaluate at a single point; returns (n_outputs,)."""
        return self.evaluate_many(np.asarray(v, dtype=float)[None, :])[0]

    __call__ = evaluate
