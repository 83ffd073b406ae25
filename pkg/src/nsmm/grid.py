"""Midpoint grids and doubly stochastic smoothing kernels on them.

A kernel ``K`` on a grid with cell width ``delta`` is doubly stochastic with
respect to midpoint quadrature when every row and every column satisfies
``sum(K[g, :]) * delta == 1`` and ``sum(K[:, g]) * delta == 1``.  All
integrals in the package are midpoint sums, so with such a kernel the
smoothing operators preserve mass exactly (up to rounding).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SinkhornError

KERNEL_FAMILIES = ("gaussian", "epanechnikov-floored", "uniform")

#: raw kernel values are floored at this fraction of their maximum
POSITIVITY_FLOOR = 1e-8
SINKHORN_TOL = 1e-12
SINKHORN_MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class Grid1D:
    """``G`` equal cells covering ``[a, b]``, represented by their midpoints."""

    a: float
    b: float
    G: int
    midpoints: np.ndarray = field(repr=False, compare=False)
    delta: float = field(compare=False)


def build_grid(a: float, b: float, G: int) -> Grid1D:
    """Midpoint grid with ``G`` cells on ``[a, b]``."""
    a, b = float(a), float(b)
    if not np.isfinite(a) or not np.isfinite(b) or not a < b:
        raise ValueError(f"grid needs finite a < b, got a={a}, b={b}")
    if int(G) != G or G < 2:
        raise ValueError(f"grid needs an integer G >= 2, got {G}")
    G = int(G)
    delta = (b - a) / G
    midpoints = a + (np.arange(G) + 0.5) * delta
    midpoints.setflags(write=False)
    return Grid1D(a=a, b=b, G=G, midpoints=midpoints, delta=delta)


def quadrature(grid: Grid1D, values) -> float:
    """Midpoint-rule integral of gridded ``values`` over ``[a, b]``."""
    values = np.asarray(values, dtype=float)
    if values.shape != (grid.G,):
        raise ValueError(f"expected {grid.G} values, got shape {values.shape}")
    return float(grid.delta * values.sum())


@dataclass(frozen=True)
class KernelMatrix:
    """Discretized smoothing kernel ``K[g, g'] ~ s_h(midpoint_g, midpoint_g')``.

    ``M1``/``M2`` are the smallest/largest entries and ``B`` the largest
    absolute first-difference slope along either axis; the iterate bounds of
    the fitting engine are stated in terms of these measured constants.
    """

    grid: Grid1D
    K: np.ndarray = field(repr=False)
    h: float
    family: str
    M1: float
    M2: float
    B: float
    sweeps: int = 0

    @property
    def G(self) -> int:
        return self.grid.G

    @property
    def delta(self) -> float:
        return self.grid.delta


def _profile(family: str, z: np.ndarray) -> np.ndarray:
    if family == "gaussian":
        return np.exp(-0.5 * z * z)
    if family == "epanechnikov-floored":
        return np.clip(1.0 - z * z, 0.0, None)
    if family == "uniform":
        return np.ones_like(z)
    raise ValueError(f"unknown kernel family {family!r}; expected one of {KERNEL_FAMILIES}")


def _stochasticity_error(K: np.ndarray, delta: float) -> float:
    rows = K.sum(axis=1) * delta
    cols = K.sum(axis=0) * delta
    return float(max(np.abs(rows - 1.0).max(), np.abs(cols - 1.0).max()))


def sinkhorn(K0: np.ndarray, delta: float, tol: float = SINKHORN_TOL,
             max_sweeps: int = SINKHORN_MAX_SWEEPS) -> tuple[np.ndarray, int]:
    """Alternate row and column scaling until both quadrature sums are 1.

    Returns the scaled matrix and the number of sweeps used.  A matrix that
    already meets the tolerance is returned unchanged with zero sweeps;
    otherwise sweeping continues past ``tol`` toward ``tol / 100`` while the
    budget lasts, so that a further sweep barely moves any entry.
    """
    K = np.array(K0, dtype=float, copy=True)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"sinkhorn needs a square matrix, got shape {K.shape}")
    if not np.all(K > 0):
        raise ValueError("sinkhorn needs a strictly positive matrix")
    if _stochasticity_error(K, delta) < tol:
        return K, 0
    best = None
    for sweep in range(1, max_sweeps + 1):
        K /= (K.sum(axis=1) * delta)[:, None]
        K /= (K.sum(axis=0) * delta)[None, :]
        err = _stochasticity_error(K, delta)
        if err < tol:
            if best is not None and (err < 0.01 * tol or err >= best[0]):
                return (K, sweep) if err < best[0] else best[1:]
            best = (err, K.copy(), sweep)
    if best is not None:
        return best[1], best[2]
    raise SinkhornError(
        f"kernel not doubly stochastic after {max_sweeps} sweeps "
        f"(residual {_stochasticity_error(K, delta):.3e}); bandwidth is likely degenerate"
    )


def finite_difference_slope(K: np.ndarray, delta: float) -> float:
    """Largest ``|K[g+1, g'] - K[g, g']| / delta`` over rows and columns."""
    along_rows = np.abs(np.diff(K, axis=0)).max(initial=0.0)
    along_cols = np.abs(np.diff(K, axis=1)).max(initial=0.0)
    return float(max(along_rows, along_cols) / delta)


def build_kernel(grid: Grid1D, h: float, family: str = "gaussian") -> KernelMatrix:
    """Doubly stochastic kernel of the given family and bandwidth on ``grid``.

    The raw profile ``k((x_g - x_g') / h)`` is floored at ``POSITIVITY_FLOOR``
    times its maximum, so that every entry is strictly positive, and then
    Sinkhorn-scaled.  The uniform family is the constant ``1 / (b - a)``.
    """
    if not np.isfinite(h) or h <= 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if family not in KERNEL_FAMILIES:
        raise ValueError(f"unknown kernel family {family!r}; expected one of {KERNEL_FAMILIES}")
    x = grid.midpoints
    raw = _profile(family, (x[:, None] - x[None, :]) / h)
    if family == "uniform":
        raw = raw / (grid.b - grid.a)
    raw = np.maximum(raw, POSITIVITY_FLOOR * raw.max())
    K, sweeps = sinkhorn(raw, grid.delta)
    if np.array_equal(raw, raw.T):
        # the scaling limit is symmetric; remove the O(tol) drift of the alternation
        K = 0.5 * (K + K.T)
    K.setflags(write=False)
    return KernelMatrix(
        grid=grid,
        K=K,
        h=float(h),
        family=family,
        M1=float(K.min()),
        M2=float(K.max()),
        B=finite_difference_slope(K, grid.delta),
        sweeps=sweeps,
    )
