"""Mixture iterates, binned observations, and the discrete objective."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DataError
from .grid import Grid1D, KernelMatrix
from .operators import log_nonlinear_smooth_1d

UNIT_MASS_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class MixtureState:
    """Component masses ``lam[j]`` and unit-mass marginals ``marginals[j, k, :]``.

    Component ``j`` is the product-form function
    ``e_j(x) = lam[j] * prod_k marginals[j, k, x_k]``.  Arrays are stored
    read-only; derive new states instead of mutating.
    """

    lam: np.ndarray
    marginals: np.ndarray

    def __post_init__(self):
        lam = np.array(self.lam, dtype=float)
        marginals = np.array(self.marginals, dtype=float)
        if lam.ndim != 1 or lam.size == 0:
            raise ValueError(f"lam must be a non-empty vector, got shape {lam.shape}")
        if marginals.ndim != 3 or marginals.shape[0] != lam.size:
            raise ValueError(f"marginals must have shape (m, r, G) with m={lam.size}, got {marginals.shape}")
        if not np.all(np.isfinite(lam)) or not np.all(lam > 0):
            raise ValueError("component masses must be finite and strictly positive")
        if not np.all(np.isfinite(marginals)) or not np.all(marginals > 0):
            raise ValueError("marginals must be finite and strictly positive")
        lam.setflags(write=False)
        marginals.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "marginals", marginals)

    @property
    def m(self) -> int:
        return self.marginals.shape[0]

    @property
    def r(self) -> int:
        return self.marginals.shape[1]

    @property
    def G(self) -> int:
        return self.marginals.shape[2]

    def scaled(self, alpha: float) -> "MixtureState":
        return MixtureState(self.lam * alpha, self.marginals)

    def permuted(self, order: Sequence[int]) -> "MixtureState":
        order = np.asarray(order)
        return MixtureState(self.lam[order], self.marginals[order])

    def equals(self, other: "MixtureState") -> bool:
        return (np.array_equal(self.lam, other.lam)
                and np.array_equal(self.marginals, other.marginals))

    def marginal_masses(self, kernels: Sequence[KernelMatrix]) -> np.ndarray:
        deltas = np.array([k.delta for k in kernels])
        return self.marginals.sum(axis=2) * deltas[None, :]


def check_compatible(state: MixtureState, kernels: Sequence[KernelMatrix]) -> None:
    if len(kernels) != state.r:
        raise ValueError(f"state has {state.r} coordinates but {len(kernels)} kernels were given")
    for k, kernel in enumerate(kernels):
        if kernel.G != state.G:
            raise ValueError(f"coordinate {k}: kernel has {kernel.G} cells, state has {state.G}")


def check_unit_mass(state: MixtureState, kernels: Sequence[KernelMatrix],
                    tol: float = UNIT_MASS_TOL) -> None:
    check_compatible(state, kernels)
    err = np.abs(state.marginal_masses(kernels) - 1.0)
    if err.max() > tol:
        j, k = np.unravel_index(int(err.argmax()), err.shape)
        raise ValueError(f"marginal ({j}, {k}) has mass {1.0 + err[j, k]:.15g} (off by more than {tol})")


@dataclass(frozen=True, eq=False)
class BinnedDataset:
    """Observations together with the grid cell each coordinate falls in."""

    raw: np.ndarray
    bins: np.ndarray
    grids: tuple[Grid1D, ...]

    @property
    def n(self) -> int:
        return self.bins.shape[0]

    @property
    def r(self) -> int:
        return self.bins.shape[1]


def bin_dataset(raw, grids: Sequence[Grid1D]) -> BinnedDataset:
    """Map each coordinate to its nearest grid midpoint.

    A value exactly halfway between two midpoints goes to the lower cell.
    Values outside ``[a_k, b_k]`` raise :class:`DataError`.
    """
    raw = np.array(raw, dtype=float)
    if raw.ndim != 2:
        raise DataError(f"observations must be an n x r array, got shape {raw.shape}")
    grids = tuple(grids)
    if raw.shape[1] != len(grids):
        raise DataError(f"observations have {raw.shape[1]} coordinates but {len(grids)} grids were given")
    if raw.shape[0] == 0:
        raise DataError("no observations")
    bins = np.empty(raw.shape, dtype=np.int64)
    for k, grid in enumerate(grids):
        col = raw[:, k]
        outside = ~((col >= grid.a) & (col <= grid.b))
        if outside.any():
            i = int(np.flatnonzero(outside)[0])
            raise DataError(
                f"row {i}, coordinate {k}: value {col[i]!r} is outside the domain [{grid.a}, {grid.b}]"
            )
        idx = np.ceil((col - grid.a) / grid.delta - 1.0).astype(np.int64)
        bins[:, k] = np.clip(idx, 0, grid.G - 1)
    raw.setflags(write=False)
    bins.setflags(write=False)
    return BinnedDataset(raw=raw, bins=bins, grids=grids)


def component_log_nh(state: MixtureState, data: BinnedDataset,
                     kernels: Sequence[KernelMatrix]) -> np.ndarray:
    """``log (N_h e_j)(x_i)`` as an ``(n, m)`` array."""
    check_compatible(state, kernels)
    if data.r != state.r:
        raise ValueError(f"data has {data.r} coordinates, state has {state.r}")
    out = np.tile(np.log(state.lam), (data.n, 1))
    for k, kernel in enumerate(kernels):
        log_smoothed = np.stack([log_nonlinear_smooth_1d(kernel, state.marginals[j, k])
                                 for j in range(state.m)])
        out += log_smoothed[:, data.bins[:, k]].T
    return out


def objective_from_log_nh(log_nh: np.ndarray, lam: np.ndarray) -> float:
    return float(-logsumexp(log_nh, axis=1).mean() + lam.sum())


def discrete_objective(state: MixtureState, data: BinnedDataset,
                       kernels: Sequence[KernelMatrix]) -> float:
    """``-(1/n) sum_i log sum_j (N_h e_j)(x_i) + sum_j lam_j``."""
    return objective_from_log_nh(component_log_nh(state, data, kernels), state.lam)


def objective_lower_bound(kernels: Sequence[KernelMatrix]) -> float:
    """``-sum_k log M2_k``, below which the discrete objective cannot go."""
    return -float(sum(np.log(k.M2) for k in kernels))


@dataclass(frozen=True)
class RescaleReport:
    """Objective along the ray ``alpha * state`` at a few scalings.

    ``alpha_hat = 1 / sum(lam)`` is the exact minimizer along the ray.
    ``passed`` requires the state itself to sit at the ray minimum, i.e.
    ``sum(lam) == 1`` within ``tol`` and no tested scaling doing better.
    """

    total_mass: float
    alpha_hat: float
    alphas: tuple[float, ...]
    objectives: tuple[float, ...]
    best_alpha: float
    hat_is_best: bool
    passed: bool


def rescale_optimality_check(state: MixtureState, data: BinnedDataset,
                             kernels: Sequence[KernelMatrix], tol: float = 1e-12) -> RescaleReport:
    log_nh = component_log_nh(state, data, kernels)
    base = -logsumexp(log_nh, axis=1).mean()
    total = float(state.lam.sum())
    alpha_hat = 1.0 / total
    alphas = tuple(sorted({0.5, 1.0, 2.0, alpha_hat}))
    # scaling every lam by alpha shifts each log N_h e_j by log(alpha)
    objectives = tuple(float(base - np.log(a) + a * total) for a in alphas)
    best = alphas[int(np.argmin(objectives))]
    hat_value = objectives[alphas.index(alpha_hat)]
    hat_is_best = hat_value <= min(objectives) + 1e-15 * max(1.0, abs(hat_value))
    one_value = objectives[alphas.index(1.0)]
    passed = abs(total - 1.0) <= tol and one_value <= min(objectives) + 1e-15 * max(1.0, abs(one_value))
    return RescaleReport(total_mass=total, alpha_hat=alpha_hat, alphas=alphas, objectives=objectives,
                         best_alpha=best, hat_is_best=bool(hat_is_best), passed=bool(passed))
