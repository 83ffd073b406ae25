"""Smoothing operators, projection-multiplication, and divergences on grids.

One-dimensional functions are plain arrays of length ``G`` paired with the
kernel (and hence grid) they live on.  Multivariate functions are
:class:`TensorField` objects and are only used at oracle scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import PositivityError
from .grid import Grid1D, KernelMatrix

MAX_TENSOR_RANK = 3


def _as_gridfunction(kernel: KernelMatrix, f) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape != (kernel.G,):
        raise ValueError(f"function has shape {f.shape}, kernel grid has {kernel.G} cells")
    return f


def smooth_1d(kernel: KernelMatrix, f) -> np.ndarray:
    """``(S f)[g] = sum_g' K[g, g'] f[g'] delta``."""
    f = _as_gridfunction(kernel, f)
    return kernel.K @ f * kernel.delta


def adjoint_smooth_1d(kernel: KernelMatrix, f) -> np.ndarray:
    """``(S* f)[g] = sum_g' K[g', g] f[g'] delta``."""
    f = _as_gridfunction(kernel, f)
    return kernel.K.T @ f * kernel.delta


def _checked_log(f: np.ndarray) -> np.ndarray:
    if not np.all(f > 0):
        bad = int(np.flatnonzero(~(f > 0))[0])
        raise PositivityError(f"nonlinear smoothing needs f > 0; cell {bad} has value {f.flat[bad]!r}")
    return np.log(f)


def log_nonlinear_smooth_1d(kernel: KernelMatrix, f) -> np.ndarray:
    """Logarithm of :func:`nonlinear_smooth_1d`, i.e. ``S* log f``."""
    f = _as_gridfunction(kernel, f)
    return adjoint_smooth_1d(kernel, _checked_log(f))


def nonlinear_smooth_1d(kernel: KernelMatrix, f) -> np.ndarray:
    """Geometric-mean smoother ``exp(S* log f)``; requires ``f > 0`` everywhere."""
    return np.exp(log_nonlinear_smooth_1d(kernel, f))


def nh_component_at(theta: float, marginals: Sequence, kernels: Sequence[KernelMatrix],
                    cell: Sequence[int]) -> float:
    """Nonlinear smoother of ``theta * prod_k marginals[k]`` evaluated at one cell.

    The product kernel lets the smoother act coordinate by coordinate, so no
    ``G**r`` tensor is formed.
    """
    if not (len(marginals) == len(kernels) == len(cell)):
        raise ValueError("marginals, kernels and cell must have one entry per coordinate")
    log_value = math.log(theta)
    for f, kernel, g in zip(marginals, kernels, cell):
        log_value += log_nonlinear_smooth_1d(kernel, f)[g]
    return math.exp(log_value)


@dataclass(frozen=True)
class TensorField:
    """Nonnegative function on the product of ``r <= 3`` grids."""

    grids: tuple[Grid1D, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grids", tuple(self.grids))
        object.__setattr__(self, "values", values)
        if not 1 <= len(self.grids) <= MAX_TENSOR_RANK:
            raise ValueError(f"tensor fields support 1..{MAX_TENSOR_RANK} coordinates, got {len(self.grids)}")
        if values.shape != tuple(g.G for g in self.grids):
            raise ValueError(f"values shape {values.shape} does not match grids")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("tensor field values must be finite and nonnegative")

    @property
    def r(self) -> int:
        return len(self.grids)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([g.delta for g in self.grids]))

    def mass(self) -> float:
        return float(self.values.sum() * self.cell_volume)

    def marginal(self, k: int) -> np.ndarray:
        """Integral over every coordinate except ``k``."""
        others = tuple(i for i in range(self.r) if i != k)
        scale = float(np.prod([self.grids[i].delta for i in others]))
        return self.values.sum(axis=others) * scale


def outer_product(vectors: Sequence[np.ndarray]) -> np.ndarray:
    out = np.asarray(vectors[0], dtype=float)
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def project_multiply(f: TensorField) -> TensorField:
    """Replace ``f`` by the product of its marginals divided by ``mass**(r-1)``."""
    total = f.mass()
    if not total > 0:
        raise ValueError("projection-multiplication needs positive total mass")
    values = outer_product([f.marginal(k) for k in range(f.r)]) / total ** (f.r - 1)
    return TensorField(f.grids, values)


def _cell_weight(cell_volume) -> float:
    if isinstance(cell_volume, Grid1D):
        return cell_volume.delta
    return float(cell_volume)


def generalized_kl(f1, f2, cell_volume=1.0) -> float:
    """``sum [f1 log(f1/f2) + f2 - f1] * cell_volume`` for nonnegative f1, f2.

    Cells with ``f1 == 0`` contribute ``f2``.  Returns ``math.inf`` when
    ``f1 > 0`` on a cell where ``f2 == 0``.  ``cell_volume`` may be a number
    or a :class:`Grid1D`; :class:`TensorField` arguments carry their own.
    """
    if isinstance(f1, TensorField):
        cell_volume = f1.cell_volume
        f1 = f1.values
    if isinstance(f2, TensorField):
        f2 = f2.values
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    if f1.shape != f2.shape:
        raise ValueError(f"shape mismatch {f1.shape} vs {f2.shape}")
    if np.any(f1 < 0) or np.any(f2 < 0):
        raise ValueError("generalized KL needs nonnegative functions")
    weight = _cell_weight(cell_volume)
    if np.any((f1 > 0) & (f2 == 0)):
        return math.inf
    pos = f1 > 0
    terms = f2 - f1
    terms[pos] += f1[pos] * np.log(f1[pos] / f2[pos])
    return float(terms.sum() * weight)


def l1_distance(f1, f2, cell_volume=1.0) -> float:
    """Quadrature of ``|f1 - f2|``."""
    if isinstance(f1, TensorField):
        cell_volume = f1.cell_volume
        f1 = f1.values
    if isinstance(f2, TensorField):
        f2 = f2.values
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    if f1.shape != f2.shape:
        raise ValueError(f"shape mismatch {f1.shape} vs {f2.shape}")
    return float(np.abs(f1 - f2).sum() * _cell_weight(cell_volume))


def product_l1_distance(lam1: float, marginals1: Sequence[np.ndarray],
                        lam2: float, marginals2: Sequence[np.ndarray],
                        deltas: Sequence[float]) -> float:
    """L1 distance between ``lam1 * prod_k f1_k`` and ``lam2 * prod_k f2_k``.

    Exact without materializing the last axis of the ``G**r`` tensor.  For
    each cell ``c`` of the leading ``r - 1`` axes the remaining sum is
    ``sum_w |alpha_c a_w - beta_c b_w|`` with ``alpha_c``, ``beta_c`` the
    leading products; sorting ``w`` by ``a_w / b_w`` splits it into two
    prefix sums located by a binary search on ``beta_c / alpha_c``.
    """
    r = len(marginals1)
    if not (r == len(marginals2) == len(deltas)) or r == 0:
        raise ValueError("marginal lists and deltas must have the same positive length")
    a = np.asarray(marginals1[-1], dtype=float)
    b = np.asarray(marginals2[-1], dtype=float)
    lead_volume = float(np.prod(deltas[:-1])) if r > 1 else 1.0
    if r > 1:
        alpha = lam1 * outer_product(list(marginals1[:-1])).ravel()
        beta = lam2 * outer_product(list(marginals2[:-1])).ravel()
    else:
        alpha = np.array([float(lam1)])
        beta = np.array([float(lam2)])
    if not (np.all(b > 0) and np.all(alpha > 0)):
        tensor1 = lam1 * outer_product(list(marginals1))
        tensor2 = lam2 * outer_product(list(marginals2))
        return float(np.abs(tensor1 - tensor2).sum() * np.prod(deltas))

    order = np.argsort(a / b, kind="stable")
    ratio = (a / b)[order]
    prefix_a = np.concatenate(([0.0], np.cumsum(a[order])))
    prefix_b = np.concatenate(([0.0], np.cumsum(b[order])))
    total_a, total_b = prefix_a[-1], prefix_b[-1]
    # cells with ratio <= beta/alpha contribute beta*b - alpha*a >= 0
    split = np.searchsorted(ratio, beta / alpha, side="right")
    low_a, low_b = prefix_a[split], prefix_b[split]
    per_cell = alpha * ((total_a - low_a) - low_a) - beta * ((total_b - low_b) - low_b)
    return float(per_cell.sum() * lead_volume * deltas[-1])
