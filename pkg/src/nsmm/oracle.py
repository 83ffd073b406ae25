"""Full-tensor reference computations for small problems.

Everything here materializes functions on the whole ``G**r`` grid and
applies the product kernel axis by axis.  None of it reuses the factorized
shortcuts of :mod:`nsmm.model` and :mod:`nsmm.engine`, which makes it a
check on them.  It also runs the infinite-sample algorithm when the target
density is known on the grid ("grid-truth" mode).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import DescentReport
from .errors import PositivityError
from .grid import Grid1D, KernelMatrix
from .model import BinnedDataset, MixtureState, check_compatible
from .operators import (
    TensorField,
    generalized_kl,
    l1_distance,
    outer_product,
    project_multiply,
    smooth_1d,
)

MAX_ORACLE_CELLS = 128 ** 3


def _guard(grids: Sequence[Grid1D]) -> None:
    if len(grids) > 3:
        raise ValueError(f"oracle computations support r <= 3, got r = {len(grids)}")
    cells = int(np.prod([g.G for g in grids]))
    if cells > MAX_ORACLE_CELLS:
        raise ValueError(f"oracle tensor would have {cells} cells (limit {MAX_ORACLE_CELLS})")


def _grids(kernels: Sequence[KernelMatrix]) -> tuple[Grid1D, ...]:
    return tuple(k.grid for k in kernels)


def _apply_axiswise(values: np.ndarray, matrices: Sequence[np.ndarray],
                    deltas: Sequence[float]) -> np.ndarray:
    out = values
    for axis, (A, delta) in enumerate(zip(matrices, deltas)):
        out = np.moveaxis(np.tensordot(A, out, axes=([1], [axis])), 0, axis) * delta
    return out


def tensor_smooth(f: TensorField, kernels: Sequence[KernelMatrix]) -> TensorField:
    """``(S f)(x) = sum_u prod_k K_k[x_k, u_k] f(u) * cell volume``."""
    _guard(f.grids)
    if _grids(kernels) != f.grids:
        raise ValueError("kernels do not match the field's grids")
    values = _apply_axiswise(f.values, [k.K for k in kernels], [k.delta for k in kernels])
    return TensorField(f.grids, values)


def tensor_log_nonlinear_smooth(f: TensorField, kernels: Sequence[KernelMatrix]) -> np.ndarray:
    _guard(f.grids)
    if _grids(kernels) != f.grids:
        raise ValueError("kernels do not match the field's grids")
    if not np.all(f.values > 0):
        raise PositivityError("nonlinear smoothing needs a strictly positive field")
    return _apply_axiswise(np.log(f.values), [k.K.T for k in kernels], [k.delta for k in kernels])


def tensor_nonlinear_smooth(f: TensorField, kernels: Sequence[KernelMatrix]) -> TensorField:
    """``exp(S* log f)`` on the full grid."""
    return TensorField(f.grids, np.exp(tensor_log_nonlinear_smooth(f, kernels)))


def check_commutativity(f: TensorField, kernels: Sequence[KernelMatrix]) -> float:
    """Largest cellwise gap between ``P(S f)`` and ``S(P f)``."""
    if not f.mass() > 0:
        raise ValueError("commutativity check needs positive total mass")
    lhs = project_multiply(tensor_smooth(f, kernels))
    rhs = tensor_smooth(project_multiply(f), kernels)
    return float(np.abs(lhs.values - rhs.values).max())


def assemble_component(state: MixtureState, j: int, kernels: Sequence[KernelMatrix]) -> TensorField:
    """The product-form component ``lam_j prod_k f_jk`` as a full tensor."""
    check_compatible(state, kernels)
    grids = _grids(kernels)
    _guard(grids)
    return TensorField(grids, state.lam[j] * outer_product(list(state.marginals[j])))


def grid_density(values, grids: Sequence[Grid1D]) -> TensorField:
    """Normalize a nonnegative field to unit mass."""
    f = TensorField(tuple(grids), values)
    mass = f.mass()
    if not mass > 0:
        raise ValueError("density needs positive mass")
    return TensorField(f.grids, f.values / mass)


def empirical_density(data: BinnedDataset, kernels: Sequence[KernelMatrix], weights=None) -> TensorField:
    """Atoms of mass ``weights[i] / n`` (default ``1/n``) at the observation cells."""
    grids = _grids(kernels)
    _guard(grids)
    weights = np.ones(data.n) if weights is None else np.asarray(weights, dtype=float)
    values = np.zeros(tuple(g.G for g in grids))
    np.add.at(values, tuple(data.bins.T), weights / data.n)
    return TensorField(grids, values / float(np.prod([g.delta for g in grids])))


def _state_from_tensors(tensors: Sequence[TensorField]) -> MixtureState:
    lam = np.array([t.mass() for t in tensors])
    marginals = np.stack([np.stack([t.marginal(k) / t.mass() for k in range(t.r)]) for t in tensors])
    return MixtureState(lam, marginals)


# ---------------------------------------------------------------------------
# discrete (sample) case


def full_log_nh_at_data(state: MixtureState, data: BinnedDataset,
                        kernels: Sequence[KernelMatrix]) -> np.ndarray:
    cells = tuple(data.bins.T)
    return np.stack([tensor_log_nonlinear_smooth(assemble_component(state, j, kernels), kernels)[cells]
                     for j in range(state.m)], axis=1)


def full_objective(state: MixtureState, data: BinnedDataset, kernels: Sequence[KernelMatrix]) -> float:
    nh = np.exp(full_log_nh_at_data(state, data, kernels))
    return float(-np.mean(np.log(nh.sum(axis=1))) + state.lam.sum())


def full_weights(state: MixtureState, data: BinnedDataset, kernels: Sequence[KernelMatrix]) -> np.ndarray:
    nh = np.exp(full_log_nh_at_data(state, data, kernels))
    return nh / nh.sum(axis=1, keepdims=True)


def full_update(w, data: BinnedDataset, kernels: Sequence[KernelMatrix]) -> list[TensorField]:
    """Next components as ``P(S(g w_j))`` with ``g`` the empirical measure."""
    w = np.asarray(w, dtype=float)
    return [project_multiply(tensor_smooth(empirical_density(data, kernels, w[:, j]), kernels))
            for j in range(w.shape[1])]


# ---------------------------------------------------------------------------
# grid-truth (infinite-sample) case


@dataclass(frozen=True)
class GridTruthReport(DescentReport):
    """Descent audit of one infinite-sample step.

    ``kl_weights`` is ``sum_j KL(g w_j^p, g w_j^{p+1})``;
    ``lower_bound_margin`` is ``objective - 1`` (the objective is at least 1
    when the target has unit mass); ``representation_gap`` compares the
    closed-form update with ``P(S(g w_j))``.
    """

    representation_gap: float = 0.0


def _grid_weights(state: MixtureState, kernels: Sequence[KernelMatrix]) -> np.ndarray:
    log_nh = np.stack([tensor_log_nonlinear_smooth(assemble_component(state, j, kernels), kernels)
                       for j in range(state.m)])
    top = log_nh.max(axis=0)
    nh = np.exp(log_nh - top)
    return nh / nh.sum(axis=0), log_nh


def continuous_objective(g: TensorField, state: MixtureState, kernels: Sequence[KernelMatrix]) -> float:
    """``sum g log(g / sum_j N_h e_j) * vol + sum_j lam_j`` over the grid."""
    _, log_nh = _grid_weights(state, kernels)
    log_total = np.log(np.exp(log_nh).sum(axis=0))
    pos = g.values > 0
    cross = (g.values[pos] * (np.log(g.values[pos]) - log_total[pos])).sum() * g.cell_volume
    return float(cross + state.lam.sum())


def grid_truth_nsmm_step(g: TensorField, state: MixtureState,
                         kernels: Sequence[KernelMatrix], iteration: int = 0):
    """One infinite-sample NSMM step against a known density ``g``.

    Returns the new state and a :class:`GridTruthReport` whose
    ``identity_gap`` measures
    ``l(e^p) - l(e^{p+1}) - sum_j KL(e_j^{p+1}, e_j^p) - sum_j KL(g w_j^p, g w_j^{p+1})``.
    """
    check_compatible(state, kernels)
    _guard(g.grids)
    if g.grids != _grids(kernels):
        raise ValueError("target density and kernels live on different grids")
    if abs(g.mass() - 1.0) > 1e-10:
        raise ValueError(f"target density must have unit mass, got {g.mass()!r}")

    w_old, _ = _grid_weights(state, kernels)
    new_tensors = []
    representation_gap = 0.0
    for j in range(state.m):
        weighted = TensorField(g.grids, g.values * w_old[j])
        mass = weighted.mass()
        closed_form = outer_product([smooth_1d(kernels[k], weighted.marginal(k)) for k in range(g.r)])
        closed_form = closed_form / mass ** (g.r - 1)
        via_operators = project_multiply(tensor_smooth(weighted, kernels))
        representation_gap = max(representation_gap, float(np.abs(closed_form - via_operators.values).max()))
        new_tensors.append(TensorField(g.grids, closed_form))
    new_state = _state_from_tensors(new_tensors)
    w_new, _ = _grid_weights(new_state, kernels)

    old_objective = continuous_objective(g, state, kernels)
    new_objective = continuous_objective(g, new_state, kernels)
    decrease = old_objective - new_objective
    old_tensors = [assemble_component(state, j, kernels) for j in range(state.m)]
    kl_components = sum(generalized_kl(new, old) for new, old in zip(new_tensors, old_tensors))
    kl_weights = sum(generalized_kl(TensorField(g.grids, g.values * w_old[j]),
                                    TensorField(g.grids, g.values * w_new[j]))
                     for j in range(state.m))
    l1 = np.array([l1_distance(new, old) for new, old in zip(new_tensors, old_tensors)])
    report = GridTruthReport(
        iter=iteration,
        objective=new_objective,
        decrease=decrease,
        kl_components=kl_components,
        kl_weights=kl_weights,
        identity_gap=abs(decrease - kl_components - kl_weights),
        l1_bound_slack=decrease - 0.25 * float((l1 ** 2).sum()),
        fixed_point_residual=float(l1.max()),
        lower_bound_margin=new_objective - 1.0,
        representation_gap=representation_gap,
    )
    return new_state, report


# ---------------------------------------------------------------------------
# iterate regularity


@dataclass(frozen=True)
class RegularityReport:
    """Sup and adjacent-cell Lipschitz checks on assembled components.

    ``slope_ratio`` is the largest observed slope divided by its bound
    ``B_l * prod_{k != l} M2_k`` (``B * M2**(r-1)`` for a shared kernel).
    """

    max_value: float
    sup_bound: float
    sup_ok: bool
    max_slope_excess: float
    slope_ratio: float
    lipschitz_ok: bool

    @property
    def passed(self) -> bool:
        return self.sup_ok and self.lipschitz_ok


def check_iterate_regularity(state: MixtureState, kernels: Sequence[KernelMatrix],
                             tol: float = 1e-10) -> RegularityReport:
    M2 = np.array([k.M2 for k in kernels])
    sup_bound = float(np.prod(M2))
    max_value = 0.0
    excess = -np.inf
    ratio = 0.0
    for j in range(state.m):
        e = assemble_component(state, j, kernels).values
        max_value = max(max_value, float(e.max()))
        for axis, kernel in enumerate(kernels):
            if kernel.G < 2:
                continue
            slopes = np.abs(np.diff(e, axis=axis)) / kernel.delta
            bound = kernel.B * float(np.prod(np.delete(M2, axis)))
            excess = max(excess, float(slopes.max() - bound))
            if bound > 0:
                ratio = max(ratio, float(slopes.max() / bound))
            elif slopes.max() > 0:
                ratio = np.inf
    return RegularityReport(
        max_value=max_value,
        sup_bound=sup_bound,
        sup_ok=max_value <= sup_bound * (1 + 1e-12),
        max_slope_excess=float(excess),
        slope_ratio=float(ratio),
        lipschitz_ok=bool(excess <= tol),
    )
