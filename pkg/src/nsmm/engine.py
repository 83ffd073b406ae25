"""NSMM fixed-point iteration with an exact per-iteration descent audit.

Each iteration maps weights to a new state (minimization step) and the
state back to weights (majorization step).  After every iteration the
decrease of the discrete objective is split into its two nonnegative parts
and every guaranteed inequality is checked; a failed check raises
:class:`~nsmm.errors.InvariantViolation` instead of continuing silently.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvariantViolation
from .grid import KernelMatrix
from .model import (
    BinnedDataset,
    MixtureState,
    check_compatible,
    component_log_nh,
    objective_from_log_nh,
    objective_lower_bound,
)
from .operators import generalized_kl, product_l1_distance

log = logging.getLogger(__name__)

INIT_MODES = ("random-dirichlet", "user-weights")
TERMINATION_REASONS = ("objective-tol", "fixed-point-tol", "max-iter")

DESCENT_TOL = 1e-10
IDENTITY_TOL = 1e-8
L1_BOUND_TOL = 1e-8
LOWER_BOUND_TOL = 1e-10
MASS_TOL = 1e-12
DEGENERATE_MASS = 1e-12


@dataclass(frozen=True)
class FitConfig:
    m: int
    max_iter: int = 500
    tol_objective: float = 1e-9
    tol_fixed_point: float = 1e-8
    seed: int = 0
    init: str = "random-dirichlet"
    parallel: bool = False

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError(f"component count must be a positive integer, got {self.m}")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError(f"max_iter must be a positive integer, got {self.max_iter}")
        if not (self.tol_objective > 0 and self.tol_fixed_point > 0):
            raise ValueError("tolerances must be positive")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")


@dataclass(frozen=True)
class DescentReport:
    """Audit of one NSMM iteration ``e^p -> e^{p+1}``.

    ``objective`` is the value at ``e^{p+1}``; ``decrease`` is
    ``l(e^p) - l(e^{p+1})``, which must equal ``kl_components + kl_weights``.
    """

    iter: int
    objective: float
    decrease: float
    kl_components: float
    kl_weights: float
    identity_gap: float
    l1_bound_slack: float
    fixed_point_residual: float
    lower_bound_margin: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    state: MixtureState
    trace: list[DescentReport]
    converged: bool
    reason: str
    weights: np.ndarray = field(repr=False)
    path: str = "sequential"

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def objective(self) -> float:
        return self.trace[-1].objective if self.trace else float("nan")


def _posterior(log_nh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # dividing shifted exponentials keeps symmetric cases exact (1 for m = 1, 1/2 for twins)
    shifted = log_nh - log_nh.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    total = expd.sum(axis=1, keepdims=True)
    return expd / total, shifted - np.log(total)


def majorization_step(state: MixtureState, data: BinnedDataset,
                      kernels: Sequence[KernelMatrix]) -> np.ndarray:
    """Responsibilities ``w[i, j] = N_h e_j(x_i) / sum_j' N_h e_j'(x_i)``."""
    w, _ = _posterior(component_log_nh(state, data, kernels))
    return w


def _check_weights(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 2 or w.shape[0] != n:
        raise ValueError(f"weights must have shape (n={n}, m), got {w.shape}")
    if not np.all(w > 0):
        raise ValueError("weights must be strictly positive")
    if np.abs(w.sum(axis=1) - 1.0).max() > MASS_TOL:
        raise ValueError("weight rows must sum to 1")
    return w


def _update_coordinate(w: np.ndarray, column_mass: np.ndarray, bins: np.ndarray,
                       kernel: KernelMatrix) -> np.ndarray:
    # per-cell responsibility totals, then one kernel product per component
    totals = np.stack([np.bincount(bins, weights=w[:, j], minlength=kernel.G)
                       for j in range(w.shape[1])])
    return (totals @ kernel.K.T) / column_mass[:, None]


def minimization_step(w, data: BinnedDataset, kernels: Sequence[KernelMatrix],
                      executor: Optional[ThreadPoolExecutor] = None) -> MixtureState:
    """Product-of-smoothed-marginals update from responsibilities.

    ``lam[j] = mean_i w[i, j]`` and
    ``f[j, k, g] = sum_i w[i, j] K_k[g, bin[i, k]] / sum_i w[i, j]``.
    """
    w = _check_weights(w, data.n)
    if len(kernels) != data.r:
        raise ValueError(f"data has {data.r} coordinates but {len(kernels)} kernels were given")
    column_mass = w.sum(axis=0)
    if column_mass.min() <= 0:
        raise ValueError("every component needs positive total responsibility")
    jobs = [(w, column_mass, data.bins[:, k], kernel) for k, kernel in enumerate(kernels)]
    if executor is None:
        coords = [_update_coordinate(*job) for job in jobs]
    else:
        coords = list(executor.map(lambda job: _update_coordinate(*job), jobs))
    return MixtureState(column_mass / data.n, np.stack(coords, axis=1))


def initialize(data: BinnedDataset, config: FitConfig, kernels: Sequence[KernelMatrix],
               weights=None) -> tuple[np.ndarray, MixtureState]:
    """Starting weights and the state obtained from them by one minimization step.

    Random starts draw each row from a flat Dirichlet; if some component
    gets (numerically) no responsibility the draw is repeated once.
    """
    if data.n < config.m:
        raise ValueError(f"need at least m={config.m} observations, got {data.n}")
    if config.init == "user-weights":
        if weights is None:
            raise ValueError("init='user-weights' requires weights")
        w = _check_weights(weights, data.n)
        if w.shape[1] != config.m:
            raise ValueError(f"weights have {w.shape[1]} columns, config.m={config.m}")
        if w.sum(axis=0).min() / data.n < DEGENERATE_MASS:
            raise ValueError("user weights give a component no responsibility")
    else:
        rng = np.random.default_rng(config.seed)
        for attempt in range(2):
            w = rng.dirichlet(np.ones(config.m), size=data.n)
            w /= w.sum(axis=1, keepdims=True)
            if w.sum(axis=0).min() / data.n >= DEGENERATE_MASS and np.all(w > 0):
                break
            log.warning("degenerate random start (attempt %d), redrawing", attempt + 1)
        else:
            raise ValueError("random start left a component without responsibility twice")
    return w, minimization_step(w, data, kernels)


def _kl_between_products(new: MixtureState, old: MixtureState,
                         kernels: Sequence[KernelMatrix]) -> np.ndarray:
    # KL(lam' prod f', lam prod f) = lam' log(lam'/lam) + lam - lam' + lam' sum_k KL(f'_k, f_k)
    out = new.lam * np.log(new.lam / old.lam) + old.lam - new.lam
    for j in range(new.m):
        out[j] += new.lam[j] * sum(generalized_kl(new.marginals[j, k], old.marginals[j, k], kernel.delta)
                                   for k, kernel in enumerate(kernels))
    return out


def component_l1_distances(new: MixtureState, old: MixtureState, kernels: Sequence[KernelMatrix],
                           executor: Optional[ThreadPoolExecutor] = None) -> np.ndarray:
    """``||e'_j - e_j||_1`` for each component."""
    deltas = [k.delta for k in kernels]

    def one(j):
        return product_l1_distance(new.lam[j], new.marginals[j], old.lam[j], old.marginals[j], deltas)

    if executor is None:
        return np.array([one(j) for j in range(new.m)])
    return np.array(list(executor.map(one, range(new.m))))


def _decompose(old: MixtureState, old_log_w: np.ndarray, old_objective: float,
               new: MixtureState, new_log_w: np.ndarray, new_objective: float,
               kernels: Sequence[KernelMatrix], iteration: int,
               executor: Optional[ThreadPoolExecutor] = None) -> DescentReport:
    decrease = old_objective - new_objective
    kl_components = float(_kl_between_products(new, old, kernels).sum())
    kl_weights = float((np.exp(old_log_w) * (old_log_w - new_log_w)).sum() / old_log_w.shape[0])
    l1 = component_l1_distances(new, old, kernels, executor)
    return DescentReport(
        iter=iteration,
        objective=new_objective,
        decrease=decrease,
        kl_components=kl_components,
        kl_weights=kl_weights,
        identity_gap=abs(decrease - kl_components - kl_weights),
        l1_bound_slack=decrease - 0.25 * float((l1 ** 2).sum()),
        fixed_point_residual=float(l1.max()),
        lower_bound_margin=new_objective - objective_lower_bound(kernels),
    )


def descent_decomposition(prev: tuple[MixtureState, np.ndarray], next: tuple[MixtureState, np.ndarray],
                          data: BinnedDataset, kernels: Sequence[KernelMatrix],
                          iteration: int = 0) -> DescentReport:
    """Split ``l(prev) - l(next)`` into component and weight divergences.

    ``prev`` and ``next`` are ``(state, weights)`` pairs where the weights
    are the majorization step of the state; the identity only holds when
    ``next`` state is the minimization step of ``prev`` weights.
    """
    (old, old_w), (new, new_w) = prev, next
    old_objective = objective_from_log_nh(component_log_nh(old, data, kernels), old.lam)
    new_objective = objective_from_log_nh(component_log_nh(new, data, kernels), new.lam)
    return _decompose(old, np.log(old_w), old_objective, new, np.log(new_w), new_objective,
                      kernels, iteration)


def check_state_bounds(state: MixtureState, kernels: Sequence[KernelMatrix]) -> None:
    """Masses sum to one and every marginal value lies in ``[M1, M2]``."""
    total = float(state.lam.sum())
    if abs(total - 1.0) > MASS_TOL:
        raise InvariantViolation("Theorem 1", f"component masses sum to {total!r} after a minimization step")
    for k, kernel in enumerate(kernels):
        values = state.marginals[:, k, :]
        lo, hi = values.min(), values.max()
        if lo < kernel.M1 * (1 - 1e-12) or hi > kernel.M2 * (1 + 1e-12):
            raise InvariantViolation(
                "Lemma 11",
                f"coordinate {k} marginal values span [{lo:.6g}, {hi:.6g}], outside [M1, M2] = "
                f"[{kernel.M1:.6g}, {kernel.M2:.6g}]",
            )


def check_report(report: DescentReport) -> None:
    """Raise on any violated guarantee recorded in ``report``."""
    scale = max(1.0, abs(report.objective))
    if report.decrease < -DESCENT_TOL:
        raise InvariantViolation("MM descent", f"iteration {report.iter}: objective rose by {-report.decrease:.3e}")
    if report.kl_components < -1e-12 * scale or report.kl_weights < -1e-12 * scale:
        raise InvariantViolation(
            "Remark 1",
            f"iteration {report.iter}: negative divergence term "
            f"(components {report.kl_components:.3e}, weights {report.kl_weights:.3e})",
        )
    if report.identity_gap > IDENTITY_TOL * scale:
        raise InvariantViolation("Remark 1", f"iteration {report.iter}: identity gap {report.identity_gap:.3e}")
    if report.l1_bound_slack < -L1_BOUND_TOL:
        raise InvariantViolation("Corollary 5", f"iteration {report.iter}: slack {report.l1_bound_slack:.3e}")
    if report.lower_bound_margin < -LOWER_BOUND_TOL:
        raise InvariantViolation("Lemma 5", f"iteration {report.iter}: margin {report.lower_bound_margin:.3e}")


def canonical_order(state: MixtureState, kernels: Sequence[KernelMatrix]) -> np.ndarray:
    """Sort components by mass (descending), then first-coordinate mean."""
    grid = kernels[0].grid
    means = state.marginals[:, 0, :] @ grid.midpoints * grid.delta
    return np.lexsort((means, -state.lam))


def fit(data: BinnedDataset, config: FitConfig, kernels: Sequence[KernelMatrix],
        weights=None, callback: Optional[Callable[[int, MixtureState], None]] = None) -> FitResult:
    """Iterate the NSMM map until the objective or the iterates stop moving.

    ``callback(p, state)`` is invoked for every iterate ``e^(p)``, starting
    with the state produced by :func:`initialize` (``p = 1``).
    """
    kernels = list(kernels)
    _, state = initialize(data, config, kernels, weights)
    check_compatible(state, kernels)
    check_state_bounds(state, kernels)
    if callback is not None:
        callback(1, state)

    path = "parallel" if config.parallel else "sequential"
    executor = ThreadPoolExecutor() if config.parallel else None
    try:
        log_nh = component_log_nh(state, data, kernels)
        w, log_w = _posterior(log_nh)
        objective = objective_from_log_nh(log_nh, state.lam)
        trace: list[DescentReport] = []
        reason = "max-iter"
        for p in range(config.max_iter):
            new_state = minimization_step(w, data, kernels, executor)
            check_state_bounds(new_state, kernels)
            if callback is not None:
                callback(p + 2, new_state)
            new_log_nh = component_log_nh(new_state, data, kernels)
            new_w, new_log_w = _posterior(new_log_nh)
            new_objective = objective_from_log_nh(new_log_nh, new_state.lam)
            # the state after initialize is e^(1), so this step produces e^(p+2)
            report = _decompose(state, log_w, objective, new_state, new_log_w, new_objective,
                                kernels, iteration=p + 2, executor=executor)
            check_report(report)
            trace.append(report)
            log.debug("iter %d objective %.12g decrease %.3e", report.iter, report.objective, report.decrease)
            state, w, log_w, objective = new_state, new_w, new_log_w, new_objective
            if report.fixed_point_residual < config.tol_fixed_point:
                reason = "fixed-point-tol"
                break
            if abs(report.decrease) < config.tol_objective:
                reason = "objective-tol"
                break
    finally:
        if executor is not None:
            executor.shutdown()

    order = canonical_order(state, kernels)
    return FitResult(state=state.permuted(order), trace=trace, converged=reason != "max-iter",
                     reason=reason, weights=w[:, order], path=path)
