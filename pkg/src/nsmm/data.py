"""Data ingestion, synthetic samples, and on-disk formats."""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import DataError
from .grid import KernelMatrix, build_grid, build_kernel
from .model import MixtureState

SCHEMA_VERSION = 1
TRACE_COLUMNS = ("iter", "objective", "decrease", "kl_components", "kl_weights", "identity_gap",
                 "l1_bound_slack", "fixed_point_residual", "lower_bound_margin")


def load_csv(path) -> np.ndarray:
    """Read an ``n x r`` float array from a CSV file with one header row."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise DataError(f"{path}: not valid UTF-8 ({exc})") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [row for row in rows[1:] if row]
    if not body:
        raise DataError(f"{path}: no observations")
    r = len(header)
    out = np.empty((len(body), r))
    for i, row in enumerate(body):
        line = i + 2
        if len(row) != r:
            raise DataError(f"{path}: line {line} has {len(row)} fields, header has {r}")
        for k, cell in enumerate(row):
            try:
                value = float(cell)
            except ValueError:
                raise DataError(f"{path}: line {line}, column {k + 1} ({header[k]!r}): "
                                f"non-numeric value {cell!r}") from None
            if not math.isfinite(value):
                raise DataError(f"{path}: line {line}, column {k + 1} ({header[k]!r}): "
                                f"non-finite value {cell!r}")
            out[i, k] = value
    return out


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, raw: np.ndarray, header: Sequence[str] | None = None) -> None:
    raw = np.asarray(raw, dtype=float)
    header = header or [f"x{k + 1}" for k in range(raw.shape[1])]
    lines = [",".join(header)]
    lines += [",".join(repr(float(v)) for v in row) for row in raw]
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# bandwidth and domain defaults


def silverman_bandwidth(x) -> float:
    """``0.9 * min(sd, IQR / 1.34) * n**(-1/5)``."""
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise DataError("bandwidth rule needs at least two observations")
    sd = float(np.std(x, ddof=1))
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd
    if not spread > 0:
        raise DataError("bandwidth rule needs a non-constant coordinate")
    return 0.9 * spread * x.size ** (-0.2)


def auto_domain(x, h: float) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    return float(x.min() - 3 * h), float(x.max() + 3 * h)


# ---------------------------------------------------------------------------
# synthetic data

MARGINAL_FAMILIES = ("truncated-normal", "beta")


@dataclass(frozen=True)
class MarginalRecipe:
    """A bounded univariate density on ``[lower, upper]``.

    ``truncated-normal`` uses ``mu``/``sigma``; ``beta`` uses shapes ``p``/``q``
    rescaled from ``[0, 1]``.
    """

    family: str
    lower: float
    upper: float
    mu: float = 0.0
    sigma: float = 1.0
    p: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        if self.family not in MARGINAL_FAMILIES:
            raise DataError(f"unknown marginal family {self.family!r}")
        if not self.lower < self.upper:
            raise DataError(f"marginal support needs lower < upper, got [{self.lower}, {self.upper}]")
        if self.family == "truncated-normal" and not self.sigma > 0:
            raise DataError("truncated-normal needs sigma > 0")
        if self.family == "beta" and not (self.p > 0 and self.q > 0):
            raise DataError("beta needs positive shapes")

    def distribution(self):
        if self.family == "truncated-normal":
            a = (self.lower - self.mu) / self.sigma
            b = (self.upper - self.mu) / self.sigma
            return stats.truncnorm(a, b, loc=self.mu, scale=self.sigma)
        return stats.beta(self.p, self.q, loc=self.lower, scale=self.upper - self.lower)

    def pdf(self, x) -> np.ndarray:
        return self.distribution().pdf(x)

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalRecipe":
        return cls(**d)


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    seed: int
    mixing: tuple[float, ...]
    components: tuple[tuple[MarginalRecipe, ...], ...]

    def __post_init__(self):
        mixing = tuple(float(x) for x in self.mixing)
        comps = tuple(tuple(c) for c in self.components)
        object.__setattr__(self, "mixing", mixing)
        object.__setattr__(self, "components", comps)
        if int(self.n) != self.n or self.n < 1:
            raise DataError(f"n must be a positive integer, got {self.n}")
        if len(mixing) == 0 or len(comps) != len(mixing):
            raise DataError("need one marginal list per mixing weight")
        if any(not x > 0 for x in mixing):
            raise DataError("every mixing weight must be strictly positive")
        if abs(sum(mixing) - 1.0) > 1e-12:
            raise DataError(f"mixing weights sum to {sum(mixing)!r}, not 1")
        r = len(comps[0])
        if r == 0 or any(len(c) != r for c in comps):
            raise DataError("every component needs the same positive number of marginals")

    @property
    def m(self) -> int:
        return len(self.mixing)

    @property
    def r(self) -> int:
        return len(self.components[0])

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        spec = cls(
            n=d["n"],
            seed=d.get("seed", 0),
            mixing=tuple(d["mixing"]),
            components=tuple(tuple(MarginalRecipe.from_dict(c) for c in comp) for comp in d["components"]),
        )
        if "m" in d and d["m"] != spec.m:
            raise DataError(f"spec declares m={d['m']} but lists {spec.m} components")
        if "r" in d and d["r"] != spec.r:
            raise DataError(f"spec declares r={d['r']} but components have {spec.r} marginals")
        return spec

    @classmethod
    def from_json(cls, path) -> "SyntheticSpec":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
            return cls.from_dict(d)
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: invalid synthetic spec ({exc})") from None


def simulate(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``spec.n`` observations; returns ``(raw, labels)``."""
    rng = np.random.default_rng(spec.seed)
    labels = rng.choice(spec.m, size=spec.n, p=np.array(spec.mixing))
    raw = np.empty((spec.n, spec.r))
    for j, comp in enumerate(spec.components):
        rows = np.flatnonzero(labels == j)
        for k, recipe in enumerate(comp):
            raw[rows, k] = recipe.distribution().rvs(size=rows.size, random_state=rng)
    return raw, labels


# ---------------------------------------------------------------------------
# model documents


@dataclass
class ModelDocument:
    """Serializable fit result: grids, kernel, state, and fit metadata."""

    coordinates: list[dict]
    kernel: str
    lam: list[float]
    marginals: list[list[list[float]]]
    fit: dict = field(default_factory=dict)
    final_report: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_fit(cls, state: MixtureState, kernels: Sequence[KernelMatrix], fit: dict,
                 final_report: dict) -> "ModelDocument":
        coordinates = [{"a": k.grid.a, "b": k.grid.b, "G": k.grid.G, "h": k.h} for k in kernels]
        return cls(
            coordinates=coordinates,
            kernel=kernels[0].family,
            lam=[float(x) for x in state.lam],
            marginals=state.marginals.tolist(),
            fit=dict(fit),
            final_report=dict(final_report),
        )

    def build_kernels(self) -> list[KernelMatrix]:
        return [build_kernel(build_grid(c["a"], c["b"], c["G"]), c["h"], self.kernel) for c in self.coordinates]

    def to_state(self) -> MixtureState:
        return MixtureState(np.array(self.lam), np.array(self.marginals))

    def to_json(self) -> str:
        # repr-based float output is the shortest string that round-trips exactly
        return json.dumps(asdict(self), indent=1, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModelDocument":
        d = json.loads(text)
        version = d.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataError(f"unsupported model schema version {version!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise DataError(f"malformed model document ({exc})") from None

    def save(self, path) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path) -> "ModelDocument":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def format_trace(reports) -> str:
    lines = [",".join(TRACE_COLUMNS)]
    for rep in reports:
        d = rep.as_dict() if hasattr(rep, "as_dict") else dict(rep)
        lines.append(",".join(str(d["iter"]) if c == "iter" else format(d[c], ".17g") for c in TRACE_COLUMNS))
    return "\n".join(lines) + "\n"


def write_trace(path, reports) -> None:
    atomic_write_text(path, format_trace(reports))


def read_trace(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [{k: (int(v) if k == "iter" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]
