"""Shared data model, validation, and result types.

Everything downstream (smoothing, LATE estimation, the two tests, the
simulation harness, the CLI) consumes the types defined here. Samples and
configurations are immutable after construction and safe to share across
parallel workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "DISCRETE",
    "CONTINUOUS",
    "HetteError",
    "InputError",
    "EstimationError",
    "Sample",
    "TestConfig",
    "TestReport",
    "ValidationResult",
    "validate_sample",
    "make_grid",
    "bootstrap_pvalue",
    "bootstrap_critical_value",
]

DISCRETE = "discrete"
CONTINUOUS = "continuous"

_MULTIPLIERS = ("rademacher", "normal", "mammen")
_BANDWIDTH_RULES = ("mc", "empirical", "fixed")
_GRID_KINDS = ("quantile", "uniform", "sample")


class HetteError(Exception):
    """Base class for all errors raised by this package."""


class InputError(HetteError):
    """Malformed input data or configuration."""


class EstimationError(HetteError):
    """A numerical failure during estimation (weak first stage, degenerate data)."""


def _as_float_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def _as_flag_vector(values, name: str) -> np.ndarray:
    # Flags are kept as integers, not booleans, so indicator arithmetic reads
    # naturally; non-0/1 content is reported by validate_sample, not here.
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.dtype.kind == "f" and not np.all(np.isfinite(arr)):
        return arr.astype(np.float64)
    return arr.astype(np.int64)


@dataclass(frozen=True)
class Sample:
    """Observed micro-data for one test run.

    Parameters
    ----------
    outcome : array_like
        Outcome values Y, length n.
    treatment : array_like
        Binary treatment flags D in {0, 1}, length n.
    instrument : array_like
        Binary instrument flags Z in {0, 1}, length n.
    covariate : array_like
        Scalar covariate X, length n. Integer-coded levels when discrete.
    covariate_kind : str
        Either ``"discrete"`` or ``"continuous"``.
    """

    outcome: np.ndarray
    treatment: np.ndarray
    instrument: np.ndarray
    covariate: np.ndarray
    covariate_kind: str = DISCRETE

    def __post_init__(self) -> None:
        object.__setattr__(self, "outcome", _as_float_vector(self.outcome, "outcome"))
        object.__setattr__(self, "treatment", _as_flag_vector(self.treatment, "treatment"))
        object.__setattr__(self, "instrument", _as_flag_vector(self.instrument, "instrument"))
        object.__setattr__(self, "covariate", _as_float_vector(self.covariate, "covariate"))
        if self.covariate_kind not in (DISCRETE, CONTINUOUS):
            raise InputError(
                f"covariate_kind must be '{DISCRETE}' or '{CONTINUOUS}', "
                f"got {self.covariate_kind!r}"
            )
        for arr in (self.outcome, self.treatment, self.instrument, self.covariate):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.outcome.shape[0]

    def levels(self) -> np.ndarray:
        """Sorted distinct covariate values (the cells of the discrete test)."""
        return np.unique(self.covariate)


@dataclass(frozen=True)
class ValidationResult:
    """Outcome of :func:`validate_sample`: empty ``violations`` means ok."""

    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_sample(sample: Sample) -> ValidationResult:
    """Check a sample against the preconditions of the tests.

    Pure and order-insensitive: permuting rows yields the identical violation
    set. Returns a diagnostic object rather than raising; callers decide
    severity.
    """
    violations: set[str] = set()
    n = sample.n
    lengths = {
        sample.outcome.shape[0],
        sample.treatment.shape[0],
        sample.instrument.shape[0],
        sample.covariate.shape[0],
    }
    if len(lengths) > 1:
        violations.add("length mismatch between outcome/treatment/instrument/covariate")
        return ValidationResult(tuple(sorted(violations)))
    if n < 2:
        violations.add("sample has fewer than 2 rows")
        return ValidationResult(tuple(sorted(violations)))

    for name, arr in (
        ("outcome", sample.outcome),
        ("treatment", sample.treatment),
        ("instrument", sample.instrument),
        ("covariate", sample.covariate),
    ):
        if not np.all(np.isfinite(arr)):
            violations.add(f"non-finite values in {name}")

    d, z = sample.treatment, sample.instrument
    if not np.isin(d, (0, 1)).all():
        violations.add("treatment contains values outside {0, 1}")
    if not np.isin(z, (0, 1)).all():
        violations.add("instrument contains values outside {0, 1}")
    if violations:
        return ValidationResult(tuple(sorted(violations)))

    if np.unique(z).size < 2:
        violations.add("instrument has a single support point")
    if np.unique(d).size < 2:
        violations.add("treatment has a single support point")

    if sample.covariate_kind == DISCRETE:
        for x in sample.levels():
            cell = sample.covariate == x
            n1 = int(np.sum(cell & (z == 1)))
            n0 = int(np.sum(cell & (z == 0)))
            if n0 == 0:
                violations.add(f"empty (x={x:g}, z=0) cell")
            if n1 == 0:
                violations.add(f"empty (x={x:g}, z=1) cell")
            if n0 > 0 and n1 > 0:
                p1 = np.mean(d[cell & (z == 1)])
                p0 = np.mean(d[cell & (z == 0)])
                if p1 == p0:
                    violations.add(f"zero estimated first stage in cell x={x:g}")

    return ValidationResult(tuple(sorted(violations)))


@dataclass(frozen=True)
class TestConfig:
    """Tuning choices for a single test run.

    Parameters
    ----------
    mode : str or None
        ``"discrete"`` or ``"continuous"``; ``None`` derives the mode from the
        sample's ``covariate_kind``.
    kernel : str or callable
        Kernel identifier (``"gaussian"``) or a user-supplied symmetric
        density; see :mod:`hette.smoothing`.
    bandwidth_rule : str
        ``"mc"`` for ``c * std(W) * n**(-1/5)``, ``"empirical"`` for
        ``c * std(W) * n**(-1/4)``, or ``"fixed"`` (uses ``fixed_bandwidth``).
    bandwidth_constant : float
        The constant ``c`` of the bandwidth rule. Conventional default for the
        empirical rule is 1.06.
    n_bootstrap : int
        Number of multiplier bootstrap draws.
    grid_w, grid_x : int or None
        Number of grid points over the generated variable and (continuous mode
        only) the covariate. ``None`` resolves to ``ceil(n/10)`` for the
        discrete mode and ``ceil(n/20)`` for the continuous mode.
    grid_kind : str
        ``"quantile"`` (default), ``"uniform"``, or ``"sample"`` (all sample
        points; gives the exact supremum in the discrete mode).
    multiplier : str
        ``"rademacher"``, ``"normal"``, or ``"mammen"``. All three have mean 0,
        variance 1, and finite fourth moment.
    seed : int
        Master seed; all bootstrap draws derive deterministic substreams.
    denominator_floor : float
        Guard for propensity-difference and density denominators.
    max_floored_fraction : float
        Error out with "weak first stage" when more than this fraction of
        points needed the denominator floor.
    """

    mode: str | None = None
    kernel: str | Callable = "gaussian"
    bandwidth_rule: str = "mc"
    bandwidth_constant: float = 1.0
    fixed_bandwidth: float | None = None
    n_bootstrap: int = 500
    grid_w: int | None = None
    grid_x: int | None = None
    grid_kind: str = "quantile"
    alpha: float = 0.05
    multiplier: str = "rademacher"
    seed: int = 0
    denominator_floor: float = 1e-10
    max_floored_fraction: float = 0.05

    def __post_init__(self) -> None:
        if self.mode not in (None, DISCRETE, CONTINUOUS):
            raise InputError(f"unknown mode {self.mode!r}")
        if self.bandwidth_rule not in _BANDWIDTH_RULES:
            raise InputError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.bandwidth_rule == "fixed":
            if self.fixed_bandwidth is None or not self.fixed_bandwidth > 0:
                raise InputError("bandwidth_rule 'fixed' requires fixed_bandwidth > 0")
        if not self.bandwidth_constant > 0:
            raise InputError("bandwidth_constant must be positive")
        if self.n_bootstrap < 1:
            raise InputError("n_bootstrap must be at least 1")
        for name, g in (("grid_w", self.grid_w), ("grid_x", self.grid_x)):
            if g is not None and g < 2:
                raise InputError(f"{name} must be at least 2")
        if self.grid_kind not in _GRID_KINDS:
            raise InputError(f"unknown grid_kind {self.grid_kind!r}")
        if not 0.0 < self.alpha < 1.0:
            raise InputError("alpha must lie in (0, 1)")
        if self.multiplier not in _MULTIPLIERS:
            raise InputError(f"unknown multiplier {self.multiplier!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        if not self.denominator_floor > 0:
            raise InputError("denominator_floor must be positive")

    def resolved_mode(self, sample: Sample) -> str:
        return self.mode if self.mode is not None else sample.covariate_kind

    def resolved_grid_w(self, n: int, mode: str) -> int:
        if self.grid_w is not None:
            return self.grid_w
        return max(2, math.ceil(n / 10) if mode == DISCRETE else math.ceil(n / 20))

    def resolved_grid_x(self, n: int) -> int:
        if self.grid_x is not None:
            return self.grid_x
        return max(2, math.ceil(n / 20))


@dataclass(frozen=True)
class TestReport:
    """Result of one test run, with the provenance of every tuning choice."""

    statistic: float
    p_value: float
    critical_value: float
    reject: bool
    bootstrap_draws: np.ndarray
    bandwidth_used: float
    grid_w_used: np.ndarray
    grid_x_used: np.ndarray | None
    mode: str
    alpha: float
    n: int
    n_bootstrap: int
    multiplier: str
    seed: int
    bandwidth_rule: str
    bandwidth_constant: float
    diagnostics: dict = field(default_factory=dict)


def make_grid(values: np.ndarray, size: int, kind: str = "quantile") -> np.ndarray:
    """Evaluation grid over ``[min(values), max(values)]``.

    ``"quantile"`` places points at equally spaced sample quantiles,
    ``"uniform"`` spaces them equally, and ``"sample"`` returns every distinct
    sample point (the grid on which step-function suprema are exact).
    """
    values = np.asarray(values, dtype=np.float64)
    if kind == "sample":
        return np.unique(values)
    if size < 2:
        raise InputError("grids need at least 2 points")
    if kind == "quantile":
        return np.quantile(values, np.linspace(0.0, 1.0, size))
    if kind == "uniform":
        return np.linspace(float(values.min()), float(values.max()), size)
    raise InputError(f"unknown grid kind {kind!r}")


def bootstrap_pvalue(draws: np.ndarray, statistic: float) -> float:
    """Finite-sample-valid bootstrap p-value ``(1 + #{draws >= stat}) / (1 + B)``.

    The +1 convention avoids p = 0 artifacts with small draw counts.
    """
    draws = np.asarray(draws, dtype=np.float64)
    return float((1 + np.count_nonzero(draws >= statistic)) / (1 + draws.size))


def bootstrap_critical_value(draws: np.ndarray, alpha: float) -> float:
    """The (1 - alpha) bootstrap critical value under the same +1 convention.

    Returns the ``floor(alpha * (B + 1))``-th largest draw; rejection of a
    statistic strictly above it matches ``bootstrap_pvalue(...) <= alpha``.
    When ``alpha * (B + 1) < 1`` no rejection is possible and ``inf`` is
    returned. At a statistic exactly tied with the critical value the p-value
    convention governs.
    """
    draws = np.sort(np.asarray(draws, dtype=np.float64))[::-1]
    m = int(math.floor(alpha * (draws.size + 1)))
    if m < 1:
        return float("inf")
    return float(draws[m - 1])
