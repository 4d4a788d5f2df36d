"""Heterogeneity test for discrete covariates.

The statistic is the supremum over thresholds and covariate cells of the
root-n scaled gap between the two instrument arms' conditional empirical CDFs
of the generated variable. Critical values come from a multiplier bootstrap
of the estimated influence functions: a CDF-centering part (``psi``) plus a
correction for having estimated the complier effect (``phi``), weighted by a
kernel density contrast (``kappa``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    DISCRETE,
    EstimationError,
    InputError,
    Sample,
    TestConfig,
    TestReport,
    bootstrap_critical_value,
    bootstrap_pvalue,
    make_grid,
    validate_sample,
)
from .late import LateFit, late_discrete
from .smoothing import KernelFn, bandwidth, resolve_kernel
from .streams import TAG_BOOTSTRAP, multipliers, substream

__all__ = [
    "InfluenceTableD",
    "BootstrapResult",
    "ks_statistic",
    "influence_table",
    "bootstrap",
    "run_discrete_test",
]

# Bootstrap draws are processed in chunks of this many multiplier vectors.
_DRAW_CHUNK = 256


@dataclass(frozen=True)
class BootstrapResult:
    """Simulated sup statistics with the derived critical value and p-value."""

    draws: np.ndarray
    critical_value: float
    p_value: float


@dataclass(frozen=True)
class InfluenceTableD:
    """Estimated influence functions in cell-factorized form.

    For observation ``i`` in the cell of level ``x`` (zero outside it):

        psi[w, x, i] = (1{W_i <= w} - pooled_cdf[x](w)) * weight_i
        phi[w, x, i] = kappa[x](w) * (W_i - pooled_mean[x]) * weight_i

    with ``weight_i = 1/prob(x, Z=1)`` for instrument-on rows and
    ``-1/prob(x, Z=0)`` for instrument-off rows. ``psi_dense``/``phi_dense``
    materialize the full (grid, level, observation) arrays for small inputs.
    """

    grid_w: np.ndarray
    levels: np.ndarray
    w_hat: np.ndarray
    cell_index: list
    weight: list
    w_dev: list
    pooled_cdf: np.ndarray
    kappa: np.ndarray
    f_wd: np.ndarray
    p_hat: np.ndarray
    cell_prob: np.ndarray
    bandwidth: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.w_hat.shape[0]

    def psi_dense(self) -> np.ndarray:
        out = np.zeros((self.grid_w.size, self.levels.size, self.n))
        for k, idx in enumerate(self.cell_index):
            ind = (self.w_hat[idx][None, :] <= self.grid_w[:, None]).astype(np.float64)
            out[:, k, idx] = (ind - self.pooled_cdf[k][:, None]) * self.weight[k][None, :]
        return out

    def phi_dense(self) -> np.ndarray:
        out = np.zeros((self.grid_w.size, self.levels.size, self.n))
        for k, idx in enumerate(self.cell_index):
            out[:, k, idx] = self.kappa[k][:, None] * (self.w_dev[k] * self.weight[k])[None, :]
        return out


def ks_statistic(
    sample: Sample, late: LateFit, grid_w: np.ndarray
) -> tuple[float, tuple[float, float]]:
    """Sup over (threshold, cell) of ``sqrt(n) |F(w|x,0) - F(w|x,1)|``.

    The conditional CDFs are cell ECDFs of the generated variable. On the
    grid of all sample points the supremum is exact: ECDF differences are
    right-continuous step functions jumping only there. Returns the statistic
    and the maximizing ``(w, x)`` pair.
    """
    grid_w = np.asarray(grid_w, dtype=np.float64)
    if grid_w.size == 0 or np.any(np.diff(grid_w) < 0):
        raise InputError("grid_w must be non-empty and sorted")
    w_hat = late.w_hat
    n = sample.n
    best = -1.0
    arg = (float(grid_w[0]), float(sample.covariate[0]))
    for x in np.unique(sample.covariate):
        cell = sample.covariate == x
        gap = _ecdf_gap(w_hat, sample.instrument, cell, grid_w)
        j = int(np.argmax(gap))
        if gap[j] > best:
            best = float(gap[j])
            arg = (float(grid_w[j]), float(x))
    return float(np.sqrt(n) * best), arg


def _ecdf_gap(w_hat, z, cell, grid_w):
    gaps = np.empty((2, grid_w.size))
    for zz in (0, 1):
        ws = np.sort(w_hat[cell & (z == zz)])
        if ws.size == 0:
            raise EstimationError("empty cell in statistic evaluation")
        gaps[zz] = np.searchsorted(ws, grid_w, side="right") / ws.size
    return np.abs(gaps[0] - gaps[1])


def influence_table(
    sample: Sample,
    late: LateFit,
    grid_w: np.ndarray,
    kernel: str | KernelFn,
    h: float,
    denominator_floor: float = 1e-10,
) -> InfluenceTableD:
    """Plug-in influence functions on ``grid_w`` x covariate levels.

    ``kappa`` contrasts the kernel density estimates of the untreated-joint
    mass ``f(w, D=0 | x, z)`` across instrument arms, over the estimated
    first stage. Both bracket terms follow the population influence processes
    (instrument-on minus instrument-off); the published estimated-``phi``
    display repeats the instrument-off indicator in its second term, which is
    treated here as a typo for the instrument-on indicator.
    """
    if not h > 0:
        raise InputError("bandwidth must be positive")
    fn = resolve_kernel(kernel)
    grid_w = np.asarray(grid_w, dtype=np.float64)
    w_hat = late.w_hat
    n = sample.n
    d = sample.treatment
    z = sample.instrument
    levels = np.unique(sample.covariate)
    n_levels = levels.size

    cell_index: list[np.ndarray] = []
    weight: list[np.ndarray] = []
    w_dev: list[np.ndarray] = []
    pooled_cdf = np.empty((n_levels, grid_w.size))
    kappa = np.empty((n_levels, grid_w.size))
    f_wd = np.empty((n_levels, 2, grid_w.size))
    p_hat = np.empty((n_levels, 2))
    cell_prob = np.empty((n_levels, 2))
    diagnostics: dict = {}
    floored = 0

    for k, x in enumerate(levels):
        cell = sample.covariate == x
        idx = np.flatnonzero(cell)
        cell_index.append(idx)
        ws = np.sort(w_hat[idx])
        pooled_cdf[k] = np.searchsorted(ws, grid_w, side="right") / idx.size
        w_dev.append(w_hat[idx] - w_hat[idx].mean())

        wt = np.empty(idx.size)
        for zz in (0, 1):
            sub = cell & (z == zz)
            n_xz = int(np.sum(sub))
            if n_xz == 0:
                raise EstimationError(f"empty (x={x:g}, z={zz}) cell")
            cell_prob[k, zz] = n_xz / n
            p_hat[k, zz] = float(np.mean(d[sub]))
            # Density of W among untreated rows of the (x, z) cell.
            w0 = w_hat[sub & (d == 0)]
            f_wd[k, zz] = fn((w0[None, :] - grid_w[:, None]) / h).sum(axis=1) / (h * n_xz)
        in_cell_z = z[idx]
        wt[in_cell_z == 1] = 1.0 / cell_prob[k, 1]
        wt[in_cell_z == 0] = -1.0 / cell_prob[k, 0]
        weight.append(wt)

        dp = p_hat[k, 1] - p_hat[k, 0]
        if abs(dp) < denominator_floor:
            dp = denominator_floor if dp >= 0 else -denominator_floor
            floored += 1
        kappa[k] = -(f_wd[k, 1] - f_wd[k, 0]) / dp

    if floored:
        diagnostics["floored_kappa_denominators"] = {"cells": floored}
    return InfluenceTableD(
        grid_w=grid_w,
        levels=levels,
        w_hat=w_hat,
        cell_index=cell_index,
        weight=weight,
        w_dev=w_dev,
        pooled_cdf=pooled_cdf,
        kappa=kappa,
        f_wd=f_wd,
        p_hat=p_hat,
        cell_prob=cell_prob,
        bandwidth=float(h),
        diagnostics=diagnostics,
    )


def bootstrap(
    influence: InfluenceTableD,
    config: TestConfig,
    statistic: float | None = None,
    multiplier_draws: np.ndarray | None = None,
) -> BootstrapResult:
    """Multiplier bootstrap of the sup statistic.

    Each draw ``b`` weights the influence functions with a fresh multiplier
    vector from the deterministic substream ``(seed, TAG_BOOTSTRAP, b)`` and
    records ``sup_(w,x) |n**-0.5 * sum_i U_i (psi + phi)_i(w, x)|``, so draws
    are reproducible and independent of execution order. The p-value (against
    ``statistic``, when given) follows the ``(1 + #) / (1 + B)`` convention.
    ``multiplier_draws`` (a ``(B, n)`` array) bypasses generation; it exists
    as a test hook.
    """
    n = influence.n
    if multiplier_draws is not None:
        u_all = np.asarray(multiplier_draws, dtype=np.float64)
        if u_all.ndim != 2 or u_all.shape[1] != n:
            raise InputError("multiplier_draws must have shape (B, n)")
        n_draws = u_all.shape[0]
    else:
        n_draws = config.n_bootstrap

    # Per-cell sorted structure reused across draws.
    order = [np.argsort(influence.w_hat[idx], kind="stable") for idx in influence.cell_index]
    pos = [
        np.searchsorted(influence.w_hat[idx][o], influence.grid_w, side="right")
        for idx, o in zip(influence.cell_index, order)
    ]

    draws = np.empty(n_draws)
    for start in range(0, n_draws, _DRAW_CHUNK):
        stop = min(start + _DRAW_CHUNK, n_draws)
        if multiplier_draws is not None:
            u = u_all[start:stop]
        else:
            u = np.stack(
                [
                    multipliers(config.multiplier, substream(config.seed, TAG_BOOTSTRAP, b), n)
                    for b in range(start, stop)
                ]
            )
        sup = np.zeros(stop - start)
        for k, idx in enumerate(influence.cell_index):
            c = u[:, idx] * influence.weight[k][None, :]
            # sum_i c_i 1{W_i <= w} via prefix sums in W-sorted order
            prefix = np.cumsum(c[:, order[k]], axis=1)
            s1 = np.where(pos[k][None, :] > 0, prefix[:, pos[k] - 1], 0.0)
            s0 = c.sum(axis=1)
            s2 = c @ influence.w_dev[k]
            z_cell = s1 - influence.pooled_cdf[k][None, :] * s0[:, None]
            z_cell += influence.kappa[k][None, :] * s2[:, None]
            np.maximum(sup, np.abs(z_cell).max(axis=1), out=sup)
        draws[start:stop] = sup / np.sqrt(n)

    return BootstrapResult(
        draws=draws,
        critical_value=bootstrap_critical_value(draws, config.alpha),
        p_value=bootstrap_pvalue(draws, statistic) if statistic is not None else float("nan"),
    )


def run_discrete_test(sample: Sample, config: TestConfig | None = None) -> TestReport:
    """Validate, fit, test, and bootstrap in one call."""
    config = config or TestConfig()
    check = validate_sample(sample)
    if not check.ok:
        raise InputError("invalid sample: " + "; ".join(check.violations))
    late = late_discrete(sample)
    h = bandwidth(
        config.bandwidth_rule,
        config.bandwidth_constant,
        late.w_hat,
        sample.n,
        fixed=config.fixed_bandwidth,
    )
    grid_w = make_grid(late.w_hat, config.resolved_grid_w(sample.n, DISCRETE), config.grid_kind)
    statistic, argmax = test_statistic(sample, late, grid_w)
    table = influence_table(sample, late, grid_w, config.kernel, h, config.denominator_floor)
    boot = bootstrap(table, config, statistic=statistic)
    p_value = boot.p_value
    diagnostics = dict(late.diagnostics)
    diagnostics.update(table.diagnostics)
    diagnostics["statistic_argmax"] = {"w": argmax[0], "x": argmax[1]}
    return TestReport(
        statistic=statistic,
        p_value=p_value,
        critical_value=boot.critical_value,
        reject=p_value <= config.alpha,
        bootstrap_draws=boot.draws,
        bandwidth_used=h,
        grid_w_used=grid_w,
        grid_x_used=None,
        mode=DISCRETE,
        alpha=config.alpha,
        n=sample.n,
        n_bootstrap=boot.draws.size,
        multiplier=config.multiplier,
        seed=config.seed,
        bandwidth_rule=config.bandwidth_rule,
        bandwidth_constant=config.bandwidth_constant,
        diagnostics=diagnostics,
    )
