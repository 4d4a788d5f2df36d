"""Conditional local-average-treatment-effect estimation.

Estimates the complier treatment effect ratio ``delta(x) =
Cov(Y,Z|X=x) / Cov(D,Z|X=x)`` at every sample point (leave-one-out), builds
the generated variable ``W_i = Y_i + (1 - D_i) * delta(X_i)``, and exposes
full-sample plug-in propensities and conditional means for the downstream
test machinery. A complier-distribution diagnostic for the discrete mode
rounds out the module.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import isotonic_regression

from .core import CONTINUOUS, DISCRETE, EstimationError, InputError, Sample
from .smoothing import KernelFn, KernelSums, boundary_mask, kernel_dot, kernel_sums

__all__ = ["LateFit", "late_discrete", "late_continuous", "complier_cdf", "ComplierCdf"]


@dataclass(frozen=True)
class LateFit:
    """Per-point treatment effect estimates and the generated variable.

    ``delta_at_sample[i]`` is the leave-one-out estimate at ``X_i`` and
    ``w_hat[i] = Y_i + (1 - D_i) * delta_at_sample[i]``, so ``w_hat[i]``
    equals the observed outcome exactly whenever ``D_i = 1``. The callables
    ``propensity(x, z)``, ``cond_mean_y(x, z)`` and ``cond_mean_w(x)`` are
    full-sample plug-ins usable at arbitrary covariate values.
    """

    mode: str
    delta_at_sample: np.ndarray
    w_hat: np.ndarray
    propensity: Callable[[np.ndarray, int], np.ndarray]
    cond_mean_y: Callable[[np.ndarray, int], np.ndarray]
    cond_mean_w: Callable[[np.ndarray], np.ndarray]
    floored_points: np.ndarray
    bandwidth: float | None = None
    levels: np.ndarray | None = None
    loo_sums: KernelSums | None = None
    diagnostics: dict = field(default_factory=dict)


def _cell_masks(sample: Sample):
    levels = sample.levels()
    masks = [sample.covariate == x for x in levels]
    return levels, masks


def late_discrete(sample: Sample) -> LateFit:
    """Leave-one-out complier-effect estimates with a discrete covariate.

    Within each covariate cell the estimate for observation ``i`` is the
    indicator-weighted covariance ratio over the other cell members:

        num_i = sum_{j != i} Y_j Z_j * sum_{j != i} 1 - sum_{j != i} Y_j * sum_{j != i} Z_j
        den_i = sum_{j != i} D_j Z_j * sum_{j != i} 1 - sum_{j != i} D_j * sum_{j != i} Z_j

    restricted to ``X_j = X_i``. A zero ``den_i`` anywhere in a cell means the
    instrument moves nobody there once observation ``i`` is held out, and is a
    hard error.
    """
    if sample.covariate_kind != DISCRETE:
        raise InputError("late_discrete needs a discrete-covariate sample")
    y = sample.outcome
    d = sample.treatment.astype(np.float64)
    z = sample.instrument.astype(np.float64)
    n = sample.n

    delta = np.empty(n, dtype=np.float64)
    levels, masks = _cell_masks(sample)
    n_cell = np.empty((levels.size, 2), dtype=np.int64)
    p_tab = np.empty((levels.size, 2), dtype=np.float64)
    mean_y_tab = np.empty((levels.size, 2), dtype=np.float64)
    mean_w_zy = np.empty(levels.size, dtype=np.float64)

    for k, mask in enumerate(masks):
        yk, dk, zk = y[mask], d[mask], z[mask]
        m = yk.size
        for zz in (0, 1):
            sel = zk == zz
            n_cell[k, zz] = int(np.sum(sel))
            if n_cell[k, zz] == 0:
                raise EstimationError(f"empty (x={levels[k]:g}, z={zz}) cell")
            p_tab[k, zz] = float(np.mean(dk[sel]))
            mean_y_tab[k, zz] = float(np.mean(yk[sel]))
        # Full-cell sums, then the self term is removed per observation.
        s1, sz, sy, syz = m, zk.sum(), yk.sum(), (yk * zk).sum()
        sd, sdz = dk.sum(), (dk * zk).sum()
        s1_i = s1 - 1.0
        sz_i = sz - zk
        num = (syz - yk * zk) * s1_i - (sy - yk) * sz_i
        den = (sdz - dk * zk) * s1_i - (sd - dk) * sz_i
        if np.any(den == 0.0):
            raise EstimationError(f"instrument irrelevant in cell x={levels[k]:g}")
        delta[mask] = num / den

    w_hat = y + (1.0 - d) * delta
    for k, mask in enumerate(masks):
        mean_w_zy[k] = float(np.mean(w_hat[mask]))

    signs = np.sign(p_tab[:, 1] - p_tab[:, 0])
    diagnostics: dict = {}
    if np.unique(signs).size > 1:
        flipped = [float(x) for x in levels[signs != signs[0]]]
        diagnostics["first_stage_sign_flip"] = {"levels": flipped}
    tiny = n_cell.min(axis=1) < 5
    if np.any(tiny):
        diagnostics["small_cells"] = {
            "levels": [float(x) for x in levels[tiny]],
            "min_count": int(n_cell.min()),
        }

    def _lookup(table: np.ndarray, x, z: int) -> np.ndarray:
        idx = np.searchsorted(levels, np.asarray(x, dtype=np.float64))
        idx = np.clip(idx, 0, levels.size - 1)
        return table[idx, z]

    return LateFit(
        mode=DISCRETE,
        delta_at_sample=delta,
        w_hat=w_hat,
        propensity=lambda x, z: _lookup(p_tab, x, z),
        cond_mean_y=lambda x, z: _lookup(mean_y_tab, x, z),
        cond_mean_w=lambda x: mean_w_zy[
            np.clip(np.searchsorted(levels, np.asarray(x, dtype=np.float64)), 0, levels.size - 1)
        ],
        floored_points=np.empty(0, dtype=np.int64),
        levels=levels,
        diagnostics=diagnostics,
    )


def late_continuous(
    sample: Sample,
    h: float,
    kernel: str | KernelFn = "gaussian",
    denominator_floor: float = 1e-10,
    max_floored_fraction: float = 0.05,
) -> LateFit:
    """Leave-one-out kernel-weighted complier-effect estimates.

    At each sample point the estimate is the ratio
    ``(S_yz * S_0 - S_y * S_z) / (S_dz * S_0 - S_d * S_z)`` of leave-one-out
    kernel sums. Denominators are compared on the per-unit-weight covariance
    scale; values below ``denominator_floor`` in absolute value are floored
    (keeping their sign) and recorded, and the fit fails with a weak first
    stage once more than ``max_floored_fraction`` of points needed the floor.
    """
    if not h > 0:
        raise InputError("bandwidth must be positive")
    y = sample.outcome
    d = sample.treatment.astype(np.float64)
    n = sample.n

    sums = kernel_sums(sample, None, h, leave_one_out=True, kernel=kernel)
    s0 = sums.s0
    with np.errstate(invalid="ignore", divide="ignore"):
        num = (sums.s_yz * s0 - sums.s_y * sums.s_z) / np.where(s0 > 0, s0 * s0, 1.0)
        den = (sums.s_dz * s0 - sums.s_d * sums.s_z) / np.where(s0 > 0, s0 * s0, 1.0)
    num = np.where(s0 > 0, num, 0.0)
    den = np.where(s0 > 0, den, 0.0)

    floored = np.flatnonzero(np.abs(den) < denominator_floor)
    if floored.size:
        sign = np.where(den[floored] >= 0.0, 1.0, -1.0)
        den[floored] = sign * denominator_floor
    if floored.size > max_floored_fraction * n:
        raise EstimationError(
            f"weak first stage: {floored.size} of {n} points at the denominator floor"
        )
    delta = num / den
    w_hat = y + (1.0 - d) * delta

    diagnostics: dict = {}
    x_min, x_max = float(sample.covariate.min()), float(sample.covariate.max())
    n_boundary = int(np.sum(boundary_mask(sample.covariate, x_min, x_max, h)))
    if n_boundary:
        diagnostics["boundary_points"] = {"count": n_boundary, "bandwidth": float(h)}
    if floored.size:
        diagnostics["floored_denominators"] = {"count": int(floored.size)}

    clip_count = 0

    def _ratio(x, num_col: np.ndarray, den_col: np.ndarray) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(x, dtype=np.float64))
        cols = np.column_stack((num_col, den_col))
        s = kernel_dot(kernel, sample.covariate, pts, h, cols)
        lo = np.where(np.abs(s[:, 1]) < denominator_floor,
                      np.where(s[:, 1] >= 0, denominator_floor, -denominator_floor),
                      s[:, 1])
        return s[:, 0] / lo

    zf = sample.instrument.astype(np.float64)

    def propensity(x, z: int) -> np.ndarray:
        nonlocal clip_count
        mask = zf if z == 1 else 1.0 - zf
        raw = _ratio(x, d * mask, mask)
        clipped = np.clip(raw, 0.0, 1.0)
        bad = int(np.sum(clipped != raw))
        if bad:
            clip_count += bad
            diagnostics["propensity_clipped"] = {"count": clip_count}
        return clipped

    def cond_mean_y(x, z: int) -> np.ndarray:
        mask = zf if z == 1 else 1.0 - zf
        return _ratio(x, y * mask, mask)

    def cond_mean_w(x) -> np.ndarray:
        return _ratio(x, w_hat, np.ones(n))

    return LateFit(
        mode=CONTINUOUS,
        delta_at_sample=delta,
        w_hat=w_hat,
        propensity=propensity,
        cond_mean_y=cond_mean_y,
        cond_mean_w=cond_mean_w,
        floored_points=floored,
        bandwidth=float(h),
        loo_sums=sums,
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class ComplierCdf:
    """Raw and monotonicity-corrected complier outcome distribution."""

    t_grid: np.ndarray
    raw: np.ndarray
    corrected: np.ndarray
    denominator: float
    max_violation: float


def complier_cdf(sample: Sample, d: int, x: float, t_grid) -> ComplierCdf:
    """Distribution of the d-state outcome among compliers at covariate ``x``.

    Plug-in cell-frequency estimate of

        [P(Y <= t, D = d | x, Z=1) - P(Y <= t, D = d | x, Z=0)]
        / [P(D = d | x, Z=1) - P(D = d | x, Z=0)]

    on ``t_grid``. Raw values may leave [0, 1] in finite samples; the
    ``corrected`` copy is the isotonic (PAVA) projection clipped to [0, 1].
    A large ``max_violation`` — non-monotonicity beyond sampling noise — flags
    a failure of the instrument-support assumptions. Discrete mode only.
    """
    if sample.covariate_kind != DISCRETE:
        raise InputError("complier_cdf is available for discrete covariates only")
    if d not in (0, 1):
        raise InputError("d must be 0 or 1")
    t_grid = np.asarray(t_grid, dtype=np.float64)
    cell = sample.covariate == x
    sel1 = cell & (sample.instrument == 1)
    sel0 = cell & (sample.instrument == 0)
    if not sel1.any() or not sel0.any():
        raise InputError(f"empty (x={x:g}, z) cell")

    def sub_cdf(sel: np.ndarray) -> tuple[np.ndarray, float]:
        m = int(np.sum(sel))
        hit = sel & (sample.treatment == d)
        ys = np.sort(sample.outcome[hit])
        counts = np.searchsorted(ys, t_grid, side="right")
        return counts / m, float(np.sum(hit)) / m

    cdf1, share1 = sub_cdf(sel1)
    cdf0, share0 = sub_cdf(sel0)
    denom = share1 - share0
    if denom == 0.0:
        raise EstimationError(f"no compliers detected at x={x:g}")
    raw = (cdf1 - cdf0) / denom
    corrected = np.clip(isotonic_regression(raw).x, 0.0, 1.0)
    max_violation = float(np.max(np.maximum.accumulate(raw) - raw)) if raw.size else 0.0
    return ComplierCdf(
        t_grid=t_grid,
        raw=raw,
        corrected=corrected,
        denominator=float(denom),
        max_violation=max_violation,
    )
