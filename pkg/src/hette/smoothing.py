"""Kernel functions, bandwidth rules, and shared leave-one-out kernel sums.

All kernel evaluation is dense ``O(n * m)`` over ``m`` evaluation points,
chunked so memory stays bounded; no tree or FFT acceleration. The built-in
kernel is the second-order Gaussian; user-supplied kernels plug in through
any callable mapping an array of scaled distances to weights (symmetric,
integrating to one — see :func:`check_kernel`; bias-order requirements of
higher-order kernels are documented, not enforced).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, TYPE_CHECKING

import numpy as np

from .core import EstimationError, InputError, Sample

if TYPE_CHECKING:
    pass

__all__ = [
    "KernelFn",
    "KernelSums",
    "gaussian_kernel",
    "resolve_kernel",
    "check_kernel",
    "bandwidth",
    "kernel_dot",
    "kernel_sums",
    "boundary_mask",
]

KernelFn = Callable[[np.ndarray], np.ndarray]

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# Rows per chunk are sized so a chunk of the weight matrix stays around 8 MB.
_CHUNK_TARGET = 1 << 20


def gaussian_kernel(u):
    """Second-order Gaussian kernel ``(2*pi)**-0.5 * exp(-u**2 / 2)``."""
    u = np.asarray(u, dtype=np.float64)
    return _INV_SQRT_2PI * np.exp(-0.5 * u * u)


_KERNELS: dict[str, KernelFn] = {"gaussian": gaussian_kernel}


def resolve_kernel(kernel: str | KernelFn) -> KernelFn:
    """Map a kernel identifier or callable to the evaluation function."""
    if callable(kernel):
        return kernel
    try:
        return _KERNELS[kernel]
    except KeyError:
        raise InputError(f"unknown kernel {kernel!r}") from None


def check_kernel(kernel: str | KernelFn, halfwidth: float = 12.0, n_grid: int = 24001) -> dict:
    """Numerically probe kernel properties on a fine grid.

    Returns the trapezoid mass, first moment, maximum asymmetry
    ``|K(u) - K(-u)|``, and the maximum value. A well-formed second-order
    kernel has mass ~1, first moment ~0, asymmetry ~0, and a finite bound.
    """
    fn = resolve_kernel(kernel)
    u = np.linspace(-halfwidth, halfwidth, n_grid)
    k = np.asarray(fn(u), dtype=np.float64)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    return {
        "mass": float(trapezoid(k, u)),
        "first_moment": float(trapezoid(u * k, u)),
        "max_asymmetry": float(np.max(np.abs(k - k[::-1]))),
        "bound": float(np.max(np.abs(k))),
    }


def bandwidth(
    rule: str,
    c: float,
    w_values,
    n: int,
    fixed: float | None = None,
) -> float:
    """Bandwidth per the named rule-of-thumb.

    ``"mc"`` gives ``c * std(w) * n**(-1/5)``, ``"empirical"`` gives
    ``c * std(w) * n**(-1/4)`` (conventionally with c = 1.06), and ``"fixed"``
    passes ``fixed`` through. The scale is the sample standard deviation
    (ddof=1) of ``w_values``.
    """
    if rule == "fixed":
        if fixed is None or not fixed > 0:
            raise InputError("fixed bandwidth rule requires a positive value")
        return float(fixed)
    if n < 2:
        raise InputError("bandwidth rules need n >= 2")
    if not c > 0:
        raise InputError("bandwidth constant must be positive")
    std = float(np.std(np.asarray(w_values, dtype=np.float64), ddof=1))
    if not np.isfinite(std) or std <= 0.0:
        raise EstimationError("zero-variance generated variable")
    if rule == "mc":
        return c * std * float(n) ** (-0.2)
    if rule == "empirical":
        return c * std * float(n) ** (-0.25)
    raise InputError(f"unknown bandwidth rule {rule!r}")


def kernel_dot(
    kernel: str | KernelFn,
    x: np.ndarray,
    points: np.ndarray | None,
    h: float,
    cols: np.ndarray,
    leave_one_out: bool = False,
) -> np.ndarray:
    """Kernel-weighted column sums ``out[p, :] = sum_j K((x[j] - points[p]) / h) * cols[j, :]``.

    ``points=None`` evaluates at the sample's own covariates, which is the
    only configuration where ``leave_one_out`` is defined: the j = p self term
    is then excluded. Computation is chunked over evaluation points; chunks
    are row-independent, so the chunk size only moves results at rounding
    level, and it is a fixed module constant so reruns are bit-identical.
    """
    if not h > 0:
        raise InputError("bandwidth must be positive")
    fn = resolve_kernel(kernel)
    x = np.asarray(x, dtype=np.float64)
    if points is None:
        points = x
    elif leave_one_out:
        raise InputError("leave_one_out is only defined at the sample's own points")
    else:
        points = np.asarray(points, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    squeeze = cols.ndim == 1
    if squeeze:
        cols = cols[:, None]

    m = points.shape[0]
    out = np.empty((m, cols.shape[1]), dtype=np.float64)
    step = max(1, _CHUNK_TARGET // max(1, x.shape[0]))
    for start in range(0, m, step):
        stop = min(start + step, m)
        w = fn((x[None, :] - points[start:stop, None]) / h)
        out[start:stop] = w @ cols
    if leave_one_out:
        out -= float(fn(np.zeros(1))[0]) * cols
    return out[:, 0] if squeeze else out


@dataclass(frozen=True)
class KernelSums:
    """The six kernel-weighted sums behind every continuous-mode estimator.

    At each evaluation point, with ``K_j = K((X_j - point) / h)``:
    ``s0 = sum K_j``, ``s_z = sum Z_j K_j``, ``s_y = sum Y_j K_j``,
    ``s_yz = sum Y_j Z_j K_j``, ``s_d = sum D_j K_j``,
    ``s_dz = sum D_j Z_j K_j``. Leave-one-out sums exclude exactly the self
    term.
    """

    points: np.ndarray
    h: float
    leave_one_out: bool
    s0: np.ndarray
    s_z: np.ndarray
    s_y: np.ndarray
    s_yz: np.ndarray
    s_d: np.ndarray
    s_dz: np.ndarray

    def f_xz(self, n: int, z: int) -> np.ndarray:
        """Kernel density of (X, Z=z) at the evaluation points, ``1/(n*h)`` scaling."""
        counts = self.s_z if z == 1 else self.s0 - self.s_z
        return counts / (n * self.h)


def kernel_sums(
    sample: Sample,
    points: np.ndarray | None,
    h: float,
    leave_one_out: bool = False,
    kernel: str | KernelFn = "gaussian",
) -> KernelSums:
    """Evaluate :class:`KernelSums` for a sample at the given points."""
    y = sample.outcome
    z = sample.instrument.astype(np.float64)
    d = sample.treatment.astype(np.float64)
    cols = np.column_stack((np.ones_like(y), z, y, y * z, d, d * z))
    sums = kernel_dot(kernel, sample.covariate, points, h, cols, leave_one_out)
    pts = sample.covariate if points is None else np.asarray(points, dtype=np.float64)
    return KernelSums(
        points=pts,
        h=float(h),
        leave_one_out=leave_one_out,
        s0=sums[:, 0],
        s_z=sums[:, 1],
        s_y=sums[:, 2],
        s_yz=sums[:, 3],
        s_d=sums[:, 4],
        s_dz=sums[:, 5],
    )


def boundary_mask(points: np.ndarray, x_min: float, x_max: float, h: float) -> np.ndarray:
    """Flag evaluation points within one bandwidth of the sample support edge."""
    points = np.asarray(points, dtype=np.float64)
    return (points < x_min + h) | (points > x_max - h)
