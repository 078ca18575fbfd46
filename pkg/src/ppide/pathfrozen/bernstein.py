"""Tensor-product Bernstein approximation on a box with a certified sup-error."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binom

from ..errors import ApproximationError, InputError


def _basis(u: np.ndarray, n: int) -> np.ndarray:
    """Bernstein basis ``B_{k,n}(u)``, shape ``(len(u), n+1)``."""
    return binom.pmf(np.arange(n + 1)[None, :], n, np.clip(u, 0.0, 1.0)[:, None])


def lattice(lows: Sequence[float], highs: Sequence[float], counts: Sequence[int]) -> list[np.ndarray]:
    return [np.linspace(lo, hi, n + 1) for lo, hi, n in zip(lows, highs, counts)]


@dataclass(frozen=True, eq=False)
class BernsteinFit:
    """Bernstein polynomial on ``[lows, highs]`` with coefficient tensor ``coef``.

    ``error`` is the largest deviation from the target seen on the audit
    lattice; ``delta`` is the requested bound (``error <= delta``).
    """

    lows: np.ndarray
    highs: np.ndarray
    coef: np.ndarray
    error: float
    delta: float | None = None

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.coef.shape)

    def __call__(self, *coords) -> np.ndarray:
        """Evaluate at broadcastable coordinate arrays, one per axis."""
        arrs = np.broadcast_arrays(*[np.asarray(c, dtype=float) for c in coords])
        shape = arrs[0].shape
        out = self.coef
        for axis, c in enumerate(arrs):
            u = (c.ravel() - self.lows[axis]) / (self.highs[axis] - self.lows[axis])
            B = _basis(u, self.coef.shape[axis] - 1)
            if axis == 0:
                out = np.tensordot(B, out, axes=(1, 0))
            else:
                out = np.einsum("pk,pk...->p...", B, out)
        return out.reshape(shape)


def bernstein_fit(target: Callable[..., np.ndarray] | None, lows: Sequence[float], highs: Sequence[float],
                  degrees: Sequence[int], delta: float | None = None, audit: int = 2,
                  samples: np.ndarray | None = None) -> BernsteinFit:
    """Fit from target values on the lattice ``audit * degree`` and certify on all of it.

    The coefficients are the target values at the degree lattice (the
    Bernstein operator); the audit lattice refines it ``audit`` times per
    axis and contains it, so the certified error covers the fitting nodes.

    Args:
        target: Vectorized function of one coordinate array per axis
            (meshgrid layout). May be omitted when ``samples`` are given.
        lows, highs: Box corners.
        degrees: Degree per axis.
        delta: Requested sup-error; exceeding it raises
            :class:`~ppide.errors.ApproximationError` carrying the achieved value.
        audit: Refinement factor of the audit lattice (at least 1).
        samples: Precomputed target values on the audit lattice.
    """
    lows = np.asarray(lows, dtype=float)
    highs = np.asarray(highs, dtype=float)
    degrees = [int(n) for n in degrees]
    if not (len(lows) == len(highs) == len(degrees)):
        raise InputError("box corners and degrees must have one entry per axis")
    if np.any(highs <= lows) or min(degrees) < 0 or audit < 1:
        raise InputError("need a nondegenerate box, nonnegative degrees and audit >= 1")
    grids = lattice(lows, highs, [audit * n for n in degrees])
    if samples is None:
        samples = np.asarray(target(*np.meshgrid(*grids, indexing="ij")), dtype=float)
    samples = np.asarray(samples, dtype=float)
    if samples.shape != tuple(len(g) for g in grids):
        raise InputError("samples do not match the audit lattice")
    coef = samples[tuple(slice(None, None, audit) for _ in degrees)]
    fit = BernsteinFit(lows, highs, coef.copy(), 0.0, delta)
    approx = fit(*np.meshgrid(*grids, indexing="ij"))
    err = float(np.max(np.abs(approx - samples)))
    fit = BernsteinFit(lows, highs, coef.copy(), err, delta)
    if delta is not None and err > delta:
        raise ApproximationError(f"Bernstein degree {tuple(degrees)} reaches sup-error {err:.3g} > {delta:.3g}", err)
    return fit
