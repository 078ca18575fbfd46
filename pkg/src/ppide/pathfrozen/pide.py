"""Finite differences for the path-frozen PIDE on a ball (one space dimension).

Inside the inner ball ``|x - y| < r`` the solution satisfies

    -∂_t w - (b - m) ∂_x w - ½ c ∂_xx w - Σ_a λ_a [h(t, x + z_a) - w] - f̂(t, w, ∂_x w, p) = 0,

where ``m = Σ λ_a z_a`` and ``p = Σ λ_a η_a [h(t, x + z_a) - w]``; outside
the ball and at ``T`` it equals the data ``h``. Jumps are at least as long
as the ball is wide in the path-frozen construction, so the nonlocal term
then only reads ``h``; jumps landing inside the ball read the previous time
level. Diffusion, drift and the killing term ``Λ w`` are implicit, the
nonlocal data explicit, and the driver is handled by damped Picard iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from ..bsde import default_eta
from ..errors import AssumptionError, InputError, SolverError
from ..paths import PathHistory
from ..simulate import Characteristics

DataFn = Callable[[float, np.ndarray], np.ndarray]
DriverFn = Callable[[float, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class CylinderGrid:
    """Space-time grid on ``[t0, T] × [y - outer, y + outer]``.

    ``dx = inner / n_inner`` puts the ball boundary on nodes; those nodes
    are exterior. ``values`` is filled by the solver.
    """

    center: float
    inner: float
    outer: float
    t0: float
    T: float
    n_inner: int = 10
    n_t: int = 100
    values: np.ndarray | None = None
    trace: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inner <= 0 or self.outer <= self.inner:
            raise InputError("need 0 < inner radius < outer radius")
        if self.T <= self.t0 or self.n_inner < 1 or self.n_t < 1:
            raise InputError("need a nonempty time interval and positive resolutions")

    @property
    def dx(self) -> float:
        return self.inner / self.n_inner

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_t

    @property
    def x(self) -> np.ndarray:
        J = int(np.ceil(self.outer / self.dx - 1e-9))
        return self.center + self.dx * np.arange(-J, J + 1)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_t + 1)

    @property
    def interior(self) -> np.ndarray:
        return np.abs(self.x - self.center) < self.inner - 1e-9 * self.dx

    def coarsened(self) -> "CylinderGrid":
        """Same cylinder with ``2 dx`` and ``2 dt``."""
        if self.n_inner % 2 or self.n_t % 2:
            raise InputError("coarsening needs even resolutions")
        return CylinderGrid(self.center, self.inner, self.outer, self.t0, self.T, self.n_inner // 2, self.n_t // 2)

    def refined(self) -> "CylinderGrid":
        return CylinderGrid(self.center, self.inner, self.outer, self.t0, self.T, self.n_inner * 2, self.n_t * 2)


@dataclass(frozen=True, eq=False)
class FrozenPideSolution:
    """Node values of ``w`` with evaluation that falls back on ``h`` outside the ball."""

    grid: CylinderGrid
    values: np.ndarray
    h: DataFn
    trace: dict

    def __call__(self, t, x) -> np.ndarray | float:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        tb, xb = np.broadcast_arrays(t, x)
        g = self.grid
        out = np.empty(tb.shape)
        flat_t, flat_x, flat_o = tb.ravel(), xb.ravel(), out.reshape(-1)
        inside = np.abs(flat_x - g.center) < g.inner
        if np.any(~inside):
            for i in np.nonzero(~inside)[0]:
                flat_o[i] = float(np.asarray(self.h(float(flat_t[i]), np.array([flat_x[i]])))[0])
        if np.any(inside):
            ti = np.clip((flat_t[inside] - g.t0) / g.dt, 0, g.n_t)
            k = np.minimum(np.floor(ti).astype(int), g.n_t - 1)
            a = ti - k
            xs = g.x
            row0 = np.array([np.interp(xx, xs, self.values[kk]) for xx, kk in zip(flat_x[inside], k)])
            row1 = np.array([np.interp(xx, xs, self.values[kk + 1]) for xx, kk in zip(flat_x[inside], k)])
            flat_o[inside] = (1 - a) * row0 + a * row1
        return float(out) if out.ndim == 0 else out


def _levy_atoms(char: Characteristics, t: float, center: float, eta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Jump sizes, intensities and ``η`` weights of a state-independent kernel."""
    if char.jumps is None or char.jumps.total_mass == 0:
        return np.zeros(0), np.zeros(0), np.zeros(0)
    hist = PathHistory(np.array([t]), np.full((1, 1, 1), center), np.inf)
    sizes, w = char.jumps.kernel(t, hist)
    sizes = sizes[0, :, 0]
    e = np.array([float(np.asarray(eta(t, hist, np.array([[z]])))[0]) for z in sizes])
    return sizes, np.asarray(w, dtype=float), e


def _jump_values(h: DataFn, t: float, xi_: np.ndarray, sizes: np.ndarray, grid: CylinderGrid, x: np.ndarray,
                 prev: np.ndarray) -> np.ndarray:
    """``w(t, x_i + z_a)``: data ``h`` outside the ball, previous time level inside."""
    if not sizes.size:
        return np.zeros((xi_.size, 0))
    targets = xi_[:, None] + sizes[None, :]
    out = np.asarray(h(t, targets.ravel()), dtype=float).reshape(targets.shape)
    inside = np.abs(targets - grid.center) < grid.inner - 1e-9 * grid.dx
    if inside.any():
        out[inside] = np.interp(targets[inside], x, prev)
    return out


def solve_frozen_pide(h: DataFn, fhat: DriverFn | None, char: Characteristics, grid: CylinderGrid, *,
                      eta=None, scheme: str = "implicit", damping: float = 0.5, tol: float = 1e-10,
                      max_iter: int = 50) -> FrozenPideSolution:
    """Solve backward from ``T`` to ``t0`` on the cylinder.

    Args:
        h: Exterior and terminal data ``h(t, x)`` for an array of points.
        fhat: Frozen driver ``f̂(t, y, z, p)`` on node arrays, or None for ``f ≡ 0``.
        char: Constant one-dimensional characteristics with ``c > 0``.
        grid: Cylinder and resolution; its outer radius must cover ``inner + C0'``.
        eta: Jump weight ``η(t, hist, sizes)``; defaults to ``1 ∧ |z|``.
        scheme: ``"implicit"`` (default) or ``"explicit"`` diffusion step.
        damping: Weight of the previous iterate in the Picard update.
        tol: Relative Picard tolerance.
        max_iter: Picard iteration cap.

    Returns:
        :class:`FrozenPideSolution` with node values of shape ``(n_t + 1, n_x)``.
    """
    if char.dim != 1:
        raise InputError("the frozen PIDE solver handles one space dimension")
    if not char.is_constant:
        raise InputError("the frozen PIDE solver needs constant characteristics")
    if scheme not in ("implicit", "explicit"):
        raise InputError(f"unknown scheme {scheme!r}")
    b = float(char.const_drift[0])
    c = float(char.const_sigma[0, 0] ** 2)
    if c <= 0:
        raise AssumptionError("uniform-ellipticity", "the diffusion coefficient must be positive")
    eta = eta or default_eta
    x, dx, dt = grid.x, grid.dx, grid.dt
    sizes, lam, etas = _levy_atoms(char, grid.t0, grid.center, eta)
    if sizes.size and np.max(np.abs(sizes)) + grid.inner > grid.outer + 1e-12:
        raise InputError("outer radius must cover the inner radius plus the largest jump")
    Lam = float(lam.sum())
    beta = b - float(lam @ sizes)
    a = 0.5 * c
    lo, up = a / dx**2 - beta / (2 * dx), a / dx**2 + beta / (2 * dx)
    upwind = min(lo, up) < 0
    if upwind:
        lo, up = a / dx**2 + max(-beta, 0.0) / dx, a / dx**2 + max(beta, 0.0) / dx
    if scheme == "explicit" and dt * (lo + up + Lam) > 1.0:
        raise SolverError(f"explicit scheme unstable: dt = {dt:.3g} exceeds {1.0 / (lo + up + Lam):.3g}")
    inner = grid.interior
    idx = np.nonzero(inner)[0]
    n = idx.size
    ts = grid.t
    W = np.empty((len(ts), len(x)))
    W[-1] = h(ts[-1], x)
    iters = np.zeros(len(ts) - 1, dtype=int)
    ab = np.zeros((3, n))
    ab[0, 1:] = -up
    ab[1, :] = 1.0 / dt + lo + up + Lam
    ab[2, :-1] = -lo
    xi_ = x[idx]
    for k in range(len(ts) - 2, -1, -1):
        t = ts[k]
        row = h(t, x).astype(float)
        jump_h = _jump_values(h, t, xi_, sizes, grid, x, W[k + 1])
        J = jump_h @ lam
        rhs0 = W[k + 1, idx] / dt + J
        left, right = row[idx[0] - 1], row[idx[-1] + 1]

        def residual_driver(wi):
            if fhat is None:
                return np.zeros(n)
            full = row.copy()
            full[idx] = wi
            dw = (full[idx + 1] - full[idx - 1]) / (2 * dx)
            p = (jump_h - wi[:, None]) @ (lam * etas) if sizes.size else np.zeros(n)
            return np.asarray(fhat(t, wi, dw[:, None], p), dtype=float)

        def step(wi):
            rhs = rhs0 + residual_driver(wi)
            if scheme == "explicit":
                full = W[k + 1].copy()
                prev = full[idx]
                lap = lo * full[idx - 1] + up * full[idx + 1] - (lo + up + Lam) * prev
                return prev + dt * (lap + J + (rhs - rhs0))
            rhs = rhs.copy()
            rhs[0] += lo * left
            rhs[-1] += up * right
            return solve_banded((1, 1), ab, rhs)

        wi = W[k + 1, idx].copy()
        new = step(wi)
        it = 1
        if fhat is not None:
            while True:
                gap = float(np.max(np.abs(new - wi)))
                if gap <= tol * (1.0 + float(np.max(np.abs(new)))):
                    break
                if it >= max_iter:
                    raise SolverError(f"Picard iteration did not converge at t={t:.6g} (gap {gap:.3g})",
                                      step=k, trace={"iterations": iters[k + 1 :].tolist(), "gap": gap})
                wi = new
                new = damping * wi + (1 - damping) * step(wi)
                it += 1
        iters[k] = it
        row[idx] = new
        W[k] = row
    trace = {"picard_iterations_max": int(iters.max()), "upwind": bool(upwind), "scheme": scheme}
    done = CylinderGrid(grid.center, grid.inner, grid.outer, grid.t0, grid.T, grid.n_inner, grid.n_t, W, trace)
    return FrozenPideSolution(done, W, h, trace)


def grid_error_estimate(h: DataFn, fhat: DriverFn | None, char: Characteristics, grid: CylinderGrid,
                        probes_t, probes_x, **kwargs) -> tuple[np.ndarray, np.ndarray]:
    """Fine solution at probes and ``|fine - coarse|`` with the coarse grid at ``2 dx, 2 dt``."""
    fine = solve_frozen_pide(h, fhat, char, grid, **kwargs)
    coarse = solve_frozen_pide(h, fhat, char, grid.coarsened(), **kwargs)
    a = np.asarray(fine(probes_t, probes_x))
    return a, np.abs(a - np.asarray(coarse(probes_t, probes_x)))
