"""Frozen skeletons, the data ``(g, f̃)`` they induce, and the values ``θ_i``.

A skeleton ``π_i = (s_0, y_0; ...; s_{i-1}, y_{i-1})`` records the times and
positions at which a path has moved by ``ε``. Freezing a path at its
skeleton replaces it by the step function through these levels, glued to
the anchor path ``ω*`` on ``[0, s*)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..bsde import Basis, Functional, _backward, _root, default_eta
from ..errors import InputError
from ..operators import Driver
from ..paths import TIME_TOL, CadlagPath, PathHistory, TimePoint, concat
from ..simulate import Characteristics, Ensemble, grid_skeleton, mean_se, simulate


@dataclass(frozen=True)
class FrozenSkeleton:
    """Anchor ``(s*, ω*)`` and skeleton pairs ``(s_j, y_j)`` starting at ``s*``."""

    anchor: TimePoint
    pairs: tuple[tuple[float, np.ndarray], ...]

    def __post_init__(self):
        if not self.pairs:
            raise InputError("a skeleton needs at least one pair")
        d = self.anchor.path.dim
        clean = []
        prev = self.anchor.t
        for t, y in self.pairs:
            y = np.atleast_1d(np.asarray(y, dtype=float))
            if y.shape != (d,):
                raise InputError("skeleton level has the wrong dimension")
            if t < prev - TIME_TOL or t > self.anchor.path.horizon + TIME_TOL:
                raise InputError("skeleton times must be nondecreasing within [s*, T]")
            prev = float(t)
            clean.append((float(t), y))
        if abs(clean[0][0] - self.anchor.t) > TIME_TOL:
            raise InputError("the first skeleton time must be the anchor time")
        object.__setattr__(self, "pairs", tuple(clean))

    @classmethod
    def start(cls, anchor: TimePoint, y0=None) -> "FrozenSkeleton":
        """``π_1 = (s*, y_0)`` with ``y_0 = ω*(s*)`` by default."""
        y0 = anchor.path.value(anchor.t) if y0 is None else y0
        return cls(anchor, ((anchor.t, y0),))

    @property
    def length(self) -> int:
        return len(self.pairs)

    @property
    def s(self) -> float:
        return self.pairs[-1][0]

    @property
    def y(self) -> np.ndarray:
        return self.pairs[-1][1]

    @property
    def horizon(self) -> float:
        return self.anchor.path.horizon

    @property
    def dim(self) -> int:
        return self.anchor.path.dim

    def extend(self, t: float, x) -> "FrozenSkeleton":
        return FrozenSkeleton(self.anchor, self.pairs + ((float(t), np.atleast_1d(np.asarray(x, dtype=float))),))

    def prefix(self, i: int) -> "FrozenSkeleton":
        return FrozenSkeleton(self.anchor, self.pairs[:i])

    def key(self, resolution: float = 1e-9) -> tuple:
        """Hashable key with times and levels rounded to ``resolution``."""
        return tuple((round(t / resolution), tuple(np.round(y / resolution).astype(np.int64))) for t, y in self.pairs)

    def path(self, tail: Sequence[tuple[float, object]] = (), terminal=None) -> CadlagPath:
        """Frozen path: ``ω*`` before ``s*``, skeleton levels, ``tail`` hits, ``terminal`` at ``T``."""
        levels = list(self.pairs) + [(float(t), x) for t, x in tail]
        last = levels[-1][1] if terminal is None else terminal
        return concat(self.anchor.path, self.anchor.t, levels, last)


def frozen_data(skel: FrozenSkeleton, tail: Sequence[tuple[float, object]], x_T, xi: Functional,
                driver: Driver | None = None) -> tuple[float, Callable | None]:
    """``g`` and ``f̃`` for the frozen path ``(π_i; tail; x_T)``.

    Returns ``g = ξ(frozen path)`` and, when ``driver`` is given, the map
    ``f̃(t, y, z, p)`` evaluating the driver at time ``(t ∨ s*) ∧ T`` on the
    frozen path stopped there.
    """
    path = skel.path(tail, x_T)
    g = float(np.asarray(xi(path.history()))[0])
    if driver is None:
        return g, None
    s_star, T = skel.anchor.t, skel.horizon

    def f_tilde(t, y, z, p):
        r = min(max(float(t), s_star), T)
        hist = path.history(r)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        z = np.asarray(z, dtype=float).reshape(y.shape[0], -1)
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return driver(r, hist.select(np.zeros(y.shape[0], dtype=int)), y, z, p)

    return g, f_tilde


# ---------------------------------------------------------------------------
# Vectorized frozen histories


@dataclass(frozen=True, eq=False)
class FrozenEnsemble:
    """Frozen paths of a simulated ensemble shifted by ``x``.

    ``times``/``values`` hold the vertices: the frozen prefix up to ``t``,
    then a jump pair at each grid time. ``terminal`` is the same with
    ``x + X_T`` at ``T``.
    """

    times: np.ndarray
    values: np.ndarray
    terminal: np.ndarray
    n_base: int
    horizon: float
    skeleton_counts: np.ndarray
    frozen: np.ndarray

    def history(self, k: int) -> PathHistory:
        end = self.n_base + 2 * k
        return PathHistory(self.times[:end], self.values[:, :end, :], self.horizon)

    def terminal_history(self) -> PathHistory:
        return PathHistory(self.times, self.terminal, self.horizon)


def freeze(skel: FrozenSkeleton, t: float, x, X: np.ndarray, grid: np.ndarray, eps: float) -> FrozenEnsemble:
    """Freeze the shifted paths ``x + X`` (grid values ``(N, M+1, d)``) at their ε-skeletons.

    The first exit is measured from the last skeleton level ``y``, later
    exits from the previous hit, all on the simulation grid.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Y = x + X
    N, M1, d = Y.shape
    sk = grid_skeleton(Y, eps, center=skel.y)
    base = skel.path().history(t)
    bt, bv = base.times, base.values[0]
    jumped = len(bt) >= 2 and abs(bt[-1] - bt[-2]) <= TIME_TOL
    if jumped:
        bt, bv = bt[:-1], bv[:-1]
    K0 = len(bt)
    times = np.concatenate([bt, [grid[0]], np.repeat(grid[1:], 2)])
    values = np.empty((N, K0 + 1 + 2 * (M1 - 1), d))
    values[:, :K0] = bv
    values[:, K0] = sk.frozen[:, 0]
    values[:, K0 + 1 :: 2] = sk.frozen[:, :-1]
    values[:, K0 + 2 :: 2] = sk.frozen[:, 1:]
    terminal = values.copy()
    terminal[:, -1] = Y[:, -1]
    return FrozenEnsemble(times, values, terminal, K0 + 1, skel.horizon, sk.hits.sum(axis=1), sk.frozen)


# ---------------------------------------------------------------------------
# θ


@dataclass(frozen=True)
class ThetaConfig:
    """Monte Carlo settings for ``θ``: paths, target step, seed and regression basis."""

    N: int = 2000
    h: float = 1 / 64
    seed: int = 0
    basis: Basis = field(default_factory=lambda: Basis(degree=2, rank_policy="reduce"))


def _grid_for(t: float, T: float, h: float) -> tuple[int, float]:
    M = max(int(np.ceil((T - t) / h - 1e-9)), 1)
    return M, (T - t) / M


def _zero_path(d: int, T: float) -> CadlagPath:
    return CadlagPath.constant(np.zeros(d), T)


def theta_on(ens: Ensemble, skel: FrozenSkeleton, x, xi: Functional, driver: Driver, eps: float,
             basis: Basis | None = None) -> tuple[float, float]:
    """``θ_i(π_i; t, x)`` on a given ensemble started from ``(t, 0)``."""
    t = ens.s
    fr = freeze(skel, t, x, ens.X, ens.times, eps)
    terminal = np.asarray(xi(fr.terminal_history()), dtype=float)
    if driver.is_zero:
        return mean_se(terminal)
    s_star, T = skel.anchor.t, skel.horizon
    times = ens.times

    def gen(k, hist, y, zt, z, p, u):
        r = min(max(float(times[k]), s_star), T)
        return driver(r, fr.history(k), y, z, p)

    peak = np.maximum.accumulate(fr.values, axis=1)

    def extra(e, k, hist):
        return np.hstack([fr.frozen[:, k, :], peak[:, fr.n_base + 2 * k - 1, :]])

    base = basis or ThetaConfig().basis
    base = Basis(base.degree, base.features, extra, base.rank_policy, base.cond_limit)
    out = _backward(ens, terminal, gen, base, driver.eta or default_eta)
    return _root(out["Y"][:, 0], terminal, out["F"], ens.h)


def theta(skel: FrozenSkeleton, t: float, x, char: Characteristics, driver: Driver, xi: Functional, eps: float,
          N: int = 2000, h: float = 1 / 64, seed: int = 0, basis: Basis | None = None) -> tuple[float, float]:
    """``θ_i(π_i; t, x) = E_{t,0}[Ỹ_t]`` for the BSDE along the ε-skeleton of ``x + X``.

    ``t`` must lie in ``[s_{i-1}, T]``. Paths are simulated from ``(t, 0)``
    with the largest step not exceeding ``h`` that divides ``T - t``.
    """
    if eps <= 0:
        raise InputError("eps must be positive")
    T = skel.horizon
    if t < skel.s - TIME_TOL or t > T + TIME_TOL:
        raise InputError("theta is defined for t in [s_{i-1}, T]")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t >= T - TIME_TOL:
        return float(np.asarray(xi(skel.path((), x).history()))[0]), 0.0
    M, step = _grid_for(t, T, h)
    ens = simulate(char, t, _zero_path(skel.dim, T), N, step, seed)
    return theta_on(ens, skel, x, xi, driver, eps, basis)


def h_eps(skel: FrozenSkeleton, t: float, x, char: Characteristics, driver: Driver, xi: Functional, eps: float,
          N: int = 2000, h: float = 1 / 64, seed: int = 0, basis: Basis | None = None) -> tuple[float, float]:
    """``h_i(π_i; t, x) = θ_{i+1}(π_i; t', x; t', x)`` with ``t' = (s ∨ t) ∧ T``."""
    tc = min(max(float(t), skel.s), skel.horizon)
    return theta(skel.extend(tc, x), tc, x, char, driver, xi, eps, N, h, seed, basis)


def h_eps_lattice(skel: FrozenSkeleton, ts: np.ndarray, xs: np.ndarray, char: Characteristics, driver: Driver,
                  xi: Functional, eps: float, cfg: ThetaConfig) -> tuple[np.ndarray, np.ndarray]:
    """``h_i`` on the tensor lattice ``ts × xs`` (one space dimension) with common random numbers.

    All probes at one time share an ensemble; different times share the
    noise of each step index. Returns values and standard errors of shape
    ``(len(ts), len(xs))``.
    """
    T = skel.horizon
    vals = np.empty((len(ts), len(xs)))
    ses = np.empty_like(vals)
    for a, t in enumerate(ts):
        tc = min(max(float(t), skel.s), T)
        ens = None
        if tc < T - TIME_TOL:
            M, step = _grid_for(tc, T, cfg.h)
            ens = simulate(char, tc, _zero_path(skel.dim, T), cfg.N, step, cfg.seed)
        for b, x in enumerate(xs):
            sk = skel.extend(tc, [x])
            if ens is None:
                vals[a, b] = float(np.asarray(xi(sk.path((), [x]).history()))[0])
                ses[a, b] = 0.0
            else:
                vals[a, b], ses[a, b] = theta_on(ens, sk, [x], xi, driver, eps, cfg.basis)
    return vals, ses
