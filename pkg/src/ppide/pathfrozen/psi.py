"""The piecewise-classical functional ``ψ`` assembled from frozen PIDE solutions.

For each skeleton ``π_j`` the data ``h_j`` (values of ``θ_{j+1}`` on exit)
are smoothed by a Bernstein polynomial with certified error ``δ_j``, raised
by ``δ_j`` and used as exterior data of a frozen PIDE on the ``ε``-ball
around ``y_{j-1}``. The solutions ``w_j`` are shifted into

    v_1(π_1; t, x) = w_1(t, x) - w_1(s_0, y_0) + θ_1(π_1; π_1) + ε/2,
    v_j(π_j; t, x) = w_j(t, x) + v_{j-1}(π_{j-1}; s_{j-1}, y_{j-1}) - w_j(s_{j-1}, y_{j-1}) + δ_{j-1},

and ``ψ(t, ω) = v_i(π_i(ω); t, ω_t) + Σ_{j≥i} δ_j`` on the ``i``-th segment
of the ε-skeleton of ``ω``. We use ``δ_j = ε / 2^{j+2}``.
"""

from __future__ import annotations

import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..bsde import Functional
from ..errors import ApproximationError, AssumptionError, EvaluationError, InputError
from ..operators import Driver
from ..paths import TIME_TOL, CadlagPath, TimePoint
from ..simulate import Characteristics, hitting_skeleton
from .bernstein import BernsteinFit, bernstein_fit, lattice
from .pide import CylinderGrid, FrozenPideSolution, solve_frozen_pide
from .skeleton import FrozenSkeleton, ThetaConfig, h_eps_lattice, theta


def delta(j: int, eps: float) -> float:
    """``δ_j = ε / 2^{j+2}``."""
    return eps / 2.0 ** (j + 2)


def delta_tail(i: int, eps: float) -> float:
    """``Σ_{j≥i} δ_j = ε / 2^{i+1}``."""
    return eps / 2.0 ** (i + 1)


@dataclass(frozen=True)
class PsiConfig:
    """Solver settings for the ψ construction.

    Attributes:
        theta: Monte Carlo settings for every ``θ`` evaluation.
        degrees: Initial Bernstein degrees ``(time, space)``.
        max_space_degree: The space degree doubles until the certified error
            is below ``δ_j`` or this cap is passed.
        audit: Refinement of the audit lattice.
        n_inner: Space nodes per ball radius in the PIDE grid.
        n_t: Time steps of the PIDE grid.
        workers: Threads for independent level solves.
        key_resolution: Rounding of skeleton keys for the level cache.
    """

    theta: ThetaConfig = field(default_factory=ThetaConfig)
    degrees: tuple[int, int] = (2, 4)
    max_space_degree: int = 32
    audit: int = 2
    n_inner: int = 10
    n_t: int = 64
    workers: int = 1
    key_resolution: float = 1e-9


@dataclass(frozen=True, eq=False)
class FrozenLevel:
    """Everything built for one skeleton ``π_j``."""

    skel: FrozenSkeleton
    fit: BernsteinFit | None
    delta: float
    w: FrozenPideSolution | None
    w_center: float

    def h_bar(self, t, x):
        return self.fit(np.clip(t, self.skel.s, self.skel.horizon), x) + self.delta

    def diagnostics(self) -> dict:
        return {
            "level": self.skel.length,
            "s": self.skel.s,
            "y": self.skel.y.tolist(),
            "delta": self.delta,
            "fit_error": None if self.fit is None else self.fit.error,
            "fit_degrees": None if self.fit is None else list(self.fit.degrees),
            "w_center": self.w_center,
            "pide": {} if self.w is None else dict(self.w.trace),
        }


class PathFrozen:
    """Frozen-path machinery for one anchor ``(s*, ω*)`` and one ``ε``.

    Level solves are cached by rounded skeleton keys with insert-once
    semantics, so results do not depend on evaluation order or threads.
    """

    def __init__(self, char: Characteristics, driver: Driver, xi: Functional, anchor: TimePoint, eps: float,
                 depth: int = 3, config: PsiConfig | None = None, jump_reach: float | None = None):
        if char.dim != 1:
            raise InputError("the path-frozen construction is implemented in one space dimension")
        if depth < 1:
            raise InputError("depth must be at least 1")
        lo, hi = char.jump_norm_range()
        has_jumps = char.total_jump_mass > 0
        if eps <= 0 or (has_jumps and eps >= (lo or 0.0)):
            raise AssumptionError("jump-size-bounds", f"eps must lie in (0, c0') with c0' = {lo}")
        self.char, self.driver, self.xi, self.anchor = char, driver, xi, anchor
        self.eps, self.depth = float(eps), depth
        self.config = config or PsiConfig()
        self.reach = float(jump_reach if jump_reach is not None else (hi if has_jumps else eps))
        self._levels: dict[tuple, FrozenLevel] = {}
        self._lock = threading.Lock()
        self._theta1: tuple[float, float] | None = None

    # -- θ ------------------------------------------------------------------

    def theta(self, skel: FrozenSkeleton, t: float, x) -> tuple[float, float]:
        c = self.config.theta
        return theta(skel, t, x, self.char, self.driver, self.xi, self.eps, c.N, c.h, c.seed, c.basis)

    def theta1(self) -> tuple[float, float]:
        """``θ_1(π_1; π_1)`` at the anchor."""
        if self._theta1 is None:
            skel = FrozenSkeleton.start(self.anchor)
            self._theta1 = self.theta(skel, skel.s, skel.y)
        return self._theta1

    # -- levels -------------------------------------------------------------

    def _outer(self) -> float:
        """Radius of the PIDE cylinder; ``h̄`` is only read within it."""
        return max(2 * self.reach, self.eps + self.reach) + self.eps / self.config.n_inner

    def _fit(self, skel: FrozenSkeleton, d: float) -> BernsteinFit:
        cfg = self.config
        s, T, y = skel.s, skel.horizon, float(skel.y[0])
        r = self._outer()
        lows, highs = [s, y - r], [T, y + r]
        nt, nx = cfg.degrees
        memo: dict[tuple[float, float], float] = {}
        while True:
            ts, xs = lattice(lows, highs, [cfg.audit * nt, cfg.audit * nx])
            todo_t = sorted({float(t) for t in ts for x in xs if (float(t), float(x)) not in memo})
            for t in todo_t:
                miss = [float(x) for x in xs if (t, float(x)) not in memo]
                vals, _ = h_eps_lattice(skel, np.array([t]), np.array(miss), self.char, self.driver, self.xi,
                                        self.eps, cfg.theta)
                memo.update({(t, x): v for x, v in zip(miss, vals[0])})
            samples = np.array([[memo[(float(t), float(x))] for x in xs] for t in ts])
            try:
                return bernstein_fit(None, lows, highs, [nt, nx], delta=d, audit=cfg.audit, samples=samples)
            except ApproximationError as err:
                if 2 * nx > cfg.max_space_degree:
                    raise ApproximationError(
                        f"level {skel.length}: space degree {nx} reaches {err.achieved:.3g} > delta {d:.3g}",
                        err.achieved) from err
                nx *= 2

    def _frozen_driver(self, skel: FrozenSkeleton):
        if self.driver.is_zero:
            return None
        held = skel.path()
        s_star, T = self.anchor.t, skel.horizon

        def fhat(t, y, z, p):
            r = min(max(float(t), s_star), T)
            hist = held.history(r)
            return self.driver(r, hist.select(np.zeros(len(y), dtype=int)), y, z, p)

        return fhat

    def _solve_level(self, skel: FrozenSkeleton) -> FrozenLevel:
        j = skel.length
        d = delta(j, self.eps)
        s, T = skel.s, skel.horizon
        if s >= T - TIME_TOL:
            return FrozenLevel(skel, None, d, None, float("nan"))
        fit = self._fit(skel, d)
        y = float(skel.y[0])
        grid = CylinderGrid(y, self.eps, self._outer(), s, T, self.config.n_inner, self.config.n_t)
        lvl = FrozenLevel(skel, fit, d, None, 0.0)
        sol = solve_frozen_pide(lambda t, x: lvl.h_bar(t, x), self._frozen_driver(skel), self.char, grid,
                                eta=self.driver.eta)
        return FrozenLevel(skel, fit, d, sol, float(sol(s, y)))

    def level(self, skel: FrozenSkeleton) -> FrozenLevel:
        key = skel.key(self.config.key_resolution)
        with self._lock:
            hit = self._levels.get(key)
        if hit is not None:
            return hit
        lvl = self._solve_level(skel)
        with self._lock:
            return self._levels.setdefault(key, lvl)

    def levels(self, skel: FrozenSkeleton) -> list[FrozenLevel]:
        """Levels of all prefixes ``π_1, ..., π_i`` of ``skel``, solved in parallel."""
        prefixes = [skel.prefix(j) for j in range(1, skel.length + 1)]
        if self.config.workers > 1 and len(prefixes) > 1:
            with ThreadPoolExecutor(self.config.workers) as pool:
                return list(pool.map(self.level, prefixes))
        return [self.level(p) for p in prefixes]

    # -- v and ψ ------------------------------------------------------------

    def v(self, skel: FrozenSkeleton, t: float, x: float) -> float:
        """``v_i(π_i; t, x)`` for ``i = skel.length``."""
        lv = self.levels(skel)
        theta1, _ = self.theta1()
        first = lv[0]
        # v_j at its own center, built upwards
        base = theta1 + self.eps / 2 - first.w_center
        shift = [base]
        for j in range(2, skel.length + 1):
            sj, yj = skel.pairs[j - 1]
            prev = lv[j - 2]
            v_prev = float(prev.w(sj, float(yj[0]))) + shift[-1]
            shift.append(v_prev - lv[j - 1].w_center + delta(j - 1, self.eps))
        last = lv[-1]
        if last.w is None:
            sj, yj = skel.pairs[-1]
            return float(lv[-2].w(sj, float(yj[0]))) + shift[-2] + delta(skel.length - 1, self.eps)
        return float(last.w(t, x)) + shift[-1]

    def segment(self, t: float, omega: CadlagPath) -> FrozenSkeleton:
        """``π_i`` of ``ω`` for the segment ``H_{i-1} < t <= H_i`` containing ``t``."""
        s_star = self.anchor.t
        if t < s_star - TIME_TOL or t > omega.horizon + TIME_TOL:
            raise EvaluationError("ψ is defined on [s*, T]")
        sk = hitting_skeleton(omega, s_star, self.eps)
        hits = sk[:-1] if sk[-1][0] >= omega.horizon - TIME_TOL else sk
        i = 1
        while i < len(hits) and hits[i][0] < t - TIME_TOL:
            i += 1
        if i > self.depth:
            raise EvaluationError(f"path needs skeleton depth {i} > {self.depth}; increase depth")
        return FrozenSkeleton(self.anchor, tuple(hits[:i]))

    def psi(self, t: float, omega: CadlagPath) -> float:
        skel = self.segment(t, omega)
        x = float(omega.value(t)[0])
        return self.v(skel, t, x) + delta_tail(skel.length, self.eps)

    __call__ = psi

    def audit(self) -> dict:
        """Sandwich audit at the anchor plus per-level diagnostics of cached solves."""
        theta1, se = self.theta1()
        skel = FrozenSkeleton.start(self.anchor)
        first = self.level(skel)
        psi_anchor = self.v(skel, skel.s, float(skel.y[0])) + delta_tail(1, self.eps)
        with self._lock:
            levels = sorted(self._levels.values(), key=lambda lv: (lv.skel.length, lv.skel.s))
        return {
            "theta1": theta1,
            "theta1_se": se,
            "psi_at_anchor": psi_anchor,
            "eps": self.eps,
            "deltas": [delta(j, self.eps) for j in range(1, self.depth + 1)],
            "margins": {"lower": psi_anchor - theta1, "upper": theta1 + self.eps - psi_anchor},
            "anchor_gap": first.w_center - theta1,
            "levels": [lv.diagnostics() for lv in levels],
        }


def build_psi(char: Characteristics, driver: Driver, xi: Functional, anchor: TimePoint, eps: float, depth: int = 3,
              config: PsiConfig | None = None) -> tuple[PathFrozen, dict]:
    """The evaluator ``(t, ω) ↦ ψ(t, ω)`` and its anchor audit."""
    pf = PathFrozen(char, driver, xi, anchor, eps, depth, config)
    return pf, pf.audit()


def partial_comparison_check(u0: Callable[[float, CadlagPath], tuple[float, float]], psi: PathFrozen,
                             points: list[tuple[float, CadlagPath]], z: float = 3.0) -> dict:
    """Check ``u0 <= ψ + z · combined s.e.`` at each test point.

    ``u0`` returns a value and standard error; the s.e. of ``θ_1`` enters ψ.
    """
    _, se_theta = psi.theta1()
    rows = []
    for t, omega in points:
        u, se = u0(t, omega)
        p = psi(t, omega)
        tol = z * float(np.hypot(se, se_theta))
        rows.append({"t": t, "u0": u, "u0_se": se, "psi": p, "margin": p - u, "tolerance": tol,
                     "ok": bool(u <= p + tol)})
    return {"ok": all(r["ok"] for r in rows), "points": rows}
