"""Integro-differential operators on functional jets and residual checks.

A :class:`FunctionalJet` bundles a non-anticipating functional with its time
derivative and first and second path derivatives. All evaluators act on a
:class:`~ppide.paths.PathHistory`, so they run on one path or on a whole
ensemble slice at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError
from .paths import CadlagPath, PathHistory
from .simulate import Characteristics, mean_se, simulate

Evaluator = Callable[[PathHistory], np.ndarray]


@dataclass(frozen=True)
class FunctionalJet:
    """A functional ``u`` with ``∂_t u``, ``∂_ω u`` (shape ``(N, d)``) and ``∂_ωω u`` (``(N, d, d)``)."""

    u: Evaluator
    dt: Evaluator
    dw: Evaluator
    dww: Evaluator
    name: str = "jet"

    @classmethod
    def constant(cls, c: float, dim: int = 1) -> "FunctionalJet":
        n = lambda h: h.n_paths
        return cls(lambda h: np.full(n(h), float(c)), lambda h: np.zeros(n(h)),
                   lambda h: np.zeros((n(h), dim)), lambda h: np.zeros((n(h), dim, dim)), f"constant({c})")

    @classmethod
    def time(cls, dim: int = 1) -> "FunctionalJet":
        """``u(t, ω) = t``."""
        n = lambda h: h.n_paths
        return cls(lambda h: np.full(n(h), h.t), lambda h: np.ones(n(h)),
                   lambda h: np.zeros((n(h), dim)), lambda h: np.zeros((n(h), dim, dim)), "time")

    @classmethod
    def value(cls, coord: int = 0, dim: int = 1) -> "FunctionalJet":
        """``u(t, ω) = ω_t`` (one coordinate)."""
        e = np.zeros(dim)
        e[coord] = 1.0
        n = lambda h: h.n_paths
        return cls(lambda h: h.current[:, coord].copy(), lambda h: np.zeros(n(h)),
                   lambda h: np.broadcast_to(e, (n(h), dim)).copy(), lambda h: np.zeros((n(h), dim, dim)), "value")

    @classmethod
    def square(cls, coord: int = 0, dim: int = 1) -> "FunctionalJet":
        """``u(t, ω) = (ω_t)^2`` (one coordinate)."""
        def dw(h):
            out = np.zeros((h.n_paths, dim))
            out[:, coord] = 2.0 * h.current[:, coord]
            return out

        def dww(h):
            out = np.zeros((h.n_paths, dim, dim))
            out[:, coord, coord] = 2.0
            return out

        return cls(lambda h: h.current[:, coord] ** 2, lambda h: np.zeros(h.n_paths), dw, dww, "square")

    @classmethod
    def affine(cls, a: float, coord: int = 0, dim: int = 1) -> "FunctionalJet":
        """``u(t, ω) = a t + ω_t``."""
        base = cls.value(coord, dim)
        return cls(lambda h: a * h.t + h.current[:, coord], lambda h: np.full(h.n_paths, float(a)),
                   base.dw, base.dww, f"affine({a})")

    def at(self, t: float, omega: CadlagPath) -> dict:
        """All four evaluations at a single point, as floats/arrays."""
        h = omega.history(t)
        return {"u": float(self.u(h)[0]), "dt": float(self.dt(h)[0]), "dw": self.dw(h)[0], "dww": self.dww(h)[0]}


@dataclass(frozen=True)
class Driver:
    """Semilinear driver ``f(t, ω, y, z, p)`` with jump weight ``η(t, ω, z)``.

    ``f`` receives ``(t, hist, y, z, p)`` with ``y, p`` of shape ``(N,)`` and
    ``z`` of shape ``(N, d)``; ``eta`` receives ``(t, hist, sizes)`` with
    ``sizes`` of shape ``(N, d)``.
    """

    f: Callable[..., np.ndarray]
    eta: Callable[..., np.ndarray] | None = None
    lipschitz: float = 1.0
    monotone_in_p: bool = True
    name: str = "driver"
    meta: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, eta=None) -> "Driver":
        """``f ≡ 0``; solvers shortcut the backward recursion to a plain mean."""
        return cls(lambda t, hist, y, z, p: np.zeros_like(y), eta, 0.0, True, "zero", {"zero": True})

    @property
    def is_zero(self) -> bool:
        return bool(self.meta.get("zero", False))

    def weight(self, t: float, hist: PathHistory, sizes: np.ndarray) -> np.ndarray:
        if self.eta is None:
            return np.zeros(sizes.shape[0])
        return np.asarray(self.eta(t, hist, sizes), dtype=float)

    def __call__(self, t, hist, y, z, p) -> np.ndarray:
        return np.asarray(self.f(t, hist, y, z, p), dtype=float)

    def spot_check(self, char: Characteristics, hist: PathHistory, n: int = 64, seed: int = 0) -> dict:
        """Check the Lipschitz bound, η bounds and monotonicity in ``p`` on random pairs.

        Returns the worst observed ratios; ``ok`` is False on any violation.
        """
        gen = np.random.default_rng(seed)
        t = hist.t
        N, d = hist.n_paths, hist.dim
        sigma = np.asarray(char.sigma(t, hist), dtype=float)
        worst_lip, worst_mono, worst_eta = 0.0, 0.0, 0.0
        for _ in range(n):
            y1, y2 = gen.normal(size=(2, N))
            z1, z2 = gen.normal(size=(2, N, d))
            p1, p2 = gen.normal(size=(2, N))
            dist = np.abs(y1 - y2) + np.abs(np.einsum("nji,nj->ni", sigma, z1 - z2)).sum(axis=1) + np.abs(p1 - p2)
            gap = np.abs(self(t, hist, y1, z1, p1) - self(t, hist, y2, z2, p2))
            worst_lip = max(worst_lip, float(np.max(gap - self.lipschitz * dist)))
            if self.monotone_in_p:
                lo, hi = np.minimum(p1, p2), np.maximum(p1, p2)
                worst_mono = max(worst_mono, float(np.max(self(t, hist, y1, z1, lo) - self(t, hist, y1, z1, hi))))
            sizes = gen.normal(size=(N, d))
            eta = self.weight(t, hist, sizes)
            cap = char.bound * np.minimum(1.0, np.linalg.norm(sizes, axis=1))
            worst_eta = max(worst_eta, float(np.max(np.maximum(-eta, eta - cap))))
        ok = worst_lip <= 1e-10 and worst_mono <= 1e-10 and worst_eta <= 1e-10
        return {"ok": ok, "lipschitz_excess": worst_lip, "monotonicity_excess": worst_mono, "eta_excess": worst_eta}


def as_history(t: float | None, omega: CadlagPath | PathHistory) -> PathHistory:
    if isinstance(omega, PathHistory):
        return omega
    if t is None:
        raise InputError("a time is required when evaluating on a path")
    return omega.history(t)


def jump_atoms(char: Characteristics, hist: PathHistory, quadrature: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Jump-kernel atoms at the current time: sizes ``(N, A, d)``, weights ``(A,)``."""
    if char.jumps is None or char.jumps.total_mass == 0:
        return np.zeros((hist.n_paths, 0, hist.dim)), np.zeros(0)
    return char.jumps.kernel(hist.t, hist, quadrature)


def _bump_increments(jet: FunctionalJet, hist: PathHistory, sizes: np.ndarray, base: np.ndarray) -> np.ndarray:
    """``u(t, ω + z_a 1_[t,T]) - u(t, ω)`` for every atom, shape ``(N, A)``."""
    out = np.empty(sizes.shape[:2])
    for a in range(sizes.shape[1]):
        out[:, a] = jet.u(hist.bumped(sizes[:, a, :])) - base
    return out


def nabla2(jet: FunctionalJet, t: float | None, omega, z) -> np.ndarray | float:
    """``u(t, ω + z 1_[t,T]) - u(t, ω) - z · ∂_ω u(t, ω)``."""
    hist = as_history(t, omega)
    z = np.broadcast_to(np.asarray(z, dtype=float), (hist.n_paths, hist.dim))
    out = jet.u(hist.bumped(z)) - jet.u(hist) - (z * jet.dw(hist)).sum(axis=1)
    return float(out[0]) if not isinstance(omega, PathHistory) else out


def apply_I(jet: FunctionalJet, driver: Driver, char: Characteristics, t: float | None, omega,
            quadrature: int = 64) -> np.ndarray | float:
    """``∫ [u(t, ω + z 1_[t,T]) - u(t, ω)] η(t, ω, z) K(dz)`` as a finite sum over atoms."""
    hist = as_history(t, omega)
    sizes, w = jump_atoms(char, hist, quadrature)
    out = np.zeros(hist.n_paths)
    if w.size:
        inc = _bump_increments(jet, hist, sizes, jet.u(hist))
        eta = np.stack([driver.weight(hist.t, hist, sizes[:, a, :]) for a in range(sizes.shape[1])], axis=1)
        out = (inc * eta) @ w
    return float(out[0]) if not isinstance(omega, PathHistory) else out


def apply_L(jet: FunctionalJet, char: Characteristics, t: float | None, omega, quadrature: int = 64) -> np.ndarray | float:
    """``-∂_t u - b·∂_ω u - ½ c:∂_ωω u - ∫ ∇²_z u K(dz)`` with ``c = σσᵀ``."""
    hist = as_history(t, omega)
    tt = hist.t
    b = np.asarray(char.drift(tt, hist), dtype=float).reshape(hist.n_paths, hist.dim)
    sig = np.asarray(char.sigma(tt, hist), dtype=float).reshape(hist.n_paths, hist.dim, hist.dim)
    c = np.einsum("nik,njk->nij", sig, sig)
    dw = jet.dw(hist)
    out = -jet.dt(hist) - (b * dw).sum(axis=1) - 0.5 * np.einsum("nij,nij->n", c, jet.dww(hist))
    sizes, w = jump_atoms(char, hist, quadrature)
    if w.size:
        inc = _bump_increments(jet, hist, sizes, jet.u(hist))
        second = inc - np.einsum("nad,nd->na", sizes, dw)
        out = out - second @ w
    return float(out[0]) if not isinstance(omega, PathHistory) else out


def classical_residual(jet: FunctionalJet, driver: Driver, char: Characteristics, t: float | None, omega,
                       quadrature: int = 64) -> np.ndarray | float:
    """``𝓛u - f(t, ω, u, ∂_ω u, 𝓘u)``; nonpositive for subsolutions, nonnegative for supersolutions."""
    hist = as_history(t, omega)
    L = apply_L(jet, char, None, hist, quadrature)
    I = apply_I(jet, driver, char, None, hist, quadrature)
    out = L - driver(hist.t, hist, jet.u(hist), jet.dw(hist), I)
    return float(out[0]) if not isinstance(omega, PathHistory) else out


def ito_residual(jet: FunctionalJet, char: Characteristics, s: float, omega: CadlagPath, stop: float | None,
                 N: int, h: float, seed: int, control_variate: bool = True) -> tuple[float, float]:
    """Monte Carlo estimate of ``E[u_{H}] - u_s + E[∫_s^H 𝓛u dt]`` with ``H`` the exit time.

    ``H`` is the first grid time at which ``|X - X_s|`` reaches ``stop`` (or
    ``T``). With ``control_variate`` the mean-zero sum of
    ``∂_ω u(t_k) · (ΔX_k - b_k h)`` is subtracted pathwise, which leaves the
    expectation unchanged and removes most of the martingale noise.
    """
    ens = simulate(char, s, omega, N, h, seed)
    X = ens.X
    M = ens.n_steps
    alive = np.ones(N, dtype=bool)
    total = np.zeros(N)
    hist = ens.history(0)
    u_prev = jet.u(hist)
    for k in range(M):
        tk = ens.times[k]
        L = apply_L(jet, char, None, hist)
        cv = 0.0
        if control_variate:
            b = np.asarray(char.drift(tk, hist), dtype=float).reshape(N, -1)
            cv = (jet.dw(hist) * (X[:, k + 1] - X[:, k] - b * ens.h)).sum(axis=1)
        hist = ens.history(k + 1)
        u_next = jet.u(hist)
        total += np.where(alive, u_next - u_prev + ens.h * L - cv, 0.0)
        u_prev = u_next
        if stop is not None:
            alive &= np.linalg.norm(X[:, k + 1] - X[:, 0], axis=1) < stop
        if not alive.any():
            break
    return mean_se(total)
