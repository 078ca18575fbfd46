"""Euler simulation of jump diffusions under the law started from a path.

The continuous part follows an Euler step per grid interval. Jumps have
finite activity and are scheduled exactly: arrivals of a Poisson clock with
the total base intensity fall at uniform times inside the step, each carrying
a mark drawn from the base measure. The compensator of the jump measure is
subtracted in the drift so that the jump part is a martingale.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng
from .errors import AssumptionError, InputError, SimulationError
from .paths import TIME_TOL, CadlagPath, PathHistory

log = logging.getLogger(__name__)

Coefficient = Callable[[float, PathHistory], np.ndarray]
Functional = Callable[[PathHistory], np.ndarray]


# ---------------------------------------------------------------------------
# Jump laws and jump kernels


@dataclass(frozen=True)
class AtomicLaw:
    """Discrete jump-size distribution."""

    sizes: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        sizes = np.asarray(self.sizes, dtype=float)
        if sizes.ndim == 1:
            sizes = sizes[:, None]
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (sizes.shape[0],) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InputError("atom probabilities must be nonnegative and sum to one")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "probs", probs)

    @property
    def dim(self) -> int:
        return self.sizes.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.probs @ self.sizes

    @property
    def second_moment(self) -> float:
        return float(self.probs @ (self.sizes**2).sum(axis=1))

    def atoms(self, n: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        return self.sizes, self.probs

    def sample(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.minimum(np.searchsorted(np.cumsum(self.probs), u, side="right"), len(self.probs) - 1)
        return self.sizes[idx], idx

    @property
    def norm_range(self) -> tuple[float, float]:
        r = np.linalg.norm(self.sizes[self.probs > 0], axis=1)
        return float(r.min()), float(r.max())


@dataclass(frozen=True)
class UniformLaw:
    """Scalar jump sizes with ``|z|`` uniform on ``[low, high]`` and a random sign if ``symmetric``."""

    low: float
    high: float
    symmetric: bool = False

    def __post_init__(self):
        if not (0 < self.low <= self.high):
            raise InputError("uniform jump law needs 0 < low <= high")

    dim = 1

    @property
    def mean(self) -> np.ndarray:
        return np.array([0.0 if self.symmetric else 0.5 * (self.low + self.high)])

    @property
    def second_moment(self) -> float:
        return (self.high**3 - self.low**3) / (3.0 * (self.high - self.low)) if self.high > self.low else self.low**2

    def atoms(self, n: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Midpoint atomization, used for quadrature of jump integrals."""
        mids = self.low + (np.arange(n) + 0.5) * (self.high - self.low) / n
        if self.symmetric:
            mids = np.concatenate([-mids[::-1], mids])
        return mids[:, None], np.full(len(mids), 1.0 / len(mids))

    def sample(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.symmetric:
            sign = np.where(u < 0.5, -1.0, 1.0)
            v = np.where(u < 0.5, 2 * u, 2 * u - 1)
        else:
            sign, v = 1.0, u
        z = sign * (self.low + v * (self.high - self.low))
        return z[:, None], np.full(len(u), -1)

    @property
    def norm_range(self) -> tuple[float, float]:
        return float(self.low), float(self.high)


@dataclass(frozen=True)
class FiniteLevy:
    """State-independent jumps: intensity ``rate`` and size law ``law``."""

    rate: float
    law: AtomicLaw | UniformLaw

    def __post_init__(self):
        if self.rate < 0:
            raise InputError("jump rate must be nonnegative")

    @property
    def total_mass(self) -> float:
        return float(self.rate)

    @property
    def atomic(self) -> bool:
        return isinstance(self.law, AtomicLaw)

    @property
    def n_atoms(self) -> int:
        return len(self.law.probs) if self.atomic else 0

    def kernel(self, t: float, hist: PathHistory, quadrature: int = 64) -> tuple[np.ndarray, np.ndarray]:
        """Atoms of the jump kernel: sizes ``(N, A, d)`` and weights ``(A,)``."""
        sizes, probs = self.law.atoms(quadrature)
        return np.broadcast_to(sizes[None], (hist.n_paths,) + sizes.shape), self.rate * probs

    def compensator(self, t: float, hist: PathHistory) -> np.ndarray:
        return np.broadcast_to(self.rate * self.law.mean, (hist.n_paths, self.law.dim))

    def marks(self, t: float, hist: PathHistory, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.law.sample(u)

    def second_moment(self) -> float:
        return self.rate * self.law.second_moment


@dataclass(frozen=True)
class MappedJumps:
    """Jumps ``δ(t, ω, ζ)`` of marks ``ζ`` from a finite atomic base measure.

    ``delta(t, hist, mark)`` returns sizes of shape ``(N, d)`` for one mark;
    a zero size means the mark produces no jump at that state.
    """

    delta: Callable[[float, PathHistory, np.ndarray], np.ndarray]
    marks_atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.marks_atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        w = np.asarray(self.weights, dtype=float)
        if w.shape != (atoms.shape[0],) or np.any(w < 0):
            raise InputError("base measure weights must be nonnegative, one per atom")
        object.__setattr__(self, "marks_atoms", atoms)
        object.__setattr__(self, "weights", w)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    atomic = True

    @property
    def n_atoms(self) -> int:
        return len(self.weights)

    def kernel(self, t: float, hist: PathHistory, quadrature: int = 64) -> tuple[np.ndarray, np.ndarray]:
        sizes = np.stack([np.asarray(self.delta(t, hist, z), dtype=float) for z in self.marks_atoms], axis=1)
        return sizes, self.weights

    def compensator(self, t: float, hist: PathHistory) -> np.ndarray:
        sizes, w = self.kernel(t, hist)
        return np.einsum("nad,a->nd", sizes, w)

    def marks(self, t: float, hist: PathHistory, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx = np.minimum(np.searchsorted(np.cumsum(self.weights) / self.total_mass, u, side="right"), len(self.weights) - 1)
        sizes, _ = self.kernel(t, hist)
        return sizes[np.arange(hist.n_paths), idx], idx


JumpSpec = FiniteLevy | MappedJumps


# ---------------------------------------------------------------------------
# Characteristics


def _constant(value: np.ndarray, shape: tuple[int, ...]) -> Coefficient:
    arr = np.asarray(value, dtype=float).reshape(shape)

    def coefficient(t: float, hist: PathHistory) -> np.ndarray:
        return np.broadcast_to(arr, (hist.n_paths,) + shape)

    coefficient.constant = arr
    return coefficient


@dataclass(frozen=True)
class Characteristics:
    """Drift, dispersion and jumps, with the bounds the theory requires.

    Coefficient callables receive ``(t, hist)`` with ``hist`` a
    :class:`PathHistory` of ``N`` stopped paths and must act row by row.
    """

    dim: int
    drift: Coefficient
    sigma: Coefficient
    jumps: JumpSpec | None = None
    bound: float = 1.0
    lower_jump: float = 0.0
    lipschitz: float = 1.0

    def __post_init__(self):
        if self.dim < 1:
            raise InputError("dimension must be positive")
        if self.bound <= 0:
            raise AssumptionError("bounded-coefficients", "the common bound must be positive")
        if self.jumps is not None and self.jumps.total_mass > 0:
            lo, hi = self.jump_norm_range()
            if lo is not None and (lo < self.lower_jump - 1e-12 or hi > self.bound + 1e-12):
                raise AssumptionError(
                    "jump-size-bounds",
                    f"jump sizes must have norm in [{self.lower_jump}, {self.bound}], got [{lo}, {hi}]",
                )
        b, s = self.const_drift, self.const_sigma
        if b is not None and np.linalg.norm(b) > self.bound + 1e-12:
            raise AssumptionError("bounded-coefficients", f"|b| = {np.linalg.norm(b):.6g} exceeds {self.bound}")
        if s is not None and np.linalg.norm(s, 2) > self.bound + 1e-12:
            raise AssumptionError("bounded-coefficients", f"|sigma| = {np.linalg.norm(s, 2):.6g} exceeds {self.bound}")

    @classmethod
    def constant(cls, b=0.0, sigma=0.0, jumps: JumpSpec | None = None, bound: float | None = None,
                 lower_jump: float | None = None, dim: int | None = None, lipschitz: float = 1.0) -> "Characteristics":
        """Constant drift vector and dispersion matrix (scalars allowed in one dimension)."""
        b = np.atleast_1d(np.asarray(b, dtype=float))
        d = dim or b.shape[0]
        b = np.broadcast_to(b, (d,)).copy()
        sig = np.asarray(sigma, dtype=float)
        sig = sig * np.eye(d) if sig.ndim == 0 else sig.reshape(d, d)
        if lower_jump is None:
            lower_jump = 0.0
            if jumps is not None and jumps.total_mass > 0 and isinstance(jumps, FiniteLevy):
                lower_jump = jumps.law.norm_range[0]
        if bound is None:
            bound = 1.0
            if jumps is not None and jumps.total_mass > 0 and isinstance(jumps, FiniteLevy):
                bound = max(bound, jumps.law.norm_range[1])
            bound = max(bound, float(np.linalg.norm(b)), float(np.linalg.norm(sig, 2)))
        return cls(d, _constant(b, (d,)), _constant(sig, (d, d)), jumps, bound, lower_jump, lipschitz)

    @property
    def const_drift(self) -> np.ndarray | None:
        return getattr(self.drift, "constant", None)

    @property
    def const_sigma(self) -> np.ndarray | None:
        return getattr(self.sigma, "constant", None)

    @property
    def is_constant(self) -> bool:
        return self.const_drift is not None and self.const_sigma is not None and (
            self.jumps is None or isinstance(self.jumps, FiniteLevy)
        )

    def jump_norm_range(self) -> tuple[float | None, float | None]:
        if isinstance(self.jumps, FiniteLevy):
            return self.jumps.law.norm_range
        return None, None

    @property
    def total_jump_mass(self) -> float:
        return 0.0 if self.jumps is None else self.jumps.total_mass

    def levy_second_moment(self) -> float:
        """``∫|z|^2 K(dz)`` for state-independent jumps."""
        if self.jumps is None:
            return 0.0
        if not isinstance(self.jumps, FiniteLevy):
            raise InputError("second moment is only defined for state-independent jumps")
        return self.jumps.second_moment()

    def perturbed(self, eps: float) -> "Characteristics":
        """Constant-coefficient perturbation used in stability sweeps."""
        if not self.is_constant:
            raise InputError("perturbation is implemented for constant characteristics")
        jumps = self.jumps
        if jumps is not None:
            jumps = FiniteLevy(jumps.rate * (1 + eps), jumps.law)
        b = self.const_drift + eps
        s = self.const_sigma * (1 + eps)
        bound = max(self.bound, float(np.linalg.norm(b)), float(np.linalg.norm(s, 2)))
        return Characteristics(self.dim, _constant(b, (self.dim,)), _constant(s, (self.dim, self.dim)),
                               jumps, bound, self.lower_jump, self.lipschitz)


# ---------------------------------------------------------------------------
# Ensemble


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Simulated paths on the grid ``s = t_0 < ... < t_M = T``.

    ``full`` holds, per path, the prefix vertices before ``s`` followed by the
    grid values; :meth:`history` returns views of it without copying.
    Jump events are kept as flat arrays sorted by path, then time.
    """

    char: Characteristics
    times: np.ndarray
    full: np.ndarray
    full_times: np.ndarray
    n_prefix: int
    dW: np.ndarray
    drift_incr: np.ndarray
    jump_path: np.ndarray
    jump_step: np.ndarray
    jump_time: np.ndarray
    jump_size: np.ndarray
    jump_atom: np.ndarray
    count_cum: np.ndarray
    last_jump: np.ndarray
    seed: int
    horizon: float
    meta: dict = field(default_factory=dict)

    @property
    def s(self) -> float:
        return float(self.times[0])

    @property
    def h(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def n_paths(self) -> int:
        return self.full.shape[0]

    @property
    def dim(self) -> int:
        return self.full.shape[2]

    @property
    def X(self) -> np.ndarray:
        """Grid values, shape ``(N, M+1, d)``."""
        return self.full[:, self.n_prefix :, :]

    def history(self, k: int | None = None) -> PathHistory:
        k = self.n_steps if k is None else k
        end = self.n_prefix + k + 1
        extras = {"jump_count": self.count_cum[:, k], "last_jump": self.last_jump[:, k]}
        return PathHistory(self.full_times[:end], self.full[:, :end, :], self.horizon, extras)

    def jump_counts(self) -> np.ndarray:
        """Jumps per path and step, shape ``(N, M)``."""
        return np.diff(self.count_cum, axis=1)

    def jump_sums(self, weights: np.ndarray | None = None) -> np.ndarray:
        """Per-step sums of jump sizes (optionally weighted per jump), shape ``(N, M, d)``."""
        out = np.zeros((self.n_paths, self.n_steps, self.dim))
        vals = self.jump_size if weights is None else self.jump_size * np.asarray(weights)[:, None]
        np.add.at(out, (self.jump_path, self.jump_step), vals)
        return out

    def atom_counts(self) -> np.ndarray:
        """Per-step jump counts per atom of the base measure, shape ``(N, M, A)``."""
        A = self.char.jumps.n_atoms if self.char.jumps is not None else 0
        out = np.zeros((self.n_paths, self.n_steps, A))
        ok = self.jump_atom >= 0
        np.add.at(out, (self.jump_path[ok], self.jump_step[ok], self.jump_atom[ok]), 1.0)
        return out

    def path(self, i: int) -> CadlagPath:
        """Exact piecewise path of sample ``i`` with a knot at every jump."""
        ts = list(self.full_times[: self.n_prefix])
        vs = list(self.full[i, : self.n_prefix])
        X = self.X[i]
        sel = self.jump_path == i
        jt, js, jz = self.jump_time[sel], self.jump_step[sel], self.jump_size[sel]
        h = self.h
        for k in range(self.n_steps + 1):
            ts.append(self.times[k])
            vs.append(X[k])
            if k == self.n_steps:
                break
            acc = np.zeros(self.dim)
            for tau, z in zip(jt[js == k], jz[js == k]):
                base = X[k] + self.drift_incr[i, k] * (tau - self.times[k]) / h + acc
                ts.extend([tau, tau])
                vs.extend([base, base + z])
                acc = acc + z
        return CadlagPath.from_vertices(np.asarray(ts), np.asarray(vs))


def _grid_steps(s: float, T: float, h: float) -> int:
    if h <= 0:
        raise InputError("step size must be positive")
    m = (T - s) / h
    M = int(round(m))
    if M < 0 or abs(m - M) > 1e-9 * max(1.0, m):
        raise InputError(f"step {h} does not divide the interval length {T - s}")
    return M


def _prefix_vertices(prefix: CadlagPath, s: float) -> tuple[np.ndarray, np.ndarray]:
    """Vertices strictly before ``s`` plus the left limit at ``s`` when ``s`` is a jump."""
    ts, vs = prefix.vertices(upto=s)
    keep = ts < s - TIME_TOL
    out_t, out_v = list(ts[keep]), list(vs[keep])
    left, right = prefix.left(s), prefix.value(s)
    if s > TIME_TOL and np.any(left != right):
        out_t.append(s)
        out_v.append(left)
    return np.asarray(out_t, dtype=float), np.asarray(out_v, dtype=float).reshape(len(out_t), prefix.dim)


def _check(arr: np.ndarray, what: str, t: float, idx: np.ndarray) -> None:
    bad = ~np.isfinite(arr).reshape(arr.shape[0], -1).all(axis=1)
    if bad.any():
        raise SimulationError(f"non-finite {what}", t, int(idx[np.argmax(bad)]))


def _run_chunk(char: Characteristics, grid: np.ndarray, prefix_t: np.ndarray, prefix_v: np.ndarray,
               x0: np.ndarray, idx: np.ndarray, seed: int, noise: str, horizon: float):
    n, d, M = len(idx), char.dim, len(grid) - 1
    P = len(prefix_t)
    h = grid[1] - grid[0] if M else 0.0
    sqh = np.sqrt(h)
    full_t = np.concatenate([prefix_t, grid])
    full = np.empty((n, P + M + 1, d))
    full[:, :P] = prefix_v
    full[:, P] = x0
    dW = np.empty((n, M, d))
    drift_incr = np.empty((n, M, d))
    count_cum = np.zeros((n, M + 1), dtype=np.int64)
    last = np.full((n, M + 1), grid[0])
    jumps = char.jumps
    lam = jumps.total_mass if jumps is not None else 0.0
    ev_path, ev_step, ev_time, ev_size, ev_atom = [], [], [], [], []
    count_now = np.zeros(n, dtype=np.int64)
    last_now = np.full(n, grid[0])
    for k in range(M):
        t = grid[k]
        hist = PathHistory(full_t[: P + k + 1], full[:, : P + k + 1], horizon,
                           {"jump_count": count_cum[:, k], "last_jump": last[:, k]})
        b = np.asarray(char.drift(t, hist), dtype=float).reshape(n, d)
        sig = np.asarray(char.sigma(t, hist), dtype=float).reshape(n, d, d)
        _check(b, "drift", t, idx)
        _check(sig, "dispersion", t, idx)
        if char.const_drift is None and np.linalg.norm(b, axis=1).max() > char.bound + 1e-9:
            raise AssumptionError("bounded-coefficients", f"|b| exceeds {char.bound} at t={t:.6g}")
        if char.const_sigma is None and np.linalg.norm(sig, ord=2, axis=(1, 2)).max() > char.bound + 1e-9:
            raise AssumptionError("bounded-coefficients", f"|sigma| exceeds {char.bound} at t={t:.6g}")
        if noise == "rademacher":
            xi = np.where(rng.uniforms(seed, rng.Stream.BROWNIAN, idx, k, d) < 0.5, -1.0, 1.0)
        else:
            xi = rng.normals(seed, rng.Stream.BROWNIAN, idx, k, d)
        dw = sqh * xi
        incr = b * h + np.einsum("nij,nj->ni", sig, dw)
        jsum = np.zeros((n, d))
        if lam > 0:
            comp = np.asarray(jumps.compensator(t, hist), dtype=float).reshape(n, d)
            _check(comp, "jump compensator", t, idx)
            incr = incr - comp * h
            cnt = rng.poisson(rng.uniforms(seed, rng.Stream.JUMP_COUNT, idx, k, 1)[:, 0], lam * h)
            rows = np.nonzero(cnt)[0]
            if rows.size:
                kmax = int(cnt.max())
                ut = np.sort(rng.uniforms(seed, rng.Stream.JUMP_TIME, idx[rows], k, kmax)
                             + np.where(np.arange(kmax)[None, :] < cnt[rows, None], 0.0, 2.0), axis=1)
                um = rng.uniforms(seed, rng.Stream.JUMP_MARK, idx[rows], k, kmax)
                sub = hist.select(rows)
                for r in range(kmax):
                    has = cnt[rows] > r
                    z, atom = jumps.marks(t, sub, um[:, r])
                    z = np.asarray(z, dtype=float).reshape(len(rows), d)
                    keep = has & np.any(z != 0, axis=1)
                    if not keep.any():
                        continue
                    zn = np.linalg.norm(z[keep], axis=1)
                    if zn.min() < char.lower_jump - 1e-9 or zn.max() > char.bound + 1e-9:
                        raise AssumptionError("jump-size-bounds",
                                              f"jump of norm outside [{char.lower_jump}, {char.bound}]")
                    pr = rows[keep]
                    tau = t + h * ut[keep, r]
                    ev_path.append(pr)
                    ev_step.append(np.full(len(pr), k))
                    ev_time.append(tau)
                    ev_size.append(z[keep])
                    ev_atom.append(np.broadcast_to(np.asarray(atom), (len(rows),))[keep])
                    jsum[pr] += z[keep]
                    count_now[pr] += 1
                    last_now[pr] = tau
        dW[:, k] = dw
        drift_incr[:, k] = incr
        full[:, P + k + 1] = full[:, P + k] + incr + jsum
        count_cum[:, k + 1] = count_now
        last[:, k + 1] = last_now
    if ev_path:
        jp = np.concatenate(ev_path)
        js = np.concatenate(ev_step)
        jt = np.concatenate(ev_time)
        jz = np.concatenate(ev_size)
        ja = np.concatenate(ev_atom).astype(np.int64)
        order = np.lexsort((jt, jp))
        jp, js, jt, jz, ja = jp[order], js[order], jt[order], jz[order], ja[order]
    else:
        jp = js = ja = np.zeros(0, dtype=np.int64)
        jt = np.zeros(0)
        jz = np.zeros((0, d))
    return full, dW, drift_incr, jp, js, jt, jz, ja, count_cum, last


def _engine(char: Characteristics, grid: np.ndarray, prefix_t: np.ndarray, prefix_v: np.ndarray,
            x0: np.ndarray, idx: np.ndarray, seed: int, noise: str, horizon: float, workers: int) -> tuple:
    """Run :func:`_run_chunk` over path chunks and stitch the results in path order."""
    n = len(idx)
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)

    def job(c: int):
        sl = slice(bounds[c], bounds[c + 1])
        pv = prefix_v[sl] if prefix_v.shape[0] == n and n > 1 else prefix_v
        return _run_chunk(char, grid, prefix_t, pv, x0[sl], idx[sl], seed, noise, horizon)

    if workers == 1:
        parts = [job(0)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, range(workers)))
    full = np.concatenate([p[0] for p in parts])
    dW = np.concatenate([p[1] for p in parts])
    drift_incr = np.concatenate([p[2] for p in parts])
    jp = np.concatenate([p[3] + bounds[c] for c, p in enumerate(parts)])
    rest = [np.concatenate([p[i] for p in parts]) for i in range(4, 10)]
    return (full, dW, drift_incr, jp, *rest)


def simulate(char: Characteristics, s: float, prefix: CadlagPath, N: int, h: float, seed: int, *,
             noise: str = "gaussian", workers: int = 1, first_path: int = 0) -> Ensemble:
    """Sample ``N`` paths of the canonical process started from ``(s, prefix)``.

    Args:
        char: Characteristics of the martingale problem.
        s: Conditioning time; paths equal ``prefix`` on ``[0, s]``.
        prefix: Conditioning path (only its restriction to ``[0, s]`` matters).
        N: Number of paths.
        h: Time step; must divide ``T - s``.
        seed: Experiment seed for the counter-based generator.
        noise: ``"gaussian"`` or ``"rademacher"`` Brownian increments.
        workers: Threads over path chunks; results do not depend on it.
        first_path: Global index of the first path, for disjoint sub-ensembles.
    """
    if N < 1:
        raise InputError("need at least one path")
    if prefix.dim != char.dim:
        raise InputError("prefix and characteristics differ in dimension")
    if noise not in ("gaussian", "rademacher"):
        raise InputError(f"unknown noise kind {noise!r}")
    T = prefix.horizon
    M = _grid_steps(s, T, h)
    grid = s + h * np.arange(M + 1)
    grid[-1] = T
    pt, pv = _prefix_vertices(prefix, s)
    x0 = np.broadcast_to(prefix.value(s), (N, char.dim)).copy()
    idx = np.arange(first_path, first_path + N, dtype=np.int64)
    out = _engine(char, grid, pt, pv[None], x0, idx, seed, noise, T, workers)
    return Ensemble(char, grid, out[0], np.concatenate([pt, grid]), len(pt), *out[1:], seed=seed,
                    horizon=T, meta={"noise": noise, "first_path": first_path})


def continue_from(ens: Ensemble, k: int, repeats: int, seed: int, *, workers: int = 1) -> Ensemble:
    """Restart each path of ``ens`` at grid index ``k`` with ``repeats`` fresh continuations.

    Path ``i * repeats + j`` of the result continues path ``i``.
    """
    if not 0 <= k <= ens.n_steps:
        raise InputError("restart index outside the grid")
    hist = ens.history(k)
    N = ens.n_paths * repeats
    # history up to t_k is the new prefix; the current value opens the new grid
    pt = hist.times[:-1]
    pv = np.repeat(hist.values[:, :-1, :], repeats, axis=0)
    x0 = np.repeat(hist.current, repeats, axis=0)
    grid = ens.times[k:].copy()
    idx = np.arange(N, dtype=np.int64)
    noise = ens.meta.get("noise", "gaussian")
    out = _engine(ens.char, grid, pt, pv, x0, idx, seed, noise, ens.horizon, workers)
    return Ensemble(ens.char, grid, out[0], np.concatenate([pt, grid]), len(pt), *out[1:], seed=seed,
                    horizon=ens.horizon, meta={"noise": noise, "first_path": 0})


def mean_se(x: np.ndarray) -> tuple[float, float]:
    """Sample mean and its standard error; exact for constant samples."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise InputError("no samples")
    if np.all(x == x.flat[0]):
        return float(x.flat[0]), 0.0
    se = float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else float("inf")
    return float(x.mean()), se


# ---------------------------------------------------------------------------
# Hitting-time skeletons


def _first_exit(d: np.ndarray, v: np.ndarray, eps: float) -> float | None:
    """Smallest ``u >= 0`` with ``|d + u v| >= eps`` given ``|d| < eps``."""
    vv = float(v @ v)
    if vv == 0.0:
        return None
    dv = float(d @ v)
    disc = dv * dv - vv * (float(d @ d) - eps * eps)
    return (-dv + np.sqrt(max(disc, 0.0))) / vv


def hitting_skeleton(path: CadlagPath, t: float, eps: float, center=None) -> list[tuple[float, np.ndarray]]:
    """ε-displacement skeleton ``(H_0 = t, X_t), (H_1, X_{H_1}), ..., (T, X_T)``.

    ``H_{j+1}`` is the first time after ``H_j`` at which the displacement from
    ``X_{H_j}`` reaches ``eps``, capped at ``T``; crossings inside linear
    pieces are located exactly. With ``center`` given, the first exit is
    measured from ``center`` instead of ``X_t``.
    """
    if eps <= 0:
        raise InputError("eps must be positive")
    T = path.horizon
    t = float(t)
    x_t = path.value(t)
    out = [(t, x_t)]
    base = x_t if center is None else np.atleast_1d(np.asarray(center, dtype=float))
    if center is not None and np.linalg.norm(x_t - base) >= eps:
        base = x_t
        out.append((t, x_t))
    times = path.times
    first = int(np.searchsorted(times, t + TIME_TOL, side="right")) - 1
    cur = t
    for k in range(max(first, 0), len(times) - 1):
        t0, t1 = times[k], times[k + 1]
        a, e = path.values[k], path.lefts[k + 1]
        span = t1 - t0
        while span > 0:
            u0 = (cur - t0) / span
            start = a + u0 * (e - a)
            du = _first_exit(start - base, (e - a), eps)
            if du is None or u0 + du > 1.0:
                break
            tau = t0 + (u0 + du) * span
            if tau >= T - TIME_TOL:
                break
            base = a + (u0 + du) * (e - a)
            out.append((float(tau), base))
            cur = tau
        cur = t1
        if t1 < T - TIME_TOL and np.linalg.norm(path.values[k + 1] - base) >= eps:
            base = path.values[k + 1]
            out.append((float(t1), base))
    if out[-1][0] < T - TIME_TOL:
        out.append((T, path.values[-1]))
    return out


@dataclass(frozen=True)
class GridSkeleton:
    """Skeletons of all paths of a grid array.

    Attributes:
        frozen: ``(N, M+1, d)`` latest skeleton value at each grid time.
        hits: ``(N, M+1)`` boolean, True where a hitting time falls.
        n_hits: ``(N,)`` number of hitting times strictly before ``T``.
    """

    frozen: np.ndarray
    hits: np.ndarray
    n_hits: np.ndarray


def grid_skeleton(X: np.ndarray, eps: float, center: np.ndarray | None = None) -> GridSkeleton:
    """Vectorized :func:`hitting_skeleton` on grid values ``X`` of shape ``(N, M+1, d)``."""
    N, M1, d = X.shape
    base = X[:, 0].copy() if center is None else np.broadcast_to(np.asarray(center, dtype=float), (N, d)).copy()
    frozen = np.empty_like(X)
    hits = np.zeros((N, M1), dtype=bool)
    for k in range(M1):
        hit = np.linalg.norm(X[:, k] - base, axis=1) >= eps
        if k == 0 and center is None:
            hit[:] = False
        base[hit] = X[hit, k]
        hits[:, k] = hit
        frozen[:, k] = base
    n_hits = hits[:, :-1].sum(axis=1)
    return GridSkeleton(frozen, hits, n_hits)


# ---------------------------------------------------------------------------
# Conditional restarting


def restart_check(char: Characteristics, s: float, omega: CadlagPath, t: float, phi: Functional, N: int, seed: int,
                  *, h: float | None = None, inner: int = 20, outer: int | None = None) -> dict:
    """Compare ``E[φ]`` with the nested estimate ``E[E[φ | F_t]]`` obtained by restarting at ``t``.

    Returns a dict with ``lhs``, ``rhs`` and their standard errors plus the
    combined standard error of the difference.
    """
    if t < s - TIME_TOL:
        raise InputError("restart time precedes the start time")
    T = omega.horizon
    h = (T - s) / 256 if h is None else h
    direct = simulate(char, s, omega, N, h, seed)
    lhs, lhs_se = mean_se(phi(direct.history()))
    outer = max(N // inner, 2) if outer is None else outer
    base = simulate(char, s, omega, outer, h, seed + 1)
    k = int(round((t - s) / h))
    if abs(base.times[k] - t) > 1e-9:
        raise InputError("restart time is not on the simulation grid")
    nested = continue_from(base, k, inner, seed + 2)
    vals = phi(nested.history()).reshape(outer, inner).mean(axis=1)
    rhs, rhs_se = mean_se(vals)
    return {"lhs": lhs, "lhs_se": lhs_se, "rhs": rhs, "rhs_se": rhs_se, "se": float(np.hypot(lhs_se, rhs_se))}
