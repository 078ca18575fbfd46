"""Skorohod-type distances between scalar piecewise paths.

``d_m1`` is the Fréchet distance between completed graphs under the max-norm
of ``(time, space)``, decided exactly on the free-space diagram of the two
polylines and bracketed by bisection; the returned value is the feasible end
of the bracket, hence an upper bound. ``d_j1`` minimizes over a family of
piecewise-linear time changes (identity, order-preserving jump matchings and,
for non-step paths, a mesh search) and evaluates every candidate exactly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import InputError
from .paths import TIME_TOL, CadlagPath, _check_compatible, sup_distance

_REL_SLACK = 1e-12


def _scalar(a: CadlagPath, b: CadlagPath) -> None:
    _check_compatible(a, b)
    if a.dim != 1:
        raise InputError("this distance is defined for scalar paths; use d_p for vectors")


def coordinate(path: CadlagPath, i: int) -> CadlagPath:
    return CadlagPath(path.times, path.values[:, i : i + 1], path.lefts[:, i : i + 1])


@dataclass(frozen=True)
class CompletedGraph:
    """Ordered polyline vertices ``(t, x)`` including every jump segment."""

    points: np.ndarray

    @classmethod
    def of(cls, path: CadlagPath) -> "CompletedGraph":
        ts, vs = path.vertices()
        return cls(np.column_stack([ts, vs[:, 0]]))

    def parametric_representation(self, n: int) -> "ParametricRepresentation":
        """Samples of the arc-length parametrization of the graph at ``n`` points."""
        pts = self.points
        seg = np.abs(np.diff(pts, axis=0)).max(axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        s = np.linspace(0.0, cum[-1], max(n, 2))
        s = np.union1d(s, cum)
        r = np.interp(s, cum, pts[:, 0])
        z = np.interp(s, cum, pts[:, 1])
        return ParametricRepresentation(r, z)


@dataclass(frozen=True)
class ParametricRepresentation:
    """Samples ``(r, z)`` of a monotone map of ``[0, 1]`` onto a completed graph."""

    r: np.ndarray
    z: np.ndarray

    def distance(self, other: "ParametricRepresentation") -> float:
        """``||r - r'|| ∨ ||z - z'||`` after aligning both on a common parameter grid."""
        u1 = np.linspace(0.0, 1.0, len(self.r))
        u2 = np.linspace(0.0, 1.0, len(other.r))
        u = np.union1d(u1, u2)
        dr = np.interp(u, u1, self.r) - np.interp(u, u2, other.r)
        dz = np.interp(u, u1, self.z) - np.interp(u, u2, other.z)
        return float(max(np.abs(dr).max(), np.abs(dz).max()))


def d_u(a: CadlagPath, b: CadlagPath) -> float:
    """Uniform distance."""
    _check_compatible(a, b)
    return sup_distance(a, b)


# ---------------------------------------------------------------------------
# M1: Fréchet distance between completed graphs


def _free_intervals(points: np.ndarray, starts: np.ndarray, ends: np.ndarray, eps: float):
    """Parameter intervals on each segment within max-norm ``eps`` of each point.

    Returns ``lo, hi`` arrays of shape ``(len(points), len(starts))``; empty
    intervals have ``lo > hi``.
    """
    lo = np.zeros((len(points), len(starts)))
    hi = np.ones_like(lo)
    for k in range(points.shape[1]):
        off = starts[None, :, k] - points[:, None, k]
        delta = np.broadcast_to((ends - starts)[None, :, k], off.shape)
        flat = delta == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            a = (-eps - off) / delta
            b = (eps - off) / delta
        klo = np.where(flat, np.where(np.abs(off) <= eps, 0.0, 2.0), np.minimum(a, b))
        khi = np.where(flat, np.where(np.abs(off) <= eps, 1.0, -1.0), np.maximum(a, b))
        lo = np.maximum(lo, klo)
        hi = np.minimum(hi, khi)
    return lo, hi


def _frechet_feasible(P: np.ndarray, Q: np.ndarray, eps: float) -> bool:
    eps = eps * (1.0 + _REL_SLACK) + 1e-300
    if np.abs(P[0] - Q[0]).max() > eps or np.abs(P[-1] - Q[-1]).max() > eps:
        return False
    p, q = len(P), len(Q)
    # vertical edges: vertex i of P against segment j of Q
    vlo, vhi = (x.tolist() for x in _free_intervals(P, Q[:-1], Q[1:], eps))
    # horizontal edges: vertex j of Q against segment i of P
    hlo, hhi = (x.T.tolist() for x in _free_intervals(Q, P[:-1], P[1:], eps))
    empty = (2.0, -1.0)
    rv = [[empty] * (q - 1) for _ in range(p)]
    rh = [[empty] * q for _ in range(p - 1)]
    ok = True
    for j in range(q - 1):
        ok = ok and vlo[0][j] <= 0.0 <= vhi[0][j]
        rv[0][j] = (0.0, vhi[0][j]) if ok else empty
        ok = ok and vhi[0][j] >= 1.0
    ok = True
    for i in range(p - 1):
        ok = ok and hlo[i][0] <= 0.0 <= hhi[i][0]
        rh[i][0] = (0.0, hhi[i][0]) if ok else empty
        ok = ok and hhi[i][0] >= 1.0
    for i in range(p - 1):
        for j in range(q - 1):
            left, bottom = rv[i][j], rh[i][j]
            left_ok = left[0] <= left[1]
            bottom_ok = bottom[0] <= bottom[1]
            lo, hi = vlo[i + 1][j], vhi[i + 1][j]
            if bottom_ok:
                rv[i + 1][j] = (lo, hi)
            elif left_ok:
                rv[i + 1][j] = (max(lo, left[0]), hi)
            lo, hi = hlo[i][j + 1], hhi[i][j + 1]
            if left_ok:
                rh[i][j + 1] = (lo, hi)
            elif bottom_ok:
                rh[i][j + 1] = (max(lo, bottom[0]), hi)
    a, b = rv[p - 1][q - 2], rh[p - 2][q - 1]
    return (a[0] <= a[1] and a[1] >= 1.0) or (b[0] <= b[1] and b[1] >= 1.0)


def _point_segment_maxnorm(points: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Max-norm distance from each point to each segment (2-D), exact by ternary-free search.

    The distance along a segment is a convex piecewise-linear function of the
    parameter; its minimum sits at a parameter where one coordinate difference
    vanishes or where the two coordinate differences are equal in magnitude.
    """
    cands = [np.zeros((len(points), len(starts))), np.ones((len(points), len(starts)))]
    off = starts[None, :, :] - points[:, None, :]
    delta = np.broadcast_to((ends - starts)[None, :, :], off.shape)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(2):
            cands.append(-off[..., k] / delta[..., k])
        for sign in (1.0, -1.0):
            cands.append(-(off[..., 0] - sign * off[..., 1]) / (delta[..., 0] - sign * delta[..., 1]))
    best = np.full((len(points), len(starts)), np.inf)
    for u in cands:
        u = np.clip(np.nan_to_num(u, nan=0.0, posinf=0.0, neginf=0.0), 0.0, 1.0)
        dist = np.abs(off + u[..., None] * delta).max(axis=2)
        best = np.minimum(best, dist)
    return best


def frechet_maxnorm(P: np.ndarray, Q: np.ndarray, iterations: int = 64) -> float:
    """Fréchet distance between two planar polylines under the max-norm.

    Critical values of vertex/vertex and vertex/segment type are searched
    first; the remaining bracket is bisected ``iterations`` times and the
    feasible end returned.
    """
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    lower = max(np.abs(P[0] - Q[0]).max(), np.abs(P[-1] - Q[-1]).max())
    if _frechet_feasible(P, Q, lower):
        return float(lower)
    cands = np.concatenate([
        _point_segment_maxnorm(P, Q[:-1], Q[1:]).ravel(),
        _point_segment_maxnorm(Q, P[:-1], P[1:]).ravel(),
        np.abs(P[:, None, :] - Q[None, :, :]).max(axis=2).ravel(),
    ])
    cands = np.unique(cands[cands > lower])
    lo_i, hi_i = -1, len(cands) - 1
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if _frechet_feasible(P, Q, cands[mid]):
            hi_i = mid
        else:
            lo_i = mid
    hi = float(cands[hi_i])
    lo = float(cands[lo_i]) if lo_i >= 0 else float(lower)
    for _ in range(iterations):
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if _frechet_feasible(P, Q, mid):
            hi = mid
        else:
            lo = mid
    return hi


def d_m1(a: CadlagPath, b: CadlagPath, n_params: int = 64) -> float:
    """M1 distance of two scalar paths.

    ``n_params`` is the number of bisection refinements applied after the
    critical-value search; more refinements never increase the result.
    """
    _scalar(a, b)
    return frechet_maxnorm(CompletedGraph.of(a).points, CompletedGraph.of(b).points, n_params)


def d_p(a: CadlagPath, b: CadlagPath, n_params: int = 64) -> float:
    """Coordinatewise maximum of the M1 distances."""
    _check_compatible(a, b)
    return max(d_m1(coordinate(a, i), coordinate(b, i), n_params) for i in range(a.dim))


# ---------------------------------------------------------------------------
# J1


def compose(path: CadlagPath, knots_from: np.ndarray, knots_to: np.ndarray) -> CadlagPath:
    """``path ∘ λ`` for the piecewise-linear bijection with ``λ(knots_from) = knots_to``."""
    p = path
    for t in knots_to[1:-1]:
        p, _ = p.with_knot(t)
    new_times = np.interp(p.times, knots_to, knots_from)
    new_times[0], new_times[-1] = 0.0, path.horizon
    return CadlagPath(new_times, p.values, p.lefts)


def time_change_cost(a: CadlagPath, b: CadlagPath, knots_from: np.ndarray, knots_to: np.ndarray) -> float:
    """Exact ``sup_s |λ(s) - s| ∨ |a(λ(s)) - b(s)|`` for a piecewise-linear ``λ``."""
    warp = float(np.abs(knots_to - knots_from).max())
    return max(warp, sup_distance(compose(a, knots_from, knots_to), b))


def _interior_jumps(path: CadlagPath) -> np.ndarray:
    t = path.jump_times()
    return t[(t > TIME_TOL) & (t < path.horizon - TIME_TOL)]


def _matchings(n: int, m: int, limit: int):
    """Order-preserving partial matchings between ``range(n)`` and ``range(m)``."""
    if comb(n + m, n) <= limit:
        for k in range(min(n, m) + 1):
            for ia in itertools.combinations(range(n), k):
                for ib in itertools.combinations(range(m), k):
                    yield ia, ib
    else:
        yield (), ()
        if n == m:
            yield tuple(range(n)), tuple(range(m))


def _mesh_time_change(a: CadlagPath, b: CadlagPath, mesh: float, cap: float):
    """Minimax search for ``λ`` on a mesh with bounded offsets; returns knots or ``None``."""
    T = a.horizon
    K = max(int(round(T / mesh)), 2)
    s = np.linspace(0.0, T, K + 1)
    q = 0.5 * T / K
    W = min(int(np.ceil(cap / q)), K)
    if W < 1:
        return None
    offs = np.arange(-W, W + 1) * q
    bvals = b.value(s)[:, 0]
    big = np.inf
    cost = np.full(len(offs), big)
    cost[W] = abs(a.value(0.0)[0] - bvals[0])
    back = np.zeros((K + 1, len(offs)), dtype=np.int64)
    for k in range(1, K + 1):
        tgt = s[k] + offs
        valid = (tgt > s[k] - T / K + q * 0.5) & (tgt >= 0) & (tgt <= T)
        node = np.maximum(np.abs(offs), np.abs(a.value(np.clip(tgt, 0.0, T))[:, 0] - bvals[k]))
        cands = np.stack([np.roll(cost, 1), cost, np.roll(cost, -1)])
        cands[0, 0] = big
        cands[2, -1] = big
        arg = cands.argmin(axis=0)
        prev = cands.min(axis=0)
        new = np.where(valid, np.maximum(prev, node), big)
        back[k] = np.arange(len(offs)) + arg - 1
        cost = new
        if k == K:
            mask = np.full(len(offs), big)
            mask[W] = cost[W]
            cost = mask
    if not np.isfinite(cost[W]):
        return None
    idx = np.empty(K + 1, dtype=np.int64)
    idx[K] = W
    for k in range(K, 0, -1):
        idx[k - 1] = back[k, idx[k]]
    to = s + offs[idx]
    to[0], to[-1] = 0.0, T
    if not np.all(np.diff(to) > 0):
        return None
    return s, to


def d_j1(a: CadlagPath, b: CadlagPath, mesh: float | None = None, max_candidates: int = 5000) -> float:
    """J1 distance of two scalar paths as a certified upper bound.

    Candidates are the identity, every order-preserving matching of interior
    jump times (all of them while their number stays below ``max_candidates``)
    and, when either path has linear pieces, a minimax search on ``mesh``.
    """
    _scalar(a, b)
    T = a.horizon
    mesh = T / 1024 if mesh is None else mesh
    ends = np.array([0.0, T])
    best = time_change_cost(a, b, ends, ends)
    ja, jb = _interior_jumps(a), _interior_jumps(b)
    for ia, ib in _matchings(len(ja), len(jb), max_candidates):
        if not ia:
            continue
        frm = np.concatenate([[0.0], jb[list(ib)], [T]])
        to = np.concatenate([[0.0], ja[list(ia)], [T]])
        if np.abs(to - frm).max() >= best:
            continue
        best = min(best, time_change_cost(a, b, frm, to))
    if not (a.is_step and b.is_step) and best > 0:
        found = _mesh_time_change(a, b, mesh, best)
        if found is not None:
            best = min(best, time_change_cost(a, b, *found))
    return float(best)


# ---------------------------------------------------------------------------
# M2


def _directed_hausdorff(P: np.ndarray, Q: np.ndarray, samples: int) -> float:
    u = np.linspace(0.0, 1.0, samples + 1)
    pts = (P[:-1, None, :] + u[None, :, None] * (P[1:] - P[:-1])[:, None, :]).reshape(-1, 2)
    return float(_point_segment_maxnorm(pts, Q[:-1], Q[1:]).min(axis=1).max())


def d_m2(a: CadlagPath, b: CadlagPath, samples: int = 256) -> float:
    """Hausdorff distance between completed graphs under the max-norm of ``(t, x)``.

    Points of each segment are enumerated at ``samples`` subdivisions and
    their exact distance to the other polyline's segments taken. The norm
    matches :func:`d_m1`, so ``d_m2 <= d_m1`` holds up to the sampling.
    """
    _scalar(a, b)
    P, Q = CompletedGraph.of(a).points, CompletedGraph.of(b).points
    return max(_directed_hausdorff(P, Q, samples), _directed_hausdorff(Q, P, samples))


METRICS = {"u": d_u, "j1": d_j1, "m1": d_m1, "m2": d_m2, "p": d_p}
