"""Càdlàg paths on explicit grids, stopped paths, bumps and concatenation.

A path is stored as knots ``t_0 = 0 < ... < t_M = T`` with right values
``values[k]`` and left limits ``lefts[k]``. On ``[t_k, t_{k+1})`` the path runs
linearly from ``values[k]`` to ``lefts[k+1]``; a piecewise-constant segment is
the special case ``lefts[k+1] == values[k]``. A jump at ``t_k`` is exactly a
knot with ``lefts[k] != values[k]``. The value at ``T`` is ``values[M]``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import InputError

TIME_TOL = 1e-12


def _as_matrix(values: Any, n: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or (n is not None and arr.shape[0] != n):
        raise InputError(f"expected {n} value rows, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class CadlagPath:
    """Right-continuous piecewise-linear path with explicit jumps."""

    times: np.ndarray
    values: np.ndarray
    lefts: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = _as_matrix(self.values, times.shape[0])
        lefts = _as_matrix(self.lefts, times.shape[0])
        if times.ndim != 1 or times.shape[0] < 2:
            raise InputError("a path needs at least the knots 0 and T")
        if abs(times[0]) > TIME_TOL or not np.all(np.diff(times) > TIME_TOL):
            raise InputError("knot times must start at 0 and increase strictly")
        if lefts.shape != values.shape:
            raise InputError("left limits and values differ in shape")
        if not (np.all(np.isfinite(values)) and np.all(np.isfinite(lefts))):
            raise InputError("path values must be finite")
        times = times.copy()
        times[0] = 0.0
        lefts = lefts.copy()
        lefts[0] = values[0]
        for name, arr in (("times", times), ("values", values), ("lefts", lefts)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    # construction -------------------------------------------------------

    @classmethod
    def step(cls, times: Sequence[float], values: Any, horizon: float) -> "CadlagPath":
        """Piecewise-constant path equal to ``values[k]`` on ``[times[k], times[k+1])``.

        ``times[0]`` must be 0. If the last listed time is below ``horizon``
        the last level is held up to and including ``horizon``.
        """
        times = [float(t) for t in times]
        vals = _as_matrix(values, len(times))
        if times[-1] < horizon - TIME_TOL:
            times.append(float(horizon))
            vals = np.vstack([vals, vals[-1]])
        elif abs(times[-1] - horizon) > TIME_TOL:
            raise InputError("step times exceed the horizon")
        lefts = np.vstack([vals[:1], vals[:-1]])
        return cls(np.asarray(times), vals, lefts)

    @classmethod
    def constant(cls, value: Any, horizon: float) -> "CadlagPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls.step([0.0], v[None, :], horizon)

    @classmethod
    def indicator(cls, start: float, horizon: float, height: float = 1.0, end: float | None = None) -> "CadlagPath":
        """Scalar path ``height * 1_[start, end)`` with ``end`` defaulting to past ``horizon``.

        ``start == horizon`` gives the path that jumps only at the terminal time.
        """
        if end is not None and end <= start:
            raise InputError("indicator needs start < end")
        if start <= TIME_TOL:
            times, vals = [0.0], [height]
        else:
            times, vals = [0.0, start], [0.0, height]
        if end is not None and end < horizon - TIME_TOL:
            times.append(end)
            vals.append(0.0)
        return cls.step(times, np.asarray(vals), horizon)

    @classmethod
    def from_vertices(cls, times: Sequence[float], values: Any) -> "CadlagPath":
        """Inverse of :meth:`vertices`: equal consecutive times mark a jump (left, then right)."""
        times = np.asarray(times, dtype=float)
        vals = _as_matrix(values, times.shape[0])
        kt, kv, kl = [times[0]], [vals[0]], [vals[0]]
        for i in range(1, len(times)):
            if abs(times[i] - kt[-1]) <= TIME_TOL:
                kv[-1] = vals[i]
            else:
                kt.append(times[i])
                kv.append(vals[i])
                kl.append(vals[i])
        return cls(np.asarray(kt), np.asarray(kv), np.asarray(kl))

    # basic accessors ------------------------------------------------------

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    @property
    def jump_mask(self) -> np.ndarray:
        return np.any(self.values != self.lefts, axis=1)

    def jump_times(self) -> np.ndarray:
        return self.times[self.jump_mask]

    def jump_sizes(self) -> np.ndarray:
        m = self.jump_mask
        return self.values[m] - self.lefts[m]

    @property
    def is_step(self) -> bool:
        return bool(np.all(self.lefts[1:] == self.values[:-1]))

    def interp_tags(self) -> list[str]:
        """Per-segment tag: ``const`` or ``linear``; the final knot is tagged ``const``."""
        tags = ["const" if np.all(self.lefts[k + 1] == self.values[k]) else "linear" for k in range(len(self.times) - 1)]
        return tags + ["const"]

    def _knot_index(self, t: np.ndarray) -> np.ndarray:
        """Index of the last knot at or before ``t`` (with merge tolerance)."""
        j = np.searchsorted(self.times, t + TIME_TOL, side="right") - 1
        return np.clip(j, 0, len(self.times) - 1)

    def value(self, t: Any) -> np.ndarray:
        """Right-continuous value at ``t``; shape ``(..., d)``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < -TIME_TOL) or np.any(t > self.horizon + TIME_TOL):
            raise InputError("evaluation time outside [0, T]")
        j = self._knot_index(t)
        last = len(self.times) - 1
        jn = np.minimum(j + 1, last)
        span = self.times[jn] - self.times[j]
        frac = np.where(j == last, 0.0, (t - self.times[j]) / np.where(span > 0, span, 1.0))
        frac = np.clip(frac, 0.0, 1.0)[..., None]
        return self.values[j] + frac * (self.lefts[jn] - self.values[j])

    __call__ = value

    def left(self, t: Any) -> np.ndarray:
        """Left limit ``ω(t-)``, equal to ``ω(0)`` at ``t = 0``."""
        t = np.asarray(t, dtype=float)
        j = self._knot_index(t)
        at_knot = np.abs(self.times[j] - t) <= TIME_TOL
        out = self.value(t)
        return np.where(at_knot[..., None], self.lefts[j], out)

    def vertices(self, upto: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Completed-polyline vertices; a jump contributes its left then right vertex."""
        ts, vs = [self.times[0]], [self.values[0]]
        jm = self.jump_mask
        for k in range(1, len(self.times)):
            if upto is not None and self.times[k] > upto + TIME_TOL:
                break
            if jm[k]:
                ts.append(self.times[k])
                vs.append(self.lefts[k])
            ts.append(self.times[k])
            vs.append(self.values[k])
        return np.asarray(ts), np.asarray(vs)

    # transformations ---------------------------------------------------

    def with_knot(self, t: float) -> tuple["CadlagPath", int]:
        """Same function with a knot at ``t``; returns the path and the knot index."""
        t = float(t)
        j = int(self._knot_index(np.asarray(t)))
        if abs(self.times[j] - t) <= TIME_TOL:
            return self, j
        v = self.value(t)
        times = np.insert(self.times, j + 1, t)
        values = np.insert(self.values, j + 1, v, axis=0)
        lefts = np.insert(self.lefts, j + 1, v, axis=0)
        return CadlagPath(times, values, lefts), j + 1

    def stop(self, t: float) -> "CadlagPath":
        """Stopped path ``ω(· ∧ t)``."""
        if t >= self.horizon - TIME_TOL:
            return self
        p, e = self.with_knot(max(float(t), 0.0))
        v = p.values[e]
        if e == 0:
            return CadlagPath.constant(v, self.horizon)
        times = np.append(p.times[: e + 1], self.horizon)
        values = np.vstack([p.values[: e + 1], v])
        lefts = np.vstack([p.lefts[: e + 1], v])
        return CadlagPath(times, values, lefts)

    def bump(self, t: float, z: Any) -> "CadlagPath":
        """The path ``ω + z 1_[t, T]``."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        if z.shape != (self.dim,):
            raise InputError(f"bump size must have dimension {self.dim}")
        if t < -TIME_TOL or t > self.horizon + TIME_TOL:
            raise InputError("bump time outside [0, T]")
        p, e = self.with_knot(t)
        values = p.values.copy()
        lefts = p.lefts.copy()
        values[e:] += z
        lefts[e + 1:] += z
        if e == 0:
            lefts[0] = values[0]
        return CadlagPath(p.times, values, lefts)

    def history(self, t: float | None = None) -> "PathHistory":
        """Single-path :class:`PathHistory` of the path stopped at ``t``."""
        t = self.horizon if t is None else float(t)
        stopped = self.stop(t)
        ts, vs = stopped.vertices(upto=t)
        if ts[-1] < t - TIME_TOL:
            ts = np.append(ts, t)
            vs = np.vstack([vs, vs[-1]])
        return PathHistory(ts, vs[None, :, :], self.horizon)

    # serialization -----------------------------------------------------

    def to_json(self) -> dict:
        tags = self.interp_tags()
        knots = []
        for k, t in enumerate(self.times):
            knot: dict[str, Any] = {"t": float(t), "v": [float(x) for x in self.values[k]], "interp": tags[k]}
            if k > 0:
                default = self.values[k - 1] if tags[k - 1] == "const" else self.values[k]
                if np.any(self.lefts[k] != default):
                    knot["left"] = [float(x) for x in self.lefts[k]]
            knots.append(knot)
        return {"horizon": self.horizon, "dim": self.dim, "knots": knots}

    @classmethod
    def from_json(cls, data: dict) -> "CadlagPath":
        knots = data["knots"]
        times = np.array([k["t"] for k in knots], dtype=float)
        values = np.array([k["v"] for k in knots], dtype=float)
        if values.ndim != 2 or values.shape[1] != int(data.get("dim", values.shape[1])):
            raise InputError("knot values do not match the declared dimension")
        lefts = values.copy()
        for k in range(1, len(knots)):
            if "left" in knots[k]:
                lefts[k] = knots[k]["left"]
            elif knots[k - 1].get("interp", "const") == "const":
                lefts[k] = values[k - 1]
        path = cls(times, values, lefts)
        if abs(path.horizon - float(data.get("horizon", path.horizon))) > TIME_TOL:
            raise InputError("last knot must sit at the horizon")
        return path

    def to_csv(self) -> str:
        ts, vs = self.vertices()
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"x_{i + 1}" for i in range(self.dim)] + ["jump_flag"])
        for i, t in enumerate(ts):
            flag = int(i > 0 and ts[i - 1] == t)
            writer.writerow([repr(float(t))] + [repr(float(x)) for x in vs[i]] + [flag])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CadlagPath":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        d = len(header) - 2
        if d < 1 or header[0] != "t" or header[-1] != "jump_flag":
            raise InputError("path CSV needs columns t, x_1..x_d, jump_flag")
        ts = [float(r[0]) for r in body]
        vs = [[float(x) for x in r[1 : 1 + d]] for r in body]
        return cls.from_vertices(ts, vs)


def load_path(path: str | Path) -> CadlagPath:
    """Read a path from a ``.json`` or ``.csv`` file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return CadlagPath.from_json(json.loads(text))
    return CadlagPath.from_csv(text)


def save_path(p: CadlagPath, path: str | Path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".json":
        path.write_text(json.dumps(p.to_json(), indent=2, sort_keys=True) + "\n")
    else:
        path.write_text(p.to_csv())


@dataclass(frozen=True)
class TimePoint:
    """A pair ``(t, ω)`` of the path space."""

    t: float
    path: CadlagPath

    def __post_init__(self):
        if not (-TIME_TOL <= self.t <= self.path.horizon + TIME_TOL):
            raise InputError("time outside [0, T]")

    def history(self) -> "PathHistory":
        return self.path.history(self.t)


@dataclass(frozen=True, eq=False)
class PathHistory:
    """Vectorized stopped paths: ``N`` polylines sharing vertex times up to ``t``.

    This is the argument type of every path functional (coefficients, drivers,
    terminal conditions, jets). Repeated vertex times encode a jump, the earlier
    vertex being the left limit. ``extras`` carries per-path side information
    such as jump counts.
    """

    times: np.ndarray
    values: np.ndarray
    horizon: float
    extras: dict = field(default_factory=dict)

    @property
    def t(self) -> float:
        return float(self.times[-1])

    @property
    def n_paths(self) -> int:
        return int(self.values.shape[0])

    @property
    def dim(self) -> int:
        return int(self.values.shape[2])

    @property
    def current(self) -> np.ndarray:
        """Values at the current time, shape ``(N, d)``."""
        return self.values[:, -1, :]

    def running_max(self, coord: int = 0) -> np.ndarray:
        return self.values[:, :, coord].max(axis=1)

    def running_min(self, coord: int = 0) -> np.ndarray:
        return self.values[:, :, coord].min(axis=1)

    def time_integral(self, coord: int = 0) -> np.ndarray:
        """Integral over ``[0, t]`` of the polyline (trapezoidal rule is exact)."""
        v = self.values[:, :, coord]
        dt = np.diff(self.times)
        return ((v[:, 1:] + v[:, :-1]) * 0.5 * dt).sum(axis=1)

    def bumped(self, z: Any) -> "PathHistory":
        """History of ``ω + z 1_[t, T]`` stopped at ``t``."""
        z = np.asarray(z, dtype=float)
        z = np.broadcast_to(z, (self.n_paths, self.dim))
        jumped = len(self.times) >= 2 and abs(self.times[-1] - self.times[-2]) <= TIME_TOL
        if jumped:
            values = self.values.copy()
            values[:, -1, :] += z
            times = self.times
        else:
            values = np.concatenate([self.values, (self.values[:, -1, :] + z)[:, None, :]], axis=1)
            times = np.append(self.times, self.times[-1])
        return PathHistory(times, values, self.horizon, self.extras)

    def select(self, idx: Any) -> "PathHistory":
        extras = {k: v[idx] for k, v in self.extras.items()}
        return PathHistory(self.times, self.values[idx], self.horizon, extras)

    def path(self, i: int = 0) -> CadlagPath:
        """Path ``i`` extended constantly from ``t`` to the horizon."""
        ts, vs = self.times, self.values[i]
        if ts[-1] < self.horizon - TIME_TOL:
            ts = np.append(ts, self.horizon)
            vs = np.vstack([vs, vs[-1]])
        return CadlagPath.from_vertices(ts, vs)


def _check_compatible(a: CadlagPath, b: CadlagPath) -> None:
    if abs(a.horizon - b.horizon) > TIME_TOL:
        raise InputError(f"horizons differ: {a.horizon} vs {b.horizon}")
    if a.dim != b.dim:
        raise InputError(f"dimensions differ: {a.dim} vs {b.dim}")


def merged_grid(*paths: CadlagPath) -> np.ndarray:
    """Union of knot times with near-duplicates (within ``TIME_TOL``) removed."""
    grid = np.unique(np.concatenate([p.times for p in paths]))
    keep = np.concatenate([[True], np.diff(grid) > TIME_TOL])
    return grid[keep]


def sup_distance(a: CadlagPath, b: CadlagPath) -> float:
    """Exact ``sup_t |a(t) - b(t)|`` (Euclidean norm in space)."""
    _check_compatible(a, b)
    grid = merged_grid(a, b)
    right = np.linalg.norm(a.value(grid) - b.value(grid), axis=1)
    left = np.linalg.norm(a.left(grid) - b.left(grid), axis=1)
    return float(max(right.max(), left.max()))


def d_inf(a: TimePoint, b: TimePoint) -> float:
    """``|t - t'| + ||ω(· ∧ t) - ω'(· ∧ t')||_∞``."""
    _check_compatible(a.path, b.path)
    return abs(a.t - b.t) + sup_distance(a.path.stop(a.t), b.path.stop(b.t))


def bump(path: CadlagPath, t: float, z: Any) -> CadlagPath:
    return path.bump(t, z)


def stop(path: CadlagPath, t: float) -> CadlagPath:
    return path.stop(t)


def concat(prefix: CadlagPath, s: float, levels: Sequence[tuple[float, Any]], tail_value: Any) -> CadlagPath:
    """Prefix on ``[0, s)``, skeleton levels afterwards, ``tail_value`` at ``T``.

    The path is ``prefix`` on ``[0, s)``, ``x_i`` on ``[t_i, t_{i+1})`` for the
    skeleton pairs ``(t_i, x_i)`` (the last level runs up to ``T``), and
    ``tail_value`` at ``T``. An empty skeleton holds ``prefix(s)`` on ``[s, T)``.
    """
    T = prefix.horizon
    d = prefix.dim
    if s < -TIME_TOL or s > T + TIME_TOL:
        raise InputError("concatenation time outside [0, T]")
    pairs = [(float(t), np.atleast_1d(np.asarray(x, dtype=float))) for t, x in levels]
    if not pairs:
        pairs = [(float(s), prefix.value(s))]
    prev = s
    for t, x in pairs:
        if t < prev - TIME_TOL or t > T + TIME_TOL:
            raise InputError("skeleton times must be nondecreasing within [s, T]")
        if x.shape != (d,):
            raise InputError("skeleton level has the wrong dimension")
        prev = t
    if abs(pairs[0][0] - s) > TIME_TOL:
        raise InputError("skeleton must start at the concatenation time")
    tail = np.atleast_1d(np.asarray(tail_value, dtype=float))
    # Later entries win on ties; levels starting at T never show.
    clean: list[tuple[float, np.ndarray]] = []
    for t, x in pairs:
        if t >= T - TIME_TOL:
            continue
        if clean and abs(clean[-1][0] - t) <= TIME_TOL:
            clean[-1] = (clean[-1][0], x)
        else:
            clean.append((t, x))
    if not clean:
        # s == T: only the prefix and the terminal value remain
        p, e = prefix.with_knot(T)
        values = p.values.copy()
        values[-1] = tail
        return CadlagPath(p.times, values, p.lefts)
    times, values, lefts = [], [], []
    if s > TIME_TOL:
        p, e = prefix.with_knot(s)
        times.extend(p.times[:e])
        values.extend(p.values[:e])
        lefts.extend(p.lefts[:e])
        left_at_s = p.lefts[e]
    else:
        left_at_s = clean[0][1]
    prev_level = left_at_s
    for t, x in clean:
        times.append(t)
        values.append(x)
        lefts.append(prev_level)
        prev_level = x
    times.append(T)
    values.append(tail)
    lefts.append(prev_level)
    return CadlagPath(np.asarray(times), np.asarray(values), np.asarray(lefts))
