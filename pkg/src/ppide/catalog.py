"""Named built-ins for configuration files: characteristics, drivers, ξ, barriers, paths, stopping rules.

Every builder takes a plain dict (parsed JSON) and validates the model
bounds at load time, raising :class:`~ppide.errors.AssumptionError` with the
name of the violated assumption.
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .bsde import Functional, StoppingRule
from .errors import AssumptionError, InputError
from .operators import Driver, FunctionalJet
from .paths import CadlagPath, load_path
from .simulate import AtomicLaw, Characteristics, Ensemble, FiniteLevy, UniformLaw


def _get(spec: dict, key: str, default: Any = None, required: bool = False):
    if key not in spec:
        if required:
            raise InputError(f"missing key {key!r} in {spec.get('kind', 'spec')}")
        return default
    return spec[key]


# ---------------------------------------------------------------------------
# characteristics


def jump_spec(spec: dict | None) -> FiniteLevy | None:
    """``{"rate", "sizes", "probs"}`` for atomic laws or ``{"rate", "uniform": [lo, hi], "symmetric"}``."""
    if not spec:
        return None
    rate = float(_get(spec, "rate", required=True))
    if "uniform" in spec:
        lo, hi = spec["uniform"]
        return FiniteLevy(rate, UniformLaw(float(lo), float(hi), bool(spec.get("symmetric", False))))
    sizes = np.asarray(_get(spec, "sizes", required=True), dtype=float)
    probs = spec.get("probs")
    probs = np.full(len(sizes), 1.0 / len(sizes)) if probs is None else np.asarray(probs, dtype=float)
    return FiniteLevy(rate, AtomicLaw(sizes, probs))


def characteristics(spec: dict) -> Characteristics:
    """Constant characteristics ``{"b", "sigma", "jumps", "bound", "lower_jump"}``."""
    jumps = jump_spec(spec.get("jumps"))
    char = Characteristics.constant(spec.get("b", 0.0), spec.get("sigma", 0.0), jumps, spec.get("bound"),
                                    spec.get("lower_jump"), spec.get("dim"))
    if spec.get("elliptic", False):
        s = char.const_sigma
        if np.linalg.eigvalsh(s @ s.T).min() <= 0:
            raise AssumptionError("uniform-ellipticity", "sigma sigma^T must be positive definite")
    return char


# ---------------------------------------------------------------------------
# drivers


def driver(spec: dict | None, char: Characteristics | None = None) -> Driver:
    """Drivers by ``kind``.

    * ``zero``
    * ``constant``: ``f = kappa``
    * ``linear``: ``f = alpha y``
    * ``semilinear``: ``f = c + a_y y + a_z |z|_1 + a_p p`` with ``a_p >= 0``
    """
    spec = spec or {"kind": "zero"}
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return Driver.zero()
    if kind == "constant":
        k = float(_get(spec, "kappa", required=True))
        return Driver(lambda t, h, y, z, p: np.full_like(y, k), lipschitz=0.0, name="constant")
    if kind == "linear":
        a = float(_get(spec, "alpha", required=True))
        return Driver(lambda t, h, y, z, p: a * y, lipschitz=abs(a), name="linear")
    if kind == "semilinear":
        c, ay, az, ap = (float(spec.get(k, 0.0)) for k in ("c", "a_y", "a_z", "a_p"))
        if ap < 0:
            raise AssumptionError("driver-monotone-in-p", "a_p must be nonnegative")
        lip = abs(ay) + abs(az) + ap
        if char is not None and lip > char.bound + 1e-12:
            raise AssumptionError("driver-lipschitz", f"Lipschitz constant {lip} exceeds the common bound {char.bound}")
        return Driver(lambda t, h, y, z, p: c + ay * y + az * np.abs(z).sum(axis=1) + ap * p,
                      lipschitz=lip, name="semilinear")
    raise InputError(f"unknown driver kind {kind!r}")


# ---------------------------------------------------------------------------
# terminal functionals


def terminal_g(spec: dict):
    """Scalar map ``g`` by name: identity, sin, cos, put, call."""
    name = spec.get("g", "identity")
    a, b = float(spec.get("a", 1.0)), float(spec.get("b", 0.0))
    if name == "identity":
        return lambda x: a * x + b
    if name == "sin":
        c = float(spec.get("c", 1.0))
        return lambda x: a * x + b + c * np.sin(x)
    if name == "cos":
        return lambda x: a * np.cos(x) + b
    if name == "put":
        k = float(_get(spec, "strike", required=True))
        return lambda x: np.maximum(k - x, 0.0)
    if name == "call":
        k = float(_get(spec, "strike", required=True))
        return lambda x: np.maximum(x - k, 0.0)
    raise InputError(f"unknown g {name!r}")


def xi(spec: dict) -> Functional:
    """Terminal functionals by ``kind``, all continuous in the weak M1 topology.

    * ``constant``: ``c``
    * ``terminal-g``: ``g(ω_T)`` with ``g`` one of identity, sin, cos, put, call
    * ``running-max``: ``scale · sup_t ω_t``
    * ``time-average``: ``scale · T^{-1} ∫ ω_t dt``
    * ``max-plus-terminal``: ``a · sup ω + g(ω_T)``
    """
    kind = _get(spec, "kind", required=True)
    coord = int(spec.get("coord", 0))
    scale = float(spec.get("scale", 1.0))
    if kind == "constant":
        c = float(_get(spec, "c", required=True))
        return lambda h: np.full(h.n_paths, c)
    if kind == "terminal-g":
        g = terminal_g(spec)
        return lambda h: g(h.current[:, coord])
    if kind == "running-max":
        return lambda h: scale * h.running_max(coord)
    if kind == "time-average":
        return lambda h: scale * h.time_integral(coord) / h.horizon
    if kind == "max-plus-terminal":
        g = terminal_g(spec.get("terminal", {"g": "identity", "a": 0.0}))
        return lambda h: scale * h.values[:, :, coord].max(axis=1) + g(h.current[:, coord])
    raise InputError(f"unknown xi kind {kind!r}")


def barrier(spec: dict) -> Functional:
    """Barriers ``R(t, ω) = g(ω_t)`` with ``g`` as in :func:`xi`."""
    g = terminal_g(spec)
    coord = int(spec.get("coord", 0))
    return lambda h: g(h.current[:, coord])


def jet(spec: dict, dim: int = 1) -> FunctionalJet:
    """Functional jets: ``constant``, ``time``, ``value``, ``square``, ``affine``."""
    kind = _get(spec, "kind", required=True)
    if kind == "constant":
        return FunctionalJet.constant(float(spec.get("c", 0.0)), dim)
    if kind == "time":
        return FunctionalJet.time(dim)
    if kind == "value":
        return FunctionalJet.value(int(spec.get("coord", 0)), dim)
    if kind == "square":
        return FunctionalJet.square(int(spec.get("coord", 0)), dim)
    if kind == "affine":
        return FunctionalJet.affine(float(spec.get("a", 1.0)), int(spec.get("coord", 0)), dim)
    raise InputError(f"unknown jet kind {kind!r}")


# ---------------------------------------------------------------------------
# paths and stopping rules


def path(spec: dict | None, horizon: float, dim: int = 1) -> CadlagPath:
    """``{"constant": x}``, ``{"step": {"times", "values"}}``, ``{"knots": [...]}`` or ``{"file": name}``."""
    if not spec:
        return CadlagPath.constant(np.zeros(dim), horizon)
    if "constant" in spec:
        return CadlagPath.constant(spec["constant"], horizon)
    if "step" in spec:
        return CadlagPath.step(spec["step"]["times"], spec["step"]["values"], horizon)
    if "knots" in spec:
        return CadlagPath.from_json({"horizon": horizon, "dim": dim, **spec})
    if "file" in spec:
        return load_path(spec["file"])
    raise InputError("path spec needs one of constant, step, knots, file")


def stopping_rule(spec: dict | None) -> StoppingRule | None:
    """``{"kind": "exit", "radius"}``: first grid exit of ``|X - X_s|``; ``{"kind": "fixed", "time"}``."""
    if not spec:
        return None
    kind = _get(spec, "kind", required=True)
    if kind == "exit":
        r = float(_get(spec, "radius", required=True))

        def rule(ens: Ensemble) -> np.ndarray:
            X = ens.X
            dist = np.linalg.norm(X - X[:, :1], axis=2)
            hit = dist >= r
            hit[:, -1] = True
            return hit.argmax(axis=1)

        return rule
    if kind == "fixed":
        t = float(_get(spec, "time", required=True))

        def rule(ens: Ensemble) -> np.ndarray:
            k = int(np.argmin(np.abs(ens.times - t)))
            return np.full(ens.n_paths, k)

        return rule
    raise InputError(f"unknown stopping rule {kind!r}")
