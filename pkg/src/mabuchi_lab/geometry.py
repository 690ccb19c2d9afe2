"""Reduced fiber models and pointwise geometric quantities.

A fiber model is a 1-D grid carrying the background density ``w`` (the
Kähler form against Lebesgue measure), its Ricci density ``r = -(log w)''``
and the mean scalar curvature ``rbar``.  Two models are provided: a periodic
torus (flat or curved by a background potential) and a truncated sphere in
the logarithmic coordinate ``s``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit


class ConeError(ValueError):
    """A potential left the Kähler cone (non-positive metric density)."""

    def __init__(self, msg, node=None, coord=None):
        super().__init__(msg)
        self.node = node
        self.coord = coord


def _cone_fail(what, values, x):
    j = int(np.argmin(values))
    raise ConeError(f"{what} not positive at node {j} (x={x[j]:.6g}, value={values[j]:.6g})",
                    node=j, coord=float(x[j]))


@dataclass(frozen=True, eq=False)
class FiberModel:
    kind: str
    x: np.ndarray
    w: np.ndarray
    r: np.ndarray
    rbar: float
    weights: np.ndarray
    h: float
    L: Optional[float] = None
    psi0: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def periodic(self) -> bool:
        return self.kind == "torus"

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def volume(self) -> float:
        return float(np.dot(self.weights, self.w))

    def dxx(self, g):
        """Second difference along the fiber.

        Periodic on the torus.  On the sphere interior nodes use the centered
        stencil and the two end nodes the one-sided second-order stencil
        ``(2g0 - 5g1 + 4g2 - g3)/h^2``.
        """
        g = np.asarray(g, dtype=float)
        h2 = self.h * self.h
        if self.periodic:
            return (np.roll(g, -1, axis=-1) - 2.0 * g + np.roll(g, 1, axis=-1)) / h2
        out = np.empty_like(g)
        out[..., 1:-1] = (g[..., 2:] - 2.0 * g[..., 1:-1] + g[..., :-2]) / h2
        out[..., 0] = (2 * g[..., 0] - 5 * g[..., 1] + 4 * g[..., 2] - g[..., 3]) / h2
        out[..., -1] = (2 * g[..., -1] - 5 * g[..., -2] + 4 * g[..., -3] - g[..., -4]) / h2
        return out

    def dx(self, g):
        """Centered first difference (one-sided second order at sphere ends)."""
        g = np.asarray(g, dtype=float)
        if self.periodic:
            return (np.roll(g, -1, axis=-1) - np.roll(g, 1, axis=-1)) / (2 * self.h)
        return np.gradient(g, self.h, axis=-1, edge_order=2)

    def integrate(self, g) -> float:
        """Lebesgue quadrature ``sum_j q_j g_j``."""
        return float(np.dot(np.asarray(g, dtype=float), self.weights))

    def descriptor(self) -> dict:
        d = {"kind": self.kind, "N_x": int(self.n if self.periodic else self.n - 1)}
        if self.kind == "sphere":
            d["L"] = float(self.L)
        if self.psi0 is not None:
            d["psi0"] = [float(v) for v in self.psi0]
        return d

    def model_hash(self) -> str:
        blob = json.dumps(self.descriptor(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def sphere_density(s):
    s = np.asarray(s, dtype=float)
    return expit(s) * expit(-s)


def sphere_log_density(s):
    s = np.asarray(s, dtype=float)
    return -np.logaddexp(0.0, s) - np.logaddexp(0.0, -s)


def build_torus_model(N_x: int, psi0=None) -> FiberModel:
    """Periodic model on ``[0, 1)``; ``psi0`` is a sample array or a callable."""
    if N_x < 16:
        raise ValueError(f"N_x={N_x} below minimum 16")
    x = np.arange(N_x) / N_x
    h = 1.0 / N_x
    weights = np.full(N_x, h)
    base = FiberModel("torus", x, np.ones(N_x), np.zeros(N_x), 0.0, weights, h)
    if psi0 is None:
        return base
    p = np.asarray(psi0(x) if callable(psi0) else psi0, dtype=float)
    if p.shape != x.shape:
        raise ValueError(f"psi0 has {p.size} samples, grid has {N_x}")
    w = 1.0 + base.dxx(p)
    if np.any(w <= 0):
        _cone_fail("background density 1 + psi0''", w, x)
    r = -base.dxx(np.log(w))
    return FiberModel("torus", x, w, r, 0.0, weights, h, psi0=p)


def build_sphere_model(N_x: int, L: float = 8.0) -> FiberModel:
    """Sphere in the coordinate ``s`` truncated to ``[-L, L]`` with ``N_x + 1`` nodes."""
    if N_x < 32:
        raise ValueError(f"N_x={N_x} below minimum 32")
    if L < 5:
        raise ValueError(f"L={L} below minimum 5")
    s = np.linspace(-L, L, N_x + 1)
    h = 2.0 * L / N_x
    w = sphere_density(s)
    # ghost values of log w come from the closed form, so r uses the plain stencil
    lw = sphere_log_density(np.concatenate(([s[0] - h], s, [s[-1] + h])))
    r = -(lw[2:] - 2.0 * lw[1:-1] + lw[:-2]) / (h * h)
    weights = np.full(s.size, h)
    weights[0] = weights[-1] = h / 2
    rbar = float(np.dot(weights, r) / np.dot(weights, w))
    return FiberModel("sphere", s, w, r, rbar, weights, h, L=float(L))


def sphere_volume_exact(L: float) -> float:
    return float(np.tanh(L / 2.0))


def model_from_descriptor(d: dict) -> FiberModel:
    if d["kind"] == "torus":
        return build_torus_model(int(d["N_x"]), d.get("psi0"))
    if d["kind"] == "sphere":
        return build_sphere_model(int(d["N_x"]), float(d["L"]))
    raise ValueError(f"unknown model kind {d['kind']!r}")


def metric_density(model: FiberModel, phi):
    """m = w + phi'' (no positivity enforcement)."""
    return model.w + model.dxx(phi)


def volume_ratio(model: FiberModel, phi):
    """The ratio m/w of the two volume forms."""
    return metric_density(model, phi) / model.w


def log_ratio(model: FiberModel, phi):
    f = volume_ratio(model, phi)
    if np.any(f <= 0):
        _cone_fail("volume ratio", f, model.x)
    return np.log(f)


def scalar_curvature(model: FiberModel, phi):
    """R = -(log m)''/m."""
    m = metric_density(model, phi)
    if np.any(m <= 0):
        _cone_fail("metric density", m, model.x)
    return -model.dxx(np.log(m)) / m


def check_cone(model: FiberModel, phi):
    m = metric_density(model, phi)
    if np.any(m <= 0):
        _cone_fail("metric density", m, model.x)
    return m
