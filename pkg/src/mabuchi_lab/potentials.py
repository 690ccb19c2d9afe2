"""Endpoint potentials as vectorized closed forms with two derivatives.

Sphere lateral data needs the potentials off the grid, so presets are
functions rather than samples.  Sampled potentials are interpolated by a
cubic spline, and on the sphere they get exponential tails past the ends.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import expit

from .geometry import sphere_density


def softplus(s):
    return np.logaddexp(0.0, s)


@dataclass(frozen=True, eq=False)
class Endpoint:
    name: str
    f: Callable
    df: Callable
    d2f: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))

    def mix(self, other: "Endpoint", tau: float) -> "Endpoint":
        """Convex combination (1 - tau) self + tau other."""
        a, b = 1.0 - tau, tau
        return Endpoint(
            f"mix({self.name},{other.name},{tau!r})",
            lambda x: a * self.f(x) + b * other.f(x),
            lambda x: a * self.df(x) + b * other.df(x),
            lambda x: a * self.d2f(x) + b * other.d2f(x),
            {"mix": [self.descriptor(), other.descriptor(), tau]},
        )

    def descriptor(self) -> dict:
        return {"name": self.name, **self.params}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.descriptor(), sort_keys=True).encode()).hexdigest()[:16]


def _zeros(x):
    return np.zeros_like(np.asarray(x, dtype=float))


def zero() -> Endpoint:
    return Endpoint("zero", _zeros, _zeros, _zeros)


def constant(c: float) -> Endpoint:
    c = float(c)
    return Endpoint("constant", lambda x: np.full_like(np.asarray(x, dtype=float), c), _zeros, _zeros,
                    {"c": c})


def rotation(t0: float) -> Endpoint:
    """Sphere potential of the rotation by 2 t0 in s: h(s + 2 t0) - h(s), h = log(1 + e^s)."""
    a = 2.0 * float(t0)
    return Endpoint(
        "rotation",
        lambda s: softplus(s + a) - softplus(s),
        lambda s: expit(s + a) - expit(s),
        lambda s: sphere_density(s + a) - sphere_density(s),
        {"t0": float(t0)},
    )


def cosine(amplitude: float, k: int = 1) -> Endpoint:
    A = float(amplitude)
    om = 2.0 * np.pi * int(k)
    return Endpoint(
        "cosine",
        lambda x: A * np.cos(om * x),
        lambda x: -A * om * np.sin(om * x),
        lambda x: -A * om * om * np.cos(om * x),
        {"amplitude": A, "k": int(k)},
    )


def sampled(x, values, periodic: bool) -> Endpoint:
    """Spline through node samples.

    On the torus the spline is periodic.  On the sphere, beyond each end the
    slope of h + phi is continued as an exponential, which is how smooth
    potentials behave near the poles.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(values, dtype=float)
    params = {"samples": [float(t) for t in v]}
    if periodic:
        xs = np.append(x, x[0] + 1.0)
        sp = CubicSpline(xs, np.append(v, v[0]), bc_type="periodic")
        wrap = lambda u: np.mod(u, 1.0)
        return Endpoint("samples", lambda u: sp(wrap(u)), lambda u: sp(wrap(u), 1),
                        lambda u: sp(wrap(u), 2), params)
    sp = CubicSpline(x, v)
    lo, hi = x[0], x[-1]
    # tails in terms of psi = h + phi: psi' ~ A e^{k (s - lo)} on the left and
    # 1 - psi' ~ B e^{-k (s - hi)} on the right
    p_lo = expit(lo) + sp(lo, 1)
    k_lo = (sphere_density(lo) + sp(lo, 2)) / p_lo
    q_hi = 1.0 - (expit(hi) + sp(hi, 1))
    k_hi = (sphere_density(hi) + sp(hi, 2)) / q_hi
    psi_lo = softplus(lo) + sp(lo)
    psi_hi = softplus(hi) + sp(hi)

    def psi(s):
        s = np.asarray(s, dtype=float)
        out = softplus(s) + sp(np.clip(s, lo, hi))
        left = s < lo
        right = s > hi
        out = np.where(left, psi_lo + p_lo * np.expm1(k_lo * (s - lo)) / k_lo, out)
        out = np.where(right, psi_hi + (s - hi) + q_hi * np.expm1(-k_hi * (s - hi)) / k_hi, out)
        return out

    def dpsi(s):
        s = np.asarray(s, dtype=float)
        out = expit(s) + sp(np.clip(s, lo, hi), 1)
        out = np.where(s < lo, p_lo * np.exp(k_lo * (s - lo)), out)
        out = np.where(s > hi, 1.0 - q_hi * np.exp(-k_hi * (s - hi)), out)
        return out

    def d2psi(s):
        s = np.asarray(s, dtype=float)
        out = sphere_density(s) + sp(np.clip(s, lo, hi), 2)
        out = np.where(s < lo, k_lo * p_lo * np.exp(k_lo * (s - lo)), out)
        out = np.where(s > hi, k_hi * q_hi * np.exp(-k_hi * (s - hi)), out)
        return out

    return Endpoint("samples",
                    lambda s: psi(s) - softplus(s),
                    lambda s: dpsi(s) - expit(s),
                    lambda s: d2psi(s) - sphere_density(s),
                    params)


PRESETS = {"zero": zero, "constant": constant, "rotation": rotation, "cosine": cosine}
