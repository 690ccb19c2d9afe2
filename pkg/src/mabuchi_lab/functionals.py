"""Energy, entropy and Mabuchi-type functionals in the n = 1 reduction.

    E(phi)     = 1/2 int phi (w + m) dx
    E^a(phi)   = int phi a dx
    H(phi)     = int f log f w dx,         f = m/w
    H_A(phi)   = int f log max(f, kappa) w dx
    K          = rbar E - E^r + H
    K~_{eps,A} = K_{eps,A} - eps C_A t(1 - t)
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import FiberModel, check_cone, metric_density, scalar_curvature

CONVEX_TOL = 1e-6


def energy_E(model: FiberModel, phi) -> float:
    phi = np.asarray(phi, dtype=float)
    return 0.5 * model.integrate(phi * (model.w + metric_density(model, phi)))


def energy_twisted(model: FiberModel, phi, alpha) -> float:
    return model.integrate(np.asarray(phi, dtype=float) * np.asarray(alpha, dtype=float))


def entropy(model: FiberModel, phi) -> float:
    m = check_cone(model, phi)
    f = m / model.w
    return model.integrate(f * np.log(f) * model.w)


def _truncated_integrand(f, kappa):
    # 0 log kappa = 0 where f = 0, which the product already gives
    return f * np.log(np.maximum(f, kappa))


def chi_background(model: FiberModel):
    """chi0 and k0 with chi0'' + k0 w > 0: (0, 1) on the torus, (log w, 3) on the sphere."""
    if model.periodic:
        return np.zeros(model.n), 1.0
    return np.log(model.w), 3.0


@dataclass(eq=False)
class TruncationContext:
    A: float
    k0: float
    chi: np.ndarray
    kappa: np.ndarray


def truncation_context(model: FiberModel, Phi, A: float) -> TruncationContext:
    Phi = np.atleast_2d(np.asarray(Phi, dtype=float))
    chi0, k0 = chi_background(model)
    proxy = model.dxx(chi0) + k0 * model.w
    if np.any(proxy < 0):
        j = int(np.argmin(proxy))
        raise ValueError(f"chi0'' + k0 w negative at node {j}")
    chi = chi0[None, :] - k0 * Phi
    kappa = np.exp(chi - A) / model.w[None, :]
    return TruncationContext(float(A), k0, chi, kappa)


def entropy_truncated(model: FiberModel, phi, ctx: TruncationContext, t: int) -> float:
    f = metric_density(model, phi) / model.w
    return model.integrate(_truncated_integrand(f, ctx.kappa[t]) * model.w)


def endpoint_velocity(Phi, ht: float, endpoint: int):
    """One-sided three-point time derivative at t = 0 or t = 1."""
    if endpoint == 0:
        return (-3.0 * Phi[0] + 4.0 * Phi[1] - Phi[2]) / (2.0 * ht)
    return (3.0 * Phi[-1] - 4.0 * Phi[-2] + Phi[-3]) / (2.0 * ht)


def slope_from(model: FiberModel, phi, phidot) -> float:
    """-int phidot (R_phi - rbar) m dx.

    On the sphere the two nodes next to each pole are left out: there R is a
    one-sided difference of a one-sided difference, and m dx is O(e^-L).
    """
    m = metric_density(model, phi)
    R = scalar_curvature(model, phi)
    g = np.asarray(phidot) * (R - model.rbar) * m
    if not model.periodic:
        g = g.copy()
        g[:2] = 0.0
        g[-2:] = 0.0
    return -model.integrate(g)


def mabuchi_slope(model: FiberModel, result, endpoint: int) -> float:
    Phi = result.values
    i = 0 if endpoint == 0 else -1
    return slope_from(model, Phi[i], endpoint_velocity(Phi, result.grid.ht, endpoint))


def one_sided_slopes(values, ht: float):
    """Three-point one-sided derivatives of a profile at both ends."""
    v = np.asarray(values, dtype=float)
    d0 = (-3 * v[0] + 4 * v[1] - v[2]) / (2 * ht)
    d1 = (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * ht)
    return d0, d1


def convexity_ok(values) -> bool:
    v = np.asarray(values, dtype=float)
    d2 = v[2:] - 2 * v[1:-1] + v[:-2]
    return bool(d2.min() >= -CONVEX_TOL * (np.abs(v).max() + 1.0))


@dataclass(eq=False)
class EnergyProfile:
    t: np.ndarray
    E: np.ndarray
    E_ric: np.ndarray
    H: np.ndarray
    H_A: np.ndarray
    K: np.ndarray
    K_A: np.ndarray
    K_tilde: np.ndarray
    eps: float
    A: float
    C_A: float
    C_A_seed: float
    doublings: int
    convex: bool
    slope0: float
    slope1: float
    meta: dict = field(default_factory=dict)

    COLUMNS = ("t", "E", "E_ric", "H", "H_A", "K", "K_A", "K_tilde")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.COLUMNS) + "\n")
        for i in range(self.t.size):
            buf.write(",".join(repr(float(getattr(self, c)[i])) for c in self.COLUMNS) + "\n")
        return buf.getvalue()

    def to_json(self) -> str:
        d = {c: [float(v) for v in getattr(self, c)] for c in self.COLUMNS}
        d.update(eps=self.eps, A=self.A, C_A=self.C_A, C_A_seed=self.C_A_seed,
                 doublings=self.doublings, convex=self.convex,
                 slope0=self.slope0, slope1=self.slope1, meta=self.meta)
        return json.dumps(d, indent=1, sort_keys=True)


def ricci_trace_bound(model: FiberModel, Phi, kappa) -> float:
    """V * max(0, max of r/m over nodes with f > kappa)."""
    m = model.w[None, :] + model.dxx(Phi)
    f = m / model.w[None, :]
    mask = f > kappa
    if not mask.any():
        return 0.0
    tr = (model.r[None, :] / m)[mask]
    return model.volume * max(0.0, float(tr.max()))


def mabuchi_profile(model: FiberModel, result, A: float, max_doublings: int = 60) -> EnergyProfile:
    Phi = result.values
    grid = result.grid
    t = grid.t
    eps = result.eps
    ctx = truncation_context(model, Phi, A)
    n = t.size
    E = np.empty(n)
    Er = np.empty(n)
    H = np.empty(n)
    HA = np.empty(n)
    for i in range(n):
        phi = Phi[i]
        m = check_cone(model, phi)
        f = m / model.w
        E[i] = 0.5 * model.integrate(phi * (model.w + m))
        Er[i] = model.integrate(phi * model.r)
        H[i] = model.integrate(f * np.log(f) * model.w)
        HA[i] = model.integrate(_truncated_integrand(f, ctx.kappa[i]) * model.w)
    K = model.rbar * E - Er + H
    KA = model.rbar * E - Er + HA
    seed = ricci_trace_bound(model, Phi, ctx.kappa)
    bump = eps * t * (1 - t)
    C = seed
    doublings = 0
    convex = convexity_ok(KA - C * bump)
    while not convex and doublings < max_doublings:
        C = model.volume if C == 0 else 2.0 * C
        doublings += 1
        convex = convexity_ok(KA - C * bump)
    return EnergyProfile(t, E, Er, H, HA, K, KA, KA - C * bump, eps, float(A), float(C), float(seed),
                         doublings, convex, mabuchi_slope(model, result, 0),
                         mabuchi_slope(model, result, 1))
