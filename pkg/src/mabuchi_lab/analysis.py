"""Diagnostics along eps-ladders.

Fields live on the full (N_t + 1) x n grid with NaN where a stencil is not
available, so masks and quadratures only ever see defined nodes.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .calculus import time_weights
from .functionals import (EnergyProfile, entropy, mabuchi_profile, mabuchi_slope,
                          one_sided_slopes, truncation_context)
from .geometry import FiberModel

ZERO_TOL = 1e-10


# ---------------------------------------------------------------- stencils with NaN edges

def _cx(model: FiberModel, A):
    if model.periodic:
        return (np.roll(A, -1, axis=1) - np.roll(A, 1, axis=1)) / (2 * model.h)
    out = np.full_like(A, np.nan)
    out[:, 1:-1] = (A[:, 2:] - A[:, :-2]) / (2 * model.h)
    return out


def _cxx(model: FiberModel, A):
    if model.periodic:
        return (np.roll(A, -1, axis=1) - 2 * A + np.roll(A, 1, axis=1)) / model.h ** 2
    out = np.full_like(A, np.nan)
    out[:, 1:-1] = (A[:, 2:] - 2 * A[:, 1:-1] + A[:, :-2]) / model.h ** 2
    return out


def _ctt(ht, A):
    out = np.full_like(A, np.nan)
    out[1:-1] = (A[2:] - 2 * A[1:-1] + A[:-2]) / ht ** 2
    return out


def _ctx(model: FiberModel, ht, A):
    out = np.full_like(A, np.nan)
    if model.periodic:
        up = np.roll(A, -1, axis=1)
        dn = np.roll(A, 1, axis=1)
        out[1:-1] = (up[2:] - dn[2:] - up[:-2] + dn[:-2]) / (4 * ht * model.h)
    else:
        out[1:-1, 1:-1] = (A[2:, 2:] - A[2:, :-2] - A[:-2, 2:] + A[:-2, :-2]) / (4 * ht * model.h)
    return out


def metric_field(model: FiberModel, P):
    return model.w[None, :] + model.dxx(P)


# ---------------------------------------------------------------- vector field and norms

def vector_field(result):
    """v^x = -Phi_tx/m (v^t = 1)."""
    model = result.model
    P = result.values
    return -_ctx(model, result.grid.ht, P) / metric_field(model, P)


@dataclass(eq=False)
class DbarFields:
    dbar_X: np.ndarray
    grad_term: np.ndarray
    dbar_G: np.ndarray
    identity: np.ndarray

    @property
    def identity_sup(self) -> float:
        v = self.identity[np.isfinite(self.identity)]
        return float(np.abs(v).max()) if v.size else 0.0


def dbar_fields(model: FiberModel, ht: float, P, eps: Optional[float] = None) -> DbarFields:
    """Reduced form of the two identities for the field v = d_t + v^x d_x.

    dbar_X = (d_x(Phi_tx/m))^2.  With rho = eps w/m when eps is given, or
    rho = Phi_tt - Phi_tx^2/m otherwise, and F = -log rho, the identity reads

        (log m)_tt + 2 v (log m)_tx + v^2 (log m)_xx
            = dbar_X + rho F_x^2/m - rho F_xx/m .
    """
    P = np.asarray(P, dtype=float)
    M = metric_field(model, P)
    ptx = _ctx(model, ht, P)
    g = ptx / M
    dbar = _cx(model, g) ** 2
    if eps is None:
        rho = _ctt(ht, P) - ptx ** 2 / M
    else:
        rho = eps * model.w[None, :] / M
    with np.errstate(invalid="ignore", divide="ignore"):
        F = -np.log(rho)
    Fx = _cx(model, F)
    Fxx = _cxx(model, F)
    grad = rho * Fx ** 2 / M
    lap = rho * Fxx / M
    L = np.log(M)
    v = -g
    lhs = _ctt(ht, L) + 2 * v * _ctx(model, ht, L) + v * v * _cxx(model, L)
    rhs = dbar + grad - lap
    return DbarFields(dbar, grad, dbar + grad, lhs - rhs)


def dbar_norms(result) -> DbarFields:
    return dbar_fields(result.model, result.grid.ht, result.values, result.eps)


def slice_integral(model: FiberModel, g) -> np.ndarray:
    """Per-slice Lebesgue quadrature, undefined nodes counted as zero."""
    return np.nan_to_num(np.asarray(g, dtype=float), nan=0.0) @ model.weights


def identity_sup(model: FiberModel, d: DbarFields, margin: float = 3.0) -> float:
    """Sup of the identity residual; on the sphere only over |s| <= L - margin.

    Near the poles every term divides by m = O(e^-L), so the discrete
    identity is only meaningful on a compact s-range.
    """
    I = np.abs(d.identity)
    if not model.periodic:
        I = I[:, np.abs(model.x) <= model.L - margin + 1e-12]
    v = I[np.isfinite(I)]
    return float(v.max()) if v.size else 0.0


def identity_refinement(coarse, fine, margin: float = 3.0):
    """(coarse sup, fine sup, ratio) of identity residuals on two grids."""
    a = identity_sup(coarse.model, dbar_norms(coarse), margin)
    b = identity_sup(fine.model, dbar_norms(fine), margin)
    return a, b, (a / b if b > 0 else float("inf"))


def dbar_integral(result) -> np.ndarray:
    """Per slice: int |dbar_X v|^2 m dx."""
    d = dbar_norms(result)
    return slice_integral(result.model, d.dbar_X * metric_field(result.model, result.values))


# ---------------------------------------------------------------- truncation set and estimates

def truncation_mask(result, A: float):
    """Nodes with f > kappa on every slice."""
    model = result.model
    ctx = truncation_context(model, result.values, A)
    f = metric_field(model, result.values) / model.w[None, :]
    return f > ctx.kappa


def truncation_set(result, A: float, t: int):
    return truncation_mask(result, A)[t]


def partial_w12_from(model: FiberModel, f, mask=None) -> float:
    fx = model.dx(np.asarray(f, dtype=float))
    g = fx * fx * model.w
    if mask is not None:
        g = np.where(mask, g, 0.0)
    return model.integrate(g)


def partial_w12(result, A: float, t: int) -> float:
    model = result.model
    f = metric_field(model, result.values)[t] / model.w
    return partial_w12_from(model, f, truncation_set(result, A, t))


@dataclass
class IntegralEstimate:
    lhs: float
    rhs: float
    margin: float
    scale: float

    @property
    def ok(self) -> bool:
        return self.margin >= -1e-6 * self.scale


def integral_estimate_com016(result, A: float, profile: Optional[EnergyProfile] = None) -> IntegralEstimate:
    """K~'(1) - K~'(0) against the masked space-time integral of |dbar v|^2_G."""
    model = result.model
    grid = result.grid
    if profile is None:
        profile = mabuchi_profile(model, result, A)
    d0, d1 = one_sided_slopes(profile.K_tilde, grid.ht)
    lhs = d1 - d0
    M = metric_field(model, result.values)
    d = dbar_norms(result)
    f = M / model.w[None, :]
    fx = _cx(model, np.log(f))
    integrand = d.dbar_X * M + result.eps * fx ** 2 / M * model.w[None, :]
    integrand = np.where(truncation_mask(result, A), integrand, 0.0)
    rhs = float(time_weights(grid.N_t) @ slice_integral(model, integrand))
    margin = lhs - rhs
    return IntegralEstimate(float(lhs), rhs, float(margin), float(1.0 + abs(lhs) + abs(rhs)))


# ---------------------------------------------------------------- gap scan

def gap_scan(f, floor: float = 1e-2, zero_tol: float = ZERO_TOL):
    """Largest k such that no sample lies in (zero_tol, k)."""
    f = np.asarray(f, dtype=float).ravel()
    if np.any(f < -zero_tol):
        raise ValueError("gap_scan needs f >= 0")
    pos = f[f > zero_tol]
    k = float(pos.min()) if pos.size else float("inf")
    return k, ("gap" if k >= floor else "no-gap")


# ---------------------------------------------------------------- fits

@dataclass
class RateFit:
    rate: Optional[float]
    prefactor: Optional[float]
    r2: Optional[float]
    residuals: list = field(default_factory=list)
    note: str = ""

    def to_dict(self):
        return {"rate": self.rate, "prefactor": self.prefactor, "r2": self.r2,
                "residuals": self.residuals, "note": self.note}


def fit_rate(eps, q, floor: float = 1e-300) -> RateFit:
    """Least squares of log|q| on log eps."""
    eps = np.asarray(eps, dtype=float)
    q = np.abs(np.asarray(q, dtype=float))
    if np.all(q <= floor):
        return RateFit(None, None, None, [], "identically zero")
    keep = q > floor
    if keep.sum() < 2:
        return RateFit(None, None, None, [], "fewer than two nonzero values")
    x = np.log(eps[keep])
    y = np.log(q[keep])
    p, c = np.polyfit(x, y, 1)
    res = y - (p * x + c)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((res ** 2).sum()) / ss if ss > 0 else 1.0
    return RateFit(float(p), float(np.exp(c)), r2, [float(v) for v in res],
                   "" if keep.all() else "zero values dropped")


# ---------------------------------------------------------------- report

Reference = Union[None, np.ndarray, Callable]


@dataclass(eq=False)
class ConvergenceReport:
    eps: list
    t: list
    l2: list
    sup_K: list
    slope_gap: list
    d2K: list
    min_f: list
    kappa0: list
    w12: list
    dbar: list
    fits: dict
    boundary_entropy: dict
    kappa1: float
    reference_note: str
    A: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=1, sort_keys=True, default=_jsonable)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("rung,slice,metric,value\n")
        per_slice = ("l2", "d2K", "min_f", "kappa0", "w12", "dbar")
        for k in range(len(self.eps)):
            for name in per_slice:
                for i, v in enumerate(getattr(self, name)[k]):
                    buf.write(f"{k},{i},{name},{float(v)!r}\n")
            buf.write(f"{k},,sup_K,{float(self.sup_K[k])!r}\n")
            buf.write(f"{k},,slope_gap,{float(self.slope_gap[k])!r}\n")
        return buf.getvalue()


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, RateFit):
        return o.to_dict()
    raise TypeError(type(o))


def _K(model, P):
    out = np.empty(P.shape[0])
    for i in range(P.shape[0]):
        phi = P[i]
        m = model.w + model.dxx(phi)
        f = m / model.w
        E = 0.5 * model.integrate(phi * (model.w + m))
        out[i] = model.rbar * E - model.integrate(phi * model.r) + model.integrate(f * np.log(f) * model.w)
    return out


def boundary_entropy(result, ts=(1 / 16, 1 / 32, 1 / 64)) -> dict:
    """|H(phi_t) - H(phi_0)| and |H(phi_{1-t}) - H(phi_1)| at the grid slices nearest to ts."""
    model = result.model
    P = result.values
    N = result.grid.N_t
    H0 = entropy(model, P[0])
    H1 = entropy(model, P[-1])
    out = {"t": [], "near0": [], "near1": []}
    for t in ts:
        i = int(round(t * N))
        if i < 1 or abs(i - t * N) > 1e-9:
            continue
        out["t"].append(float(t))
        out["near0"].append(abs(entropy(model, P[i]) - H0))
        out["near1"].append(abs(entropy(model, P[N - i]) - H1))
    return out


def convergence_report(ladder, reference: Reference = None, A: float = 8.0,
                       mid: float = 0.5) -> ConvergenceReport:
    if not ladder:
        raise ValueError("empty ladder")
    g0 = ladder[0].grid
    for r in ladder:
        if r.values.shape != ladder[0].values.shape or r.grid.N_t != g0.N_t \
                or r.model.model_hash() != ladder[0].model.model_hash():
            raise ValueError("ladder results live on different grids")
    model = g0.model
    t = g0.t
    if reference is None:
        ref = ladder[-1].values
        note = "finest rung used as proxy reference"
    elif callable(reference):
        ref = np.asarray(reference(t[:, None], model.x[None, :]), dtype=float)
        note = "exact oracle"
    else:
        ref = np.asarray(reference, dtype=float)
        note = "supplied reference field"
    f_ref = metric_field(model, ref) / model.w[None, :]
    K_ref = _K(model, ref)
    eps, l2, supK, gap, d2K, minf, k0, w12, dbar = ([] for _ in range(9))
    for r in ladder:
        P = r.values
        f = metric_field(model, P) / model.w[None, :]
        diff = (f - f_ref) ** 2 * model.w[None, :]
        l2.append(np.sqrt(diff @ model.weights))
        K = _K(model, P)
        supK.append(float(np.abs(K - K_ref).max()))
        gap.append(mabuchi_slope(model, r, 1) - mabuchi_slope(model, r, 0))
        d2K.append((K[2:] - 2 * K[1:-1] + K[:-2]) / g0.ht ** 2)
        minf.append(f.min(axis=1))
        k0.append(np.array([gap_scan(row)[0] for row in f]))
        mask = truncation_mask(r, A)
        w12.append(np.array([partial_w12_from(model, f[i], mask[i]) for i in range(t.size)]))
        dbar.append(dbar_integral(r))
        eps.append(r.eps)
    i_mid = int(round(mid * g0.N_t))
    fits = {
        "l2_mid": fit_rate(eps, [v[i_mid] for v in l2]),
        "slope_gap": fit_rate(eps, gap),
        "dbar_mid": fit_rate(eps, [v[i_mid] for v in dbar]),
        "max_d2K": fit_rate(eps, [np.abs(v).max() for v in d2K]),
        "sup_K": fit_rate(eps, supK),
    }
    return ConvergenceReport(eps, list(t), l2, supK, gap, d2K, minf, k0, w12, dbar, fits,
                             boundary_entropy(ladder[-1]), float(minf[-1].min()), note, float(A))
