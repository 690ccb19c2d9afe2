"""Damped Newton with eps-continuation for the reduced eps-geodesic equation

    Phi_tt (w + Phi_xx) - Phi_tx^2 = eps w

on [0, 1] x fiber, with Phi(0, .) = phi0 and Phi(1, .) = phi1.  On the
sphere the lateral columns s = -L, L carry Dirichlet data too: the trace of
the eps = 0 geodesic between the endpoints, which the toric Legendre
transform gives in closed form.
"""
from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import expit

from .calculus import PathField, PathGrid, d_tt, d_tx, d_xx
from .geometry import metric_density, sphere_density
from .potentials import Endpoint, softplus

log = logging.getLogger(__name__)


def geometric_ladder(eps_max=1e-1, eps_min=1e-4, ratio=0.5):
    """eps_max * ratio**k for k = 0, 1, ... up to the first value <= eps_min."""
    if not (0 < ratio < 1) or eps_max <= 0 or eps_min <= 0:
        raise ValueError("ladder needs 0 < ratio < 1 and positive end points")
    out = [float(eps_max)]
    while out[-1] > eps_min * (1 + 1e-12):
        out.append(out[-1] * ratio)
    return tuple(out)


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_newton_iters: int = 50
    backtrack: float = 0.5
    min_step: float = 2.0 ** -20
    eps_ladder: tuple = field(default_factory=geometric_ladder)
    cone_margin: float = 1e-3
    guess_cap: float = 1e6
    min_substep: float = 1e-6

    def __post_init__(self):
        for name in ("newton_tol", "min_step", "cone_margin", "guess_cap", "min_substep"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError("backtrack must lie in (0, 1)")
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        lad = tuple(float(e) for e in self.eps_ladder)
        if not lad or any(e <= 0 for e in lad) or any(b >= a for a, b in zip(lad, lad[1:])):
            raise ValueError("eps_ladder must be positive and strictly decreasing")
        object.__setattr__(self, "eps_ladder", lad)

    def echo(self) -> dict:
        d = asdict(self)
        d["eps_ladder"] = list(self.eps_ladder)
        return d


class SolverError(RuntimeError):
    def __init__(self, msg, iterate=None, cone=None, rung=None):
        if rung is not None:
            msg = f"rung {rung}: {msg}"
        super().__init__(msg)
        self.iterate = iterate
        self.cone = cone
        self.rung = rung


class GuessError(SolverError):
    pass


@dataclass(eq=False)
class Dirichlet:
    """Boundary data of one solve: time rows and, on the sphere, side columns."""
    eps: float
    top: np.ndarray
    bottom: np.ndarray
    left: Optional[np.ndarray] = None
    right: Optional[np.ndarray] = None

    def apply(self, P):
        P[0] = self.top
        P[-1] = self.bottom
        if self.left is not None:
            P[:, 0] = self.left
            P[:, -1] = self.right
        return P

    def frame(self, shape):
        return self.apply(np.zeros(shape))


@dataclass(eq=False)
class SolveResult:
    field: PathField
    eps: float
    residual_history: list
    iterations: int
    cone_report: dict
    endpoints_hash: str
    rung: int = 0
    substeps: int = 0
    proxies: dict = field(default_factory=dict)

    @property
    def grid(self) -> PathGrid:
        return self.field.grid

    @property
    def model(self):
        return self.field.grid.model

    @property
    def values(self):
        return self.field.values

    def sidecar(self, config: Optional[SolverConfig] = None) -> dict:
        d = {
            "eps": self.eps,
            "rung": self.rung,
            "iterations": self.iterations,
            "substeps": self.substeps,
            "residual_history": [float(v) for v in self.residual_history],
            "recomputed_residual": float(np.abs(residual(self.grid, self.values, self.eps)).max()),
            "cone_report": self.cone_report,
            "proxies": self.proxies,
            "endpoints_hash": self.endpoints_hash,
            "model_hash": self.model.model_hash(),
            "grid": {"N_t": self.grid.N_t, "N_x": self.model.n},
        }
        if config is not None:
            d["config"] = config.echo()
        return d


# ---------------------------------------------------------------- discrete operator

def _parts(grid: PathGrid, P):
    a = d_tt(grid, P)
    c = d_xx(grid, P)
    b = d_tx(grid, P)
    m = grid.model.w[grid.cols] + c
    return a, b, m


def _operator(grid, P, eps):
    a, b, m = _parts(grid, P)
    q = a * m - b * b
    return q - eps * grid.model.w[grid.cols], m, q, a, b


def residual(grid: PathGrid, P, eps: float):
    """Phi_tt m - Phi_tx^2 - eps w on interior nodes, zero on boundary nodes."""
    P = np.asarray(P, dtype=float)
    out = np.zeros(grid.shape)
    out[1:-1, grid.cols] = _operator(grid, P, eps)[0]
    return out


def cone_report(grid: PathGrid, P) -> dict:
    a, b, m = _parts(grid, P)
    rho = a - b * b / m
    return {"min_m": float(m.min()), "min_rho": float(rho.min())}


def jacobian(grid: PathGrid, P):
    """Sparse interior-node linearization dF = m dPhi_tt + Phi_tt dPhi_xx - 2 Phi_tx dPhi_tx."""
    a, b, m = _parts(grid, P)
    ni, nj = a.shape
    idx = np.arange(ni * nj).reshape(ni, nj)
    ht2, hx2 = grid.ht ** 2, grid.hx ** 2
    k = -2.0 * b / (4.0 * grid.ht * grid.hx)
    periodic = grid.model.periodic
    rows, cols, vals = [], [], []

    def add(di, dj, coef):
        I = np.arange(ni)[:, None] + di + 0 * np.arange(nj)[None, :]
        J = np.arange(nj)[None, :] + dj + 0 * np.arange(ni)[:, None]
        if periodic:
            J = np.mod(J, nj)
            ok = (I >= 0) & (I < ni)
        else:
            ok = (I >= 0) & (I < ni) & (J >= 0) & (J < nj)
        coef = np.broadcast_to(coef, (ni, nj))
        rows.append(idx[ok])
        cols.append(I[ok] * nj + J[ok])
        vals.append(coef[ok])

    add(0, 0, -2.0 * m / ht2 - 2.0 * a / hx2)
    add(-1, 0, m / ht2)
    add(1, 0, m / ht2)
    add(0, -1, a / hx2)
    add(0, 1, a / hx2)
    add(1, 1, k)
    add(-1, -1, k)
    add(1, -1, -k)
    add(-1, 1, -k)
    n = ni * nj
    return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(n, n))


# ---------------------------------------------------------------- lateral data

def _invert_slope(dpsi, mu, lo=-80.0, hi=80.0, iters=64):
    """Solve dpsi(x) = mu by vectorized bisection (dpsi is increasing)."""
    a = np.full_like(mu, lo)
    b = np.full_like(mu, hi)
    for _ in range(iters):
        c = 0.5 * (a + b)
        below = dpsi(c) < mu
        a = np.where(below, c, a)
        b = np.where(below, b, c)
    return 0.5 * (a + b)


def legendre_trace(ep0: Endpoint, ep1: Endpoint, s_b: float, t):
    """Value at s = s_b of the eps = 0 sphere geodesic between two endpoints.

    With psi = h + phi convex in s, the symplectic potentials
    u_i(mu) = sup_s (s mu - psi_i(s)) interpolate linearly in t, and
    Psi_t(s_b) = s_b mu - u_t(mu) where u_t'(mu) = s_b.  Returns Psi_t(s_b) - h(s_b).
    """
    t = np.asarray(t, dtype=float)
    psi0 = lambda s: softplus(s) + ep0.f(s)
    psi1 = lambda s: softplus(s) + ep1.f(s)
    dpsi0 = lambda s: expit(s) + ep0.df(s)
    dpsi1 = lambda s: expit(s) + ep1.df(s)
    sb = np.float64(s_b)
    g0, g1 = float(dpsi0(sb)), float(dpsi1(sb))
    lo = np.full_like(t, min(g0, g1))
    hi = np.full_like(t, max(g0, g1))
    if g0 == g1:
        mu = lo
    else:
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            s0 = _invert_slope(dpsi0, mid)
            s1 = _invert_slope(dpsi1, mid)
            below = (1 - t) * s0 + t * s1 < sb
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        mu = 0.5 * (lo + hi)
    s0 = _invert_slope(dpsi0, mu)
    s1 = _invert_slope(dpsi1, mu)
    u = (1 - t) * (s0 * mu - psi0(s0)) + t * (s1 * mu - psi1(s1))
    out = sb * mu - u
    out = np.where(t == 0, psi0(sb), out)
    out = np.where(t == 1, psi1(sb), out)
    return out - softplus(sb)


def lateral_data(grid: PathGrid, ep0: Endpoint, ep1: Endpoint):
    if grid.model.periodic:
        return None, None
    s = grid.model.x
    return legendre_trace(ep0, ep1, s[0], grid.t), legendre_trace(ep0, ep1, s[-1], grid.t)


def make_dirichlet(grid: PathGrid, ep0: Endpoint, ep1: Endpoint, eps: float) -> Dirichlet:
    x = grid.model.x
    left, right = lateral_data(grid, ep0, ep1)
    return Dirichlet(float(eps), ep0(x), ep1(x), left, right)


# ---------------------------------------------------------------- initial guess

def _check_endpoints(model, phi0, phi1):
    for k, phi in enumerate((phi0, phi1)):
        m = metric_density(model, phi)
        if np.any(m <= 0):
            j = int(np.argmin(m))
            raise SolverError(f"endpoint {k} outside the cone at node {j} (w + phi'' = {m[j]:.6g})",
                              cone={"endpoint": k, "node": j, "min_m": float(m[j])})


def initial_guess(grid: PathGrid, phi0, phi1, eps: float, sides=None, cap: float = 1e6):
    """(1-t) phi0 + t phi1 + c t(1-t) with c < 0 from a doubling search.

    Admissible means Phi_tt m - Phi_tx^2 >= eps max w at every interior node
    (relative slack 1e-12 for roundoff).  Returns (field, c).
    """
    model = grid.model
    try:
        _check_endpoints(model, phi0, phi1)
    except SolverError as exc:
        raise GuessError(str(exc), cone=exc.cone) from None
    t = grid.t[:, None]
    lin = (1 - t) * np.asarray(phi0)[None, :] + t * np.asarray(phi1)[None, :]
    bump = (t * (1 - t)) * np.ones(model.n)[None, :]
    need = eps * float(model.w.max())
    c = -eps / 2.0
    while abs(c) <= cap:
        P = lin + c * bump
        if sides is not None and sides[0] is not None:
            P[:, 0], P[:, -1] = sides
        _, m, q, _, _ = _operator(grid, P, eps)
        if m.min() > 0 and q.min() >= need * (1 - 1e-12):
            return P, c
        c *= 2.0
    raise GuessError(f"no admissible c with |c| <= {cap:g}; refine the grid or change endpoints")


# ---------------------------------------------------------------- Newton

def _newton(grid: PathGrid, P, prob: Dirichlet, config: SolverConfig):
    P = prob.apply(np.array(P, dtype=float))
    eps = prob.eps
    sl = (slice(1, -1), grid.cols)
    F, m, q, _, _ = _operator(grid, P, eps)
    if m.min() <= 0 or q.min() <= 0:
        raise SolverError("initial iterate outside the discrete cone", P, cone_report(grid, P))
    m_floor = config.cone_margin * m.min()
    rho_floor = config.cone_margin * (q / m).min()
    hist = [float(np.abs(F).max())]
    its = 0
    while hist[-1] > config.newton_tol:
        if its >= config.max_newton_iters:
            raise SolverError(f"no convergence in {its} iterations (residual {hist[-1]:.3e})",
                              P, cone_report(grid, P))
        d = spla.spsolve(jacobian(grid, P), -F.ravel()).reshape(F.shape)
        lam = 1.0
        while True:
            Q = P.copy()
            Q[sl] += lam * d
            F2, m2, q2, _, _ = _operator(grid, Q, eps)
            if (np.abs(F2).max() < hist[-1] and m2.min() >= m_floor
                    and (q2 / m2).min() >= rho_floor):
                break
            lam *= config.backtrack
            if lam < config.min_step:
                raise SolverError(f"line search stalled at iteration {its} (residual {hist[-1]:.3e})",
                                  P, cone_report(grid, P))
        P, F = Q, F2
        its += 1
        hist.append(float(np.abs(F).max()))
    return P, hist


def newton_solve(grid: PathGrid, phi0, phi1, eps: float, config: SolverConfig, init,
                 sides=None, endpoints_hash: str = "") -> SolveResult:
    """Damped Newton from ``init``; side columns default to those of ``init``."""
    init = np.asarray(init, dtype=float)
    if sides is None and not grid.model.periodic:
        sides = (init[:, 0].copy(), init[:, -1].copy())
    left, right = sides if sides is not None else (None, None)
    prob = Dirichlet(float(eps), np.asarray(phi0, float), np.asarray(phi1, float), left, right)
    P, hist = _newton(grid, init, prob, config)
    return _result(grid, P, prob.eps, hist, len(hist) - 1, endpoints_hash)


def _proxies(grid, P):
    return {"max_Phi_tt": float(np.abs(d_tt(grid, P)).max()),
            "max_Phi_tx": float(np.abs(d_tx(grid, P)).max()),
            "max_Phi_xx": float(np.abs(d_xx(grid, P)).max())}


def _result(grid, P, eps, hist, its, ehash, rung=0, substeps=0):
    return SolveResult(PathField(P, grid), float(eps), hist, its, cone_report(grid, P), ehash,
                       rung, substeps, _proxies(grid, P))


# ---------------------------------------------------------------- path following

def _predict(grid, P, pa: Dirichlet, pb: Dirichlet):
    """Euler predictor: move the boundary data, then correct the interior to first order."""
    B = pb.frame(grid.shape) - pa.frame(grid.shape)
    B[1:-1, grid.cols] = 0.0
    F0 = _operator(grid, P, pa.eps)[0]
    DF = 0.5 * (_operator(grid, P + B, pb.eps)[0] - _operator(grid, P - B, pb.eps)[0])
    rhs = -(F0 + DF - (pb.eps - pa.eps) * grid.model.w[grid.cols])
    d = spla.spsolve(jacobian(grid, P), rhs.ravel()).reshape(rhs.shape)
    Q = P + B
    Q[1:-1, grid.cols] += d
    return pb.apply(Q)


def _follow(grid, P, problem: Callable[[float], Dirichlet], config: SolverConfig):
    """Track solutions of problem(s) from s = 0 (where P solves) to s = 1."""
    s0, ds = 0.0, 1.0
    pa = problem(0.0)
    total, steps, hist = 0, 0, [0.0]
    while s0 < 1.0:
        s1 = min(1.0, s0 + ds)
        pb = problem(s1)
        try:
            Q = _predict(grid, P, pa, pb)
            Q, hist = _newton(grid, Q, pb, config)
        except (SolverError, RuntimeError) as exc:
            ds *= 0.5
            if ds < config.min_substep:
                raise SolverError(f"continuation stalled at s={s0:.6g}: {exc}", P,
                                  cone_report(grid, P)) from exc
            continue
        P, pa, s0 = Q, pb, s1
        total += len(hist) - 1
        steps += 1
        if len(hist) - 1 <= 4:
            ds *= 2.0
    return P, hist, total, steps


def homotopy_solve(grid: PathGrid, ep0: Endpoint, ep1: Endpoint, eps: float, config: SolverConfig):
    """Solve at eps by moving the far endpoint from phi0 to phi1.

    At tau = 0 both endpoints equal phi0 and phi0 - (eps/2) t(1-t) w/m0 is
    nearly exact.  On the sphere the side columns carry the matching bump,
    scaled by (1 - tau), so every intermediate problem has consistent data.
    """
    model = grid.model
    x = model.x
    t = grid.t
    m0 = metric_density(model, ep0(x))
    if np.any(m0 <= 0):
        raise SolverError(f"endpoint phi0 outside the cone at node {int(np.argmin(m0))}")
    bump = -(eps / 2.0) * (t * (1 - t))[:, None] * (model.w / m0)[None, :]
    cache = {}

    def problem(tau):
        if tau not in cache:
            mid = ep0.mix(ep1, tau) if 0 < tau < 1 else (ep0 if tau == 0 else ep1)
            prob = make_dirichlet(grid, ep0, mid, eps)
            if prob.left is not None:
                prob.left = prob.left + (1 - tau) * bump[:, 0]
                prob.right = prob.right + (1 - tau) * bump[:, -1]
            cache[tau] = prob
        return cache[tau]

    P = problem(0.0).apply(ep0(x)[None, :] + bump)
    P, hist = _newton(grid, P, problem(0.0), config)
    total, steps = len(hist) - 1, 1
    P, hist, n, k = _follow(grid, P, problem, config)
    return P, hist, total + n, steps + k


def endpoints_digest(grid: PathGrid, ep0: Endpoint, ep1: Endpoint) -> str:
    blob = "|".join([grid.model.model_hash(), str(grid.N_t), ep0.digest(), ep1.digest()])
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def continuation(grid: PathGrid, ep0: Endpoint, ep1: Endpoint, config: SolverConfig,
                 on_rung=None) -> list:
    """Solve along config.eps_ladder with warm starts.

    Rung 0 starts from ``initial_guess``; if no admissible guess exists or
    Newton fails from it, the endpoint homotopy is used instead.  Later rungs
    use an Euler predictor and Newton corrector, halving the eps step
    internally when needed.
    """
    ehash = endpoints_digest(grid, ep0, ep1)
    ladder = config.eps_ladder
    base = make_dirichlet(grid, ep0, ep1, ladder[0])

    def at(eps):
        return Dirichlet(float(eps), base.top, base.bottom, base.left, base.right)

    try:
        _check_endpoints(grid.model, base.top, base.bottom)
    except SolverError as exc:
        raise SolverError(str(exc), cone=exc.cone, rung=0) from None
    out = []
    try:
        sides = (base.left, base.right) if base.left is not None else None
        P, _ = initial_guess(grid, base.top, base.bottom, ladder[0], sides, config.guess_cap)
        P, hist = _newton(grid, P, at(ladder[0]), config)
        its, steps = len(hist) - 1, 1
    except SolverError as exc:
        log.info("rung 0: direct start failed (%s); using endpoint homotopy", exc)
        try:
            P, hist, its, steps = homotopy_solve(grid, ep0, ep1, ladder[0], config)
        except SolverError as exc2:
            raise SolverError(str(exc2), exc2.iterate, exc2.cone, rung=0) from exc2
    res = _result(grid, P, ladder[0], hist, its, ehash, 0, steps)
    out.append(res)
    if on_rung:
        on_rung(res)
    for k in range(1, len(ladder)):
        ea, eb = ladder[k - 1], ladder[k]
        try:
            P, hist, its, steps = _follow(grid, P, lambda s: at(ea + s * (eb - ea)), config)
        except SolverError as exc:
            raise SolverError(str(exc), exc.iterate, exc.cone, rung=k) from exc
        res = _result(grid, P, eb, hist, its, ehash, k, steps)
        out.append(res)
        if on_rung:
            on_rung(res)
    return out
